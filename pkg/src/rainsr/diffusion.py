"""Latent diffusion over prior vectors.

The chain runs on 4C-length vectors, never on feature maps.  A linear beta
schedule is precomputed with its cumulative-product table; forward noising,
the posterior quantities, and conditional reverse steps are closed-form.
Reverse stepping is deterministic by default (zero injected noise) so
inference is reproducible; stochastic stepping supports both the per-step
noise scale sqrt(1 - alpha_t) and the posterior sigma_t.

The denoiser is a 3-layer fully connected network on
concat(p_t, condition, sinusoidal time embedding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, concat, matmul, reshape, silu

ALPHA_BAR_TERMINAL_MAX = 0.05


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed beta / alpha / cumulative alpha tables, 1-indexed by t."""

    t_max: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def abar(self, t):
        """Cumulative product at step t, with the t=0 convention of 1."""
        if not 0 <= t <= self.t_max:
            raise ValueError(f"t={t} outside [0, {self.t_max}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def at(self, t):
        self._check_t(t)
        return float(self.alpha[t - 1])

    def bt(self, t):
        self._check_t(t)
        return float(self.beta[t - 1])

    def _check_t(self, t):
        if not 1 <= t <= self.t_max:
            raise ValueError(f"t={t} outside [1, {self.t_max}]")


def make_schedule(t_max, beta_start=0.1, beta_end=0.99, require_terminal_noise=True):
    """Linear beta interpolation with validated cumulative-product table.

    ``require_terminal_noise`` enforces that the chain ends close enough to
    pure noise for inference-from-noise to be consistent; disable it only
    for schedule analysis.
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, t_max)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise ValueError(f"beta out of (0, 1): {beta}")
    if t_max > 1 and not np.all(np.diff(alpha_bar) < 0.0):
        raise ValueError(f"alpha_bar not strictly decreasing: {alpha_bar}")
    if require_terminal_noise and alpha_bar[-1] >= ALPHA_BAR_TERMINAL_MAX:
        raise ValueError(
            f"alpha_bar[T] = {alpha_bar[-1]:.6f} >= {ALPHA_BAR_TERMINAL_MAX}; "
            "chain does not end near pure noise"
        )
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return DiffusionSchedule(t_max=t_max, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


# -- forward / posterior ------------------------------------------------------


def q_sample(p, t, eps, sched):
    """Noised vector sqrt(abar_t) * p + sqrt(1 - abar_t) * eps.

    ``eps`` may carry leading batch axes; its last axis must match ``p``.
    """
    p, eps = as_tensor(p), as_tensor(eps)
    sched._check_t(t)
    if eps.shape[-1] != p.shape[-1]:
        raise ValueError(f"noise width {eps.shape[-1]} != prior width {p.shape[-1]}")
    ab = sched.abar(t)
    return float(np.sqrt(ab)) * p + float(np.sqrt(1.0 - ab)) * eps


def posterior_mean_var(p_t, noise_estimate, t, sched):
    """Reverse-step mean and posterior variance at step t.

    mu = (p_t - eps * (1 - alpha_t) / sqrt(1 - abar_t)) / sqrt(alpha_t);
    sigma^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t (zero at t = 1).
    """
    p_t, noise_estimate = as_tensor(p_t), as_tensor(noise_estimate)
    sched._check_t(t)
    a_t = sched.at(t)
    ab_t = sched.abar(t)
    mu = (p_t - noise_estimate * ((1.0 - a_t) / np.sqrt(1.0 - ab_t))) / np.sqrt(a_t)
    sigma2 = (1.0 - sched.abar(t - 1)) / (1.0 - ab_t) * sched.bt(t)
    return mu, sigma2


def reverse_step(p_t, cond, t, denoiser, sched, noise=None, noise_scale="simple"):
    """One reverse transition p_t -> p_{t-1}.

    ``denoiser`` is any callable (p_t, cond, t) -> noise estimate.  With
    ``noise=None`` the step is deterministic.  ``noise_scale`` picks the
    stochastic coefficient: "simple" uses sqrt(1 - alpha_t), "posterior"
    uses the posterior sigma_t.
    """
    p_t = as_tensor(p_t)
    sched._check_t(t)
    eps_hat = as_tensor(denoiser(p_t, cond, t))
    if eps_hat.shape != p_t.shape:
        raise ValueError(f"denoiser output {eps_hat.shape} != state {p_t.shape}")
    mu, sigma2 = posterior_mean_var(p_t, eps_hat, t, sched)
    if noise is None:
        return mu
    noise = as_tensor(noise)
    if noise_scale == "simple":
        coeff = np.sqrt(1.0 - sched.at(t))
    elif noise_scale == "posterior":
        coeff = np.sqrt(sigma2)
    else:
        raise ValueError(f"unknown noise_scale {noise_scale!r}")
    return mu + float(coeff) * noise


def sample_prior(cond, denoiser, sched, seed, dim=None):
    """Draw p_T ~ N(0, I) from the seeded generator and reverse to p_0.

    Deterministic given (cond, denoiser, sched, seed); uses zero injected
    noise in every step.
    """
    cond = as_tensor(cond)
    n = cond.shape[-1] if dim is None else dim
    rng = np.random.default_rng(seed)
    p = Tensor(rng.standard_normal(n))
    for t in range(sched.t_max, 0, -1):
        p = reverse_step(p, cond, t, denoiser, sched, noise=None)
    return p


# -- denoising network --------------------------------------------------------

TIME_EMB_DIM = 8


def time_embedding(t, dim=TIME_EMB_DIM):
    """Sinusoidal embedding of an integer step index."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


@dataclass
class DenoiserParams:
    """3-layer fully connected noise estimator on (p_t, cond, t_emb)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor
    emb_dim: int = TIME_EMB_DIM

    def validate(self):
        if self.w1.shape[1] != self.w2.shape[0] or self.w2.shape[1] != self.w3.shape[0]:
            raise ValueError("denoiser layer widths inconsistent")

    def tensors(self, prefix="denoiser"):
        return {
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
            f"{prefix}.w3": self.w3, f"{prefix}.b3": self.b3,
        }


def init_denoiser_params(width, rng, emb_dim=TIME_EMB_DIM):
    """Kaiming-style uniform fan-in init; hidden width matches the prior width."""
    d_in = 2 * width + emb_dim

    def lin(n_in, n_out):
        bound = np.sqrt(1.0 / n_in)
        return (
            Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True),
            Tensor(rng.uniform(-bound, bound, size=(n_out,)), requires_grad=True),
        )

    w1, b1 = lin(d_in, width)
    w2, b2 = lin(width, width)
    w3, b3 = lin(width, width)
    return DenoiserParams(w1, b1, w2, b2, w3, b3, emb_dim=emb_dim)


def denoise(p_t, cond, t, params):
    """Noise estimate epsilon_hat(p_t, cond, t)."""
    p_t, cond = as_tensor(p_t), as_tensor(cond)
    params.validate()
    emb = Tensor(time_embedding(t, params.emb_dim))
    x = concat([p_t, cond, emb], axis=0)
    x = reshape(x, (1, x.shape[0]))
    h = silu(matmul(x, params.w1) + params.b1)
    h = silu(matmul(h, params.w2) + params.b2)
    out = matmul(h, params.w3) + params.b3
    return reshape(out, (out.shape[1],))


def make_denoiser(params):
    """Bind DenoiserParams into the callable shape reverse_step expects."""
    return lambda p_t, cond, t: denoise(p_t, cond, t, params)
