"""Two-stage training on (rainy LR, clean HR) pairs.

Stage 1 fits the restoration net jointly with the hybrid prior encoder:
the prior fed to the net is E1(upsampled input, ground truth) and the
loss is mean L1 to the clean target.

Stage 2 freezes E1 (its tensors never enter the tape, so they stay
bit-identical) and fits the conditional denoiser plus the rest: each step
noises the frozen prior to p_T, runs the full reverse chain back to a
prior estimate, reconstructs with it, and minimizes image L1 plus prior
L1.

Every step draws its randomness from a generator seeded by (seed, stage,
step), so an interrupted run resumed from a checkpoint replays the exact
step sequence of an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    init_denoiser_params,
    make_denoiser,
    q_sample,
    reverse_step,
    sample_prior,
)
from .kernels import bicubic_resize_np
from .model import encode_condition, encode_prior, forward
from .optim import Adam
from .tensor import NonFiniteError, Tensor, absolute, gradients, no_grad, zero_grads


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; training stops immediately."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    lr: float = 2e-4
    batch: int = 8
    patch: int = 32  # LR crop side; 0 trains on full images
    lr_warmup: int = 100  # linear ramp steps; 0 disables
    lr_tau: int = 250  # inverse-time decay constant; 0 disables
    log_every: int = 25
    seed: int = 0

    def validate(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.lr_warmup < 0:
            raise ValueError(f"lr_warmup must be >= 0, got {self.lr_warmup}")
        if self.lr_tau < 0:
            raise ValueError(f"lr_tau must be >= 0, got {self.lr_tau}")


def lr_at(tc, step):
    """Scheduled learning rate: linear warmup, then inverse-time decay.

    Adam's sign-normalized updates on an L1 objective keep perturbing every
    parameter by about lr per step no matter how close the fit is, so a
    constant lr stalls at a dither floor proportional to lr.  Both schedule
    terms depend only on the global step index, never on the step budget, so
    any segmentation of a run into resumed pieces replays the identical lr
    sequence.
    """
    out = tc.lr
    if tc.lr_warmup:
        out *= min(1.0, (step + 1) / tc.lr_warmup)
    if tc.lr_tau:
        out /= 1.0 + step / tc.lr_tau
    return out


def _l1(a, b):
    return absolute(a - b).mean()


def _upsample_clipped(lr, scale):
    return np.clip(bicubic_resize_np(lr, float(scale)), 0.0, 1.0)


def _sample_crops(pairs, rng, batch, patch):
    """Random (lr crop, hr crop, scale) triples; crops stay aligned."""
    out = []
    for idx in rng.integers(0, len(pairs), size=batch):
        pair = pairs[idx]
        lr, hr, s = pair.lr_rainy, pair.hr_clean, pair.scale
        h, w = lr.shape[:2]
        if patch and patch < min(h, w):
            y0 = int(rng.integers(0, h - patch + 1))
            x0 = int(rng.integers(0, w - patch + 1))
            lr = lr[y0 : y0 + patch, x0 : x0 + patch]
            hr = hr[s * y0 : s * (y0 + patch), s * x0 : s * (x0 + patch)]
        out.append((lr, hr, s))
    return out


def stage1_trainables(params):
    # E2 and the denoiser are stage-2 concerns; excluding E2 here keeps
    # its init untouched for the later stage.
    return {k: v for k, v in params.tensors().items() if not k.startswith("e2.")}


def stage2_trainables(params, den_params):
    out = {k: v for k, v in params.tensors().items() if not k.startswith("e1.")}
    out.update(den_params.tensors(prefix="den"))
    return out


def train_stage1(pairs, params, cfg, tc, opt=None, start_step=0):
    """Run stage-1 steps [start_step, tc.steps); returns (history, opt).

    history is one dict per executed step: step index and scalar loss.
    """
    tc.validate()
    trainable = stage1_trainables(params)
    if opt is None:
        opt = Adam(trainable, lr=tc.lr)
    history = []
    for step in range(start_step, tc.steps):
        rng = np.random.default_rng((tc.seed, 1, step))
        try:
            total = None
            for lr_img, hr_img, s in _sample_crops(pairs, rng, tc.batch, tc.patch):
                hr_t = Tensor(hr_img)
                p = encode_prior(_upsample_clipped(lr_img, s), hr_t, params.e1)
                rec = forward(lr_img, p, params, cfg)
                term = _l1(rec, hr_t)
                total = term if total is None else total + term
            total = total * (1.0 / tc.batch)
            zero_grads(trainable)
            grads = gradients(total, trainable)
        except NonFiniteError as e:
            raise TrainingDiverged(f"stage 1 diverged at step {step}: {e}") from e
        opt.lr = lr_at(tc, step)
        opt.step(grads)
        history.append({"step": step, "loss": float(total.data)})
    return history, opt


def train_stage2(
    pairs, params, den_params, cfg, sched, tc, opt=None, start_step=0, chain=True
):
    """Stage-2 steps; E1 is frozen and never recorded on the tape.

    ``chain=False`` drops the diffusion chain and regresses the prior
    directly from the condition vector (the no-diffusion ablation).
    """
    tc.validate()
    trainable = stage2_trainables(params, den_params)
    if opt is None:
        opt = Adam(trainable, lr=tc.lr)
    denoiser = make_denoiser(den_params)
    history = []
    for step in range(start_step, tc.steps):
        rng = np.random.default_rng((tc.seed, 2, step))
        try:
            loss_img = None
            loss_prior = None
            for lr_img, hr_img, s in _sample_crops(pairs, rng, tc.batch, tc.patch):
                with no_grad():
                    p_true = encode_prior(
                        _upsample_clipped(lr_img, s), hr_img, params.e1
                    )
                p_true = Tensor(p_true.data.copy())
                cond = encode_condition(lr_img, params.e2)
                if chain:
                    eps = Tensor(rng.standard_normal(p_true.shape))
                    p_t = q_sample(p_true, sched.t_max, eps, sched)
                    for t in range(sched.t_max, 0, -1):
                        p_t = reverse_step(p_t, cond, t, denoiser, sched)
                else:
                    p_t = cond
                rec = forward(lr_img, p_t, params, cfg)
                term_img = _l1(rec, Tensor(hr_img))
                term_prior = _l1(p_t, p_true)
                loss_img = term_img if loss_img is None else loss_img + term_img
                loss_prior = (
                    term_prior if loss_prior is None else loss_prior + term_prior
                )
            total = (loss_img + loss_prior) * (1.0 / tc.batch)
            zero_grads(trainable)
            grads = gradients(total, trainable)
        except NonFiniteError as e:
            raise TrainingDiverged(f"stage 2 diverged at step {step}: {e}") from e
        opt.lr = lr_at(tc, step)
        opt.step(grads)
        history.append(
            {
                "step": step,
                "loss": float(total.data),
                "loss_img": float(loss_img.data) / tc.batch,
                "loss_prior": float(loss_prior.data) / tc.batch,
            }
        )
    return history, opt


def fresh_denoiser(cfg, seed=0):
    return init_denoiser_params(cfg.prior_dim, np.random.default_rng((seed, 3)))


def pretrain_denoiser(pairs, params, den_params, cfg, sched, tc, opt=None, start_step=0):
    """Regression warm-start for the denoiser and E2 before joint stage 2.

    Each reverse step divides by sqrt(alpha_t), so over a full chain any
    systematic denoiser error is amplified by 1/sqrt(alpha_bar_T); a randomly
    initialized denoiser therefore hands the joint loss a uselessly scrambled
    prior.  This loop noises the frozen E1 prior to a random timestep and
    fits the denoiser's implied clean-prior estimate

        x0_hat = (P_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)

    to the true prior in L1, which is exactly the quantity the chain
    propagates.  Only the denoiser and E2 receive gradients.
    """
    tc.validate()
    trainable = dict(den_params.tensors(prefix="den"))
    trainable.update({f"e2.{k}": v for k, v in params.e2.items()})
    if opt is None:
        opt = Adam(trainable, lr=tc.lr)
    denoiser = make_denoiser(den_params)
    history = []
    for step in range(start_step, tc.steps):
        rng = np.random.default_rng((tc.seed, 5, step))
        try:
            total = None
            for lr_img, hr_img, s in _sample_crops(pairs, rng, tc.batch, tc.patch):
                with no_grad():
                    p_true = encode_prior(
                        _upsample_clipped(lr_img, s), hr_img, params.e1
                    )
                p_true = Tensor(p_true.data.copy())
                cond = encode_condition(lr_img, params.e2)
                t = int(rng.integers(1, sched.t_max + 1))
                eps = Tensor(rng.standard_normal(p_true.shape))
                p_t = q_sample(p_true, t, eps, sched)
                eps_hat = denoiser(p_t, cond, t)
                ab = float(sched.alpha_bar[t - 1])
                x0_hat = (p_t - eps_hat * float(np.sqrt(1.0 - ab))) * float(
                    1.0 / np.sqrt(ab)
                )
                term = _l1(x0_hat, p_true)
                total = term if total is None else total + term
            total = total * (1.0 / tc.batch)
            zero_grads(trainable)
            grads = gradients(total, trainable)
        except NonFiniteError as e:
            raise TrainingDiverged(f"pretrain diverged at step {step}: {e}") from e
        opt.lr = lr_at(tc, step)
        opt.step(grads)
        history.append({"step": step, "loss": float(total.data)})
    return history, opt


def infer_one(lr_img, params, den_params, cfg, sched, seed=0, chain=True):
    """Restore one rainy LR image without ground truth.

    Condition comes from E2 on the input alone; the prior is sampled by
    the deterministic reverse chain (or taken as the condition itself when
    ``chain=False``).  Output is clipped to [0, 1].
    """
    with no_grad():
        cond = encode_condition(np.asarray(lr_img, dtype=np.float64), params.e2)
        if chain:
            p_hat = sample_prior(cond, make_denoiser(den_params), sched, seed)
        else:
            p_hat = cond
        out = forward(lr_img, p_hat, params, cfg)
    return np.clip(out.data, 0.0, 1.0)


def halved(history, tail=25):
    """True when the trailing mean loss is at most half the leading mean."""
    losses = [row["loss"] for row in history]
    if len(losses) < 2 * tail:
        raise ValueError(f"history too short ({len(losses)}) for tail {tail}")
    return float(np.mean(losses[-tail:])) <= 0.5 * float(np.mean(losses[:tail]))
