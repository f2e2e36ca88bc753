"""The prior-guided deraining / super-resolution network.

A global prior vector of length 4C steers every stage.  Per block:

- derain stage: sub-prior scale/shift of the input features, guided fusion
  of the two feature maps under a spatially broadcast prior map, then
  prior-modulated cross-attention with a residual.
- texture stage: sub-prior modulation, channel high-pass of the prior to an
  edge vector, edge-modulated cross-attention with a residual.

A product-fusion refinement, a zero-initialized pre-shuffle projection,
pixel shuffle and a global bicubic residual close the pipeline.  Zero
init of the final projection means an untrained network reproduces the
bicubic upsample exactly.

Encoders: the prior encoder consumes concat(upsampled input, target) and
is only used during training; the condition encoder sees the degraded
input alone and feeds the diffusion denoiser.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, modulated_attention
from .filters import GfmConfig, HighPassConfig, gfm, high_pass_dct
from .kernels import bicubic_resize, conv2d, pixel_shuffle
from .tensor import Tensor, as_tensor, concat, matmul, reshape, silu, sqrt


@dataclass
class ModelConfig:
    """Width, sub-prior count, scale, depth, filter settings, ablations."""

    channels: int = 16
    n_subpriors: int = 12
    scale: int = 2
    blocks: int = 2
    gfm_r: int = 1
    gfm_eps: float = 1e-4
    k_cutoff: int | None = None  # None -> half the prior length
    use_prior: bool = True
    use_gfm: bool = True
    use_highpass: bool = True
    use_attention: bool = True

    @property
    def prior_dim(self):
        return 4 * self.channels

    @property
    def cutoff(self):
        return self.prior_dim // 2 if self.k_cutoff is None else self.k_cutoff

    def validate(self):
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be one of 2, 3, 4, got {self.scale}")
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if self.n_subpriors < 1:
            raise ValueError(f"n_subpriors must be >= 1, got {self.n_subpriors}")
        if not 0 <= self.cutoff <= self.prior_dim:
            raise ValueError(f"k_cutoff {self.cutoff} outside [0, {self.prior_dim}]")


def check_prior(p, cfg):
    """Prior vectors are flat tensors of length 4C, finite by construction."""
    p = as_tensor(p)
    if p.shape != (cfg.prior_dim,):
        raise ValueError(f"prior shape {p.shape} != ({cfg.prior_dim},)")
    return p


# -- parameter containers -----------------------------------------------------


@dataclass
class EmbedParams:
    """Affine 4C -> (n+1)*C map producing the sub-prior set."""

    w: Tensor
    b: Tensor
    n: int
    c: int


@dataclass
class DerainParams:
    embed: EmbedParams  # multiplicative + additive sub-priors
    guide_w: Tensor  # 4C -> C guide projection
    guide_b: Tensor
    attn: AttentionParams


@dataclass
class TextureParams:
    embed: EmbedParams
    edge_w: Tensor  # 4C -> C, bias-free so a flat prior gives a zero edge vector
    attn: AttentionParams


@dataclass
class RefineParams:
    proj_w: Tensor  # 4C -> C for the product fusion
    proj_b: Tensor
    attn: AttentionParams


@dataclass
class ModelParams:
    e1: dict = field(default_factory=dict)  # prior encoder (training only)
    e2: dict = field(default_factory=dict)  # condition encoder
    head_w: Tensor = None
    head_b: Tensor = None
    derain: list = field(default_factory=list)
    texture: list = field(default_factory=list)
    refine: RefineParams = None
    up_w: Tensor = None
    up_b: Tensor = None

    def tensors(self):
        """Flat name -> Tensor view over every learnable array."""
        out = {}
        for enc_name, enc in (("e1", self.e1), ("e2", self.e2)):
            for k, v in enc.items():
                out[f"{enc_name}.{k}"] = v
        out["head.w"], out["head.b"] = self.head_w, self.head_b
        for i, blk in enumerate(self.derain):
            out[f"block{i}.derain.embed.w"] = blk.embed.w
            out[f"block{i}.derain.embed.b"] = blk.embed.b
            out[f"block{i}.derain.guide.w"] = blk.guide_w
            out[f"block{i}.derain.guide.b"] = blk.guide_b
            out.update(blk.attn.tensors(f"block{i}.derain.attn"))
        for i, blk in enumerate(self.texture):
            out[f"block{i}.texture.embed.w"] = blk.embed.w
            out[f"block{i}.texture.embed.b"] = blk.embed.b
            out[f"block{i}.texture.edge.w"] = blk.edge_w
            out.update(blk.attn.tensors(f"block{i}.texture.attn"))
        out["refine.proj.w"], out["refine.proj.b"] = self.refine.proj_w, self.refine.proj_b
        out.update(self.refine.attn.tensors("refine.attn"))
        out["up.w"], out["up.b"] = self.up_w, self.up_b
        return out

    def validate(self):
        for name, t in self.tensors().items():
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"non-finite parameter {name}")


def _uniform(rng, shape, fan_in):
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _conv_init(rng, kh, kw, cin, cout):
    fan = kh * kw * cin
    return _uniform(rng, (kh, kw, cin, cout), fan), _uniform(rng, (cout,), fan)


def _attn_init(rng, c):
    return AttentionParams(
        w_q=_uniform(rng, (c, c), c),
        w_k=_uniform(rng, (c, c), c),
        w_v=_uniform(rng, (c, c), c),
        gamma=Tensor(float(np.sqrt(c)), requires_grad=True),
    )


def _embed_init(cfg, mult_bias):
    # zero weight + structured bias: the multiplicative sub-prior starts at
    # mult_bias (1 where the block consumes it as a plain scale, 0 where the
    # block already carries its own residual), the additive ones at 0, so a
    # fresh network ignores the (unit-scale) prior entirely and its influence
    # grows by gradient
    d, c, n = cfg.prior_dim, cfg.channels, cfg.n_subpriors
    w = Tensor(np.zeros((d, (n + 1) * c)), requires_grad=True)
    b = np.zeros((n + 1) * c)
    b[:c] = mult_bias
    return EmbedParams(w=w, b=Tensor(b, requires_grad=True), n=n, c=c)


def _encoder_init(rng, cfg, in_ch):
    c = cfg.channels
    w1, b1 = _conv_init(rng, 3, 3, in_ch, c)
    w2, b2 = _conv_init(rng, 3, 3, c, 2 * c)
    w3, b3 = _conv_init(rng, 3, 3, 2 * c, 4 * c)
    return {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "w3": w3, "b3": b3}


def init_model_params(cfg, seed=0):
    """Kaiming-style uniform init for the spatial path.

    Every projection that consumes the prior starts at zero weight (with the
    multiplicative biases at one), and the pre-shuffle projection starts at
    zero, so a fresh network is exactly the prior-free bicubic identity.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    c, d, s = cfg.channels, cfg.prior_dim, cfg.scale
    head_w, head_b = _conv_init(rng, 3, 3, 3, c)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    derain, texture = [], []
    for _ in range(cfg.blocks):
        derain.append(
            DerainParams(
                embed=_embed_init(cfg, mult_bias=1.0),
                guide_w=zeros(d, c),
                guide_b=_uniform(rng, (c,), d),
                attn=_attn_init(rng, c),
            )
        )
        texture.append(
            TextureParams(
                embed=_embed_init(cfg, mult_bias=0.0), edge_w=zeros(d, c), attn=_attn_init(rng, c)
            )
        )
    refine = RefineParams(
        proj_w=zeros(d, c), proj_b=Tensor(np.ones(c), requires_grad=True), attn=_attn_init(rng, c)
    )
    up_w = Tensor(np.zeros((3, 3, c, 3 * s * s)), requires_grad=True)
    up_b = Tensor(np.zeros(3 * s * s), requires_grad=True)
    return ModelParams(
        e1=_encoder_init(rng, cfg, 6),
        e2=_encoder_init(rng, cfg, 3),
        head_w=head_w,
        head_b=head_b,
        derain=derain,
        texture=texture,
        refine=refine,
        up_w=up_w,
        up_b=up_b,
    )


# -- encoders -----------------------------------------------------------------


def _clamp_unit(img, what):
    arr = as_tensor(img).data
    if arr.min() < 0.0 or arr.max() > 1.0:
        warnings.warn(f"{what} pixels outside [0, 1]; clamping", stacklevel=3)
        return Tensor(np.clip(arr, 0.0, 1.0))
    return as_tensor(img)


def _encode(img, params):
    f = silu(conv2d(img, params["w1"], params["b1"], stride=2, pad=1))
    f = silu(conv2d(f, params["w2"], params["b2"], stride=2, pad=1))
    f = silu(conv2d(f, params["w3"], params["b3"], stride=2, pad=1))
    v = f.mean(axis=(0, 1))
    # standardized so downstream consumers see a unit-scale vector regardless
    # of encoder weight magnitudes (the diffusion noise is unit-scale)
    v = v - v.mean()
    return v / sqrt((v * v).mean() + 1e-6)


def encode_prior(i_up, i_gt, params):
    """Prior from the hybrid of upsampled input and target; length 4C."""
    i_up, i_gt = _clamp_unit(i_up, "input"), _clamp_unit(i_gt, "target")
    if i_up.shape != i_gt.shape:
        raise ValueError(f"shape mismatch: input {i_up.shape}, target {i_gt.shape}")
    return _encode(concat([i_up, i_gt], axis=2), params)


def encode_condition(i_in, params):
    """Condition vector from the degraded input alone; length 4C."""
    if as_tensor(i_in).ndim != 3:
        raise ValueError(f"expected H x W x 3 image, got {as_tensor(i_in).shape}")
    return _encode(as_tensor(i_in), params)


# -- sub-priors and blocks ----------------------------------------------------


def embed_subpriors(p, embed):
    """Affine 4C -> (n+1)*C, split into n+1 vectors of length C."""
    p = as_tensor(p)
    if p.shape != (embed.w.shape[0],):
        raise ValueError(f"prior length {p.shape} != {embed.w.shape[0]}")
    flat = matmul(reshape(p, (1, p.shape[0])), embed.w) + embed.b
    grid = reshape(flat, (embed.n + 1, embed.c))
    return [grid[i] for i in range(embed.n + 1)]


def _row(vec):
    """(C,) -> 1 x 1 x C for broadcasting against feature maps."""
    return reshape(vec, (1, 1, vec.shape[0]))


def _project_prior(p, w, b=None):
    out = matmul(reshape(p, (1, p.shape[0])), w)
    if b is not None:
        out = out + b
    return _row(reshape(out, (out.shape[1],)))


def derain_block(f_in, p, params, cfg):
    """Prior-scaled features, guided fusion, prior-modulated attention.

    f' scales channels multiplicatively, f'' shifts them additively; the
    guided filter fuses the two under the broadcast guide map; attention
    mixes tokens with Q modulated by the same prior map.
    """
    subs = embed_subpriors(p, params.embed)
    f_prime = f_in * _row(subs[0])
    shift = subs[1]
    for s in subs[2:]:
        shift = shift + s
    f_dprime = f_in + _row(shift)
    guide_row = _project_prior(p, params.guide_w, params.guide_b)
    if cfg.use_gfm:
        h, w, c = f_in.shape
        p_map = guide_row * Tensor(np.ones((h, w, c)))
        f_g = gfm(f_prime, f_dprime, p_map, GfmConfig(r=cfg.gfm_r, eps=cfg.gfm_eps))
    else:
        f_g = f_dprime
    if not cfg.use_attention:
        return f_g
    return modulated_attention(f_g, guide_row, params.attn) + f_g


def texture_block(f_mr, p, params, cfg):
    """High-frequency compensation: edge vector from the channel high-pass
    of the prior modulates attention over the re-shifted features."""
    subs = embed_subpriors(p, params.embed)
    shift = subs[1]
    for s in subs[2:]:
        shift = shift + s
    f_hat = f_mr * _row(subs[0]) + _row(shift) + f_mr
    if cfg.use_highpass:
        p_high = high_pass_dct(p, HighPassConfig(n=cfg.prior_dim, k_cutoff=cfg.cutoff))
    else:
        p_high = p
    edge_row = _project_prior(p_high, params.edge_w)
    if not cfg.use_attention:
        return f_hat
    return modulated_attention(f_hat, edge_row, params.attn) + f_hat


# -- full network -------------------------------------------------------------


def _staged(stage, thunk):
    try:
        return thunk()
    except (ValueError, ArithmeticError) as e:
        raise type(e)(f"[{stage}] {e}") from e


def forward(img, p, params, cfg):
    """Degraded H x W x 3 image + prior -> restored sH x sW x 3 image."""
    cfg.validate()
    img = as_tensor(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    p = check_prior(p, cfg)
    if not cfg.use_prior:
        p = Tensor(np.zeros(cfg.prior_dim))
    f = _staged("head", lambda: conv2d(img, params.head_w, params.head_b, pad=1))
    for i, (dr, tx) in enumerate(zip(params.derain, params.texture)):
        f = _staged(f"block{i}.derain", lambda f=f, dr=dr: derain_block(f, p, dr, cfg))
        f = _staged(f"block{i}.texture", lambda f=f, tx=tx: texture_block(f, p, tx, cfg))
    fused = f * _project_prior(p, params.refine.proj_w, params.refine.proj_b)
    if cfg.use_attention:
        ones = Tensor(np.ones((1, 1, cfg.channels)))
        fused = modulated_attention(fused, ones, params.refine.attn) + fused
    pre = _staged("upsample", lambda: conv2d(fused, params.up_w, params.up_b, pad=1))
    residual = pixel_shuffle(pre, cfg.scale)
    return residual + bicubic_resize(img, float(cfg.scale))
