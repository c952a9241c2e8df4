"""A toy video transformer encoder that exposes its attention maps.

Videos of shape (T, H, W, 3) are cut into non-overlapping spatio-temporal
patches, linearly embedded with a learned positional table, and passed
through pre-norm encoder blocks:

    z' = MSA(LN(z)) + z
    z_out = MLP(LN(z')) + z'

Attention weights of the final block, averaged over queries, become per-head
mass volumes on the (t, h, w) patch grid. Weights are seeded uniform draws in
[-1/sqrt(d), 1/sqrt(d)]; biases start at zero and layer norms at identity, so
a given (config, seed) pair pins every number downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, ValidationError
from .tensors import AttentionVolume, as_float_array

LN_EPS = 1e-5


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stable softmax: the running maximum is subtracted before exp."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian error linear unit."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def layer_norm(v: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Normalize the last axis to zero mean, unit (population) variance."""
    v = np.asarray(v, dtype=np.float64)
    mean = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    return (v - mean) / np.sqrt(var + LN_EPS) * gain + bias


@dataclass(frozen=True)
class TransformerConfig:
    """Architecture of the toy encoder."""

    video_extents: tuple[int, int, int] = (4, 8, 8)
    patch_extents: tuple[int, int, int] = (1, 2, 2)
    blocks: int = 2
    heads: int = 4
    width: int = 32
    class_count: int = 10
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1 or self.width < 1 or self.class_count < 1:
            raise ConfigurationError("blocks, heads, width, class_count must be >= 1")
        if self.width % self.heads != 0:
            raise ConfigurationError(
                f"width {self.width} not divisible by heads {self.heads}"
            )
        for name, v, pv in zip("thw", self.video_extents, self.patch_extents):
            if pv < 1 or v < 1 or v % pv != 0:
                raise ConfigurationError(
                    f"axis {name}: video extent {v} not divisible by patch extent {pv}"
                )

    @property
    def patch_grid(self) -> tuple[int, int, int]:
        return tuple(v // p for v, p in zip(self.video_extents, self.patch_extents))

    @property
    def patch_count(self) -> int:
        t, h, w = self.patch_grid
        return t * h * w

    @property
    def patch_dim(self) -> int:
        pt, ph, pw = self.patch_extents
        return pt * ph * pw * 3

    @property
    def head_width(self) -> int:
        return self.width // self.heads

    @property
    def mlp_width(self) -> int:
        return self.mlp_ratio * self.width


@dataclass(frozen=True)
class BlockWeights:
    w_q: np.ndarray  # (heads, head_width, width)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (width, width)
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    mlp_w1: np.ndarray  # (mlp_width, width)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray  # (width, mlp_width)
    mlp_b2: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    """All parameters of the encoder plus the linear classifier head."""

    patch_proj: np.ndarray  # (width, patch_dim)
    patch_bias: np.ndarray
    positions: np.ndarray  # (patch_count, width)
    blocks: tuple[BlockWeights, ...]
    classifier: np.ndarray  # (class_count, width)
    classifier_bias: np.ndarray

    @classmethod
    def seeded(cls, cfg: TransformerConfig, seed: int) -> "ModelWeights":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(cfg.width)

        def draw(*shape):
            return rng.uniform(-bound, bound, shape)

        d, dh, a = cfg.width, cfg.head_width, cfg.heads
        patch_proj = draw(d, cfg.patch_dim)
        positions = draw(cfg.patch_count, d)
        blocks = []
        for _ in range(cfg.blocks):
            blocks.append(BlockWeights(
                w_q=draw(a, dh, d), w_k=draw(a, dh, d), w_v=draw(a, dh, d),
                w_o=draw(d, d),
                ln1_gain=np.ones(d), ln1_bias=np.zeros(d),
                mlp_w1=draw(cfg.mlp_width, d), mlp_b1=np.zeros(cfg.mlp_width),
                mlp_w2=draw(d, cfg.mlp_width), mlp_b2=np.zeros(d),
                ln2_gain=np.ones(d), ln2_bias=np.zeros(d),
            ))
        classifier = draw(cfg.class_count, d)
        return cls(
            patch_proj=patch_proj,
            patch_bias=np.zeros(d),
            positions=positions,
            blocks=tuple(blocks),
            classifier=classifier,
            classifier_bias=np.zeros(cfg.class_count),
        )


@dataclass(frozen=True)
class AttentionWeights:
    """Per-head attention of one block: (heads, P, P), rows sum to one."""

    matrices: np.ndarray

    def __post_init__(self):
        m = as_float_array(self.matrices, "attention weights")
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ValidationError(
                f"attention weights must have shape (heads, P, P), got {m.shape}"
            )
        if m.min() < 0.0:
            raise ValidationError("attention weights must be non-negative")
        if np.abs(m.sum(axis=-1) - 1.0).max() > 1e-9:
            raise ValidationError("attention rows must sum to one")
        out = m.copy()
        out.flags.writeable = False
        object.__setattr__(self, "matrices", out)

    @property
    def heads(self) -> int:
        return self.matrices.shape[0]


def patch_embed(video, cfg: TransformerConfig, weights: ModelWeights) -> np.ndarray:
    """Cut a video into patches, project to width d, add positions."""
    x = as_float_array(video, "video")
    expected = cfg.video_extents + (3,)
    if x.shape != expected:
        raise ValidationError(f"video shape {x.shape} does not match {expected}")
    gt, gh, gw = cfg.patch_grid
    pt, ph, pw = cfg.patch_extents
    patches = (x.reshape(gt, pt, gh, ph, gw, pw, 3)
                .transpose(0, 2, 4, 1, 3, 5, 6)
                .reshape(cfg.patch_count, cfg.patch_dim))
    return patches @ weights.patch_proj.T + weights.patch_bias + weights.positions


def encoder_block(z: np.ndarray, block: BlockWeights, cfg: TransformerConfig
                  ) -> tuple[np.ndarray, AttentionWeights]:
    """One pre-norm block; returns the output tokens and the attention maps."""
    z = as_float_array(z, "tokens")
    if z.shape != (cfg.patch_count, cfg.width):
        raise ValidationError(
            f"token shape {z.shape} does not match ({cfg.patch_count}, {cfg.width})"
        )
    ln1 = layer_norm(z, block.ln1_gain, block.ln1_bias)
    q = np.einsum("pd,ahd->aph", ln1, block.w_q)
    k = np.einsum("pd,ahd->aph", ln1, block.w_k)
    v = np.einsum("pd,ahd->aph", ln1, block.w_v)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(cfg.head_width)
    alphas = softmax(logits, axis=-1)
    mixed = alphas @ v  # (heads, P, head_width)
    concat = mixed.transpose(1, 0, 2).reshape(cfg.patch_count, cfg.width)
    z_attn = concat @ block.w_o.T + z
    ln2 = layer_norm(z_attn, block.ln2_gain, block.ln2_bias)
    hidden = gelu(ln2 @ block.mlp_w1.T + block.mlp_b1)
    z_out = hidden @ block.mlp_w2.T + block.mlp_b2 + z_attn
    return z_out, AttentionWeights(alphas)


def extract_attention_volumes(attn: AttentionWeights,
                              grid: tuple[int, int, int]) -> list[AttentionVolume]:
    """Average each head's map over queries and fold it onto the patch grid.

    Since every attention row sums to one, each volume carries unit mass.
    """
    t, h, w = (int(e) for e in grid)
    P = attn.matrices.shape[1]
    if t * h * w != P:
        raise ConfigurationError(f"grid {grid} does not flatten to {P} patches")
    means = attn.matrices.mean(axis=1)  # (heads, P)
    return [AttentionVolume.from_array(m.reshape(t, h, w)) for m in means]


def classify(z: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Mean-pool the tokens and apply the linear classifier head."""
    z = as_float_array(z, "tokens")
    pooled = z.mean(axis=0)
    return pooled @ weights.classifier.T + weights.classifier_bias


def views_ensemble(scores) -> np.ndarray:
    """Average 12 per-view score vectors (a 4 x 3 view grid) into one."""
    if len(scores) != 12:
        raise ValidationError(f"expected 12 score vectors, got {len(scores)}")
    arrs = [as_float_array(s, "scores") for s in scores]
    length = arrs[0].size
    if any(a.ndim != 1 or a.size != length for a in arrs):
        raise ValidationError("score vectors must be 1-D and equally sized")
    return np.mean(np.stack(arrs), axis=0)
