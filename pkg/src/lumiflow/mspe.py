"""Multi-signal positional encoding for token sequences.

Four position signals modulate attention: grid column (w), grid row (h), and
frame index (t) get rotary phase modulation in disjoint slices of the head
dimension, while condition type (c) and frame role (r) enter as learned
additive embeddings on queries and keys before rotation.  Joint translation
of query and key positions along any rotary axis leaves attention logits
unchanged (relative phase), while the additive terms let the model tell
condition modalities apart.

When a sequence uses positions beyond the training range on some axis, the
rotary base for that axis is enlarged NTK-style: base' = base * s**(d/(d-2))
with s the length ratio and d the axis' rotary dimension.  Frequencies are
untouched when the evaluation length does not exceed the training length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

ROTARY_AXES = ("w", "h", "t")


@dataclass(frozen=True)
class MspeConfig:
    head_dim: int = 32
    base: float = 10000.0
    dims: dict = field(default_factory=lambda: {"w": 12, "h": 12, "t": 8})
    train_lens: dict = field(default_factory=lambda: {"w": 16, "h": 16, "t": 6})

    def __post_init__(self):
        if set(self.dims) != set(ROTARY_AXES):
            raise ValueError(f"dims must cover axes {ROTARY_AXES}, got {sorted(self.dims)}")
        if any(d <= 0 or d % 2 for d in self.dims.values()):
            raise ValueError(f"rotary subspace dims must be positive and even, got {self.dims}")
        if sum(self.dims.values()) != self.head_dim:
            raise ValueError(
                f"subspace dims {self.dims} must sum to head_dim {self.head_dim}"
            )
        if any(self.train_lens.get(a, 0) < 1 for a in ROTARY_AXES):
            raise ValueError(f"train_lens must be >= 1 per axis, got {self.train_lens}")

    @staticmethod
    def default_for(head_dim: int, train_lens: dict | None = None) -> "MspeConfig":
        """Split a head dimension roughly 3:3:2 over (w, h, t), all even."""
        w = max(2, int(head_dim * 3 / 16) * 2)
        t = head_dim - 2 * w
        if t < 2:
            raise ValueError(f"head_dim {head_dim} too small for three rotary axes")
        return MspeConfig(
            head_dim=head_dim,
            dims={"w": w, "h": w, "t": t},
            train_lens=dict(train_lens) if train_lens else {"w": 16, "h": 16, "t": 6},
        )

    def to_dict(self) -> dict:
        return {
            "head_dim": self.head_dim,
            "base": self.base,
            "dims": dict(self.dims),
            "train_lens": dict(self.train_lens),
        }

    @staticmethod
    def from_dict(d: dict) -> "MspeConfig":
        return MspeConfig(
            head_dim=d["head_dim"],
            base=d["base"],
            dims=dict(d["dims"]),
            train_lens=dict(d["train_lens"]),
        )


def rotary_inv_freq(dim: int, base: float) -> np.ndarray:
    """Standard rotary inverse frequencies base**(-2k/d), k = 0..d/2-1."""
    return base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)


def ntk_scale_base(base: float, eval_len: int, train_len: int, dim: int) -> float:
    """NTK-aware base rescaling; identity when no extrapolation is needed."""
    if eval_len < 1 or train_len < 1:
        raise ValueError("lengths must be >= 1")
    if dim <= 2:
        raise ValueError(f"NTK rescaling needs rotary dim > 2, got {dim}")
    if eval_len <= train_len:
        return base
    return base * (eval_len / train_len) ** (dim / (dim - 2))


def ntk_scale_frequencies(cfg: MspeConfig, eval_len: int, train_len: int, axis: str = "w") -> np.ndarray:
    """Inverse frequencies for one axis, NTK-rescaled when eval_len > train_len."""
    dim = cfg.dims[axis]
    return rotary_inv_freq(dim, ntk_scale_base(cfg.base, eval_len, train_len, dim))


def build_rotation(tags, cfg: MspeConfig, eval_lens: dict | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-token cos/sin tables, shape (N, head_dim), float64.

    ``eval_lens`` maps axes to evaluation lengths; axes beyond their training
    length get NTK-rescaled frequencies.  Without it the training frequencies
    are used as-is.
    """
    cos_parts, sin_parts = [], []
    for axis in ROTARY_AXES:
        dim = cfg.dims[axis]
        if eval_lens is not None and axis in eval_lens:
            inv = ntk_scale_frequencies(cfg, int(eval_lens[axis]), cfg.train_lens[axis], axis)
        else:
            inv = rotary_inv_freq(dim, cfg.base)
        pos = np.asarray(getattr(tags, axis), dtype=np.float64)
        ang = pos[:, None] * inv[None, :]  # (N, dim/2)
        ang = np.concatenate([ang, ang], axis=1)  # NeoX layout: half-split pairs
        cos_parts.append(np.cos(ang))
        sin_parts.append(np.sin(ang))
    cos = torch.from_numpy(np.concatenate(cos_parts, axis=1))
    sin = torch.from_numpy(np.concatenate(sin_parts, axis=1))
    return cos, sin


def rotate(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor, cfg: MspeConfig) -> torch.Tensor:
    """Apply the per-axis rotary rotation to the trailing head dimension.

    ``x`` has shape (..., N, head_dim); each axis slice rotates independently
    with its own cos/sin block.
    """
    if x.shape[-1] != cfg.head_dim:
        raise ValueError(f"expected head dim {cfg.head_dim}, got {x.shape[-1]}")
    cos = cos.to(dtype=x.dtype, device=x.device)
    sin = sin.to(dtype=x.dtype, device=x.device)
    out = []
    start = 0
    for axis in ROTARY_AXES:
        dim = cfg.dims[axis]
        xs = x[..., start : start + dim]
        cs = cos[..., start : start + dim]
        sn = sin[..., start : start + dim]
        half = dim // 2
        x1, x2 = xs[..., :half], xs[..., half:]
        rot_half = torch.cat([-x2, x1], dim=-1)
        out.append(xs * cs + rot_half * sn)
        start += dim
    return torch.cat(out, dim=-1)


def apply_mspe(
    x: torch.Tensor,
    tags,
    cfg: MspeConfig,
    cond_emb: torch.Tensor | None = None,
    role_emb: torch.Tensor | None = None,
    eval_lens: dict | None = None,
    rotation: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Additive condition/role embeddings followed by rotary modulation.

    ``cond_emb``/``role_emb`` are lookup tables of shape (6, head_dim) and
    (2, head_dim); pass None to skip the additive part.  ``rotation`` may
    carry precomputed (cos, sin) tables to share across layers.
    """
    if x.shape[-1] != cfg.head_dim:
        raise ValueError(f"expected head dim {cfg.head_dim}, got {x.shape[-1]}")
    if cond_emb is not None:
        idx = torch.as_tensor(np.asarray(tags.c), dtype=torch.long, device=x.device)
        x = x + cond_emb[idx].to(x.dtype)
    if role_emb is not None:
        idx = torch.as_tensor(np.asarray(tags.r), dtype=torch.long, device=x.device)
        x = x + role_emb[idx].to(x.dtype)
    if rotation is None:
        rotation = build_rotation(tags, cfg, eval_lens)
    return rotate(x, rotation[0], rotation[1], cfg)


class MultiSignalEncoding(nn.Module):
    """Learned additive condition/role tables plus the rotary machinery."""

    def __init__(self, cfg: MspeConfig):
        super().__init__()
        self.cfg = cfg
        self.cond_emb = nn.Parameter(torch.zeros(6, cfg.head_dim))
        self.role_emb = nn.Parameter(torch.zeros(2, cfg.head_dim))
        nn.init.normal_(self.cond_emb, std=0.02)
        nn.init.normal_(self.role_emb, std=0.02)

    def forward(self, x: torch.Tensor, tags, rotation=None, eval_lens: dict | None = None) -> torch.Tensor:
        return apply_mspe(
            x, tags, self.cfg,
            cond_emb=self.cond_emb, role_emb=self.role_emb,
            eval_lens=eval_lens, rotation=rotation,
        )


def eval_lens_from_tags(tags, cfg: MspeConfig) -> dict:
    """Observed sequence extents per rotary axis (used to trigger NTK scaling)."""
    return {axis: int(np.max(np.asarray(getattr(tags, axis)))) + 1 for axis in ROTARY_AXES}
