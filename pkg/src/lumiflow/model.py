"""Small diffusion transformer with multi-signal positional attention.

Pre-norm transformer blocks with adaLN-zero time conditioning (scale/shift/
gate derived from a sinusoidal embedding of the flow time t), MSPE-modulated
self-attention, and a zero-initialized velocity head.  The forward pass runs
over the full token sequence; the velocity prediction for the output frame is
read off the output-role block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .mspe import MspeConfig, MultiSignalEncoding, build_rotation, eval_lens_from_tags
from .tokenizer import ROLE_OUTPUT, Tags, TokenSequence


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 192
    model_dim: int = 128
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: float = 4.0
    mspe: MspeConfig | None = None

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.n_heads} heads")
        if (self.model_dim // self.n_heads) % 2:
            raise ValueError("head dim must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    def resolved_mspe(self) -> MspeConfig:
        return self.mspe if self.mspe is not None else MspeConfig.default_for(self.head_dim)

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "model_dim": self.model_dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "mlp_ratio": self.mlp_ratio,
            "mspe": self.resolved_mspe().to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            latent_dim=d["latent_dim"],
            model_dim=d["model_dim"],
            n_layers=d["n_layers"],
            n_heads=d["n_heads"],
            mlp_ratio=d["mlp_ratio"],
            mspe=MspeConfig.from_dict(d["mspe"]),
        )


def sinusoidal_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Classic sin/cos embedding of a scalar time in [0, 1], shape (B, dim).

    The unit-interval time is stretched by 1000 so the frequency bank spans
    it with meaningful phase variation.
    """
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = (1000.0 * t)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


class MspeAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, tags, rotation, mspe: MultiSignalEncoding):
        b, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        q = mspe(q, tags, rotation=rotation)
        k = mspe(k, tags, rotation=rotation)
        attn = (q @ k.transpose(-1, -2)) * self.head_dim**-0.5
        out = attn.softmax(dim=-1) @ v
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = MspeAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        # time modulation starts at identity (shift/scale 0, gates 1) so the
        # residual branches train from step 0; the t-dependence grows in
        self.modulation = nn.Linear(dim, 6 * dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, temb, tags, rotation, mspe):
        mods = self.modulation(torch.nn.functional.silu(temb))[:, None, :].chunk(6, dim=-1)
        shift1, scale1, gate1, shift2, scale2, gate2 = mods
        h = self.norm1(x) * (1 + scale1) + shift1
        x = x + (1 + gate1) * self.attn(h, tags, rotation, mspe)
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + (1 + gate2) * self.mlp(h)


class ToyDiT(nn.Module):
    """Velocity-field transformer over tagged token sequences."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.mspe_cfg = cfg.resolved_mspe()
        self.in_proj = nn.Linear(cfg.latent_dim, cfg.model_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.model_dim, cfg.model_dim),
            nn.SiLU(),
            nn.Linear(cfg.model_dim, cfg.model_dim),
        )
        self.mspe = MultiSignalEncoding(self.mspe_cfg)
        self.blocks = nn.ModuleList(
            Block(cfg.model_dim, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.model_dim, elementwise_affine=False)
        self.head = nn.Linear(cfg.model_dim, cfg.latent_dim)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, tokens: torch.Tensor, tags: Tags, t: torch.Tensor) -> torch.Tensor:
        """Predict per-token velocity.

        Args:
            tokens: (B, N, latent_dim) sequence (conditions + noisy output block).
            tags: position tags shared across the batch.
            t: (B,) flow time in [0, 1].

        Returns:
            (B, N, latent_dim) velocity; callers read the output-role block.
        """
        if tokens.ndim != 3 or tokens.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"expected (B, N, {self.cfg.latent_dim}) tokens, got {tuple(tokens.shape)}")
        if len(tags) != tokens.shape[1]:
            raise ValueError(f"tags cover {len(tags)} tokens but sequence has {tokens.shape[1]}")
        # NTK scaling engages automatically when positions exceed training extents.
        lens = eval_lens_from_tags(tags, self.mspe_cfg)
        lens = {a: v for a, v in lens.items() if v > self.mspe_cfg.train_lens[a]}
        rotation = build_rotation(tags, self.mspe_cfg, eval_lens=lens or None)
        x = self.in_proj(tokens)
        temb = self.time_mlp(sinusoidal_embedding(t.to(tokens.dtype), self.cfg.model_dim))
        for block in self.blocks:
            x = block(x, temb, tags, rotation, self.mspe)
        return self.head(self.final_norm(x))


def predict_velocity(model: ToyDiT, seq: TokenSequence, t: float) -> torch.Tensor:
    """Forward one sequence and return velocity tokens for the output block only."""
    out_role = np.asarray(seq.tags.r) == ROLE_OUTPUT
    if not out_role.any():
        raise ValueError("sequence has no output block")
    tokens = seq.tokens
    if isinstance(tokens, np.ndarray):
        tokens = torch.from_numpy(np.ascontiguousarray(tokens))
    tokens = tokens.to(next(model.parameters()).dtype)
    with torch.no_grad():
        v = model(tokens[None], seq.tags, torch.tensor([float(t)], dtype=tokens.dtype))
    return v[0, torch.from_numpy(out_role)]
