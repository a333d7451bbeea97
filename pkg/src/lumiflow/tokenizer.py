"""Latent tokenization, sequence assembly, and adaptive token pruning.

Frames become latent token grids through a lossless space-to-depth rearrange:
each f x f pixel patch is flattened to a 3*f^2 vector and standardized with
fixed per-channel stats.  Tokens carry a 5-tuple position tag
(w, h, t, c, r): grid column/row, canonical frame index, condition type, and
input/output role.  Condition frames assemble in the fixed order
[reference, object, movement, color, intensity, output]; the color and
intensity frames may be dropped, but every other frame keeps its canonical
temporal index so positions stay stable across drop patterns.

Pruned grids keep full-resolution coordinates: a token pooled with per-side
factor d is tagged with the top-left corner (col*d, row*d) of its block, so
relative spatial phases remain comparable across frames at different
resolutions.

Functions that transform token grids accept both numpy arrays and torch
tensors; the torch path is differentiable and is what joint training of the
learnable downsampling logits uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .control_frames import BoundingBox

CONDITION_TYPES = ("reference", "object", "movement", "color", "intensity", "output")
COND_INDEX = {name: i for i, name in enumerate(CONDITION_TYPES)}
ROLE_INPUT, ROLE_OUTPUT = 0, 1

DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.25, 0.25, 0.25)


def _is_torch(x) -> bool:
    return type(x).__module__.split(".")[0] == "torch"


def _pool_grid(grid, d: int):
    """Average-pool a (Gh, Gw, D) token grid by per-side factor d."""
    gh, gw, dim = grid.shape
    if gh % d or gw % d:
        raise ValueError(f"pool factor {d} does not divide grid {gh}x{gw}")
    r = grid.reshape(gh // d, d, gw // d, d, dim)
    if _is_torch(grid):
        return r.mean(dim=(1, 3))
    return r.mean(axis=(1, 3))


def _broadcast_grid(grid, d: int):
    """Inverse spatial broadcast of a pooled grid back to full resolution."""
    gh, gw, dim = grid.shape
    if _is_torch(grid):
        return grid.repeat_interleave(d, 0).repeat_interleave(d, 1)
    return np.repeat(np.repeat(grid, d, axis=0), d, axis=1)


def _softmax(v):
    if _is_torch(v):
        import torch

        return torch.softmax(v, dim=0)
    e = np.exp(v - np.max(v))
    return e / e.sum()


# ---------------------------------------------------------------------------
# Space-to-depth tokenizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenizerStats:
    """Per-RGB-channel standardization stats shared by encode and decode."""

    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std must be positive, got {self.std}")


@dataclass
class LatentFrame:
    """Token grid of one frame: grid (Gh, Gw, 3*f^2), stride in full-grid units."""

    grid: object
    factor: int
    stats: TokenizerStats
    stride: int = 1

    @property
    def n_tokens(self) -> int:
        return int(self.grid.shape[0] * self.grid.shape[1])

    @property
    def token_dim(self) -> int:
        return int(self.grid.shape[2])


def space_to_depth(img: np.ndarray, factor: int) -> np.ndarray:
    """(H, W, 3) -> (H/f, W/f, 3*f^2); channel-last within each patch."""
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image {w}x{h} not divisible by factor {factor}")
    gh, gw = h // factor, w // factor
    t = img.reshape(gh, factor, gw, factor, c)
    return t.transpose(0, 2, 1, 3, 4).reshape(gh, gw, factor * factor * c)


def depth_to_space(grid: np.ndarray, factor: int) -> np.ndarray:
    gh, gw, dim = grid.shape
    c = dim // (factor * factor)
    t = grid.reshape(gh, gw, factor, factor, c)
    return t.transpose(0, 2, 1, 3, 4).reshape(gh * factor, gw * factor, c)


def encode_frame(image, factor: int, stats: TokenizerStats | None = None) -> LatentFrame:
    """Standardize an image per RGB channel and rearrange it into latent tokens."""
    stats = stats or TokenizerStats()
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    grid = space_to_depth((img - mean) / std, factor)
    return LatentFrame(grid=grid, factor=factor, stats=stats)


def decode_frame(latent: LatentFrame) -> np.ndarray:
    """Exact inverse of encode_frame up to float rounding.

    Pruned frames decode at their pooled resolution; pruning is lossy, so the
    result is the pooled image, not the original.
    """
    grid = latent.grid
    if _is_torch(grid):
        grid = grid.detach().cpu().numpy()
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3 or grid.shape[2] != 3 * latent.factor * latent.factor:
        raise ValueError(f"latent grid has shape {grid.shape}, inconsistent with factor {latent.factor}")
    img = depth_to_space(grid, latent.factor)
    mean = np.asarray(latent.stats.mean, dtype=np.float32)
    std = np.asarray(latent.stats.std, dtype=np.float32)
    return img * std + mean


# ---------------------------------------------------------------------------
# Position tags
# ---------------------------------------------------------------------------


@dataclass
class Tags:
    """Per-token position signals (parallel int arrays)."""

    w: np.ndarray
    h: np.ndarray
    t: np.ndarray
    c: np.ndarray
    r: np.ndarray

    def __len__(self) -> int:
        return len(self.w)

    def validate(self) -> None:
        out_role = self.r == ROLE_OUTPUT
        out_cond = self.c == COND_INDEX["output"]
        if not np.array_equal(out_role, out_cond):
            raise ValueError("role=output must coincide exactly with condition=output")

    @staticmethod
    def concatenate(parts: list["Tags"]) -> "Tags":
        return Tags(
            w=np.concatenate([p.w for p in parts]),
            h=np.concatenate([p.h for p in parts]),
            t=np.concatenate([p.t for p in parts]),
            c=np.concatenate([p.c for p in parts]),
            r=np.concatenate([p.r for p in parts]),
        )


def frame_tags(gh: int, gw: int, t_index: int, cond: str, stride: int = 1) -> Tags:
    """Row-major tags for one frame's token grid, in full-grid coordinate units."""
    cond_idx = COND_INDEX[cond]
    role = ROLE_OUTPUT if cond == "output" else ROLE_INPUT
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    n = gh * gw
    return Tags(
        w=(cols.ravel() * stride).astype(np.int64),
        h=(rows.ravel() * stride).astype(np.int64),
        t=np.full(n, t_index, dtype=np.int64),
        c=np.full(n, cond_idx, dtype=np.int64),
        r=np.full(n, role, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruningPolicy:
    """Adaptive token pruning configuration.

    Spatial frames (the movement map) follow the area-ratio rule with
    threshold tau; non-spatial frames (color, intensity) use learnable
    categorical logits over candidate per-side factors.  ``mode`` selects the
    deployment behavior of the non-spatial rule: "hard" pools by the argmax
    candidate, "soft" keeps the full token count as a convex combination
    (training uses soft so the logits receive gradients).
    """

    tau: float = 0.2
    spatial_factors: tuple[int, ...] = (1, 2, 4, 8)
    nonspatial_factors: tuple[int, ...] = (1, 2, 4, 8)
    # ascending default bias: deployment compresses constant frames by the
    # largest factor available on the grid at hand
    color_logits: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0)
    intensity_logits: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0)
    mode: str = "hard"
    prune_object: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"mode must be 'hard' or 'soft', got {self.mode!r}")
        for name in ("color_logits", "intensity_logits"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if len(v) != len(self.nonspatial_factors):
                raise ValueError(f"{name} must have one entry per candidate factor")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "spatial_factors": list(self.spatial_factors),
            "nonspatial_factors": list(self.nonspatial_factors),
            "color_logits": list(self.color_logits),
            "intensity_logits": list(self.intensity_logits),
            "mode": self.mode,
            "prune_object": self.prune_object,
        }

    @staticmethod
    def from_dict(d: dict) -> "PruningPolicy":
        return PruningPolicy(
            tau=d["tau"],
            spatial_factors=tuple(d["spatial_factors"]),
            nonspatial_factors=tuple(d["nonspatial_factors"]),
            color_logits=tuple(d["color_logits"]),
            intensity_logits=tuple(d["intensity_logits"]),
            mode=d["mode"],
            prune_object=d.get("prune_object", False),
        )


def _dividing_factors(factors, gh: int, gw: int) -> list[int]:
    ok = [d for d in factors if gh % d == 0 and gw % d == 0]
    if not ok:
        raise ValueError(f"no candidate factor from {factors} divides grid {gh}x{gw}")
    return sorted(ok)


def spatial_prune_factor(
    grid_shape: tuple[int, int],
    src: BoundingBox,
    tgt: BoundingBox,
    tau: float,
    factors=(1, 2, 4, 8),
) -> int:
    """Per-side pooling factor chosen by the area-ratio rule.

    ratio = max(source area, target area).  Below tau the full-resolution map
    is kept (factor 1).  Otherwise the target token count N * tau / ratio is
    snapped to the nearest achievable per-side factor; ties keep more tokens.
    """
    gh, gw = grid_shape
    ratio = max(src.area, tgt.area)
    if ratio < tau:
        return 1
    n_full = gh * gw
    target = round(n_full * tau / ratio)
    candidates = _dividing_factors(factors, gh, gw)
    return min(candidates, key=lambda d: (abs((gh // d) * (gw // d) - target), d))


def prune_spatial(
    latent: LatentFrame,
    src: BoundingBox,
    tgt: BoundingBox,
    tau: float = 0.2,
    factors=(1, 2, 4, 8),
) -> LatentFrame:
    """Area-ratio pruning for spatial control frames (never grows the grid)."""
    gh, gw = latent.grid.shape[:2]
    d = spatial_prune_factor((gh, gw), src, tgt, tau, factors)
    if d == 1:
        return latent
    return replace(latent, grid=_pool_grid(latent.grid, d), stride=latent.stride * d)


def nonspatial_candidates(policy: PruningPolicy, grid_shape: tuple[int, int], which: str):
    """(factors, logits) for one non-spatial frame, restricted to the grid.

    Candidate factors that do not divide the grid are dropped together with
    their logits; prune_nonspatial itself treats a non-dividing candidate as a
    configuration error, so callers route policies through this filter.
    """
    gh, gw = grid_shape
    logits = {"color": policy.color_logits, "intensity": policy.intensity_logits}[which]
    pairs = [(d, l) for d, l in zip(policy.nonspatial_factors, logits) if gh % d == 0 and gw % d == 0]
    if not pairs:
        raise ValueError(f"no candidate factor from {policy.nonspatial_factors} divides grid {gh}x{gw}")
    return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)


def nonspatial_hard_factor(logits, factors, grid_shape: tuple[int, int]) -> int:
    """Argmax candidate factor; every candidate must divide the grid."""
    gh, gw = grid_shape
    for d in factors:
        if gh % d or gw % d:
            raise ValueError(f"candidate factor {d} does not divide grid {gh}x{gw}")
    logits = np.asarray(logits, dtype=np.float64)
    return int(factors[int(np.argmax(logits))])


def prune_nonspatial(latent: LatentFrame, logits, mode: str, factors=(1, 2, 4, 8)) -> LatentFrame:
    """Learnable downsampling for non-spatial frames.

    hard: average-pool by the argmax candidate factor (token count shrinks).
    soft: convex combination over candidates of pool-then-broadcast versions,
    weighted by softmax(logits); token count is preserved and the result is
    differentiable with respect to both the grid and the logits.

    Every candidate factor must divide the grid (configuration error
    otherwise); see nonspatial_candidates for filtering a policy to a grid.
    """
    if mode not in ("hard", "soft"):
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    gh, gw = latent.grid.shape[:2]
    if mode == "hard":
        if _is_torch(logits):
            logits = logits.detach().cpu().numpy()
        d = nonspatial_hard_factor(logits, factors, (gh, gw))
        if d == 1:
            return latent
        return replace(latent, grid=_pool_grid(latent.grid, d), stride=latent.stride * d)
    for d in factors:
        if gh % d or gw % d:
            raise ValueError(f"candidate factor {d} does not divide grid {gh}x{gw}")
    weights = _softmax(logits if not isinstance(logits, (list, tuple)) else np.asarray(logits, dtype=np.float64))
    mix = None
    for d, wgt in zip(factors, weights):
        rep = latent.grid if d == 1 else _broadcast_grid(_pool_grid(latent.grid, d), d)
        term = wgt * rep
        mix = term if mix is None else mix + term
    return replace(latent, grid=mix)


# ---------------------------------------------------------------------------
# Sequence assembly
# ---------------------------------------------------------------------------


@dataclass
class TokenSequence:
    """Flat token sequence with per-token position tags and frame extents."""

    tokens: object  # (N, D) numpy array or torch tensor
    tags: Tags
    blocks: list = field(default_factory=list)  # (condition name, start, stop)

    @property
    def n_tokens(self) -> int:
        return int(self.tokens.shape[0])

    def output_slice(self) -> slice:
        for name, start, stop in self.blocks:
            if name == "output":
                return slice(start, stop)
        raise ValueError("sequence has no output block")


def _flatten(grid):
    gh, gw, dim = grid.shape
    return grid.reshape(gh * gw, dim)


def assemble_sequence(
    ref: LatentFrame,
    obj: LatentFrame,
    move: LatentFrame,
    color: LatentFrame | None,
    intensity: LatentFrame | None,
    output_latent: LatentFrame,
    policy: PruningPolicy | None = None,
    src_box: BoundingBox | None = None,
    tgt_box: BoundingBox | None = None,
    color_logits=None,
    intensity_logits=None,
) -> TokenSequence:
    """Concatenate condition frames and the output block in canonical order.

    Color and intensity frames are optional (dropped frames simply do not
    appear; remaining frames keep their canonical temporal indices).  With a
    policy and boxes, the movement map goes through spatial pruning and the
    color/intensity frames through the learnable non-spatial rule.
    ``color_logits``/``intensity_logits`` override the policy's stored logits
    (training passes live torch parameters here so gradients reach them);
    overrides must match the grid-filtered candidate list.

    Raises:
        ValueError: missing output latent.
    """
    if output_latent is None:
        raise ValueError("sequence requires exactly one output block")
    if policy is not None:
        if src_box is not None and tgt_box is not None:
            move = prune_spatial(move, src_box, tgt_box, policy.tau, policy.spatial_factors)
            if policy.prune_object:
                obj = prune_spatial(obj, src_box, tgt_box, policy.tau, policy.spatial_factors)
        if color is not None:
            fac, logits = nonspatial_candidates(policy, color.grid.shape[:2], "color")
            arr = color_logits if color_logits is not None else np.asarray(logits)
            color = prune_nonspatial(color, arr, policy.mode, fac)
        if intensity is not None:
            fac, logits = nonspatial_candidates(policy, intensity.grid.shape[:2], "intensity")
            arr = intensity_logits if intensity_logits is not None else np.asarray(logits)
            intensity = prune_nonspatial(intensity, arr, policy.mode, fac)

    frames = [("reference", ref), ("object", obj), ("movement", move)]
    if color is not None:
        frames.append(("color", color))
    if intensity is not None:
        frames.append(("intensity", intensity))
    frames.append(("output", output_latent))

    token_parts, tag_parts, blocks = [], [], []
    cursor = 0
    for name, frame in frames:
        gh, gw = frame.grid.shape[:2]
        flat = _flatten(frame.grid)
        token_parts.append(flat)
        tag_parts.append(frame_tags(gh, gw, COND_INDEX[name], name, stride=frame.stride))
        blocks.append((name, cursor, cursor + gh * gw))
        cursor += gh * gw

    if _is_torch(token_parts[0]):
        import torch

        tokens = torch.cat(token_parts, dim=0)
    else:
        tokens = np.concatenate(token_parts, axis=0)
    tags = Tags.concatenate(tag_parts)
    tags.validate()
    return TokenSequence(tokens=tokens, tags=tags, blocks=blocks)


# ---------------------------------------------------------------------------
# Reduction accounting
# ---------------------------------------------------------------------------


def reduction_report(
    policy: PruningPolicy,
    manifest,
    image_size: tuple[int, int],
    factor: int,
) -> dict:
    """Average control-sequence length reduction of a policy over a workload.

    The control sequence counts the five condition frames (reference, object,
    movement, color, intensity); the output block is excluded.  Values are
    percentages.  Returns {"mean_reduction", "per_task_reduction"}.
    """
    samples = getattr(manifest, "samples", manifest)
    if len(samples) == 0:
        raise ValueError("reduction_report requires a non-empty workload")
    w, h = image_size
    if w % factor or h % factor:
        raise ValueError(f"image size {w}x{h} not divisible by tokenizer factor {factor}")
    gh, gw = h // factor, w // factor
    n_full = gh * gw

    fac_c, log_c = nonspatial_candidates(policy, (gh, gw), "color")
    fac_i, log_i = nonspatial_candidates(policy, (gh, gw), "intensity")
    d_color = nonspatial_hard_factor(log_c, fac_c, (gh, gw))
    d_int = nonspatial_hard_factor(log_i, fac_i, (gh, gw))
    n_color = (gh // d_color) * (gw // d_color)
    n_int = (gh // d_int) * (gw // d_int)

    per_task_sum: dict = {}
    per_task_n: dict = {}
    total = 0.0
    for s in samples:
        src = BoundingBox(*s["src_box"])
        tgt = BoundingBox(*s["tgt_box"])
        d_move = spatial_prune_factor((gh, gw), src, tgt, policy.tau, policy.spatial_factors)
        n_move = (gh // d_move) * (gw // d_move)
        n_obj = n_full
        if policy.prune_object:
            d_obj = spatial_prune_factor((gh, gw), src, tgt, policy.tau, policy.spatial_factors)
            n_obj = (gh // d_obj) * (gw // d_obj)
        pruned = n_full + n_obj + n_move + n_color + n_int
        reduction = 100.0 * (1.0 - pruned / (5.0 * n_full))
        total += reduction
        per_task_sum[s["task"]] = per_task_sum.get(s["task"], 0.0) + reduction
        per_task_n[s["task"]] = per_task_n.get(s["task"], 0) + 1

    return {
        "mean_reduction": total / len(samples),
        "per_task_reduction": {t: per_task_sum[t] / per_task_n[t] for t in sorted(per_task_sum)},
    }
