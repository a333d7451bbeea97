"""Flow-matching training, verification, and sampling for the toy transformer.

Training regresses the constant velocity of the linear noise-to-data path:
x_t = t*x1 + (1-t)*x0 with x0 ~ N(0,1), target velocity x1 - x0, and MSE loss
computed over the output-frame token block only.  Optimization is AdamW with
an EMA shadow of the parameters; the learnable pruning logits join the
optimizer so downsampling ratios are trained with the model.

Sampling integrates the learned field with explicit Euler from t=0 to t=1.
The condition token block is re-inserted from the original clean latents
before every step, so conditions can never drift.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .datagen import ControlFrameSet, TrainingPair, build_control_frames, load_manifest, training_pair
from .model import ModelConfig, ToyDiT
from .mspe import MspeConfig
from .tokenizer import (
    LatentFrame,
    PruningPolicy,
    Tags,
    TokenizerStats,
    assemble_sequence,
    encode_frame,
    nonspatial_candidates,
    spatial_prune_factor,
)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointVersionError(RuntimeError):
    """Checkpoint was written by an incompatible version."""


# ---------------------------------------------------------------------------
# Flow-matching primitives
# ---------------------------------------------------------------------------


def _check_shapes(a, b) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def interpolate_noisy(x1, x0, t):
    """Linear path interpolant t*x1 + (1-t)*x0; t scalar or per-batch."""
    _check_shapes(x1, x0)
    if isinstance(t, (int, float)):
        if not 0.0 <= float(t) <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t}")
        if t == 0.0:
            return x0
        if t == 1.0:
            return x1
        return t * x1 + (1.0 - t) * x0
    while t.ndim < x1.ndim:  # broadcast per-batch times over token dims
        t = t[..., None]
    return t * x1 + (1 - t) * x0


def velocity_target(x1, x0):
    """Instantaneous velocity of the linear path: x1 - x0 (constant in t)."""
    _check_shapes(x1, x0)
    return x1 - x0


def flow_loss(pred_v, target_v):
    """Mean squared error over output-block velocity tokens."""
    _check_shapes(pred_v, target_v)
    diff = pred_v - target_v
    return (diff * diff).mean()


class Ema:
    """Exponential moving average of a parameter dict."""

    def __init__(self, module: nn.Module, decay: float = 0.99):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in module.state_dict().items()}

    @torch.no_grad()
    def update(self, module: nn.Module) -> None:
        for k, v in module.state_dict().items():
            s = self.shadow[k]
            if v.dtype.is_floating_point:
                s.mul_(self.decay).add_(v.detach(), alpha=1.0 - self.decay)
            else:
                s.copy_(v)

    def state_dict(self) -> dict:
        return self.shadow


# ---------------------------------------------------------------------------
# Conditioning pipeline
# ---------------------------------------------------------------------------


@dataclass
class PreparedSample:
    pair: TrainingPair
    ref: LatentFrame
    obj: LatentFrame  # unaugmented; training rebuilds with jittered boxes
    move: LatentFrame
    color: LatentFrame
    intensity: LatentFrame
    target_grid: torch.Tensor  # (gh, gw, D) clean output latent
    spatial_factor: int  # pinned from the unaugmented boxes


class ConditioningBuilder:
    """Turns training pairs into tagged torch token sequences."""

    def __init__(self, factor: int, stats: TokenizerStats, policy: PruningPolicy):
        self.factor = factor
        self.stats = stats
        self.policy = policy

    def _encode(self, image) -> LatentFrame:
        lf = encode_frame(image, self.factor, self.stats)
        return LatentFrame(
            grid=torch.from_numpy(np.ascontiguousarray(lf.grid)),
            factor=lf.factor,
            stats=lf.stats,
            stride=lf.stride,
        )

    def prepare(self, pair: TrainingPair) -> PreparedSample:
        frames = build_control_frames(pair)
        ref = self._encode(frames.reference)
        gh, gw = ref.grid.shape[:2]
        return PreparedSample(
            pair=pair,
            ref=ref,
            obj=self._encode(frames.object_frame),
            move=self._encode(frames.movement),
            color=self._encode(frames.color),
            intensity=self._encode(frames.intensity),
            target_grid=self._encode(pair.target_img).grid,
            spatial_factor=spatial_prune_factor(
                (gh, gw), pair.src_box, pair.tgt_box, self.policy.tau, self.policy.spatial_factors
            ),
        )

    def sequence(
        self,
        prep: PreparedSample,
        augment_seed: int | None = None,
        drop_color: bool = False,
        drop_intensity: bool = False,
        color_logits=None,
        intensity_logits=None,
        mode: str | None = None,
    ):
        """Assemble the full tagged sequence; the output block holds the clean target.

        Training swaps the output block for the interpolant; sampling swaps it
        for the integration state.  Returns (sequence, output_slice).
        """
        if augment_seed is None:
            obj, move = prep.obj, prep.move
        else:
            frames: ControlFrameSet = build_control_frames(prep.pair, augment_seed=augment_seed)
            obj = self._encode(frames.object_frame)
            move = self._encode(frames.movement)
        policy = self.policy if mode is None else _with_mode(self.policy, mode)
        seq = assemble_sequence(
            prep.ref,
            obj,
            move,
            None if drop_color else prep.color,
            None if drop_intensity else prep.intensity,
            LatentFrame(grid=prep.target_grid, factor=self.factor, stats=self.stats),
            policy=policy,
            src_box=prep.pair.src_box,
            tgt_box=prep.pair.tgt_box,
            color_logits=color_logits,
            intensity_logits=intensity_logits,
        )
        return seq, seq.output_slice()


def _with_mode(policy: PruningPolicy, mode: str) -> PruningPolicy:
    from dataclasses import replace

    return policy if policy.mode == mode else replace(policy, mode=mode)


class LearnablePruning(nn.Module):
    """Trainable downsampling logits for the color and intensity frames."""

    def __init__(self, policy: PruningPolicy, grid_shape: tuple[int, int]):
        super().__init__()
        self.grid_shape = grid_shape
        self.factors_color, logits_c = nonspatial_candidates(policy, grid_shape, "color")
        self.factors_intensity, logits_i = nonspatial_candidates(policy, grid_shape, "intensity")
        self.color_logits = nn.Parameter(torch.tensor(logits_c, dtype=torch.float32))
        self.intensity_logits = nn.Parameter(torch.tensor(logits_i, dtype=torch.float32))

    def export_policy(self, policy: PruningPolicy) -> PruningPolicy:
        """Fold the learned logits back into the full-length policy lists."""
        from dataclasses import replace

        color = list(policy.color_logits)
        intensity = list(policy.intensity_logits)
        learned_c = {d: float(v) for d, v in zip(self.factors_color, self.color_logits.detach())}
        learned_i = {d: float(v) for d, v in zip(self.factors_intensity, self.intensity_logits.detach())}
        for i, d in enumerate(policy.nonspatial_factors):
            if d in learned_c:
                color[i] = learned_c[d]
            if d in learned_i:
                intensity[i] = learned_i[d]
        return replace(policy, color_logits=tuple(color), intensity_logits=tuple(intensity))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    ema_decay: float = 0.99
    ema_start: int = 0
    cond_dropout: float = 0.1
    augment: bool = True
    box_scale_range: tuple[float, float] = (0.8, 1.2)
    factor: int = 8
    seed: int = 0
    log_every: int = 1
    checkpoint_name: str = "checkpoint.pt"
    log_name: str = "train_log.csv"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["box_scale_range"] = list(self.box_scale_range)
        return d


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    first_loss: float
    final_loss: float
    losses: list = field(default_factory=list)


def _batch_tags_consistent(tags_list: list[Tags]) -> Tags:
    first = tags_list[0]
    for other in tags_list[1:]:
        for name in ("w", "h", "t", "c", "r"):
            if not np.array_equal(getattr(first, name), getattr(other, name)):
                raise ValueError("batch items assembled with differing sequence structure")
    return first


def train_step(
    model: ToyDiT,
    pruner: LearnablePruning,
    builder: ConditioningBuilder,
    preps: list[PreparedSample],
    opt: torch.optim.Optimizer,
    gen: torch.Generator,
    step_rng: np.random.Generator,
    cfg: TrainConfig,
) -> tuple[float, float]:
    """One optimization step over a structurally uniform batch.

    Returns (loss, grad_norm).  Raises TrainingDiverged on non-finite loss.
    """
    drop_color = bool(step_rng.uniform() < cfg.cond_dropout)
    drop_intensity = bool(step_rng.uniform() < cfg.cond_dropout)

    cond_parts, tags_list, out_slices, x1_list = [], [], [], []
    for prep in preps:
        augment_seed = int(step_rng.integers(0, 2**31)) if cfg.augment else None
        seq, out_slice = builder.sequence(
            prep,
            augment_seed=augment_seed,
            drop_color=drop_color,
            drop_intensity=drop_intensity,
            color_logits=pruner.color_logits,
            intensity_logits=pruner.intensity_logits,
            mode="soft",
        )
        cond_parts.append(seq.tokens[: out_slice.start])
        tags_list.append(seq.tags)
        out_slices.append((out_slice.start, out_slice.stop))
        x1_list.append(prep.target_grid.reshape(-1, prep.target_grid.shape[-1]))

    if len(set(out_slices)) != 1:
        raise ValueError("batch items produced differing output extents; bucket them by structure")
    tags = _batch_tags_consistent(tags_list)
    out_start, out_stop = out_slices[0]
    n_out = out_stop - out_start

    cond = torch.stack(cond_parts)  # (B, Nc, D)
    x1 = torch.stack(x1_list)  # (B, No, D)
    b = x1.shape[0]
    x0 = torch.randn(x1.shape, generator=gen, dtype=x1.dtype)
    t = torch.rand(b, generator=gen, dtype=x1.dtype)
    x_t = interpolate_noisy(x1, x0, t)
    target_v = velocity_target(x1, x0)

    tokens = torch.cat([cond, x_t], dim=1)
    pred = model(tokens, tags, t)[:, out_start:out_stop]
    assert pred.shape[1] == n_out
    loss = flow_loss(pred, target_v)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss.item()!r} (batch of {b}, n_out={n_out})")

    opt.zero_grad(set_to_none=True)
    loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(
        [p for g in opt.param_groups for p in g["params"]], max_norm=float("inf")
    )
    opt.step()
    return float(loss.detach()), float(grad_norm)


def train(
    manifest_path: str,
    out_dir: str,
    train_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    policy: PruningPolicy | None = None,
    stats: TokenizerStats | None = None,
) -> TrainResult:
    """Train a ToyDiT on a generated dataset; writes checkpoint + CSV log."""
    cfg = train_cfg or TrainConfig()
    policy = policy or PruningPolicy()
    stats = stats or TokenizerStats()
    os.makedirs(out_dir, exist_ok=True)

    manifest = load_manifest(manifest_path)
    pairs = [training_pair(s, manifest.base_dir) for s in manifest.samples]
    h, w = pairs[0].input_img.shape[:2]
    if h % cfg.factor or w % cfg.factor:
        raise ValueError(f"images {w}x{h} not divisible by tokenizer factor {cfg.factor}")
    gh, gw = h // cfg.factor, w // cfg.factor
    latent_dim = 3 * cfg.factor * cfg.factor

    builder = ConditioningBuilder(cfg.factor, stats, policy)
    preps = [builder.prepare(p) for p in pairs]
    buckets: dict[int, list[int]] = {}
    for i, prep in enumerate(preps):
        buckets.setdefault(prep.spatial_factor, []).append(i)
    bucket_keys = sorted(buckets)
    bucket_sizes = np.array([len(buckets[k]) for k in bucket_keys], dtype=np.float64)
    bucket_probs = bucket_sizes / bucket_sizes.sum()

    if model_cfg is None:
        head_dim = ModelConfig().head_dim
        model_cfg = ModelConfig(
            latent_dim=latent_dim,
            mspe=MspeConfig.default_for(head_dim, train_lens={"w": gw, "h": gh, "t": 6}),
        )
    if model_cfg.latent_dim != latent_dim:
        raise ValueError(f"model latent_dim {model_cfg.latent_dim} != tokenizer dim {latent_dim}")

    torch.manual_seed(cfg.seed)
    model = ToyDiT(model_cfg)
    pruner = LearnablePruning(policy, (gh, gw))
    params = list(model.parameters()) + list(pruner.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    ema_model = Ema(model, cfg.ema_decay)
    ema_pruner = Ema(pruner, cfg.ema_decay)
    gen = torch.Generator().manual_seed(cfg.seed)

    log_path = os.path.join(out_dir, cfg.log_name)
    losses: list[float] = []
    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["step", "loss", "lr", "grad_norm"])
        for step in range(cfg.steps):
            step_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, step)))
            bucket = bucket_keys[int(step_rng.choice(len(bucket_keys), p=bucket_probs))]
            idx = step_rng.choice(buckets[bucket], size=cfg.batch_size, replace=True)
            batch = [preps[i] for i in idx]
            try:
                loss, grad_norm = train_step(model, pruner, builder, batch, opt, gen, step_rng, cfg)
            except TrainingDiverged as e:
                raise TrainingDiverged(f"step {step}: {e}") from e
            if step >= cfg.ema_start:
                ema_model.update(model)
                ema_pruner.update(pruner)
            losses.append(loss)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                writer.writerow([step, f"{loss:.10g}", f"{cfg.lr:.10g}", f"{grad_norm:.10g}"])

    ckpt_path = os.path.join(out_dir, cfg.checkpoint_name)
    save_checkpoint(
        ckpt_path,
        model=model,
        model_cfg=model_cfg,
        ema=ema_model,
        opt=opt,
        pruner=pruner,
        ema_pruner=ema_pruner,
        policy=pruner.export_policy(policy),
        stats=stats,
        factor=cfg.factor,
        image_size=(w, h),
        train_cfg=cfg,
    )
    return TrainResult(
        checkpoint_path=ckpt_path,
        log_path=log_path,
        first_loss=losses[0] if losses else float("nan"),
        final_loss=losses[-1] if losses else float("nan"),
        losses=losses,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, *, model, model_cfg, ema, opt, pruner, ema_pruner, policy, stats,
                    factor, image_size, train_cfg) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "model_cfg": model_cfg.to_dict(),
            "model_state": model.state_dict(),
            "ema_state": ema.state_dict(),
            "opt_state": opt.state_dict(),
            "pruner_state": pruner.state_dict(),
            "ema_pruner_state": ema_pruner.state_dict(),
            "policy": policy.to_dict(),
            "stats": {"mean": list(stats.mean), "std": list(stats.std)},
            "factor": factor,
            "image_size": list(image_size),
            "train_cfg": train_cfg.to_dict(),
        },
        path,
    )


@dataclass
class CheckpointBundle:
    model: ToyDiT
    model_cfg: ModelConfig
    policy: PruningPolicy
    stats: TokenizerStats
    factor: int
    image_size: tuple[int, int]
    raw: dict


def load_checkpoint(path, use_ema: bool = True) -> CheckpointBundle:
    data = torch.load(path, map_location="cpu", weights_only=False)
    version = data.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version!r} incompatible with supported version {CHECKPOINT_VERSION}"
        )
    model_cfg = ModelConfig.from_dict(data["model_cfg"])
    model = ToyDiT(model_cfg)
    model.load_state_dict(data["ema_state"] if use_ema else data["model_state"])
    model.eval()
    stats = TokenizerStats(mean=tuple(data["stats"]["mean"]), std=tuple(data["stats"]["std"]))
    return CheckpointBundle(
        model=model,
        model_cfg=model_cfg,
        policy=PruningPolicy.from_dict(data["policy"]),
        stats=stats,
        factor=int(data["factor"]),
        image_size=tuple(data["image_size"]),
        raw=data,
    )


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check_fn(loss_fn, parameters, epsilon: float = 1e-4, n_coords: int = 60, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must be a deterministic closure over ``parameters`` (double
    precision recommended).  Random parameter coordinates are probed.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    params = [p for p in parameters if p.requires_grad]
    if not params:
        raise ValueError("no parameters to check")
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for flat in coords:
            pi = int(np.searchsorted(offsets, flat, side="right") - 1)
            ci = int(flat - offsets[pi])
            p = params[pi]
            orig = p.view(-1)[ci].item()
            p.view(-1)[ci] = orig + epsilon
            f_plus = float(loss_fn())
            p.view(-1)[ci] = orig - epsilon
            f_minus = float(loss_fn())
            p.view(-1)[ci] = orig
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            an = float(analytic[pi].view(-1)[ci])
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    return worst


def grad_check(model: ToyDiT, batch: dict, epsilon: float = 1e-4, n_coords: int = 60, seed: int = 0) -> float:
    """Finite-difference check of the flow loss gradient for a fixed batch.

    ``batch`` carries tokens (B, N, D), tags, t (B,), target_v (B, No, D) and
    out (start, stop); everything is cast to double for the probe.
    """
    model = model.double()
    tokens = batch["tokens"].double()
    target_v = batch["target_v"].double()
    t = batch["t"].double()
    start, stop = batch["out"]
    tags = batch["tags"]

    def loss_fn():
        pred = model(tokens, tags, t)[:, start:stop]
        return flow_loss(pred, target_v)

    return grad_check_fn(loss_fn, model.parameters(), epsilon=epsilon, n_coords=n_coords, seed=seed)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.num_steps


@torch.no_grad()
def sample(
    model: ToyDiT,
    cond_tokens: torch.Tensor,
    tags: Tags,
    out_start: int,
    n_out: int,
    cfg: SamplerConfig,
    trace: list | None = None,
) -> torch.Tensor:
    """Euler-integrate the velocity field from Gaussian noise to the target.

    Before every step the condition block is re-inserted from the original
    clean latents, so condition tokens are bitwise identical at every step
    (append each step's condition block to ``trace`` to audit this).
    Deterministic for fixed (weights, conditions, seed, num_steps).
    """
    if not torch.isfinite(cond_tokens).all():
        raise ValueError("condition tokens contain non-finite values")
    dtype = next(model.parameters()).dtype
    cond_tokens = cond_tokens.to(dtype)
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn((n_out, cond_tokens.shape[-1]), generator=gen, dtype=dtype)
    dt = cfg.dt
    for k in range(cfg.num_steps):
        tokens = torch.cat([cond_tokens, x], dim=0)  # conditions reset to originals
        if trace is not None:
            trace.append(tokens[:out_start].clone())
        t = torch.tensor([k * dt], dtype=dtype)
        v = model(tokens[None], tags, t)[0, out_start : out_start + n_out]
        x = x + dt * v
        if not torch.isfinite(x).all():
            raise RuntimeError(f"sampling diverged at step {k}")
    return x


def sample_pair(
    bundle: CheckpointBundle,
    pair: TrainingPair,
    sampler: SamplerConfig,
    mode: str | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Run the full conditional sampler for one pair; returns the decoded image."""
    from .tokenizer import decode_frame

    policy = bundle.policy if mode is None else _with_mode(bundle.policy, mode)
    builder = ConditioningBuilder(bundle.factor, bundle.stats, policy)
    prep = builder.prepare(pair)
    seq, out_slice = builder.sequence(prep)
    cond = seq.tokens[: out_slice.start]
    n_out = out_slice.stop - out_slice.start
    latent = sample(bundle.model, cond, seq.tags, out_slice.start, n_out, sampler, trace=trace)
    gh, gw = prep.target_grid.shape[:2]
    frame = LatentFrame(
        grid=latent.reshape(gh, gw, -1).float(),
        factor=bundle.factor,
        stats=bundle.stats,
    )
    return np.clip(decode_frame(frame), 0.0, 1.0)
