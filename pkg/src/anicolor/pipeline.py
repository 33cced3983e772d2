"""Example assembly, two-stage training, dense/sparse inference and ablations."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .conditioning import (
    DENSE_MAX_KEYPOINTS,
    SPARSE_MAX_KEYPOINTS,
    MatchSet,
    TrajectorySet,
    augment_background,
    binarize,
    build_heatmaps,
    build_point_map_sequence,
    default_sigma,
    encode_labels,
    interpolate_trajectories,
    sample_keypoints,
)
from .correspondence import MatcherSpec, match_reference, oracle_matches, registry_tracks, track_by_matching
from .diffusion import (
    LOSS_WEIGHTINGS,
    ControlInputs,
    DenoiserConfig,
    DivergenceError,
    ModelState,
    expand_control_input,
    load_checkpoint,
    loss,
    make_schedule,
    sample,
    save_checkpoint,
    to_video,
)
from .synthgen import AnchorRegistry, ReferenceImage, SyntheticClip, extract_lineart, round_half_up

logger = logging.getLogger(__name__)

STAGE_MAX_KEYPOINTS = {"dense": DENSE_MAX_KEYPOINTS, "sparse": SPARSE_MAX_KEYPOINTS}
NEUTRAL_SKETCH = 255
PAPER_LEARNING_RATE = 1e-5


class ConfigError(ValueError):
    pass


class SkipExample(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "dense"
    max_keypoints: int | None = None  # None: 50 dense, 5 sparse
    reference_offset: int = 32
    clip_length: int = 14
    learning_rate: float = 1e-4  # the published setting is 1e-5 on a pretrained model
    weight_decay: float = 1e-2
    total_steps: int = 3000
    batch_size: int = 2
    seed: int = 0
    sketch_mode: str = "oracle"
    binarize: bool = True
    background_augment_p: float = 0.5
    use_matching: bool = True
    sigma: float | None = None  # heatmap width, default H / 32
    schedule_steps: int = 1000
    schedule_kind: str = "cosine"
    grad_clip: float = 1.0
    lr_schedule: str = "constant"  # or "cosine": decay to zero over total_steps
    loss_weighting: str = "eps"  # or "v": noise error scaled by 1 / alpha_bar
    model: DenoiserConfig = field(default_factory=DenoiserConfig)

    def __post_init__(self):
        if self.stage not in STAGE_MAX_KEYPOINTS:
            raise ConfigError(f"unknown stage {self.stage!r}")
        cap = STAGE_MAX_KEYPOINTS[self.stage]
        if self.max_keypoints is not None and not 1 <= self.max_keypoints <= cap:
            raise ConfigError(f"{self.stage} stage allows 1..{cap} keypoints, got {self.max_keypoints}")
        if self.sketch_mode not in ("oracle", "leaky", "edge"):
            raise ConfigError(f"unknown sketch_mode {self.sketch_mode!r}")
        if not 0.0 <= self.background_augment_p <= 1.0:
            raise ConfigError("background_augment_p must be a probability")
        if self.clip_length < 2:
            raise ConfigError("clip_length must be >= 2")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.loss_weighting not in LOSS_WEIGHTINGS:
            raise ConfigError(f"unknown loss_weighting {self.loss_weighting!r}")
        if self.total_steps < 0 or self.batch_size < 1:
            raise ConfigError("total_steps must be >= 0 and batch_size >= 1")

    @property
    def keypoint_cap(self) -> int:
        return self.max_keypoints or STAGE_MAX_KEYPOINTS[self.stage]

    @property
    def max_label(self) -> int:
        return STAGE_MAX_KEYPOINTS[self.stage]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            model_known = set(DenoiserConfig.__dataclass_fields__)
            bad = set(d["model"]) - model_known
            if bad:
                raise ConfigError(f"unknown model keys: {sorted(bad)}")
            d["model"] = DenoiserConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class ConditionedExample:
    frames: np.ndarray  # T x H x W x 3 in [0, 1]
    reference: ReferenceImage
    sketches: np.ndarray  # T x H x W uint8
    point_maps: np.ndarray  # 2 x T x H x W, encoded to [0, 1]
    heatmaps: np.ndarray | None  # T x H x W or None (dense)
    tracks: TrajectorySet
    provenance: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def tensors(self, dtype=torch.float32):
        """(z0, ref, controls) with a leading batch dimension of 1."""
        return examples_to_tensors([self], dtype)

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            frames=self.frames,
            reference=self.reference.pixels,
            reference_mask=self.reference.fg_mask,
            has_background=self.reference.has_background,
            sketches=self.sketches,
            point_maps=self.point_maps,
            heatmaps=self.heatmaps if self.heatmaps is not None else np.zeros(0),
            positions=self.tracks.positions,
            valid=self.tracks.valid,
            ref_points=self.tracks.ref_points,
            provenance=json.dumps(self.provenance),
        )

    @classmethod
    def load(cls, path) -> "ConditionedExample":
        with np.load(path) as z:
            heat = z["heatmaps"]
            return cls(
                frames=z["frames"],
                reference=ReferenceImage(z["reference"], z["reference_mask"], bool(z["has_background"])),
                sketches=z["sketches"],
                point_maps=z["point_maps"],
                heatmaps=heat if heat.size else None,
                tracks=TrajectorySet(z["positions"], z["valid"], z["ref_points"]),
                provenance=json.loads(str(z["provenance"])),
            )


def sketch_to_unit(sketches: np.ndarray) -> np.ndarray:
    return sketches.astype(np.float32) / 127.5 - 1.0


def control_tensors(sketches, point_maps, heatmaps, dtype=torch.float32) -> ControlInputs:
    """Single-example control tensors (batch of 1) from numpy arrays."""
    sk = torch.from_numpy(sketch_to_unit(np.asarray(sketches)))[None, None]
    pm = torch.from_numpy(np.asarray(point_maps, dtype=np.float32))[None]
    hm = None if heatmaps is None else torch.from_numpy(np.asarray(heatmaps, dtype=np.float32))[None, None]
    return ControlInputs(sk, pm, hm).to(dtype)


def reference_tensor(ref: ReferenceImage, dtype=torch.float32) -> torch.Tensor:
    return (torch.from_numpy(np.asarray(ref.pixels, dtype=np.float32)).permute(2, 0, 1)[None] * 2 - 1).to(dtype)


def examples_to_tensors(examples: Sequence[ConditionedExample], dtype=torch.float32):
    z0 = torch.stack([torch.from_numpy(e.frames).permute(3, 0, 1, 2) for e in examples]) * 2 - 1
    ref = torch.cat([reference_tensor(e.reference) for e in examples])
    sk = torch.stack([torch.from_numpy(sketch_to_unit(e.sketches))[None] for e in examples])
    pm = torch.stack([torch.from_numpy(e.point_maps) for e in examples])
    hm = None
    if examples[0].heatmaps is not None:
        hm = torch.stack([torch.from_numpy(e.heatmaps.astype(np.float32))[None] for e in examples])
    return z0.to(dtype), ref.to(dtype), ControlInputs(sk, pm, hm).to(dtype)


def _start_matches(tracks: TrajectorySet) -> MatchSet:
    return MatchSet(tracks.ref_points, round_half_up(tracks.positions[:, 0]))


def encode_correspondence(tracks: TrajectorySet, H: int, W: int, max_label: int, enabled: bool = True) -> np.ndarray:
    T = tracks.T
    if not enabled or tracks.n == 0:
        return np.zeros((2, T, H, W), dtype=np.float32)
    seq = build_point_map_sequence(_start_matches(tracks), tracks, H, W)
    return encode_labels(seq, max_label)


def sparse_sketches(first: np.ndarray, last: np.ndarray, T: int) -> np.ndarray:
    out = np.full((T,) + first.shape, NEUTRAL_SKETCH, dtype=np.uint8)
    out[0] = first
    out[-1] = last
    return out


def make_example(clip: SyntheticClip, cfg: TrainConfig, rng: np.random.Generator) -> ConditionedExample:
    """Assemble one training example from a synthetic clip.

    Raises ``SkipExample`` when matching is on but no keypoint survives.
    """
    T = cfg.clip_length
    if clip.T < T:
        raise ConfigError(f"clip has {clip.T} frames, config needs {T}")
    if clip.config.reference_offset != cfg.reference_offset:
        raise ConfigError(
            f"clip {clip.seed}: reference rendered {clip.config.reference_offset} frames early, "
            f"config expects {cfg.reference_offset}"
        )
    H, W = clip.H, clip.W
    frames = clip.frames[:T]
    ref = augment_background(clip.reference, cfg.background_augment_p, rng)
    sketches = np.stack([extract_lineart(f, cfg.sketch_mode) for f in frames])
    if cfg.binarize:
        sketches = binarize(sketches)
    if cfg.use_matching:
        tracks = registry_tracks(clip.registry, oracle_matches(clip.registry, 0), T)
        mode = "uniform" if cfg.stage == "dense" else "motion_weighted"
        tracks = sample_keypoints(tracks, cfg.keypoint_cap, mode, rng)
        if tracks.n == 0:
            raise SkipExample(f"clip {clip.seed}: no keypoints visible in reference and frame 0")
    else:
        tracks = TrajectorySet.empty(T)
    point_maps = encode_correspondence(tracks, H, W, cfg.max_label, cfg.use_matching)
    heatmaps = None
    if cfg.stage == "sparse":
        sketches = sparse_sketches(sketches[0], sketches[-1], T)
        sigma = cfg.sigma or default_sigma(H)
        heatmaps = build_heatmaps(tracks, sigma, H, W).astype(np.float32)
    return ConditionedExample(
        frames=frames,
        reference=ref,
        sketches=sketches,
        point_maps=point_maps,
        heatmaps=heatmaps,
        tracks=tracks,
        provenance={"clip_seed": clip.seed, "stage": cfg.stage, "n_keypoints": tracks.n},
    )


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    state: ModelState
    trace: list[dict]
    skipped: int = 0


def write_trace(path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "loss", "lr", "stage"])
        writer.writeheader()
        for row in trace:
            writer.writerow(row)


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [
            {"step": int(r["step"]), "loss": float(r["loss"]), "lr": float(r["lr"]), "stage": r["stage"]}
            for r in csv.DictReader(fh)
        ]


def _initial_state(cfg: TrainConfig, init) -> ModelState:
    if isinstance(init, (str, Path)):
        init = load_checkpoint(init)
    if cfg.stage == "dense":
        if init is None:
            return ModelState.create(cfg.model, "dense", seed=cfg.seed)
        if init.stage != "dense":
            raise ConfigError("dense-stage training cannot start from a sparse checkpoint")
        return init
    if init is None:
        raise ConfigError("sparse-stage training needs a dense-stage checkpoint (init)")
    return init if init.stage == "sparse" else expand_control_input(init)


def train(
    dataset: Sequence[SyntheticClip],
    cfg: TrainConfig,
    init=None,
    out_dir=None,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Optimise the denoising objective on ``dataset``.

    Batches are assembled single-threaded from one seeded generator, so a
    fixed ``cfg.seed`` reproduces the loss trace exactly.
    """
    if not dataset:
        raise ConfigError("empty dataset")
    state = _initial_state(cfg, init)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    schedule = make_schedule(cfg.schedule_steps, cfg.schedule_kind)
    opt = torch.optim.AdamW(state.model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    if cfg.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, cfg.total_steps))
    else:
        sched = None
    state.model.train()
    trace, skipped = [], 0
    dtype = state.dtype
    for _ in range(cfg.total_steps):
        batch = []
        attempts = 0
        while len(batch) < cfg.batch_size:
            attempts += 1
            if attempts > 50 * cfg.batch_size:
                raise SkipExample("could not assemble a batch: every sampled clip was skipped")
            clip = dataset[int(rng.integers(len(dataset)))]
            try:
                batch.append(make_example(clip, cfg, rng))
            except SkipExample as exc:
                skipped += 1
                logger.info("skipping example: %s", exc)
        z0, ref, controls = examples_to_tensors(batch, dtype)
        try:
            value = loss(state, z0, ref, controls, schedule, gen, weighting=cfg.loss_weighting)
        except DivergenceError as exc:
            if out_dir is not None:
                write_trace(Path(out_dir) / "loss_trace.csv", trace)
            raise DivergenceError(f"training diverged: {exc}", {**exc.diagnostics, "last_losses": [r["loss"] for r in trace[-5:]]}) from exc
        opt.zero_grad(set_to_none=True)
        value.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.grad_clip)
        lr = opt.param_groups[0]["lr"]
        opt.step()
        if sched is not None:
            sched.step()
        state.step += 1
        row = {"step": state.step, "loss": float(value.detach()), "lr": lr, "stage": cfg.stage}
        trace.append(row)
        if callback is not None:
            callback(row)
    state.meta = {**state.meta, "train_config": cfg.to_dict()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, out_dir / "checkpoint")
        write_trace(out_dir / "loss_trace.csv", trace)
    return TrainResult(state, trace, skipped)


# ------------------------------------------------------------------ inference

@dataclass
class InferenceResult:
    video: np.ndarray  # T x H x W x 3 in [0, 1]
    sketches: np.ndarray
    tracks: TrajectorySet
    point_maps: np.ndarray
    heatmaps: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)


def _as_state(checkpoint) -> ModelState:
    return load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint


def _train_cfg(state: ModelState) -> dict:
    return state.meta.get("train_config", {})


def _prepare_sketches(state: ModelState, sketches: np.ndarray) -> np.ndarray:
    sketches = np.asarray(sketches)
    if sketches.dtype != np.uint8:
        sketches = np.clip(np.round(sketches * 255 if sketches.max() <= 1.0 else sketches), 0, 255).astype(np.uint8)
    if _train_cfg(state).get("binarize", True):
        sketches = binarize(sketches)
    return sketches


def _sample_video(state, ref, sketches, point_maps, heatmaps, seed, sampler, steps, schedule_steps=None, schedule_kind=None):
    tc = _train_cfg(state)
    schedule = make_schedule(schedule_steps or tc.get("schedule_steps", 1000), schedule_kind or tc.get("schedule_kind", "cosine"))
    controls = control_tensors(sketches, point_maps, heatmaps, state.dtype)
    x = sample(state, reference_tensor(ref, state.dtype), controls, schedule, sampler, steps, seed)
    return to_video(x)[0]


def infer_dense(
    checkpoint,
    ref: ReferenceImage,
    sketches: np.ndarray,
    matcher: MatcherSpec = MatcherSpec(),
    seed: int = 0,
    *,
    registry: AnchorRegistry | None = None,
    track_backend: str = "interpolated",
    sampler: str = "deterministic",
    steps: int = 50,
) -> InferenceResult:
    """Colourise a full sketch sequence.

    Reference keypoints are matched to the first sketch, then tracked with
    ``track_backend``: ``oracle`` (registry), ``interpolated`` (match the last
    sketch and draw straight lines) or ``descriptor`` (match every sketch).
    """
    state = _as_state(checkpoint)
    if state.stage != "dense":
        raise ConfigError(f"infer_dense needs a dense-stage checkpoint, got {state.stage!r}")
    sketches = _prepare_sketches(state, sketches)
    T, H, W = sketches.shape
    warnings = []
    use_matching = _train_cfg(state).get("use_matching", True)
    start = match_reference(ref, sketches[0], registry, matcher, frame_index=0) if use_matching else MatchSet.empty()
    if use_matching and start.n == 0:
        warnings.append("no matches between reference and first sketch; point maps left empty")
        logger.warning(warnings[-1])
    if start.n == 0:
        tracks = TrajectorySet.empty(T)
    elif track_backend == "oracle":
        if registry is None:
            raise ConfigError("oracle tracking needs the anchor registry")
        tracks = registry_tracks(registry, start, T)
    elif track_backend == "interpolated":
        end = match_reference(ref, sketches[-1], registry, matcher, frame_index=T - 1)
        tracks = interpolate_trajectories(start, end, T)
    elif track_backend == "descriptor":
        tracks = track_by_matching(ref, sketches, start, matcher)
    else:
        raise ConfigError(f"unknown track backend {track_backend!r}")
    if tracks.n > DENSE_MAX_KEYPOINTS:
        tracks = sample_keypoints(tracks, DENSE_MAX_KEYPOINTS, "uniform", np.random.default_rng(seed))
    point_maps = encode_correspondence(tracks, H, W, DENSE_MAX_KEYPOINTS, use_matching)
    video = _sample_video(state, ref, sketches, point_maps, None, seed, sampler, steps)
    return InferenceResult(video, sketches, tracks, point_maps, None, warnings)


def sparse_conditions(
    ref: ReferenceImage,
    first: np.ndarray,
    last: np.ndarray,
    T: int,
    matcher: MatcherSpec,
    seed: int,
    registry: AnchorRegistry | None = None,
    sigma: float | None = None,
):
    """Sketch stack, trajectories, point maps and heatmaps for start/end-only conditioning."""
    H, W = first.shape
    start = match_reference(ref, first, registry, matcher, frame_index=0)
    end = match_reference(ref, last, registry, matcher, frame_index=T - 1)
    tracks = interpolate_trajectories(start, end, T)
    warnings = []
    if tracks.n == 0:
        warnings.append("no keypoints shared by start and end matches; correspondence channels left empty")
        logger.warning(warnings[-1])
    tracks = sample_keypoints(tracks, SPARSE_MAX_KEYPOINTS, "motion_weighted", np.random.default_rng(seed))
    point_maps = encode_correspondence(tracks, H, W, SPARSE_MAX_KEYPOINTS)
    heatmaps = build_heatmaps(tracks, sigma or default_sigma(H), H, W).astype(np.float32)
    return sparse_sketches(first, last, T), tracks, point_maps, heatmaps, warnings


def infer_sparse(
    checkpoint,
    ref: ReferenceImage,
    first_sketch: np.ndarray,
    last_sketch: np.ndarray,
    matcher: MatcherSpec = MatcherSpec(),
    seed: int = 0,
    *,
    T: int = 14,
    registry: AnchorRegistry | None = None,
    sampler: str = "deterministic",
    steps: int = 50,
) -> InferenceResult:
    """Colourise and in-between from the first and last sketches only."""
    state = _as_state(checkpoint)
    if state.stage != "sparse":
        raise ConfigError(f"infer_sparse needs a sparse-stage checkpoint, got {state.stage!r}")
    pair = _prepare_sketches(state, np.stack([first_sketch, last_sketch]))
    sigma = _train_cfg(state).get("sigma")
    sketches, tracks, point_maps, heatmaps, warnings = sparse_conditions(
        ref, pair[0], pair[1], T, matcher, seed, registry, sigma
    )
    video = _sample_video(state, ref, sketches, point_maps, heatmaps, seed, sampler, steps)
    return InferenceResult(video, sketches, tracks, point_maps, heatmaps, warnings)


# ------------------------------------------------------------------ ablations

ABLATION_SUITES = ("full", "no_matching", "no_binarize_aug")
ABLATION_FIELDS = {
    "full": {},
    "no_matching": {"use_matching": False},
    "no_binarize_aug": {"sketch_mode": "leaky", "binarize": False, "background_augment_p": 0.0},
}


def ablation_config(suite: str, base: TrainConfig) -> TrainConfig:
    """``base`` with exactly one component group switched off."""
    if suite not in ABLATION_FIELDS:
        raise ConfigError(f"unknown ablation suite {suite!r}")
    return replace(base, **ABLATION_FIELDS[suite])


def config_diff(a: TrainConfig, b: TrainConfig) -> dict:
    da, db = a.to_dict(), b.to_dict()
    return {k: (da[k], db[k]) for k in da if da[k] != db[k]}


def eval_sketches(clip: SyntheticClip, kind: str, T: int) -> np.ndarray:
    """``binary`` (binarised clean outlines) or ``leaky`` line art for the first T frames."""
    if kind == "binary":
        return binarize(np.stack([extract_lineart(f, "oracle") for f in clip.frames[:T]]))
    if kind == "leaky":
        return np.stack([extract_lineart(f, "leaky") for f in clip.frames[:T]])
    raise ConfigError(f"unknown evaluation sketch kind {kind!r}")


def evaluate_arm(
    state: ModelState,
    clips: Sequence[SyntheticClip],
    sketch_kind: str = "binary",
    seeds: Sequence[int] = (0, 1, 2),
    steps: int = 50,
    sampler: str = "deterministic",
) -> dict:
    """Region-colour error of dense inference (oracle matching) over clips x sampling seeds."""
    from .metrics import psnr, region_color_error

    T = _train_cfg(state).get("clip_length", clips[0].T)
    errors, psnrs = [], []
    for clip in clips:
        sk = eval_sketches(clip, sketch_kind, T)
        sub = _truncate(clip, T)
        for seed in seeds:
            res = infer_dense(state, clip.reference, sk, MatcherSpec("oracle"), seed,
                              registry=sub.registry, track_backend="oracle", sampler=sampler, steps=steps)
            errors.append(float(region_color_error(res.video, sub).mean()))
            psnrs.append(psnr(res.video, sub.frames, sub.fg_masks))
    return {
        "sketches": sketch_kind,
        "region_color_error": float(np.mean(errors)),
        "psnr": float(np.mean(psnrs)),
        "n_clips": len(clips),
        "seeds": list(seeds),
        "per_run_region_color_error": errors,
    }


def _truncate(clip: SyntheticClip, T: int) -> SyntheticClip:
    if clip.T == T:
        return clip
    reg = clip.registry
    return replace(
        clip,
        frames=clip.frames[:T],
        outlines=clip.outlines[:T],
        fg_masks=clip.fg_masks[:T],
        labels=clip.labels[:T],
        registry=AnchorRegistry(reg.names, reg.frames[:T], reg.frame_valid[:T], reg.reference, reg.reference_valid),
    )


def run_ablation(
    suites: Sequence[str],
    base: TrainConfig,
    train_clips: Sequence[SyntheticClip],
    eval_clips: Sequence[SyntheticClip],
    seeds: Sequence[int] = (0, 1, 2),
    sketch_kinds: Sequence[str] = ("binary",),
    steps: int = 50,
    out_dir=None,
    states: dict | None = None,
) -> dict:
    """Train one model per arm on the same clips and evaluate on ``eval_clips``.

    ``states`` may hold already-trained arms (name -> ModelState) to reuse.
    """
    report = {"base_config": base.to_dict(), "train_clip_seeds": [c.seed for c in train_clips], "arms": {}}
    states = dict(states or {})
    for suite in suites:
        cfg = ablation_config(suite, base)
        if suite not in states:
            arm_dir = None if out_dir is None else Path(out_dir) / suite
            states[suite] = train(train_clips, cfg, out_dir=arm_dir).state
        arm = {"config_diff": {k: list(v) for k, v in config_diff(base, cfg).items()}, "eval": {}}
        for kind in sketch_kinds:
            arm["eval"][kind] = evaluate_arm(states[suite], eval_clips, kind, seeds, steps)
        report["arms"][suite] = arm
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation_report.json").write_text(json.dumps(report, indent=1))
    report["_states"] = states
    return report
