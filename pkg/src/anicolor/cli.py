"""Command-line entry point: ``anicolor synth | preprocess | train | infer | eval | ablate``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error or divergence.
Every command writes ``resolved_config.json`` into its output directory.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import pipeline
from .conditioning import ConditioningError, save_matches, save_point_maps, PointMapSequence
from .correspondence import MatcherSpec, MatchingError
from .diffusion import CheckpointError, DivergenceError, load_checkpoint
from .metrics import MetricError, MetricReport, evaluate_clip
from .pipeline import ConfigError, SkipExample, TrainConfig
from .synthgen import ClipFormatError, GenConfig, GenerationError, generate_clip, read_clip, to_uint8, write_clip

OUTPUT_ROOT_ENV = "ANICOLOR_OUTPUT_ROOT"

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class CliFailure(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(code: int, kind: str, message: str):
    raise CliFailure(code, kind, message)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: dict, overrides, allowed: dict) -> dict:
    """Apply ``a.b=value`` overrides; keys must exist in ``allowed`` (a nested dict of defaults)."""
    config = json.loads(json.dumps(config))
    for item in overrides:
        if "=" not in item:
            _fail(EXIT_CONFIG, "config", f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node, schema = config, allowed
        for part in parts[:-1]:
            if not isinstance(schema, dict) or part not in schema or not isinstance(schema[part], dict):
                _fail(EXIT_CONFIG, "config", f"unknown config key {key!r}")
            schema = schema[part]
            node = node.setdefault(part, {})
        if parts[-1] not in schema:
            _fail(EXIT_CONFIG, "config", f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return config


def _schema(dc) -> dict:
    out = {}
    for f in fields(dc):
        value = getattr(dc, f.name)
        out[f.name] = _schema(value) if is_dataclass(value) else value
    return out


def _check_keys(config: dict, schema: dict, prefix: str = "") -> None:
    for key, value in config.items():
        if key not in schema:
            _fail(EXIT_CONFIG, "config", f"unknown config key {prefix + key!r}")
        if isinstance(schema[key], dict) and isinstance(value, dict):
            _check_keys(value, schema[key], prefix + key + ".")


def load_config(path, overrides, default) -> dict:
    schema = json.loads(json.dumps(_schema(default)))
    config: dict = {}
    if path:
        try:
            config = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_CONFIG, "config", f"cannot read config {path}: {exc}")
        if not isinstance(config, dict):
            _fail(EXIT_CONFIG, "config", "config file must hold a JSON object")
        _check_keys(config, schema)
    return apply_overrides(config, overrides, schema)


def _out_dir(out, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo(out: Path, command: str, seed, config: dict, extra: dict | None = None) -> None:
    doc = {"command": command, "seed": seed, "config": config, **(extra or {})}
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=1, default=str))


def _gen_config(cfg: dict) -> GenConfig:
    try:
        return GenConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        _fail(EXIT_CONFIG, "config", str(exc))


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        _fail(EXIT_CONFIG, "config", str(exc))


def _clip_dirs(path) -> list[Path]:
    path = Path(path)
    if not path.is_dir():
        _fail(EXIT_DATA, "data", f"{path} is not a directory")
    if (path / "meta.json").exists():
        return [path]
    dirs = sorted(p for p in path.iterdir() if p.is_dir() and (p / "meta.json").exists())
    if not dirs:
        _fail(EXIT_DATA, "data", f"no clip directories in {path}")
    return dirs


def _save_video(out: Path, video: np.ndarray, gif: bool) -> None:
    for t, frame in enumerate(video):
        Image.fromarray(to_uint8(frame)).save(out / f"frame_{t:04d}.png")
    if gif:
        frames = [Image.fromarray(to_uint8(f)) for f in video]
        frames[0].save(out / "preview.gif", save_all=True, append_images=frames[1:], duration=120, loop=0)


def _read_frames(path: Path) -> np.ndarray:
    files = sorted(path.glob("frame_*.png"))
    if not files:
        _fail(EXIT_DATA, "data", f"no frame files in {path}")
    out = []
    for f in files:
        with Image.open(f) as im:
            out.append(np.array(im.convert("RGB")))
    return np.stack(out).astype(np.float32) / np.float32(255.0)


@click.group()
def main():
    """Reference-based line-art video colourisation with correspondence guidance."""


def _run(fn):
    """Run a command body, mapping failures to an exit code and a JSON error record."""
    try:
        fn()
    except CliFailure as exc:
        _report(exc.code, exc.kind, str(exc))
    except (ConfigError, ConditioningError, MatchingError, GenerationError) as exc:
        _report(EXIT_CONFIG, "config", str(exc))
    except (ClipFormatError, CheckpointError, FileNotFoundError, MetricError, SkipExample) as exc:
        _report(EXIT_DATA, "data", str(exc))
    except DivergenceError as exc:
        _report(EXIT_RUNTIME, "divergence", str(exc), exc.diagnostics)
    except (RuntimeError, ValueError) as exc:
        _report(EXIT_RUNTIME, "runtime", str(exc))


def _report(code: int, kind: str, message: str, details: dict | None = None):
    record = {"error": kind, "message": message, "exit_code": code}
    if details:
        record["details"] = details
    click.echo(json.dumps(record, default=str), err=True)
    sys.exit(code)


common_config = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file."),
    click.option("--set", "overrides", multiple=True, help="Dotted-key override, e.g. model.base_channels=16."),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", type=click.Path(), default=None, help=f"Output directory (default ${OUTPUT_ROOT_ENV}/<command>)."),
]


def with_common(f):
    for opt in reversed(common_config):
        f = opt(f)
    return f


@main.command("synth")
@click.option("--n-clips", type=int, default=1, show_default=True)
@with_common
def cmd_synth(n_clips, config_path, overrides, seed, out):
    """Generate synthetic clips into OUT/clip_0000, ..."""

    def body():
        cfg = load_config(config_path, overrides, GenConfig())
        gen = _gen_config(cfg)
        out_dir = _out_dir(out, "synth")
        for i in range(n_clips):
            write_clip(generate_clip(gen, seed * 100_003 + i), out_dir / f"clip_{i:04d}")
        _echo(out_dir, "synth", seed, asdict(gen), {"n_clips": n_clips})
        click.echo(str(out_dir))

    _run(body)


@main.command("preprocess")
@click.option("--clips", "clips_dir", type=click.Path(), required=True)
@click.option("--stage", type=click.Choice(["dense", "sparse"]), default="dense", show_default=True)
@with_common
def cmd_preprocess(clips_dir, stage, config_path, overrides, seed, out):
    """Serialise conditioned training examples (one .npz per clip)."""

    def body():
        cfg = load_config(config_path, overrides, TrainConfig())
        cfg["stage"] = stage
        cfg["seed"] = seed
        tc = _train_config(cfg)
        dirs = _clip_dirs(clips_dir)
        out_dir = _out_dir(out, "preprocess")
        rng = np.random.default_rng(seed)
        written, skipped = 0, []
        for d in dirs:
            clip = read_clip(d)
            try:
                ex = pipeline.make_example(clip, tc, rng)
            except SkipExample as exc:
                skipped.append(str(exc))
                continue
            ex.save(out_dir / f"{d.name}.npz")
            written += 1
        _echo(out_dir, "preprocess", seed, tc.to_dict(), {"written": written, "skipped": skipped})
        click.echo(str(out_dir))

    _run(body)


@main.command("train")
@click.option("--stage", type=click.Choice(["dense", "sparse"]), default="dense", show_default=True)
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--init", type=click.Path(), default=None, help="Checkpoint directory to start from.")
@with_common
def cmd_train(stage, data_dir, init, config_path, overrides, seed, out):
    """Train a checkpoint; writes OUT/checkpoint and OUT/loss_trace.csv."""

    def body():
        cfg = load_config(config_path, overrides, TrainConfig())
        cfg["stage"] = stage
        cfg["seed"] = seed
        tc = _train_config(cfg)
        if stage == "sparse" and init is None:
            _fail(EXIT_CONFIG, "config", "sparse-stage training needs --init with a dense-stage checkpoint")
        init_state = load_checkpoint(init) if init else None
        clips = [read_clip(d) for d in _clip_dirs(data_dir)]
        out_dir = _out_dir(out, "train")
        _echo(out_dir, "train", seed, tc.to_dict(), {"data": str(data_dir), "init": init})
        result = pipeline.train(clips, tc, init=init_state, out_dir=out_dir)
        click.echo(json.dumps({"final_loss": result.trace[-1]["loss"] if result.trace else None, "out": str(out_dir)}))

    _run(body)


@main.command("infer")
@click.option("--mode", type=click.Choice(["dense", "sparse"]), default="dense", show_default=True)
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--inputs", type=click.Path(), required=True, help="Clip directory with reference.png and outline_*.png.")
@click.option("--matcher", type=click.Choice(["oracle", "descriptor"]), default="oracle", show_default=True)
@click.option("--track-backend", type=click.Choice(["oracle", "interpolated", "descriptor"]), default="interpolated", show_default=True)
@click.option("--sampler", type=click.Choice(["deterministic", "ancestral"]), default="deterministic", show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--gif/--no-gif", default=False, help="Also write an animated preview.")
@with_common
def cmd_infer(mode, checkpoint, inputs, matcher, track_backend, sampler, steps, gif, config_path, overrides, seed, out):
    """Colourise the sketches of a clip directory; frames go to OUT/frame_*.png."""

    def body():
        state = load_checkpoint(checkpoint)
        clip = read_clip(inputs)
        T = int(state.meta.get("train_config", {}).get("clip_length", clip.T))
        T = min(T, clip.T)
        sub = pipeline._truncate(clip, T)
        spec = MatcherSpec(matcher)
        registry = sub.registry if matcher == "oracle" or track_backend == "oracle" else None
        if mode == "dense":
            res = pipeline.infer_dense(state, clip.reference, sub.outlines, spec, seed, registry=registry,
                                       track_backend=track_backend, sampler=sampler, steps=steps)
        else:
            res = pipeline.infer_sparse(state, clip.reference, sub.outlines[0], sub.outlines[-1], spec, seed,
                                        T=T, registry=registry, sampler=sampler, steps=steps)
        out_dir = _out_dir(out, "infer")
        _save_video(out_dir, res.video, gif)
        cond = out_dir / "conditions"
        cond.mkdir(exist_ok=True)
        for t, sk in enumerate(res.sketches):
            Image.fromarray(sk).save(cond / f"sketch_{t:04d}.png")
        labels = np.rint(res.point_maps * (5 if mode == "sparse" else 50)).astype(np.int32)
        save_point_maps(cond / "point_maps", PointMapSequence(labels))
        save_matches(cond / "matches.json", res.tracks.matches_at(0) if res.tracks.n else pipeline.MatchSet.empty(),
                     res.tracks)
        if res.heatmaps is not None:
            np.save(cond / "heatmaps.npy", res.heatmaps)
        _echo(out_dir, "infer", seed, {"mode": mode, "checkpoint": str(checkpoint), "inputs": str(inputs),
                                       "matcher": matcher, "track_backend": track_backend,
                                       "sampler": sampler, "steps": steps}, {"warnings": res.warnings})
        click.echo(str(out_dir))

    _run(body)


@main.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(), required=True)
@click.option("--gt", "gt_dir", type=click.Path(), required=True)
@click.option("--masked/--no-masked", default=True, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_eval(pred_dir, gt_dir, masked, out):
    """Compare predicted frame directories with ground-truth clips; prints a MetricReport."""

    def body():
        gts = _clip_dirs(gt_dir)
        pred_root = Path(pred_dir)
        rows = []
        for g in gts:
            clip = read_clip(g)
            p = pred_root if len(gts) == 1 and list(pred_root.glob("frame_*.png")) else pred_root / g.name
            video = _read_frames(p)
            if len(video) > clip.T:
                video = video[: clip.T]
            sub = pipeline._truncate(clip, len(video))
            rows.append(evaluate_clip(video, sub, masked, g.name))
        report = MetricReport(rows, masked, (rows and (sub.H, sub.W)) or (0, 0))
        text = report.to_json()
        out_dir = _out_dir(out, "eval") if out or os.environ.get(OUTPUT_ROOT_ENV) else None
        if out_dir is not None:
            (out_dir / "report.json").write_text(text)
            (out_dir / "report.csv").write_text(report.to_csv())
            _echo(out_dir, "eval", None, {"pred": str(pred_dir), "gt": str(gt_dir), "masked": masked})
        click.echo(text)

    _run(body)


@main.command("ablate")
@click.option("--suite", "suites", multiple=True, type=click.Choice(list(pipeline.ABLATION_SUITES)),
              default=pipeline.ABLATION_SUITES, show_default=True)
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--eval-data", "eval_dir", type=click.Path(), required=True)
@click.option("--eval-seeds", type=int, default=3, show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@with_common
def cmd_ablate(suites, data_dir, eval_dir, eval_seeds, steps, config_path, overrides, seed, out):
    """Train each ablation arm on the same clips and compare them on held-out clips."""

    def body():
        cfg = load_config(config_path, overrides, TrainConfig())
        cfg["seed"] = seed
        tc = _train_config(cfg)
        train_clips = [read_clip(d) for d in _clip_dirs(data_dir)]
        eval_clips = [read_clip(d) for d in _clip_dirs(eval_dir)]
        out_dir = _out_dir(out, "ablate")
        _echo(out_dir, "ablate", seed, tc.to_dict(), {"suites": list(suites)})
        report = pipeline.run_ablation(list(suites), tc, train_clips, eval_clips, seeds=tuple(range(eval_seeds)),
                                       sketch_kinds=("binary", "leaky"), steps=steps, out_dir=out_dir)
        report.pop("_states", None)
        click.echo(json.dumps({k: {kind: v["region_color_error"] for kind, v in arm["eval"].items()}
                               for k, arm in report["arms"].items()}))

    _run(body)


if __name__ == "__main__":
    main()
