"""Pipeline stages behind the CLI subcommands.

Each stage reads its inputs from the paths in the run config, writes its
artifacts, and returns a machine-readable summary dict (also written as JSON
when paths.summary is set). Relative paths resolve against the config file's
directory. Summary metrics are always computed from the artifacts as written
to disk, so re-running `eval` on the same files reproduces them exactly.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, build_mixture
from .diffusion import IdentityCodec, build_schedule
from .errors import InvalidInputError
from .events import (
    EventStack,
    EventStream,
    FrameSequence,
    augment_events,
    integrate_stack,
    reconstruct_direct,
    simulate_events,
)
from .formats import (
    read_diagnostics_csv,
    read_edges_csv,
    read_events_csv,
    read_evt1,
    read_frames_dir,
    read_timestamps_csv,
    read_tns1,
    write_edges_csv,
    write_events_csv,
    write_evt1,
    write_frames_dir,
    write_timestamps_csv,
    write_tns1,
)
from .gmm import GmmDenoiser
from .guidance import GuidanceConfig, egs_sample
from .metrics import consistency_rate, psnr


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require(value: str | None, key: str) -> str:
    if value is None:
        raise InvalidInputError(f"config paths.{key} is required for this stage")
    return value


def read_events_any(path: Path) -> EventStream:
    if str(path).endswith(".csv"):
        return read_events_csv(path)
    return read_evt1(path)


def write_events_any(path: Path, stream: EventStream) -> None:
    if str(path).endswith(".csv"):
        write_events_csv(path, stream)
    else:
        write_evt1(path, stream)


def read_frames_artifact(path: Path, log_floor: float) -> FrameSequence:
    """Frames from a PNG directory or a TNS1 tensor with its timestamp
    sidecar (<file>.timestamps.csv)."""
    if path.is_dir():
        return read_frames_dir(path, log_floor)
    data = read_tns1(path).astype(np.float64)
    ts = read_timestamps_csv(Path(str(path) + ".timestamps.csv"))
    return FrameSequence(data=data, timestamps=ts, log_floor=log_floor)


def write_frames_artifact(path: Path, frames: FrameSequence) -> None:
    if str(path).endswith(".tns1"):
        write_tns1(path, frames.data)
        write_timestamps_csv(Path(str(path) + ".timestamps.csv"), frames.timestamps)
    else:
        write_frames_dir(path, frames)


def _edges_path(stacks_path: Path) -> Path:
    return Path(str(stacks_path) + ".edges.csv")


def load_stacks(stacks_path: Path) -> tuple[list[EventStack], np.ndarray]:
    """Stacks as stored (one per window) plus a zero index-padding stack in
    front, ready for guided sampling; also returns the window edges."""
    vals = read_tns1(stacks_path).astype(np.float64)
    edges = read_edges_csv(_edges_path(stacks_path))
    if vals.shape[0] != edges.shape[0] - 1:
        raise InvalidInputError(
            f"{stacks_path}: {vals.shape[0]} stacks but {edges.shape[0]} edges"
        )
    if vals.shape[1] != 1:
        raise InvalidInputError(f"{stacks_path}: stacks must be achromatic")
    h, w = vals.shape[2], vals.shape[3]
    pad = EventStack(int(edges[0]) - 1, int(edges[0]), np.zeros((h, w)))
    real = [
        EventStack(int(edges[i]), int(edges[i + 1]), vals[i, 0])
        for i in range(vals.shape[0])
    ]
    return [pad] + real, edges


def _write_summary(cfg: RunConfig, base: Path, summary: dict) -> None:
    if cfg.paths.summary is not None:
        out = _resolve(base, cfg.paths.summary)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run_simulate(cfg: RunConfig, base: Path) -> dict:
    t0 = time.perf_counter()
    frames = read_frames_artifact(
        _resolve(base, _require(cfg.paths.video, "video")), cfg.simulator.log_floor
    )
    stream = simulate_events(frames, cfg.simulator.theta, cfg.seed)
    out = _resolve(base, _require(cfg.paths.events, "events"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_any(out, stream)
    summary = {
        "stage": "simulate",
        "n_events": len(stream),
        "width": stream.width,
        "height": stream.height,
        "theta": cfg.simulator.theta,
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary


def run_augment(cfg: RunConfig, base: Path) -> dict:
    t0 = time.perf_counter()
    stream = read_events_any(_resolve(base, _require(cfg.paths.events, "events")))
    out_stream = augment_events(
        stream,
        cfg.augmentation.hot_pixel_rate,
        cfg.augmentation.drop_rate,
        cfg.seed,
        cfg.augmentation.hot_rate_hz,
    )
    out = _resolve(base, _require(cfg.paths.events_out, "events_out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_any(out, out_stream)
    summary = {
        "stage": "augment",
        "n_events_in": len(stream),
        "n_events_out": len(out_stream),
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary


def run_stack(cfg: RunConfig, base: Path) -> dict:
    t0 = time.perf_counter()
    stream = read_events_any(_resolve(base, _require(cfg.paths.events, "events")))
    if cfg.paths.video is not None:
        video = read_frames_artifact(
            _resolve(base, cfg.paths.video), cfg.simulator.log_floor
        )
        edges = video.timestamps.astype(np.int64)
    else:
        if len(stream) == 0:
            raise InvalidInputError(
                "cannot derive windows from an empty stream; give paths.video"
            )
        t = stream.events["t"].astype(np.int64)
        n_windows = cfg.guidance.n_frames - 1
        edges = np.unique(
            np.rint(np.linspace(t.min(), t.max() + 1, n_windows + 1)).astype(np.int64)
        )
        if edges.shape[0] != n_windows + 1:
            raise InvalidInputError("stream span too short for the requested windows")
    stacks = integrate_stack(stream, edges)
    out = _resolve(base, _require(cfg.paths.stacks, "stacks"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tns1(out, np.stack([s.values for s in stacks])[:, None, :, :])
    write_edges_csv(_edges_path(out), edges)
    summary = {
        "stage": "stack",
        "n_windows": len(stacks),
        "total_count": float(sum(np.abs(s.values).sum() for s in stacks)),
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary


def run_reconstruct(cfg: RunConfig, base: Path) -> dict:
    t0 = time.perf_counter()
    video = read_frames_artifact(
        _resolve(base, _require(cfg.paths.video, "video")), cfg.simulator.log_floor
    )
    stacks_all, edges = load_stacks(
        _resolve(base, _require(cfg.paths.stacks, "stacks"))
    )
    offset_log = video.log_luminance()[0]
    logs = reconstruct_direct(offset_log, stacks_all[1:], cfg.simulator.theta)
    data = np.exp(np.stack(logs))[:, None, :, :]
    frames = FrameSequence(
        data=data, timestamps=edges[1:], log_floor=cfg.simulator.log_floor
    )
    out = _resolve(base, _require(cfg.paths.frames, "frames"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_frames_artifact(out, frames)
    summary = {
        "stage": "reconstruct",
        "n_frames": frames.n_frames,
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary


def _metrics_from_artifacts(
    cfg: RunConfig, base: Path, frames_path: Path, stacks_all
) -> dict:
    frames = read_frames_artifact(frames_path, cfg.simulator.log_floor)
    out = {
        "consistency_rate": consistency_rate(frames, stacks_all, cfg.simulator.theta)
    }
    if cfg.paths.reference is not None:
        ref = read_frames_artifact(
            _resolve(base, cfg.paths.reference), cfg.simulator.log_floor
        )
        out["psnr_db"] = [float(v) for v in psnr(frames, ref)]
    return out


def run_sample(cfg: RunConfig, base: Path, unguided: bool = False) -> dict:
    t0 = time.perf_counter()
    stacks_all, _edges = load_stacks(
        _resolve(base, _require(cfg.paths.stacks, "stacks"))
    )
    g = cfg.guidance
    gcfg = GuidanceConfig(
        theta=cfg.simulator.theta,
        eta=g.eta,
        inner_steps=g.inner_steps,
        ddim_steps=g.ddim_steps,
        n_frames=g.n_frames,
        guidance_scale=g.guidance_scale,
        seed=cfg.seed,
        log_floor=cfg.simulator.log_floor,
        channels=g.channels,
    )
    if len(stacks_all) != gcfg.n_frames:
        raise InvalidInputError(
            f"stacks file implies {len(stacks_all)} frames but guidance.n_frames "
            f"is {gcfg.n_frames}"
        )
    schedule = build_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    mixture = build_mixture(cfg.mixture, base)
    h, w = stacks_all[0].values.shape
    if mixture.dim != gcfg.channels * h * w:
        raise InvalidInputError(
            f"mixture dim {mixture.dim} != channels*H*W = {gcfg.channels * h * w}"
        )
    denoiser = GmmDenoiser(mixture, schedule)
    records: list = []
    frames = egs_sample(
        denoiser,
        IdentityCodec(),
        stacks_all,
        gcfg,
        schedule,
        unguided=unguided,
        collector=records.append,
    )
    sample_s = time.perf_counter() - t0
    out = _resolve(base, _require(cfg.paths.frames, "frames"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_frames_artifact(out, frames)
    if cfg.paths.diagnostics is not None:
        from .formats import write_diagnostics_csv

        diag = _resolve(base, cfg.paths.diagnostics)
        diag.parent.mkdir(parents=True, exist_ok=True)
        write_diagnostics_csv(diag, records)
    summary = {
        "stage": "sample_unguided" if unguided else "sample",
        "n_frames": frames.n_frames,
        **_metrics_from_artifacts(cfg, base, out, stacks_all),
        "wall_clock_s": time.perf_counter() - t0,
        "sample_wall_clock_s": sample_s,
    }
    _write_summary(cfg, base, summary)
    return summary


def run_eval(cfg: RunConfig, base: Path) -> dict:
    t0 = time.perf_counter()
    stacks_all, _edges = load_stacks(
        _resolve(base, _require(cfg.paths.stacks, "stacks"))
    )
    frames_path = _resolve(base, _require(cfg.paths.frames, "frames"))
    summary = {
        "stage": "eval",
        **_metrics_from_artifacts(cfg, base, frames_path, stacks_all),
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary


def run_plot(cfg: RunConfig, base: Path) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t0 = time.perf_counter()
    plot_dir = _resolve(base, _require(cfg.paths.plot_dir, "plot_dir"))
    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []

    if cfg.paths.diagnostics is not None:
        rows = read_diagnostics_csv(_resolve(base, cfg.paths.diagnostics))
        if rows:
            taus = sorted({r["tau"] for r in rows}, reverse=True)
            series = {"event_loss": [], "anchor_loss": [], "total_loss": []}
            for tau in taus:
                at = [r for r in rows if r["tau"] == tau]
                for key in series:
                    series[key].append(float(np.mean([r[key] for r in at])))
            fig, ax = plt.subplots(figsize=(7, 4))
            for key, vals in series.items():
                ax.plot(taus, vals, marker="o", markersize=3, label=key)
            ax.set_xlabel("diffusion time")
            ax.set_ylabel("loss (mean over frames)")
            ax.invert_xaxis()
            ax.legend()
            fig.tight_layout()
            loss_path = plot_dir / "losses.png"
            fig.savefig(loss_path, dpi=120)
            plt.close(fig)
            written.append(str(loss_path))

    if cfg.paths.frames is not None:
        frames = read_frames_artifact(
            _resolve(base, cfg.paths.frames), cfg.simulator.log_floor
        )
        lum = np.clip(frames.luminance(), 0.0, 1.0)
        strip = np.concatenate(list(lum), axis=1)
        fig, ax = plt.subplots(figsize=(frames.n_frames * 1.2, 1.4))
        ax.imshow(strip, cmap="gray", vmin=0.0, vmax=1.0)
        ax.set_axis_off()
        fig.tight_layout(pad=0.1)
        strip_path = plot_dir / "frames.png"
        fig.savefig(strip_path, dpi=120)
        plt.close(fig)
        written.append(str(strip_path))

    if not written:
        raise InvalidInputError(
            "plot needs paths.diagnostics and/or paths.frames to be set"
        )
    summary = {
        "stage": "plot",
        "files": written,
        "wall_clock_s": time.perf_counter() - t0,
    }
    _write_summary(cfg, base, summary)
    return summary
