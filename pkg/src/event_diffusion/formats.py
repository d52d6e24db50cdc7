"""On-disk formats.

EVT1   binary event streams: a 16-byte header (magic, geometry, threshold,
       reserved word) followed by packed 16-byte little-endian records.
CSV    plain-text events: one `# width,height,theta` header line, then
       `t,x,y,p` rows. Numeric text uses repr so floats round-trip.
TNS1   raw tensors: 24-byte header (magic, N, C, H, W, dtype code 0 = f32)
       followed by row-major float32 data.
Schedules dump to `tau,alpha,gamma,lambda` CSV. Frame sequences can also be
written as a numbered directory of PNGs (16-bit grayscale or 8-bit RGB) with
a `timestamps.csv` sidecar; PNG output quantizes, TNS1 is the exact path.
Diagnostics from guided sampling go to `tau,t,event_loss,anchor_loss,
total_loss` CSV.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .diffusion import NoiseSchedule
from .errors import InvalidInputError
from .events import EVENT_DTYPE, EventStream, FrameSequence, pack_events
from .guidance import DiagnosticRecord

EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = struct.Struct("<4sHHfI")

TNS1_MAGIC = b"TNS1"
_TNS1_HEADER = struct.Struct("<4s5I")
_TNS1_F32 = 0


def write_evt1(path, stream: EventStream) -> None:
    path = Path(path)
    header = _EVT1_HEADER.pack(
        EVT1_MAGIC, stream.width, stream.height, float(stream.threshold), 0
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(stream.events.tobytes())


def read_evt1(path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _EVT1_HEADER.size:
        raise InvalidInputError(f"{path}: truncated EVT1 header")
    magic, width, height, threshold, reserved = _EVT1_HEADER.unpack(
        raw[: _EVT1_HEADER.size]
    )
    if magic != EVT1_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if reserved != 0:
        raise InvalidInputError(f"{path}: reserved header word must be zero")
    body = raw[_EVT1_HEADER.size :]
    if len(body) % EVENT_DTYPE.itemsize:
        raise InvalidInputError(f"{path}: truncated event records")
    events = np.frombuffer(body, dtype=EVENT_DTYPE).copy()
    return EventStream(width, height, float(threshold), events)


def write_events_csv(path, stream: EventStream) -> None:
    lines = [f"# {stream.width},{stream.height},{float(stream.threshold)!r}"]
    ev = stream.events
    for i in range(ev.shape[0]):
        lines.append(f"{ev['t'][i]},{ev['x'][i]},{ev['y'][i]},{ev['p'][i]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_events_csv(path) -> EventStream:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("#"):
        raise InvalidInputError(f"{path}: missing `# width,height,theta` header")
    try:
        w_s, h_s, th_s = text[0].lstrip("#").strip().split(",")
        width, height, theta = int(w_s), int(h_s), float(th_s)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed header line") from exc
    rows = [line.split(",") for line in text[1:] if line.strip()]
    if rows:
        try:
            cols = np.asarray([[int(v) for v in r] for r in rows], dtype=np.int64)
        except ValueError as exc:
            raise InvalidInputError(f"{path}: malformed event row") from exc
        if cols.shape[1] != 4:
            raise InvalidInputError(f"{path}: expected t,x,y,p rows")
        events = pack_events(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])
    else:
        events = np.zeros(0, dtype=EVENT_DTYPE)
    return EventStream(width, height, theta, events)


def write_tns1(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim != 4:
        raise InvalidInputError(f"tensor must be (N, C, H, W), got {arr.shape}")
    n, c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_TNS1_HEADER.pack(TNS1_MAGIC, n, c, h, w, _TNS1_F32))
        f.write(arr.tobytes())


def read_tns1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _TNS1_HEADER.size:
        raise InvalidInputError(f"{path}: truncated TNS1 header")
    magic, n, c, h, w, code = _TNS1_HEADER.unpack(raw[: _TNS1_HEADER.size])
    if magic != TNS1_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if code != _TNS1_F32:
        raise InvalidInputError(f"{path}: unknown dtype code {code}")
    body = raw[_TNS1_HEADER.size :]
    expected = n * c * h * w * 4
    if len(body) != expected:
        raise InvalidInputError(
            f"{path}: payload is {len(body)} bytes, header implies {expected}"
        )
    return np.frombuffer(body, dtype="<f4").reshape(n, c, h, w).copy()


def write_schedule_csv(path, schedule: NoiseSchedule) -> None:
    lines = ["tau,alpha,gamma,lambda"]
    for i in range(schedule.T):
        lines.append(
            f"{i + 1},{float(schedule.alpha[i])!r},"
            f"{float(schedule.gamma[i])!r},{float(schedule.lam[i])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_schedule_csv(path) -> NoiseSchedule:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "tau,alpha,gamma,lambda":
        raise InvalidInputError(f"{path}: missing schedule header row")
    alpha, gamma, lam = [], [], []
    for i, line in enumerate(text[1:], start=1):
        parts = line.split(",")
        if len(parts) != 4 or int(parts[0]) != i:
            raise InvalidInputError(f"{path}: bad schedule row {i}")
        alpha.append(float(parts[1]))
        gamma.append(float(parts[2]))
        lam.append(float(parts[3]))
    return NoiseSchedule(
        T=len(alpha), alpha=np.asarray(alpha), gamma=np.asarray(gamma), lam=np.asarray(lam)
    )


def write_diagnostics_csv(path, records: Iterable[DiagnosticRecord]) -> None:
    lines = ["tau,t,event_loss,anchor_loss,total_loss"]
    for r in records:
        lines.append(
            f"{r.tau},{r.frame},{float(r.event_loss)!r},"
            f"{float(r.anchor_loss)!r},{float(r.total_loss)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_diagnostics_csv(path) -> list[dict]:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "tau,t,event_loss,anchor_loss,total_loss":
        raise InvalidInputError(f"{path}: missing diagnostics header row")
    out = []
    for line in text[1:]:
        tau, t, ev, anc, tot = line.split(",")
        out.append(
            {
                "tau": int(tau),
                "t": int(t),
                "event_loss": float(ev),
                "anchor_loss": float(anc),
                "total_loss": float(tot),
            }
        )
    return out


def write_timestamps_csv(path, timestamps) -> None:
    ts = np.asarray(timestamps, dtype=np.uint64)
    lines = ["frame,t"] + [f"{i},{int(t)}" for i, t in enumerate(ts)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_timestamps_csv(path) -> np.ndarray:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "frame,t":
        raise InvalidInputError(f"{path}: missing `frame,t` header row")
    return np.asarray([int(line.split(",")[1]) for line in text[1:]], dtype=np.uint64)


def write_frames_dir(dirpath, frames: FrameSequence) -> None:
    """Numbered PNGs plus a timestamps.csv sidecar. Intensities are clipped
    to [0, 1] and quantized (16-bit gray for C == 1, 8-bit RGB for C == 3)."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(frames.data, 0.0, 1.0)
    for i in range(frames.n_frames):
        name = dirpath / f"frame_{i:05d}.png"
        if frames.channels == 1:
            img = Image.fromarray(
                np.round(clipped[i, 0] * 65535.0).astype(np.uint16)
            )
        else:
            rgb = np.moveaxis(np.round(clipped[i] * 255.0).astype(np.uint8), 0, -1)
            img = Image.fromarray(rgb, mode="RGB")
        img.save(name)
    write_timestamps_csv(dirpath / "timestamps.csv", frames.timestamps)


def read_frames_dir(dirpath, log_floor: float = 1e-4) -> FrameSequence:
    dirpath = Path(dirpath)
    paths = sorted(dirpath.glob("frame_*.png"))
    if not paths:
        raise InvalidInputError(f"{dirpath}: no frame_*.png files")
    ts_file = dirpath / "timestamps.csv"
    if not ts_file.exists():
        raise InvalidInputError(f"{dirpath}: missing timestamps.csv sidecar")
    timestamps = read_timestamps_csv(ts_file)
    if timestamps.shape[0] != len(paths):
        raise InvalidInputError(f"{dirpath}: timestamp count != frame count")
    planes = []
    for p in paths:
        arr = np.asarray(Image.open(p))
        if arr.ndim == 2:
            scale = 65535.0 if arr.dtype.itemsize > 1 else 255.0
            planes.append(arr.astype(np.float64)[None, :, :] / scale)
        elif arr.ndim == 3 and arr.shape[2] == 3:
            planes.append(np.moveaxis(arr.astype(np.float64) / 255.0, -1, 0))
        else:
            raise InvalidInputError(f"{p}: unsupported image layout {arr.shape}")
    data = np.stack(planes)
    return FrameSequence(data=data, timestamps=timestamps, log_floor=log_floor)


def write_edges_csv(path, edges: Sequence[int]) -> None:
    lines = ["edge"] + [str(int(e)) for e in edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edges_csv(path) -> np.ndarray:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "edge":
        raise InvalidInputError(f"{path}: missing edge header row")
    return np.asarray([int(line) for line in text[1:]], dtype=np.int64)
