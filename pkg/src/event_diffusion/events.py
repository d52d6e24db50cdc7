"""Event-camera model: simulation, integration, direct reconstruction,
and sensor-noise augmentation.

An event camera emits a signed record (t, x, y, polarity) whenever the log
intensity at a pixel moves by more than a contrast threshold ``theta`` away
from a per-pixel reference level. Integrating polarities over a time window
gives an increment image whose ``theta``-scaled values approximate the log
brightness change across that window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .rng import substream

# Record layout shared byte-for-byte with the EVT1 file format: 16-byte
# little-endian records with 3 zeroed pad bytes. Keeping the in-memory and
# on-disk layouts identical makes serialization a plain buffer copy.
EVENT_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)

# Rec. 601 luma weights, applied to linear intensity before the log.
LUMINANCE_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_LOG_FLOOR = 1e-4


class Event(NamedTuple):
    """A single brightness-change record."""

    t: int
    x: int
    y: int
    polarity: int


def pack_events(t, x, y, polarity) -> np.ndarray:
    """Build a structured event array (padding bytes zeroed) from columns."""
    t = np.asarray(t, dtype=np.uint64)
    out = np.zeros(t.shape[0], dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = np.asarray(x, dtype=np.uint16)
    out["y"] = np.asarray(y, dtype=np.uint16)
    out["p"] = np.asarray(polarity, dtype=np.int8)
    return out


def sort_events(events: np.ndarray) -> np.ndarray:
    """Sort records by t, breaking ties by (y, x, polarity)."""
    order = np.lexsort((events["p"], events["x"], events["y"], events["t"]))
    return events[order]


@dataclass(frozen=True)
class FrameSequence:
    """N frames of linear intensity with strictly increasing timestamps.

    data:       (N, C, H, W) float array, C in {1, 3}; nominally in (0, 1]
                but intermediate sampler outputs may leave that range, so
                only finiteness is enforced here. Log-domain accessors clamp
                at ``log_floor`` first, which keeps every log view finite.
    timestamps: (N,) microsecond values, strictly increasing.
    """

    data: np.ndarray
    timestamps: np.ndarray
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.uint64)
        if data.ndim != 4:
            raise InvalidInputError(f"frame data must be (N, C, H, W), got shape {data.shape}")
        if data.shape[1] not in (1, 3):
            raise InvalidInputError(f"channels must be 1 or 3, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("frame data contains non-finite values")
        if ts.ndim != 1 or ts.shape[0] != data.shape[0]:
            raise InvalidInputError("timestamps must be one value per frame")
        if ts.shape[0] > 1 and not np.all(np.diff(ts.astype(np.int64)) > 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        if not (self.log_floor > 0):
            raise InvalidParameterError("log_floor must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def luminance(self) -> np.ndarray:
        """(N, H, W) linear-intensity luminance (identity for C == 1)."""
        if self.channels == 1:
            return self.data[:, 0]
        w = np.asarray(LUMINANCE_WEIGHTS)
        return np.tensordot(w, self.data, axes=([0], [1]))

    def log_luminance(self) -> np.ndarray:
        """(N, H, W) log of the clamped luminance."""
        return np.log(np.maximum(self.luminance(), self.log_floor))

    def log_data(self) -> np.ndarray:
        """(N, C, H, W) log of the clamped per-channel intensity."""
        return np.log(np.maximum(self.data, self.log_floor))


@dataclass(frozen=True)
class EventStream:
    """A sorted collection of events over a fixed sensor geometry."""

    width: int
    height: int
    threshold: float
    events: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=EVENT_DTYPE))

    def __post_init__(self):
        if not (self.threshold > 0):
            raise InvalidParameterError("threshold must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("sensor geometry must be positive")
        ev = np.asarray(self.events)
        if ev.dtype.names != EVENT_DTYPE.names:
            raise InvalidInputError("events must use the packed event dtype")
        # always repack field by field: structured-array concatenate and
        # friends leave padding bytes uninitialized, which would break
        # byte-level determinism of anything serialized from this stream
        ev = pack_events(ev["t"], ev["x"], ev["y"], ev["p"])
        if ev.size:
            if ev["x"].max() >= self.width or ev["y"].max() >= self.height:
                raise InvalidInputError("event coordinates outside sensor bounds")
            if not np.all(np.isin(ev["p"], (-1, 1))):
                raise InvalidInputError("polarity must be -1 or +1")
            order = np.lexsort((ev["p"], ev["x"], ev["y"], ev["t"]))
            if not np.array_equal(order, np.arange(ev.shape[0])):
                raise InvalidInputError(
                    "events must be sorted by t with (y, x, polarity) tie order"
                )
        object.__setattr__(self, "events", ev)

    def __len__(self) -> int:
        return self.events.shape[0]

    def __iter__(self) -> Iterator[Event]:
        for rec in self.events:
            yield Event(int(rec["t"]), int(rec["x"]), int(rec["y"]), int(rec["p"]))


@dataclass(frozen=True)
class EventStack:
    """Signed event count image over a half-open window [t_begin, t_end)."""

    t_begin: int
    t_end: int
    values: np.ndarray

    def __post_init__(self):
        if not (self.t_begin < self.t_end):
            raise InvalidInputError("stack window must satisfy t_begin < t_end")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInputError("stack values must be a 2-D image")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("stack values must be finite")
        object.__setattr__(self, "values", values)


def simulate_events(frames: FrameSequence, threshold: float, seed: int = 0) -> EventStream:
    """Simulate an ideal event stream from an intensity video.

    Per pixel, a reference log level starts at frame 0. For each later frame,
    floor(|delta| / threshold) events of sign(delta) fire, where delta is the
    current log luminance minus the reference; the reference advances by
    exactly threshold per event, so the residual stays strictly below
    threshold after every frame. Event timestamps assume the log intensity
    moves linearly across the frame interval: each event lands where its
    crossing level sits on that line, rounded to integer microseconds and
    clamped inside the interval.

    The seed parameter is reserved for future stochastic sensor models; the
    ideal model is deterministic and ignores it.
    """
    if frames.n_frames < 2:
        raise InvalidInputError("need at least 2 frames to simulate events")
    if not (threshold > 0):
        raise InvalidParameterError("threshold must be positive")

    h, w = frames.height, frames.width
    loglum = frames.log_luminance().reshape(frames.n_frames, h * w)
    ts = frames.timestamps.astype(np.int64)
    xcoord = np.tile(np.arange(w, dtype=np.uint16), h)
    ycoord = np.repeat(np.arange(h, dtype=np.uint16), w)

    ref = loglum[0].copy()
    parts = []
    for i in range(1, frames.n_frames):
        cur = loglum[i]
        prev = loglum[i - 1]
        delta = cur - ref
        n_ev = np.floor(np.abs(delta) / threshold).astype(np.int64)
        active = np.nonzero(n_ev > 0)[0]
        if active.size:
            counts = n_ev[active]
            sign = np.sign(delta[active])
            rep = np.repeat(active, counts)
            sign_rep = np.repeat(sign, counts)
            # k = 1..count within each pixel's burst
            ends = np.cumsum(counts)
            k = np.arange(ends[-1]) - np.repeat(ends - counts, counts) + 1
            levels = ref[rep] + sign_rep * k * threshold
            frac = (levels - prev[rep]) / (cur[rep] - prev[rep])
            dt = ts[i] - ts[i - 1]
            off = np.clip(np.rint(frac * dt).astype(np.int64), 0, dt - 1)
            parts.append(
                pack_events(
                    (ts[i - 1] + off).astype(np.uint64),
                    xcoord[rep],
                    ycoord[rep],
                    sign_rep.astype(np.int8),
                )
            )
        ref = ref + np.sign(delta) * n_ev * threshold

    if parts:
        events = sort_events(np.concatenate(parts))
    else:
        events = np.zeros(0, dtype=EVENT_DTYPE)
    return EventStream(width=w, height=h, threshold=float(threshold), events=events)


def integrate_stack(stream: EventStream, window_edges: Sequence[int]) -> list[EventStack]:
    """Integrate an event stream into one signed count image per window.

    Windows are the half-open intervals between consecutive edges. Events
    outside every window are ignored.
    """
    edges = np.asarray(window_edges, dtype=np.int64)
    if edges.ndim != 1 or edges.shape[0] < 2:
        raise InvalidInputError("need at least two window edges")
    if not np.all(np.diff(edges) > 0):
        raise InvalidInputError("window edges must be strictly increasing")

    ev = stream.events
    t = ev["t"].astype(np.int64)
    bounds = np.searchsorted(t, edges, side="left")
    stacks = []
    for i in range(edges.shape[0] - 1):
        sl = slice(bounds[i], bounds[i + 1])
        values = np.zeros((stream.height, stream.width), dtype=np.float64)
        np.add.at(values, (ev["y"][sl], ev["x"][sl]), ev["p"][sl].astype(np.float64))
        stacks.append(EventStack(int(edges[i]), int(edges[i + 1]), values))
    return stacks


def reconstruct_direct(
    offset_log_frame: np.ndarray,
    stacks: Sequence[EventStack],
    threshold: float,
) -> list[np.ndarray]:
    """Reconstruct absolute log brightness by accumulating increment images.

    output[t] = offset_log_frame + threshold * sum(stacks[: t + 1]), the
    discrete form of integrating events on top of a known offset image.
    """
    offset = np.asarray(offset_log_frame, dtype=np.float64)
    if offset.ndim != 2:
        raise InvalidInputError("offset frame must be a 2-D log image")
    if not (threshold > 0):
        raise InvalidParameterError("threshold must be positive")
    out = []
    acc = offset.copy()
    for stack in stacks:
        if stack.values.shape != offset.shape:
            raise InvalidInputError(
                f"stack geometry {stack.values.shape} does not match offset {offset.shape}"
            )
        acc = acc + threshold * stack.values
        out.append(acc.copy())
    return out


def augment_events(
    stream: EventStream,
    hot_pixel_rate: float,
    drop_rate: float,
    seed: int,
    hot_rate_hz: float = 10.0,
) -> EventStream:
    """Inject hot pixels and drop events, deterministically per seed.

    ceil(hot_pixel_rate * H * W) pixels are chosen without replacement; each
    fires alternating-polarity events at ``hot_rate_hz`` with a random phase,
    across the input stream's time span. Each original event is independently
    dropped with probability ``drop_rate``.
    """
    for name, rate in (("hot_pixel_rate", hot_pixel_rate), ("drop_rate", drop_rate)):
        if not (0 <= rate < 1):
            raise InvalidParameterError(f"{name} must be in [0, 1), got {rate}")
    if not (hot_rate_hz > 0):
        raise InvalidParameterError("hot_rate_hz must be positive")

    rng = substream(seed, "augmentation")
    n_pixels = stream.width * stream.height
    n_hot = int(math.ceil(hot_pixel_rate * n_pixels))
    hot_flat = rng.choice(n_pixels, size=n_hot, replace=False)
    period = max(1, int(round(1e6 / hot_rate_hz)))
    phases = rng.integers(0, period, size=n_hot)
    keep = rng.random(len(stream)) >= drop_rate

    parts = [stream.events[keep]]
    if n_hot and len(stream):
        t = stream.events["t"].astype(np.int64)
        t0, t1 = int(t.min()), int(t.max())
        first = t0 + phases
        n_ticks = np.maximum((t1 - first) // period + 1, 0)
        total = int(n_ticks.sum())
        if total:
            rep = np.repeat(np.arange(n_hot), n_ticks)
            ends = np.cumsum(n_ticks)
            k = np.arange(total) - np.repeat(ends - n_ticks, n_ticks)
            t_hot = first[rep] + k * period
            pol = (1 - 2 * (k % 2)).astype(np.int8)
            parts.append(
                pack_events(
                    t_hot.astype(np.uint64),
                    (hot_flat[rep] % stream.width).astype(np.uint16),
                    (hot_flat[rep] // stream.width).astype(np.uint16),
                    pol,
                )
            )
    events = sort_events(np.concatenate(parts)) if len(parts) > 1 else parts[0]
    return EventStream(stream.width, stream.height, stream.threshold, events)
