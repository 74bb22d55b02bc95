"""Photodiode channel model: angular response, ADC, noise, interference and
the rolling-minimum filter used to strip height-sensor pulses."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .lightfield import Environment, _direct, _atomic_write, bounce_components

__all__ = [
    "PDMount",
    "PDResponse",
    "InterferenceModel",
    "ReadingTrace",
    "pd_signals",
    "quantize",
    "pd_reading",
    "pd_readings",
    "apply_interference",
    "interference_counts",
    "rolling_min_filter",
    "RollingMinFilter",
    "StreamingMinFilter",
    "default_filter_window",
    "write_trace_csv",
]


@dataclass(frozen=True)
class PDMount:
    """Photodiode pose in the drone body frame.

    tilt 0 faces sideways along ``azimuth``, tilt pi/2 faces straight down.
    """

    offset: tuple = (0.04, 0.0, 0.0)
    azimuth: float = 0.0
    tilt: float = math.pi / 2
    motorized: bool = False

    def __post_init__(self):
        off = tuple(float(v) for v in self.offset)
        if len(off) != 3:
            raise ValueError("offset must have 3 components")
        object.__setattr__(self, "offset", off)
        if not -1e-12 <= self.tilt <= math.pi / 2 + 1e-12:
            raise ValueError("tilt must lie in [0, pi/2]")
        if math.hypot(*off) > 0.2:
            raise ValueError("mount offset exceeds the 0.2 m palm-size bound")

    def body_normal(self, tilt: float | None = None) -> np.ndarray:
        t = self.tilt if tilt is None else tilt
        return np.array([math.cos(t) * math.cos(self.azimuth),
                         math.cos(t) * math.sin(self.azimuth),
                         -math.sin(t)])


@dataclass(frozen=True)
class PDResponse:
    """Electro-optical response of one channel.

    ``field_of_view`` is the incidence half-angle beyond which the package
    blocks light; pi/2 reproduces a bare cosine detector.
    """

    angular_exponent: float = 1.0
    adc_bits: int = 16
    full_scale: float = 2.0
    noise_sigma: float = 3e-5
    field_of_view: float = math.pi / 2

    def __post_init__(self):
        if self.angular_exponent < 1:
            raise ValueError("angular_exponent must be >= 1")
        if not 8 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must lie in [8, 16]")
        if self.full_scale <= 0:
            raise ValueError("full_scale must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.field_of_view <= math.pi / 2:
            raise ValueError("field_of_view must lie in (0, pi/2]")

    @property
    def max_count(self) -> int:
        return 2 ** self.adc_bits - 1

    @property
    def gain(self) -> float:
        """Counts per au."""
        return self.max_count / self.full_scale

    def angular_weight(self, cos_inc: np.ndarray) -> np.ndarray:
        cos_inc = np.asarray(cos_inc, dtype=float)
        ok = cos_inc > math.cos(self.field_of_view) + 1e-15
        return np.where(ok, np.clip(cos_inc, 0.0, None) ** self.angular_exponent, 0.0)


@dataclass(frozen=True)
class InterferenceModel:
    """Square-pulse IR interference (e.g. a downward ranging sensor).

    The defaults are uncalibrated placeholders; the 0.05 s period gives a
    4-sample filter window at the reference 0.02 s step.
    """

    amplitude: float = 0.5
    period: float = 0.05
    duty: float = 0.3
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if not 0 < self.duty < 1:
            raise ValueError("duty must lie in (0, 1)")

    def is_on(self, t) -> np.ndarray:
        x = (np.asarray(t, dtype=float) - self.phase) / self.period
        return ((x + 1e-9) % 1.0) < self.duty


@dataclass(frozen=True)
class ReadingTrace:
    timestamps: np.ndarray
    values: np.ndarray
    adc_bits: int = 16

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("timestamps and values must be equal-length 1-D arrays")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# Readings


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pd_poses(mounts, position, yaw, tilts=None) -> tuple[np.ndarray, np.ndarray]:
    """World positions and unit normals of each mount, shapes (N, 3)."""
    R = _yaw_matrix(yaw)
    offs = np.array([m.offset for m in mounts])
    if tilts is None:
        tilts = [None] * len(mounts)
    normals = np.array([m.body_normal(t) for m, t in zip(mounts, tilts)])
    return np.asarray(position, float) + offs @ R.T, normals @ R.T


def pd_signals(mounts, responses, position, yaw, env: Environment, tilts=None) -> np.ndarray:
    """Noise-free optical signal (au) at each photodiode, before the ADC.

    Direct, bounce and ambient light are each weighted by their own incidence
    geometry; ambient is isotropic and contributes half its level.
    """
    pos, nrm = pd_poses(mounts, position, yaw, tilts)
    src = env.source.emitter_position
    direct = _direct(pos, env)
    to_src = src - pos
    cos_d = np.einsum("ij,ij->i", to_src, nrm) / np.linalg.norm(to_src, axis=1)
    out = np.empty(len(mounts))
    for i, resp in enumerate(responses):
        out[i] = direct[i] * resp.angular_weight(cos_d[i])
    if len(env.patch_centers):
        vals, dirs = bounce_components(pos, env)
        cos_b = np.einsum("qpj,qj->qp", dirs, nrm)
        for i, resp in enumerate(responses):
            out[i] += vals[i] @ resp.angular_weight(cos_b[i])
    out += 0.5 * env.ambient_dc
    return out


def quantize(signal, resp: PDResponse, rng: np.random.Generator | None = None) -> np.ndarray:
    """ADC conversion with optional additive Gaussian noise (au) before rounding."""
    x = np.asarray(signal, dtype=float) * resp.gain
    if rng is not None and resp.noise_sigma > 0:
        x = x + rng.normal(0.0, resp.noise_sigma * resp.gain, size=x.shape)
    return np.clip(np.floor(x + 0.5), 0, resp.max_count)


def _rng(seed) -> np.random.Generator | None:
    if seed is None or isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _pose(drone_pose):
    if hasattr(drone_pose, "position"):
        return drone_pose.position, drone_pose.yaw
    position, yaw = drone_pose
    return position, yaw


def pd_reading(pd: PDMount, resp: PDResponse, drone_pose, env: Environment,
               rng_seed=None, tilt: float | None = None) -> int:
    """Digital reading (counts) of one photodiode.

    ``drone_pose`` is a state with ``position``/``yaw`` or a ``(position, yaw)``
    pair. ``rng_seed`` may be an int, a Generator, or None for noise-free.
    """
    position, yaw = _pose(drone_pose)
    sig = pd_signals([pd], [resp], position, yaw, env, tilts=[tilt])
    return int(quantize(sig, resp, _rng(rng_seed))[0])


def pd_readings(mounts, responses, drone_pose, env: Environment, rng=None, tilts=None) -> np.ndarray:
    position, yaw = _pose(drone_pose)
    sig = pd_signals(mounts, responses, position, yaw, env, tilts)
    rng = _rng(rng)
    return np.array([quantize(s, r, rng) for s, r in zip(sig, responses)])


# ---------------------------------------------------------------------------
# Interference and filtering


def interference_counts(t, model: InterferenceModel, gain: float) -> np.ndarray:
    return np.where(model.is_on(t), model.amplitude * gain, 0.0)


def apply_interference(trace: ReadingTrace, model: InterferenceModel,
                       gain: float = 1.0) -> ReadingTrace:
    """Add ``amplitude * gain`` counts during each pulse's on-window, clamped."""
    if len(trace) == 0:
        raise ValueError("trace must be nonempty")
    top = 2 ** trace.adc_bits - 1
    vals = np.minimum(trace.values + interference_counts(trace.timestamps, model, gain), top)
    return ReadingTrace(trace.timestamps, vals, trace.adc_bits)


def _rolling_min(values: np.ndarray, window: int) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    if window == 1 or len(values) == 0:
        return values.copy()
    pad = np.full((window - 1,) + values.shape[1:], np.inf)
    padded = np.concatenate([pad, values], axis=0)
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    return view.min(axis=-1)


def rolling_min_filter(trace: ReadingTrace, window: int) -> ReadingTrace:
    """Trailing rolling minimum; the first samples use the shorter window."""
    return ReadingTrace(trace.timestamps, _rolling_min(trace.values, window), trace.adc_bits)


def default_filter_window(period: float, dt: float) -> int:
    """1.5 interference periods, in samples."""
    return max(1, math.ceil(1.5 * period / dt - 1e-9))


class RollingMinFilter(TransformerMixin, BaseEstimator):
    """Causal rolling-minimum filter over the rows of ``X``.

    Each column is an independent channel sampled at a fixed rate.
    """

    def __init__(self, window=8):
        self.window = window

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        return _rolling_min(X, self.window)


class StreamingMinFilter:
    """Online version of the rolling minimum for a fixed number of channels."""

    def __init__(self, window: int, channels: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._buf = np.full((window, channels), np.inf)
        self._i = 0

    def push(self, values) -> np.ndarray:
        self._buf[self._i % self.window] = values
        self._i += 1
        return self._buf.min(axis=0)


def write_trace_csv(path, timestamps, raw, filtered) -> None:
    """Export ``t,pd_id,raw,filtered`` rows (one per sample per photodiode)."""
    raw = np.atleast_2d(np.asarray(raw))
    filtered = np.atleast_2d(np.asarray(filtered))
    buf = io.StringIO()
    buf.write("t,pd_id,raw,filtered\n")
    for k, t in enumerate(timestamps):
        for j in range(raw.shape[1]):
            buf.write(f"{t:.6f},{j},{int(raw[k, j])},{int(filtered[k, j])}\n")
    _atomic_write(path, buf.getvalue())
