"""Photodiode guidance: array vector sum, single-PD yaw sweep, and the
motorized-PD hybrid state machine with barrier detection for partially
occluded starts.

Controllers are pure transition functions ``(state, readings, drone) ->
(state, command)``; readings are filtered ADC counts in layout order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ControlCommand, DroneState, wrap_angle
from .sensing import PDMount, PDResponse

__all__ = [
    "PDLayout",
    "Mode",
    "GuidanceParams",
    "IntensityHistory",
    "ControllerState",
    "arpd_direction",
    "arpd_vector",
    "spd_sweep_direction",
    "polar_sweep_best_tilt",
    "tilt_schedule",
    "switch_check",
    "equal_intensity_check",
    "detect_barrier",
    "hybrid_step",
    "controller_step",
    "initial_state",
]

HALF_PI = math.pi / 2


# ---------------------------------------------------------------------------
# Layouts


@dataclass(frozen=True)
class PDLayout:
    mounts: tuple
    responses: tuple

    def __post_init__(self):
        mounts = tuple(self.mounts)
        responses = tuple(self.responses)
        if not mounts:
            raise ValueError("layout needs at least one mount")
        if len(mounts) != len(responses):
            raise ValueError("mounts and responses must have equal length")
        if sum(m.motorized for m in mounts) > 1:
            raise ValueError("at most one motorized mount")
        object.__setattr__(self, "mounts", mounts)
        object.__setattr__(self, "responses", responses)

    def __len__(self):
        return len(self.mounts)

    @classmethod
    def ring(cls, n: int, radius: float = 0.04, response: PDResponse | None = None,
             tilt: float = HALF_PI) -> "PDLayout":
        """``n`` identical PDs evenly spaced on a circle, first one at azimuth 0."""
        response = response or PDResponse()
        mounts = []
        for k in range(n):
            az = 2 * math.pi * k / n
            mounts.append(PDMount((radius * math.cos(az), radius * math.sin(az), 0.0), az, tilt))
        return cls(tuple(mounts), (response,) * n)

    @classmethod
    def hybrid(cls, radius: float = 0.04, response: PDResponse | None = None,
               motorized_response: PDResponse | None = None) -> "PDLayout":
        """Front motorized PD plus two downward PDs on an equilateral triangle."""
        response = response or PDResponse()
        motorized_response = motorized_response or response
        mounts = [PDMount((radius, 0.0, 0.0), 0.0, 0.0, motorized=True)]
        for az in (2 * math.pi / 3, -2 * math.pi / 3):
            mounts.append(PDMount((radius * math.cos(az), radius * math.sin(az), 0.0), az, HALF_PI))
        return cls(tuple(mounts), (motorized_response, response, response))

    @classmethod
    def single(cls, radius: float = 0.04, response: PDResponse | None = None,
               tilt: float = HALF_PI) -> "PDLayout":
        response = response or PDResponse()
        return cls((PDMount((radius, 0.0, 0.0), 0.0, tilt),), (response,))

    @property
    def motorized_index(self) -> int | None:
        for i, m in enumerate(self.mounts):
            if m.motorized:
                return i
        return None

    @property
    def is_arpd(self) -> bool:
        fixed = {round(m.azimuth % (2 * math.pi), 9) for m in self.mounts if not m.motorized}
        return len(fixed) >= 2

    def offsets_xy(self) -> np.ndarray:
        return np.array([m.offset[:2] for m in self.mounts])


# ---------------------------------------------------------------------------
# Parameters and state


class Mode(enum.Enum):
    YAW_SWEEP = "YawSweep"
    POLAR_SWEEP = "PolarSweep"
    APPROACH = "Approach"
    NEAR_FIELD = "NearFieldArPD"
    DESCEND = "Descend"
    LANDED = "Landed"
    BARRIER_STOP = "BarrierStop"
    FAILED = "Failed"

    def __str__(self):
        return self.value


TERMINAL = (Mode.LANDED, Mode.FAILED)


@dataclass(frozen=True)
class GuidanceParams:
    """Every threshold the guidance logic uses.

    Counts-valued fields (``min_signal``) are ADC counts; speeds m/s; times s.
    """

    equal_tol: float = 0.05
    switch_margin: float = 0.10
    barrier_ratio: float = 2.0
    barrier_window: int = 10
    barrier_floor: float = 30.0
    fade_tol: float = 0.2
    barrier_clearance: float = 0.5
    tilt_gain: float = 0.8
    min_signal: float = 3.0
    signal_timeout: float = 2.0
    cruise_speed: float = 0.5
    min_speed: float = 0.05
    vector_ref: float = 1000.0
    descend_speed: float = 0.2
    z_land: float = 0.05
    yaw_rate: float = HALF_PI
    polar_tilts: int = 7
    filter_window: int = 4
    spd_leg_time: float = 1.0
    dt: float = 0.02
    history_capacity: int = 256

    def __post_init__(self):
        for name in ("equal_tol", "switch_margin", "barrier_ratio", "barrier_floor", "fade_tol", "tilt_gain", "min_signal",
                     "signal_timeout", "cruise_speed", "min_speed", "vector_ref",
                     "descend_speed", "z_land", "yaw_rate", "spd_leg_time", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.barrier_window < 2 or self.polar_tilts < 5 or self.filter_window < 1:
            raise ValueError("barrier_window >= 2, polar_tilts >= 5, filter_window >= 1")
        if self.barrier_clearance < 0:
            raise ValueError("barrier_clearance must be >= 0")
        if self.min_speed > self.cruise_speed:
            raise ValueError("min_speed must not exceed cruise_speed")


class IntensityHistory:
    """Bounded, append-only record of ``(time, counts per PD)``.

    ``append`` returns a new history; instances are never mutated.
    """

    __slots__ = ("times", "values", "capacity")

    def __init__(self, channels: int, capacity: int = 256, times=None, values=None):
        self.capacity = capacity
        self.times = np.zeros(0) if times is None else times
        self.values = np.zeros((0, channels)) if values is None else values

    def append(self, t: float, values) -> "IntensityHistory":
        if len(self.times) and t <= self.times[-1]:
            raise ValueError("history timestamps must increase")
        times = np.append(self.times[-(self.capacity - 1):], t)
        vals = np.vstack([self.values[-(self.capacity - 1):], np.asarray(values, float)[None]])
        return IntensityHistory(self.values.shape[1], self.capacity, times, vals)

    def channel(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class ControllerState:
    kind: str
    layout: PDLayout
    params: GuidanceParams
    mode: Mode
    tilt: float = 0.0
    heading: float = 0.0
    history: IntensityHistory | None = None
    dc: float = 0.0
    fail_reason: str = ""
    transitions: tuple = ()
    # per-mode scratch
    steps_in_mode: int = 0
    sweep: tuple = ()
    sweep_down: tuple = ()
    turned: float = 0.0
    prev_yaw: float | None = None
    yaw_buffer: tuple = ()
    polar: tuple = ()
    aligned: bool = False
    settle: int = 0
    barrier_fired: bool = False
    low_since: float | None = None
    leg_peak: float = 0.0

    def __post_init__(self):
        if not -1e-12 <= self.tilt <= HALF_PI + 1e-12:
            raise ValueError("tilt must lie in [0, pi/2]")

    @property
    def motorized(self) -> int:
        mi = self.layout.motorized_index
        return 0 if mi is None else mi

    @property
    def downward(self) -> list[int]:
        return [i for i in range(len(self.layout)) if i != self.layout.motorized_index]

    def tilts(self) -> list:
        """Tilt override per mount (None keeps the mount's fixed tilt)."""
        return [self.tilt if m.motorized else None for m in self.layout.mounts]


def initial_state(kind: str, layout: PDLayout, params: GuidanceParams | None = None) -> ControllerState:
    """Fresh controller. ``kind`` is ``"hybrid"``, ``"arpd"`` or ``"spd"``."""
    params = params or GuidanceParams()
    if kind == "hybrid":
        if layout.motorized_index is None or len(layout) != 3:
            raise ValueError("hybrid controller needs a 3-PD layout with one motorized mount")
        mode, settle = Mode.YAW_SWEEP, 0
    elif kind == "arpd":
        if not layout.is_arpd:
            raise ValueError("ArPD controller needs >= 2 fixed mounts at distinct azimuths")
        mode, settle = Mode.NEAR_FIELD, params.filter_window
    elif kind == "spd":
        mode, settle = Mode.YAW_SWEEP, 0
    else:
        raise ValueError(f"unknown controller kind {kind!r}")
    return ControllerState(kind=kind, layout=layout, params=params, mode=mode, settle=settle,
                           history=IntensityHistory(len(layout), params.history_capacity))


# ---------------------------------------------------------------------------
# Estimators


def _world_offsets(layout: PDLayout, yaw: float, indices=None) -> np.ndarray:
    off = layout.offsets_xy()
    if indices is not None:
        off = off[list(indices)]
    c, s = math.cos(yaw), math.sin(yaw)
    return off @ np.array([[c, s], [-s, c]])


def arpd_direction(readings, layout: PDLayout, yaw: float = 0.0, min_signal: float = 0.0,
                   indices=None):
    """Intensity-weighted sum of mount offset vectors, normalized.

    Returns a horizontal unit vector ``(x, y, 0)`` or ``None`` when the sum
    is balanced (shorter than ``min_signal * mean offset norm``).
    """
    r = np.asarray(readings, dtype=float)
    off = _world_offsets(layout, yaw, indices)
    if len(r) != len(off):
        raise ValueError("readings and layout have different lengths")
    if len(r) < 2:
        raise ValueError("need at least 2 mounts")
    v = r @ off
    norm = float(np.hypot(*v))
    scale = float(np.mean(np.hypot(off[:, 0], off[:, 1])))
    floor = min_signal * scale + 1e-9 * float(np.abs(r).sum()) * scale
    if norm <= floor:
        return None
    return np.array([v[0] / norm, v[1] / norm, 0.0])


def arpd_vector(readings, layout: PDLayout, indices=None) -> float:
    """Length of the reading-weighted offset sum, per metre of mount radius (counts)."""
    r = np.asarray(readings, dtype=float)
    off = _world_offsets(layout, 0.0, indices)
    scale = float(np.mean(np.hypot(off[:, 0], off[:, 1])))
    return float(np.hypot(*(r @ off)) / scale)


def _profile(samples):
    arr = np.asarray(samples, dtype=float)
    ang = np.mod(arr[:, 0], 2 * math.pi)
    order = np.argsort(ang, kind="stable")
    return ang[order], arr[order, 1]


def spd_sweep_direction(samples, min_signal: float = 3.0):
    """Bearing (radians in [0, 2pi)) of the brightest yaw after smoothing.

    ``samples`` are ``(world_yaw, counts)`` pairs from a full turn. The
    profile is smoothed with a 3-sample circular moving mean; ties go to the
    higher raw reading, then to the smallest angle. Returns ``None`` for a
    flat profile (max - min < ``min_signal``).
    """
    ang, val = _profile(samples)
    if len(ang) < 8:
        raise ValueError("need at least 8 sweep samples")
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    if 2 * math.pi - gaps.max() < math.radians(350) - 1e-9:
        raise ValueError("sweep must span at least 350 degrees")
    if val.max() - val.min() < min_signal:
        return None
    smooth = (np.roll(val, 1) + val + np.roll(val, -1)) / 3.0
    tol = 1e-12 * max(1.0, abs(smooth).max())
    cand = np.nonzero(smooth >= smooth.max() - tol)[0]
    cand = cand[val[cand] >= val[cand].max() - tol]
    return float(ang[cand[0]])


def polar_sweep_best_tilt(samples, min_signal: float = 3.0):
    """Tilt with the greatest reading; ties prefer the smaller tilt.

    ``samples`` are ``(tilt, counts)`` pairs covering [0, pi/2]. Returns
    ``None`` on a flat profile.
    """
    arr = np.asarray(samples, dtype=float)
    if len(arr) < 5:
        raise ValueError("need at least 5 tilt samples")
    tilts, vals = arr[:, 0], arr[:, 1]
    if tilts.min() > 1e-9 or tilts.max() < HALF_PI - 1e-9:
        raise ValueError("tilt samples must span [0, pi/2]")
    if vals.max() - vals.min() < min_signal:
        return None
    best = np.nonzero(vals == vals.max())[0]
    return float(tilts[best][np.argmin(tilts[best])])


def tilt_schedule(tilt: float, window_values, params: GuidanceParams) -> float:
    """Raise the tilt in proportion to the relative intensity gain over a window."""
    v = np.asarray(window_values, dtype=float)
    if len(v) < 2:
        raise ValueError("need at least 2 history samples")
    if v[0] <= 0:
        return tilt
    rise = max(0.0, (v[-1] - v[0]) / v[0])
    return float(min(HALF_PI, max(0.0, tilt + params.tilt_gain * rise)))


def switch_check(motorized: float, downward, params: GuidanceParams) -> bool:
    down = np.asarray(downward, dtype=float)
    if down.shape != (2,):
        raise ValueError("need exactly 2 downward readings")
    return bool(down.min() > motorized * (1 + params.switch_margin))


def equal_intensity_check(readings, params: GuidanceParams) -> bool:
    r = np.asarray(readings, dtype=float)
    if (r > params.min_signal).sum() < 2:
        return False
    hi = r.max()
    return bool((hi - r.min()) / hi <= params.equal_tol)


def detect_barrier(history, params: GuidanceParams, channel: int = 0) -> bool:
    """True when the newest sample jumps above a log-linear trend prediction.

    ``history`` is an :class:`IntensityHistory` or a 1-D sequence. The trend
    is fitted to the ``barrier_window`` samples preceding the newest one.
    """
    if isinstance(history, IntensityHistory):
        v = history.channel(channel)
    else:
        v = np.asarray(history, dtype=float)
    w = params.barrier_window
    if len(v) < w + 2:
        return False
    # ratios of near-floor readings are noise; lift everything to the floor
    floor = params.barrier_floor
    recent = np.log(np.clip(v[-(w + 1):-1], floor, None))
    x = np.arange(w, dtype=float)
    slope, icpt = np.polyfit(x, recent, 1)
    predicted = math.exp(icpt + slope * w)
    return bool(max(v[-1], floor) > params.barrier_ratio * predicted)


# ---------------------------------------------------------------------------
# State machine


def _goto(ctrl: ControllerState, mode: Mode, t: float, trigger: str, **changes) -> ControllerState:
    log = ctrl.transitions + ((t, str(ctrl.mode), str(mode), trigger),)
    return replace(ctrl, mode=mode, transitions=log, steps_in_mode=0, **changes)


def _start_sweep(ctrl, t, trigger, **changes):
    return _goto(ctrl, Mode.YAW_SWEEP, t, trigger, sweep=(), sweep_down=(), turned=0.0,
                 prev_yaw=None, yaw_buffer=(), tilt=0.0, **changes)


def _fail(ctrl, t, reason):
    return _goto(ctrl, Mode.FAILED, t, reason, fail_reason=reason)


def _sweep_step(ctrl: ControllerState, r, drone: DroneState):
    """Accumulate one yaw-sweep sample; return (ctrl, done)."""
    p = ctrl.params
    w = p.filter_window
    turned = ctrl.turned
    if ctrl.prev_yaw is not None:
        turned += abs(wrap_angle(drone.yaw - ctrl.prev_yaw))
    buf = (ctrl.yaw_buffer + (drone.yaw,))[-w:]
    sweep, sweep_down = ctrl.sweep, ctrl.sweep_down
    if len(buf) == w:
        # the filtered value summarizes the trailing window; key it at its middle
        mid = buf[0] + wrap_angle(buf[-1] - buf[0]) / 2
        src = ctrl.motorized if ctrl.kind == "hybrid" else 0
        sweep = sweep + ((mid, float(r[src])),)
        if ctrl.kind == "hybrid":
            sweep_down = sweep_down + (tuple(float(r[i]) for i in ctrl.downward),)
    ctrl = replace(ctrl, turned=turned, prev_yaw=drone.yaw, yaw_buffer=buf, sweep=sweep,
                   sweep_down=sweep_down)
    # one full turn of keyed samples, plus the window it took to fill the filter
    done = len(sweep) >= 8 and turned >= 2 * math.pi + (w - 1) * p.yaw_rate * p.dt - 1e-9
    return ctrl, done


def controller_step(ctrl: ControllerState, readings, drone: DroneState):
    """Dispatch on ``ctrl.kind``; see :func:`hybrid_step`."""
    return hybrid_step(ctrl, readings, drone)


def hybrid_step(ctrl: ControllerState, readings, drone: DroneState, params=None):
    """One control tick. Returns ``(new_state, command)``.

    Mode graph (hybrid): YawSweep -> PolarSweep -> Approach -> NearFieldArPD
    -> Descend -> Landed, with Approach -> BarrierStop -> YawSweep on an
    intensity jump, and any mode -> Failed after ``signal_timeout`` seconds
    below ``min_signal`` on every PD. Landed and Failed are absorbing.
    """
    if params is not None and params is not ctrl.params:
        ctrl = replace(ctrl, params=params)
    p = ctrl.params
    t = drone.time
    hover = ControlCommand.hover()
    if ctrl.mode in TERMINAL:
        return ctrl, hover

    raw = np.asarray(readings, dtype=float)
    r = np.clip(raw - ctrl.dc, 0.0, None)
    ctrl = replace(ctrl, steps_in_mode=ctrl.steps_in_mode + 1)

    if ctrl.mode in (Mode.YAW_SWEEP, Mode.POLAR_SWEEP):
        # turning PDs go dark on purpose; sweeps judge the whole profile instead
        if ctrl.low_since is not None:
            ctrl = replace(ctrl, low_since=None)
    elif ctrl.mode is not Mode.DESCEND:
        if np.all(r < p.min_signal):
            since = ctrl.low_since if ctrl.low_since is not None else t
            if t - since >= p.signal_timeout - 1e-9:
                return _fail(ctrl, t, "signal lost"), hover
            ctrl = replace(ctrl, low_since=since)
        elif ctrl.low_since is not None:
            ctrl = replace(ctrl, low_since=None)

    mode = ctrl.mode
    if mode is Mode.YAW_SWEEP:
        return _yaw_sweep_mode(ctrl, r, raw, drone)
    if mode is Mode.POLAR_SWEEP:
        return _polar_mode(ctrl, r, drone)
    if mode is Mode.APPROACH:
        if ctrl.kind == "spd":
            return _spd_leg_mode(ctrl, r, drone)
        return _approach_mode(ctrl, r, drone)
    if mode is Mode.BARRIER_STOP:
        # push clear of the shadow edge so drift cannot carry the re-sweep back into it
        steps = math.ceil(p.barrier_clearance / (p.cruise_speed * p.dt) - 1e-9)
        if ctrl.steps_in_mode <= steps:
            return ctrl, ControlCommand.move(_heading_vec(ctrl.heading), p.cruise_speed)
        return _start_sweep(ctrl, t, "reorient"), hover
    if mode is Mode.NEAR_FIELD:
        return _near_field_mode(ctrl, r, drone)
    if mode is Mode.DESCEND:
        if drone.position[2] <= p.z_land:
            return _goto(ctrl, Mode.LANDED, t, "touchdown"), ControlCommand.land()
        return ctrl, ControlCommand.descend(p.descend_speed)
    raise AssertionError(mode)


def _yaw_sweep_mode(ctrl, r, raw, drone):
    p = ctrl.params
    t = drone.time
    ctrl, done = _sweep_step(ctrl, raw, drone)
    if not done:
        return ctrl, ControlCommand.yaw(p.yaw_rate)
    prof = np.array(ctrl.sweep)
    dc = float(prof[:, 1].min())
    if ctrl.kind == "spd":
        bearing = spd_sweep_direction(prof, p.min_signal)
        hi = prof[:, 1].max() - dc
        if bearing is None or hi <= 0 or (hi - (np.sort(prof[:, 1])[len(prof) // 2] - dc)) / hi <= p.equal_tol:
            return _goto(ctrl, Mode.DESCEND, t, "flat sweep", dc=dc), ControlCommand.hover()
        return _goto(ctrl, Mode.APPROACH, t, "sweep bearing", dc=dc, heading=bearing,
                     history=IntensityHistory(len(ctrl.layout), p.history_capacity),
                     leg_peak=0.0), ControlCommand.hover()
    down = np.array(ctrl.sweep_down) - dc
    best_mot = prof[:, 1].max() - dc
    down_level = np.median(down, axis=0)
    if down_level.min() >= p.min_signal and switch_check(best_mot, down_level, p):
        return _goto(ctrl, Mode.NEAR_FIELD, t, "downward exceeds motorized", dc=dc,
                     tilt=HALF_PI, settle=p.filter_window), ControlCommand.hover()
    bearing = spd_sweep_direction(prof, p.min_signal)
    if best_mot < p.min_signal and np.all(down.max(axis=0) < p.min_signal):
        # a whole turn with every PD under the floor
        return _fail(ctrl, t, "signal lost"), ControlCommand.hover()
    if bearing is None:
        # nothing to follow; keep turning until the signal timeout decides
        return _start_sweep(ctrl, t, "flat sweep", dc=dc), ControlCommand.yaw(p.yaw_rate)
    return _goto(ctrl, Mode.POLAR_SWEEP, t, "sweep bearing", dc=dc, heading=bearing,
                 aligned=False, polar=(), tilt=0.0, settle=0), ControlCommand.hover()


def _polar_mode(ctrl, r, drone):
    p = ctrl.params
    t = drone.time
    if not ctrl.aligned:
        err = wrap_angle(ctrl.heading - drone.yaw)
        if abs(err) > p.yaw_rate * p.dt / 2 + 1e-12:
            rate = math.copysign(min(p.yaw_rate, abs(err) / p.dt), err)
            return ctrl, ControlCommand.yaw(rate)
        ctrl = replace(ctrl, aligned=True, settle=p.filter_window, polar=(), tilt=0.0)
        return ctrl, ControlCommand.hover()
    tilts = np.linspace(0.0, HALF_PI, p.polar_tilts)
    if ctrl.settle > 1:
        return replace(ctrl, settle=ctrl.settle - 1), ControlCommand.hover()
    polar = ctrl.polar + ((ctrl.tilt, float(r[ctrl.motorized])),)
    if len(polar) < len(tilts):
        return replace(ctrl, polar=polar, tilt=float(tilts[len(polar)]),
                       settle=p.filter_window), ControlCommand.hover()
    best = polar_sweep_best_tilt(polar, p.min_signal)
    if best is None:
        best = 0.0
    return _goto(ctrl, Mode.APPROACH, t, "best tilt", polar=polar, tilt=best,
                 settle=p.filter_window, barrier_fired=False, leg_peak=0.0,
                 history=IntensityHistory(len(ctrl.layout), p.history_capacity)), ControlCommand.hover()


def _heading_vec(heading):
    return (math.cos(heading), math.sin(heading), 0.0)


def _approach_mode(ctrl, r, drone):
    p = ctrl.params
    t = drone.time
    move = ControlCommand.move(_heading_vec(ctrl.heading), p.cruise_speed)
    if ctrl.settle > 0:
        return replace(ctrl, settle=ctrl.settle - 1), move
    hist = ctrl.history.append(t, r)
    ctrl = replace(ctrl, history=hist)
    mi = ctrl.motorized
    down = r[ctrl.downward]
    if down.min() >= p.min_signal and switch_check(r[mi], down, p):
        return _goto(ctrl, Mode.NEAR_FIELD, t, "downward exceeds motorized", tilt=HALF_PI,
                     settle=p.filter_window), move
    if not ctrl.barrier_fired and detect_barrier(hist, p, mi):
        return _goto(ctrl, Mode.BARRIER_STOP, t, "intensity jump", barrier_fired=True), \
            ControlCommand.hover()
    peak = max(ctrl.leg_peak, float(r[mi]))
    if peak > p.barrier_floor and r[mi] < (1 - p.fade_tol) * peak:
        # flying past whatever the sweep locked onto; look again
        return _start_sweep(ctrl, t, "intensity falling"), ControlCommand.hover()
    ctrl = replace(ctrl, leg_peak=peak)
    w = p.barrier_window
    n = len(hist)
    if n > w and n % w == 0:
        new_tilt = tilt_schedule(ctrl.tilt, hist.channel(mi)[-(w + 1):], p)
        ctrl = replace(ctrl, tilt=new_tilt)
    return ctrl, move


def _near_field_mode(ctrl, r, drone):
    p = ctrl.params
    t = drone.time
    if ctrl.settle > 0:
        return replace(ctrl, settle=ctrl.settle - 1), ControlCommand.hover()
    lay = ctrl.layout
    direction = arpd_direction(r, lay, drone.yaw, p.min_signal)
    if direction is None:
        return _goto(ctrl, Mode.DESCEND, t, "balanced array"), ControlCommand.descend(p.descend_speed)
    if equal_intensity_check(r, p):
        return _goto(ctrl, Mode.DESCEND, t, "equal intensity"), ControlCommand.descend(p.descend_speed)
    if np.all(r < p.min_signal):
        return ctrl, ControlCommand.hover()
    # gradient ascent: speed follows the raw vector-sum length
    v = arpd_vector(r, lay)
    speed = min(p.cruise_speed, max(p.min_speed, p.cruise_speed * v / p.vector_ref))
    return ctrl, ControlCommand.move(direction, speed)


def _spd_leg_mode(ctrl, r, drone):
    """Single-PD leg: fly the swept bearing until the reading stops rising."""
    p = ctrl.params
    t = drone.time
    move = ControlCommand.move(_heading_vec(ctrl.heading), p.cruise_speed)
    if ctrl.settle > 0:
        return replace(ctrl, settle=ctrl.settle - 1), move
    v = float(r[0])
    peak = max(ctrl.leg_peak, v)
    ctrl = replace(ctrl, leg_peak=peak)
    leg_time = ctrl.steps_in_mode * p.dt
    if v < (1 - p.equal_tol / 2) * peak or leg_time >= p.spd_leg_time:
        return _start_sweep(ctrl, t, "leg end"), ControlCommand.hover()
    return ctrl, move
