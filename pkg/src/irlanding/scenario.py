"""Scenario assembly, the closed-loop run, start-grid sweeps, operating range
and the reference fields and environments used for calibration.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DT_MAX, ActuationNoise, DroneState, step, write_trajectory_csv
from .guidance import (
    TERMINAL,
    GuidanceParams,
    Mode,
    PDLayout,
    arpd_direction,
    hybrid_step,
    initial_state,
    spd_sweep_direction,
    switch_check,
)
from .lightfield import (
    Environment,
    LightSource,
    MeasuredFieldGrid,
    Surface,
    _atomic_write,
)
from .sensing import (
    InterferenceModel,
    PDMount,
    PDResponse,
    StreamingMinFilter,
    interference_counts,
    pd_readings,
    pd_signals,
    quantize,
)

__all__ = [
    "GridSpec",
    "ScenarioConfig",
    "RunResult",
    "CellResult",
    "SweepResult",
    "run_scenario",
    "sweep_start_grid",
    "cell_seed",
    "compute_operating_range",
    "reference_bulb",
    "reference_fields",
    "reference_environments",
    "ReferenceEnvironment",
    "DOWN_RESPONSE",
    "SIDE_RESPONSE",
    "CALIBRATED_PARAMS",
    "REFERENCE_NOISE",
    "FINAL_LEG_TARGET",
    "make_layout",
    "write_mode_log",
    "write_heatmap_csv",
    "write_heatmap_svg",
    "write_stats_json",
]

# ---------------------------------------------------------------------------
# Calibration

#: Downward PDs sit behind a 45 degree baffle; see the range calibration notes.
DOWN_RESPONSE = PDResponse(angular_exponent=2.0, adc_bits=16, full_scale=2.0,
                           noise_sigma=3e-5, field_of_view=math.pi / 4)
#: Side-facing and motorized PDs: same cos^2 lobe, no baffle.
SIDE_RESPONSE = PDResponse(angular_exponent=2.0, adc_bits=16, full_scale=2.0,
                           noise_sigma=3e-5, field_of_view=math.pi / 2)

CALIBRATED_PARAMS = GuidanceParams(
    equal_tol=0.01,
    switch_margin=0.10,
    barrier_ratio=2.0,
    barrier_window=10,
    tilt_gain=0.005,
    min_signal=3.0,
    vector_ref=1000.0,
    descend_speed=0.2,
    filter_window=4,
)

REFERENCE_NOISE = ActuationNoise(velocity_sigma=0.05, yaw_sigma=0.002, drift_sigma=0.015)

#: Final-leg time (NearFieldArPD entry to touchdown) the hybrid is tuned to, s.
FINAL_LEG_TARGET = 7.1


def reference_bulb() -> LightSource:
    """Calibrated station emitter: floor-level, pointing up."""
    return LightSource(position=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0), power=1.0,
                       lambert_exponent=1.3)


def make_layout(kind: str, n: int = 3, radius: float = 0.04) -> PDLayout:
    """Reference layouts: ``"hybrid"``, ``"arpd"`` (n-ring) or ``"spd"``."""
    if kind == "hybrid":
        return PDLayout.hybrid(radius, DOWN_RESPONSE, SIDE_RESPONSE)
    if kind == "arpd":
        return PDLayout.ring(n, radius, DOWN_RESPONSE)
    if kind == "spd":
        return PDLayout.single(radius, DOWN_RESPONSE)
    raise ValueError(f"unknown layout kind {kind!r}")


# ---------------------------------------------------------------------------
# Config and results


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple = (0.0, 0.6)
    y_range: tuple = (0.0, 0.6)
    nx: int = 10
    ny: int = 10
    z: float = 1.1

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid: nx and ny must be >= 2")
        if self.z <= 0:
            raise ValueError("grid: z must be > 0")

    def cells(self) -> list[tuple[float, float, float]]:
        xs = np.linspace(*self.x_range, self.nx)
        ys = np.linspace(*self.y_range, self.ny)
        return [(float(x), float(y), float(self.z)) for y in ys for x in xs]


@dataclass(frozen=True)
class ScenarioConfig:
    environment: Environment
    layout: PDLayout
    controller: str = "hybrid"
    start: tuple = (3.0, 0.0, 1.0)
    start_yaw: float = 0.0
    grid: GridSpec | None = None
    dt: float = 0.02
    max_time: float = 60.0
    seed: int = 0
    noise: ActuationNoise = field(default_factory=ActuationNoise)
    params: GuidanceParams = CALIBRATED_PARAMS
    sensor_noise: bool = True
    interference: InterferenceModel | None = None
    record: bool = True

    def validate(self) -> None:
        if not 0 < self.dt <= DT_MAX:
            raise ValueError(f"dt must lie in (0, {DT_MAX}] s, got {self.dt}")
        if not self.max_time > 0:
            raise ValueError(f"max_time must be > 0, got {self.max_time}")
        if len(self.start) != 3 or not self.start[2] > 0:
            raise ValueError("start: z must be > 0")
        if self.controller not in ("hybrid", "arpd", "spd"):
            raise ValueError(f"controller must be hybrid, arpd or spd, got {self.controller!r}")
        if abs(self.params.dt - self.dt) > 1e-12:
            raise ValueError("params.dt must equal dt")

    def with_start(self, start, seed) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, start=tuple(start), seed=int(seed))


@dataclass
class RunResult:
    outcome: str
    reason: str
    landing_offset: float | None
    landing_time: float | None
    final_leg_time: float | None
    final_offset: float
    elapsed: float
    transitions: list
    events: list
    trajectory: np.ndarray
    wall_crossings: int = 0

    @property
    def modes(self) -> list[str]:
        seq = [self.transitions[0][1]] if self.transitions else []
        return seq + [tr[2] for tr in self.transitions]

    def count(self, mode: str) -> int:
        return sum(1 for tr in self.transitions if tr[2] == mode)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "reason": self.reason,
            "landing_offset_m": self.landing_offset,
            "landing_time_s": self.landing_time,
            "final_leg_time_s": self.final_leg_time,
            "final_offset_m": self.final_offset,
            "elapsed_s": self.elapsed,
            "wall_crossings": self.wall_crossings,
            "transitions": [list(tr) for tr in self.transitions],
        }

    def same_as(self, other: "RunResult") -> bool:
        """Bitwise equality of every recorded quantity."""
        return (self.to_dict() == other.to_dict()
                and self.trajectory.shape == other.trajectory.shape
                and np.array_equal(self.trajectory, other.trajectory))


def _station(env: Environment) -> np.ndarray:
    return np.asarray(env.source.emitter_position, float)


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Closed loop: sense, filter, decide, move, until Landed/Failed/timeout."""
    cfg.validate()
    env = cfg.environment
    layout = cfg.layout
    params = cfg.params
    seq = np.random.SeedSequence(cfg.seed)
    act_rng, pd_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    noise = cfg.noise

    drone = DroneState.at(cfg.start, cfg.start_yaw, noise)
    if noise.drift_sigma > 0:
        d = act_rng.normal(0.0, noise.drift_sigma, 2)
        drone = DroneState(position=drone.position, yaw=drone.yaw,
                           drift=drone.drift + np.array([d[0], d[1], 0.0]))
    ctrl = initial_state(cfg.controller, layout, params)
    filt = StreamingMinFilter(params.filter_window, len(layout))
    gains = np.array([r.gain for r in layout.responses])
    tops = np.array([r.max_count for r in layout.responses])
    station = _station(env)

    rows = []
    events = []
    crossings = 0
    collided = False
    leg_start = None
    n_steps = int(math.floor(cfg.max_time / cfg.dt + 1e-9))
    for _ in range(n_steps):
        raw = pd_readings(layout.mounts, layout.responses, drone, env,
                          pd_rng if cfg.sensor_noise else None, ctrl.tilts())
        if cfg.interference is not None:
            raw = np.minimum(raw + interference_counts(drone.time, cfg.interference, gains), tops)
        filtered = filt.push(raw)
        before = len(ctrl.transitions)
        ctrl, cmd = hybrid_step(ctrl, filtered, drone)
        for tr in ctrl.transitions[before:]:
            events.append(tr + tuple(float(v) for v in drone.position))
            if tr[2] == Mode.NEAR_FIELD.value:
                leg_start = tr[0]
        if cfg.record:
            rows.append((drone.time, *drone.position, drone.yaw, ctrl.mode.value))
        if ctrl.mode is Mode.FAILED:
            break
        nxt = step(drone, cmd, noise, cfg.dt, act_rng)
        if env.surfaces and not nxt.landed and bool(env.blocked(drone.position, nxt.position)):
            crossings += 1
            collided = True
            break
        drone = nxt
        if ctrl.mode is Mode.LANDED:
            if cfg.record:
                rows.append((drone.time, *drone.position, drone.yaw, ctrl.mode.value))
            break

    offset = float(math.hypot(*(drone.position[:2] - station[:2])))
    if ctrl.mode is Mode.LANDED:
        outcome, reason = "Landed", ""
        land_t = drone.time
        leg = land_t - leg_start if leg_start is not None else None
        result = (offset, land_t, leg)
    elif collided:
        outcome, reason = "Failed", "collision"
        result = (None, None, None)
    elif ctrl.mode is Mode.FAILED:
        outcome, reason = "Failed", ctrl.fail_reason
        result = (None, None, None)
    else:
        outcome, reason = "Timeout", ""
        result = (None, None, None)
    traj = np.array([r[:5] for r in rows], dtype=float).reshape(-1, 5)
    res = RunResult(outcome, reason, *result, final_offset=offset, elapsed=drone.time,
                    transitions=list(ctrl.transitions), events=events, trajectory=traj,
                    wall_crossings=crossings)
    res.mode_column = [r[5] for r in rows]
    return res


def write_mode_log(path, result: RunResult) -> None:
    buf = io.StringIO()
    buf.write("t,mode_from,mode_to,trigger\n")
    for t, a, b, trig in result.transitions:
        buf.write(f"{t:.4f},{a},{b},{trig}\n")
    _atomic_write(path, buf.getvalue())


def write_run_outputs(out_dir, result: RunResult) -> list:
    """Trajectory CSV, mode log CSV and result JSON; returns the paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    traj = os.path.join(out_dir, "trajectory.csv")
    modes = os.path.join(out_dir, "modes.csv")
    summary = os.path.join(out_dir, "result.json")
    write_trajectory_csv(traj, [(*row, m) for row, m in zip(result.trajectory, result.mode_column)])
    write_mode_log(modes, result)
    _atomic_write(summary, json.dumps(result.to_dict(), indent=2) + "\n")
    return [traj, modes, summary]


# ---------------------------------------------------------------------------
# Start-grid sweeps


@dataclass(frozen=True)
class CellResult:
    x: float
    y: float
    outcome: str
    offset: float
    time: float
    final_leg_time: float | None


@dataclass
class SweepResult:
    grid: GridSpec
    cells: list

    @property
    def stats(self) -> dict:
        landed = [c for c in self.cells if c.outcome == "Landed"]
        offs = np.array([c.offset for c in landed]) if landed else np.zeros(0)
        times = np.array([c.time for c in landed]) if landed else np.zeros(0)
        return {
            "cells": len(self.cells),
            "landed": len(landed),
            "success_rate": len(landed) / len(self.cells),
            "mean_offset_m": float(offs.mean()) if len(offs) else None,
            "median_offset_m": float(np.median(offs)) if len(offs) else None,
            "mean_time_s": float(times.mean()) if len(times) else None,
            "frac_offset_gt_0.3": float(np.mean([c.outcome != "Landed" or c.offset > 0.3
                                                 for c in self.cells])),
        }


def cell_seed(master: int, index: int) -> int:
    """Order-independent per-cell seed from (master seed, cell index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _run_cell(args):
    cfg, idx, start = args
    res = run_scenario(cfg.with_start(start, cell_seed(cfg.seed, idx)))
    t = res.landing_time if res.landing_time is not None else res.elapsed
    off = res.landing_offset if res.landing_offset is not None else res.final_offset
    return idx, CellResult(start[0], start[1], res.outcome, off, t, res.final_leg_time)


def sweep_start_grid(cfg: ScenarioConfig, workers: int = 1) -> SweepResult:
    """One run per grid cell; results are ordered by cell index."""
    if cfg.grid is None:
        raise ValueError("sweep needs cfg.grid")
    from dataclasses import replace
    cfg = replace(cfg, record=False)
    jobs = [(cfg, i, s) for i, s in enumerate(cfg.grid.cells())]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_run_cell, jobs))
    else:
        out = [_run_cell(j) for j in jobs]
    out.sort(key=lambda p: p[0])
    return SweepResult(cfg.grid, [c for _, c in out])


def write_heatmap_csv(path, sweep: SweepResult) -> None:
    buf = io.StringIO()
    buf.write("x,y,offset_m,time_s,outcome\n")
    for c in sweep.cells:
        buf.write(f"{c.x:.4f},{c.y:.4f},{c.offset:.5f},{c.time:.3f},{c.outcome}\n")
    _atomic_write(path, buf.getvalue())


def _color(v: float) -> str:
    # dark blue (low) to yellow (high)
    v = min(1.0, max(0.0, v))
    r, g, b = int(40 + 215 * v), int(30 + 200 * v), int(120 * (1 - v) + 30)
    return f"#{r:02x}{g:02x}{b:02x}"


def write_heatmap_svg(path, sweep: SweepResult, metric: str = "offset", cell_px: int = 24) -> None:
    """Inline-rectangle heatmap of offset or time; failed cells are grey."""
    g = sweep.grid
    vals = np.array([getattr(c, metric) for c in sweep.cells], dtype=float)
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    w, h = g.nx * cell_px, g.ny * cell_px
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + 20}">']
    for k, c in enumerate(sweep.cells):
        i, j = k % g.nx, k // g.nx
        fill = _color((vals[k] - lo) / span) if c.outcome == "Landed" else "#888888"
        parts.append(f'<rect x="{i * cell_px}" y="{h - (j + 1) * cell_px}" width="{cell_px}" '
                     f'height="{cell_px}" fill="{fill}"/>')
    parts.append(f'<text x="2" y="{h + 15}" font-size="11">{metric}: {lo:.3g} .. {hi:.3g}</text>')
    parts.append("</svg>\n")
    _atomic_write(path, "\n".join(parts))


def write_stats_json(path, sweep: SweepResult) -> None:
    _atomic_write(path, json.dumps(sweep.stats, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Operating range


def _side_sweep_bearing(resp, pos, env, min_signal, n_yaw=72, tilt=0.0):
    yaws = 2 * math.pi * np.arange(n_yaw) / n_yaw
    mounts = [PDMount((0.0, 0.0, 0.0), float(a), tilt) for a in yaws]
    sig = pd_signals(mounts, [resp] * n_yaw, pos, 0.0, env)
    counts = quantize(sig, resp)
    return spd_sweep_direction(np.column_stack([yaws, counts]), min_signal)


def _downward_bearing(layout, pos, env, min_signal):
    counts = pd_readings(layout.mounts, layout.responses, (pos, 0.0), env)
    if np.all(counts < min_signal):
        return None, counts
    d = arpd_direction(counts, layout, 0.0, min_signal)
    return (None if d is None else math.atan2(d[1], d[0])), counts


def compute_operating_range(variant: str, height: float, env: Environment,
                            r_max: float = 30.0, step_m: float = 0.01,
                            params: GuidanceParams = CALIBRATED_PARAMS,
                            side_response: PDResponse = SIDE_RESPONSE,
                            down_layout: PDLayout | None = None,
                            max_error_deg: float = 30.0) -> tuple[float, float]:
    """Brute-force radial sweep of bearing-estimation error along +x.

    ``variant`` is ``"downward"`` (fixed ArPD ring), ``"side"`` (one
    side-facing PD swept in yaw) or ``"hybrid"`` (side sweep until the
    downward pair beats the motorized PD, ArPD inside that). Returns the
    longest contiguous band of radii with error below ``max_error_deg`` and
    signal above ``min_signal``; ``(nan, nan)`` when there is none.
    """
    if variant not in ("downward", "side", "hybrid"):
        raise ValueError(f"unknown variant {variant!r}")
    down = down_layout or PDLayout.ring(6, 0.04, DOWN_RESPONSE)
    hyb = PDLayout.hybrid(0.04, DOWN_RESPONSE, side_response)
    src = _station(env)
    radii = np.arange(1, int(round(r_max / step_m)) + 1) * step_m
    ok = np.zeros(len(radii), dtype=bool)
    tol = math.radians(max_error_deg)
    for k, r in enumerate(radii):
        pos = src + np.array([r, 0.0, height])
        truth = math.pi  # station lies toward -x
        if variant == "downward":
            b, _ = _downward_bearing(down, pos, env, params.min_signal)
        elif variant == "side":
            b = _side_sweep_bearing(side_response, pos, env, params.min_signal)
        else:
            # motorized PD facing the station at tilt 0 against the downward pair
            c = pd_readings(hyb.mounts, hyb.responses, (pos, math.pi), env)
            if c[1:].min() >= params.min_signal and switch_check(c[0], c[1:], params):
                b, _ = _downward_bearing(hyb, pos, env, params.min_signal)
            else:
                b = _side_sweep_bearing(side_response, pos, env, params.min_signal)
        ok[k] = b is not None and abs(math.remainder(b - truth, 2 * math.pi)) < tol
    if not ok.any():
        return math.nan, math.nan
    best, cur, best_span = None, None, -1
    for k in range(len(radii) + 1):
        if k < len(radii) and ok[k]:
            cur = k if cur is None else cur
        elif cur is not None:
            if k - cur > best_span:
                best, best_span = (cur, k - 1), k - cur
            cur = None
    return float(radii[best[0]]), float(radii[best[1]])


# ---------------------------------------------------------------------------
# Reference fields


def _gauss(r2, s):
    return np.exp(-r2 / (2 * s * s))


def reference_fields(height: float = 1.1, extent: float = 2.5, spacing: float = 0.05) -> dict:
    """Stand-ins for measured lens fields, sampled at one height.

    ``bulb`` is the calibrated emitter sampled on the same grid. The others
    mimic what a diverging lens does to the same emitter: the light is
    spread thin (peaks near 0.1 au against 0.83 au for the bare bulb) and
    pushed off-centre. ``nolens`` has two lobes 0.8 m either side of the
    station, ``lens1`` is a ring peaking 0.9 m out and ``lens2`` a four-lobed
    ring peaking 0.8 m out. All are single-height grids and so extrude in z.
    """
    xs = np.arange(-extent, extent + spacing / 2, spacing)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    R = np.hypot(X, Y)
    phi = np.arctan2(Y, X)
    amp = 0.1
    shapes = {
        "nolens": amp * (_gauss((X - 0.8) ** 2 + Y**2, 0.35) + _gauss((X + 0.8) ** 2 + Y**2, 0.35)),
        "lens1": amp * np.exp(-((R - 0.9) ** 2) / (2 * 0.4**2)),
        "lens2": amp * np.exp(-((R - 0.8) ** 2) / (2 * 0.35**2)) * (1 + 0.2 * np.cos(4 * phi)),
    }
    origin = (xs[0], xs[0], height)
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, height)])
    out = {"bulb": MeasuredFieldGrid(origin, (spacing, spacing, 1.0),
                                     reference_bulb().intensity(pts).reshape(X.shape)[..., None],
                                     label="bulb")}
    for name, f in shapes.items():
        out[name] = MeasuredFieldGrid(origin, (spacing, spacing, 1.0), f[..., None], label=name)
    return out


# ---------------------------------------------------------------------------
# Reference environments

CEILING = 2.5
WALL_RHO = 0.3
CEIL_RHO = 0.4


@dataclass(frozen=True)
class ReferenceEnvironment:
    name: str
    environment: Environment
    starts: dict
    expect: str
    doc: str


def _wall_x(y, x0, x1, z0=0.0, z1=CEILING, rho=WALL_RHO):
    return Surface.from_extent("y", y, (x0, z0), (x1, z1), reflectance=rho)


def _wall_y(x, y0, y1, z0=0.0, z1=CEILING, rho=WALL_RHO):
    return Surface.from_extent("x", x, (y0, z0), (y1, z1), reflectance=rho)


def _ceiling(x0, x1, y0, y1):
    return Surface.from_extent("z", CEILING, (x0, y0), (x1, y1), reflectance=CEIL_RHO)


def _door_wall(y, half_width, door_top, x0=-4.0, x1=4.0):
    return [
        _wall_x(y, x0, -half_width),
        _wall_x(y, half_width, x1),
        _wall_x(y, -half_width, half_width, door_top, CEILING),
    ]


def reference_environments(patch_size: float = 0.25, ambient_dc: float = 0.0) -> dict:
    """Five indoor NLOS layouts around the calibrated floor-level station.

    Walls run floor to a 2.5 m ceiling; walls reflect 30 %, the ceiling 40 %.
    """
    bulb = reference_bulb()
    envs = {}

    def add(name, surfaces, starts, expect, doc):
        env = Environment(bulb, surfaces, ambient_dc=ambient_dc, patch_size=patch_size, name=name)
        envs[name] = ReferenceEnvironment(name, env, starts, expect, doc)

    add("env1",
        _door_wall(2.0, 0.3, 1.6, -6.0, 6.0) + [_ceiling(-6.0, 6.0, -2.0, 12.0)],
        {"near": (1.2, 4.5, 1.0), "far": (5.5, 11.0, 1.0)},
        "near lands, far fails",
        "Far opening: wall along y=2 m with a 0.6 m wide, 1.6 m tall opening at x=0. "
        "The near start is 2.5 m behind the wall; the far start is about 10 m from "
        "the opening, where the light spilling through it is below the noise floor.")
    add("env2",
        [_wall_x(2.0, -0.5, 5.0), _ceiling(-4.0, 5.0, -2.0, 6.0)],
        {"start": (-0.2, 4.5, 1.0)},
        "lands with one BarrierStop",
        "Partial open space: wall along y=2 m from x=-0.5 m to x=5 m; the space "
        "beyond x<-0.5 m is open.")
    add("env3",
        [_wall_x(-1.5, -1.5, 1.5), _wall_x(1.5, -1.5, 1.5),
         _wall_y(-1.5, -1.5, 1.5), _wall_y(1.5, -1.5, 1.5),
         _ceiling(-1.5, 1.5, -1.5, 1.5)],
        {"start": (3.0, 0.0, 1.0)},
        "fails with signal lost",
        "Fully occluded: the station sits in a closed 3 m x 3 m room; the drone "
        "starts outside it.")
    add("env4",
        _door_wall(2.0, 0.45, 2.0) + [_ceiling(-4.0, 4.0, -2.0, 6.0)],
        {"start": (1.2, 4.0, 1.0)},
        "lands with one BarrierStop",
        "Door: wall along y=2 m with a 0.9 m wide, 2.0 m tall door centred on x=0.")
    add("env5",
        [_wall_y(1.0, -4.0, 1.0), _wall_x(-1.0, 1.0, 5.0), _ceiling(-3.0, 5.0, -4.0, 5.0)],
        {"start": (4.0, 2.0, 1.0)},
        "lands with one BarrierStop",
        "Corner: an L-shaped wall with arms along x=1 m (y from -4 to 1) and "
        "y=-1 m (x from 1 to 5); the drone starts in the pocket of the L and "
        "must round the free end at (1, 1).")
    return envs
