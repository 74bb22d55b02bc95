"""Kinematic drone: velocity commands, actuation noise, slow drift."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lightfield import _atomic_write

__all__ = [
    "CommandKind",
    "ControlCommand",
    "ActuationNoise",
    "DroneState",
    "wrap_angle",
    "step",
    "yaw_sweep",
    "write_trajectory_csv",
]

V_MAX = 0.5
DT_MAX = 0.1


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


class CommandKind(enum.Enum):
    HOVER = "hover"
    MOVE = "move"
    YAW = "yaw"
    DESCEND = "descend"
    LAND = "land"


@dataclass(frozen=True)
class ControlCommand:
    kind: CommandKind
    direction: tuple = (0.0, 0.0, 0.0)
    speed: float = 0.0
    yaw_rate: float = 0.0

    @classmethod
    def hover(cls):
        return cls(CommandKind.HOVER)

    @classmethod
    def move(cls, direction, speed: float):
        d = np.asarray(direction, dtype=float)[:2]
        n = float(np.hypot(*d))
        if n == 0:
            raise ValueError("direction must be nonzero")
        if speed <= 0:
            raise ValueError("speed must be > 0")
        return cls(CommandKind.MOVE, (d[0] / n, d[1] / n, 0.0), float(speed))

    @classmethod
    def yaw(cls, rate: float):
        if rate == 0:
            raise ValueError("yaw rate must be nonzero")
        return cls(CommandKind.YAW, yaw_rate=float(rate))

    @classmethod
    def descend(cls, speed: float):
        if speed <= 0:
            raise ValueError("speed must be > 0")
        return cls(CommandKind.DESCEND, speed=float(speed))

    @classmethod
    def land(cls):
        return cls(CommandKind.LAND)


@dataclass(frozen=True)
class ActuationNoise:
    """Per-step velocity/yaw jitter plus a slowly varying drift bias.

    The bias starts at ``drift_bias`` and is redrawn from N(0, drift_sigma)
    on each horizontal axis every ``drift_interval`` seconds.
    """

    velocity_sigma: float = 0.0
    yaw_sigma: float = 0.0
    drift_bias: tuple = (0.0, 0.0, 0.0)
    drift_sigma: float = 0.0
    drift_interval: float = 5.0

    def __post_init__(self):
        if self.velocity_sigma < 0 or self.yaw_sigma < 0 or self.drift_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.drift_interval <= 0:
            raise ValueError("drift_interval must be > 0")


@dataclass(frozen=True)
class DroneState:
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    yaw: float = 0.0
    time: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    landed: bool = False

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        if pos[2] < 0:
            raise ValueError("position z must be >= 0")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float).reshape(3))
        object.__setattr__(self, "drift", np.array(self.drift, dtype=float).reshape(3))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def at(cls, position, yaw: float = 0.0, noise: ActuationNoise | None = None):
        drift = np.zeros(3) if noise is None else np.array(noise.drift_bias, float)
        drift[2] = 0.0
        return cls(position=position, yaw=yaw, drift=drift)


def step(state: DroneState, cmd: ControlCommand, noise: ActuationNoise, dt: float,
         rng: np.random.Generator, v_max: float = V_MAX) -> DroneState:
    """Advance one Euler step. ``Land`` is absorbing and pins z to 0."""
    if not 0 < dt <= DT_MAX:
        raise ValueError(f"dt must lie in (0, {DT_MAX}]")
    t = state.time + dt
    if state.landed:
        return replace(state, time=t)
    if cmd.kind is CommandKind.LAND:
        pos = state.position.copy()
        pos[2] = 0.0
        return replace(state, position=pos, velocity=np.zeros(3), time=t, landed=True)

    jitter = rng.standard_normal(3)
    drift = state.drift
    if noise.drift_sigma > 0 and math.floor(t / noise.drift_interval + 1e-9) > math.floor(
            state.time / noise.drift_interval + 1e-9):
        d = rng.normal(0.0, noise.drift_sigma, 2)
        drift = np.array([d[0], d[1], 0.0])

    v = np.zeros(3)
    yaw_rate = 0.0
    if cmd.kind is CommandKind.MOVE:
        v[:] = np.asarray(cmd.direction) * min(cmd.speed, v_max)
    elif cmd.kind is CommandKind.DESCEND:
        v[2] = -min(cmd.speed, v_max)
    elif cmd.kind is CommandKind.YAW:
        yaw_rate = cmd.yaw_rate
    v[0] += noise.velocity_sigma * jitter[0] + drift[0]
    v[1] += noise.velocity_sigma * jitter[1] + drift[1]

    pos = state.position + v * dt
    pos[2] = max(pos[2], 0.0)
    yaw = state.yaw + yaw_rate * dt + noise.yaw_sigma * jitter[2]
    return DroneState(position=pos, yaw=yaw, time=t, velocity=v, drift=drift)


def yaw_sweep(state: DroneState, dt: float, yaw_rate: float, sampler,
              noise: ActuationNoise | None = None, rng: np.random.Generator | None = None):
    """Rotate one full turn, calling ``sampler(state)`` before every step.

    Returns the final state and a list of ``(world_yaw, sample)`` pairs.
    """
    if yaw_rate <= 0:
        raise ValueError("yaw_rate must be > 0")
    noise = noise or ActuationNoise()
    rng = rng or np.random.default_rng(0)
    n = math.ceil(2 * math.pi / (yaw_rate * dt) - 1e-9)
    cmd = ControlCommand.yaw(yaw_rate)
    samples = []
    for _ in range(n):
        samples.append((state.yaw, sampler(state)))
        state = step(state, cmd, noise, dt, rng)
    return state, samples


def write_trajectory_csv(path, rows) -> None:
    """rows: iterable of ``(t, x, y, z, yaw, mode)``."""
    buf = io.StringIO()
    buf.write("t,x,y,z,yaw,mode\n")
    for t, x, y, z, yaw, mode in rows:
        buf.write(f"{t:.4f},{x:.6f},{y:.6f},{z:.6f},{yaw:.6f},{mode}\n")
    _atomic_write(path, buf.getvalue())
