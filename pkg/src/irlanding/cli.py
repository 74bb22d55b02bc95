"""Command-line driver: YAML scenario configs, runs, sweeps, field tools.

Exit codes: 0 success (Landed, or sweep success rate at/above its floor),
1 bad input, 2 Failed (or sweep below floor), 3 Timeout.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import fields, replace

import click
import numpy as np
import yaml

from .dynamics import ActuationNoise
from .guidance import GuidanceParams
from .lightfield import (
    Environment,
    GridFormatError,
    LightSource,
    Surface,
    _atomic_write,
    fit_bulb_model,
    load_field_grid,
)
from .scenario import (
    CALIBRATED_PARAMS,
    REFERENCE_NOISE,
    SIDE_RESPONSE,
    GridSpec,
    ScenarioConfig,
    compute_operating_range,
    make_layout,
    reference_bulb,
    reference_environments,
    reference_fields,
    run_scenario,
    sweep_start_grid,
    write_heatmap_csv,
    write_heatmap_svg,
    write_run_outputs,
    write_stats_json,
)
from .sensing import InterferenceModel

__all__ = ["main", "ConfigError", "load_config", "build_scenario", "EXIT_OK", "EXIT_INPUT",
           "EXIT_FAILED", "EXIT_TIMEOUT"]

EXIT_OK, EXIT_INPUT, EXIT_FAILED, EXIT_TIMEOUT = 0, 1, 2, 3
DEFAULT_OUT = "irlanding-out"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


# Allowed keys per section. ``None`` marks a leaf; a dict a nested section.
_SOURCE_KEYS = {"position": None, "axis": None, "power": None, "lambert_exponent": None}
_SURFACE_KEYS = {"corners": None, "reflectance": None, "opaque": None}
_SCHEMA = {
    "environment": {
        "reference": None, "start_name": None, "source": _SOURCE_KEYS, "field_grid": None,
        "surfaces": None, "ambient_dc": None, "patch_size": None,
    },
    "layout": {"kind": None, "count": None, "radius": None},
    "controller": None,
    "start": None,
    "start_yaw": None,
    "dt": None,
    "max_time": None,
    "sensor_noise": None,
    "sweep": {"x_range": None, "y_range": None, "nx": None, "ny": None, "z": None,
              "workers": None, "success_floor": None},
    "noise": {"preset": None, "velocity_sigma": None, "yaw_sigma": None, "drift_bias": None,
              "drift_sigma": None, "drift_interval": None},
    "params": {f.name: None for f in fields(GuidanceParams)},
    "interference": {"amplitude": None, "period": None, "duty": None, "phase": None},
    "range": {"variants": None, "height": None, "r_max": None, "step": None, "adc_bits": None},
    "seed": None,
}


def _check_keys(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigError(f"unknown key '{where}'")
        sub = schema[key]
        if sub is not None and value is not None:
            _check_keys(value, sub, where)
    if path == "environment":
        for k, s in enumerate(doc.get("surfaces") or []):
            _check_keys(s, _SURFACE_KEYS, f"environment.surfaces[{k}]")


def load_config(path) -> dict:
    """Parse and key-check a YAML config; returns the raw mapping."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    doc = {} if doc is None else doc
    _check_keys(doc, _SCHEMA)
    return doc


def _num(doc, key, path, default):
    value = doc.get(key, default)
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}{key}: expected a number, got {value!r}") from None


def _build_environment(doc: dict, base_dir: str):
    """Environment plus the named start it suggests (may be None)."""
    ambient = _num(doc, "ambient_dc", "environment.", 0.0)
    patch = _num(doc, "patch_size", "environment.", 0.25)
    ref = doc.get("reference")
    if ref is not None:
        if any(k in doc for k in ("source", "field_grid", "surfaces")):
            raise ConfigError("environment.reference cannot be combined with source, "
                              "field_grid or surfaces")
        envs = reference_environments(patch_size=patch, ambient_dc=ambient)
        if ref in envs:
            entry = envs[ref]
            name = doc.get("start_name") or next(iter(entry.starts))
            if name not in entry.starts:
                raise ConfigError(f"environment.start_name: {ref} has starts "
                                  f"{sorted(entry.starts)}, not {name!r}")
            return entry.environment, entry.starts[name]
        if ref == "bulb":
            return Environment(reference_bulb(), ambient_dc=ambient, patch_size=patch), None
        fields_ = reference_fields()
        if ref in fields_:
            return Environment(fields_[ref], ambient_dc=ambient, patch_size=patch), None
        raise ConfigError(f"environment.reference: unknown name {ref!r}")

    if "field_grid" in doc and "source" in doc:
        raise ConfigError("environment: give either source or field_grid, not both")
    try:
        if "field_grid" in doc:
            gpath = os.path.join(base_dir, str(doc["field_grid"]))
            source = load_field_grid(gpath)
        else:
            source = LightSource(**(doc.get("source") or {})) if "source" in doc \
                else reference_bulb()
        surfaces = [Surface(np.asarray(s["corners"], float), float(s.get("reflectance", 0.5)),
                            bool(s.get("opaque", True)))
                    for s in (doc.get("surfaces") or [])]
        return Environment(source, surfaces, ambient_dc=ambient, patch_size=patch), None
    except GridFormatError as exc:
        raise ConfigError(f"environment.field_grid: {exc}") from None
    except KeyError as exc:
        raise ConfigError(f"environment.surfaces: missing {exc}") from None
    except (TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"environment: {exc}") from None


def _build_noise(doc):
    if doc is None:
        return ActuationNoise()
    doc = dict(doc)
    preset = doc.pop("preset", None)
    base = {"reference": REFERENCE_NOISE, "none": ActuationNoise(), None: ActuationNoise()}
    if preset not in base:
        raise ConfigError(f"noise.preset: expected 'reference' or 'none', got {preset!r}")
    try:
        if "drift_bias" in doc:
            doc["drift_bias"] = tuple(float(v) for v in doc["drift_bias"])
        return replace(base[preset], **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"noise: {exc}") from None


def build_scenario(doc: dict, base_dir: str = ".", seed: int | None = None) -> ScenarioConfig:
    """Turn a key-checked config mapping into a validated :class:`ScenarioConfig`."""
    env, named_start = _build_environment(doc.get("environment") or {}, base_dir)

    lay = doc.get("layout") or {}
    controller = str(doc.get("controller", "hybrid"))
    kind = lay.get("kind", "hybrid" if controller == "hybrid" else controller)
    try:
        layout = make_layout(kind, int(lay.get("count", 3)), float(lay.get("radius", 0.04)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"layout: {exc}") from None

    dt = _num(doc, "dt", "", 0.02)
    if dt is not None and not dt > 0:
        raise ConfigError(f"dt must be > 0 s, got {dt}")
    try:
        params = replace(CALIBRATED_PARAMS, dt=dt, **(doc.get("params") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None

    grid = None
    if doc.get("sweep") is not None:
        s = {k: v for k, v in doc["sweep"].items() if k not in ("workers", "success_floor")}
        try:
            grid = GridSpec(**{k: tuple(v) if k.endswith("range") else v for k, v in s.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sweep: {exc}") from None

    interference = None
    if doc.get("interference") is not None:
        try:
            interference = InterferenceModel(**doc["interference"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"interference: {exc}") from None

    start = doc.get("start", named_start if named_start is not None else (3.0, 0.0, 1.0))
    try:
        start = tuple(float(v) for v in start)
    except (TypeError, ValueError):
        raise ConfigError(f"start: expected [x, y, z] in m, got {start!r}") from None
    if seed is None:
        seed = int(doc.get("seed", 0))
    cfg = ScenarioConfig(
        environment=env, layout=layout, controller=controller, start=start,
        start_yaw=_num(doc, "start_yaw", "", 0.0), grid=grid, dt=dt,
        max_time=_num(doc, "max_time", "", 60.0), seed=seed,
        noise=_build_noise(doc.get("noise")), params=params,
        sensor_noise=bool(doc.get("sensor_noise", True)), interference=interference)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# click plumbing


def _common(f):
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Master seed (u64); overrides the config.")(f)
    f = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                     help="Output directory.")(f)
    f = click.option("--quiet", is_flag=True, default=None, help="Only print errors.")(f)
    return f


def _opts(ctx, seed, out, quiet):
    g = ctx.find_root().obj or {}
    return (seed if seed is not None else g.get("seed"),
            out or g.get("out") or DEFAULT_OUT,
            bool(quiet if quiet is not None else g.get("quiet")))


def _say(quiet, msg):
    if not quiet:
        click.echo(msg)


def _fail_input(msg) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_INPUT)


def _load(path, seed):
    try:
        doc = load_config(path)
        return doc, build_scenario(doc, os.path.dirname(os.path.abspath(path)), seed)
    except ConfigError as exc:
        _fail_input(exc)


@click.group()
@_common
@click.pass_context
def main(ctx, seed, out, quiet):
    """IR light-field drone landing simulator."""
    ctx.obj = {"seed": seed, "out": out, "quiet": quiet}


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@_common
@click.pass_context
def simulate(ctx, config, seed, out, quiet):
    """Run one scenario; writes trajectory.csv, modes.csv, result.json."""
    seed, out, quiet = _opts(ctx, seed, out, quiet)
    _, cfg = _load(config, seed)
    res = run_scenario(cfg)
    paths = write_run_outputs(out, res)
    detail = f" ({res.reason})" if res.reason else ""
    off = f", offset {res.landing_offset:.3f} m" if res.landing_offset is not None else ""
    _say(quiet, f"{res.outcome}{detail} after {res.elapsed:.2f} s{off}")
    _say(quiet, "modes: " + " -> ".join(res.modes))
    for p in paths:
        _say(quiet, f"wrote {p}")
    sys.exit({"Landed": EXIT_OK, "Failed": EXIT_FAILED}.get(res.outcome, EXIT_TIMEOUT))


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@_common
@click.pass_context
def sweep(ctx, config, seed, out, quiet):
    """Run every start cell of the config's sweep grid."""
    seed, out, quiet = _opts(ctx, seed, out, quiet)
    doc, cfg = _load(config, seed)
    if cfg.grid is None:
        _fail_input("sweep: config has no 'sweep' section")
    opts = doc["sweep"]
    floor = float(opts.get("success_floor", 0.9))
    res = sweep_start_grid(cfg, workers=int(opts.get("workers", 1)))
    os.makedirs(out, exist_ok=True)
    write_heatmap_csv(os.path.join(out, "heatmap.csv"), res)
    write_heatmap_svg(os.path.join(out, "heatmap.svg"), res)
    write_stats_json(os.path.join(out, "stats.json"), res)
    st = res.stats
    mean_off = st["mean_offset_m"]
    _say(quiet, f"{st['landed']}/{st['cells']} landed, success {st['success_rate']:.2f}"
         + (f", mean offset {mean_off:.3f} m, mean time {st['mean_time_s']:.2f} s"
            if mean_off is not None else ""))
    sys.exit(EXIT_OK if st["success_rate"] >= floor else EXIT_FAILED)


@main.group()
def field():
    """Field-grid tools: import, fit, slice."""


def _read_grid(path):
    try:
        return load_field_grid(path)
    except (GridFormatError, ValueError, OSError) as exc:
        _fail_input(exc)


@field.command("import")
@click.argument("grid", type=click.Path(dir_okay=False))
@_common
@click.pass_context
def field_import(ctx, grid, seed, out, quiet):
    """Validate a grid CSV and print its shape."""
    _, _, quiet = _opts(ctx, seed, out, quiet)
    g = _read_grid(grid)
    nx, ny, nz = g.dims
    _say(quiet, f"ok: {nx}x{ny}x{nz} nodes, spacing {g.spacing}, peak {g.samples.max():.6g}")
    sys.exit(EXIT_OK)


@field.command("fit")
@click.argument("grid", type=click.Path(dir_okay=False))
@_common
@click.pass_context
def field_fit(ctx, grid, seed, out, quiet):
    """Fit the Lambertian bulb model and print its parameters."""
    _, _, quiet = _opts(ctx, seed, out, quiet)
    g = _read_grid(grid)
    try:
        src, resid = fit_bulb_model(g)
    except (RuntimeError, ValueError) as exc:
        _fail_input(f"fit failed: {exc}")
    p, a = src.position, src.axis
    _say(quiet, f"position {p[0]:.4f} {p[1]:.4f} {p[2]:.4f}")
    _say(quiet, f"axis {a[0]:.4f} {a[1]:.4f} {a[2]:.4f}")
    _say(quiet, f"power {src.power:.6g}")
    _say(quiet, f"lambert_exponent {src.lambert_exponent:.6g}")
    _say(quiet, f"rms_relative_residual {resid:.3e}")
    sys.exit(EXIT_OK)


@field.command("slice")
@click.argument("grid", type=click.Path(dir_okay=False))
@click.option("--axis", type=click.Choice(["x", "y"]), default="x", show_default=True)
@click.option("--height", type=float, required=True, help="Slice height z (m).")
@click.option("--at", "at", type=float, default=0.0, show_default=True,
              help="Coordinate of the other horizontal axis (m).")
@click.option("--step", type=float, default=None, help="Sample spacing (m); default grid spacing.")
@_common
@click.pass_context
def field_slice(ctx, grid, axis, height, at, step, seed, out, quiet):
    """Write an axis cross-section CSV (``s,x,y,z,intensity``)."""
    _, out, quiet = _opts(ctx, seed, out, quiet)
    g = _read_grid(grid)
    k = 0 if axis == "x" else 1
    lo = g.origin[k]
    hi = lo + g.spacing[k] * (g.dims[k] - 1)
    h = step if step is not None else g.spacing[k]
    if not h > 0:
        _fail_input("--step must be > 0")
    s = lo + h * np.arange(int(math.floor((hi - lo) / h + 1e-9)) + 1)
    pts = np.zeros((len(s), 3))
    pts[:, k] = s
    pts[:, 1 - k] = at
    pts[:, 2] = height
    try:
        vals = g.intensity(pts)
    except ValueError as exc:
        _fail_input(exc)
    lines = ["s,x,y,z,intensity"]
    lines += [f"{si:.6f},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{v:.9g}" for si, p, v in zip(s, pts, vals)]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"slice_{axis}.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    _say(quiet, f"argmax {axis}={s[int(np.argmax(vals))]:.4f}; wrote {path}")
    sys.exit(EXIT_OK)


@main.command("range")
@click.argument("config", type=click.Path(dir_okay=False))
@_common
@click.pass_context
def range_cmd(ctx, config, seed, out, quiet):
    """Operating range of each layout variant (table: variant, r_min, r_max)."""
    seed, out, quiet = _opts(ctx, seed, out, quiet)
    doc, cfg = _load(config, seed)
    opts = doc.get("range") or {}
    variants = opts.get("variants", ["downward", "side", "hybrid"])
    bad = [v for v in variants if v not in ("downward", "side", "hybrid")]
    if bad:
        _fail_input(f"range.variants: unknown {bad}")
    try:
        side = replace(SIDE_RESPONSE, adc_bits=int(opts.get("adc_bits", SIDE_RESPONSE.adc_bits)))
    except ValueError as exc:
        _fail_input(f"range.adc_bits: {exc}")
    height = float(opts.get("height", 1.0))
    rows = ["variant,r_min_m,r_max_m"]
    _say(quiet, f"{'variant':<10} {'r_min':>8} {'r_max':>8}")
    for v in variants:
        lo, hi = compute_operating_range(v, height, cfg.environment,
                                         r_max=float(opts.get("r_max", 30.0)),
                                         step_m=float(opts.get("step", 0.01)),
                                         params=cfg.params, side_response=side)
        rows.append(f"{v},{lo:.3f},{hi:.3f}")
        _say(quiet, f"{v:<10} {lo:8.2f} {hi:8.2f}")
    os.makedirs(out, exist_ok=True)
    _atomic_write(os.path.join(out, "range.csv"), "\n".join(rows) + "\n")
    sys.exit(EXIT_OK)


if __name__ == "__main__":  # pragma: no cover
    main()
