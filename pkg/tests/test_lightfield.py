import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from irlanding.lightfield import (
    DegenerateFieldError,
    Environment,
    GridFormatError,
    LambertianBulbRegressor,
    LightSource,
    MeasuredFieldGrid,
    Surface,
    bounce_irradiance,
    direct_irradiance,
    field_gradient,
    fit_bulb_model,
    load_field_grid,
    los_visible,
    sample_source_grid,
    save_field_grid,
    total_irradiance,
)
from irlanding.scenario import reference_environments, reference_fields
from oracles import bounce_oracle, symbolic_gradient


def wall_y1(x0=-1.0, x1=1.0, z0=0.0, z1=2.0, rho=0.5):
    return Surface([(x0, 1.0, z0), (x1, 1.0, z0), (x1, 1.0, z1), (x0, 1.0, z1)], rho)


# --- occlusion ---------------------------------------------------------------

def test_empty_environment_always_visible():
    env = Environment(LightSource())
    assert los_visible((0, 0, 1), (5, -3, 2), env)


def test_wall_blocks_segment_through_centre():
    env = Environment(LightSource(position=(0, 0, 0.5)), [wall_y1()])
    assert not los_visible((0, 0, 1), (0, 2, 1), env)


def test_opening_between_two_panels_is_visible():
    env = Environment(LightSource(position=(0, 0, 0.5)),
                      [wall_y1(-1.0, -0.2), wall_y1(0.2, 1.0)])
    assert los_visible((0, 0, 1), (0, 2, 1), env)
    assert not los_visible((0, 0, 1), (1.0, 2, 1), env)


coord = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord))
def test_los_visible_is_symmetric(a, b):
    env = reference_environments()["env4"].environment
    if np.allclose(a, b):
        return
    assert los_visible(a, b, env) == los_visible(b, a, env)


# --- direct term ---------------------------------------------------------------

def test_direct_examples():
    env = Environment(LightSource(power=1, lambert_exponent=1))
    assert direct_irradiance((0, 0, 1), env) == pytest.approx(1.0)
    assert direct_irradiance((0, 0, -1), env) == 0.0
    assert direct_irradiance((1, 0, 1), env) == pytest.approx(math.cos(math.pi / 4) / 2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0, 2 * math.pi), st.floats(0.1, 5), st.floats(1.01, 3))
def test_direct_nonincreasing_along_ray(theta, phi, d, k):
    env = Environment(LightSource(lambert_exponent=1.3))
    u = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    assert direct_irradiance(u * d * k, env) <= direct_irradiance(u * d, env)


def test_bulb_plane_has_single_peak_on_axis():
    env = Environment(LightSource(lambert_exponent=1.3))
    xs = np.linspace(-2, 2, 81)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, 1.1)])
    vals = total_irradiance(pts, env)
    best = np.flatnonzero(vals == vals.max())
    assert len(best) == 1
    assert np.allclose(pts[best[0], :2], 0.0)


# --- bounce term ---------------------------------------------------------------

def test_bounce_zero_without_surfaces_or_reflectance():
    src = LightSource(position=(0, 0, 0.5))
    assert bounce_irradiance((0.3, 0.2, 1), Environment(src)) == 0.0
    assert bounce_irradiance((0.3, 0.2, 1), Environment(src, [wall_y1(rho=0.0)])) == 0.0


def test_bounce_monotone_in_reflectance():
    src = LightSource(position=(0, 0, 0.5), axis=(0, 1, 0))
    p = (0.4, 0.2, 1.2)
    vals = [bounce_irradiance(p, Environment(src, [wall_y1(rho=r)], patch_size=0.1))
            for r in (0.0, 0.2, 0.5, 0.9)]
    assert np.all(np.diff(vals) >= 0) and vals[-1] > 0
    assert vals[2] == pytest.approx(vals[1] * 2.5, rel=1e-12)




def test_bounce_matches_fine_quadrature():
    src = LightSource(position=(0, 0, 0.5), axis=(0, 1, 0), lambert_exponent=1.3)
    panel = Surface([(-0.5, 1, 0), (0.5, 1, 0), (0.5, 1, 1), (-0.5, 1, 1)], 0.6)
    p = (0.3, 0.1, 0.8)
    env = Environment(src, [panel], patch_size=0.05)
    oracle = bounce_oracle(src, 0.6, p)
    assert bounce_irradiance(p, env) == pytest.approx(oracle, rel=0.02)


def test_total_is_additive():
    env = Environment(LightSource(), ambient_dc=0.1)
    assert total_irradiance((0, 0, 1), env) == pytest.approx(1.1)


def test_occluded_point_sees_only_bounce_and_ambient():
    src = LightSource(position=(0, 0, 0.5), axis=(0, 1, 0))
    env = Environment(src, [wall_y1(rho=0.5)], ambient_dc=0.05, patch_size=0.1)
    p = (0.0, 2.0, 1.0)
    assert direct_irradiance(p, env) == 0.0
    assert total_irradiance(p, env) == pytest.approx(0.05 + bounce_irradiance(p, env))


def test_door_path_shows_jump_at_los_transition():
    env = reference_environments()["env4"].environment
    src = env.source.emitter_position
    xs = np.linspace(1.6, -0.2, 181)
    pts = np.column_stack([xs, np.full_like(xs, 3.5), np.ones_like(xs)])
    vis = np.array([los_visible(q, src, env) for q in pts])
    k = int(np.argmax(vis))
    assert 0 < k and not vis[k - 1]
    vals = total_irradiance(pts, env)
    assert vals[k] / vals[k - 1] >= 2.0


# --- gradient -----------------------------------------------------------------

def test_gradient_horizontal_zero_on_axis():
    env = Environment(LightSource(lambert_exponent=0.0))
    g = field_gradient((0, 0, 1.3), env)
    assert abs(g[0]) < 1e-6 and abs(g[1]) < 1e-6




@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_symbolic_derivative(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.5, 0.5, 3)
    axis = np.array([0.2, -0.1, 1.0])
    src = LightSource(position=pos, axis=axis, power=1.7, lambert_exponent=1.3)
    oracle = symbolic_gradient(sp.Rational(17, 10), sp.Rational(13, 10),
                                [sp.Float(v, 30) for v in pos], [sp.Rational(2, 10), sp.Rational(-1, 10), 1])
    env = Environment(src)
    for _ in range(4):
        p = pos + np.array([*rng.uniform(-1, 1, 2), rng.uniform(0.5, 1.5)])
        g = field_gradient(p, env)
        want = oracle(p)
        assert np.linalg.norm(g - want) <= 1e-4 * np.linalg.norm(want)


def test_imported_bulb_gradient_points_inward():
    env = Environment(reference_fields()["bulb"])
    for x in (0.3, 0.8, 1.5):
        assert field_gradient((x, 0.0, 1.1), env)[0] < 0


# --- grids --------------------------------------------------------------------

def test_bilinear_cell_centre(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("x,y,z,intensity\n0,0,1,0\n1,0,1,1\n0,1,1,2\n1,1,1,3\n")
    g = load_field_grid(path)
    assert g.dims == (2, 2, 1)
    assert g.intensity(np.array([[0.5, 0.5, 1.0]]))[0] == pytest.approx(1.5)
    # one-height grids extrude along z
    assert g.intensity(np.array([[0.5, 0.5, 3.0]]))[0] == pytest.approx(1.5)


def test_negative_sample_reports_row(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("x,y,z,intensity\n0,0,1,0\n1,0,1,-1\n0,1,1,2\n1,1,1,3\n")
    with pytest.raises(GridFormatError, match="negative sample at row 3"):
        load_field_grid(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("x,y,z,intensity\n0,0,1,0\n1,0,1\n")
    with pytest.raises(GridFormatError):
        load_field_grid(path)


def test_grid_round_trip_is_lossless(tmp_path):
    src = LightSource(power=2.0, lambert_exponent=1.3)
    g = sample_source_grid(src, np.linspace(-1, 1, 11), np.linspace(-1, 1, 9), [0.7, 1.0, 1.3], "syn")
    save_field_grid(g, tmp_path / "g.csv")
    back = load_field_grid(tmp_path / "g.csv")
    assert np.max(np.abs(back.samples - g.samples)) == 0.0
    assert np.array_equal(back.origin, g.origin)


def test_grid_interpolation_exact_on_nodes():
    src = LightSource(lambert_exponent=1.3)
    g = sample_source_grid(src, np.linspace(-1, 1, 5), np.linspace(-1, 1, 5), [0.8, 1.2])
    assert np.allclose(g.intensity(g.node_positions()), g.node_values(), rtol=1e-12)


# --- bulb fit -----------------------------------------------------------------

def test_fit_recovers_synthetic_bulb():
    src = LightSource(power=2.0, lambert_exponent=1.3)
    g = sample_source_grid(src, np.linspace(-1, 1, 21), np.linspace(-1, 1, 21), [0.8, 1.0, 1.2])
    fit, resid = fit_bulb_model(g)
    assert fit.power == pytest.approx(2.0, rel=0.01)
    assert fit.lambert_exponent == pytest.approx(1.3, rel=0.01)
    assert resid < 1e-6


def test_fit_rejects_constant_field():
    g = MeasuredFieldGrid((-1, -1, 1), (0.1, 0.1, 1), np.full((21, 21, 1), 0.5))
    with pytest.raises(DegenerateFieldError):
        fit_bulb_model(g)


def test_bimodal_field_fits_much_worse_than_bulb():
    fields = reference_fields()
    _, r_bulb = fit_bulb_model(fields["bulb"])
    _, r_two = fit_bulb_model(fields["nolens"])
    assert r_two >= 5 * max(r_bulb, 1e-3)


def test_regressor_follows_estimator_protocol():
    est = LambertianBulbRegressor(floor_fraction=0.05)
    assert est.get_params()["floor_fraction"] == 0.05
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    with pytest.raises(ValueError):
        est.fit(np.zeros((5, 2)), np.zeros(5))
    with pytest.raises(ValueError):
        est.fit(np.full((30, 3), np.nan), np.ones(30))


def test_surface_validation():
    with pytest.raises(ValueError):
        Surface([(0, 0, 0), (1, 0, 0), (1, 1, 0.5), (0, 1, 0)])
    with pytest.raises(ValueError):
        Surface([(0, 0, 0), (1, 0, 0), (1, 1, 0)])
    with pytest.raises(ValueError):
        Environment(LightSource(), ambient_dc=-1)
