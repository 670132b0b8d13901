import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from accflow.core import (
    NO_ACCIDENTS,
    Accident,
    AccidentSet,
    DegenerateMeasureError,
    Discrete,
    PiecewiseDensity,
    RoadConfig,
    Uniform,
    accident_capacity,
    distribution_from_spec,
    distribution_to_spec,
    equidistant_positions,
    flux,
    initial_positions,
    integrate_density,
    lagrangian_velocity,
    lipschitz_estimate,
    quantile_positions,
    road_capacity,
    sample_atoms,
    sample_piecewise_uniform,
    total_capacity,
    velocity,
)


def covered_by_loop(x, acc, road):
    """Direct periodic test: some shifted copy of x lies in [p - s/2, p + s/2]."""
    out = 1.0
    for a in acc:
        hit = any(a.p - a.s / 2 <= x + k * road.length <= a.p + a.s / 2 for k in (-1, 0, 1))
        if hit:
            out *= 1 - a.c
    return out


accidents = st.lists(
    st.builds(
        Accident,
        p=st.floats(-10, 9.999),
        s=st.floats(0.05, 3.0),
        c=st.sampled_from([0.0, 0.3, 0.5, 0.9, 0.99]),
    ),
    max_size=6,
).map(lambda a: AccidentSet(tuple(a)))


# -- road capacity -------------------------------------------------------------


def test_road_capacity_away_from_jumps(ref_road):
    assert road_capacity(-5.0, ref_road) == 7.0
    assert road_capacity(2.5, ref_road) == 5.0


def test_road_capacity_ramp_midpoint_is_mean_of_sides(ref_road):
    assert road_capacity(0.0, ref_road, smoothed=True) == pytest.approx(6.0, abs=1e-14)
    assert road_capacity(5.0, ref_road, smoothed=True) == pytest.approx(6.0, abs=1e-14)


def test_unsmoothed_capacity_is_left_closed(ref_road):
    assert road_capacity(0.0, ref_road, smoothed=False) == 5.0
    assert road_capacity(5.0, ref_road, smoothed=False) == 7.0
    assert road_capacity(-1e-9, ref_road, smoothed=False) == 7.0


def test_uniform_road_capacity(unit_road):
    x = np.linspace(-10, 10, 101)
    assert np.all(road_capacity(x, unit_road) == 1.0)


def test_smoothed_capacity_lipschitz_bound(ref_road):
    slope = lipschitz_estimate(lambda x: road_capacity(x, ref_road), -10, 10, 400_001)
    assert slope <= 2.0 / ref_road.smoothing_width * (1 + 1e-6)


@given(st.floats(-10, 10))
def test_smoothed_equals_step_outside_ramps(x):
    road = RoadConfig(a=-10, b=10, base_factor=7, segments=((0, 5, 5),), smoothing_width=0.02)
    if min(abs(x), abs(x - 5), abs(x + 10), abs(x - 10)) > 0.011:
        assert road_capacity(x, road) == road_capacity(x, road, smoothed=False)


def test_road_rejects_bad_configs():
    with pytest.raises(ValueError):
        RoadConfig(a=1, b=0)
    with pytest.raises(ValueError):
        RoadConfig(segments=((0, 5, 0.0),))
    with pytest.raises(ValueError):
        RoadConfig(segments=((0, 5, 2.0), (4, 6, 3.0)))
    with pytest.raises(ValueError):
        RoadConfig(periodic=False)


# -- accident capacity ---------------------------------------------------------


def test_no_accidents_is_one(ref_road):
    assert np.all(accident_capacity(np.linspace(-10, 9.9, 50), NO_ACCIDENTS, ref_road) == 1.0)


def test_single_accident_centre(ref_road):
    acc = AccidentSet((Accident(1.5, 1.0, 0.5),))
    assert accident_capacity(1.5, acc, ref_road) == 0.5
    assert accident_capacity(2.2, acc, ref_road) == 1.0


def test_overlapping_accidents_multiply(ref_road):
    acc = AccidentSet((Accident(1.5, 1.0, 0.5), Accident(1.6, 1.0, 0.99)))
    assert accident_capacity(1.5, acc, ref_road) == pytest.approx(0.005, rel=1e-12)


def test_accident_wraps_across_road_end(ref_road):
    acc = AccidentSet((Accident(9.8, 1.0, 0.5),))
    assert accident_capacity(-9.8, acc, ref_road) == 0.5
    assert accident_capacity(-9.6, acc, ref_road) == 1.0
    assert accident_capacity(9.5, acc, ref_road) == 0.5


def test_total_capacity_examples(ref_road):
    road7 = RoadConfig(base_factor=7.0)
    assert total_capacity(3.0, NO_ACCIDENTS, road7) == 7.0
    acc = AccidentSet((Accident(2.5, 1.0, 0.5),))
    assert total_capacity(2.5, acc, ref_road) == 2.5


@given(accidents, st.lists(st.floats(-10, 9.999), min_size=1, max_size=20))
def test_accident_capacity_matches_direct_loop(acc, xs):
    road = RoadConfig()
    got = accident_capacity(np.array(xs), acc, road)
    want = np.array([covered_by_loop(x, acc, road) for x in xs])
    np.testing.assert_allclose(got, want, rtol=1e-14)


@given(accidents, st.floats(-10, 9.999))
def test_total_capacity_bounds(acc, x):
    road = RoadConfig(base_factor=7, segments=((0, 5, 5),))
    c = total_capacity(x, acc, road)
    assert (1 - 0.99) ** len(acc) * 5 <= c <= 7
    assert c > 0


@given(accidents, st.floats(-10, 9.999), st.randoms(use_true_random=False))
def test_accident_capacity_order_independent(acc, x, r):
    road = RoadConfig()
    perm = list(acc)
    r.shuffle(perm)
    a = accident_capacity(x, acc, road)
    b = accident_capacity(x, AccidentSet(tuple(perm)), road)
    assert a == pytest.approx(b, rel=1e-14)


def test_accident_validation():
    with pytest.raises(ValueError):
        Accident(0.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        Accident(0.0, 1.0, 1.0)


def test_accident_set_remove():
    acc = AccidentSet((Accident(0, 1, 0.5), Accident(1, 1, 0.9)))
    assert acc.remove(0).accidents == (Accident(1, 1, 0.9),)
    with pytest.raises(IndexError):
        acc.remove(2)


# -- velocity and flux ---------------------------------------------------------


@given(st.floats(0.1, 10), st.floats(0, 1))
def test_flux_shape(c, rho):
    assert flux(c, 0.0) == 0.0 and flux(c, 1.0) == 0.0
    assert flux(c, rho) <= flux(c, 0.5) + 1e-15
    assert 0.0 <= velocity(rho) <= 1.0


@given(st.floats(1.0, 1e6))
def test_lagrangian_velocity_identity(w):
    assert lagrangian_velocity(w) == velocity(1.0 / w)


# -- distributions and samplers -----------------------------------------------


def test_distributions():
    u = Uniform(0.2, 1.0)
    assert u.ppf(0.0) == 0.2 and u.ppf(0.5) == pytest.approx(0.6)
    d = Discrete((0.5, 0.99), (0.5, 0.5))
    assert d.ppf(0.2) == 0.5 and d.ppf(0.7) == 0.99
    assert distribution_from_spec(distribution_to_spec(d)) == d
    assert distribution_from_spec({"uniform": [0.2, 1.0]}) == u
    assert distribution_from_spec(0.99).ppf(0.3) == 0.99
    with pytest.raises(ValueError):
        distribution_from_spec({"normal": [0, 1]})


def test_piecewise_uniform_inversion():
    starts, widths = np.array([0.0, 1.0]), np.array([1.0, 1.0])
    assert sample_piecewise_uniform(starts, widths, np.array([3.0, 1.0]), 0.75) == pytest.approx(1.0)
    assert sample_piecewise_uniform(starts, widths, np.array([3.0, 1.0]), 0.375) == pytest.approx(0.5)
    for u in np.linspace(0, 0.999, 20):
        assert 1.0 <= sample_piecewise_uniform(starts, widths, np.array([0.0, 2.0]), u) <= 2.0


def test_atoms_and_degenerate():
    pts = np.array([1.0, 2.0])
    assert sample_atoms(pts, np.array([0.3, 0.1]), 0.74) == 1.0
    assert sample_atoms(pts, np.array([0.3, 0.1]), 0.76) == 2.0
    with pytest.raises(DegenerateMeasureError):
        sample_atoms(pts, np.zeros(2), 0.5)


# -- initial data --------------------------------------------------------------


def test_equidistant_positions(ref_road):
    x = equidistant_positions(ref_road, 4)
    np.testing.assert_allclose(x, [-10, -5, 0, 5])


def test_step_density_mass_is_exact(ref_road):
    rho = PiecewiseDensity(0.4, ((0.0, 5.3, 0.8), (1.0, 2.0, 0.1)))
    assert integrate_density(rho, ref_road) == pytest.approx(0.4 * 14.7 + 0.8 * 4.3 + 0.1, rel=1e-14)
    assert integrate_density(0.4, ref_road) == 8.0


def test_quantile_positions_carry_equal_mass(ref_road):
    rho = PiecewiseDensity(0.2, ((0.0, 5.0, 0.6),))
    x, L = quantile_positions(rho, ref_road, 40)
    assert L == pytest.approx(integrate_density(rho, ref_road) / 40, rel=1e-9)
    h = np.append(np.diff(x), x[0] + 20 - x[-1])

    def mass(lo, hi):
        edges = np.unique(np.clip([lo, hi, 0.0, 5.0], lo, hi))
        return float(np.sum(rho(0.5 * (edges[1:] + edges[:-1])) * np.diff(edges)))

    np.testing.assert_allclose([mass(lo, lo + hh) for lo, hh in zip(x, h)], L, rtol=1e-9)
    np.testing.assert_array_equal(initial_positions(0.4, ref_road, 8), equidistant_positions(ref_road, 8))


def test_piecewise_density_rejects_out_of_range():
    with pytest.raises(ValueError):
        PiecewiseDensity(1.2)
    assert math.isclose(float(PiecewiseDensity(0.4)(np.array(3.0))), 0.4)
