import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from accflow.core import Accident, AccidentSet, DegenerateMeasureError, Discrete, Uniform, point_mass
from accflow.events import (
    ADD,
    DRAW_CAPACITY,
    DRAW_EVENT,
    DRAW_KIND,
    DRAW_POSITION,
    DRAW_REMOVAL,
    DRAW_SIZE,
    DRAW_TYPE,
    N_DRAWS,
    NONE,
    REMOVE,
    AccidentParams,
    EventLog,
    as_draws,
    draw_stream,
    event_probabilities,
    step_accidents,
)


def degenerate(u):
    raise DegenerateMeasureError("empty")


def at(x):
    return lambda u: x


def draws(**kw):
    d = np.full(N_DRAWS, 0.5)
    names = {"event": DRAW_EVENT, "kind": DRAW_KIND, "type": DRAW_TYPE, "position": DRAW_POSITION,
             "size": DRAW_SIZE, "capacity": DRAW_CAPACITY, "removal": DRAW_REMOVAL}
    for k, v in kw.items():
        d[names[k]] = v
    return d


def test_draw_order_constants():
    assert (DRAW_EVENT, DRAW_KIND, DRAW_TYPE, DRAW_POSITION, DRAW_SIZE, DRAW_CAPACITY, DRAW_REMOVAL) == tuple(range(7))


def test_draw_stream_equals_sequential_blocks():
    block = draw_stream(np.random.SeedSequence([3, 1]), 50)
    rng = np.random.default_rng(np.random.SeedSequence([3, 1]))
    for n in range(50):
        np.testing.assert_array_equal(block[n], rng.random(N_DRAWS))


def test_as_draws_shape_checked():
    with pytest.raises(ValueError):
        as_draws(np.zeros(6))
    assert as_draws(np.random.default_rng(0)).shape == (N_DRAWS,)


@given(st.floats(0, 50), st.integers(0, 10), st.floats(0, 2), st.floats(1e-5, 0.1))
def test_event_probabilities_sum_to_one(rate, M, lam_r, dt):
    p = event_probabilities(rate, M, lam_r, dt)
    assert abs(sum(p) - 1.0) <= 1e-12
    assert all(0.0 <= q <= 1.0 for q in p)


def test_removal_share():
    p0, padd, prem = event_probabilities(0.03, 2, 0.25, 0.001)
    assert prem / (padd + prem) == pytest.approx(0.5 / 0.53, rel=1e-14)
    assert p0 == pytest.approx(1 - 0.001 * 0.53, rel=1e-14)
    assert event_probabilities(0.03, 0, 0.25, 0.001)[2] == 0.0


def test_probability_clamped():
    assert event_probabilities(2000.0, 0, 0.25, 0.001) == (0.0, 1.0, 0.0)


P = AccidentParams(cap_dist=point_mass(0.99))


def test_zero_rate_no_event():
    acc, u, l = step_accidents(AccidentSet(), 0.0, 0.001, P, draws(event=0.0), at(1.0), at(2.0), 0.5, 0.0)
    assert (len(acc), u, l) == (0, NONE, 0)


def test_forced_accident_with_point_mass_capacity():
    log = EventLog()
    acc, u, l = step_accidents(AccidentSet(), 1.0, 0.001, P, draws(event=0.0, type=0.2), at(1.0), at(2.0), 0.5, 0.3, log)
    assert (u, l) == (ADD, 1)
    assert (acc[0].p, acc[0].c) == (1.0, 0.99)
    assert acc[0].s == pytest.approx(0.6, rel=1e-15)
    assert [(e.event, e.j, e.t) for e in log] == [("add", 1, 0.3)]


def test_type_threshold_picks_sampler():
    kw = dict(rate_new=1.0, dt=0.001, params=P, sample_type1=at(1.0), sample_type2=at(2.0), beta=0.5, t=0.0)
    assert step_accidents(AccidentSet(), draws=draws(event=0.0, type=0.7), **kw)[0][0].p == 2.0
    assert step_accidents(AccidentSet(), draws=draws(event=0.0, type=0.3), **kw)[0][0].p == 1.0
    kw["beta"] = 1.0
    assert step_accidents(AccidentSet(), draws=draws(event=0.0, type=0.999), **kw)[0][0].p == 1.0
    kw["beta"] = 0.0
    assert step_accidents(AccidentSet(), draws=draws(event=0.0, type=0.0), **kw)[0][0].p == 2.0


def test_degenerate_component_falls_back():
    acc, u, _ = step_accidents(AccidentSet(), 1.0, 0.001, P, draws(event=0.0, type=0.1), degenerate, at(2.0), 0.5, 0.0)
    assert u == ADD and acc[0].p == 2.0
    acc, u, _ = step_accidents(AccidentSet(), 1.0, 0.001, P, draws(event=0.0), degenerate, degenerate, 0.5, 0.0)
    assert u == NONE and len(acc) == 0


def test_removal_empties_single_accident():
    acc = AccidentSet((Accident(0.0, 1.0, 0.5),))
    log = EventLog()
    new, u, l = step_accidents(acc, 0.0, 0.001, P, draws(event=0.0, kind=0.9, removal=0.99), at(1), at(2), 0.5, 1.0, log)
    assert (len(new), u, l) == (0, REMOVE, 1)
    assert log.events[0].event == "remove"


def test_removal_index_uniform():
    acc = AccidentSet(tuple(Accident(float(k), 1.0, 0.5) for k in range(4)))
    picked = [step_accidents(acc, 0.0, 0.001, P, draws(event=0.0, removal=u), at(1), at(2), 0.5, 0.0)[2] for u in (0.0, 0.26, 0.51, 0.99)]
    assert picked == [1, 2, 3, 4]


def test_cap_reached_drops_accident():
    p = AccidentParams(K_cap=1)
    acc = AccidentSet((Accident(0.0, 1.0, 0.5),))
    new, u, _ = step_accidents(acc, 1e6, 0.001, p, draws(event=0.0, kind=0.0), at(1), at(2), 0.5, 0.0)
    assert new is acc and u == NONE


@given(st.lists(st.floats(0, 0.999), min_size=N_DRAWS, max_size=N_DRAWS), st.floats(0, 0.999))
def test_unused_draws_do_not_matter(d, other):
    """Without an event, every other draw is irrelevant; with an addition, the removal draw is."""
    d = np.array(d)
    base = step_accidents(AccidentSet(), 0.5, 0.001, P, d, at(1), at(2), 0.5, 0.0)
    e = d.copy()
    if d[DRAW_EVENT] >= 0.0005:
        e[1:] = other
    else:
        e[DRAW_REMOVAL] = other
    assert step_accidents(AccidentSet(), 0.5, 0.001, P, e, at(1), at(2), 0.5, 0.0) == base


def test_params_validation():
    with pytest.raises(ValueError):
        AccidentParams(cap_dist=Discrete((0.5, 1.0), (0.5, 0.5)))
    with pytest.raises(ValueError):
        AccidentParams(c_max=1.0)
    with pytest.raises(ValueError):
        AccidentParams(size_dist=Uniform(0.0, 1.0))
    with pytest.raises(ValueError):
        AccidentParams(beta=1.5)
    p = AccidentParams.from_shares(0.1, 0.2, 0.25)
    assert (p.lambda_F, p.lambda_D) == pytest.approx((0.025, 0.15))
    assert AccidentParams(beta_macro=0.3).macro_beta == 0.3
