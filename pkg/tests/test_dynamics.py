import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import mp_outflow
from pistab.dynamics import (
    ExpPowerOutflow,
    Gains,
    LinearOutflow,
    LoopState,
    OutflowModel,
    ReducedState,
    Scenario,
    check_conditions,
    closed_loop_step,
    outflow,
    outflow_derivative,
    pi_control,
    plant_step,
    reduced_presaturation,
    reduced_step,
    saturate,
)
from pistab.errors import AmbiguityError, DomainError, InvalidBoundsError


class TestSaturate:
    @pytest.mark.parametrize("v, expected", [(2.0, 2.0), (-1.0, 0.0), (5.0, 3.1)])
    def test_clamps(self, v, expected):
        assert saturate(v, 0.0, 3.1) == expected

    def test_inverted_bounds(self):
        with pytest.raises(InvalidBoundsError):
            saturate(1.0, 2.0, 1.0)

    def test_array(self):
        np.testing.assert_array_equal(saturate(np.array([-1.0, 1.0, 9.0]), 0.0, 3.0), [0.0, 1.0, 3.0])

    @given(st.floats(-1e6, 1e6), st.floats(-1e3, 1e3), st.floats(0, 1e3))
    def test_idempotent_and_in_range(self, v, lo, width):
        hi = lo + width
        once = saturate(v, lo, hi)
        assert lo <= once <= hi
        assert saturate(once, lo, hi) == once


class TestOutflow:
    def test_example_values_against_high_precision(self, ex41, ex42):
        assert outflow(ex41.model, 0, 10.0) == pytest.approx(float(mp_outflow(1, 0.1, 1, 10)), rel=1e-15)
        assert outflow(ex42.model, 0, 3.0) == pytest.approx(float(mp_outflow(1, 0.1, 2, 3)), rel=1e-15)
        assert outflow(ex41.model, 0, 10.0) == pytest.approx(3.678794, abs=1e-6)
        assert outflow(ex42.model, 0, 3.0) == pytest.approx(1.219709, abs=1e-6)

    def test_zero_storage_gives_zero_flow(self, ex41, ex42):
        assert outflow(ex41.model, 0, 0.0) == 0.0
        assert outflow(ex42.model, 0, 0.0) == 0.0

    def test_slope_values(self, ex41, ex42):
        assert outflow_derivative(ex41.model, 0, 10.0) == 0.0
        ref = mpmath.diff(lambda x: mp_outflow(1, 0.1, 2, x), mpmath.mpf(3))
        assert outflow_derivative(ex42.model, 0, 3.0) == pytest.approx(float(ref), rel=1e-14)
        assert outflow_derivative(ex42.model, 0, 3.0) == pytest.approx(-0.325255, abs=1e-6)

    @pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
    def test_slope_at_zero_is_p(self, p):
        assert ExpPowerOutflow(p, 0.3, 1.5).slope(0.0) == p

    def test_domain(self, ex41):
        with pytest.raises(DomainError):
            outflow(ex41.model, 0, -0.1)
        with pytest.raises(DomainError):
            outflow(ex41.model, 0, 17.0, a=16.8)
        with pytest.raises(DomainError):
            outflow(ex41.model, 1, 5.0)

    @pytest.mark.parametrize("bad", [(0, 0.1, 1), (1, 0, 1), (1, 0.1, 0)])
    def test_invalid_family_parameters(self, bad):
        with pytest.raises(ValueError):
            ExpPowerOutflow(*bad)

    def test_linear_stub(self):
        m = OutflowModel((LinearOutflow(0.5),))
        assert m.value(0, 4.0) == 2.0
        np.testing.assert_array_equal(m.slope(0, np.linspace(0, 5, 6)), 0.5)

    def test_vectorised_members(self):
        m = OutflowModel.exp_power((1, 0.1, 1), (0.8, 0.1, 1))
        d = np.array([0, 1, 0])
        x = np.array([1.0, 2.0, 3.0])
        expected = [m.members[i].value(xi) for i, xi in zip(d, x)]
        np.testing.assert_allclose(m.value(d, x), expected, rtol=0, atol=0)


class TestChecks:
    def test_examples_validate(self, ex41, ex42):
        for sf in (ex41, ex42):
            rep = check_conditions(sf.scenario, sf.model)
            assert rep.ok and rep.capacity_ok, rep.problems

    def test_six_digit_equilibrium_is_too_coarse(self):
        s = Scenario(16.8, 0.0, 3.1, 10.0, 1.0, 2.678794)
        rep = check_conditions(s, OutflowModel.exp_power((1, 0.1, 1)))
        assert not rep.equilibrium_ok
        assert any("equilibrium balance" in p for p in rep.problems)

    def test_outflow_bound(self, ex41):
        rep = check_conditions(ex41.scenario, OutflowModel.exp_power((1.5, 0.1, 1)))
        assert not rep.outflow_bound_ok
        assert any("outflow bound violated" in p for p in rep.problems)

    def test_interiority(self, ex41):
        s = ex41.scenario
        bad = Scenario(s.a, s.b_min, s.b_max, s.x_star, s.b_min, s.v_star)
        rep = check_conditions(bad, ex41.model)
        assert any("interiority" in p for p in rep.problems)

    @pytest.mark.parametrize("kwargs", [dict(a=0.0), dict(b_min=3.0, b_max=3.0), dict(v_star=-1.0), dict(x_star=math.nan)])
    def test_structural_validation(self, kwargs):
        base = dict(a=16.8, b_min=0.0, b_max=3.1, x_star=10.0, u_star=1.0, v_star=2.0)
        base.update(kwargs)
        with pytest.raises(ValueError):
            Scenario(**base)


class TestPlant:
    def test_equilibrium_is_fixed(self, ex41):
        s = ex41.scenario
        assert plant_step(s, ex41.model, s.x_star, s.u_star, 0, s.v_star) == s.x_star

    def test_full_storage(self, ex41):
        s = ex41.scenario
        assert plant_step(s, ex41.model, s.a, 2.0, 0, 1.0) == s.a - ex41.model.value(0, s.a)

    def test_against_high_precision(self, ex41):
        s = ex41.scenario
        x = mpmath.mpf(12)
        ref = x - mp_outflow(1, 0.1, 1, 12) + min(1 + mpmath.mpf(s.v_star), mpmath.mpf(s.a) - x)
        got = plant_step(s, ex41.model, 12.0, 1.0, 0, s.v_star)
        assert got == pytest.approx(float(ref), abs=1e-13)
        # six-digit inflow as printed in the example
        assert plant_step(s, ex41.model, 12.0, 1.0, 0, 2.678794) == pytest.approx(12.064463, abs=1e-6)

    def test_preconditions(self, ex41):
        s, m = ex41.scenario, ex41.model
        with pytest.raises(DomainError):
            plant_step(s, m, -1.0, 1.0, 0, 1.0)
        with pytest.raises(DomainError):
            plant_step(s, m, 5.0, 4.0, 0, 1.0)
        with pytest.raises(DomainError):
            plant_step(s, m, 5.0, 1.0, 0, -1.0)

    @settings(max_examples=300)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 50))
    def test_stays_in_range(self, fx, fu, v):
        from pistab.scenarios import example

        sf = example("4.1")
        s = sf.scenario
        nxt = plant_step(s, sf.model, fx * s.a, s.b_min + fu * (s.b_max - s.b_min), 0, v)
        assert 0.0 <= nxt <= s.a


class TestController:
    def test_equilibrium(self, ex41):
        s = ex41.scenario
        assert pi_control(ex41.gains, s, s.x_star, s.x_star, s.u_star) == s.u_star

    def test_clamps_to_lower_bound(self, ex41):
        assert pi_control(ex41.gains, ex41.scenario, 11.0, 10.0, 1.0) == 0.0

    def test_zero_gains_identity(self, ex41):
        assert pi_control(Gains(0.0, 0.0), ex41.scenario, 3.0, 7.0, 2.0) == 2.0


class TestClosedLoop:
    def test_equilibrium(self, ex41, ex42):
        for sf in (ex41, ex42):
            s = sf.scenario
            state = LoopState(s.x_star, s.x_star, s.u_star)
            assert closed_loop_step(s, sf.model, sf.gains, state, 0, s.v_star) == state

    def test_known_step(self, ex41):
        s = ex41.scenario
        nxt = closed_loop_step(s, ex41.model, ex41.gains, LoopState(11.0, 10.0, 1.0), 0, s.v_star)
        # the applied input clamps to 0, so only v* enters
        ref = 11 - mp_outflow(1, 0.1, 1, 11) + mpmath.mpf(s.v_star)
        assert nxt.x == pytest.approx(float(ref), abs=1e-13)
        assert nxt.y == 11.0 and nxt.w == 0.0

    @settings(max_examples=200)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 20))
    def test_range_contract(self, fx, fy, fw, v):
        from pistab.scenarios import example

        sf = example("4.1")
        s = sf.scenario
        state = LoopState(fx * s.a, fy * s.a, s.b_min + fw * (s.b_max - s.b_min))
        nxt = closed_loop_step(s, sf.model, sf.gains, state, 0, v)
        assert 0 <= nxt.x <= s.a and 0 <= nxt.y <= s.a and s.b_min <= nxt.w <= s.b_max


class TestReduced:
    def test_equilibrium(self, ex41):
        s = ex41.scenario
        nxt = reduced_step(s, ex41.model, ex41.gains, ReducedState(s.x_star, s.u_star))
        # u* + v* reproduces f(x*) only up to rounding inside the integrator update
        assert nxt == pytest.approx((s.x_star, s.u_star), abs=1e-12)

    def test_known_step(self, ex41):
        s = ex41.scenario
        nxt = reduced_step(s, ex41.model, ex41.gains, ReducedState(11.0, 1.0))
        ref = 11 - mp_outflow(1, 0.1, 1, 11) + 1 + mpmath.mpf(s.v_star)
        assert nxt.x == pytest.approx(float(ref), abs=1e-13)
        assert nxt.w == 0.0
        raw, _ = reduced_presaturation(s, ex41.model.single(), ex41.gains, 11.0, 1.0)
        assert raw == pytest.approx(-0.114, abs=1e-3)

    def test_capacity_branch(self, ex41):
        s = ex41.scenario
        nxt = reduced_step(s, ex41.model, ex41.gains, ReducedState(16.0, 3.0))
        assert nxt.x == pytest.approx(16.0 - float(mp_outflow(1, 0.1, 1, 16)) + 0.8, abs=1e-13)

    def test_requires_single_member(self, ex41):
        model = OutflowModel.exp_power((1, 0.1, 1), (0.9, 0.1, 1))
        with pytest.raises(AmbiguityError):
            reduced_step(ex41.scenario, model, ex41.gains, ReducedState(10.0, 1.0))
