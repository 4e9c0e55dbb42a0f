import numpy as np
import pytest

from pistab.dynamics import LoopState, ReducedState
from pistab.errors import AmbiguityError, DomainError
from pistab.global_iss import iss_certificate
from pistab.roots import bisect
from pistab.sim import (
    DisturbanceSequence,
    Trajectory,
    convergence_metric,
    detect_saturation,
    rollout_full,
    rollout_full_batch,
    rollout_reduced,
)


def spurious_root(sf):
    s = sf.scenario
    return bisect(lambda y: sf.model.value(0, y) - min(s.b_min + s.v_star, s.a - y), 3.5, 3.6, tol=0.0)


def test_disturbance_cycles():
    d, v = DisturbanceSequence([0, 1], [1.0, 2.0, 3.0]).window(5)
    assert d.tolist() == [0, 1, 0, 1, 0]
    assert v.tolist() == [1.0, 2.0, 3.0, 1.0, 2.0]


@pytest.mark.parametrize("bad", [dict(d_seq=[], v_seq=[1.0]), dict(d_seq=[0], v_seq=[-1.0]), dict(d_seq=[-1], v_seq=[1.0])])
def test_disturbance_validation(bad):
    with pytest.raises(ValueError):
        DisturbanceSequence(**bad)


def test_equilibrium_trajectory_is_constant(ex41):
    s = ex41.scenario
    start = LoopState(s.x_star, s.x_star, s.u_star)
    traj = rollout_full(s, ex41.model, ex41.gains, start, DisturbanceSequence.constant(s.v_star), 50)
    assert np.all(traj.states == np.array(start))
    assert not detect_saturation(traj, s.a)
    assert convergence_metric(traj, s.x_star) == 0.0


def test_converges_from_nearby_state(ex41):
    s = ex41.scenario
    traj = rollout_full(s, ex41.model, ex41.gains, LoopState(12.0, 12.0, 1.0), DisturbanceSequence.constant(s.v_star), 2000)
    assert abs(traj.x[-1] - s.x_star) < 1e-6
    assert convergence_metric(traj, s.x_star) < 1e-6


def test_spurious_equilibrium_is_stationary(ex42):
    s = ex42.scenario
    y = spurious_root(ex42)
    traj = rollout_full(s, ex42.model, ex42.gains, LoopState(y, y, s.b_min), DisturbanceSequence.constant(s.v_star), 20)
    # the fixed point is a saddle, so only a short run stays within rounding of it
    np.testing.assert_allclose(traj.states, np.tile([y, y, s.b_min], (21, 1)), atol=1e-9)


def test_reduced_equilibrium_and_spurious_point(ex42):
    s = ex42.scenario
    traj = rollout_reduced(s, ex42.model, ex42.gains, ReducedState(s.x_star, s.u_star), 100)
    np.testing.assert_allclose(traj.states, np.tile([s.x_star, s.u_star], (101, 1)), atol=1e-12)
    y = spurious_root(ex42)
    traj = rollout_reduced(s, ex42.model, ex42.gains, ReducedState(y, 0.0), 20)
    np.testing.assert_allclose(traj.states, np.tile([y, 0.0], (21, 1)), atol=1e-9)


def test_reduced_converges_inside_certified_set(ex42):
    from pistab.local_stability import gain_matched_certificate

    s = ex42.scenario
    cert = gain_matched_certificate(ex42.model, s, ex42.gains)
    x0 = s.x_star + 0.3
    centre = ex42.model.value(0, x0) - s.v_star - (1 - cert.g) * 0.3
    assert cert.value(x0, centre) < cert.rho
    traj = rollout_reduced(s, ex42.model, ex42.gains, ReducedState(x0, centre), 100_000)
    assert abs(traj.x[-1] - s.x_star) + abs(traj.states[-1, 1] - s.u_star) < 1e-6


def test_saturation_detection():
    pinned = Trajectory(np.tile([16.8, 16.8, 0.0], (11, 1)), np.zeros(10), "full")
    assert detect_saturation(pinned, 16.8)
    assert convergence_metric(pinned, 10.0) == pytest.approx(6.8)


def test_no_saturation_within_margin(ex41):
    s = ex41.scenario
    margin = iss_certificate(ex41.gains, ex41.h2, s).margin
    rng = np.random.default_rng(3)
    v = s.v_star + 0.9 * margin * rng.uniform(-1, 1, 500)
    for start in [(0.0, 0.0, 0.0), (16.8, 16.8, 3.1), (16.8, 0.0, 0.0)]:
        traj = rollout_full(s, ex41.model, ex41.gains, LoopState(*start), DisturbanceSequence([0], v), 5000)
        assert not detect_saturation(traj, s.a)


def test_batch_matches_single(ex41):
    s = ex41.scenario
    rng = np.random.default_rng(0)
    x0, y0 = rng.uniform(0, s.a, (2, 5))
    w0 = rng.uniform(s.b_min, s.b_max, 5)
    v = s.v_star + rng.uniform(0, 0.5, (5, 40))
    batch = rollout_full_batch(s, ex41.model, ex41.gains, x0, y0, w0, v)
    for i in range(5):
        single = rollout_full(s, ex41.model, ex41.gains, LoopState(x0[i], y0[i], w0[i]), DisturbanceSequence([0], v[i]), 40)
        np.testing.assert_array_equal(batch[i], single.states)


def test_rollout_validation(ex41):
    s = ex41.scenario
    with pytest.raises(DomainError):
        rollout_full(s, ex41.model, ex41.gains, LoopState(20.0, 10.0, 1.0), DisturbanceSequence.constant(1.0), 5)
    with pytest.raises(DomainError):
        rollout_full(s, ex41.model, ex41.gains, LoopState(10.0, 10.0, 1.0), DisturbanceSequence([3], [1.0]), 5)
    with pytest.raises(ValueError):
        rollout_reduced(s, ex41.model, ex41.gains, ReducedState(10.0, 1.0), 0)


def test_reduced_needs_single_member(ex41):
    from pistab.dynamics import OutflowModel

    model = OutflowModel.exp_power((1, 0.1, 1), (0.9, 0.1, 1))
    with pytest.raises(AmbiguityError):
        rollout_reduced(ex41.scenario, model, ex41.gains, ReducedState(10.0, 1.0), 5)
