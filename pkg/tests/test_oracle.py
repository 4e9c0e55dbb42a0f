import numpy as np
import pytest

from pistab.dynamics import Gains, LinearOutflow, OutflowModel, Scenario
from pistab.global_iss import iss_certificate
from pistab.local_stability import gain_matched_certificate, in_roa, linearized_certificate
from pistab.oracle import (
    CONVERGED,
    brute_force_roa,
    fd_derivative_check,
    iss_decrease_scan,
    lyapunov_decrease_scan,
    sample_sublevel,
)
from pistab.roots import bisect


class TestDerivatives:
    def test_examples(self, ex41, ex42):
        assert fd_derivative_check(ex41.model, 0, [10.0]).passed
        assert fd_derivative_check(ex42.model, 0, [3.0]).passed
        assert fd_derivative_check(ex42.model, 0, np.linspace(0.1, 20, 500)).worst <= 1e-6

    def test_linear_stub_is_exact(self):
        check = fd_derivative_check(OutflowModel((LinearOutflow(0.5),)), 0, np.linspace(1, 9, 50))
        assert check.worst <= 1e-9

    def test_detects_wrong_slope(self):
        class Bad(LinearOutflow):
            def slope(self, x):
                return super().slope(x) + 1e-3

        assert not fd_derivative_check(OutflowModel((Bad(0.5),)), 0, [1.0]).passed


class TestBruteForce:
    def test_equilibrium_cell_converges(self, ex42):
        s = ex42.scenario
        grid = brute_force_roa(s, ex42.model, ex42.gains, (0, 6), (0, 3), 50, 50, T=1000,
                               anchor=(s.x_star, s.u_star))
        i, j = grid.nearest(s.x_star, s.u_star)
        assert (grid.x[i], grid.w[j]) == (s.x_star, s.u_star)
        assert grid.label(i, j) == "converged"
        assert sum(grid.counts().values()) == 2500

    def test_containment_and_spurious_cell(self, ex42):
        s = ex42.scenario
        y = bisect(lambda v: ex42.model.value(0, v) - 1.0, 3.5, 3.6, tol=0.0)
        grid = brute_force_roa(s, ex42.model, ex42.gains, (0, 6), (0, 3), 80, 80, T=10_000, anchor=(y, 0.0))
        X, W = grid.mesh()
        for make in (gain_matched_certificate, linearized_certificate):
            inside = in_roa(make(ex42.model, s, ex42.gains), X, W)
            assert inside.any() and (grid.verdict[inside] == CONVERGED).all()
        i, j = grid.nearest(y, 0.0)
        assert grid.label(i, j) == "diverged-to-spurious"
        assert grid.counts()["saturated"] > 0

    def test_validation(self, ex42):
        with pytest.raises(ValueError):
            brute_force_roa(ex42.scenario, ex42.model, ex42.gains, (0, 6), (0, 3), 10, 50, T=1000)
        with pytest.raises(ValueError):
            brute_force_roa(ex42.scenario, ex42.model, ex42.gains, (0, 6), (0, 3), 50, 50, T=10)


class TestScans:
    def test_samples_lie_in_sublevel_set(self, ex42):
        cert = gain_matched_certificate(ex42.model, ex42.scenario, ex42.gains)
        x, w = sample_sublevel(cert, 2000, np.random.default_rng(1))
        assert x.size == 2000 and in_roa(cert, x, w).all()
        # triangular density in x: more mass near the set-point than at the rim
        r = np.abs(x - ex42.scenario.x_star) / cert.rho
        assert (r < 0.5).mean() > 0.7

    def test_local_decrease(self, ex41, ex42):
        for sf in (ex41, ex42):
            for make in (gain_matched_certificate, linearized_certificate):
                scan = lyapunov_decrease_scan(make(sf.model, sf.scenario, sf.gains), 3000, seed=2)
                assert scan.worst_slack <= 1e-10 and scan.max_ratio < 1
                assert scan.unclamped_violations == 0 and scan.capacity_violations == 0

    def test_iss_decrease(self, ex41):
        cert = iss_certificate(ex41.gains, ex41.h2, ex41.scenario)
        scan = iss_decrease_scan(cert, ex41.h2, ex41.scenario, ex41.model, ex41.gains, 5000, seed=4)
        assert scan.worst_slack <= 1e-10

    def test_iss_scan_catches_wrong_rate(self, ex41):
        import dataclasses

        cert = dataclasses.replace(iss_certificate(ex41.gains, ex41.h2, ex41.scenario), lam=0.5)
        scan = iss_decrease_scan(cert, ex41.h2, ex41.scenario, ex41.model, ex41.gains, 2000, seed=4)
        assert scan.worst_slack > 0
