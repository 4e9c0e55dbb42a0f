import math

import pytest
from hypothesis import given, strategies as st

from pistab.errors import BracketingError
from pistab.roots import bisect, scan_roots


def test_linear_root():
    assert bisect(lambda y: y - 1, 0.0, 2.0) == pytest.approx(1.0, abs=1e-10)


def test_spurious_bracket():
    r = bisect(lambda y: y * math.exp(-y * y / 10) - 1, 3.5, 3.6)
    assert 3.5 < r < 3.6
    assert abs(r * math.exp(-r * r / 10) - 1) <= 1e-10


def test_root_below_set_point():
    r = bisect(lambda y: y * math.exp(-y / 10) - 2.678794, 3.0, 5.0)
    assert r == pytest.approx(4.0, abs=0.01)
    assert abs(r * math.exp(-r / 10) - 2.678794) <= 1e-10


def test_no_sign_change():
    with pytest.raises(BracketingError):
        bisect(lambda y: y * y + 1, -1.0, 1.0)


def test_exact_endpoint():
    assert bisect(lambda y: y, 0.0, 1.0) == 0.0


@given(st.floats(-100, 100), st.floats(0.01, 50))
def test_bracket_width(root, half):
    r = bisect(lambda y: y - root, root - half, root + 1.3 * half, tol=1e-9)
    assert abs(r - root) <= 1e-9


def test_scan_finds_all_and_flags_tangency():
    res = scan_roots(lambda y: (y - 1) * (y - 2) * (y - 3), 0.0, 4.0, 997)
    assert [round(r.root, 9) for r in res.roots] == [1.0, 2.0, 3.0]
    double = scan_roots(lambda y: (y - 1.50001) ** 2, 0.0, 4.0, 1000)
    assert not double.roots
    assert double.tangencies == [pytest.approx(1.5)]
