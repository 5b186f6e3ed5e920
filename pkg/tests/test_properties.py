import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from magdrift import action, catalog, spectral
from magdrift.spectral import CountResult

finite = dict(allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.9, **finite), st.floats(0.0, 0.9, **finite),
       st.floats(-0.7, 0.7, **finite), st.floats(-0.7, 0.7, **finite))
def test_eta_nonincreasing_in_r(r1, r2, x1, x2):
    m = catalog.ex_13_6_34_ii(k=1.3, l1=0.5, l2=1.0, tau=1)
    lo, hi = sorted((r1, r2))
    assert action.eta(m, [x1, x2], hi) <= action.eta(m, [x1, x2], lo) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.8, **finite), st.floats(0.0, 0.8, **finite), st.integers(3, 6))
def test_fiber_count_monotone_in_level(t1, t2, e):
    m = catalog.ex_13_6_34_ii(k=1, l1=1, l2=1, tau=1, h=2.0**-e)
    lo, hi = sorted((t1, t2))
    assert spectral.fiber_count(m, [0.2, 0.1], 0.1, tau_level=lo) <= spectral.fiber_count(m, [0.2, 0.1], 0.1, tau_level=hi)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 2.0, **finite), st.floats(0.2, 2.0, **finite), st.floats(1.0, 8.0, **finite),
       st.floats(0.05, 0.5, **finite), st.floats(0.05, 2.0, **finite))
def test_lattice_count_oracle(l, k, mu, h, tau):
    brute = sum(
        1
        for j in range(int(tau / (k * h)) + 2)
        for i in range(int(tau * mu / (l * h)) + 2)
        if (2 * i + 1) * l * h / mu + (2 * j + 1) * k * h < tau
    )
    assert spectral.lattice_count(l, k, mu, h, tau) == brute


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31 - 1), st.floats(-5, 5, **finite))
def test_sturm_matches_dense(n, seed, shift):
    rng = np.random.default_rng(seed)
    d, e = rng.normal(size=n) * 2, rng.normal(size=n - 1)
    assert int(spectral.sturm_count(d, e, shift)) == spectral.dense_count(d, e, shift)


@given(st.integers(0, 10**6), st.floats(-1e6, 1e6, **finite))
def test_remainder_identity(n, a):
    c = CountResult(1.0, 0.5, 1.0, "pauli", n, a, "lattice", "lattice_weyl")
    assert c.remainder == n - a
    assert c.row()["remainder"] == c.remainder
