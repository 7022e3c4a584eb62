import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from kpert import matrix_kernels as mk
from kpert.bounds import (BoundCertificate, GronwallSequence, Interval,
                          MatrixSliceProblem, SliceConstants, TruncationReport,
                          certify, check_gronwall, corollary_bound,
                          diagonal_levels, estimate_constants, gronwall_bound,
                          smallest_admissible_N, theorem_bound,
                          time_uniform_slices)
from kpert.errors import DomainError, PreconditionError


# -- gronwall ------------------------------------------------------------------

def test_gronwall_bound_examples():
    assert gronwall_bound(1.0, 0.0, 7) == 1.0
    assert gronwall_bound(1.0, 1.0, 4) == 8.0
    assert gronwall_bound(0.0, 3.0, 5) == 0.0
    with pytest.raises(ValueError):
        gronwall_bound(1.0, 1.0, 0)


def test_gronwall_recursion_equality():
    # running the recursion with equality reproduces the closed form
    alpha, delta = 1.0, 1.0
    gamma = []
    for _ in range(6):
        gamma.append(alpha + delta * sum(gamma))
    assert gamma[3] == 8.0
    assert check_gronwall(GronwallSequence(alpha, delta, tuple(gamma)))


def test_gronwall_hypothesis_violation_names_index():
    with pytest.raises(PreconditionError, match="index 1"):
        check_gronwall(GronwallSequence(1.0, 0.5, (2.0,)))


@given(hst.floats(0.0, 4.0), hst.floats(0.0, 2.0),
       hst.lists(hst.floats(0.0, 1.0), min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_gronwall_random_hypothesis_satisfying(alpha, delta, fractions):
    # build gamma_j as a random fraction of its allowed maximum
    gamma = []
    for frac in fractions:
        gamma.append(frac * (alpha + delta * sum(gamma)))
    assert check_gronwall(GronwallSequence(alpha, delta, tuple(gamma)))


# -- bound formulas --------------------------------------------------------------

def test_theorem_bound_examples():
    assert theorem_bound(0.0, 0.0, 9) == 1.0
    assert theorem_bound(0.5, 0.5, 2) == 4.0
    with pytest.raises(DomainError, match="local smallness"):
        theorem_bound(1.0, 0.5, 1)


def test_theorem_bound_matches_power_form():
    for eta in np.linspace(0.0, 0.99, 100):
        for j in (1, 2, 3, 7):
            lhs = theorem_bound(eta, eta, j)
            rhs = (1.0 - eta) ** (-j)
            assert abs(lhs - rhs) <= 1e-12 * rhs


@given(hst.floats(0.01, 0.9), hst.floats(0.0, 3.0), hst.integers(1, 10))
@settings(max_examples=100, deadline=None)
def test_theorem_bound_monotone(eta, beta, j):
    b = theorem_bound(eta, beta, j)
    assert theorem_bound(min(eta + 0.05, 0.95), beta, j) > b * (1 - 1e-12)
    assert theorem_bound(eta, beta + 0.1, j) >= b
    assert theorem_bound(eta, beta, j + 1) >= b


def test_corollary_bound_examples():
    # c=2, N=2 gives eta = 2 * (1/2)^2 = 1/2
    assert corollary_bound(2.0, 2, 1.0, 1) == pytest.approx(4.0)
    with pytest.raises(DomainError, match="larger N"):
        corollary_bound(2.0, 1, 1.0, 1)
    with pytest.raises(ValueError):
        corollary_bound(1.0, 2, 1.0, 1)


def test_smallest_admissible_N():
    assert smallest_admissible_N(1.0) == 1
    assert smallest_admissible_N(2.0) == 2
    c = 3.0
    N = smallest_admissible_N(c)
    assert c * (1 - 1 / c) ** N < 1 <= c * (1 - 1 / c) ** (N - 1)


# -- constants and certification ---------------------------------------------------

def fixture_problem():
    K = mk.MatrixKernel([[0.5, 0, 0], [0.25, 0.5, 0], [0.25, 0.25, 0.5]])
    chain = mk.AbsorbingChain(tuple(
        mk.StateSet.from_indices(3, range(j + 1)) for j in range(3)))
    return MatrixSliceProblem(K, np.ones(3), chain)


def test_estimate_constants_zero_kernel():
    K = mk.MatrixKernel(np.zeros((2, 2)))
    chain = mk.AbsorbingChain((mk.StateSet.from_indices(2, [0]),
                               mk.StateSet.full(2)))
    const = estimate_constants(MatrixSliceProblem(K, np.ones(2), chain))
    assert const.eta == 0.0 and const.beta == 0.0


def test_estimate_constants_scaled_identity_exact():
    eta = 0.375
    K = mk.MatrixKernel(eta * np.eye(2))
    chain = mk.AbsorbingChain((mk.StateSet.full(2),))
    const = estimate_constants(MatrixSliceProblem(K, np.ones(2), chain))
    assert const.per_slice_eta == (eta,)
    assert const.exact


def test_estimate_constants_flags_zero_control():
    K = mk.MatrixKernel([[0.0, 0.0], [0.5, 0.0]])
    chain = mk.AbsorbingChain((mk.StateSet.full(2),))
    const = estimate_constants(MatrixSliceProblem(K, np.array([1.0, 0.0]),
                                                  chain))
    assert math.isinf(const.eta)


def test_certify_zero_kernel_valid():
    K = mk.MatrixKernel(np.zeros((2, 2)))
    chain = mk.AbsorbingChain((mk.StateSet.from_indices(2, [0]),
                               mk.StateSet.full(2)))
    prob = MatrixSliceProblem(K, np.ones(2), chain)
    certs = certify(prob, estimate_constants(prob))
    assert all(c.status == "VALID" for c in certs)
    assert all(c.measured_ratio == 1.0 for c in certs)
    assert all(c.theorem_bound >= 1.0 for c in certs)


def test_certify_fixture_ratios():
    prob = fixture_problem()
    const = estimate_constants(prob)
    assert const.eta == 0.5 and const.beta == 0.5
    certs = certify(prob, const)
    measured = [c.measured_ratio for c in certs]
    assert all(c.status == "VALID" for c in certs)
    for got, cap in zip(measured, (2.0, 4.0, 8.0)):
        assert got <= cap * (1 + 1e-9)


def test_certify_requires_smallness():
    prob = fixture_problem()
    bad = SliceConstants((1.0, 1.0, 1.0), (1.0, 1.0, 1.0), exact=True)
    with pytest.raises(PreconditionError):
        certify(prob, bad)


def test_certify_invalid_when_constants_understated():
    # claiming eta far below the truth must surface as INVALID, not pass
    prob = fixture_problem()
    lied = SliceConstants((0.05, 0.05, 0.05), (0.05, 0.05, 0.05), exact=True)
    certs = certify(prob, lied)
    assert certs[0].status == "INVALID"


def test_certificate_serialization_keys():
    cert = BoundCertificate(1, 0.5, 0.5, 2.0, 1.5, "VALID", 10,
                            TruncationReport(3, "converged", 0.0, 1e-9))
    doc = cert.to_dict()
    assert set(doc) == {"slice", "eta", "beta", "bound", "measured_ratio",
                        "margin", "status", "samples", "truncation", "note"}
    assert doc["margin"] == pytest.approx(0.5)


@given(hst.integers(0, 2 ** 31 - 1))
@settings(max_examples=60, deadline=None)
def test_soundness_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    K, chain = mk.random_absorbing_instance(rng, contractive=True)
    prob = MatrixSliceProblem(K, np.ones(K.n), chain)
    const = estimate_constants(prob)
    if const.eta < 1.0:
        assert all(c.status == "VALID" for c in certify(prob, const))


@given(hst.integers(0, 2 ** 31 - 1))
@settings(max_examples=40, deadline=None)
def test_corollary_bound_dominates_measured_series(seed):
    rng = np.random.default_rng(seed)
    K, chain = mk.random_absorbing_instance(rng, contractive=True)
    f = np.ones(K.n)
    slices = chain.slices
    # per-slice summability constant for K_j = K 1_{S_j}
    c = 1.0
    for S in slices:
        Kj = mk.restrict(K, S, "right")
        g = mk.neumann_series(Kj, f).value
        c = max(c, float(np.max(g[S.mask] / f[S.mask])))
    beta = max(float(np.max(mk.apply(K, f)[chain.sets[-1].mask])), 0.0)
    if c <= 1.0:
        return
    c = c * (1 + 1e-12)
    N = smallest_admissible_N(c)
    g_full = mk.neumann_series(K, f).value
    for j, S in enumerate(slices, start=1):
        if not np.any(S.mask):
            continue
        measured = float(np.max(g_full[S.mask] / f[S.mask]))
        assert measured <= corollary_bound(c, N, beta, j) * (1 + 1e-9)


# -- slicing helpers ---------------------------------------------------------------

def test_time_uniform_slices_partition():
    slices = time_uniform_slices(0.0, 1.0, 0.3)
    assert len(slices) == 4
    assert slices[0].hi == 1.0 and slices[-1].lo == 0.0
    for a, b in zip(slices, slices[1:]):
        assert b.hi == a.lo           # ordered downward from the target


def test_interval_membership():
    i = Interval(0.0, 1.0)
    assert bool(i.contains(0.0)) and not bool(i.contains(1.0))
    j = Interval(0.0, 1.0, closed_lo=False, closed_hi=True)
    assert not bool(j.contains(0.0)) and bool(j.contains(1.0))


def test_diagonal_levels():
    levels, k = diagonal_levels(1.0, 1.0, 0.55)
    assert k == 4
    assert levels[0] > 2.0 >= levels[1]
    assert levels[-1] == 0.0
    assert all(a > b for a, b in zip(levels, levels[1:]))
