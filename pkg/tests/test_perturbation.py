import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from kpert import perturbation as pt
from kpert import spacetime as st
from kpert.bounds import Interval, TruncationReport, time_uniform_slices
from kpert.errors import DomainError, PreconditionError
from kpert.measures import (Atom, ConstDensity, PerturbingMeasure,
                            measure_from_config, restrict_measure)

G = st.gaussian_kernel(1)


# -- measures ----------------------------------------------------------------

def test_measure_validation():
    with pytest.raises(ValueError):
        Atom(0.5, 0.0)
    with pytest.raises(ValueError):
        PerturbingMeasure(atoms=(Atom(0.5, 1.0), Atom(0.5, 1.0)))


def test_measure_from_config_kinds():
    mu = measure_from_config({"density": {"kind": "const", "lambda": 2.0},
                              "atoms": [{"u": 0.25, "eta": 0.5}],
                              "support": [0.0, 1.0]})
    assert float(mu.q(0.5, 0.0)) == 2.0
    assert float(mu.q(1.5, 0.0)) == 0.0       # outside the support
    assert len(mu.active_atoms()) == 1
    with pytest.raises(ValueError):
        measure_from_config({"density": {"kind": "nope"}})


def test_restrict_measure_cases():
    mu = PerturbingMeasure(ConstDensity(1.0), (Atom(1.0, 0.5),))
    assert restrict_measure(mu, Interval(-np.inf, np.inf,
                                         closed_lo=False,
                                         closed_hi=False)).active_atoms()
    empty = restrict_measure(mu, Interval(5.0, 5.0))
    assert not empty.active_atoms()
    assert float(empty.q(0.5, 0.0)) == 0.0
    # endpoint membership decides whether the atom at 1 survives
    dropped = restrict_measure(mu, Interval(0.0, 1.0))           # [0, 1)
    kept = restrict_measure(mu, Interval(0.0, 1.0, closed_hi=True))
    assert not dropped.active_atoms()
    assert kept.active_atoms()


def test_restrict_measure_idempotent():
    mu = PerturbingMeasure(ConstDensity(1.0), (Atom(0.4, 0.5),))
    once = restrict_measure(mu, Interval(0.0, 1.0))
    twice = restrict_measure(once, Interval(0.0, 1.0))
    assert once.time_support == twice.time_support
    assert once.atoms == twice.atoms


# -- terms --------------------------------------------------------------------

def test_pn_zero_measure():
    mu = PerturbingMeasure()
    assert pt.pn_term(G, mu, 3, 0.0, 0.0, 1.0, 0.0) == 0.0
    assert pt.pn_term(G, mu, 0, 0.0, 0.0, 1.0, 0.0) == \
        float(G(0.0, 0.0, 1.0, 0.0))


def test_pn_causality():
    mu = PerturbingMeasure(ConstDensity(1.0))
    for n in range(3):
        assert pt.pn_term(G, mu, n, 1.0, 0.0, 1.0, 0.0) == 0.0
        assert pt.pn_term(G, mu, n, 2.0, 0.0, 1.0, 0.0) == 0.0


def test_pn_atomless_factorial():
    mu = PerturbingMeasure(ConstDensity(1.0))
    p = float(G(0.0, 0.3, 1.0, 0.0))
    p2 = pt.pn_term(G, mu, 2, 0.0, 0.3, 1.0, 0.0, quad_tol=1e-4)
    assert p2 == pytest.approx(p / 2.0, rel=1e-3)


def test_pn_single_atom():
    mu = PerturbingMeasure(atoms=(Atom(0.5, 0.7),))
    p = float(G(0.0, 0.2, 1.0, 0.0))
    assert pt.pn_term(G, mu, 1, 0.0, 0.2, 1.0, 0.0) == \
        pytest.approx(0.7 * p, rel=1e-7)
    assert pt.pn_term(G, mu, 2, 0.0, 0.2, 1.0, 0.0) <= 1e-12 * p
    # atom outside the window contributes nothing
    assert pt.pn_term(G, mu, 1, 0.6, 0.2, 1.0, 0.0) == 0.0
    assert pt.pn_term(G, mu, 1, 0.5, 0.2, 1.0, 0.0) == 0.0   # boundary


# -- series ---------------------------------------------------------------------

def test_series_causality():
    mu = PerturbingMeasure(ConstDensity(1.0))
    r = pt.series(G, mu, 1.5, 0.0, 1.0, 0.0)
    assert r.value == 0.0 and r.status == "converged"


def test_series_atomless_oracle():
    mu = PerturbingMeasure(ConstDensity(1.0))
    r = pt.series(G, mu, 0.0, 0.5, 1.0, 0.0, quad_tol=1e-4)
    assert r.ratio == pytest.approx(math.e, rel=1e-3)
    assert r.status == "converged"
    assert r.quad_error_estimate < 1e-3


def test_series_dirac_oracle_both_branches():
    mu = PerturbingMeasure(atoms=(Atom(0.5, 0.7),))
    inside = pt.series(G, mu, 0.0, 0.1, 1.0, 0.0)
    assert inside.ratio == pytest.approx(1.7, rel=1e-6)
    outside = pt.series(G, mu, 0.6, 0.1, 1.0, 0.0)
    assert outside.ratio == pytest.approx(1.0, rel=1e-12)


def test_series_restriction_consistency():
    # only the measure inside (s, t) can matter
    mu = PerturbingMeasure(ConstDensity(0.5), (Atom(1.5, 0.9), Atom(2.5, 0.4)))
    r_full = pt.series(G, mu, 0.2, 0.1, 1.0, 0.0, quad_tol=1e-4)
    r_cut = pt.series(G, pt.restrict_to_window(mu, 0.2, 1.0),
                      0.2, 0.1, 1.0, 0.0, quad_tol=1e-4)
    assert r_full.value == pytest.approx(r_cut.value, rel=1e-6)


def test_series_measure_monotonicity():
    pts = [(0.0, 0.0), (0.1, 0.4)]
    small = PerturbingMeasure(ConstDensity(0.25))
    large = PerturbingMeasure(ConstDensity(0.5))
    for s, x in pts:
        lo = pt.series(G, small, s, x, 1.0, 0.0, quad_tol=1e-4)
        hi = pt.series(G, large, s, x, 1.0, 0.0, quad_tol=1e-4)
        assert lo.value <= hi.value * (1 + 1e-6)
    small_atoms = PerturbingMeasure(atoms=(Atom(0.5, 0.3),))
    large_atoms = PerturbingMeasure(atoms=(Atom(0.25, 0.2), Atom(0.5, 0.4)))
    for s, x in pts:
        lo = pt.series(G, small_atoms, s, x, 1.0, 0.0)
        hi = pt.series(G, large_atoms, s, x, 1.0, 0.0)
        assert lo.value <= hi.value * (1 + 1e-6)


def test_series_term_positivity_and_causality_grid():
    mu = PerturbingMeasure(ConstDensity(0.5), (Atom(0.6, 0.2),))
    res = pt.series_batch(G, mu, [0.0, 0.3, 1.2], [0.0, -0.5, 0.3], 1.0, 0.0,
                          quad_tol=1e-3)
    for r in res:
        assert all(term >= 0.0 for term in r.terms)
    assert res[2].value == 0.0


# -- alternative atom operator ----------------------------------------------------

def test_alt_atom_kernel_three_cases():
    g = lambda s, x: np.asarray(G(s, x, 1.0, 0.0))
    assert pt.alt_atom_kernel_apply(g, 0.7, 0.0, 0.5, G) == 0.0
    at = pt.alt_atom_kernel_apply(g, 0.5, 0.3, 0.5, G)
    assert at == pytest.approx(float(G(0.5, 0.3, 1.0, 0.0)), rel=1e-14)
    below = pt.alt_atom_kernel_apply(g, 0.2, 0.3, 0.5, G)
    assert below == pytest.approx(float(G(0.2, 0.3, 1.0, 0.0)), rel=1e-8)


def test_multi_atom_iterate_counts():
    assert pt.multi_atom_iterate_count(2, 0) == 1
    assert pt.multi_atom_iterate_count(2, 3) == 4
    assert pt.multi_atom_iterate_count(1, 9) == 1
    for L in range(5):
        for n in range(6):
            brute = sum(1 for _ in itertools.combinations_with_replacement(
                range(L), n)) if L > 0 or n == 0 else 0
            assert pt.multi_atom_iterate_count(L, n) == brute


def test_multi_atom_series_factor():
    assert pt.multi_atom_series_factor(0.5, 0) == 1.0
    assert pt.multi_atom_series_factor(0.5, 3) == 8.0
    assert pt.multi_atom_series_factor(0.5, 1) == 2.0
    partial = sum(0.5 ** n * pt.multi_atom_iterate_count(3, n)
                  for n in range(60))
    assert partial == pytest.approx(8.0, rel=1e-12)
    with pytest.raises(DomainError):
        pt.multi_atom_series_factor(1.0, 2)


def test_multi_atom_operator_iterate_identity():
    op = pt.MultiAtomOperator(G, [0.5], 1.0, 0.0)
    for n in (1, 2, 4):
        assert op.iterate_ratio_at(n, 0.2, 0.3) == pytest.approx(1.0, abs=1e-7)
    assert op.iterate_at(1, 0.7, 0.3) == 0.0


def test_multi_atom_series_matches_closed_form():
    op = pt.MultiAtomOperator(G, [1 / 6, 1 / 2, 5 / 6], 1.0, 0.0)
    for s, L in ((0.05, 3), (0.4, 2), (0.7, 1), (0.95, 0)):
        r = op.series_at(0.5, s, -0.2)
        assert r.ratio == pytest.approx(2.0 ** L, rel=1e-6)
    with pytest.raises(DomainError):
        op.series_at(1.5, 0.1, 0.0)


# -- closed-form perturbed kernels ------------------------------------------------

def test_dirac_perturbed_kernel_fails_composition_at_atom():
    pk = pt.DiracPerturbedKernel(G, 0.5, 0.7)
    r = st.check_chapman_kolmogorov(pk, 0.2, 0.0, 0.5, 1.0, 0.3)
    base = float(G(0.2, 0.0, 1.0, 0.3))
    assert r.residual == pytest.approx(0.7 * base, rel=1e-7)
    assert not pk.ck


def test_alt_atom_perturbed_kernel_satisfies_composition():
    ak = pt.AltAtomPerturbedKernel(G, 0.5, 0.3)
    for u in (0.3, 0.5, 0.8):
        r = st.check_chapman_kolmogorov(ak, 0.2, 0.0, u, 1.0, 0.3)
        assert r.residual <= 1e-8
    assert ak.ck


# -- sliced certification ----------------------------------------------------------

def test_theorem46_zero_measure_trivial():
    intervals = time_uniform_slices(0.0, 1.0, 0.5)
    certs = pt.theorem46_certify(G, PerturbingMeasure(), 0.0, 1.0, 0.0,
                                 intervals, n_samples=4)
    assert all(c.status == "VALID" for c in certs)
    assert all(c.theorem_bound == 1.0 for c in certs)


def test_theorem46_atomless_small():
    lam = 0.5
    intervals = time_uniform_slices(0.0, 1.0, 0.25)
    certs = pt.theorem46_certify(G, PerturbingMeasure(ConstDensity(lam)),
                                 0.0, 1.0, 0.0, intervals, n_samples=8,
                                 quad_tol=1e-4)
    assert all(c.status == "VALID" for c in certs)
    # measured slice constant is lam * h
    assert certs[0].eta == pytest.approx(lam * 0.25, rel=1e-3)


def test_theorem46_hypothesis_fail_on_heavy_atom():
    mu = PerturbingMeasure(atoms=(Atom(0.5, 1.5),))
    intervals = time_uniform_slices(0.0, 1.0, 0.5)
    certs = pt.theorem46_certify(G, mu, 0.0, 1.0, 0.0, intervals,
                                 n_samples=6, quad_tol=1e-3)
    assert any(c.status == "HYPOTHESIS_FAIL" for c in certs)


def test_theorem46_sharpness_with_alt_series():
    eta = 0.5
    times = (1 / 6, 1 / 2, 5 / 6)
    intervals = time_uniform_slices(0.0, 1.0, 1 / 3)
    mu = PerturbingMeasure(atoms=tuple(Atom(u, eta) for u in times))
    op = pt.MultiAtomOperator(G, times, 1.0, 0.0)

    def alt_series(pts):
        vals = np.array([op.series_at(eta, s, x).value for s, x in pts])
        return vals, TruncationReport(80, "converged", 0.0, 1e-6)

    certs = pt.theorem46_certify(G, mu, 0.0, 1.0, 0.0, intervals, eta=eta,
                                 n_samples=6, quad_tol=1e-4,
                                 series_fn=alt_series)
    for j, c in enumerate(certs, start=1):
        assert c.status == "VALID"
        assert c.measured_ratio == pytest.approx(2.0 ** j, rel=1e-3)


def test_corollary47_formula_and_verification():
    mu = PerturbingMeasure(ConstDensity(0.5))
    intervals = time_uniform_slices(0.0, 1.0, 0.5)
    C = pt.corollary47_bound(G, mu, 0.0, 1.0, 0.0, intervals, c=2.0,
                             beta=1.0, n_samples=4)
    assert C == pytest.approx(12.0)
    # beta = k*c is admissible when the per-interval bound holds globally
    C2 = pt.corollary47_bound(G, mu, 0.0, 1.0, 0.0, intervals, c=2.0,
                              beta=2.0 * len(intervals), n_samples=4)
    assert C2 > C
    # c = 1 collapses to the unperturbed case
    assert pt.corollary47_bound(G, PerturbingMeasure(), 0.0, 1.0, 0.0,
                                intervals, c=1.0, beta=1.0, n_samples=4) == 1.0


def test_corollary47_rejects_false_constants():
    mu = PerturbingMeasure(ConstDensity(0.5))
    intervals = time_uniform_slices(0.0, 1.0, 0.5)
    with pytest.raises(PreconditionError):
        pt.corollary47_bound(G, mu, 0.0, 1.0, 0.0, intervals, c=2.0,
                             beta=1e-4, n_samples=4)


def test_localization_check():
    mu = PerturbingMeasure(ConstDensity(0.5))
    assert pt.localization_check(G, mu, Interval(0.4, 0.7), 0.16, 1.0, 0.0,
                                 n_samples=5)
    with pytest.raises(PreconditionError):
        pt.localization_check(pt.DiracPerturbedKernel(G, 0.5, 0.7), mu,
                              Interval(0.4, 0.7), 0.2, 1.0, 0.0)
    with pytest.raises(PreconditionError):    # hypothesis fails inside
        pt.localization_check(G, mu, Interval(0.4, 0.7), 1e-4, 1.0, 0.0,
                              n_samples=5)


def test_kato_certify_statuses():
    ck = st.cauchy_kernel(1)
    mu = PerturbingMeasure(ConstDensity(1.0))
    pts = np.array([[0.5, 0.0], [0.8, 0.3]])
    certs = pt.kato_certify(ck, mu, 0.1, 0.4, 1.0, 0.0, pts, quad_tol=1e-3,
                            max_terms=10)
    assert all(c.status == "VALID" for c in certs)
    with pytest.raises(DomainError):
        pt.kato_certify(ck, mu, 0.1, 1.0, 1.0, 0.0, pts)


def test_kappa_slice_problem_constants():
    prob = pt.KappaSliceProblem(0.05, 0.1, 1.0, 1.0)
    assert prob.analytic_eta == pytest.approx(0.5, rel=1e-12)
    pts = prob.slice_points(1, n=6)
    assert np.all(pts[:, 0] + pts[:, 1] >= prob.levels[1])
    vals = prob.slice_apply(1, pts)
    ctrl = prob.control(pts)
    assert np.all(vals <= prob.analytic_eta * ctrl)


# -- sharpness of the attained bound (series equals closed form) -------------------

@given(hst.floats(0.1, 0.6), hst.floats(-1.0, 1.0))
@settings(max_examples=10, deadline=None)
def test_alt_series_never_exceeds_window_bound(s, x):
    times = (1 / 4, 1 / 2, 3 / 4)
    op = pt.MultiAtomOperator(G, times, 1.0, 0.0)
    eta = 0.5
    r = op.series_at(eta, s, x)
    L = sum(1 for u in times if u >= s)
    assert r.ratio <= (1 - eta) ** (-L) * (1 + 1e-6)
