import math
from dataclasses import dataclass

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from gatebath.errors import HeomInstabilityError, HierarchyTooLargeError, ParameterError
from gatebath.exciton import ExcitonSystem, reference_propagate
from gatebath.heom import (
    ANGULAR_PER_CM,
    BathSpec,
    HeomOperator,
    HierarchySpec,
    build_hierarchy,
    build_operator,
    convergence_check,
    correlation_expansion,
    drude_lorentz,
    gamma_ps_to_cm,
    heom_propagate,
    redfield_coherence_rate,
    reorganization_integral,
    terminator_strength,
)

C_CM_PER_FS = 2.99792458e-5
KB_CM_PER_K = 0.6950348
DIMER = ExcitonSystem.symmetric_dimer(100.0)


def test_cutoff_conversion():
    # 100 ps^-1 -> 1e-1 fs^-1 / (2 pi c)
    assert gamma_ps_to_cm(100.0) == pytest.approx(0.1 / (2 * math.pi * C_CM_PER_FS), rel=1e-14)
    assert gamma_ps_to_cm(100.0) == pytest.approx(530.9, abs=0.1)


def test_spectral_density_examples():
    bath = BathSpec(lam=60.0)
    g = bath.gamma_cm
    assert drude_lorentz(0.0, bath) == 0.0
    assert drude_lorentz(g, bath) == pytest.approx(60.0 / 4)
    # second implementation written from the formula
    w = np.linspace(0, 3000, 31)
    np.testing.assert_allclose(drude_lorentz(w, bath), [30.0 * g * x / (g ** 2 + x ** 2) for x in w], rtol=1e-14)


@pytest.mark.parametrize("lam", [15.0, 120.0, 227.0])
def test_reorganization_integral(lam):
    assert reorganization_integral(BathSpec(lam)) == pytest.approx(lam / 2, rel=1e-8)


def test_expansion_examples():
    bath = BathSpec(lam=15.0, gamma_ps=100, temperature=300)
    assert bath.kT == pytest.approx(208.51, abs=0.01)
    terms = correlation_expansion(bath, 2)
    assert terms[0].nu == pytest.approx(bath.gamma_cm)
    assert terms[1].nu == pytest.approx(2 * math.pi * 300 * KB_CM_PER_K)
    assert terms[2].nu == pytest.approx(2 * terms[1].nu)
    assert terms[1].nu_ps == pytest.approx(terms[1].nu * ANGULAR_PER_CM * 1e3)
    assert len(correlation_expansion(bath, 0)) == 1
    assert all(t.c == 0 for t in correlation_expansion(BathSpec(0.0), 3))


def _matsubara_correlation(bath, t_cm, n_terms):
    """C(t) summed directly from the high-order Matsubara series."""
    lam, g, kT = bath.lam, bath.gamma_cm, bath.kT
    val = lam * g * (1 / math.tan(g / (2 * kT)) - 1j) * math.exp(-g * t_cm)
    for k in range(1, n_terms + 1):
        v = 2 * math.pi * k * kT
        val += 4 * lam * g * kT * v / (v * v - g * g) * math.exp(-v * t_cm)
    return val


def test_expansion_sums_to_correlation():
    bath = BathSpec(120.0)
    for t in (2e-4, 1e-3, 5e-3):
        got = sum(term.c * math.exp(-term.nu * t) for term in correlation_expansion(bath, 400))
        assert got == pytest.approx(_matsubara_correlation(bath, t, 400), rel=1e-12)


def test_terminator_shrinks_with_more_terms():
    bath = BathSpec(120.0)
    vals = [terminator_strength(bath, K) for K in range(6)]
    assert all(v >= 0 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # the remaining series falls off as lam gamma / (pi^2 kT K)
    tail = bath.lam * bath.gamma_cm / (math.pi ** 2 * bath.kT * 2000)
    assert terminator_strength(bath, 2000) == pytest.approx(tail, rel=1e-2)


@pytest.mark.parametrize("n_sites,terms,L,count", [(2, 2, 8, 495), (2, 2, 0, 1), (2, 1, 2, 6), (2, 3, 3, 84)])
def test_hierarchy_counts(n_sites, terms, L, count):
    assert len(build_hierarchy(n_sites, terms, L)) == count


def test_hierarchy_order_and_links():
    hi = build_hierarchy(2, 2, 4)
    tiers = hi.indices.sum(axis=1)
    assert np.all(np.diff(tiers) >= 0) and tiers[0] == 0
    for a, row in enumerate(hi.indices):
        for m in range(hi.n_modes):
            up = row.copy()
            up[m] += 1
            if up.sum() <= 4:
                assert np.array_equal(hi.indices[hi.plus[a, m]], up)
            else:
                assert hi.plus[a, m] == -1
            if row[m] > 0:
                down = row.copy()
                down[m] -= 1
                assert np.array_equal(hi.indices[hi.minus[a, m]], down)
            else:
                assert hi.minus[a, m] == -1


def test_hierarchy_memory_guard():
    with pytest.raises(HierarchyTooLargeError):
        build_hierarchy(6, 4, 20)


def test_parameter_checks():
    with pytest.raises(ParameterError):
        BathSpec(-1.0)
    with pytest.raises(ParameterError):
        HierarchySpec(-1, 0)
    with pytest.raises(ParameterError):
        heom_propagate(DIMER, BathSpec(10.0), dt_fs=0.0)


def _dense_heom_generator(system, bath, L, K):
    """Independent HEOM generator as a dense superoperator (column-stacked vec)."""
    N = system.n_sites
    H = np.array(system.coupling_matrix, dtype=complex) + np.diag(system.site_energies)
    terms = correlation_expansion(bath, K)
    modes = [(j, t.c, t.nu) for j in range(N) for t in terms]
    M = len(modes)
    idx = [n for n in np.ndindex(*([L + 1] * M)) if sum(n) <= L]
    pos = {n: i for i, n in enumerate(idx)}
    I = np.eye(N)

    def left(A):
        return np.kron(I, A)

    def right(A):
        return np.kron(A.T, I)

    def comm(A):
        return left(A) - right(A)

    V = [np.diag(I[j]).astype(complex) for j in range(N)]
    delta = terminator_strength(bath, K)
    n2 = N * N
    G = np.zeros((len(idx) * n2, len(idx) * n2), dtype=complex)
    for a, n in enumerate(idx):
        blk = slice(a * n2, (a + 1) * n2)
        diag = -1j * comm(H) - sum(n[m] * modes[m][2] for m in range(M)) * np.eye(n2)
        for j in range(N):
            diag = diag - delta * comm(V[j]) @ comm(V[j])
        G[blk, blk] += diag
        for m, (j, c, _) in enumerate(modes):
            up = list(n)
            up[m] += 1
            if tuple(up) in pos:
                b = pos[tuple(up)]
                G[blk, b * n2:(b + 1) * n2] += -1j * comm(V[j])
            if n[m] > 0:
                dn = list(n)
                dn[m] -= 1
                b = pos[tuple(dn)]
                G[blk, b * n2:(b + 1) * n2] += -1j * n[m] * (c * left(V[j]) - np.conj(c) * right(V[j]))
    return G, len(idx)


@pytest.mark.parametrize("lam,L,K", [(120.0, 3, 0), (60.0, 2, 1), (227.0, 2, 1)])
def test_rk4_propagation_matches_dense_matrix_exponential(lam, L, K):
    bath = BathSpec(lam)
    G, n_ados = _dense_heom_generator(DIMER, bath, L, K)
    tr = heom_propagate(DIMER, bath, HierarchySpec(L, K), dt_fs=1.0, n_steps=200)
    v0 = np.zeros(G.shape[0], dtype=complex)
    v0[0] = 1.0  # rho_00 = |1><1| in column-stacked order
    for step in (20, 80, 200):
        v = sla.expm(G * step * ANGULAR_PER_CM) @ v0
        rho = v[:4].reshape(2, 2, order="F")
        assert tr.P1[step] == pytest.approx(rho[0, 0].real, abs=1e-7)


def test_no_bath_matches_closed_dynamics():
    tr = heom_propagate(DIMER, BathSpec(0.0), HierarchySpec(4, 1), n_steps=300)
    H = np.array([[0.0, 100.0], [100.0, 0.0]])
    ref = reference_propagate(H, 0, tr.times_fs * ANGULAR_PER_CM)
    np.testing.assert_allclose(tr.P1, ref.P1, atol=1e-6)


@pytest.fixture(scope="module")
def default_runs():
    return {lam: heom_propagate(DIMER, BathSpec(lam), n_steps=300) for lam in (15.0, 120.0, 227.0)}


def test_trace_and_hermiticity(default_runs):
    for tr in default_runs.values():
        np.testing.assert_allclose(tr.P1 + tr.P2, 1.0, atol=1e-8)
        assert tr.provenance["max_trace_error"] < 1e-8
        assert tr.provenance["max_hermiticity_error"] < 1e-10
        assert tr.provenance["n_ados"] == 495


def test_weak_bath_oscillates(default_runs):
    p = default_runs[15.0].P1
    extrema = np.sum(np.diff(np.sign(np.diff(p))) != 0)
    assert extrema >= 2


def test_strong_bath_is_overdamped(default_runs):
    p = default_runs[227.0].P1
    # relaxes towards 0.5 without swinging back
    assert np.all(np.diff(p) <= 1e-9)
    assert p.min() > 0.49


def test_populations_relax_to_half():
    tr = heom_propagate(DIMER, BathSpec(120.0), n_steps=1500, dt_fs=1.0)
    assert tr.P1[-1] == pytest.approx(0.5, abs=0.01)


def test_halving_time_step():
    bath = BathSpec(120.0)
    coarse = heom_propagate(DIMER, bath, dt_fs=1.0, n_steps=200)
    fine = heom_propagate(DIMER, bath, dt_fs=1.0, n_steps=200, max_substep_fs=coarse.dt_fs() / (2 * coarse.provenance["substeps"]))
    assert fine.provenance["substeps"] == 2 * coarse.provenance["substeps"]
    assert np.max(np.abs(coarse.P1 - fine.P1)) < 1e-5


def test_weak_coupling_follows_redfield_envelope():
    bath = BathSpec(1.0)
    tr = heom_propagate(DIMER, bath, HierarchySpec(4, 2), n_steps=400)
    rate = redfield_coherence_rate(100.0, bath)
    tau = tr.times_fs * ANGULAR_PER_CM
    model = 0.5 + 0.5 * np.cos(200.0 * tau) * np.exp(-rate * tau)
    assert np.max(np.abs(tr.P1 - model)) < 0.02


def test_convergence_report(default_runs):
    rep = convergence_check(DIMER, BathSpec(120.0), HierarchySpec(4, 0), n_steps=100)
    assert rep.refined == HierarchySpec(6, 1)
    assert rep.to_dict()["converged"] == rep.converged


@dataclass
class _NoStabilityBound(HeomOperator):
    @property
    def max_rate(self):
        return 0.0


def test_instability_is_reported():
    bath = BathSpec(227.0)
    op = build_operator(DIMER, bath, HierarchySpec(8, 1))
    bad = _NoStabilityBound(**{f: getattr(op, f) for f in op.__dataclass_fields__})
    with pytest.raises(HeomInstabilityError):
        heom_propagate(DIMER, bath, HierarchySpec(8, 1), dt_fs=50.0, n_steps=20, max_substep_fs=50.0, operator=bad)


@given(st.floats(0, 250), st.integers(0, 1))
@settings(max_examples=10, deadline=None)
def test_populations_stay_physical(lam, p0):
    tr = heom_propagate(DIMER, BathSpec(lam), HierarchySpec(4, 0), p0=p0, n_steps=120, dt_fs=2.0)
    assert tr.populations.min() > -1e-3 and tr.populations.max() < 1 + 1e-3
    np.testing.assert_allclose(tr.populations.sum(axis=1), 1.0, atol=1e-8)
