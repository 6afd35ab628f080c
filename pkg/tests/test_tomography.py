import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evblab.coincidence import CoincidenceHistogram, PolarBinning
from evblab.errors import (
    ConfigurationError,
    ConvergenceError,
    InsufficientDataError,
)
from evblab.polarimetry import standard_set
from evblab.qplate_state import BELL_STATES
from evblab.tomography import (
    angular_tomography,
    assert_physical,
    bell_decomposition,
    concurrence,
    fidelity,
    forward_probabilities,
    linear_inversion,
    mle_refine,
    project_physical,
    purity,
)

TSET = standard_set()
PSI_MINUS = BELL_STATES["psi_minus"]


def random_state(rng):
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def werner(p):
    return p * np.outer(PSI_MINUS, PSI_MINUS.conj()) + (1 - p) * np.eye(4) / 4


# ---------------------------------------------------------------------------
# Linear inversion

def test_inversion_pure_hh():
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1.0
    counts = forward_probabilities(rho, TSET) * 5000
    rec = linear_inversion(counts, TSET)
    np.testing.assert_allclose(rec, rho, atol=1e-12)


def test_inversion_singlet():
    rho = np.outer(PSI_MINUS, PSI_MINUS.conj())
    rec = linear_inversion(forward_probabilities(rho, TSET), TSET)
    np.testing.assert_allclose(rec, rho, atol=1e-12)


def test_inversion_equal_counts_gives_maximally_mixed():
    # forward model of I/4 produces equal counts in every complete basis;
    # verify the round trip from the forward model rather than assuming
    rho = np.eye(4) / 4
    probs = forward_probabilities(rho, TSET)
    quartet = [TSET.labels.index(l) for l in ("HH", "HV", "VH", "VV")]
    assert np.allclose(probs[quartet], 0.25)
    rec = linear_inversion(probs * 300, TSET)
    np.testing.assert_allclose(rec, rho, atol=1e-12)


def test_inversion_round_trip_random_states():
    rng = np.random.default_rng(10)
    for _ in range(100):
        rho = random_state(rng)
        rec = linear_inversion(forward_probabilities(rho, TSET), TSET)
        assert np.linalg.norm(rec - rho) < 1e-10


def test_inversion_errors():
    with pytest.raises(InsufficientDataError):
        linear_inversion(np.zeros(16), TSET)
    with pytest.raises(ValueError):
        linear_inversion(-np.ones(16), TSET)
    with pytest.raises(ValueError):
        linear_inversion(np.ones(4), TSET)


# ---------------------------------------------------------------------------
# Physical projection

def test_project_identity_on_physical():
    rng = np.random.default_rng(11)
    rho = random_state(rng)
    np.testing.assert_allclose(project_physical(rho), rho, atol=1e-12)


def test_project_waterfilling_example():
    # diag(1.1, 0.1, -0.1, -0.1): the accumulated negative mass (-0.2) wipes
    # out the 0.1 eigenvalue and shifts the top one to 1.0
    m = np.diag([1.1, 0.1, -0.1, -0.1]).astype(complex)
    out = project_physical(m)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(out)),
                               [0.0, 0.0, 0.0, 1.0], atol=1e-12)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)


def test_project_waterfilling_oracle():
    # brute-force oracle: minimize Frobenius distance over the probability
    # simplex of eigenvalues via fine grid search on a 2d slice
    m = np.diag([0.7, 0.5, -0.1, -0.1]).astype(complex)
    out = project_physical(m)
    lam = np.sort(np.linalg.eigvalsh(out))[::-1]
    # oracle from scipy: project eigenvalues onto simplex
    from scipy.optimize import minimize

    def cost(x):
        return np.sum((np.sort(x)[::-1] - np.array([0.7, 0.5, -0.1, -0.1])) ** 2)

    best = minimize(
        cost,
        x0=[0.6, 0.4, 0.0, 0.0],
        bounds=[(0, 1)] * 4,
        constraints={"type": "eq", "fun": lambda x: np.sum(x) - 1},
        method="SLSQP",
    )
    np.testing.assert_allclose(lam, np.sort(best.x)[::-1], atol=1e-6)


def test_project_trace_preserved_and_psd():
    rng = np.random.default_rng(12)
    for _ in range(50):
        h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = (h + h.conj().T) / 2
        h = h / np.trace(h).real if np.trace(h).real > 0 else h + np.eye(4)
        h = h / np.trace(h).real
        out = project_physical(h)
        assert np.trace(out).real == pytest.approx(1.0, abs=1e-10)
        assert np.linalg.eigvalsh(out).min() >= -1e-12


def test_project_rejects_non_hermitian():
    m = np.eye(4, dtype=complex)
    m[0, 1] = 1.0
    with pytest.raises(ValueError):
        project_physical(m)


# ---------------------------------------------------------------------------
# MLE

def test_mle_exact_counts_high_fidelity():
    rng = np.random.default_rng(13)
    for _ in range(20):
        rho = random_state(rng)
        counts = forward_probabilities(rho, TSET) * 2000
        init = project_physical(linear_inversion(counts, TSET))
        out = mle_refine(init, counts, TSET, tol=1e-9)
        assert fidelity(out, rho) >= 1 - 1e-8


def test_mle_noisy_counts_bell_state():
    rng = np.random.default_rng(14)
    rho = np.outer(PSI_MINUS, PSI_MINUS.conj())
    hits = 0
    for _ in range(20):
        counts = rng.poisson(forward_probabilities(rho, TSET) * 10_000)
        init = project_physical(linear_inversion(counts, TSET))
        try:
            out = mle_refine(init, counts, TSET, tol=1e-7)
        except ConvergenceError as exc:
            out = exc.best
        if fidelity(out, rho) >= 0.99:
            hits += 1
    assert hits >= 19  # 95% of trials at these statistics


def test_mle_likelihood_never_decreases():
    # reconstruct with a generous tolerance and track the likelihood by
    # reevaluating it on the iterates via a tiny wrapper
    rng = np.random.default_rng(15)
    rho = werner(0.8)
    counts = rng.poisson(forward_probabilities(rho, TSET) * 500)
    init = project_physical(linear_inversion(counts, TSET))
    vs = TSET.projector_vectors()

    def mean_ll(rho_hat):
        p = np.real(np.einsum("ki,ij,kj->k", vs.conj(), rho_hat, vs))
        p = p / p.sum()
        keep = counts > 0
        return float(np.sum(counts[keep] * np.log(p[keep])) / counts.sum())

    out = mle_refine(init, counts, TSET, tol=1e-8)
    assert mean_ll(out) >= mean_ll(init) - 1e-12


def test_mle_gradient_matches_finite_differences():
    # central finite differences of the mean log-likelihood in the
    # factorized parameterization, at random physical points
    rng = np.random.default_rng(16)
    vs = TSET.projector_vectors()
    counts = rng.uniform(10, 500, size=16)

    def mean_ll_of_T(T):
        ptilde = np.abs(vs @ T.T) ** 2
        p = ptilde.sum(axis=1)
        s = p.sum()
        return float(np.sum(counts * np.log(p)) / counts.sum() - math.log(s) * 1.0)

    for _ in range(10):
        T = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        # analytic Wirtinger gradient, as used by the optimizer
        ptilde = np.abs(vs @ T.T).__pow__(2).sum(axis=1)
        S = np.einsum("ki,kj->ij", vs, vs.conj())
        s = np.real(np.einsum("ij,jk,ik->", T, S, T.conj()))
        G = np.einsum("k,ki,kj->ij", counts / (ptilde * counts.sum()), vs, vs.conj())
        W = T @ G - (T @ S) / s
        eps = 1e-6
        for idx in [(0, 0), (1, 2), (3, 1)]:
            for direction, part in ((1.0, np.real), (1j, np.imag)):
                dT = np.zeros((4, 4), dtype=complex)
                dT[idx] = direction * eps
                fd = (mean_ll_of_T(T + dT) - mean_ll_of_T(T - dT)) / (2 * eps)
                analytic = 2 * part(W[idx])
                assert abs(fd - analytic) / max(abs(fd), 1e-12) < 1e-5


def test_mle_zero_counts_rejected():
    with pytest.raises(InsufficientDataError):
        mle_refine(np.eye(4) / 4, np.zeros(16), TSET)


# ---------------------------------------------------------------------------
# Metrics

def test_concurrence_bell_and_mixed():
    assert concurrence(np.outer(PSI_MINUS, PSI_MINUS.conj())) == pytest.approx(1.0, abs=1e-12)
    assert concurrence(np.eye(4) / 4) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", np.linspace(0, 1, 6))
def test_concurrence_werner_curve(p):
    assert concurrence(werner(p)) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-9)


def test_concurrence_rejects_unphysical():
    with pytest.raises(ValueError):
        concurrence(np.diag([1.2, 0.2, -0.2, -0.2]).astype(complex))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_concurrence_continuity_under_perturbation(seed):
    rng = np.random.default_rng(seed)
    rho = random_state(rng)
    c0 = concurrence(rho)
    e = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    e = (e + e.conj().T) / 2
    e = e - np.eye(4) * np.trace(e) / 4
    e *= 1e-6 / max(np.linalg.norm(e), 1e-30)
    c1 = concurrence(project_physical(rho + e))
    assert math.isfinite(c1)
    assert 0.0 <= c1 <= 1.0
    assert abs(c1 - c0) < 1e-4  # empirical Lipschitz bound at 1e-6 scale


def test_purity_range():
    assert purity(np.eye(4) / 4) == pytest.approx(0.25, abs=1e-12)
    assert purity(np.outer(PSI_MINUS, PSI_MINUS.conj())) == pytest.approx(1.0, abs=1e-12)


def test_bell_decomposition_examples():
    phi_plus = BELL_STATES["phi_plus"]
    probs = bell_decomposition(np.outer(phi_plus, phi_plus.conj()))
    assert probs.p_phi_plus == pytest.approx(1.0, abs=1e-12)
    assert probs.p_phi_minus == pytest.approx(0.0, abs=1e-12)
    mixed = bell_decomposition(np.eye(4) / 4)
    for name in ("p_phi_plus", "p_phi_minus", "p_psi_plus", "p_psi_minus"):
        assert getattr(mixed, name) == pytest.approx(0.25, abs=1e-12)


def test_assert_physical_tolerances():
    with pytest.raises(ValueError):
        assert_physical(np.eye(3))
    good = werner(0.5)
    assert assert_physical(good) is not None


# ---------------------------------------------------------------------------
# Angular tomography plumbing

def _hist_for(label, counts_theta, binning):
    return CoincidenceHistogram(
        setting=label,
        binning=binning,
        counts_theta=counts_theta,
        counts_r=np.zeros((binning.n_r, binning.n_r)),
        counts_full=None,
        total_pairs=int(counts_theta.sum()),
        total_singles=0,
        dropped_by_radius=0,
        skipped_outside_roi=0,
        total_events=0,
    )


def synthetic_histograms(rho_of_bin, n_theta, flux, rng=None):
    """Build 16 histograms whose per-bin counts follow the forward model."""
    binning = PolarBinning(n_theta=n_theta, centroid_s=(0, 0), centroid_i=(0, 0))
    counts = np.zeros((16, n_theta, n_theta))
    for i in range(n_theta):
        for j in range(n_theta):
            p = forward_probabilities(rho_of_bin(i, j), TSET)
            mu = p * flux
            counts[:, i, j] = rng.poisson(mu) if rng is not None else mu
    return [
        _hist_for(label, counts[k], binning) for k, label in enumerate(TSET.labels)
    ]


def test_angular_tomography_recovers_uniform_singlet():
    rho = np.outer(PSI_MINUS, PSI_MINUS.conj())
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)
    tomo = angular_tomography(hists, TSET, min_counts=200)
    assert tomo.bins_used == 16
    assert tomo.average_concurrence == pytest.approx(1.0, abs=1e-7)
    assert tomo.average_purity == pytest.approx(1.0, abs=1e-7)
    assert tomo.concurrence_se == pytest.approx(0.0, abs=1e-7)


def test_angular_tomography_low_statistics_flagging():
    rho = werner(0.9)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)
    # empty out one bin across all settings
    for h in hists:
        h.counts_theta[2, 3] = 0.0
    tomo = angular_tomography(hists, TSET, min_counts=200)
    flagged = [r for r in tomo.results if r.low_statistics]
    assert len(flagged) == 1
    assert (flagged[0].bin_s, flagged[0].bin_i) == (2, 3)
    assert math.isnan(flagged[0].concurrence)
    assert tomo.bins_used == 15


def test_angular_tomography_binning_mismatch_rejected():
    rho = werner(0.9)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)
    other = PolarBinning(n_theta=8, centroid_s=(0, 0), centroid_i=(0, 0))
    hists[3] = _hist_for(hists[3].setting, np.zeros((8, 8)), other)
    with pytest.raises(ConfigurationError):
        angular_tomography(hists, TSET)


def test_angular_tomography_centroid_mismatch_rejected():
    rho = werner(0.9)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)
    moved = PolarBinning(n_theta=4, centroid_s=(0.5, 0), centroid_i=(0, 0))
    hists[3] = _hist_for(hists[3].setting, hists[3].counts_theta, moved)
    with pytest.raises(ConfigurationError):
        angular_tomography(hists, TSET)


def test_angular_tomography_missing_setting_rejected():
    rho = werner(0.9)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)[:15]
    with pytest.raises(ConfigurationError) as err:
        angular_tomography(hists, TSET)
    assert "RL" in str(err.value)


def test_angular_tomography_varying_state_and_weighting():
    # concurrence varies per bin; count-weighted average must track it
    rng = np.random.default_rng(17)

    def rho_of_bin(i, j):
        return werner(0.6 + 0.4 * (i + j) / 6)

    hists = synthetic_histograms(rho_of_bin, 4, flux=30_000, rng=rng)
    tomo = angular_tomography(hists, TSET, min_counts=200)
    oracle = np.mean(
        [concurrence(rho_of_bin(i, j)) for i in range(4) for j in range(4)]
    )
    assert tomo.average_concurrence == pytest.approx(oracle, abs=0.02)
    # bins hold genuinely different states, so the standard error reflects
    # the real spread of per-bin concurrences, not just counting noise
    assert 0.0 < tomo.concurrence_se < 0.06
    m = tomo.metric_map("concurrence")
    assert m.shape == (4, 4)
    assert np.all(np.isfinite(m))


def test_angular_tomography_mle_mode_runs():
    rng = np.random.default_rng(18)
    rho = werner(0.85)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=2000, rng=rng)
    tomo = angular_tomography(hists, TSET, min_counts=200, mle=True, mle_tol=1e-6)
    assert tomo.mle
    assert abs(tomo.average_concurrence - concurrence(rho)) < 0.05


def test_result_serialization_round_trip_fields():
    rho = werner(0.9)
    hists = synthetic_histograms(lambda i, j: rho, 4, flux=4000)
    tomo = angular_tomography(hists, TSET, min_counts=200)
    d = tomo.to_dict()
    assert d["n_theta"] == 4
    assert len(d["bins"]) == 16
    b0 = d["bins"][0]
    rho_rt = (np.array(b0["rho_re"]) + 1j * np.array(b0["rho_im"])).reshape(4, 4)
    np.testing.assert_allclose(rho_rt, tomo.results[0].rho, atol=1e-15)
