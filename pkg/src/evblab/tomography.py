"""Two-qubit density-matrix reconstruction and entanglement metrics.

Reconstruction chain per angular bin: linear inversion of the 16 setting
counts (flux-normalized by the complete H/V subset), projection to the
nearest physical state by eigenvalue water-filling, and optional
maximum-likelihood refinement over the factorization rho = T^dag T / tr.
Metrics: Wootters concurrence, purity, Bell-state overlaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    ConvergenceError,
    InsufficientDataError,
)
from .polarimetry import TomographySet
from .qplate_state import BELL_LABELS, BELL_STATES, BellProbabilities

PAULIS = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]]),
    np.array([[1, 0], [0, -1]], dtype=complex),
]
PAULI_PRODUCTS = [np.kron(a, b) for a in PAULIS for b in PAULIS]
_YY = np.kron(PAULIS[2], PAULIS[2]).real

FLUX_LABELS = ("HH", "HV", "VH", "VV")


def assert_physical(rho: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > max(tol, 1e-8):
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(rho).min() < -max(tol, 1e-8):
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def forward_probabilities(rho: np.ndarray, tset: TomographySet) -> np.ndarray:
    """Projection probabilities tr(P_k rho) for the 16 settings."""
    vs = tset.projector_vectors()
    return np.real(np.einsum("ki,ij,kj->k", vs.conj(), rho, vs))


def linear_inversion(counts, tset: TomographySet) -> np.ndarray:
    """Solve the 16x16 linear system for rho from raw setting counts.

    Counts are normalized by the summed flux of the complete {H,V} x {H,V}
    subset, which fixes the trace to one; the result is Hermitian but may
    have negative eigenvalues when counts are noisy.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (16,):
        raise ValueError("expected 16 counts")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("counts must be finite and nonnegative")
    if counts.sum() == 0:
        raise InsufficientDataError("all-zero counts")
    labels = tset.labels
    try:
        flux = sum(counts[labels.index(l)] for l in FLUX_LABELS)
    except ValueError as exc:
        raise ConfigurationError(
            "flux normalization needs the complete H/V subset in the tomography set"
        ) from exc
    if flux <= 0:
        raise InsufficientDataError("complete-basis flux is zero")
    probs = counts / flux
    design = tset.design_matrix()
    try:
        coords = np.linalg.solve(design, probs)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("singular tomography design matrix") from exc
    rho = sum(c * g for c, g in zip(coords, PAULI_PRODUCTS))
    return 0.5 * (rho + rho.conj().T)


def project_physical(m: np.ndarray) -> np.ndarray:
    """Closest (Frobenius) positive semidefinite unit-trace matrix.

    Standard water-filling on the sorted eigenvalues: truncate negatives
    and redistribute their mass uniformly over the remaining ones.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape != (4, 4) or np.max(np.abs(m - m.conj().T)) > 1e-8:
        raise ValueError("input must be a Hermitian 4x4 matrix")
    tr = np.trace(m).real
    if not tr > 0:
        raise ValueError("input trace must be positive")
    vals, vecs = np.linalg.eigh(m / tr)  # ascending
    lam = vals.copy()
    acc = 0.0
    for i in range(len(lam)):
        rem = len(lam) - i
        if lam[i] + acc / rem < 0:
            acc += lam[i]
            lam[i] = 0.0
        else:
            lam[i:] += acc / rem
            break
    rho = (vecs * lam) @ vecs.conj().T
    return 0.5 * (rho + rho.conj().T)


def mle_refine(initial: np.ndarray, counts, tset: TomographySet,
               tol: float = 1e-9, max_iters: int = 5000) -> np.ndarray:
    """Maximum-likelihood refinement of a physical starting state.

    Maximizes the multinomial mean log-likelihood sum_k (n_k/N) log p_k(rho)
    over rho = T^dag T / tr(T^dag T) by gradient ascent with a backtracking
    (Armijo) line search; the likelihood never decreases across accepted
    steps.  ``tol`` bounds the gradient norm of the mean log-likelihood at
    exit; exceeding ``max_iters`` raises ConvergenceError carrying the best
    iterate.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise InsufficientDataError("all-zero counts")
    rho0 = assert_physical(initial)
    vs = tset.projector_vectors()  # (16, 4)
    active = counts > 0
    n_active = counts[active]
    v_active = vs[active]
    # The multinomial category probability of setting k is
    # tr(P_k rho) / sum_j tr(P_j rho); S implements the denominator.
    S = np.einsum("ki,kj->ij", vs, vs.conj())

    # Strictly positive start so every active outcome has nonzero likelihood.
    eps = 1e-10
    mixed = (1.0 - eps) * rho0 + eps * np.eye(4) / 4.0
    vals, vecs = np.linalg.eigh(mixed)
    T = (vecs * np.sqrt(np.clip(vals, 1e-300, None))) @ vecs.conj().T

    def mean_loglike(T):
        tv = v_active @ T.T  # rows are (T v_k)^T
        ptilde = np.einsum("ki,ki->k", tv, tv.conj()).real
        tv_all = vs @ T.T
        s = np.einsum("ki,ki->", tv_all, tv_all.conj()).real
        if np.any(ptilde <= 0) or s <= 0:
            return -np.inf, None, None
        f = float(np.dot(n_active, np.log(ptilde)) / total - math.log(s))
        return f, ptilde, s

    f, ptilde, s = mean_loglike(T)
    best_f, best_T = f, T.copy()
    step = 0.1
    for _ in range(max_iters):
        # Wirtinger gradient of the mean log-likelihood wrt conj(T)
        weights = n_active / (ptilde * total)
        G = np.einsum("k,ki,kj->ij", weights, v_active, v_active.conj())
        W = T @ G - (T @ S) / s
        gnorm = 2.0 * np.linalg.norm(W)
        if gnorm < tol:
            rho = T.conj().T @ T
            return rho / np.trace(rho).real
        improved = False
        while step > 1e-18:
            T_new = T + (2.0 * step) * W
            f_new, p_new, s_new = mean_loglike(T_new)
            if f_new >= f + 0.25 * step * gnorm**2:
                T, f, ptilde, s = T_new, f_new, p_new, s_new
                step *= 1.5
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        if f > best_f:
            best_f, best_T = f, T.copy()
    rho = best_T.conj().T @ best_T
    raise ConvergenceError(
        f"MLE gradient norm did not reach {tol} within {max_iters} iterations",
        best=rho / np.trace(rho).real,
    )


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a physical two-qubit state."""
    rho = assert_physical(rho)
    rho_tilde = _YY @ rho.conj() @ _YY
    ev = np.linalg.eigvals(rho @ rho_tilde)
    lam = np.sqrt(np.clip(np.sort(ev.real)[::-1], 0.0, None))
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.trace(rho @ rho)))


def bell_decomposition(rho: np.ndarray) -> BellProbabilities:
    """Diagonal Bell-state overlaps <B|rho|B>."""
    rho = assert_physical(rho)
    vals = {}
    for name in BELL_LABELS:
        b = BELL_STATES[name]
        vals["p_" + name] = float(np.real(b.conj() @ rho @ b))
    return BellProbabilities(**vals)


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    vals, vecs = np.linalg.eigh(np.asarray(rho, dtype=complex))
    sq = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T
    inner = sq @ np.asarray(sigma, dtype=complex) @ sq
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)


# ---------------------------------------------------------------------------
# Spatially resolved tomography

@dataclass
class TomographyResult:
    """Reconstruction and metrics for one (theta_s, theta_i) bin."""

    bin_s: int
    bin_i: int
    counts_used: int
    low_statistics: bool
    rho: np.ndarray | None
    concurrence: float
    purity: float
    bell_probs: BellProbabilities | None

    def to_dict(self) -> dict:
        d = {
            "bin_s": self.bin_s,
            "bin_i": self.bin_i,
            "counts_used": self.counts_used,
            "low_statistics": self.low_statistics,
            "concurrence": self.concurrence,
            "purity": self.purity,
        }
        if self.rho is not None:
            d["rho_re"] = np.real(self.rho).ravel().tolist()
            d["rho_im"] = np.imag(self.rho).ravel().tolist()
        if self.bell_probs is not None:
            d["bell"] = {
                name: getattr(self.bell_probs, "p_" + name) for name in BELL_LABELS
            }
        return d


@dataclass
class AngularTomography:
    """Per-angular-bin reconstructions plus count-weighted summary metrics."""

    n_theta: int
    results: list  # row-major list of TomographyResult
    average_concurrence: float
    concurrence_se: float
    average_purity: float
    bins_used: int
    min_counts: int
    mle: bool

    def result(self, i: int, j: int) -> TomographyResult:
        return self.results[i * self.n_theta + j]

    def metric_map(self, name: str) -> np.ndarray:
        out = np.full((self.n_theta, self.n_theta), np.nan)
        for r in self.results:
            if r.low_statistics:
                continue
            if name == "concurrence":
                out[r.bin_s, r.bin_i] = r.concurrence
            elif name == "purity":
                out[r.bin_s, r.bin_i] = r.purity
            elif name in BELL_LABELS:
                out[r.bin_s, r.bin_i] = getattr(r.bell_probs, "p_" + name)
            else:
                raise ValueError(f"unknown metric {name!r}")
        return out

    def bell_maps(self) -> dict:
        return {name: self.metric_map(name) for name in BELL_LABELS}

    def to_dict(self) -> dict:
        return {
            "n_theta": self.n_theta,
            "average_concurrence": self.average_concurrence,
            "concurrence_se": self.concurrence_se,
            "average_purity": self.average_purity,
            "bins_used": self.bins_used,
            "min_counts": self.min_counts,
            "mle": self.mle,
            "bins": [r.to_dict() for r in self.results],
        }


def _reconstruct_bin(counts: np.ndarray, tset: TomographySet, use_mle: bool,
                     mle_tol: float) -> tuple[np.ndarray, BellProbabilities, float, float]:
    rho = project_physical(linear_inversion(counts, tset))
    if use_mle:
        try:
            rho = mle_refine(rho, counts, tset, tol=mle_tol)
        except ConvergenceError as exc:
            rho = exc.best
    return rho, bell_decomposition(rho), concurrence(rho), purity(rho)


def angular_tomography(histograms, tset: TomographySet, mle: bool = False,
                       min_counts: int = 200, mle_tol: float = 1e-7,
                       max_workers: int | None = None) -> AngularTomography:
    """Reconstruct a density matrix for every (theta_s, theta_i) bin.

    ``histograms`` holds one CoincidenceHistogram per setting of ``tset``
    (matched by label; all must share one binning).  Bins whose summed
    counts across the 16 settings fall below ``min_counts`` are flagged
    low-statistics and excluded from the count-weighted averages.
    """
    from concurrent.futures import ThreadPoolExecutor

    from ._threads import worker_count

    by_label = {h.setting: h for h in histograms}
    if sorted(by_label) != sorted(tset.labels):
        missing = sorted(set(tset.labels) - set(by_label))
        raise ConfigurationError(f"missing histograms for settings: {missing}")
    ref = by_label[tset.labels[0]].binning
    for h in histograms:
        b = h.binning
        if (b.n_theta, b.n_r, b.r_max) != (ref.n_theta, ref.n_r, ref.r_max):
            raise ConfigurationError("histograms do not share one binning")
        # Shared centroids matter: per-setting centroid jitter flips pixels
        # lying on bin edges inconsistently between settings.
        if b.centroid_s != ref.centroid_s or b.centroid_i != ref.centroid_i:
            raise ConfigurationError("histograms were binned about different centroids")

    n_theta = ref.n_theta
    stack = np.stack([np.asarray(by_label[l].counts_theta, dtype=float)
                      for l in tset.labels])  # (16, nt, nt)

    def job(flat_idx: int) -> TomographyResult:
        i, j = divmod(flat_idx, n_theta)
        counts = stack[:, i, j]
        total = int(round(counts.sum()))
        if total < min_counts:
            return TomographyResult(i, j, total, True, None,
                                    float("nan"), float("nan"), None)
        rho, bell, conc, pur = _reconstruct_bin(counts, tset, mle, mle_tol)
        return TomographyResult(i, j, total, False, rho, conc, pur, bell)

    indices = range(n_theta * n_theta)
    workers = worker_count(max_workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, indices))
    else:
        results = [job(k) for k in indices]

    used = [r for r in results if not r.low_statistics]
    if used:
        w = np.array([r.counts_used for r in used], dtype=float)
        c = np.array([r.concurrence for r in used])
        p = np.array([r.purity for r in used])
        avg_c = float(np.sum(w * c) / w.sum())
        se = float(np.sqrt(np.sum(w**2 * (c - avg_c) ** 2)) / w.sum())
        avg_p = float(np.sum(w * p) / w.sum())
    else:
        avg_c = se = avg_p = float("nan")
    return AngularTomography(
        n_theta=n_theta,
        results=results,
        average_concurrence=avg_c,
        concurrence_se=se,
        average_purity=avg_p,
        bins_used=len(used),
        min_counts=min_counts,
        mle=mle,
    )
