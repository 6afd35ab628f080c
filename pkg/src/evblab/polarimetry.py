"""Two-photon polarization measurement settings and their analytic statistics.

A measurement setting is a pair of polarization projectors, one per arm.
The canonical tomography set is the 16-element product of signal analyzers
{H, V, A, R} with idler analyzers {H, V, A, L}, in row-major order; any
other tomographically complete 16-setting product can be supplied by label.

The analytic side turns a mode superposition plus a setting into pointwise
coincidence probability densities and bin-integrated expected histograms,
serving as ground truth for the Monte-Carlo event pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coincidence import CoincidenceHistogram, PolarBinning
from .lgmodes import RadialProfile, evaluate
from .qplate_state import JONES, ModeSuperposition, local_spinor_linear

SIGNAL_ANALYZERS = ("H", "V", "A", "R")
IDLER_ANALYZERS = ("H", "V", "A", "L")


@dataclass(frozen=True)
class MeasurementSetting:
    """One polarization projector pair, e.g. label "AR"."""

    label: str
    proj_s: np.ndarray
    proj_i: np.ndarray

    def __post_init__(self):
        if len(self.label) != 2 or any(c not in JONES for c in self.label):
            raise ValueError(f"bad setting label {self.label!r}")
        for p in (self.proj_s, self.proj_i):
            if abs(np.vdot(p, p).real - 1.0) > 1e-12:
                raise ValueError("projector Jones vectors must be unit norm")


@dataclass(frozen=True)
class TomographySet:
    """An ordered, tomographically complete list of 16 settings."""

    settings: tuple[MeasurementSetting, ...]

    def __post_init__(self):
        if len(self.settings) != 16:
            raise ValueError(f"need 16 settings, got {len(self.settings)}")
        cond = self.design_condition_number()
        if not np.isfinite(cond) or cond > 1e9:
            raise ValueError("settings are not tomographically complete")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.settings)

    def projector_vectors(self) -> np.ndarray:
        """(16, 4) array of the product projector kets in the HV basis."""
        return np.array([np.kron(s.proj_s, s.proj_i) for s in self.settings])

    def design_matrix(self) -> np.ndarray:
        """Real (16, 16) matrix mapping product-Pauli coordinates of rho to
        the 16 projection probabilities."""
        paulis = [
            np.eye(2),
            np.array([[0, 1], [1, 0]], dtype=complex),
            np.array([[0, -1j], [1j, 0]]),
            np.array([[1, 0], [0, -1]], dtype=complex),
        ]
        basis = [np.kron(a, b) for a in paulis for b in paulis]
        vecs = self.projector_vectors()
        rows = []
        for v in vecs:
            rows.append([np.real(np.vdot(v, g @ v)) for g in basis])
        return np.asarray(rows)

    def design_condition_number(self) -> float:
        return float(np.linalg.cond(self.design_matrix()))


def setting_from_label(label: str) -> MeasurementSetting:
    if len(label) != 2 or any(c not in JONES for c in label):
        raise ValueError(f"bad setting label {label!r}")
    return MeasurementSetting(label, JONES[label[0]].copy(), JONES[label[1]].copy())


def standard_set() -> TomographySet:
    """The canonical {H,V,A,R} x {H,V,A,L} product set, row-major."""
    return TomographySet(
        tuple(
            setting_from_label(a + b)
            for a in SIGNAL_ANALYZERS
            for b in IDLER_ANALYZERS
        )
    )


def set_from_labels(labels) -> TomographySet:
    """Build a tomography set from 16 two-character labels (validated)."""
    labels = list(labels)
    if len(labels) != 16:
        raise ValueError("need exactly 16 setting labels")
    return TomographySet(tuple(setting_from_label(l) for l in labels))


def orthogonal_jones(v: np.ndarray) -> np.ndarray:
    """The unique (up to phase) Jones vector orthogonal to v."""
    return np.array([-np.conj(v[1]), np.conj(v[0])])


# ---------------------------------------------------------------------------
# Analytic densities

def coincidence_density(state: ModeSuperposition, setting: MeasurementSetting,
                        r_s, theta_s, r_i, theta_i):
    """Probability density (per r dr dtheta each arm) of a coincidence at the
    given coordinates under the setting's projector pair."""
    v = local_spinor_linear(state, r_s, theta_s, r_i, theta_i)
    proj = np.kron(setting.proj_s, setting.proj_i)
    amp = v @ proj.conj()
    out = np.abs(amp) ** 2
    return out if np.ndim(out) else float(out)


def _projected_coefficients(state: ModeSuperposition, setting: MeasurementSetting):
    """Per-term complex coefficient after projecting both polarizations."""
    coeffs = []
    for t in state.terms:
        a_s = np.vdot(setting.proj_s, JONES[t.pol_s])
        a_i = np.vdot(setting.proj_i, JONES[t.pol_i])
        coeffs.append(t.amp * a_s * a_i)
    return np.asarray(coeffs, dtype=complex)


def _theta_bin_integrals(dl: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """integral of exp(i dl theta) over each [edges[b], edges[b+1])."""
    lo, hi = edges[:-1], edges[1:]
    out = np.empty(dl.shape + (len(lo),), dtype=complex)
    zero = dl == 0
    out[zero] = (hi - lo)[None, :]
    nz = ~zero
    d = dl[nz][:, None].astype(float)
    out[nz] = (np.exp(1j * d * hi) - np.exp(1j * d * lo)) / (1j * d)
    return out


def _radial_bin_integrals(ells: np.ndarray, waist: float, edges: np.ndarray,
                          nodes_per_bin: int = 24) -> np.ndarray:
    """integral of F_a(r) F_b(r) r dr over each radial bin, for all (a, b)."""
    n = len(ells)
    out = np.zeros((n, n, len(edges) - 1))
    x, w = np.polynomial.legendre.leggauss(nodes_per_bin)
    for b in range(len(edges) - 1):
        lo, hi = edges[b], edges[b + 1]
        r = 0.5 * (hi - lo) * (x + 1.0) + lo
        ww = 0.5 * (hi - lo) * w
        vals = {l: evaluate(RadialProfile(int(l), waist), r) for l in set(ells.tolist())}
        for i, la in enumerate(ells):
            for j, lb in enumerate(ells):
                out[i, j, b] = np.sum(vals[la] * vals[lb] * r * ww)
    return out


def expected_histogram(state: ModeSuperposition, setting: MeasurementSetting,
                       binning: PolarBinning, n_pairs: float) -> CoincidenceHistogram:
    """Bin-integrated expected coincidence counts for ``n_pairs`` source pairs.

    Entries are the exact integrals of the coincidence density over the polar
    bins, scaled by n_pairs; summing a complete projector set over all space
    recovers n_pairs. Counts are floats (expectations, not samples).
    """
    coeffs = _projected_coefficients(state, setting)
    ell_s = np.array([t.ell_s for t in state.terms])
    ell_i = np.array([t.ell_i for t in state.terms])
    C = coeffs[:, None] * coeffs.conj()[None, :]

    t_edges = binning.theta_edges()
    r_edges = binning.r_edges()
    dls = ell_s[:, None] - ell_s[None, :]
    dli = ell_i[:, None] - ell_i[None, :]
    Ts = _theta_bin_integrals(dls, t_edges)
    Ti = _theta_bin_integrals(dli, t_edges)
    Rs = _radial_bin_integrals(ell_s, state.waist_s, r_edges)
    Ri = _radial_bin_integrals(ell_i, state.waist_i, r_edges)
    Rs_tot = Rs.sum(axis=2)
    Ri_tot = Ri.sum(axis=2)
    # Full-angle integrals are 2*pi deltas on matching indices.
    Ts_tot = np.where(dls == 0, 2.0 * math.pi, 0.0)
    Ti_tot = np.where(dli == 0, 2.0 * math.pi, 0.0)

    counts_theta = n_pairs * np.real(
        np.einsum("kl,kl,kl,kla,klb->ab", C, Rs_tot, Ri_tot, Ts, Ti)
    )
    counts_r = n_pairs * np.real(
        np.einsum("kl,kl,kl,kla,klb->ab", C, Ts_tot, Ti_tot, Rs, Ri)
    )
    counts_full = None
    if binning.store_full:
        full = n_pairs * np.real(
            np.einsum("klp,kla,klq,klb,kl->paqb", Rs, Ts, Ri, Ti, C)
        )
        n = binning.n_r * binning.n_theta
        counts_full = full.reshape(n, n)

    return CoincidenceHistogram(
        setting=setting.label,
        binning=binning,
        counts_theta=counts_theta,
        counts_r=counts_r,
        counts_full=counts_full,
        total_pairs=float(counts_theta.sum()),
        total_singles=0,
        dropped_by_radius=0,
        skipped_outside_roi=0,
        total_events=0,
    )


def pass_probability(state: ModeSuperposition, setting: MeasurementSetting) -> float:
    """Probability that a pair in ``state`` passes both analyzers (all space).

    Uses orthonormality of the spatial modes: terms sharing (ell_s, ell_i)
    interfere, distinct ones add incoherently.
    """
    coeffs = _projected_coefficients(state, setting)
    groups: dict[tuple[int, int], complex] = {}
    for c, t in zip(coeffs, state.terms):
        k = (t.ell_s, t.ell_i)
        groups[k] = groups.get(k, 0.0) + c
    return float(sum(abs(v) ** 2 for v in groups.values()))
