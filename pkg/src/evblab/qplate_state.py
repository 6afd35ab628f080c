"""Two-photon polarization/spatial state algebra.

Builds the polarization-singlet input state, applies the first-order
space-variant birefringent plate ("q-plate") action to each photon, and
evaluates the resulting space-varying two-qubit state: local spinors,
Bell-state probability densities, and angular Bell probability maps.

Conventions (fixed globally):
  * Jones vectors in the (H, V) basis with L = (1, i)/sqrt(2) and
    R = (1, -i)/sqrt(2).
  * Circular two-photon amplitudes are ordered (LL, LR, RL, RR); linear
    ones (HH, HV, VH, VV).
  * A plate with charge q converts L -> R while shifting the azimuthal
    index by -2q, and R -> L shifting by +2q, with conversion amplitude
    i*sin(delta/2) and survival amplitude cos(delta/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedCompositionError
from .lgmodes import RadialProfile, evaluate, radial_overlap

# ---------------------------------------------------------------------------
# Polarization basis

SQRT2 = math.sqrt(2.0)

JONES = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "L": np.array([1.0, 1.0j]) / SQRT2,
    "R": np.array([1.0, -1.0j]) / SQRT2,
    "D": np.array([1.0, 1.0]) / SQRT2,
    "A": np.array([1.0, -1.0]) / SQRT2,
}

# Single-photon change of basis: amplitudes (a_L, a_R) -> (a_H, a_V).
_CIRC_TO_LIN_1 = np.column_stack([JONES["L"], JONES["R"]])
# Two-photon version, (LL, LR, RL, RR) -> (HH, HV, VH, VV).
CIRC_TO_LIN = np.kron(_CIRC_TO_LIN_1, _CIRC_TO_LIN_1)

# Bell states in the (HH, HV, VH, VV) ordering.
BELL_STATES = {
    "phi_plus": np.array([1, 0, 0, 1], dtype=complex) / SQRT2,
    "phi_minus": np.array([1, 0, 0, -1], dtype=complex) / SQRT2,
    "psi_plus": np.array([0, 1, 1, 0], dtype=complex) / SQRT2,
    "psi_minus": np.array([0, 1, -1, 0], dtype=complex) / SQRT2,
}
BELL_LABELS = ("phi_plus", "phi_minus", "psi_plus", "psi_minus")

_SECTOR_INDEX = {("L", "L"): 0, ("L", "R"): 1, ("R", "L"): 2, ("R", "R"): 3}


# ---------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class QPlateParams:
    """Plate parameters: half-integer charge q, retardation delta in [0, pi],
    and the waist (in pixels) of the beam it acts on."""

    q: float
    delta: float = math.pi
    waist: float = 10.0

    def __post_init__(self):
        if abs(2 * self.q - round(2 * self.q)) > 1e-12:
            raise ValueError(f"charge q must be a half-integer, got {self.q}")
        if not (0.0 <= self.delta <= math.pi + 1e-12):
            raise ValueError(f"retardation must lie in [0, pi], got {self.delta}")
        if not (math.isfinite(self.waist) and self.waist > 0):
            raise ValueError(f"waist must be positive, got {self.waist}")

    @property
    def ell_shift(self) -> int:
        """Azimuthal index transferred on conversion (2q, an integer)."""
        return int(round(2 * self.q))


@dataclass(frozen=True)
class ModeTerm:
    """One summand of a two-photon superposition: circular polarizations,
    azimuthal indices, and a complex amplitude."""

    pol_s: str
    pol_i: str
    ell_s: int
    ell_i: int
    amp: complex

    def __post_init__(self):
        if self.pol_s not in ("L", "R") or self.pol_i not in ("L", "R"):
            raise ValueError("polarizations must be 'L' or 'R'")
        if not (np.isfinite(self.amp.real) and np.isfinite(self.amp.imag)):
            raise ValueError("amplitude must be finite")

    @property
    def key(self):
        return (self.pol_s, self.pol_i, self.ell_s, self.ell_i)


@dataclass(frozen=True)
class ModeSuperposition:
    """A two-photon state as a finite sum of mode terms.

    Terms with identical (pol_s, pol_i, ell_s, ell_i) are merged on
    construction via :meth:`from_terms`; distinct terms are mutually
    orthogonal, so the squared norm is the plain sum of |amp|^2.
    """

    terms: tuple[ModeTerm, ...]
    waist_s: float = 10.0
    waist_i: float = 10.0

    def __post_init__(self):
        if not (self.waist_s > 0 and self.waist_i > 0):
            raise ValueError("waists must be positive")
        keys = [t.key for t in self.terms]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate mode terms; build via from_terms()")
        n = self.norm_squared()
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"state norm^2 = {n!r}, expected 1")

    @classmethod
    def from_terms(cls, terms, waist_s: float = 10.0, waist_i: float = 10.0):
        merged: dict[tuple, complex] = {}
        for t in terms:
            merged[t.key] = merged.get(t.key, 0.0) + complex(t.amp)
        kept = tuple(
            ModeTerm(*k, amp=a) for k, a in merged.items() if abs(a) > 1e-14
        )
        return cls(terms=kept, waist_s=waist_s, waist_i=waist_i)

    def norm_squared(self) -> float:
        return float(sum(abs(t.amp) ** 2 for t in self.terms))


@dataclass(frozen=True)
class BellProbabilities:
    """Probabilities (or probability densities) for the four Bell states."""

    p_phi_plus: float | np.ndarray
    p_phi_minus: float | np.ndarray
    p_psi_plus: float | np.ndarray
    p_psi_minus: float | np.ndarray

    def as_array(self) -> np.ndarray:
        """Stack in the canonical order (phi+, phi-, psi+, psi-)."""
        return np.stack(
            [
                np.asarray(self.p_phi_plus),
                np.asarray(self.p_phi_minus),
                np.asarray(self.p_psi_plus),
                np.asarray(self.p_psi_minus),
            ]
        )

    def total(self):
        return (
            self.p_phi_plus + self.p_phi_minus + self.p_psi_plus + self.p_psi_minus
        )


# ---------------------------------------------------------------------------
# State construction

def epr_state(waist_s: float = 10.0, waist_i: float = 10.0) -> ModeSuperposition:
    """Polarization-singlet input: (i/sqrt2)(|L,R> - |R,L>), Gaussian profiles.

    The global phase i is kept in the amplitudes; it never affects any
    probability downstream.
    """
    return ModeSuperposition.from_terms(
        [
            ModeTerm("L", "R", 0, 0, 1j / SQRT2),
            ModeTerm("R", "L", 0, 0, -1j / SQRT2),
        ],
        waist_s=waist_s,
        waist_i=waist_i,
    )


def apply_qplate(
    state: ModeSuperposition, which: str, plate: QPlateParams
) -> ModeSuperposition:
    """Apply a plate to the signal or idler photon of every term.

    The first-order plate model is defined only on Gaussian input, so the
    photon being acted on must carry ell = 0 in every term; a second
    application to a converted photon raises UnsupportedCompositionError.
    """
    if which not in ("signal", "idler"):
        raise ValueError("which must be 'signal' or 'idler'")
    on_signal = which == "signal"
    survive = math.cos(plate.delta / 2.0)
    convert = 1j * math.sin(plate.delta / 2.0)
    shift = plate.ell_shift

    out = []
    for t in state.terms:
        ell = t.ell_s if on_signal else t.ell_i
        if ell != 0:
            raise UnsupportedCompositionError(
                "plate acting on a photon with nonzero azimuthal index; "
                "the first-order model composes only on Gaussian input"
            )
        pol = t.pol_s if on_signal else t.pol_i
        # L converts down by 2q, R converts up by 2q.
        flipped = "R" if pol == "L" else "L"
        new_ell = -shift if pol == "L" else shift
        branches = [(pol, 0, survive * t.amp), (flipped, new_ell, convert * t.amp)]
        for new_pol, nl, amp in branches:
            if abs(amp) < 1e-14:
                continue
            if on_signal:
                out.append(ModeTerm(new_pol, t.pol_i, nl, t.ell_i, amp))
            else:
                out.append(ModeTerm(t.pol_s, new_pol, t.ell_s, nl, amp))
    waist_s = plate.waist if on_signal else state.waist_s
    waist_i = plate.waist if not on_signal else state.waist_i
    return ModeSuperposition.from_terms(out, waist_s=waist_s, waist_i=waist_i)


def evb_state(plate_s: QPlateParams, plate_i: QPlateParams) -> ModeSuperposition:
    """Entangled vector beam: singlet input sent through one plate per arm."""
    state = epr_state(waist_s=plate_s.waist, waist_i=plate_i.waist)
    state = apply_qplate(state, "signal", plate_s)
    return apply_qplate(state, "idler", plate_i)


# ---------------------------------------------------------------------------
# Pointwise evaluation

def _check_coords(r_s, theta_s, r_i, theta_i):
    arrs = [np.asarray(a, dtype=float) for a in (r_s, theta_s, r_i, theta_i)]
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise ValueError("coordinates must be finite")
    if np.any(arrs[0] < 0) or np.any(arrs[2] < 0):
        raise ValueError("radii must be nonnegative")
    return arrs


def local_spinor(state: ModeSuperposition, r_s, theta_s, r_i, theta_i) -> np.ndarray:
    """Un-normalized two-qubit amplitudes at the given transverse coordinates.

    Returns the circular-basis vector ordered (LL, LR, RL, RR); broadcasts
    over array coordinates, in which case the basis axis comes last.
    """
    r_s, theta_s, r_i, theta_i = _check_coords(r_s, theta_s, r_i, theta_i)
    shape = np.broadcast_shapes(r_s.shape, theta_s.shape, r_i.shape, theta_i.shape)
    out = np.zeros(shape + (4,), dtype=complex)
    for t in state.terms:
        fs = evaluate(RadialProfile(t.ell_s, state.waist_s), r_s)
        fi = evaluate(RadialProfile(t.ell_i, state.waist_i), r_i)
        phase = np.exp(1j * (t.ell_s * theta_s + t.ell_i * theta_i))
        out[..., _SECTOR_INDEX[(t.pol_s, t.pol_i)]] += t.amp * fs * fi * phase
    return out


def local_spinor_linear(state, r_s, theta_s, r_i, theta_i) -> np.ndarray:
    """Same as :func:`local_spinor` but in the (HH, HV, VH, VV) basis."""
    v = local_spinor(state, r_s, theta_s, r_i, theta_i)
    return v @ CIRC_TO_LIN.T


def bell_probabilities(state, r_s, theta_s, r_i, theta_i) -> BellProbabilities:
    """|<B|psi(x)>|^2 for the four Bell states at the given coordinates."""
    v = local_spinor_linear(state, r_s, theta_s, r_i, theta_i)
    probs = {}
    for name, b in BELL_STATES.items():
        amp = v @ b.conj()
        probs["p_" + name] = np.abs(amp) ** 2 if np.ndim(amp) else abs(amp) ** 2
    return BellProbabilities(**probs)


# ---------------------------------------------------------------------------
# Angular Bell probability maps

def _bell_sector_overlaps() -> np.ndarray:
    """<B | pol sector> for the four Bell states x four circular sectors."""
    out = np.zeros((4, 4), dtype=complex)
    for bi, name in enumerate(BELL_LABELS):
        b = BELL_STATES[name]
        for (pols, poli), si in _SECTOR_INDEX.items():
            sector = np.kron(JONES[pols], JONES[poli])
            out[bi, si] = b.conj() @ sector
    return out


def bell_probability_map(
    state: ModeSuperposition,
    n_theta: int,
    n_radial_nodes: int = 64,
    r_max_factor: float = 5.0,
    average_over_bins: bool = False,
):
    """Radially integrated Bell probabilities on an n_theta x n_theta angular grid.

    Entry (a, b) of each returned matrix is the radial integral of the Bell
    probability density at angular bin centers (theta_a, theta_b), normalized
    entrywise so the four matrices sum to one (a conditional Bell-probability
    map, directly comparable to per-bin tomography output).

    With ``average_over_bins`` the angular dependence is averaged exactly over
    each square bin (analytic sinc factors) instead of sampled at the center.

    Returns
    -------
    maps : dict  label -> (n_theta, n_theta) float array
    theta_centers : ndarray of the bin-center angles
    """
    if n_theta < 4:
        raise ValueError("need at least 4 angular bins")
    if n_radial_nodes < 2 or r_max_factor <= 0:
        raise ValueError("degenerate radial quadrature")

    terms = state.terms
    n = len(terms)
    overlaps = _bell_sector_overlaps()
    # beta[B, k]: Bell-state amplitude coefficient of term k
    beta = np.array(
        [
            [overlaps[bi, _SECTOR_INDEX[(t.pol_s, t.pol_i)]] * t.amp for t in terms]
            for bi in range(4)
        ]
    )

    ell_s = np.array([t.ell_s for t in terms])
    ell_i = np.array([t.ell_i for t in terms])
    rad_s = np.zeros((n, n))
    rad_i = np.zeros((n, n))
    for k in range(n):
        for kp in range(n):
            rad_s[k, kp] = radial_overlap(
                ell_s[k], ell_s[kp], state.waist_s, n_nodes=n_radial_nodes
            )
            rad_i[k, kp] = radial_overlap(
                ell_i[k], ell_i[kp], state.waist_i, n_nodes=n_radial_nodes
            )

    width = 2.0 * math.pi / n_theta
    centers = (np.arange(n_theta) + 0.5) * width
    dls = ell_s[:, None] - ell_s[None, :]
    dli = ell_i[:, None] - ell_i[None, :]
    # exp(i dl theta) at centers, optionally damped by the exact bin average
    phase_s = np.exp(1j * dls[..., None] * centers)  # (n, n, n_theta)
    phase_i = np.exp(1j * dli[..., None] * centers)
    if average_over_bins:
        phase_s = phase_s * np.sinc(dls[..., None] * width / (2.0 * math.pi))
        phase_i = phase_i * np.sinc(dli[..., None] * width / (2.0 * math.pi))

    maps = {}
    for bi, name in enumerate(BELL_LABELS):
        coef = (beta[bi][:, None] * beta[bi].conj()[None, :]) * rad_s * rad_i
        m = np.einsum("kl,kla,klb->ab", coef, phase_s, phase_i)
        maps[name] = np.real(m)
    total = sum(maps.values())
    if np.any(total <= 0):
        raise ValueError("state has vanishing angular marginal; cannot normalize")
    return {k: v / total for k, v in maps.items()}, centers


def torus_coordinates(maps: dict, theta_centers: np.ndarray, ring_radius: float = 2.0,
                      tube_radius: float = 1.0) -> np.ndarray:
    """Map the angular grid onto a torus for 3D rendering of the Bell maps.

    Returns a record-like float array with one row per (theta_s, theta_i)
    grid point: theta_s, theta_i, x, y, z, then the four Bell probabilities.
    """
    ts, ti = np.meshgrid(theta_centers, theta_centers, indexing="ij")
    x = (ring_radius + tube_radius * np.cos(ti)) * np.cos(ts)
    y = (ring_radius + tube_radius * np.cos(ti)) * np.sin(ts)
    z = tube_radius * np.sin(ti)
    cols = [ts.ravel(), ti.ravel(), x.ravel(), y.ravel(), z.ravel()]
    cols += [maps[name].ravel() for name in BELL_LABELS]
    return np.column_stack(cols)
