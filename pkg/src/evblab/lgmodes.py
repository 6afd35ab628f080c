"""Normalized Laguerre-Gauss mode functions (radial index zero, waist plane).

These are the spatial basis functions for every two-photon state in the
toolkit.  Only the p=0 family is supported; the radial amplitude is

    F_l(r) = sqrt(2 / (pi |l|!)) * (1/w) * (sqrt(2) r / w)^|l| * exp(-r^2/w^2)

which carries unit L2 norm once the azimuthal integral is included:
integral of |F_l(r)|^2 * 2 pi r dr over [0, inf) equals 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_AZIMUTHAL_INDEX = 8


@dataclass(frozen=True)
class RadialProfile:
    """Radial part of a p=0 Laguerre-Gauss mode.

    Parameters
    ----------
    ell : int
        Azimuthal index.  |ell| <= 8 (sanity bound; the toolkit only ever
        produces indices up to twice the largest plate charge).
    waist : float
        Beam waist in the same length units as the radius argument
        (camera pixels throughout the pipeline).
    """

    ell: int
    waist: float = 10.0

    def __post_init__(self):
        if self.ell != int(self.ell):
            raise ValueError(f"azimuthal index must be an integer, got {self.ell}")
        if abs(self.ell) > MAX_AZIMUTHAL_INDEX:
            raise ValueError(
                f"|ell| = {abs(self.ell)} exceeds the supported bound {MAX_AZIMUTHAL_INDEX}"
            )
        if not (math.isfinite(self.waist) and self.waist > 0):
            raise ValueError(f"waist must be positive and finite, got {self.waist}")


def evaluate(profile: RadialProfile, r):
    """Evaluate the real, nonnegative radial amplitude F_l(r).

    Accepts scalar or array radii; radii must be nonnegative and finite.
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("radius must be finite")
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    a = abs(int(profile.ell))
    w = profile.waist
    norm = math.sqrt(2.0 / (math.pi * math.factorial(a))) / w
    out = norm * (math.sqrt(2.0) * r / w) ** a * np.exp(-(r ** 2) / w ** 2)
    return out if out.ndim else float(out)


def mode_amplitude(profile: RadialProfile, r, theta):
    """Full transverse mode F_l(r) * exp(i l theta) at one or many points."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    out = evaluate(profile, r) * np.exp(1j * profile.ell * theta)
    return out if np.ndim(out) else complex(out)


def peak_radius(profile: RadialProfile) -> float:
    """Radius of maximum amplitude: 0 for ell=0, w*sqrt(|l|/2) otherwise."""
    return profile.waist * math.sqrt(abs(profile.ell) / 2.0)


def radial_quadrature(waist: float, n_nodes: int = 64, r_max: float | None = None):
    """Gauss-Legendre nodes and weights on [0, r_max] for radial integrals.

    The default span of five waists captures the mode energy of every
    supported index to well below 1e-10.  Weights do NOT include the
    Jacobian factor r; callers multiply by r themselves.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    if r_max is None:
        r_max = 5.0 * waist
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    nodes = 0.5 * r_max * (x + 1.0)
    weights = 0.5 * r_max * w
    return nodes, weights


def radial_overlap(ell_a: int, ell_b: int, waist: float, n_nodes: int = 96) -> float:
    """integral of F_a(r) F_b(r) r dr over [0, 5w].

    Equals 1/(2 pi) when ell_a == +-ell_b (shared radial profile); used for
    cross-mode spatial interference terms in analytic histograms.
    """
    r, w = radial_quadrature(waist, n_nodes)
    fa = evaluate(RadialProfile(ell_a, waist), r)
    fb = evaluate(RadialProfile(ell_b, waist), r)
    return float(np.sum(fa * fb * r * w))
