"""Synthetic time-tagged camera event streams for each measurement setting.

Event file format (little-endian, 16-byte header + packed 16-byte records):

    header:  magic "EVB1" (4 bytes) | version u16 = 1 | reserved u16 | count u64
    record:  x u16 | y u16 | t u64 (ns) | tot u16 | reserved u16

Each run simulates a fixed number of source pairs per setting at a common
source flux.  A pair passes the setting's analyzer pair with its physical
probability (computed analytically from the state), so the relative rates
between the 16 settings carry the tomographic information; transverse
positions of passing pairs are drawn from the normalized conditional
density by exact rejection sampling with a gamma-radial envelope.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SamplingError
from .qplate_state import JONES, ModeSuperposition, QPlateParams, evb_state
from .polarimetry import (
    MeasurementSetting,
    pass_probability,
    setting_from_label,
    standard_set,
)

MAGIC = b"EVB1"
FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype(
    [("magic", "S4"), ("version", "<u2"), ("reserved", "<u2"), ("count", "<u8")]
)
EVENT_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("tot", "<u2"), ("reserved", "<u2")]
)

# Cosmetic time-over-threshold distribution: fixed discrete values with a
# geometric-decay weight; carried through the pipeline, never analyzed.
TOT_VALUES = np.arange(25, 401, 25, dtype=np.uint16)
_w = np.exp(-np.arange(len(TOT_VALUES)) / 4.0)
TOT_WEIGHTS = _w / _w.sum()

MAX_ATTEMPT_FACTOR = 10_000  # rejection budget per requested sample


# ---------------------------------------------------------------------------
# Geometry and noise

@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("rect must have positive size")

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (
            (x >= self.x0)
            & (x < self.x0 + self.width)
            & (y >= self.y0)
            & (y < self.y0 + self.height)
        )

    def center(self) -> tuple[float, float]:
        return (self.x0 + (self.width - 1) / 2.0, self.y0 + (self.height - 1) / 2.0)

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x0 + self.width <= other.x0
            or other.x0 + other.width <= self.x0
            or self.y0 + self.height <= other.y0
            or other.y0 + other.height <= self.y0
        )


@dataclass(frozen=True)
class CameraGeometry:
    """Sensor size, the two beam ROIs, their centroids, and the beam waist."""

    width: int = 128
    height: int = 64
    roi_signal: Rect = Rect(10, 10, 40, 40)
    roi_idler: Rect = Rect(78, 10, 40, 40)
    centroid_s: tuple[float, float] | None = None
    centroid_i: tuple[float, float] | None = None
    waist_px: float = 10.0

    def __post_init__(self):
        for roi in (self.roi_signal, self.roi_idler):
            if (
                roi.x0 < 0
                or roi.y0 < 0
                or roi.x0 + roi.width > self.width
                or roi.y0 + roi.height > self.height
            ):
                raise ValueError("ROI extends beyond the camera")
        if self.roi_signal.overlaps(self.roi_idler):
            raise ValueError("signal and idler ROIs must be disjoint")
        if not self.waist_px > 0:
            raise ValueError("waist must be positive")
        if self.centroid_s is None:
            object.__setattr__(self, "centroid_s", self.roi_signal.center())
        if self.centroid_i is None:
            object.__setattr__(self, "centroid_i", self.roi_idler.center())

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "roi_signal": [self.roi_signal.x0, self.roi_signal.y0,
                           self.roi_signal.width, self.roi_signal.height],
            "roi_idler": [self.roi_idler.x0, self.roi_idler.y0,
                          self.roi_idler.width, self.roi_idler.height],
            "centroid_s": list(self.centroid_s),
            "centroid_i": list(self.centroid_i),
            "waist_px": self.waist_px,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraGeometry":
        return cls(
            width=d["width"],
            height=d["height"],
            roi_signal=Rect(*d["roi_signal"]),
            roi_idler=Rect(*d["roi_idler"]),
            centroid_s=tuple(d["centroid_s"]),
            centroid_i=tuple(d["centroid_i"]),
            waist_px=d["waist_px"],
        )


@dataclass(frozen=True)
class NoiseModel:
    """Detection efficiency, dark counts, timing jitter, polarization noise.

    ``werner_p`` mixes the pure two-photon polarization state with white
    polarization noise: with probability 1 - werner_p a pair carries a
    maximally mixed polarization state (passing any analyzer pair with
    probability 1/4) over the same spatial profile.
    """

    efficiency: float = 1.0
    dark_rate: float = 0.0       # events / s / pixel
    jitter_sigma: float = 1.0    # ns
    werner_p: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be nonnegative")
        if self.jitter_sigma < 0:
            raise ValueError("jitter must be nonnegative")
        if not 0.0 <= self.werner_p <= 1.0:
            raise ValueError("werner_p must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "dark_rate": self.dark_rate,
            "jitter_sigma": self.jitter_sigma,
            "werner_p": self.werner_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(**d)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to (re)generate one 16-setting run."""

    geometry: CameraGeometry
    settings: dict  # label -> event filename, insertion-ordered
    pair_rate: float  # source pairs / s
    duration: float   # s
    noise: NoiseModel
    rng_seed: int
    qplate_s: QPlateParams
    qplate_i: QPlateParams

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.pair_rate >= 0:
            raise ValueError("pair rate must be nonnegative")
        names = list(self.settings.values())
        if len(set(names)) != len(names):
            raise ValueError("event filenames must be distinct")

    @property
    def n_source_pairs(self) -> int:
        return int(round(self.pair_rate * self.duration))

    def to_json(self) -> str:
        d = {
            "geometry": self.geometry.to_dict(),
            "settings": dict(self.settings),
            "pair_rate": self.pair_rate,
            "duration": self.duration,
            "noise": self.noise.to_dict(),
            "rng_seed": self.rng_seed,
            "qplate_s": {"q": self.qplate_s.q, "delta": self.qplate_s.delta,
                         "waist": self.qplate_s.waist},
            "qplate_i": {"q": self.qplate_i.q, "delta": self.qplate_i.delta,
                         "waist": self.qplate_i.waist},
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(
            geometry=CameraGeometry.from_dict(d["geometry"]),
            settings=dict(d["settings"]),
            pair_rate=d["pair_rate"],
            duration=d["duration"],
            noise=NoiseModel.from_dict(d["noise"]),
            rng_seed=d["rng_seed"],
            qplate_s=QPlateParams(**d["qplate_s"]),
            qplate_i=QPlateParams(**d["qplate_i"]),
        )


def default_manifest(qplate_s: QPlateParams, qplate_i: QPlateParams,
                     n_pairs: int = 100_000, pair_rate: float = 10_000.0,
                     noise: NoiseModel | None = None, rng_seed: int = 0,
                     geometry: CameraGeometry | None = None) -> RunManifest:
    """Manifest over the standard tomography set with one file per setting."""
    labels = standard_set().labels
    geometry = geometry or CameraGeometry(waist_px=qplate_s.waist)
    return RunManifest(
        geometry=geometry,
        settings={lab: f"events_{lab}.evb" for lab in labels},
        pair_rate=pair_rate,
        duration=n_pairs / pair_rate,
        noise=noise or NoiseModel(),
        rng_seed=rng_seed,
        qplate_s=qplate_s,
        qplate_i=qplate_i,
    )


# ---------------------------------------------------------------------------
# Binary event IO

def write_events(path, events: np.ndarray) -> None:
    events = np.asarray(events, dtype=EVENT_DTYPE)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["count"] = len(events)
    with open(path, "wb") as fh:
        header.tofile(fh)
        events.tofile(fh)


def read_events(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_DTYPE.itemsize)
        if len(raw) < HEADER_DTYPE.itemsize:
            raise FormatError(f"{path}: truncated header")
        header = np.frombuffer(raw, dtype=HEADER_DTYPE)[0]
        if header["magic"] != MAGIC:
            raise FormatError(
                f"{path}: bad magic {bytes(header['magic'])!r}, expected {MAGIC.decode()} "
            )
        if header["version"] != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {header['version']}")
        events = np.fromfile(fh, dtype=EVENT_DTYPE)
    if len(events) != header["count"]:
        raise FormatError(
            f"{path}: header promises {header['count']} records, found {len(events)}"
        )
    return events


# ---------------------------------------------------------------------------
# Position sampling

class PairPositionSampler:
    """Exact rejection sampler for two-photon transverse positions.

    The target density is sum over coherence groups g of
    |sum_{k in g} c_k phi_k(x)|^2 * r_s * r_i, with phi_k the product of the
    two normalized transverse modes of term k.  The proposal draws a term
    with probability |c_k|^2 / W, radii from the exact per-mode radial law
    (gamma in r^2), and uniform angles; Cauchy-Schwarz bounds the target by
    max-group-size * W * proposal, giving an exact accept probability.
    """

    def __init__(self, coeffs, ell_s, ell_i, groups, waist_s, waist_i):
        coeffs = np.asarray(coeffs, dtype=complex)
        keep = np.abs(coeffs) ** 2 > 1e-30
        self.coeffs = coeffs[keep]
        self.ell_s = np.asarray(ell_s)[keep]
        self.ell_i = np.asarray(ell_i)[keep]
        self.groups = np.asarray(groups)[keep]
        if len(self.coeffs) == 0:
            raise ValueError("sampler needs at least one nonzero component")
        # Components can cancel coherently (same modes, opposite amplitudes);
        # detect an identically-zero density up front instead of rejecting
        # forever.  Within a group, terms with equal mode indices interfere.
        total = 0.0
        for g in set(self.groups.tolist()):
            sel = self.groups == g
            modes = {}
            for c, ls, li in zip(self.coeffs[sel], self.ell_s[sel], self.ell_i[sel]):
                modes[(ls, li)] = modes.get((ls, li), 0.0) + c
            total += sum(abs(v) ** 2 for v in modes.values())
        if total < 1e-28:
            raise ValueError("density is identically zero for this projection")
        self.waist_s = waist_s
        self.waist_i = waist_i
        self.weights = np.abs(self.coeffs) ** 2
        self.total_weight = self.weights.sum()
        _, counts = np.unique(self.groups, return_counts=True)
        self.envelope = int(counts.max())
        self._probs = self.weights / self.total_weight
        self._group_ids = np.unique(self.groups)

    def _density_ratio(self, r_s, th_s, r_i, th_i):
        """target / (envelope * W * proposal); the r_s r_i Jacobians cancel."""
        amp_s = self._mode_matrix(self.ell_s, self.waist_s, r_s, th_s)
        amp_i = self._mode_matrix(self.ell_i, self.waist_i, r_i, th_i)
        fields = amp_s * amp_i  # (n_components, batch)
        target = np.zeros(r_s.shape)
        for g in self._group_ids:
            sel = self.groups == g
            target += np.abs((self.coeffs[sel, None] * fields[sel]).sum(axis=0)) ** 2
        proposal = (self.weights[:, None] * np.abs(fields) ** 2).sum(axis=0)
        out = np.zeros_like(target)
        ok = proposal > 0
        out[ok] = target[ok] / (self.envelope * proposal[ok])
        return out

    @staticmethod
    def _mode_matrix(ells, waist, r, theta):
        from .lgmodes import RadialProfile, evaluate

        rows = []
        for l in ells:
            prof = RadialProfile(int(l), waist)
            rows.append(evaluate(prof, r) * np.exp(1j * float(l) * theta))
        return np.asarray(rows)

    def sample(self, n: int, rng: np.random.Generator):
        """Draw n positions (r_s, theta_s, r_i, theta_i)."""
        if n == 0:
            z = np.empty(0)
            return z, z.copy(), z.copy(), z.copy()
        out = [[], [], [], []]
        got = 0
        attempts = 0
        budget = MAX_ATTEMPT_FACTOR * n
        while got < n:
            batch = min(max(2 * (n - got), 1024), 1_000_000)
            if attempts + batch > budget:
                batch = budget - attempts
                if batch <= 0:
                    raise SamplingError(
                        f"rejection sampling exhausted {budget} attempts "
                        f"({got}/{n} accepted)"
                    )
            attempts += batch
            k = rng.choice(len(self.coeffs), size=batch, p=self._probs)
            r_s = np.sqrt(rng.gamma(np.abs(self.ell_s[k]) + 1.0, self.waist_s**2 / 2.0))
            r_i = np.sqrt(rng.gamma(np.abs(self.ell_i[k]) + 1.0, self.waist_i**2 / 2.0))
            th_s = rng.uniform(0.0, 2.0 * math.pi, size=batch)
            th_i = rng.uniform(0.0, 2.0 * math.pi, size=batch)
            accept = rng.random(batch) < self._density_ratio(r_s, th_s, r_i, th_i)
            for arr, vals in zip(out, (r_s, th_s, r_i, th_i)):
                arr.append(vals[accept])
            got += int(accept.sum())
        return tuple(np.concatenate(a)[:n] for a in out)


def projected_sampler(state: ModeSuperposition, setting: MeasurementSetting) -> PairPositionSampler:
    """Sampler for the conditional position density given both analyzers pass."""
    coeffs = []
    for t in state.terms:
        a_s = np.vdot(setting.proj_s, JONES[t.pol_s])
        a_i = np.vdot(setting.proj_i, JONES[t.pol_i])
        coeffs.append(t.amp * a_s * a_i)
    ells_s = [t.ell_s for t in state.terms]
    ells_i = [t.ell_i for t in state.terms]
    return PairPositionSampler(coeffs, ells_s, ells_i, [0] * len(coeffs),
                               state.waist_s, state.waist_i)


def intensity_sampler(state: ModeSuperposition) -> PairPositionSampler:
    """Sampler for the unconditioned two-photon intensity profile."""
    sector = {("L", "L"): 0, ("L", "R"): 1, ("R", "L"): 2, ("R", "R"): 3}
    coeffs = [t.amp for t in state.terms]
    groups = [sector[(t.pol_s, t.pol_i)] for t in state.terms]
    return PairPositionSampler(coeffs, [t.ell_s for t in state.terms],
                               [t.ell_i for t in state.terms], groups,
                               state.waist_s, state.waist_i)


# ---------------------------------------------------------------------------
# Event assembly

def _pixels(r, theta, centroid):
    x = np.rint(centroid[0] + r * np.cos(theta)).astype(np.int64)
    y = np.rint(centroid[1] + r * np.sin(theta)).astype(np.int64)
    return x, y


def _detect_photons(r, theta, centroid, t_true, noise: NoiseModel,
                    geometry: CameraGeometry, rng) -> np.ndarray:
    """Efficiency thinning, jitter, pixel mapping for one arm; returns records."""
    n = len(r)
    keep = rng.random(n) < noise.efficiency
    t = np.asarray(t_true, dtype=float).copy()
    if noise.jitter_sigma > 0:
        t = t + rng.normal(0.0, noise.jitter_sigma, size=n)
    x, y = _pixels(r, theta, centroid)
    on_camera = (x >= 0) & (x < geometry.width) & (y >= 0) & (y < geometry.height)
    keep &= on_camera
    m = int(keep.sum())
    rec = np.zeros(m, dtype=EVENT_DTYPE)
    rec["x"] = x[keep]
    rec["y"] = y[keep]
    rec["t"] = np.maximum(np.rint(t[keep]), 0.0).astype(np.uint64)
    rec["tot"] = rng.choice(TOT_VALUES, size=m, p=TOT_WEIGHTS)
    return rec


def _dark_events(noise: NoiseModel, geometry: CameraGeometry, duration_s: float,
                 rng) -> np.ndarray:
    mean = noise.dark_rate * duration_s * geometry.width * geometry.height
    n = int(rng.poisson(mean)) if mean > 0 else 0
    rec = np.zeros(n, dtype=EVENT_DTYPE)
    if n:
        rec["x"] = rng.integers(0, geometry.width, size=n)
        rec["y"] = rng.integers(0, geometry.height, size=n)
        rec["t"] = rng.uniform(0.0, duration_s * 1e9, size=n).astype(np.uint64)
        rec["tot"] = rng.choice(TOT_VALUES, size=n, p=TOT_WEIGHTS)
    return rec


def sample_pair(state, setting, noise: NoiseModel, geometry: CameraGeometry,
                rng, duration: float = 1.0):
    """Draw one pair from the conditional coincidence density of a setting.

    Returns (signal_record_or_None, idler_record_or_None): both present, a
    single survivor after efficiency thinning, or neither.
    """
    sampler = projected_sampler(state, setting)
    r_s, th_s, r_i, th_i = sampler.sample(1, rng)
    t_true = rng.uniform(0.0, duration * 1e9, size=1)
    rec_s = _detect_photons(r_s, th_s, geometry.centroid_s, t_true, noise, geometry, rng)
    rec_i = _detect_photons(r_i, th_i, geometry.centroid_i, t_true, noise, geometry, rng)
    return (rec_s[0] if len(rec_s) else None, rec_i[0] if len(rec_i) else None)


def generate_setting_events(state, setting: MeasurementSetting,
                            manifest: RunManifest, rng) -> tuple[np.ndarray, dict]:
    """All events of one setting run: pair detections plus dark counts.

    Returns the time-sorted record array and per-setting statistics.
    """
    noise = manifest.noise
    geometry = manifest.geometry
    duration_ns = manifest.duration * 1e9
    n_source = manifest.n_source_pairs

    n_entangled = int(rng.binomial(n_source, noise.werner_p)) if n_source else 0
    n_white = n_source - n_entangled

    p_pass = pass_probability(state, setting)
    n_pairs_ent = int(rng.binomial(n_entangled, min(p_pass, 1.0))) if n_entangled else 0
    n_pairs_white = int(rng.binomial(n_white, 0.25)) if n_white else 0

    chunks = []
    if n_pairs_ent > 0:
        chunks.append((projected_sampler(state, setting), n_pairs_ent))
    if n_pairs_white > 0:
        chunks.append((intensity_sampler(state), n_pairs_white))

    recs = []
    for sampler, n in chunks:
        r_s, th_s, r_i, th_i = sampler.sample(n, rng)
        t_true = rng.uniform(0.0, duration_ns, size=n)
        recs.append(_detect_photons(r_s, th_s, geometry.centroid_s, t_true,
                                    noise, geometry, rng))
        recs.append(_detect_photons(r_i, th_i, geometry.centroid_i, t_true,
                                    noise, geometry, rng))
    recs.append(_dark_events(noise, geometry, manifest.duration, rng))

    events = np.concatenate(recs) if recs else np.zeros(0, dtype=EVENT_DTYPE)
    order = np.argsort(events["t"], kind="stable")
    events = events[order]
    stats = {
        "setting": setting.label,
        "source_pairs": n_source,
        "entangled_branch": n_entangled,
        "white_branch": n_white,
        "passed_entangled": n_pairs_ent,
        "passed_white": n_pairs_white,
        "pass_probability": p_pass,
        "events": int(len(events)),
    }
    return events, stats


def generate_run(manifest: RunManifest, out_dir, max_workers: int | None = None) -> list[dict]:
    """Write one event file per setting plus ``manifest.json``.

    Deterministic for a given manifest seed: each setting gets an
    independent child RNG, so outputs do not depend on scheduling order or
    worker count.  Returns per-setting statistics.
    """
    from concurrent.futures import ThreadPoolExecutor
    from pathlib import Path

    from ._threads import worker_count

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = evb_state(manifest.qplate_s, manifest.qplate_i)
    labels = list(manifest.settings)
    children = np.random.SeedSequence(manifest.rng_seed).spawn(len(labels))

    def job(k: int) -> dict:
        label = labels[k]
        rng = np.random.default_rng(children[k])
        events, stats = generate_setting_events(
            state, setting_from_label(label), manifest, rng
        )
        write_events(out_dir / manifest.settings[label], events)
        return stats

    workers = worker_count(max_workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(job, range(len(labels))))
    else:
        stats = [job(k) for k in range(len(labels))]

    (out_dir / "manifest.json").write_text(manifest.to_json())
    return stats
