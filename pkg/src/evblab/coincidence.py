"""Temporal coincidence finding and polar-coordinate correlation histograms.

Event streams are numpy structured arrays in the on-disk record layout (see
:mod:`evblab.eventsim`).  Matching is a two-pointer sweep over the
time-sorted signal/idler sub-streams; the single-match policy pairs each
signal greedily with its nearest-in-time unused idler (ties to the earlier
idler), processing signals in time order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, FormatError


@dataclass(frozen=True)
class CoincidenceConfig:
    """window: max |t_s - t_i| in ns; allow_multi_match: emit every pair in
    window instead of greedy one-to-one matching."""

    window: float = 10.0
    allow_multi_match: bool = False

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("coincidence window must be positive")


@dataclass(frozen=True)
class PolarBinning:
    """Polar histogram geometry about per-ROI centroids.

    Centroids may be left unset and filled later from the measured
    intensity distribution (:func:`centroids_from_events`).
    """

    n_r: int = 5
    n_theta: int = 16
    r_max: float = 20.0
    centroid_s: tuple[float, float] | None = None
    centroid_i: tuple[float, float] | None = None
    store_full: bool = False

    def __post_init__(self):
        if self.n_r < 1 or self.n_theta < 1:
            raise ValueError("need at least one bin per axis")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    def theta_edges(self) -> np.ndarray:
        return np.linspace(0.0, 2.0 * math.pi, self.n_theta + 1)

    def r_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n_r + 1)

    def theta_centers(self) -> np.ndarray:
        e = self.theta_edges()
        return 0.5 * (e[:-1] + e[1:])


@dataclass
class CoincidenceHistogram:
    """Pair counts binned over polar coordinates for one measurement setting.

    counts_theta sums over radius, counts_r over angle; counts_full (optional)
    is the dense (n_r*n_theta) x (n_r*n_theta) joint histogram with the
    signal/idler flat index r_bin * n_theta + theta_bin.
    """

    setting: str
    binning: PolarBinning
    counts_theta: np.ndarray
    counts_r: np.ndarray
    counts_full: np.ndarray | None
    total_pairs: int
    total_singles: int
    dropped_by_radius: int
    skipped_outside_roi: int
    total_events: int

    def to_dict(self) -> dict:
        d = {
            "setting": self.setting,
            "n_r": self.binning.n_r,
            "n_theta": self.binning.n_theta,
            "r_max": self.binning.r_max,
            "centroid_s": list(self.binning.centroid_s or ()),
            "centroid_i": list(self.binning.centroid_i or ()),
            "counts_theta": self.counts_theta.tolist(),
            "counts_r": self.counts_r.tolist(),
            "total_pairs": int(self.total_pairs),
            "total_singles": int(self.total_singles),
            "dropped_by_radius": int(self.dropped_by_radius),
            "skipped_outside_roi": int(self.skipped_outside_roi),
            "total_events": int(self.total_events),
        }
        if self.counts_full is not None:
            d["counts_full"] = self.counts_full.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoincidenceHistogram":
        binning = PolarBinning(
            n_r=d["n_r"],
            n_theta=d["n_theta"],
            r_max=d["r_max"],
            centroid_s=tuple(d["centroid_s"]) or None,
            centroid_i=tuple(d["centroid_i"]) or None,
            store_full="counts_full" in d,
        )
        full = np.asarray(d["counts_full"]) if "counts_full" in d else None
        return cls(
            setting=d["setting"],
            binning=binning,
            counts_theta=np.asarray(d["counts_theta"]),
            counts_r=np.asarray(d["counts_r"]),
            counts_full=full,
            total_pairs=d["total_pairs"],
            total_singles=d["total_singles"],
            dropped_by_radius=d["dropped_by_radius"],
            skipped_outside_roi=d["skipped_outside_roi"],
            total_events=d["total_events"],
        )


@dataclass
class MatchResult:
    """Matched pairs (parallel signal/idler record arrays) plus bookkeeping."""

    signal: np.ndarray
    idler: np.ndarray
    n_signal_events: int
    n_idler_events: int
    skipped_outside_roi: int
    total_events: int

    @property
    def n_pairs(self) -> int:
        return len(self.signal)

    @property
    def n_singles(self) -> int:
        return self.n_signal_events + self.n_idler_events - 2 * self.n_pairs

    def pairs(self):
        """Iterate (signal_record, idler_record) tuples."""
        return list(zip(self.signal, self.idler))


# ---------------------------------------------------------------------------
# Matching

def _require_sorted(t: np.ndarray):
    if len(t) > 1 and np.any(np.diff(t.astype(np.int64)) < 0):
        raise FormatError("event stream is not sorted by time")


def _match_multi(ts: np.ndarray, ti: np.ndarray, window: float):
    lo = np.searchsorted(ti, ts - window, side="left")
    hi = np.searchsorted(ti, ts + window, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    sig_idx = np.repeat(np.arange(len(ts)), counts)
    starts = np.repeat(lo, counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return sig_idx, starts + offsets


def _match_greedy(ts: np.ndarray, ti: np.ndarray, window: float):
    lo = np.searchsorted(ti, ts - window, side="left").tolist()
    hi = np.searchsorted(ti, ts + window, side="right").tolist()
    ts_l = ts.tolist()
    ti_l = ti.tolist()
    used = bytearray(len(ti_l))
    out_s, out_i = [], []
    for k, t in enumerate(ts_l):
        best = -1
        best_d = 0
        for j in range(lo[k], hi[k]):
            if used[j]:
                continue
            d = abs(ti_l[j] - t)
            if best < 0 or d < best_d:
                best, best_d = j, d
        if best >= 0:
            used[best] = 1
            out_s.append(k)
            out_i.append(best)
    return np.asarray(out_s, dtype=np.int64), np.asarray(out_i, dtype=np.int64)


def find_coincidences(events: np.ndarray, geometry, config: CoincidenceConfig,
                      chunk_size: int | None = None) -> MatchResult:
    """Pair up signal-ROI and idler-ROI detections within the time window.

    The stream must be sorted by time (rejected otherwise).  Events outside
    both ROIs are counted and skipped.  With ``chunk_size`` the stream is cut
    into independently processed chunks at quiet gaps (no events within twice
    the window), which cannot change the result; it exists so large streams
    can be processed piecewise.
    """
    t_all = events["t"].astype(np.int64)
    _require_sorted(t_all)

    in_s = geometry.roi_signal.contains(events["x"], events["y"])
    in_i = geometry.roi_idler.contains(events["x"], events["y"])
    skipped = int(len(events) - in_s.sum() - in_i.sum())

    sig = events[in_s]
    idl = events[in_i]
    ts = sig["t"].astype(np.int64)
    ti = idl["t"].astype(np.int64)

    segments = [(ts, ti, 0, 0)]
    if chunk_size is not None and chunk_size > 0 and len(t_all):
        segments = _split_quiet(ts, ti, config.window, chunk_size)

    parts_s, parts_i = [], []
    for seg_ts, seg_ti, off_s, off_i in segments:
        if config.allow_multi_match:
            a, b = _match_multi(seg_ts, seg_ti, config.window)
        else:
            a, b = _match_greedy(seg_ts, seg_ti, config.window)
        parts_s.append(a + off_s)
        parts_i.append(b + off_i)
    sidx = np.concatenate(parts_s) if parts_s else np.empty(0, dtype=np.int64)
    iidx = np.concatenate(parts_i) if parts_i else np.empty(0, dtype=np.int64)

    return MatchResult(
        signal=sig[sidx],
        idler=idl[iidx],
        n_signal_events=len(sig),
        n_idler_events=len(idl),
        skipped_outside_roi=skipped,
        total_events=len(events),
    )


def _split_quiet(ts, ti, window, chunk_size):
    """Cut both sub-streams at gaps where no event lies within 2*window,
    so greedy matching in each piece is independent of the others."""
    merged = np.sort(np.concatenate([ts, ti]))
    if len(merged) == 0:
        return [(ts, ti, 0, 0)]
    gap_after = np.nonzero(np.diff(merged) > 2 * window)[0]
    cut_times = merged[gap_after]  # safe boundaries: split after these times
    segments = []
    last_s = last_i = 0
    taken = 0
    for ct in cut_times:
        taken_now = np.searchsorted(merged, ct, side="right")
        if taken_now - taken < chunk_size:
            continue
        taken = taken_now
        cs = int(np.searchsorted(ts, ct, side="right"))
        ci = int(np.searchsorted(ti, ct, side="right"))
        segments.append((ts[last_s:cs], ti[last_i:ci], last_s, last_i))
        last_s, last_i = cs, ci
    segments.append((ts[last_s:], ti[last_i:], last_s, last_i))
    return segments


def accidental_estimate(events: np.ndarray, geometry, config: CoincidenceConfig,
                        offset: float) -> int:
    """Coincidence count after shifting idler times by ``offset`` ns.

    Estimates the accidental (uncorrelated) pair rate; the offset must be
    large compared to the window so no true pair survives the shift.
    """
    if not offset >= 10 * config.window:
        raise ValueError("offset must be well outside the coincidence window")
    t_all = events["t"].astype(np.int64)
    _require_sorted(t_all)
    in_s = geometry.roi_signal.contains(events["x"], events["y"])
    in_i = geometry.roi_idler.contains(events["x"], events["y"])
    ts = t_all[in_s]
    ti = t_all[in_i] + int(round(offset))
    if config.allow_multi_match:
        a, _ = _match_multi(ts, ti, config.window)
    else:
        a, _ = _match_greedy(ts, ti, config.window)
    return len(a)


# ---------------------------------------------------------------------------
# Polar binning

def centroids_from_events(events: np.ndarray, geometry):
    """Intensity centroid of each ROI computed from all detections in it."""
    out = []
    for roi in (geometry.roi_signal, geometry.roi_idler):
        m = roi.contains(events["x"], events["y"])
        if not m.any():
            out.append(roi.center())
        else:
            out.append((float(events["x"][m].mean()), float(events["y"][m].mean())))
    return tuple(out)


def pooled_centroids(event_arrays, geometry):
    """Shared ROI centroids from the detections of an entire run.

    One centroid pair must serve all 16 settings: events live on the pixel
    lattice, so bins of events sit exactly on angular bin edges, and
    per-setting centroid jitter would flip those edge pixels inconsistently
    between settings, corrupting the per-bin tomography counts.
    """
    sums = np.zeros((2, 2))
    counts = np.zeros(2)
    for events in event_arrays:
        for j, roi in enumerate((geometry.roi_signal, geometry.roi_idler)):
            m = roi.contains(events["x"], events["y"])
            sums[j, 0] += events["x"][m].sum()
            sums[j, 1] += events["y"][m].sum()
            counts[j] += m.sum()
    out = []
    for j, roi in enumerate((geometry.roi_signal, geometry.roi_idler)):
        if counts[j] == 0:
            out.append(roi.center())
        else:
            out.append((sums[j, 0] / counts[j], sums[j, 1] / counts[j]))
    return tuple(out)


def resolve_centroids(binning: PolarBinning, events: np.ndarray, geometry) -> PolarBinning:
    """Fill unset centroids from the event intensity distribution."""
    if binning.centroid_s is not None and binning.centroid_i is not None:
        return binning
    cs, ci = centroids_from_events(events, geometry)
    return replace(
        binning,
        centroid_s=binning.centroid_s or cs,
        centroid_i=binning.centroid_i or ci,
    )


def _polar_bins(x, y, centroid, binning: PolarBinning):
    dx = x.astype(float) - centroid[0]
    dy = y.astype(float) - centroid[1]
    r = np.hypot(dx, dy)
    theta = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
    tbin = np.minimum(
        (theta / (2.0 * math.pi) * binning.n_theta).astype(np.int64),
        binning.n_theta - 1,
    )
    rbin = np.minimum((r / binning.r_max * binning.n_r).astype(np.int64), binning.n_r - 1)
    return r, rbin, tbin


def bin_polar(result: MatchResult, binning: PolarBinning, setting: str = "") -> CoincidenceHistogram:
    """Histogram matched pairs over polar coordinates about the ROI centroids.

    Pairs with either photon beyond r_max are dropped and counted.
    """
    if binning.centroid_s is None or binning.centroid_i is None:
        raise ConfigurationError("binning centroids are unset; call resolve_centroids")
    r_s, rb_s, tb_s = _polar_bins(result.signal["x"], result.signal["y"],
                                  binning.centroid_s, binning)
    r_i, rb_i, tb_i = _polar_bins(result.idler["x"], result.idler["y"],
                                  binning.centroid_i, binning)
    keep = (r_s <= binning.r_max) & (r_i <= binning.r_max)
    dropped = int(len(keep) - keep.sum())

    nt, nr = binning.n_theta, binning.n_r
    flat_t = tb_s[keep] * nt + tb_i[keep]
    counts_theta = np.bincount(flat_t, minlength=nt * nt).reshape(nt, nt)
    flat_r = rb_s[keep] * nr + rb_i[keep]
    counts_r = np.bincount(flat_r, minlength=nr * nr).reshape(nr, nr)

    counts_full = None
    if binning.store_full:
        n = nr * nt
        fs = rb_s[keep] * nt + tb_s[keep]
        fi = rb_i[keep] * nt + tb_i[keep]
        counts_full = np.bincount(fs * n + fi, minlength=n * n).reshape(n, n)

    return CoincidenceHistogram(
        setting=setting,
        binning=binning,
        counts_theta=counts_theta,
        counts_r=counts_r,
        counts_full=counts_full,
        total_pairs=int(keep.sum()),
        total_singles=result.n_singles,
        dropped_by_radius=dropped,
        skipped_outside_roi=result.skipped_outside_roi,
        total_events=result.total_events,
    )


class PixelPairHistogram:
    """Full-resolution joint histogram over raw pixel pairs.

    Addresses every (signal pixel, idler pixel) combination of the two ROIs
    (40x40 ROIs give 1600 x 1600 = 2.56e6 cells) with 64-bit counters, so
    arbitrarily heavy runs cannot overflow.
    """

    def __init__(self, geometry):
        self.geometry = geometry
        self._n_s = geometry.roi_signal.width * geometry.roi_signal.height
        self._n_i = geometry.roi_idler.width * geometry.roi_idler.height
        self.counts = np.zeros((self._n_s, self._n_i), dtype=np.int64)

    def _flat(self, roi, x, y):
        fx = x.astype(np.int64) - roi.x0
        fy = y.astype(np.int64) - roi.y0
        if np.any((fx < 0) | (fx >= roi.width) | (fy < 0) | (fy >= roi.height)):
            raise ValueError("pixel outside ROI")
        return fy * roi.width + fx

    def accumulate(self, result: MatchResult):
        s = self._flat(self.geometry.roi_signal, result.signal["x"], result.signal["y"])
        i = self._flat(self.geometry.roi_idler, result.idler["x"], result.idler["y"])
        flat = s * self._n_i + i
        add = np.bincount(flat, minlength=self._n_s * self._n_i)
        self.counts += add.reshape(self._n_s, self._n_i)

    def count(self, pixel_s: tuple[int, int], pixel_i: tuple[int, int]) -> int:
        s = self._flat(self.geometry.roi_signal,
                       np.array([pixel_s[0]]), np.array([pixel_s[1]]))[0]
        i = self._flat(self.geometry.roi_idler,
                       np.array([pixel_i[0]]), np.array([pixel_i[1]]))[0]
        return int(self.counts[s, i])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def addressable_pairs(self) -> int:
        return self._n_s * self._n_i
