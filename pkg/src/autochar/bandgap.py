"""Direct band-gap extraction from diffuse-reflectance spectra.

The median spectrum of a region is transformed to a Tauc curve
(F(R) * E)^(1/gamma) over photon energy E = 1240/lambda, recursively
split into near-linear pieces, and every adjacent piece pair is fit
with a least-squares line. Each candidate line is scored by its RMSE
against the curve between the line's x-intercept and the nearest peak
above it (minus half the peak width); the minimum-RMSE candidate's
x-intercept is the band gap.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

REFLECTANCE_FLOOR = 1e-4
WAVELENGTH_RANGE_NM = (380.0, 1020.0)


class NoFitError(ValueError):
    """Raised when no valid candidate edge line survives the filters."""


@dataclass
class TaucCurve:
    """Transformed spectrum: ascending photon energies (eV) and Tauc values."""

    energies: np.ndarray
    values: np.ndarray
    gamma: float = 0.5

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.energies.size != self.values.size or self.energies.size == 0:
            raise ValueError("energies and values must share one nonzero length")
        if not np.all(np.diff(self.energies) > 0):
            raise ValueError("energies must be strictly ascending")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("Tauc values must be finite and non-negative")

    def __len__(self):
        return self.energies.size


@dataclass
class LineSegmentFit:
    """Least-squares line over curve indices [lo, hi)."""

    lo: int
    hi: int
    slope: float
    intercept: float
    r2: float


@dataclass
class Candidate:
    fit: LineSegmentFit
    e_g: float
    rmse: float
    window: tuple


@dataclass
class BandGapResult:
    """Winning edge fit: band gap (eV), its RMSE, and fit diagnostics."""

    e_g: float
    rmse: float
    window: tuple
    n_candidates: int
    fit: LineSegmentFit
    peaks: list = field(default_factory=list)


def kubelka_munk(reflectance) -> np.ndarray:
    """Diffuse-reflectance to relative absorption: F(R) = (1 - R)^2 / (2R).

    R is clipped to [1e-4, 1] first: the lower bound guards the
    divergence at R -> 0, the upper maps any super-unity instrument
    value to zero absorption so a perfect reflector gives exactly F = 0.
    """
    r = np.clip(np.asarray(reflectance, dtype=np.float64), REFLECTANCE_FLOOR, 1.0)
    return (1.0 - r) ** 2 / (2.0 * r)


def tauc_transform(wavelengths, reflectance, gamma: float = 0.5) -> TaucCurve:
    """Build the Tauc curve (F(R) * 1240/lambda)^(1/gamma) on ascending energy.

    gamma = 1/2 targets direct transitions, gamma = 2 indirect ones.
    Wavelengths must lie in the 380-1020 nm imaging range.
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    refl = np.asarray(reflectance, dtype=np.float64)
    if wl.size == 0 or wl.size != refl.size:
        raise ValueError("need matching, nonempty wavelength and reflectance arrays")
    if gamma not in (0.5, 2.0):
        raise ValueError("gamma must be 0.5 (direct) or 2 (indirect)")
    if wl.min() < WAVELENGTH_RANGE_NM[0] - 1e-9 or wl.max() > WAVELENGTH_RANGE_NM[1] + 1e-9:
        raise ValueError(
            f"wavelengths outside {WAVELENGTH_RANGE_NM} nm: [{wl.min()}, {wl.max()}]"
        )
    energies = 1240.0 / wl
    order = np.argsort(energies)
    energies = energies[order]
    values = (kubelka_munk(refl[order]) * energies) ** (1.0 / gamma)
    return TaucCurve(energies=energies, values=values, gamma=gamma)


def _line_fit(x, y):
    """Least-squares line plus the coefficient of determination.

    R^2 = 1 - SSE/SST with SST about the mean; constant data counts as a
    perfect horizontal fit (R^2 = 1).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = x.mean(), y.mean()
    sxx = float(((x - mx) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("degenerate fit: all x equal")
    slope = float(((x - mx) * (y - my)).sum()) / sxx
    intercept = my - slope * mx
    sst = float(((y - my) ** 2).sum())
    if sst == 0.0:
        return slope, intercept, 1.0
    sse = float(((y - (slope * x + intercept)) ** 2).sum())
    return slope, intercept, 1.0 - sse / sst


def rmse(y_true, y_pred) -> float:
    """Root-mean-square error over matched samples."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    return float(np.sqrt(((y_true - y_pred) ** 2).mean()))


def recursive_segment(curve: TaucCurve, r2_min: float = 0.990, min_len: int = 5):
    """Halve the curve until every piece is near-linear or at the floor.

    Returns ordered, contiguous, non-overlapping half-open index ranges
    covering [0, len). A range stops splitting once its least-squares
    line reaches R^2 >= r2_min or its length is <= min_len; splits land
    at the midpoint with the extra point going to the left half.
    """
    if len(curve) < 2:
        return [(0, len(curve))]
    out = []

    def visit(lo, hi):
        n = hi - lo
        if n <= min_len:
            out.append((lo, hi))
            return
        _, _, r2 = _line_fit(curve.energies[lo:hi], curve.values[lo:hi])
        if r2 >= r2_min:
            out.append((lo, hi))
            return
        mid = lo + (n + 1) // 2
        visit(lo, mid)
        visit(mid, hi)

    visit(0, len(curve))
    return out


def detect_peaks(curve: TaucCurve, prominence_frac: float = 0.05):
    """Local maxima with prominence >= 5% of the value range.

    Returns (index, width) pairs with widths in energy units measured
    between the half-prominence crossings. A curve with no interior peak
    reports a zero-width terminal pseudo-peak at the high-energy end so
    that candidate windows stay bounded.
    """
    if len(curve) < 3:
        raise ValueError("peak detection needs at least 3 points")
    vrange = float(curve.values.max() - curve.values.min())
    if vrange > 0.0:
        idx, props = find_peaks(curve.values, prominence=prominence_frac * vrange,
                                width=0, rel_height=0.5)
    else:
        idx, props = np.array([], dtype=int), {}
    if idx.size == 0:
        return [(len(curve) - 1, 0.0)]
    grid = np.arange(len(curve), dtype=np.float64)
    lefts = np.interp(props["left_ips"], grid, curve.energies)
    rights = np.interp(props["right_ips"], grid, curve.energies)
    return [(int(i), float(r - l)) for i, l, r in zip(idx, lefts, rights)]


def score_candidates(curve: TaucCurve, segments, peaks):
    """Fit every adjacent segment pair and score it by windowed RMSE.

    The window spans curve points with energy between the line's
    x-intercept and the nearest peak energy above it minus half that
    peak's width. Candidates with non-positive slope, an x-intercept
    outside the curve, or an empty window are dropped; if none survive,
    NoFitError is raised.
    """
    if not segments:
        raise ValueError("need at least one segment")
    peak_energies = sorted((float(curve.energies[i]), w) for i, w in peaks)
    candidates = []
    for (lo, _), (_, hi) in zip(segments, segments[1:]):
        slope, intercept, r2 = _line_fit(curve.energies[lo:hi], curve.values[lo:hi])
        if slope <= 0.0:
            continue
        x_int = -intercept / slope
        if not (curve.energies[0] <= x_int <= curve.energies[-1]):
            continue
        bound = next(((pe, pw) for pe, pw in peak_energies if pe > x_int), None)
        if bound is None:
            continue
        upper = bound[0] - bound[1] / 2.0
        in_window = (curve.energies >= x_int) & (curve.energies <= upper)
        if not in_window.any():
            continue
        line = slope * curve.energies[in_window] + intercept
        candidates.append(Candidate(
            fit=LineSegmentFit(lo=lo, hi=hi, slope=slope, intercept=intercept, r2=r2),
            e_g=x_int,
            rmse=rmse(curve.values[in_window], line),
            window=(float(x_int), float(upper)),
        ))
    if not candidates:
        raise NoFitError("no candidate edge line survived slope/intercept/window filters")
    return candidates


def extract_bandgap(spectra, wavelengths, gamma: float = 0.5,
                    r2_min: float = 0.990, min_len: int = 5) -> BandGapResult:
    """Band gap of one region from its set of per-pixel spectra.

    ``spectra`` is a (k, bands) array; the per-wavelength median feeds
    the Tauc pipeline. Ties between equal-RMSE candidates resolve to the
    lower band gap.
    """
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    if spectra.size == 0:
        raise ValueError("need at least one spectrum")
    median_spectrum = np.median(spectra, axis=0)
    curve = tauc_transform(wavelengths, median_spectrum, gamma=gamma)
    segments = recursive_segment(curve, r2_min=r2_min, min_len=min_len)
    peaks = detect_peaks(curve)
    candidates = score_candidates(curve, segments, peaks)
    best = min(candidates, key=lambda c: (c.rmse, c.e_g))
    return BandGapResult(
        e_g=best.e_g,
        rmse=best.rmse,
        window=best.window,
        n_candidates=len(candidates),
        fit=best.fit,
        peaks=peaks,
    )


def extract_batch(spectra_by_region: dict, wavelengths, gamma: float = 0.5,
                  threads: int | None = None):
    """Extract band gaps for many regions; deterministic order by id.

    Returns (results, errors): {id: BandGapResult} and {id: message} for
    regions whose extraction failed.
    """
    from .parallel import parallel_map

    ids = sorted(spectra_by_region)

    def work(rid):
        try:
            return rid, extract_bandgap(spectra_by_region[rid], wavelengths, gamma=gamma), None
        except (NoFitError, ValueError) as exc:
            return rid, None, str(exc)

    results, errors = {}, {}
    for rid, res, err in parallel_map(work, ids, threads=threads):
        if res is not None:
            results[rid] = res
        else:
            errors[rid] = err
    return results, errors
