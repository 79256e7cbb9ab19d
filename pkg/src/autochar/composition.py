"""Composition mapping: printer raster path + pump traces -> per-region mix fraction.

Each segmented region's centroid is projected onto the print-head path
to recover its deposition time window, and the pump-speed ratio is
integrated over that window to yield the mix fraction x in [0, 1]
(fraction of the second precursor in the blend).

Supported G-code dialect: G0/G1 motion with X/Y coordinates (mm) and F
feed rates (mm/min), plus ``;`` comments. Anything else is rejected.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GcodeError(ValueError):
    """Raised for unsupported words or motion before a feed rate is set."""


class CompositionError(ValueError):
    """Raised when a composition window cannot be integrated."""


class UnmatchedRegionError(ValueError):
    """Raised when region centroids project too far from the raster path."""

    def __init__(self, region_ids, gate_mm):
        self.region_ids = sorted(region_ids)
        super().__init__(
            f"regions {self.region_ids} lie farther than {gate_mm} mm from the raster path"
        )


@dataclass
class PumpTrace:
    """Time-stamped pump speeds for the two precursor channels."""

    times: np.ndarray
    omega_fa: np.ndarray
    omega_ma: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.omega_fa = np.asarray(self.omega_fa, dtype=np.float64)
        self.omega_ma = np.asarray(self.omega_ma, dtype=np.float64)
        if not (self.times.size == self.omega_fa.size == self.omega_ma.size):
            raise ValueError("trace arrays must share one length")
        if self.times.size < 2:
            raise ValueError("trace needs at least two samples")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("trace times must be strictly ascending")
        if (self.omega_fa < 0).any() or (self.omega_ma < 0).any():
            raise ValueError("pump speeds must be non-negative")

    @classmethod
    def from_csv(cls, path):
        times, fa, ma = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                times.append(float(row["t_s"]))
                fa.append(float(row["omega_fa"]))
                ma.append(float(row["omega_ma"]))
        return cls(times=times, omega_fa=fa, omega_ma=ma)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "omega_fa", "omega_ma"])
            for t, a, b in zip(self.times, self.omega_fa, self.omega_ma):
                writer.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


@dataclass
class RasterPath:
    """Print-head waypoints: time (s) and position (mm), time ascending."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if not (self.times.size == self.xs.size == self.ys.size) or self.times.size == 0:
            raise ValueError("path arrays must share one nonzero length")
        if not np.all(np.diff(self.times) >= 0):
            raise ValueError("path times must be ascending")

    @property
    def duration(self) -> float:
        return float(self.times[-1])


@dataclass
class PlateCalibration:
    """Affine map from image pixels to substrate millimeters (6 coefficients)."""

    matrix: np.ndarray  # 2x3: [[a, b, c], [d, e, f]]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (2, 3):
            raise ValueError("calibration matrix must be 2x3")
        det = self.matrix[0, 0] * self.matrix[1, 1] - self.matrix[0, 1] * self.matrix[1, 0]
        if abs(det) < 1e-12:
            raise ValueError("calibration must be invertible")

    @classmethod
    def from_scale(cls, mm_per_px: float, origin_mm=(0.0, 0.0)):
        ox, oy = origin_mm
        return cls(matrix=[[mm_per_px, 0.0, ox], [0.0, mm_per_px, oy]])

    def to_mm(self, points_px) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points_px, dtype=np.float64))
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]


@dataclass
class CompositionEntry:
    x: float
    t_a: float
    t_b: float


@dataclass
class CompositionMap:
    """Per-region mix fraction and deposition window."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for rid, e in self.entries.items():
            if not (0.0 <= e.x <= 1.0):
                raise ValueError(f"region {rid}: x={e.x} outside [0, 1]")
            if not e.t_a < e.t_b:
                raise ValueError(f"region {rid}: window [{e.t_a}, {e.t_b}] is empty")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["region_id", "x", "t_a", "t_b"])
            for rid in sorted(self.entries):
                e = self.entries[rid]
                writer.writerow([rid, repr(float(e.x)), repr(float(e.t_a)), repr(float(e.t_b))])

    @classmethod
    def from_csv(cls, path):
        entries = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries[int(row["region_id"])] = CompositionEntry(
                    x=float(row["x"]), t_a=float(row["t_a"]), t_b=float(row["t_b"])
                )
        return cls(entries=entries)


def parse_gcode(text: str) -> RasterPath:
    """Parse a restricted G-code program into a timed raster path.

    The head starts at (0, 0) at t = 0; each motion accumulates segment
    length divided by the current feed rate (F, mm/min). Zero-length
    motions add no waypoint. Unknown words and motion before any feed
    rate raise GcodeError.
    """
    x, y, t = 0.0, 0.0, 0.0
    feed_mm_min = None
    times, xs, ys = [0.0], [0.0], [0.0]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].upper()
        if head not in ("G0", "G1"):
            raise GcodeError(f"line {lineno}: unsupported word {tokens[0]!r}")
        new_x, new_y = x, y
        for tok in tokens[1:]:
            letter = tok[0].upper()
            try:
                value = float(tok[1:])
            except ValueError as exc:
                raise GcodeError(f"line {lineno}: bad word {tok!r}") from exc
            if letter == "X":
                new_x = value
            elif letter == "Y":
                new_y = value
            elif letter == "F":
                if value <= 0:
                    raise GcodeError(f"line {lineno}: feed rate must be positive")
                feed_mm_min = value
            else:
                raise GcodeError(f"line {lineno}: unsupported word {tok!r}")
        dist = math.hypot(new_x - x, new_y - y)
        if dist > 0.0:
            if feed_mm_min is None:
                raise GcodeError(f"line {lineno}: motion before any feed rate was set")
            t += dist / (feed_mm_min / 60.0)
            x, y = new_x, new_y
            times.append(t)
            xs.append(x)
            ys.append(y)
    return RasterPath(times=times, xs=xs, ys=ys)


def _project_to_path(point, path: RasterPath):
    """Closest point on the path polyline; ties resolve to the earlier time."""
    px, py = point
    if path.times.size == 1:
        d = math.hypot(px - path.xs[0], py - path.ys[0])
        return float(path.times[0]), d
    best_d2, best_t = math.inf, 0.0
    for i in range(path.times.size - 1):
        x0, y0, t0 = path.xs[i], path.ys[i], path.times[i]
        x1, y1, t1 = path.xs[i + 1], path.ys[i + 1], path.times[i + 1]
        vx, vy = x1 - x0, y1 - y0
        seg2 = vx * vx + vy * vy
        u = 0.0 if seg2 == 0.0 else min(max(((px - x0) * vx + (py - y0) * vy) / seg2, 0.0), 1.0)
        qx, qy = x0 + u * vx, y0 + u * vy
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        if d2 < best_d2 - 1e-15:
            best_d2 = d2
            best_t = t0 + u * (t1 - t0)
    return best_t, math.sqrt(best_d2)


def timestamp_regions(regions, path: RasterPath, cal: PlateCalibration,
                      droplet_interval: float, gate_mm: float = 5.0) -> dict:
    """Map each region to its deposition window along the raster path.

    The centroid is converted to substrate millimeters, projected onto
    the path, and assigned a window of ``droplet_interval`` seconds
    centered on the projection time, clamped to [0, path end]. Regions
    projecting farther than ``gate_mm`` raise UnmatchedRegionError.
    """
    if droplet_interval <= 0:
        raise ValueError("droplet_interval must be positive")
    if path.duration <= 0:
        raise ValueError("raster path has zero duration")
    half = droplet_interval / 2.0
    windows, unmatched = {}, []
    for region in regions:
        mm = cal.to_mm([region.centroid])[0]
        t_proj, dist = _project_to_path((mm[0], mm[1]), path)
        if dist > gate_mm:
            unmatched.append(region.id)
            continue
        t_a = float(min(max(t_proj - half, 0.0), path.duration))
        t_b = float(min(max(t_proj + half, 0.0), path.duration))
        if not t_a < t_b:
            raise CompositionError(f"region {region.id}: degenerate window at t={t_proj}")
        windows[region.id] = (t_a, t_b)
    if unmatched:
        raise UnmatchedRegionError(unmatched, gate_mm)
    return windows


def integrate_composition(trace: PumpTrace, t_a: float, t_b: float) -> float:
    """Time-averaged pump-ratio integral over [t_a, t_b].

    x = (1 / (t_b - t_a)) * integral of ma / (ma + fa) dt, evaluated by
    the trapezoid rule on the linear interpolation of the trace (window
    endpoints plus every interior trace sample are nodes). Exact for a
    piecewise-linear ratio, which holds whenever fa + ma is constant.
    """
    if not t_a < t_b:
        raise CompositionError(f"window [{t_a}, {t_b}] is empty")
    if t_a < trace.times[0] or t_b > trace.times[-1]:
        raise CompositionError(
            f"window [{t_a}, {t_b}] outside trace domain "
            f"[{trace.times[0]}, {trace.times[-1]}]"
        )
    inside = (trace.times > t_a) & (trace.times < t_b)
    nodes = np.concatenate(([t_a], trace.times[inside], [t_b]))
    fa = np.interp(nodes, trace.times, trace.omega_fa)
    ma = np.interp(nodes, trace.times, trace.omega_ma)
    total = fa + ma
    if (total <= 0.0).any():
        bad = nodes[total <= 0.0][0]
        raise CompositionError(f"total pump speed is zero at t={bad}")
    ratio = ma / total
    x = float(np.trapezoid(ratio, nodes) / (t_b - t_a))
    return min(max(x, 0.0), 1.0)


def build_composition_map(regions, path: RasterPath, trace: PumpTrace,
                          cal: PlateCalibration, droplet_interval: float | None = None,
                          gate_mm: float = 5.0) -> CompositionMap:
    """Timestamp every region and integrate its composition.

    ``droplet_interval`` defaults to path duration divided by the region
    count. Per-region integration failures are aggregated into one
    CompositionError listing the offending ids.
    """
    regions = list(regions)
    if not regions:
        return CompositionMap(entries={})
    if droplet_interval is None:
        droplet_interval = path.duration / len(regions)
    windows = timestamp_regions(regions, path, cal, droplet_interval, gate_mm=gate_mm)
    entries, failures = {}, []
    for rid, (t_a, t_b) in windows.items():
        try:
            entries[rid] = CompositionEntry(x=integrate_composition(trace, t_a, t_b),
                                            t_a=t_a, t_b=t_b)
        except CompositionError as exc:
            failures.append(f"region {rid}: {exc}")
    if failures:
        raise CompositionError("; ".join(failures))
    return CompositionMap(entries=entries)


def load_gcode(path) -> RasterPath:
    return parse_gcode(Path(path).read_text(encoding="utf-8"))
