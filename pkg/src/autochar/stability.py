"""Degradation scoring: per-region color-change index over a frame sequence.

For each region the mean color per frame is tracked; the instability
index integrates the absolute drift from the first frame over the
experiment duration (hours), sums the three channels, and scales by the
region's pixel count, giving px*hr units. Regions whose index exceeds a
decision boundary are classified as degraded.
"""

from dataclasses import dataclass

import numpy as np

from .color import D50_WHITE, calibrate_frame
from .cube_io import FrameSequence
from .segment import LabelMap


@dataclass
class DegradationSeries:
    """Mean color trajectory of one region: times in hours, one color per frame."""

    region_id: int
    times_hours: np.ndarray
    colors: np.ndarray  # (frames, 3)
    pixel_count: int

    def __post_init__(self):
        self.times_hours = np.asarray(self.times_hours, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.colors.shape != (self.times_hours.size, 3):
            raise ValueError("need one 3-channel color per frame")
        if not np.all(np.diff(self.times_hours) > 0):
            raise ValueError("times must be strictly ascending")
        if self.pixel_count <= 0:
            raise ValueError("pixel count must be positive")


@dataclass
class StabilityResult:
    region_id: int
    i_c: float
    degraded: bool
    boundary: float


def extract_series(frames: FrameSequence, labels: LabelMap, model=None) -> list:
    """Per-region mean color trajectories from a fixed-camera sequence.

    The label map from frame 0 applies to every frame. With a TpsModel
    the channels are calibrated XYZ normalized by the D50 white point;
    without one they are the raw normalized RGB values.
    """
    if (labels.height, labels.width) != (frames.height, frames.width):
        raise ValueError(
            f"label map {labels.width}x{labels.height} does not match "
            f"frames {frames.width}x{frames.height}"
        )
    n = labels.n_labels
    if n == 0:
        return []
    flat_labels = labels.labels.ravel()
    counts = np.bincount(flat_labels, minlength=n + 1)[: n + 1]
    times = frames.times_hours()
    means = np.empty((len(frames.frames), n, 3))
    for fi, frame in enumerate(frames.frames):
        data = calibrate_frame(frame, model) / D50_WHITE if model is not None else frame.rgb
        flat = data.reshape(-1, 3)
        for c in range(3):
            sums = np.bincount(flat_labels, weights=flat[:, c], minlength=n + 1)[: n + 1]
            means[fi, :, c] = sums[1:] / counts[1:]
    return [
        DegradationSeries(region_id=rid, times_hours=times,
                          colors=means[:, rid - 1, :], pixel_count=int(counts[rid]))
        for rid in range(1, n + 1)
        if counts[rid] > 0
    ]


def instability_index(series: DegradationSeries) -> float:
    """px*hr color-change index: pixel count times the summed-channel
    trapezoidal integral of |color(t) - color(0)| over the duration."""
    if series.times_hours.size < 2:
        raise ValueError("instability index needs at least 2 frames")
    drift = np.abs(series.colors - series.colors[0])
    per_channel = np.trapezoid(drift, series.times_hours, axis=0)
    return float(series.pixel_count * per_channel.sum())


def classify(indices: dict, boundary: float) -> list:
    """Label regions as degraded when their index strictly exceeds the boundary."""
    if boundary < 0:
        raise ValueError("boundary must be >= 0")
    return [
        StabilityResult(region_id=rid, i_c=float(ic), degraded=bool(ic > boundary),
                        boundary=float(boundary))
        for rid, ic in sorted(indices.items())
    ]
