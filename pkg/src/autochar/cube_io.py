"""Hyperspectral cube and RGB frame-sequence I/O.

On-disk formats:

* HCUBE v1 — a sidecar JSON header ``<name>.json`` holding
  ``{"width": W, "height": H, "wavelengths": [...]}`` next to a raw
  binary payload ``<name>.f32`` of little-endian float32 reflectance
  values in band-sequential order (band, row, column).
* Frame sequences — a directory of 8-bit RGB PNGs named
  ``frame_<seconds>.png``; timestamps come from the filename only.

All loaded objects are immutable in practice (arrays are not written to
after construction) and safe to share across threads.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class CubeFormatError(ValueError):
    """Raised when a cube header/payload pair is missing or inconsistent."""


class FrameSequenceError(ValueError):
    """Raised when a frame directory cannot be assembled into a sequence."""


_FRAME_RE = re.compile(r"^frame_(\d+)\.png$")


@dataclass
class HyperCube:
    """Reflectance datacube: one spectrum per pixel over an ascending wavelength axis.

    ``values`` has shape (height, width, bands), float32. Reflectance is
    dimensionless; raw instrument values may exceed 1.
    """

    wavelengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.wavelengths.ndim != 1 or self.wavelengths.size < 2:
            raise CubeFormatError("need at least two wavelength bands")
        if not np.all(np.diff(self.wavelengths) > 0):
            raise CubeFormatError("wavelengths must be strictly ascending")
        if self.values.ndim != 3:
            raise CubeFormatError("cube values must have shape (height, width, bands)")
        if self.values.shape[2] != self.wavelengths.size:
            raise CubeFormatError(
                f"band count mismatch: {self.values.shape[2]} planes vs "
                f"{self.wavelengths.size} wavelengths"
            )
        if not np.isfinite(self.values).all():
            raise CubeFormatError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_bands(self) -> int:
        return self.values.shape[2]

    def spectrum(self, x: int, y: int) -> np.ndarray:
        return self.values[y, x, :]


@dataclass
class RgbFrame:
    """One RGB image with a timestamp in seconds since sequence start.

    ``rgb`` has shape (height, width, 3) with channels normalized to [0, 1].
    """

    timestamp: float
    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.timestamp < 0:
            raise FrameSequenceError("frame timestamp must be >= 0")
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise FrameSequenceError("frame must have shape (height, width, 3)")
        if self.rgb.min() < 0.0 or self.rgb.max() > 1.0:
            raise FrameSequenceError("frame channels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class FrameSequence:
    """Time-ordered RGB frames sharing one geometry; duration is in hours."""

    frames: list = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise FrameSequenceError("frame sequence is empty")
        times = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FrameSequenceError("frame timestamps must be strictly ascending")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if (f.width, f.height) != (w, h):
                raise FrameSequenceError(
                    f"frame dimension mismatch: {f.width}x{f.height} vs {w}x{h}"
                )

    @property
    def duration_hours(self) -> float:
        return self.frames[-1].timestamp / 3600.0

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def times_hours(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames]) / 3600.0


def _cube_paths(path) -> tuple[Path, Path]:
    """Resolve a cube path (stem, .json, or .f32) to (header, payload)."""
    p = Path(path)
    if p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".f32")


def load_cube(path) -> HyperCube:
    """Load an HCUBE v1 cube from ``<name>.json`` + ``<name>.f32``.

    Values are read as little-endian float32 in band-sequential order.
    Raises CubeFormatError on header/payload inconsistency and
    FileNotFoundError when either file is missing.
    """
    header_path, payload_path = _cube_paths(path)
    if not header_path.exists():
        raise FileNotFoundError(f"missing cube header: {header_path}")
    if not payload_path.exists():
        raise FileNotFoundError(f"missing cube payload: {payload_path}")
    with open(header_path, encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CubeFormatError(f"bad cube header {header_path}: {exc}") from exc
    try:
        width = int(header["width"])
        height = int(header["height"])
        wavelengths = np.asarray(header["wavelengths"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeFormatError(f"bad cube header {header_path}: {exc}") from exc
    raw = np.fromfile(payload_path, dtype="<f4")
    expected = width * height * wavelengths.size
    if raw.size != expected:
        raise CubeFormatError(
            f"payload size mismatch: {raw.size} floats, expected {expected} "
            f"({width}x{height}x{wavelengths.size})"
        )
    # band-sequential on disk -> (height, width, bands) in memory
    values = raw.reshape(wavelengths.size, height, width).transpose(1, 2, 0)
    return HyperCube(wavelengths=wavelengths, values=np.ascontiguousarray(values))


def save_cube(cube: HyperCube, path) -> None:
    """Write a cube as HCUBE v1; round-trips through load_cube bit-exactly."""
    header_path, payload_path = _cube_paths(path)
    header = {
        "width": cube.width,
        "height": cube.height,
        "wavelengths": cube.wavelengths.tolist(),
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh)
    bsq = cube.values.transpose(2, 0, 1).astype("<f4", copy=False)
    bsq.tofile(payload_path)


def load_frames(directory) -> FrameSequence:
    """Assemble the PNGs of a directory into a FrameSequence.

    Every ``*.png`` must be named ``frame_<integer-seconds>.png``; 8-bit
    counts are normalized by 255. Ordering follows the parsed timestamps,
    so the result is independent of directory listing order.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FrameSequenceError(f"not a directory: {d}")
    entries = []
    for p in sorted(d.iterdir()):
        if p.suffix.lower() != ".png":
            continue
        m = _FRAME_RE.match(p.name)
        if m is None:
            raise FrameSequenceError(f"unparseable frame filename: {p.name}")
        entries.append((int(m.group(1)), p))
    if not entries:
        raise FrameSequenceError(f"no frame_<seconds>.png files in {d}")
    entries.sort(key=lambda e: e[0])
    frames = []
    for seconds, p in entries:
        with Image.open(p) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        frames.append(RgbFrame(timestamp=float(seconds), rgb=arr))
    return FrameSequence(frames=frames)


def save_frames(seq: FrameSequence, directory) -> None:
    """Write a sequence as frame_<seconds>.png files (8-bit RGB)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for f in seq.frames:
        counts = np.clip(np.rint(f.rgb * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(counts, mode="RGB").save(d / f"frame_{int(round(f.timestamp))}.png")


def grayscale(image) -> np.ndarray:
    """Collapse a HyperCube or RgbFrame to a uint8 intensity grid in [0, 255].

    Cubes: per-pixel mean over wavelengths, min-max rescaled over the
    image; a constant field maps to all zeros rather than dividing by a
    zero range. RGB frames: Rec.601 luma times 255 (no min-max, so pure
    white is always 255).
    """
    if isinstance(image, HyperCube):
        mean = image.values.mean(axis=2, dtype=np.float64)
        lo, hi = float(mean.min()), float(mean.max())
        if hi <= lo:
            return np.zeros(mean.shape, dtype=np.uint8)
        scaled = (mean - lo) * (255.0 / (hi - lo))
    elif isinstance(image, RgbFrame):
        luma = (
            0.299 * image.rgb[:, :, 0]
            + 0.587 * image.rgb[:, :, 1]
            + 0.114 * image.rgb[:, :, 2]
        )
        scaled = luma * 255.0
    else:
        raise TypeError(f"grayscale expects HyperCube or RgbFrame, got {type(image)!r}")
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
