"""Synthetic scenes with planted ground truth for every pipeline stage.

A scene is a serpentine grid of soft-edged disks on a bright substrate.
Each disk carries a planted band gap (realized as a reflectance spectrum
whose transformed absorption edge is exactly linear above the gap) and
optionally a planted color drift for degradation fixtures. The same
builder emits the matching print program, pump trace, color chart, and
expert-record CSV, so the command-line pipeline can run end to end on
files this module writes.

All randomness is seeded through the scene spec; identical seeds give
bit-identical fixtures.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmark import ExpertRecord, save_expert_csv
from .color import ColorChart, srgb_to_xyz
from .composition import (
    CompositionEntry,
    CompositionMap,
    PlateCalibration,
    PumpTrace,
    _project_to_path,
    parse_gcode,
)
from .cube_io import FrameSequence, HyperCube, RgbFrame, save_cube, save_frames
from .segment import LabelMap, write_label_png

DEFAULT_WAVELENGTHS = np.arange(380.0, 1021.0, 2.0)
# deposits fade to background over this many pixels inside the nominal radius
EDGE_BLEND_PX = 4.0
BACKGROUND_REFLECTANCE = 0.9
FRAME_BASE_COLOR = 51.0 / 255.0  # exactly representable in 8-bit


@dataclass
class PlantedSample:
    """One deposit: substrate position, footprint, and planted truths."""

    center_mm: tuple
    radius_px: float
    e_g: float | None = None
    drift: tuple = (0.0, 0.0, 0.0)
    drift_mode: str = "linear"  # or "step"

    def __post_init__(self):
        if self.radius_px <= 0:
            raise ValueError("radius must be positive")
        if self.e_g is not None and not (1.3 <= self.e_g <= 2.6):
            raise ValueError(f"planted band gap {self.e_g} outside [1.3, 2.6] eV")
        if self.drift_mode not in ("linear", "step"):
            raise ValueError("drift_mode must be 'linear' or 'step'")


@dataclass
class SceneSpec:
    """Scene layout in raster order plus acquisition parameters."""

    samples: list
    rows: int
    cols: int
    pitch_mm: float
    margin_mm: float
    noise_sigma: float = 0.0
    seed: int = 0
    mm_per_px: float = 0.1
    feed_mm_min: float = 2280.0
    wavelengths: np.ndarray = field(default_factory=lambda: DEFAULT_WAVELENGTHS.copy())

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if len(self.samples) != self.rows * self.cols:
            raise ValueError("sample count must equal rows * cols")

    @property
    def calibration(self) -> PlateCalibration:
        return PlateCalibration.from_scale(self.mm_per_px)

    def image_shape(self):
        r_mm = max(s.radius_px for s in self.samples) * self.mm_per_px
        w = (max(s.center_mm[0] for s in self.samples) + r_mm + self.margin_mm) / self.mm_per_px
        h = (max(s.center_mm[1] for s in self.samples) + r_mm + self.margin_mm) / self.mm_per_px
        return int(math.ceil(h)), int(math.ceil(w))


def serpentine_scene(rows: int, cols: int, radius_px: float = 20.0,
                     pitch_px: float = 55.0, margin_px: float = 35.0,
                     eg_range=(1.4, 2.0), degraded_fraction: float = 0.0,
                     drift=(0.30, 0.25, -0.15), noise_sigma: float = 0.0,
                     seed: int = 0, mm_per_px: float = 0.1,
                     wavelengths=None) -> SceneSpec:
    """Serpentine grid with a planted band-gap ramp along deposition order.

    The first ``degraded_fraction`` of deposits (in deposition order)
    carries the given color drift; band gaps ramp linearly from
    eg_range[0] to eg_range[1] over the deposition sequence.
    """
    n = rows * cols
    pitch_mm = pitch_px * mm_per_px
    margin_mm = margin_px * mm_per_px
    egs = np.linspace(eg_range[0], eg_range[1], n)
    n_degraded = int(round(degraded_fraction * n))
    samples_by_raster = {}
    dep = 0
    for r in range(rows):
        cols_order = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        for c in cols_order:
            samples_by_raster[(r, c)] = PlantedSample(
                center_mm=(margin_mm + c * pitch_mm, margin_mm + r * pitch_mm),
                radius_px=radius_px,
                e_g=float(egs[dep]),
                drift=tuple(drift) if dep < n_degraded else (0.0, 0.0, 0.0),
            )
            dep += 1
    samples = [samples_by_raster[(r, c)] for r in range(rows) for c in range(cols)]
    if wavelengths is None:
        wavelengths = DEFAULT_WAVELENGTHS.copy()
    return SceneSpec(samples=samples, rows=rows, cols=cols, pitch_mm=pitch_mm,
                     margin_mm=margin_mm, noise_sigma=noise_sigma, seed=seed,
                     mm_per_px=mm_per_px, wavelengths=wavelengths)


def synth_reflectance(e_g: float, wavelengths, edge_width: float = 0.3,
                      base: float = 1e-3, top: float = 1.0,
                      decay: float = 0.15) -> np.ndarray:
    """Reflectance spectrum whose transformed absorption edge starts at e_g.

    The target transformed-absorption curve is ``base`` below the gap,
    rises linearly to ``top`` over ``edge_width`` eV, then decays
    exponentially (leaving a detectable peak at the edge top). It is
    inverted through F = sqrt(T)/E and the exact quadratic inverse of
    the diffuse-reflectance relation, R = 1 + F - sqrt(F^2 + 2F), so the
    resulting R lies in (0, 1).
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    energies = 1240.0 / wl
    if not (energies.min() < e_g < energies.max()):
        raise ValueError(
            f"band gap {e_g} eV outside the energy range "
            f"[{energies.min():.3f}, {energies.max():.3f}]"
        )
    t = np.empty_like(energies)
    rising = (energies >= e_g) & (energies <= e_g + edge_width)
    above = energies > e_g + edge_width
    slope = (top - base) / edge_width
    t[:] = base
    t[rising] = base + slope * (energies[rising] - e_g)
    t[above] = base + (top - base) * np.exp(-(energies[above] - e_g - edge_width) / decay)
    f = np.sqrt(t) / energies
    return 1.0 + f - np.sqrt(f * f + 2.0 * f)


def synth_region_spectra(e_g: float, n_pixels: int, wavelengths,
                         noise_sigma: float, rng) -> np.ndarray:
    """A (n_pixels, bands) stack of noisy copies of one planted spectrum."""
    clean = synth_reflectance(e_g, wavelengths)
    noise = rng.normal(0.0, noise_sigma, size=(n_pixels, clean.size)) if noise_sigma > 0 \
        else np.zeros((n_pixels, clean.size))
    return np.clip(clean[None, :] + noise, 1e-6, 1.0 - 1e-6)


def scene_gcode(spec: SceneSpec) -> str:
    """Serpentine print program covering every deposit center."""
    sweep_pad = spec.pitch_mm / 2.0
    x0 = spec.margin_mm - sweep_pad
    x1 = spec.margin_mm + (spec.cols - 1) * spec.pitch_mm + sweep_pad
    lines = [f"; serpentine raster {spec.rows}x{spec.cols}",
             f"G1 X{x0:.4f} Y{spec.margin_mm:.4f} F{spec.feed_mm_min:.1f}"]
    for r in range(spec.rows):
        y = spec.margin_mm + r * spec.pitch_mm
        target = x1 if r % 2 == 0 else x0
        lines.append(f"G1 X{target:.4f} Y{y:.4f}")
        if r < spec.rows - 1:
            lines.append(f"G1 X{target:.4f} Y{y + spec.pitch_mm:.4f}")
    return "\n".join(lines) + "\n"


def scene_trace(spec: SceneSpec, n_samples: int = 201) -> PumpTrace:
    """Constant-throughput ramp: the second channel grows linearly with time."""
    path = parse_gcode(scene_gcode(spec))
    t = np.linspace(0.0, path.duration, n_samples)
    frac = t / path.duration
    return PumpTrace(times=t, omega_fa=1.0 - frac, omega_ma=frac)


def _deposition_times(spec: SceneSpec):
    """Time at which the head passes each sample center (raster order)."""
    path = parse_gcode(scene_gcode(spec))
    times = []
    for sample in spec.samples:
        t, dist = _project_to_path(sample.center_mm, path)
        if dist > 1e-6:
            raise ValueError(f"sample center {sample.center_mm} off the raster path")
        times.append(t)
    return np.array(times), path


def planted_composition(spec: SceneSpec) -> CompositionMap:
    """Closed-form composition truth under the ramp trace.

    With a constant total pump speed and a linear mix ramp, the window
    average equals the ramp value at the window midpoint.
    """
    times, path = _deposition_times(spec)
    interval = path.duration / len(spec.samples)
    entries = {}
    for idx, t_c in enumerate(times, start=1):
        t_a = float(min(max(t_c - interval / 2.0, 0.0), path.duration))
        t_b = float(min(max(t_c + interval / 2.0, 0.0), path.duration))
        entries[idx] = CompositionEntry(
            x=float(0.5 * (t_a + t_b) / path.duration), t_a=t_a, t_b=t_b
        )
    return CompositionMap(entries=entries)


def _render_weights(spec: SceneSpec):
    """Per-sample soft-edged disk weights and the planted label map."""
    h, w = spec.image_shape()
    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int32)
    weights = []
    for idx, sample in enumerate(spec.samples, start=1):
        cx = sample.center_mm[0] / spec.mm_per_px
        cy = sample.center_mm[1] / spec.mm_per_px
        d = np.hypot(xx - cx, yy - cy)
        weight = np.clip((sample.radius_px - d) / EDGE_BLEND_PX, 0.0, 1.0)
        weights.append(weight)
        labels[d <= sample.radius_px] = idx
    return weights, LabelMap(labels=labels)


def synth_cube(spec: SceneSpec):
    """Render the scene as a hyperspectral cube.

    Returns (HyperCube, planted LabelMap, planted CompositionMap). Disks
    blend into a flat bright background over a few pixels; Gaussian
    noise (sigma from the spec) is added per value and clipped to (0, 1).
    """
    weights, labels = _render_weights(spec)
    h, w = labels.labels.shape
    bands = spec.wavelengths.size
    rng = np.random.default_rng(spec.seed)
    cube = np.full((h, w, bands), BACKGROUND_REFLECTANCE, dtype=np.float32)
    for sample, weight in zip(spec.samples, weights):
        if sample.e_g is None:
            continue
        spectrum = synth_reflectance(sample.e_g, spec.wavelengths).astype(np.float32)
        region = weight > 0.0
        wvals = weight[region].astype(np.float32)
        cube[region] = (
            wvals[:, None] * spectrum[None, :]
            + (1.0 - wvals[:, None]) * BACKGROUND_REFLECTANCE
        )
    if spec.noise_sigma > 0.0:
        for b in range(bands):
            cube[:, :, b] += rng.normal(0.0, spec.noise_sigma, size=(h, w)).astype(np.float32)
        np.clip(cube, 1e-6, 1.0 - 1e-6, out=cube)
    hyper = HyperCube(wavelengths=spec.wavelengths, values=cube)
    return hyper, labels, planted_composition(spec)


def _lattice_drift(drift, n_frames: int):
    """Snap a drift vector to 8-bit-exact steps over the frame grid."""
    steps = n_frames - 1
    return tuple(round(d * 255.0 / steps) * steps / 255.0 for d in drift)


def synth_frames(spec: SceneSpec, duration_h: float = 2.0, n_frames: int = 13):
    """Render the degradation sequence for the scene.

    Returns (FrameSequence, {label id: planted i_c in px*hr}). Drifting
    samples change color linearly from the base (or step right after the
    first frame); drifts are snapped to the 8-bit lattice so PNG round
    trips preserve the planted truth exactly.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    _, labels = _render_weights(spec)
    grid = labels.labels
    # frame timestamps land on whole seconds (the on-disk naming grid)
    times_s = np.rint(np.linspace(0.0, duration_h * 3600.0, n_frames))
    times_h = times_s / 3600.0
    duration_h = float(times_h[-1])
    frames = []
    for t_h in times_h:
        img = np.full(grid.shape + (3,), FRAME_BASE_COLOR)
        for idx, sample in enumerate(spec.samples, start=1):
            drift = _lattice_drift(sample.drift, n_frames)
            if all(d == 0.0 for d in drift):
                continue
            if sample.drift_mode == "linear":
                frac = t_h / duration_h
            else:
                frac = 1.0 if t_h > 0.0 else 0.0
            color = np.clip(np.array(FRAME_BASE_COLOR) + frac * np.array(drift), 0.0, 1.0)
            img[grid == idx] = color
        frames.append(RgbFrame(timestamp=float(t_h * 3600.0), rgb=img))
    seq = FrameSequence(frames=frames)
    planted = {}
    counts = np.bincount(grid.ravel(), minlength=len(spec.samples) + 1)
    for idx, sample in enumerate(spec.samples, start=1):
        drift = _lattice_drift(sample.drift, n_frames)
        total = sum(abs(d) for d in drift)
        if sample.drift_mode == "linear":
            i_c = counts[idx] * total * duration_h / 2.0
        else:
            i_c = counts[idx] * total * (duration_h - times_h[1] / 2.0)
        planted[idx] = float(i_c)
    return seq, planted


def synth_chart() -> ColorChart:
    """28-patch chart: lattice-exact camera colors under a known distortion."""
    levels = np.array([51, 128, 204]) / 255.0
    measured = [(r, g, b) for r in levels for g in levels for b in levels]
    measured.append((89 / 255.0, 89 / 255.0, 89 / 255.0))
    measured = np.array(measured)
    distorted = np.clip(measured ** np.array([1.05, 1.0, 0.95]) * np.array([0.96, 1.0, 1.04]),
                        0.0, 1.0)
    return ColorChart(measured_rgb=measured, reference_xyz=srgb_to_xyz(distorted))


def write_chart(chart: ColorChart, csv_path, image_path, box: int = 10) -> None:
    """Emit the chart CSV plus a reference image of filled patch boxes."""
    import csv as csvmod

    from PIL import Image

    n = chart.n_patches
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    img = np.zeros((rows * box, cols * box, 3), dtype=np.uint8)
    with open(csv_path, "w", newline="") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(["patch_id", "x0", "y0", "x1", "y1", "ref_X", "ref_Y", "ref_Z"])
        for i in range(n):
            r, c = divmod(i, cols)
            x0, y0 = c * box, r * box
            img[y0:y0 + box, x0:x0 + box] = np.rint(chart.measured_rgb[i] * 255.0)
            ref = chart.reference_xyz[i]
            writer.writerow([i, x0, y0, x0 + box, y0 + box,
                             repr(float(ref[0])), repr(float(ref[1])), repr(float(ref[2]))])
    Image.fromarray(img, mode="RGB").save(image_path)


def synth_expert_records(spec: SceneSpec, planted_ic: dict, seed: int | None = None):
    """Expert-record fixture consistent with the planted scene.

    Expert and automatic gaps jitter around the planted values; degraded
    samples (nonzero drift) lose their post-degradation gap, stable ones
    stay within the deviation tolerance of the pre-degradation fit.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    comp = planted_composition(spec)
    records = []
    for idx, sample in enumerate(spec.samples, start=1):
        x = comp.entries[idx].x
        expert = sample.e_g + rng.normal(0.0, 0.002)
        auto = sample.e_g + rng.normal(0.0, 0.003)
        records.append(ExpertRecord(
            region_id=idx, x=x, expert_eg=float(expert), auto_eg=float(auto),
            i_c=float(planted_ic.get(idx, 0.0)),
        ))
    xs = np.array([r.x for r in records])
    egs = np.array([r.expert_eg for r in records])
    slope, intercept = np.polyfit(xs, egs, 1)
    for record, sample in zip(records, spec.samples):
        degraded = any(d != 0.0 for d in sample.drift)
        if not degraded:
            record.post_eg = float(slope * record.x + intercept
                                   + rng.uniform(-0.01, 0.01))
    return records


def write_scene(spec: SceneSpec, outdir, duration_h: float = 2.0,
                n_frames: int = 13, with_frames: bool = True) -> dict:
    """Write every artifact the pipeline ingests; returns the path map."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cube, labels, comp = synth_cube(spec)
    save_cube(cube, out / "cube")
    write_label_png(labels, out / "labels_planted.png")
    (out / "print.gcode").write_text(scene_gcode(spec), encoding="utf-8")
    scene_trace(spec).to_csv(out / "pump_trace.csv")
    comp.to_csv(out / "composition_planted.csv")
    chart = synth_chart()
    write_chart(chart, out / "chart.csv", out / "chart_ref.png")
    paths = {
        "cube": str(out / "cube.json"),
        "labels": str(out / "labels_planted.png"),
        "gcode": str(out / "print.gcode"),
        "trace": str(out / "pump_trace.csv"),
        "chart_csv": str(out / "chart.csv"),
        "chart_image": str(out / "chart_ref.png"),
        "composition": str(out / "composition_planted.csv"),
    }
    planted_ic = {}
    if with_frames:
        seq, planted_ic = synth_frames(spec, duration_h=duration_h, n_frames=n_frames)
        save_frames(seq, out / "frames")
        paths["frames"] = str(out / "frames")
    records = synth_expert_records(spec, planted_ic)
    save_expert_csv(records, out / "expert.csv")
    paths["expert"] = str(out / "expert.csv")
    return paths
