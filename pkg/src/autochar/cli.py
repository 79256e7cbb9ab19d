"""Command-line surface for batch runs.

Every command takes ``--config <toml>`` plus flag overrides (flags win)
and writes deterministic CSV artifacts, with figures next to them, into
the output directory. ``AUTOCHAR_THREADS`` caps internal parallelism.
Exit codes: 2 for configuration problems (missing paths, bad flags), 1
for pipeline failures.
"""

import sys
import time
from pathlib import Path

import click
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .bandgap import extract_batch, tauc_transform
from .benchmark import build_report, load_expert_csv
from .color import fit_tps, load_chart
from .composition import (
    CompositionMap,
    PlateCalibration,
    PumpTrace,
    build_composition_map,
    load_gcode,
)
from .cube_io import load_cube, load_frames
from .segment import (
    SegmentationConfig,
    mask_spectra,
    read_label_png,
    regions_from_labels,
    segment,
    write_label_png,
)
from .stability import classify, extract_series, instability_index
from .synth import serpentine_scene, write_scene
from . import report as rpt


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"config file not found: {p}")
    with open(p, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise click.UsageError(f"bad config {p}: {exc}")


def _merge(config, flags):
    """Flag values win over config values; None means unset."""
    merged = dict(config)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _need_path(merged, key, what):
    value = merged.get(key)
    if value is None:
        raise click.UsageError(f"missing {what}: pass --{key.replace('_', '-')} or set "
                               f"'{key}' in the config file")
    p = Path(value)
    if not p.exists():
        raise click.UsageError(f"{what} not found: {p}")
    return p


def _out_dir(merged):
    out = Path(merged.get("out") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seg_config(merged):
    kwargs = {}
    for key in ("theta_min", "theta_max", "dist_thresh"):
        if merged.get(key) is not None:
            kwargs[key] = merged[key]
    if merged.get("crop") is not None:
        crop = merged["crop"]
        if isinstance(crop, str):
            crop = tuple(int(v) for v in crop.split(","))
        kwargs["crop"] = tuple(crop)
    try:
        return SegmentationConfig(**kwargs)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _regions_for(merged, cube=None):
    """Regions from a label PNG when given, else by segmenting the cube."""
    if merged.get("labels") is not None:
        labels = read_label_png(_need_path(merged, "labels", "label map"))
        return labels, regions_from_labels(labels)
    if cube is None:
        cube = load_cube(_need_path(merged, "cube", "cube path"))
    labels, regions = segment(cube, _seg_config(merged))
    return labels, regions


def _calibration(merged):
    return PlateCalibration.from_scale(
        float(merged.get("mm_per_px", 1.0)),
        origin_mm=(float(merged.get("origin_x", 0.0)), float(merged.get("origin_y", 0.0))),
    )


def _composition(merged, regions):
    """Composition entries from a precomputed CSV or from gcode + trace."""
    if merged.get("composition") is not None:
        return CompositionMap.from_csv(
            _need_path(merged, "composition", "composition CSV")).entries
    if merged.get("gcode") is None or merged.get("trace") is None:
        return {}
    path = load_gcode(_need_path(merged, "gcode", "G-code program"))
    trace = PumpTrace.from_csv(_need_path(merged, "trace", "pump trace CSV"))
    interval = merged.get("droplet_interval")
    comp = build_composition_map(regions, path, trace, _calibration(merged),
                                 droplet_interval=interval,
                                 gate_mm=float(merged.get("gate_mm", 5.0)))
    return comp.entries


def _fail(exc):
    raise click.ClickException(str(exc))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="autochar")
def main():
    """Batch autocharacterization: segmentation, composition, band gap, degradation."""


_config_opt = click.option("--config", type=click.Path(), default=None,
                           help="TOML config file; flags override its values.")
_out_opt = click.option("--out", type=click.Path(), default=None,
                        help="Output directory (default: out).")


@main.command()
@_config_opt
@_out_opt
@click.option("--preset", type=click.Choice(["demo", "disks80", "paper200"]),
              default="demo", help="Scene layout preset.")
@click.option("--seed", type=int, default=None, help="Fixture RNG seed.")
@click.option("--noise", type=float, default=None, help="Reflectance noise sigma.")
@click.option("--frames", "n_frames", type=int, default=None,
              help="Degradation frames to render.")
@click.option("--wavelength-step", type=float, default=None,
              help="Spectral sampling step in nm.")
def synth(config, out, preset, seed, noise, n_frames, wavelength_step):
    """Write a synthetic fixture set (cube, frames, G-code, trace, chart, records)."""
    merged = _merge(_load_config(config), {
        "out": out, "seed": seed, "noise": noise, "n_frames": n_frames,
        "wavelength_step": wavelength_step,
    })
    presets = {
        "demo": dict(rows=2, cols=3, radius_px=12.0, pitch_px=32.0, step=8.0),
        "disks80": dict(rows=8, cols=10, radius_px=20.0, pitch_px=55.0, step=8.0),
        "paper200": dict(rows=10, cols=20, radius_px=8.0, pitch_px=20.0, step=4.0),
    }
    p = presets[preset]
    step = float(p["step"] if merged.get("wavelength_step") is None
                 else merged["wavelength_step"])
    noise_val = merged.get("noise")
    spec = serpentine_scene(
        rows=p["rows"], cols=p["cols"], radius_px=p["radius_px"], pitch_px=p["pitch_px"],
        eg_range=(1.4, 2.0), degraded_fraction=0.15,
        noise_sigma=0.01 if noise_val is None else float(noise_val),
        seed=int(merged.get("seed") or 0),
        wavelengths=np.arange(380.0, 1020.0 + step / 2, step),
    )
    out_dir = _out_dir(merged)
    paths = write_scene(spec, out_dir, n_frames=int(merged.get("n_frames") or 13))
    theta_est = int(np.pi * p["radius_px"] ** 2)
    config_lines = [
        f'cube = "{paths["cube"]}"',
        f'labels = "{paths["labels"]}"',
        f'frames = "{paths["frames"]}"' if "frames" in paths else "",
        f'gcode = "{paths["gcode"]}"',
        f'trace = "{paths["trace"]}"',
        f'chart_csv = "{paths["chart_csv"]}"',
        f'chart_image = "{paths["chart_image"]}"',
        f'composition = "{paths["composition"]}"',
        f'expert = "{paths["expert"]}"',
        f'out = "{out_dir}"',
        f"mm_per_px = {spec.mm_per_px}",
        f"theta_min = {max(theta_est // 4, 8)}",
        f"theta_max = {theta_est * 4}",
    ]
    (out_dir / "config.toml").write_text(
        "\n".join(line for line in config_lines if line) + "\n", encoding="utf-8")
    click.echo(f"wrote {preset} fixture ({p['rows'] * p['cols']} regions) to {out_dir}")
    click.echo(f"config: {out_dir / 'config.toml'}")


@main.command("segment")
@_config_opt
@_out_opt
@click.option("--cube", type=click.Path(), default=None, help="HCUBE header or stem.")
@click.option("--theta-min", type=int, default=None, help="Minimum region size (px).")
@click.option("--theta-max", type=int, default=None, help="Maximum region size (px).")
@click.option("--dist-thresh", type=float, default=None,
              help="Marker threshold as a fraction of the distance maximum.")
@click.option("--crop", type=str, default=None, help="x0,y0,x1,y1 crop rectangle.")
def segment_cmd(config, out, cube, theta_min, theta_max, dist_thresh, crop):
    """Segment a cube into regions; write labels.png and regions.csv."""
    merged = _merge(_load_config(config), {
        "out": out, "cube": cube, "theta_min": theta_min, "theta_max": theta_max,
        "dist_thresh": dist_thresh, "crop": crop,
    })
    cube_obj = load_cube(_need_path(merged, "cube", "cube path"))
    out_dir = _out_dir(merged)
    try:
        labels, regions = segment(cube_obj, _seg_config(merged))
    except ValueError as exc:
        _fail(exc)
    write_label_png(labels, out_dir / "labels.png")
    rpt.write_region_csv(regions, out_dir / "regions.csv")
    click.echo(f"{len(regions)} regions -> {out_dir / 'labels.png'}, "
               f"{out_dir / 'regions.csv'}")


@main.command()
@_config_opt
@_out_opt
@click.option("--cube", type=click.Path(), default=None)
@click.option("--labels", type=click.Path(), default=None,
              help="Label PNG (skips segmentation).")
@click.option("--gcode", type=click.Path(), default=None)
@click.option("--trace", type=click.Path(), default=None)
@click.option("--mm-per-px", type=float, default=None)
@click.option("--droplet-interval", type=float, default=None,
              help="Deposition window (s); default path duration / regions.")
@click.option("--gate-mm", type=float, default=None,
              help="Maximum centroid distance from the path (mm).")
def compose(config, out, cube, labels, gcode, trace, mm_per_px, droplet_interval, gate_mm):
    """Map regions to deposition windows and integrate compositions."""
    merged = _merge(_load_config(config), {
        "out": out, "cube": cube, "labels": labels, "gcode": gcode, "trace": trace,
        "mm_per_px": mm_per_px, "droplet_interval": droplet_interval, "gate_mm": gate_mm,
    })
    _need_path(merged, "gcode", "G-code program")
    _need_path(merged, "trace", "pump trace CSV")
    out_dir = _out_dir(merged)
    try:
        _, regions = _regions_for(merged)
        path = load_gcode(merged["gcode"])
        trace_obj = PumpTrace.from_csv(merged["trace"])
        comp = build_composition_map(
            regions, path, trace_obj, _calibration(merged),
            droplet_interval=merged.get("droplet_interval"),
            gate_mm=float(merged.get("gate_mm", 5.0)),
        )
    except ValueError as exc:
        _fail(exc)
    comp.to_csv(out_dir / "composition.csv")
    click.echo(f"{len(comp.entries)} compositions -> {out_dir / 'composition.csv'}")


@main.command()
@_config_opt
@_out_opt
@click.option("--cube", type=click.Path(), default=None)
@click.option("--labels", type=click.Path(), default=None)
@click.option("--gamma", type=click.Choice(["0.5", "2"]), default=None,
              help="Transition exponent: 0.5 direct, 2 indirect.")
@click.option("--gcode", type=click.Path(), default=None)
@click.option("--trace", type=click.Path(), default=None)
@click.option("--composition", type=click.Path(), default=None,
              help="Precomputed composition CSV to join.")
@click.option("--mm-per-px", type=float, default=None)
@click.option("--fit-svg", type=int, default=None,
              help="Render fit traces for the first N regions.")
@click.option("--threads", type=int, default=None, help="Worker threads.")
def bandgap(config, out, cube, labels, gamma, gcode, trace, composition, mm_per_px,
            fit_svg, threads):
    """Extract per-region band gaps; write bandgap.csv (plus fit SVGs on request)."""
    merged = _merge(_load_config(config), {
        "out": out, "cube": cube, "labels": labels, "gamma": gamma, "gcode": gcode,
        "trace": trace, "composition": composition, "mm_per_px": mm_per_px,
        "fit_svg": fit_svg, "threads": threads,
    })
    cube_obj = load_cube(_need_path(merged, "cube", "cube path"))
    gamma_val = 0.5 if merged.get("gamma") is None else float(merged["gamma"])
    out_dir = _out_dir(merged)
    try:
        _, regions = _regions_for(merged, cube=cube_obj)
        spectra = mask_spectra(cube_obj, regions)
        started = time.perf_counter()
        results, errors = extract_batch(spectra, cube_obj.wavelengths, gamma=gamma_val,
                                        threads=merged.get("threads"))
        elapsed = time.perf_counter() - started
        comp_entries = _composition(merged, regions)
    except ValueError as exc:
        _fail(exc)
    rpt.write_bandgap_csv(out_dir / "bandgap.csv", results,
                          composition=comp_entries, errors=errors)
    n_fit = int(merged.get("fit_svg", 0) or 0)
    if n_fit > 0:
        fit_dir = out_dir / "fits"
        fit_dir.mkdir(exist_ok=True)
        for rid in sorted(results)[:n_fit]:
            curve = tauc_transform(cube_obj.wavelengths,
                                   np.median(spectra[rid], axis=0), gamma=gamma_val)
            rpt.plot_tauc_fit(curve, results[rid], fit_dir / f"region_{rid:04d}.svg")
    rate = len(results) / (elapsed / 60.0) if elapsed > 0 else float("inf")
    click.echo(f"{len(results)} band gaps in {elapsed:.2f} s ({rate:.0f} samples/minute) "
               f"-> {out_dir / 'bandgap.csv'}")
    if errors:
        click.echo(f"failed regions: {sorted(errors)}", err=True)
        raise click.ClickException(f"{len(errors)} regions failed extraction")


@main.command()
@_config_opt
@_out_opt
@click.option("--frames", type=click.Path(), default=None, help="Frame directory.")
@click.option("--labels", type=click.Path(), default=None, help="Label PNG.")
@click.option("--chart-csv", type=click.Path(), default=None)
@click.option("--chart-image", type=click.Path(), default=None)
@click.option("--boundary", type=float, default=None,
              help="Degradation decision boundary (px hr).")
@click.option("--composition", type=click.Path(), default=None)
@click.option("--rgb", "use_rgb", is_flag=True, default=False,
              help="Skip color calibration; use raw RGB channels.")
@click.option("--strip/--no-strip", "strip", default=True,
              help="Render the per-region time-series strip PNG.")
def degrade(config, out, frames, labels, chart_csv, chart_image, boundary, composition,
            use_rgb, strip):
    """Score degradation per region; write stability.csv and the series strip."""
    merged = _merge(_load_config(config), {
        "out": out, "frames": frames, "labels": labels, "chart_csv": chart_csv,
        "chart_image": chart_image, "boundary": boundary, "composition": composition,
    })
    frames_dir = _need_path(merged, "frames", "frame directory")
    labels_map = read_label_png(_need_path(merged, "labels", "label map"))
    boundary_val = 0.0 if merged.get("boundary") is None else float(merged["boundary"])
    out_dir = _out_dir(merged)
    try:
        seq = load_frames(frames_dir)
        model = None
        if not use_rgb and merged.get("chart_csv") and merged.get("chart_image"):
            chart = load_chart(_need_path(merged, "chart_csv", "chart CSV"),
                               _need_path(merged, "chart_image", "chart image"))
            model = fit_tps(chart)
        series = extract_series(seq, labels_map, model=model)
        indices = {s.region_id: instability_index(s) for s in series}
        results = classify(indices, boundary_val)
        comp_entries = _composition(merged, regions=None) \
            if merged.get("composition") else {}
    except ValueError as exc:
        _fail(exc)
    rpt.write_stability_csv(out_dir / "stability.csv", results, composition=comp_entries)
    if strip and series:
        rpt.plot_series_strip(series, out_dir / "series_strip.png")
    degraded = sum(1 for r in results if r.degraded)
    space = "raw RGB" if model is None else "calibrated XYZ"
    click.echo(f"{len(results)} regions ({space}), {degraded} above boundary "
               f"{boundary_val:g} -> {out_dir / 'stability.csv'}")


@main.command()
@_config_opt
@_out_opt
@click.option("--expert", type=click.Path(), default=None, help="Expert records CSV.")
@click.option("--tol", type=float, default=None,
              help="Band-gap accuracy tolerance in eV (default 0.02).")
def bench(config, out, expert, tol):
    """Benchmark automatic outputs against expert records; write report + figures."""
    merged = _merge(_load_config(config), {"out": out, "expert": expert, "tol": tol})
    expert_path = _need_path(merged, "expert", "expert records CSV")
    tol_val = 0.02 if merged.get("tol") is None else float(merged["tol"])
    out_dir = _out_dir(merged)
    try:
        records = load_expert_csv(expert_path)
        report = build_report(records, tol=tol_val)
    except ValueError as exc:
        _fail(exc)
    rpt.write_metrics_csvs(report, out_dir)
    rpt.plot_parity(records, out_dir / "parity.svg")
    rpt.plot_accuracy_curve(report.accuracy_curve, tol_val, out_dir / "accuracy_curve.svg")
    rpt.plot_pr_curve(report.pr_points, report.pr_auc, out_dir / "pr_curve.svg")
    rpt.plot_boundary_sweep(report.sweep_curve, report.best_boundary,
                            report.best_accuracy, out_dir / "boundary_sweep.svg")
    click.echo(f"records: {report.n_records}")
    click.echo(f"band-gap accuracy @ {tol_val:g} eV: {report.accuracy_at_tol:.3f}")
    click.echo(f"PR-AUC: {report.pr_auc:.3f}")
    click.echo(f"best accuracy {report.best_accuracy:.3f} at boundary "
               f"{report.best_boundary:.4g} px hr")
    click.echo(f"report -> {out_dir}")


if __name__ == "__main__":
    main()
