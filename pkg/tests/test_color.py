"""Color conversions and the thin-plate-spline calibration fit."""

import numpy as np
import pytest

from autochar.color import (
    ColorChart,
    TpsFitError,
    TpsModel,
    calibrate_frame,
    fit_tps,
    lab_to_xyz,
    load_chart,
    srgb_to_lab,
    srgb_to_xyz,
    xyz_to_lab,
    D50_WHITE,
)
from autochar.cube_io import RgbFrame
from autochar.synth import synth_chart, write_chart


def random_chart(seed, n=28):
    rng = np.random.default_rng(seed)
    while True:
        measured = rng.uniform(0.02, 0.98, size=(n, 3))
        diffs = measured[:, None, :] - measured[None, :, :]
        d = np.sqrt((diffs ** 2).sum(axis=2))
        np.fill_diagonal(d, np.inf)
        if d.min() > 1e-6:
            break
    reference = np.abs(rng.normal(0.4, 0.25, size=(n, 3)))
    return ColorChart(measured_rgb=measured, reference_xyz=reference)


def tps_lstsq_oracle(chart, probe_points):
    """Second implementation: dense least-squares solve of the same system."""
    source = srgb_to_lab(chart.measured_rgb)
    n = source.shape[0]
    diff = source[:, None, :] - source[None, :, :]
    k = np.sqrt((diff ** 2).sum(axis=2))
    p = np.hstack([np.ones((n, 1)), source])
    system = np.block([[k, p], [p.T, np.zeros((4, 4))]])
    rhs = np.vstack([chart.reference_xyz, np.zeros((4, 3))])
    solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    w, a = solution[:n], solution[n:]
    pts = np.atleast_2d(probe_points)
    u = np.sqrt(((pts[:, None, :] - source[None, :, :]) ** 2).sum(axis=2))
    return u @ w + np.hstack([np.ones((pts.shape[0], 1)), pts]) @ a


class TestColorConversions:
    def test_white_point(self):
        lab = srgb_to_lab([1.0, 1.0, 1.0])
        assert lab[0] == pytest.approx(100.0, abs=0.01)
        assert abs(lab[1]) <= 0.5 and abs(lab[2]) <= 0.5

    def test_black(self):
        lab = srgb_to_lab([0.0, 0.0, 0.0])
        assert lab[0] == pytest.approx(0.0, abs=1e-9)

    def test_srgb_white_maps_to_d50(self):
        xyz = srgb_to_xyz([1.0, 1.0, 1.0])
        assert np.allclose(xyz, D50_WHITE, atol=2e-4)

    def test_lab_xyz_round_trip(self):
        rng = np.random.default_rng(0)
        lab = np.column_stack([
            rng.uniform(0, 100, 50), rng.uniform(-60, 60, 50), rng.uniform(-60, 60, 50)
        ])
        back = xyz_to_lab(lab_to_xyz(lab))
        assert np.abs(back - lab).max() <= 1e-9

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        rgb = rng.uniform(size=(5, 4, 3))
        whole = srgb_to_lab(rgb)
        for i in range(5):
            for j in range(4):
                assert np.allclose(whole[i, j], srgb_to_lab(rgb[i, j]))


class TestFitTps:
    def test_identity_at_control_points_when_targets_equal_sources(self):
        chart = random_chart(7)
        lab = srgb_to_lab(chart.measured_rgb)
        ident = ColorChart(measured_rgb=chart.measured_rgb, reference_xyz=lab)
        model = fit_tps(ident)
        assert np.abs(model.evaluate(lab) - lab).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_interpolation_property(self, seed):
        chart = random_chart(seed)
        model = fit_tps(chart)
        source = srgb_to_lab(chart.measured_rgb)
        assert np.abs(model.evaluate(source) - chart.reference_xyz).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_side_conditions(self, seed):
        chart = random_chart(100 + seed)
        model = fit_tps(chart)
        p = np.hstack([np.ones((chart.n_patches, 1)), model.control_points])
        assert np.abs(p.T @ model.weights).max() <= 1e-8

    def test_probe_matches_lstsq_oracle(self):
        chart = synth_chart()
        model = fit_tps(chart)
        probes = srgb_to_lab(np.array([
            [0.5, 0.5, 0.5], [0.3, 0.6, 0.4], [0.7, 0.2, 0.9],
        ]))
        mine = model.evaluate(probes)
        oracle = tps_lstsq_oracle(chart, probes)
        assert np.abs(mine - oracle).max() <= 1e-6

    def test_patch_permutation_leaves_mapping_unchanged(self):
        chart = random_chart(11)
        rng = np.random.default_rng(2)
        perm = rng.permutation(chart.n_patches)
        shuffled = ColorChart(measured_rgb=chart.measured_rgb[perm],
                              reference_xyz=chart.reference_xyz[perm])
        probes = srgb_to_lab(rng.uniform(0.1, 0.9, size=(10, 3)))
        a = fit_tps(chart).evaluate(probes)
        b = fit_tps(shuffled).evaluate(probes)
        assert np.abs(a - b).max() <= 1e-8

    def test_duplicate_patch_rejected(self):
        measured = np.tile(np.linspace(0.1, 0.9, 5)[:, None], (1, 3))
        measured[1] = measured[0]
        with pytest.raises(ValueError, match="share"):
            ColorChart(measured_rgb=measured, reference_xyz=np.random.rand(5, 3))

    def test_too_few_patches(self):
        with pytest.raises(ValueError, match="at least 5"):
            ColorChart(measured_rgb=np.random.rand(4, 3),
                       reference_xyz=np.random.rand(4, 3))

    def test_thin_plate_kernel_variant(self):
        chart = random_chart(3)
        model = fit_tps(chart, kernel="thin_plate")
        source = srgb_to_lab(chart.measured_rgb)
        assert np.abs(model.evaluate(source) - chart.reference_xyz).max() <= 1e-6


class TestCalibrateFrame:
    def test_patch_color_maps_to_reference(self):
        chart = synth_chart()
        model = fit_tps(chart)
        frame = RgbFrame(timestamp=0.0,
                         rgb=np.tile(chart.measured_rgb[5], (4, 6, 1)))
        out = calibrate_frame(frame, model)
        assert np.abs(out - chart.reference_xyz[5]).max() <= 1e-6

    def test_deterministic(self):
        chart = synth_chart()
        model = fit_tps(chart)
        rng = np.random.default_rng(4)
        rgb = rng.uniform(size=(8, 8, 3))
        f1 = RgbFrame(timestamp=0.0, rgb=rgb)
        f2 = RgbFrame(timestamp=0.0, rgb=rgb.copy())
        assert np.array_equal(calibrate_frame(f1, model), calibrate_frame(f2, model))

    def test_chunked_evaluation_consistent(self):
        chart = synth_chart()
        model = fit_tps(chart)
        rng = np.random.default_rng(5)
        frame = RgbFrame(timestamp=0.0, rgb=rng.uniform(size=(16, 16, 3)))
        a = calibrate_frame(frame, model, chunk=7)
        b = calibrate_frame(frame, model, chunk=100000)
        # chunk size may reorder BLAS accumulation; equality holds to float noise
        assert np.allclose(a, b, atol=1e-12, rtol=0)

    def test_mean_then_calibrate_differs_from_calibrate_then_mean(self):
        # nonlinearity probe, documented rather than asserted tightly
        chart = synth_chart()
        model = fit_tps(chart)
        rng = np.random.default_rng(6)
        rgb = rng.uniform(0.2, 0.8, size=(5, 5, 3))
        frame = RgbFrame(timestamp=0.0, rgb=rgb)
        per_pixel_mean = calibrate_frame(frame, model).reshape(-1, 3).mean(axis=0)
        mean_rgb = rgb.reshape(-1, 3).mean(axis=0)
        of_mean = model.evaluate(srgb_to_lab(mean_rgb))
        assert not np.allclose(per_pixel_mean, of_mean, atol=1e-12)


class TestChartIo:
    def test_written_chart_round_trips(self, tmp_path):
        chart = synth_chart()
        write_chart(chart, tmp_path / "chart.csv", tmp_path / "ref.png")
        back = load_chart(tmp_path / "chart.csv", tmp_path / "ref.png")
        assert np.allclose(back.measured_rgb, chart.measured_rgb, atol=1e-12)
        assert np.allclose(back.reference_xyz, chart.reference_xyz, atol=1e-12)

    def test_box_outside_image_rejected(self, tmp_path):
        chart = synth_chart()
        write_chart(chart, tmp_path / "chart.csv", tmp_path / "ref.png")
        text = (tmp_path / "chart.csv").read_text().splitlines()
        text[1] = text[1].replace(text[1].split(",")[3], "9999", 1)
        (tmp_path / "chart.csv").write_text("\n".join(text))
        with pytest.raises(ValueError, match="outside"):
            load_chart(tmp_path / "chart.csv", tmp_path / "ref.png")
