"""Segmentation stages checked against independent brute-force oracles."""

import heapq

import numpy as np
import pytest

from autochar.cube_io import HyperCube, RgbFrame
from autochar.segment import (
    LabelMap,
    SegmentationConfig,
    apply_mask,
    binarize,
    dilate,
    distance_transform,
    erode,
    label_components,
    mask_spectra,
    median_blur,
    morph_gradient,
    otsu_threshold,
    read_label_png,
    regions_from_labels,
    segment,
    watershed,
    write_label_png,
)

from oracles import (
    EIGHT,
    euclid_distance_oracle,
    floodfill_label_oracle,
    window_oracle,
)


def otsu_oracle(gray):
    """Try all 256 thresholds, maximize between-class variance directly."""
    g = np.asarray(gray).ravel().astype(float)
    best_t, best_v = 0, -1.0
    for t in range(256):
        lo = g[g <= t]
        hi = g[g > t]
        if lo.size == 0 or hi.size == 0:
            v = 0.0
        else:
            w0 = lo.size / g.size
            w1 = hi.size / g.size
            v = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if v > best_v:
            best_v, best_t = v, t
    return best_t


def meyer_flood_oracle(gray, markers, mask=None):
    """Independent Meyer flood: dict/heap based, same tie rules as the API."""
    g = np.asarray(gray, dtype=float)
    h, w = g.shape
    surface = window_oracle(g, 3, max) - window_oracle(g, 3, min)
    labels = {(y, x): int(markers[y, x]) for y in range(h) for x in range(w)}
    domain = np.ones((h, w), bool) if mask is None else np.asarray(mask, bool)
    for (y, x) in list(labels):
        if not domain[y, x]:
            labels[(y, x)] = 0
    if all(v == 0 for v in labels.values()):
        return np.zeros((h, w), dtype=np.int32)
    done = {p for p, v in labels.items() if v > 0}
    heap, queued, counter = [], set(), 0
    for y in range(h):
        for x in range(w):
            if (y, x) in done:
                for dy, dx in EIGHT:
                    q = (y + dy, x + dx)
                    if 0 <= q[0] < h and 0 <= q[1] < w and domain[q] \
                            and q not in done and q not in queued:
                        heapq.heappush(heap, (surface[q], counter, q))
                        counter += 1
                        queued.add(q)
    while heap:
        _, _, p = heapq.heappop(heap)
        neigh = set()
        for dy, dx in EIGHT:
            q = (p[0] + dy, p[1] + dx)
            if 0 <= q[0] < h and 0 <= q[1] < w and q in done and labels[q] > 0:
                neigh.add(labels[q])
        done.add(p)
        if len(neigh) == 1:
            labels[p] = neigh.pop()
            for dy, dx in EIGHT:
                q = (p[0] + dy, p[1] + dx)
                if 0 <= q[0] < h and 0 <= q[1] < w and domain[q] \
                        and q not in done and q not in queued:
                    heapq.heappush(heap, (surface[q], counter, q))
                    counter += 1
                    queued.add(q)
        else:
            labels[p] = 0
    out = np.zeros((h, w), dtype=np.int32)
    for (y, x), v in labels.items():
        if domain[y, x]:
            out[y, x] = v
    return out


# ---------------------------------------------------------------------------
# binarize / otsu

class TestBinarize:
    def test_bimodal_split(self):
        rng = np.random.default_rng(0)
        g = np.where(rng.uniform(size=(20, 20)) < 0.5, 10, 240).astype(np.uint8)
        t = otsu_threshold(g)
        assert t == otsu_oracle(g)
        assert 10 <= t < 240
        mask = binarize(g)
        assert mask[g == 240].all()
        assert not mask[g == 10].any()

    def test_all_zero(self):
        assert not binarize(np.zeros((8, 8), dtype=np.uint8)).any()

    def test_constant_nonzero(self):
        assert not binarize(np.full((8, 8), 137, dtype=np.uint8)).any()

    def test_single_bright_pixel(self):
        g = np.zeros((9, 9), dtype=np.uint8)
        g[4, 4] = 200
        mask = binarize(g)
        assert mask[4, 4]
        assert mask.sum() == 1

    def test_threshold_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            g = rng.integers(0, 256, size=(12, 12)).astype(np.uint8)
            assert otsu_threshold(g) == otsu_oracle(g)


# ---------------------------------------------------------------------------
# morphology

class TestMorphology:
    def test_erode_full_grid_stays_full(self):
        m = np.ones((6, 7), dtype=bool)
        assert erode(m, 3).all()

    def test_dilate_single_pixel(self):
        m = np.zeros((7, 7), dtype=bool)
        m[3, 3] = True
        out = dilate(m, 3)
        expect = np.zeros((7, 7), dtype=bool)
        expect[2:5, 2:5] = True
        assert np.array_equal(out, expect)

    def test_gradient_of_disk_is_annulus(self):
        yy, xx = np.mgrid[0:32, 0:32]
        disk = np.hypot(xx - 16, yy - 16) <= 10
        grad = morph_gradient(disk, 5)
        oracle = window_oracle(disk, 5, max) - window_oracle(disk, 5, min)
        assert np.array_equal(grad.astype(float), oracle)
        assert not grad[16, 16]  # hollow center
        assert grad[16, 26] or grad[16, 25]  # rim present

    @pytest.mark.parametrize("kernel", [2, 3, 5, 12])
    def test_erode_dilate_match_oracle(self, kernel):
        rng = np.random.default_rng(kernel)
        m = rng.uniform(size=(16, 16)) < 0.5
        assert np.array_equal(erode(m, kernel).astype(float), window_oracle(m, kernel, min))
        assert np.array_equal(dilate(m, kernel).astype(float), window_oracle(m, kernel, max))

    def test_median_matches_oracle(self):
        rng = np.random.default_rng(2)
        g = rng.integers(0, 256, size=(14, 14)).astype(np.uint8)
        out = median_blur(g, 3)
        oracle = window_oracle(g, 3, np.median)
        assert np.array_equal(out.astype(float), oracle)

    def test_duality(self):
        rng = np.random.default_rng(9)
        m = rng.uniform(size=(15, 15)) < 0.4
        assert np.array_equal(erode(m, 3), ~dilate(~m, 3))


# ---------------------------------------------------------------------------
# distance transform

class TestDistanceTransform:
    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 2] = True
        d = distance_transform(m)
        assert d[2, 2] == pytest.approx(1.0)
        assert d.sum() == pytest.approx(1.0)

    def test_full_grid_peaks_at_center(self):
        m = np.ones((9, 9), dtype=bool)
        d = distance_transform(m)
        assert d[4, 4] == d.max()
        assert d[4, 4] == pytest.approx(5.0)  # 4 steps + the virtual ring

    def test_background_is_zero(self):
        m = np.zeros((4, 4), dtype=bool)
        assert distance_transform(m).sum() == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_chamfer_brackets_euclidean(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.uniform(size=(32, 32)) < 0.7
        cham = distance_transform(m)
        euc = euclid_distance_oracle(m)
        fg = m & (euc > 0)
        assert np.all(cham[fg] >= euc[fg] - 1e-9)
        assert np.all(cham[fg] <= 1.09 * euc[fg] + 1e-9)
        assert np.all(cham[~m] == 0.0)


# ---------------------------------------------------------------------------
# labeling

class TestLabelComponents:
    def test_two_blobs(self):
        m = np.zeros((8, 8), dtype=bool)
        m[1:3, 1:3] = True
        m[5:7, 5:7] = True
        lm = label_components(m)
        assert set(np.unique(lm.labels)) == {0, 1, 2}
        assert lm.labels[1, 1] == 1  # raster-first block gets label 1
        assert lm.labels[5, 5] == 2

    def test_empty(self):
        lm = label_components(np.zeros((5, 5), dtype=bool))
        assert lm.n_labels == 0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_floodfill_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = rng.uniform(size=(64, 64)) < 0.45
        lm = label_components(m)
        assert np.array_equal(lm.labels, floodfill_label_oracle(m))


# ---------------------------------------------------------------------------
# watershed

class TestWatershed:
    def _blob_image(self):
        yy, xx = np.mgrid[0:20, 0:20]
        blob = np.hypot(xx - 10, yy - 10) <= 6
        gray = np.where(blob, 200, 20).astype(float)
        return gray, blob

    def test_single_marker_floods_blob(self):
        gray, blob = self._blob_image()
        markers = np.zeros(gray.shape, dtype=np.int32)
        markers[10, 10] = 1
        out = watershed(gray, LabelMap(labels=markers), mask=blob)
        assert np.array_equal(out.labels > 0, blob)
        assert set(np.unique(out.labels)) == {0, 1}

    def test_no_markers_all_background(self):
        gray, _ = self._blob_image()
        out = watershed(gray, LabelMap(labels=np.zeros(gray.shape, dtype=np.int32)))
        assert out.n_labels == 0

    def test_conservation_of_labels(self):
        gray, blob = self._blob_image()
        markers = np.zeros(gray.shape, dtype=np.int32)
        markers[10, 10] = 3
        markers[2, 2] = 7
        out = watershed(gray, LabelMap(labels=markers))
        assert set(np.unique(out.labels)) - {0} <= {3, 7}

    def test_touching_blobs_split(self):
        # two bumps with an intensity waist between them
        yy, xx = np.mgrid[0:24, 0:32]
        b1 = np.exp(-((xx - 10.0) ** 2 + (yy - 12.0) ** 2) / 18.0)
        b2 = np.exp(-((xx - 22.0) ** 2 + (yy - 12.0) ** 2) / 18.0)
        gray = 255.0 * np.maximum(b1, b2)
        union = gray > 30
        markers = np.zeros(gray.shape, dtype=np.int32)
        markers[12, 10] = 1
        markers[12, 22] = 2
        out = watershed(gray, LabelMap(labels=markers), mask=union)
        assert out.labels[12, 8] == 1
        assert out.labels[12, 24] == 2
        oracle = meyer_flood_oracle(gray, markers, mask=union)
        assert np.array_equal(out.labels, oracle)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_priority_flood_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        gray = rng.integers(0, 256, size=(16, 16)).astype(float)
        markers = np.zeros((16, 16), dtype=np.int32)
        markers[3, 3] = 1
        markers[12, 12] = 2
        out = watershed(gray, LabelMap(labels=markers))
        assert np.array_equal(out.labels, meyer_flood_oracle(gray, markers))


# ---------------------------------------------------------------------------
# full pipeline

def render_disks(shape, centers, radius, blend=3.0, fg=0.25, bg=0.9):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    weight = np.zeros((h, w))
    planted = []
    for cx, cy in centers:
        d = np.hypot(xx - cx, yy - cy)
        weight = np.maximum(weight, np.clip((radius - d) / blend, 0.0, 1.0))
        planted.append(d <= radius)
    img = bg + (fg - bg) * weight
    return img, planted


def disks_frame(shape, centers, radius, **kw):
    img, planted = render_disks(shape, centers, radius, **kw)
    return RgbFrame(timestamp=0.0, rgb=np.stack([img] * 3, axis=2)), planted


def disks_cube(shape, centers, radius, **kw):
    img, planted = render_disks(shape, centers, radius, **kw)
    vals = np.stack([img, img], axis=2).astype(np.float32)
    return HyperCube(wavelengths=[400.0, 500.0], values=vals), planted


def iou(a, b):
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return inter / union if union else 0.0


class TestSegmentPipeline:
    CFG = SegmentationConfig(theta_min=200, theta_max=5000)

    def test_three_disks(self):
        frame, planted = disks_frame((200, 300), [(60, 100), (150, 100), (240, 100)], 20)
        label_map, regions = segment(frame, self.CFG)
        assert len(regions) == 3
        for mask in planted:
            best = max(iou(label_map.labels == r.id, mask) for r in regions)
            assert best >= 0.9

    def test_blank_image(self):
        frame = RgbFrame(timestamp=0.0, rgb=np.full((64, 64, 3), 0.8))
        label_map, regions = segment(frame, self.CFG)
        assert regions == []
        assert label_map.n_labels == 0

    def test_labels_compact_and_sizes_pruned(self):
        frame, _ = disks_frame((200, 300), [(60, 100), (150, 100), (240, 100)], 20)
        label_map, regions = segment(frame, self.CFG)
        assert set(np.unique(label_map.labels)) == {0, 1, 2, 3}
        for r in regions:
            assert self.CFG.theta_min <= r.size <= self.CFG.theta_max
            # every output region is one 8-connected component
            assert floodfill_label_oracle(label_map.labels == r.id).max() == 1

    def test_raster_ordering(self):
        centers = [(60, 60), (150, 60), (240, 60), (60, 150), (150, 150), (240, 150)]
        frame, _ = disks_frame((210, 300), centers, 20)
        _, regions = segment(frame, self.CFG)
        assert len(regions) == 6
        got = [r.centroid for r in regions]
        for i, (cx, cy) in enumerate(centers):
            assert got[i][0] == pytest.approx(cx, abs=2.0)
            assert got[i][1] == pytest.approx(cy, abs=2.0)

    def test_masking_idempotence(self):
        cube, _ = disks_cube((200, 300), [(60, 100), (150, 100), (240, 100)], 20)
        label_map, regions = segment(cube, self.CFG)
        masked = apply_mask(cube, label_map)
        _, again = segment(masked, self.CFG)
        assert len(again) == len(regions)

    def test_crop(self):
        frame, _ = disks_frame((200, 300), [(60, 100), (240, 100)], 20)
        cfg = SegmentationConfig(theta_min=200, theta_max=5000, crop=(0, 0, 150, 200))
        label_map, regions = segment(frame, cfg)
        assert len(regions) == 1
        assert regions[0].centroid[0] == pytest.approx(60, abs=2.0)
        assert label_map.labels.shape == (200, 300)


class TestMaskSpectra:
    def _cube(self):
        rng = np.random.default_rng(4)
        vals = rng.uniform(0.1, 0.9, size=(10, 10, 5)).astype(np.float32)
        return HyperCube(wavelengths=np.linspace(400, 800, 5), values=vals)

    def test_single_pixel_region(self):
        cube = self._cube()
        regions = regions_from_labels(
            LabelMap(labels=np.eye(10, dtype=np.int32) * 0 + _one_pixel_label(3, 4))
        )
        spectra = mask_spectra(cube, regions)
        assert np.allclose(spectra[1][0], cube.values[4, 3, :])

    def test_k_pixels_k_spectra(self):
        cube = self._cube()
        labels = np.zeros((10, 10), dtype=np.int32)
        labels[2:5, 2:4] = 1
        regions = regions_from_labels(LabelMap(labels=labels))
        spectra = mask_spectra(cube, regions)
        assert spectra[1].shape == (6, 5)

    def test_median_against_sort_oracle(self):
        cube = self._cube()
        labels = np.zeros((10, 10), dtype=np.int32)
        labels[1:4, 1:4] = 1
        regions = regions_from_labels(LabelMap(labels=labels))
        spectra = mask_spectra(cube, regions)[1]
        med = np.median(spectra, axis=0)
        for b in range(spectra.shape[1]):
            vals = sorted(spectra[:, b])
            k = len(vals)
            mid = vals[k // 2] if k % 2 else 0.5 * (vals[k // 2 - 1] + vals[k // 2])
            assert med[b] == pytest.approx(mid, abs=1e-12)

    def test_out_of_bounds_region(self):
        cube = self._cube()
        from autochar.segment import SampleRegion

        region = SampleRegion(id=1, pixels=np.array([[11, 2]]), centroid=(11.0, 2.0))
        with pytest.raises(ValueError, match="outside"):
            mask_spectra(cube, [region])

    def test_permutation_invariance_of_median(self):
        cube = self._cube()
        labels = np.zeros((10, 10), dtype=np.int32)
        labels[0:3, 0:3] = 1
        regions = regions_from_labels(LabelMap(labels=labels))
        spectra = mask_spectra(cube, regions)[1]
        rng = np.random.default_rng(0)
        shuffled = spectra[rng.permutation(len(spectra))]
        assert np.array_equal(np.median(spectra, axis=0), np.median(shuffled, axis=0))


def _one_pixel_label(x, y):
    labels = np.zeros((10, 10), dtype=np.int32)
    labels[y, x] = 1
    return labels


class TestSegmentationConfig:
    def test_theta_ordering_enforced(self):
        with pytest.raises(ValueError, match="theta"):
            SegmentationConfig(theta_min=100, theta_max=50)

    def test_dist_thresh_bounds(self):
        with pytest.raises(ValueError, match="dist_thresh"):
            SegmentationConfig(dist_thresh=1.5)

    def test_kernel_minimum(self):
        with pytest.raises(ValueError, match=">= 1"):
            SegmentationConfig(erode_kernel=0)

    def test_chamfer_mask_fixed(self):
        with pytest.raises(ValueError, match="chamfer"):
            SegmentationConfig(chamfer_kernel=5)


class TestLabelPng:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 300, size=(20, 30)).astype(np.int32)
        lm = LabelMap(labels=labels)
        write_label_png(lm, tmp_path / "labels.png")
        back = read_label_png(tmp_path / "labels.png")
        assert np.array_equal(back.labels, labels)
