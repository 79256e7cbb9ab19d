"""Color calibration: sRGB -> CIELAB -> reference CIE XYZ via a 3-D thin-plate spline.

Conversions use the standard sRGB linearization, the IEC 61966-2-1
sRGB-to-XYZ matrix (D65), Bradford chromatic adaptation to D50, and
CIELAB with the D50/2-degree white point. The spline maps camera colors
(as CIELAB) onto color-checker reference XYZ values by exact
interpolation at the chart patches.
"""

import csv
from dataclasses import dataclass

import numpy as np
from PIL import Image

# IEC 61966-2-1 sRGB -> XYZ (D65 white)
_SRGB_TO_XYZ_D65 = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])

D65_WHITE = np.array([0.95047, 1.0, 1.08883])
D50_WHITE = np.array([0.96422, 1.0, 0.82521])

# Bradford cone-response matrix; the D65 -> D50 adaptation is derived from it
# so that the D65 white maps to the D50 white exactly.
_BRADFORD_CONE = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])
_BRADFORD_D65_TO_D50 = (
    np.linalg.inv(_BRADFORD_CONE)
    @ np.diag((_BRADFORD_CONE @ D50_WHITE) / (_BRADFORD_CONE @ D65_WHITE))
    @ _BRADFORD_CONE
)

_LAB_DELTA = 6.0 / 29.0


class TpsFitError(ValueError):
    """Raised when the spline system is singular or poorly conditioned."""


def srgb_to_xyz(rgb) -> np.ndarray:
    """sRGB in [0, 1] to CIE XYZ under D50 (Bradford-adapted from D65)."""
    c = np.asarray(rgb, dtype=np.float64)
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz_d65 = linear @ _SRGB_TO_XYZ_D65.T
    return xyz_d65 @ _BRADFORD_D65_TO_D50.T


def _lab_f(t):
    return np.where(t > _LAB_DELTA ** 3, np.cbrt(t), t / (3.0 * _LAB_DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(u):
    return np.where(u > _LAB_DELTA, u ** 3, 3.0 * _LAB_DELTA ** 2 * (u - 4.0 / 29.0))


def xyz_to_lab(xyz) -> np.ndarray:
    """CIE XYZ (D50) to CIELAB with the D50 white point."""
    ratios = np.asarray(xyz, dtype=np.float64) / D50_WHITE
    f = _lab_f(ratios)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_xyz(lab) -> np.ndarray:
    """CIELAB (D50 white) back to CIE XYZ; exact inverse of xyz_to_lab."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    return _lab_f_inv(f) * D50_WHITE


def srgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] straight to CIELAB (D50)."""
    return xyz_to_lab(srgb_to_xyz(rgb))


@dataclass
class ColorChart:
    """Color-checker description: measured camera RGB and reference XYZ per patch."""

    measured_rgb: np.ndarray   # (n, 3) in [0, 1]
    reference_xyz: np.ndarray  # (n, 3) under D50/2-degree
    patch_ids: list | None = None

    def __post_init__(self):
        self.measured_rgb = np.asarray(self.measured_rgb, dtype=np.float64)
        self.reference_xyz = np.asarray(self.reference_xyz, dtype=np.float64)
        n = self.measured_rgb.shape[0]
        if self.measured_rgb.shape != (n, 3) or self.reference_xyz.shape != (n, 3):
            raise ValueError("chart arrays must be (n, 3)")
        if n < 5:
            raise ValueError("spline solvability needs at least 5 patches")
        diffs = self.measured_rgb[:, None, :] - self.measured_rgb[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() < 1e-12:
            raise ValueError("two chart patches share one measured color")

    @property
    def n_patches(self) -> int:
        return self.measured_rgb.shape[0]


def load_chart(csv_path, image_path) -> ColorChart:
    """Read a chart CSV (patch_id,x0,y0,x1,y1,ref_X,ref_Y,ref_Z) plus its reference image.

    Measured patch colors are the mean RGB over each patch box in the
    reference image.
    """
    with Image.open(image_path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    ids, measured, reference = [], [], []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            x0, y0 = int(row["x0"]), int(row["y0"])
            x1, y1 = int(row["x1"]), int(row["y1"])
            if not (0 <= x0 < x1 <= arr.shape[1] and 0 <= y0 < y1 <= arr.shape[0]):
                raise ValueError(f"patch {row['patch_id']}: box outside reference image")
            ids.append(row["patch_id"])
            measured.append(arr[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0))
            reference.append([float(row["ref_X"]), float(row["ref_Y"]), float(row["ref_Z"])])
    return ColorChart(measured_rgb=np.array(measured), reference_xyz=np.array(reference),
                      patch_ids=ids)


def _kernel(r, kind):
    if kind == "biharmonic":
        return r
    if kind == "thin_plate":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r * r * np.log(r)
        return np.where(r > 0, out, 0.0)
    raise ValueError(f"unknown spline kernel {kind!r}")


@dataclass
class TpsModel:
    """Fitted 3-D spline: f(p) = A^T [1, p] + sum_i W_i * U(|p - c_i|)."""

    control_points: np.ndarray  # (n, 3) CIELAB
    weights: np.ndarray         # (n, 3)
    affine: np.ndarray          # (4, 3)
    kernel: str = "biharmonic"

    def evaluate(self, points) -> np.ndarray:
        """Map CIELAB points (…, 3) through the spline to XYZ."""
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, 3)
        diff = flat[:, None, :] - self.control_points[None, :, :]
        u = _kernel(np.sqrt((diff ** 2).sum(axis=2)), self.kernel)
        ones = np.ones((flat.shape[0], 1))
        out = u @ self.weights + np.hstack([ones, flat]) @ self.affine
        return out.reshape(pts.shape)


def fit_tps(chart: ColorChart, kernel: str = "biharmonic") -> TpsModel:
    """Solve the interpolating spline through the chart patches.

    Solves [[K, P], [P^T, 0]] [W; A] = [V; 0] with U(r) = r (the 3-D
    biharmonic kernel; ``thin_plate`` selects r^2 log r instead), P rows
    [1, L, a, b], and V the reference XYZ. The side conditions P^T W = 0
    and exact reproduction at the patches are verified after the solve.
    """
    source = srgb_to_lab(chart.measured_rgb)
    targets = chart.reference_xyz
    n = chart.n_patches
    diff = source[:, None, :] - source[None, :, :]
    k_mat = _kernel(np.sqrt((diff ** 2).sum(axis=2)), kernel)
    p_mat = np.hstack([np.ones((n, 1)), source])
    system = np.zeros((n + 4, n + 4))
    system[:n, :n] = k_mat
    system[:n, n:] = p_mat
    system[n:, :n] = p_mat.T
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = targets
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise TpsFitError(f"singular spline system: {exc}") from exc
    weights, affine = solution[:n], solution[n:]
    side = np.abs(p_mat.T @ weights).max()
    if side > 1e-8:
        raise TpsFitError(f"side conditions violated: |P^T W| = {side:.3e}")
    model = TpsModel(control_points=source, weights=weights, affine=affine, kernel=kernel)
    residual = np.abs(model.evaluate(source) - targets).max()
    if residual > 1e-6:
        raise TpsFitError(f"chart not reproduced: max residual {residual:.3e}")
    return model


def calibrate_frame(frame, model: TpsModel, chunk: int = 65536) -> np.ndarray:
    """Per-pixel calibration of an RgbFrame to reference XYZ.

    Returns an (h, w, 3) float array. Evaluation runs in chunks to bound
    the pixel-by-control-point distance matrix.
    """
    lab = srgb_to_lab(frame.rgb).reshape(-1, 3)
    out = np.empty_like(lab)
    for start in range(0, lab.shape[0], chunk):
        out[start:start + chunk] = model.evaluate(lab[start:start + chunk])
    return out.reshape(frame.rgb.shape)
