"""Projective view synthesis for self-supervised depth.

Pixels are addressed as ``(u, v)`` = (column, row). A pose ``T_{t->s}`` maps
points in target-camera coordinates to source-camera coordinates, so the
synthesised view samples the source image at
``K (R D(p) K^-1 p + t)``.

Images are ``H x W`` or ``H x W x C`` float arrays in [0, 1].
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

MIN_DEPTH = 1e-3
MAX_DEPTH = 80.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
GRID_SNAP = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def check_image(self, height, width):
        if not (0 <= self.cx <= width - 1 and 0 <= self.cy <= height - 1):
            raise ValueError("principal point lies outside the image")


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform as an axis-angle rotation and a translation."""

    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ValueError("rotation and translation are 3-vectors")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t):
        return cls(Rotation.from_matrix(R).as_rotvec(), np.asarray(t, dtype=np.float64))

    @property
    def R(self):
        return Rotation.from_rotvec(self.rotation).as_matrix()

    @property
    def t(self):
        return np.array(self.translation)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self):
        R = self.R
        return PoseSE3.from_matrix(R.T, -R.T @ self.t)

    def compose(self, other):
        """``self o other``: apply ``other`` first."""
        R = self.R @ other.R
        return PoseSE3.from_matrix(R, self.R @ other.t + self.t)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t


class DepthMap:
    """Per-pixel depth, clamped to ``[MIN_DEPTH, MAX_DEPTH]`` on construction."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("depth map must be H x W")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth map contains non-finite values")
        self.values = np.clip(values, MIN_DEPTH, MAX_DEPTH)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    smooth_weight: float = 0.001
    ssim_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.smooth_weight < 0:
            raise ValueError("smooth_weight must be non-negative")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")


def _depth_values(depth):
    if isinstance(depth, DepthMap):
        return depth.values
    return DepthMap(depth).values


def _as_hwc(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim != 3:
        raise ValueError("image must be H x W or H x W x C")
    return img


# -- projection -----------------------------------------------------------------

def backproject(pixel, depth, cam):
    """Camera-frame point ``depth * K^-1 (u, v, 1)``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    homog = np.concatenate([pixel, np.ones(pixel.shape[:-1] + (1,))], axis=-1)
    return depth[..., None] * (homog @ cam.K_inv.T)


def project_points(points, cam):
    """Pinhole projection of camera-frame points; returns ``(uv, z)``."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * points[..., 0] / z + cam.cx
        v = cam.fy * points[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1), z


def project(pixels, depths, pose, cam, image_shape=None):
    """Map target pixels with known depth into the source image plane.

    Parameters
    ----------
    pixels : array_like, (..., 2)
        Target pixel coordinates ``(u, v)``.
    depths : array_like or DepthMap
        Depth per pixel. A :class:`DepthMap` is looked up at the rounded
        pixel location.
    image_shape : (H, W), optional
        Source image size used for the in-bounds part of the validity flag.

    Returns
    -------
    coords : numpy.ndarray, (..., 2)
        Continuous source coordinates. Behind-camera points get NaN.
    valid : numpy.ndarray of bool
        False for points behind the source camera or outside the image.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if isinstance(depths, DepthMap):
        if image_shape is None:
            image_shape = depths.shape
        iu = np.clip(np.round(pixels[..., 0]).astype(int), 0, depths.shape[1] - 1)
        iv = np.clip(np.round(pixels[..., 1]).astype(int), 0, depths.shape[0] - 1)
        depths = depths.values[iv, iu]
    X = pose.apply(backproject(pixels, depths, cam))
    coords, z = project_points(X, cam)
    valid = z > 0
    coords = np.where(valid[..., None], coords, np.nan)
    if image_shape is not None:
        H, W = image_shape
        with np.errstate(invalid="ignore"):
            inside = ((coords[..., 0] >= 0) & (coords[..., 0] <= W - 1)
                      & (coords[..., 1] >= 0) & (coords[..., 1] <= H - 1))
        valid &= inside
    return coords, valid


def _snap(x, tol=GRID_SNAP):
    r = np.round(x)
    return np.where(np.abs(x - r) < tol, r, x)


def _warp_geometry(depth, pose, cam):
    """Source coordinates for every target pixel and their depth derivatives."""
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    rays = np.stack([u, v, np.ones_like(u)], axis=-1) @ cam.K_inv.T
    a = rays @ pose.R.T
    P = depth[..., None] * a + pose.t
    z = P[..., 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    us = cam.fx * P[..., 0] / zs + cam.cx
    vs = cam.fy * P[..., 1] / zs + cam.cy
    du = cam.fx * (a[..., 0] * zs - P[..., 0] * a[..., 2]) / zs ** 2
    dv = cam.fy * (a[..., 1] * zs - P[..., 1] * a[..., 2]) / zs ** 2
    # roundoff would otherwise make an identity warp differ from its source
    us = _snap(us)
    vs = _snap(vs)
    # behind the camera: park the sample at the origin, no depth dependence
    us = np.where(front, us, -1.0)
    vs = np.where(front, vs, -1.0)
    du = np.where(front, du, 0.0)
    dv = np.where(front, dv, 0.0)
    return np.stack([us, vs], axis=-1), front, du, dv


# -- sampling -------------------------------------------------------------------

def _bilinear(img, coords, want_grad=False):
    img = _as_hwc(img)
    H, W, _ = img.shape
    u = np.asarray(coords[..., 0], dtype=np.float64)
    v = np.asarray(coords[..., 1], dtype=np.float64)
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.clip(u, 0, W - 1)
    vc = np.clip(v, 0, H - 1)
    x0 = np.clip(np.floor(uc).astype(int), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(vc).astype(int), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (uc - x0)[..., None]
    ay = (vc - y0)[..., None]
    i00, i01 = img[y0, x0], img[y0, x1]
    i10, i11 = img[y1, x0], img[y1, x1]
    top = (1 - ax) * i00 + ax * i01
    bottom = (1 - ax) * i10 + ax * i11
    out = (1 - ay) * top + ay * bottom
    if not want_grad:
        return out, inside
    gu = (1 - ay) * (i01 - i00) + ay * (i11 - i10)
    gv = bottom - top
    # a clamped coordinate no longer moves the sample
    gu = np.where(((u >= 0) & (u <= W - 1))[..., None], gu, 0.0)
    gv = np.where(((v >= 0) & (v <= H - 1))[..., None], gv, 0.0)
    return out, inside, gu, gv


def bilinear_sample(img, coords):
    """Bilinearly interpolate ``img`` at continuous ``(u, v)`` coordinates.

    Out-of-range coordinates are clamped to the border. Returns the sampled
    values (``coords.shape[:-1] + (C,)``, or without the channel axis for a
    2-D image) and a boolean in-bounds mask.
    """
    coords = np.asarray(coords, dtype=np.float64)
    nan = np.isnan(coords).any(axis=-1)
    coords = np.where(nan[..., None], -1.0, coords)
    out, inside = _bilinear(img, coords)
    if np.asarray(img).ndim == 2:
        out = out[..., 0]
    return out, inside & ~nan


def synthesize_view(I_s, depth_t, pose, cam):
    """Reconstruct the target view by warping the source image.

    Returns the synthesised image (shaped like ``I_s``) and a validity mask
    that is False where the projection falls behind the camera or outside
    the source image.
    """
    depth = _depth_values(depth_t)
    I_s = np.asarray(I_s, dtype=np.float64)
    if I_s.shape[:2] != depth.shape:
        raise ValueError("source image and depth map sizes differ")
    coords, front, _, _ = _warp_geometry(depth, pose, cam)
    warped, inside = _bilinear(I_s, coords)
    if I_s.ndim == 2:
        warped = warped[..., 0]
    return warped, inside & front


# -- photometric error -------------------------------------------------------------

def _reflect_index(n, half):
    idx = np.arange(-half, n + half)
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


def _box_indices(H, W, window):
    half = window // 2
    if H <= half or W <= half:
        raise ValueError("image too small for the SSIM window")
    return _reflect_index(H, half), _reflect_index(W, half)


def _box_filter(x, window):
    """Window mean with reflect padding, over the first two axes."""
    H, W = x.shape[:2]
    ri, ci = _box_indices(H, W, window)
    padded = x[ri][:, ci]
    out = np.zeros_like(x)
    for dy in range(window):
        for dx in range(window):
            out += padded[dy:dy + H, dx:dx + W]
    return out / window ** 2


def _box_filter_adjoint(g, window):
    H, W = g.shape[:2]
    ri, ci = _box_indices(H, W, window)
    gp = np.zeros((H + window - 1, W + window - 1) + g.shape[2:])
    for dy in range(window):
        for dx in range(window):
            gp[dy:dy + H, dx:dx + W] += g
    gp /= window ** 2
    out = np.zeros_like(g)
    np.add.at(out, (ri[:, None], ci[None, :]), gp)
    return out


def _ssim_parts(x, y, window):
    mx, my = _box_filter(x, window), _box_filter(y, window)
    exx, eyy = _box_filter(x * x, window), _box_filter(y * y, window)
    exy = _box_filter(x * y, window)
    A = 2 * mx * my + SSIM_C1
    B = 2 * (exy - mx * my) + SSIM_C2
    C = mx * mx + my * my + SSIM_C1
    D = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    return mx, my, A, B, C, D


def ssim_map(x, y, window=3):
    """Per-pixel, per-channel SSIM from box-window statistics."""
    x, y = _as_hwc(x), _as_hwc(y)
    _, _, A, B, C, D = _ssim_parts(x, y, window)
    return A * B / (C * D)


def photometric_error(I_t, I_hat, cfg=PhotometricConfig()):
    """Per-pixel ``alpha (1 - SSIM) / 2 + (1 - alpha) |I_t - I_hat|``.

    Both terms are averaged over colour channels; returns an ``H x W`` map.
    """
    x, y = _as_hwc(I_t), _as_hwc(I_hat)
    if x.shape != y.shape:
        raise ValueError("image shapes differ")
    s = ssim_map(x, y, cfg.ssim_window).mean(axis=2)
    l1 = np.abs(x - y).mean(axis=2)
    return cfg.alpha * (1.0 - s) / 2.0 + (1.0 - cfg.alpha) * l1


def _photometric_error_vjp(x, y, g, cfg):
    """Gradient of ``sum(g * photometric_error(x, y))`` with respect to ``y``."""
    w = cfg.ssim_window
    nc = x.shape[2]
    mx, my, A, B, C, D = _ssim_parts(x, y, w)
    S = A * B / (C * D)
    gS = (-cfg.alpha / (2.0 * nc)) * g[..., None]
    CD = C * D
    d_my = (2 * mx * B - A * 2 * mx) / CD - S * (2 * my / C - 2 * my / D)
    d_eyy = -S / D
    d_exy = 2 * A / CD
    gy = (_box_filter_adjoint(gS * d_my, w)
          + 2 * y * _box_filter_adjoint(gS * d_eyy, w)
          + x * _box_filter_adjoint(gS * d_exy, w))
    gy += ((1.0 - cfg.alpha) / nc) * np.sign(y - x) * g[..., None]
    return gy


# -- smoothness ---------------------------------------------------------------------

def smoothness_loss(depth, img, want_grad=False):
    """Edge-aware smoothness of mean-normalised inverse depth.

    ``mean|dx d*| exp(-|dx I|) + mean|dy d*| exp(-|dy I|)`` with
    ``d* = (1/D) / mean(1/D)`` and image gradients averaged over channels.
    """
    D = _depth_values(depth)
    img = _as_hwc(img)
    disp = 1.0 / D
    m = disp.mean()
    dn = disp / m
    wx = np.exp(-np.abs(np.diff(img, axis=1)).mean(axis=2))
    wy = np.exp(-np.abs(np.diff(img, axis=0)).mean(axis=2))
    gx = np.diff(dn, axis=1)
    gy = np.diff(dn, axis=0)
    value = float(np.mean(np.abs(gx) * wx) + np.mean(np.abs(gy) * wy))
    if not want_grad:
        return value
    cx = np.sign(gx) * wx / gx.size
    cy = np.sign(gy) * wy / gy.size
    g_dn = np.zeros_like(dn)
    g_dn[:, 1:] += cx
    g_dn[:, :-1] -= cx
    g_dn[1:, :] += cy
    g_dn[:-1, :] -= cy
    g_disp = g_dn / m - np.sum(g_dn * disp) / (m * m * disp.size)
    return value, -g_disp / (D * D)


# -- losses -------------------------------------------------------------------------

def _stack_errors(I_t, warped, cfg, valid):
    if len(warped) == 0:
        raise ValueError("at least one source view is required")
    errors = np.stack([photometric_error(I_t, w, cfg) for w in warped])
    if valid is not None:
        valid = np.stack([np.asarray(v, dtype=bool) for v in valid])
        errors = np.where(valid, errors, np.inf)
    return errors


def min_reprojection_loss(I_t, warped, cfg=PhotometricConfig(), valid=None, depth=None, mask=None):
    """Per-pixel minimum photometric error over source views.

    Parameters
    ----------
    I_t : array_like
        Target image.
    warped : list of array_like
        Synthesised views of the target, one per source.
    valid : list of bool arrays, optional
        Per-source validity from :func:`synthesize_view`. A pixel with no
        valid source is excluded from the mean.
    depth : DepthMap or array, optional
        Target depth; adds ``smooth_weight * smoothness_loss`` when given.
    mask : bool array, optional
        Extra per-pixel inclusion mask (for example :func:`auto_mask`).

    Returns
    -------
    (float, numpy.ndarray)
        Scalar loss and the per-pixel argmin source index (-1 where excluded).
    """
    errors = _stack_errors(I_t, warped, cfg, valid)
    best = errors.min(axis=0)
    argmin = errors.argmin(axis=0)
    keep = np.isfinite(best)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    argmin = np.where(keep, argmin, -1)
    value = float(best[keep].mean()) if keep.any() else 0.0
    if depth is not None:
        value += cfg.smooth_weight * smoothness_loss(depth, I_t)
    return value, argmin


def summed_reprojection_loss(I_t, warped, cfg=PhotometricConfig(), valid=None):
    """Sum over sources of the mean photometric error (no min reduction)."""
    errors = _stack_errors(I_t, warped, cfg, valid)
    total = 0.0
    for e in errors:
        ok = np.isfinite(e)
        if ok.any():
            total += float(e[ok].mean())
    return total


def auto_mask(I_t, sources, warped, cfg=PhotometricConfig()):
    """True where the best warped error strictly beats the best unwarped error."""
    if len(sources) == 0 or len(sources) != len(warped):
        raise ValueError("need matching, non-empty source and warped lists")
    warped_err = np.min([photometric_error(I_t, w, cfg) for w in warped], axis=0)
    raw_err = np.min([photometric_error(I_t, s, cfg) for s in sources], axis=0)
    return warped_err < raw_err


def view_synthesis_loss(I_t, sources, depth, poses, cam, cfg=PhotometricConfig(),
                        use_auto_mask=False, want_grad=True):
    """Min-reprojection loss of the target and its gradient w.r.t. depth.

    Each source ``I_s`` is warped into the target frame with ``depth`` and the
    matching ``T_{t->s}`` in ``poses``. The gradient is analytic; it is exact
    wherever sample coordinates avoid integer boundaries and no argmin or
    validity flip occurs within the perturbation.

    Returns ``value`` or ``(value, grad)`` with ``grad`` shaped like ``depth``.
    """
    raw = np.asarray(depth.values if isinstance(depth, DepthMap) else depth, dtype=np.float64)
    D = _depth_values(raw)
    clamped = (raw < MIN_DEPTH) | (raw > MAX_DEPTH)
    x = _as_hwc(I_t)
    if len(sources) != len(poses) or not sources:
        raise ValueError("need one pose per source and at least one source")
    warps, geom = [], []
    for I_s, pose in zip(sources, poses):
        coords, front, du, dv = _warp_geometry(D, pose, cam)
        out, inside, gu, gv = _bilinear(I_s, coords, want_grad=True)
        warps.append(out)
        geom.append((inside & front, du, dv, gu, gv))
    valid = [g[0] for g in geom]
    mask = auto_mask(x, [_as_hwc(s) for s in sources], warps, cfg) if use_auto_mask else None
    value, argmin = min_reprojection_loss(x, warps, cfg, valid=valid, depth=D, mask=mask)
    if not want_grad:
        return value
    n_keep = np.count_nonzero(argmin >= 0)
    grad = np.zeros_like(D)
    if n_keep:
        for s, (warp, (_, du, dv, gu, gv)) in enumerate(zip(warps, geom)):
            g_err = (argmin == s) / n_keep
            if not g_err.any():
                continue
            g_img = _photometric_error_vjp(x, warp, g_err, cfg)
            grad += np.sum(g_img * (gu * du[..., None] + gv * dv[..., None]), axis=2)
    _, g_smooth = smoothness_loss(D, x, want_grad=True)
    grad += cfg.smooth_weight * g_smooth
    grad[clamped] = 0.0
    return value, grad
