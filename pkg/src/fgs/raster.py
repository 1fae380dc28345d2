"""Depth/feature rasterization of Gaussian scenes.

Each Gaussian is projected to an anisotropic 2-D footprint (local-affine
covariance mapping plus a low-pass floor), then blended per pixel
front-to-back in a single global depth order.  The blend semantics are shared
verbatim by the two renderers:

* alpha = min(0.99, opacity * exp(-q/2)) with q the squared Mahalanobis
  distance of the pixel to the footprint; alpha is zero beyond the 3-sigma
  support ellipse or below the 1/255 floor;
* a Gaussian contributes alpha * T, T the product of (1 - alpha) over all
  Gaussians in front of it; contributions are zero once T drops below 1e-4
  (the saturation floor), which the tiled path exploits to stop early;
* expected depth is the normalized weighted sum (invalid when the weight
  total is below 1e-6), clamped to the [min, max] depth range of the pixel's
  contributing Gaussians so convexity survives floating-point division; the
  feature image is the unnormalized weighted sum.

`render` is the production tiled path; `render_oracle` evaluates every
surviving Gaussian at every pixel with its own covariance inversion and no
tiling or early termination.  The two agree to float accumulation order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import CameraView, FeatureGaussian, GaussianScene, RenderOutput, Z_NEAR, quats_to_rotmats
from .errors import InvalidInputError, NumericalDegeneracyError

LOW_PASS = 0.3          # px^2 added to both footprint eigenvalues
ALPHA_MAX = 0.99
ALPHA_FLOOR = 1.0 / 255.0
SUPPORT_RADIUS = 3.0    # Mahalanobis support of a footprint, in sigmas
T_STOP = 1e-4           # saturation floor on transmittance
EPS_ACC = 1e-6          # minimum blend mass for a valid depth
TILE = 16


@dataclass
class Projected2D:
    """A Gaussian's screen-space footprint (survivors of culling only)."""

    mean2d: np.ndarray    # (2,) pixel coordinates (u, v)
    cov2d: np.ndarray     # (2, 2) SPD footprint covariance, px^2
    z_cam: float          # camera-frame depth, > Z_NEAR
    opacity: float
    source_index: int     # index into the originating scene


class _ProjectedArrays:
    """Struct-of-arrays form of the surviving footprints, depth-sorted."""

    __slots__ = ("mean2d", "cov", "z", "opacity", "src")

    def __init__(self, mean2d, cov, z, opacity, src):
        self.mean2d = mean2d  # (M, 2)
        self.cov = cov        # (M, 3) packed (a, b, c) of [[a, b], [b, c]]
        self.z = z            # (M,)
        self.opacity = opacity
        self.src = src        # (M,) indices into the scene


def _project_scene(scene: GaussianScene, cam: CameraView) -> _ProjectedArrays:
    """Project all Gaussians, cull, and sort by (z_cam, scene index)."""
    n = len(scene)
    if n == 0:
        e = np.empty
        return _ProjectedArrays(e((0, 2)), e((0, 3)), e(0), e(0), np.empty(0, dtype=int))
    pc = cam.ego_to_cam(scene.mu)
    z = pc[:, 2]
    front = z > Z_NEAR
    idx = np.nonzero(front)[0]
    pc, z = pc[front], z[front]

    u = cam.fx * pc[:, 0] / z + cam.cx
    v = cam.fy * pc[:, 1] / z + cam.cy

    # footprint: J (W Sigma W^T) J^T + low-pass, with A = W R diag(s) so that
    # W Sigma W^T = A A^T and the 2x2 result is (J A)(J A)^T
    rot = quats_to_rotmats(scene.quat[front])
    a3 = np.einsum("ij,njk->nik", cam.rotation.T, rot) * scene.scale[front][:, None, :]
    inv_z = 1.0 / z
    j = np.zeros((z.size, 2, 3))
    j[:, 0, 0] = cam.fx * inv_z
    j[:, 0, 2] = -cam.fx * pc[:, 0] * inv_z * inv_z
    j[:, 1, 1] = cam.fy * inv_z
    j[:, 1, 2] = -cam.fy * pc[:, 1] * inv_z * inv_z
    b = np.einsum("nij,njk->nik", j, a3)
    cov_a = np.einsum("nk,nk->n", b[:, 0], b[:, 0]) + LOW_PASS
    cov_b = np.einsum("nk,nk->n", b[:, 0], b[:, 1])
    cov_c = np.einsum("nk,nk->n", b[:, 1], b[:, 1]) + LOW_PASS

    rx = SUPPORT_RADIUS * np.sqrt(cov_a)
    ry = SUPPORT_RADIUS * np.sqrt(cov_c)
    on_screen = ((u + rx >= 0.0) & (u - rx <= cam.width - 1.0)
                 & (v + ry >= 0.0) & (v - ry <= cam.height - 1.0))

    order = np.lexsort((idx[on_screen], z[on_screen]))
    sel = np.nonzero(on_screen)[0][order]
    return _ProjectedArrays(
        np.stack([u, v], axis=1)[sel],
        np.stack([cov_a, cov_b, cov_c], axis=1)[sel],
        z[sel], scene.opacity[front][sel], idx[sel],
    )


def project_gaussian(g: FeatureGaussian, cam: CameraView, source_index: int = 0):
    """Project one Gaussian; returns Projected2D, or None when culled.

    Culling (None) happens behind the near plane or when the 3-sigma screen
    bounding box misses the image; it is a signal, not an error.
    """
    scene = GaussianScene(g.mu[None], g.s[None], g.r[None],
                          np.array([g.sigma]), g.f[None])
    p = _project_scene(scene, cam)
    if p.z.size == 0:
        return None
    a, b, c = p.cov[0]
    return Projected2D(p.mean2d[0], np.array([[a, b], [b, c]]),
                       float(p.z[0]), float(p.opacity[0]), source_index)


def alpha_at(p2d: Projected2D, pixel) -> float:
    """Blend weight of one footprint at one (u, v) pixel position.

    Zero beyond the 3-sigma support or below the 1/255 floor; capped at 0.99.
    """
    cov = np.asarray(p2d.cov2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not np.isfinite(det) or det <= 1e-12:
        raise NumericalDegeneracyError("singular 2-D footprint covariance")
    du = float(pixel[0]) - float(p2d.mean2d[0])
    dv = float(pixel[1]) - float(p2d.mean2d[1])
    q = (cov[1, 1] * du * du - 2.0 * cov[0, 1] * du * dv + cov[0, 0] * dv * dv) / det
    if q > SUPPORT_RADIUS * SUPPORT_RADIUS:
        return 0.0
    alpha = min(ALPHA_MAX, float(p2d.opacity) * float(np.exp(-0.5 * q)))
    return alpha if alpha >= ALPHA_FLOOR else 0.0


def _alpha_block(proj: _ProjectedArrays, rows, us, vs):
    """(G, P) alpha matrix of footprint rows `rows` at flat pixels (us, vs)."""
    mu = proj.mean2d[rows]
    a = proj.cov[rows, 0][:, None]
    b = proj.cov[rows, 1][:, None]
    c = proj.cov[rows, 2][:, None]
    det = a * c - b * b
    if np.any(det <= 1e-12):
        raise NumericalDegeneracyError("singular 2-D footprint covariance")
    du = us[None, :] - mu[:, 0][:, None]
    dv = vs[None, :] - mu[:, 1][:, None]
    q = (c * du * du - 2.0 * b * du * dv + a * dv * dv) / det
    inside = q <= SUPPORT_RADIUS * SUPPORT_RADIUS
    with np.errstate(under="ignore"):
        alpha = proj.opacity[rows][:, None] * np.exp(np.where(inside, -0.5 * q, -np.inf))
    np.minimum(alpha, ALPHA_MAX, out=alpha)
    alpha[alpha < ALPHA_FLOOR] = 0.0
    return alpha


def _blend_block(proj, rows, us, vs, feature, chunk=64):
    """Front-to-back blend of the given footprints over one flat pixel block.

    Returns (depth_num, weight_sum, feature_sum (F, P), zmin, zmax), the last
    two being the contributing depth range per pixel.  Processes the
    depth-sorted rows in chunks, carrying transmittance, and stops once every
    pixel is saturated.
    """
    p = us.size
    num = np.zeros(p)
    den = np.zeros(p)
    feat = np.zeros((feature.shape[1], p))
    zmin = np.full(p, np.inf)
    zmax = np.full(p, -np.inf)
    t_run = np.ones(p)
    for lo in range(0, len(rows), chunk):
        sub = rows[lo:lo + chunk]
        alpha = _alpha_block(proj, sub, us, vs)
        one_minus = 1.0 - alpha
        cum = np.cumprod(one_minus, axis=0)
        t_before = np.empty_like(cum)
        t_before[0] = t_run
        t_before[1:] = cum[:-1] * t_run
        w = alpha * t_before
        w[t_before < T_STOP] = 0.0
        num += proj.z[sub] @ w
        den += w.sum(axis=0)
        feat += feature[proj.src[sub]].T @ w
        zc = np.where(w > 0.0, proj.z[sub][:, None], np.inf)
        np.minimum(zmin, zc.min(axis=0), out=zmin)
        zc = np.where(w > 0.0, proj.z[sub][:, None], -np.inf)
        np.maximum(zmax, zc.max(axis=0), out=zmax)
        t_run = t_run * cum[-1]
        if t_run.max() < T_STOP:
            break
    return num, den, feat, zmin, zmax


def _finish(num, den, feat, zmin, zmax, h, w, fdim):
    valid = den >= EPS_ACC
    depth = np.zeros(h * w)
    # clamp to the contributing range: mathematically a no-op, but it keeps
    # the convexity invariant exact under floating-point division
    depth[valid] = np.clip(num[valid] / den[valid], zmin[valid], zmax[valid])
    return RenderOutput(
        depth=depth.reshape(h, w),
        feature=feat.T.reshape(h, w, fdim),
        acc_alpha=den.reshape(h, w),
        valid=valid.reshape(h, w),
    )


def render(scene: GaussianScene, cam: CameraView, tile: int = TILE,
           threads: int = 1) -> RenderOutput:
    """Tile-binned front-to-back blend of the whole scene into one view.

    Gaussians are binned to the tiles their 3-sigma screen boxes touch, in
    one global depth order (ties by scene index), so results are independent
    of `tile` and `threads`; the worker pool writes disjoint tiles.
    """
    if tile <= 0 or threads <= 0:
        raise InvalidInputError("tile size and thread count must be positive")
    proj = _project_scene(scene, cam)
    h, w, fdim = cam.height, cam.width, scene.feature_dim
    num = np.zeros(h * w)
    den = np.zeros(h * w)
    feat = np.zeros((fdim, h * w))
    zmin = np.full(h * w, np.inf)
    zmax = np.full(h * w, -np.inf)

    ntx = (w + tile - 1) // tile
    nty = (h + tile - 1) // tile
    bins: list[list[int]] = [[] for _ in range(ntx * nty)]
    rx = SUPPORT_RADIUS * np.sqrt(proj.cov[:, 0])
    ry = SUPPORT_RADIUS * np.sqrt(proj.cov[:, 2])
    tx0 = np.clip(((proj.mean2d[:, 0] - rx) // tile).astype(int), 0, ntx - 1)
    tx1 = np.clip(((proj.mean2d[:, 0] + rx) // tile).astype(int), 0, ntx - 1)
    ty0 = np.clip(((proj.mean2d[:, 1] - ry) // tile).astype(int), 0, nty - 1)
    ty1 = np.clip(((proj.mean2d[:, 1] + ry) // tile).astype(int), 0, nty - 1)
    for i in range(proj.z.size):
        for ty in range(ty0[i], ty1[i] + 1):
            base = ty * ntx
            for tx in range(tx0[i], tx1[i] + 1):
                bins[base + tx].append(i)

    def do_tile(t):
        rows = np.asarray(bins[t], dtype=int)
        if rows.size == 0:
            return
        ty, tx = divmod(t, ntx)
        x0, x1 = tx * tile, min((tx + 1) * tile, w)
        y0, y1 = ty * tile, min((ty + 1) * tile, h)
        uu, vv = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                             np.arange(y0, y1, dtype=np.float64))
        tn, td, tf, tlo, thi = _blend_block(proj, rows, uu.ravel(), vv.ravel(),
                                            scene.feature)
        flat = (vv.astype(int) * w + uu.astype(int)).ravel()
        num[flat] = tn
        den[flat] = td
        feat[:, flat] = tf
        zmin[flat] = tlo
        zmax[flat] = thi

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(do_tile, range(ntx * nty)))
    else:
        for t in range(ntx * nty):
            do_tile(t)
    return _finish(num, den, feat, zmin, zmax, h, w, fdim)


def render_oracle(scene: GaussianScene, cam: CameraView) -> RenderOutput:
    """Reference renderer: every surviving Gaussian at every pixel.

    Same blend semantics as `render` but with no tiling and no early
    termination; footprint inverses go through np.linalg.inv.  Quadratic in
    scene size times pixels - for verification, not production.
    """
    proj = _project_scene(scene, cam)
    h, w, fdim = cam.height, cam.width, scene.feature_dim
    m = proj.z.size
    num = np.zeros(h * w)
    den = np.zeros(h * w)
    feat = np.zeros((fdim, h * w))
    zmin = np.full(h * w, np.inf)
    zmax = np.full(h * w, -np.inf)
    if m == 0:
        return _finish(num, den, feat, zmin, zmax, h, w, fdim)

    cov = np.empty((m, 2, 2))
    cov[:, 0, 0] = proj.cov[:, 0]
    cov[:, 0, 1] = cov[:, 1, 0] = proj.cov[:, 1]
    cov[:, 1, 1] = proj.cov[:, 2]
    prec = np.linalg.inv(cov)
    f_sorted = scene.feature[proj.src]

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    us, vs = uu.ravel(), vv.ravel()
    chunk = max(1, int(3e6 / m))
    for lo in range(0, h * w, chunk):
        cu, cv = us[lo:lo + chunk], vs[lo:lo + chunk]
        du = cu[None, :] - proj.mean2d[:, 0][:, None]
        dv = cv[None, :] - proj.mean2d[:, 1][:, None]
        q = (prec[:, 0, 0][:, None] * du * du
             + 2.0 * prec[:, 0, 1][:, None] * du * dv
             + prec[:, 1, 1][:, None] * dv * dv)
        inside = q <= SUPPORT_RADIUS * SUPPORT_RADIUS
        with np.errstate(under="ignore"):
            alpha = proj.opacity[:, None] * np.exp(np.where(inside, -0.5 * q, -np.inf))
        np.minimum(alpha, ALPHA_MAX, out=alpha)
        alpha[alpha < ALPHA_FLOOR] = 0.0

        cum = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.empty_like(cum)
        t_before[0] = 1.0
        t_before[1:] = cum[:-1]
        wgt = alpha * t_before
        wgt[t_before < T_STOP] = 0.0
        num[lo:lo + chunk] = proj.z @ wgt
        den[lo:lo + chunk] = wgt.sum(axis=0)
        feat[:, lo:lo + chunk] = f_sorted.T @ wgt
        zc = np.where(wgt > 0.0, proj.z[:, None], np.inf)
        zmin[lo:lo + chunk] = zc.min(axis=0)
        zc = np.where(wgt > 0.0, proj.z[:, None], -np.inf)
        zmax[lo:lo + chunk] = zc.max(axis=0)
    return _finish(num, den, feat, zmin, zmax, h, w, fdim)
