"""Anisotropic per-Gaussian feature sampling and decoding.

Each Gaussian turns its query vector (here: its own feature) into a handful
of offsets inside its unit ball via tanh, places them in the ellipsoid
spanned by its rotation and scales (so every sample stays within Mahalanobis
sqrt(3) <= 3 of the center), reads feature planes from all views by bilinear
interpolation, and aggregates the valid (point, view) pairs with a
softmax-weighted mean.  A set of small affine heads decodes the aggregate
back into a Gaussian update with bounded position shift and floored scales.

All heads are plain ReLU MLPs with loadable weights; `heads=None` selects the
weight-free fallback: center sampling, uniform aggregation, geometry kept,
feature replaced by the aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import (CameraView, FeatureGaussian, GaussianScene, IDENTITY_QUAT,
                   Z_NEAR, quat_to_rotmat, quats_to_rotmats)
from .errors import InvalidInputError, NumericalDegeneracyError

N_OFFSETS = 16
DELTA_MAX = 2.0   # meters; bound on a decoded position update
S_MIN = 0.01      # meters; floor on decoded scales


# ---------------------------------------------------------------------------
# Affine stacks
# ---------------------------------------------------------------------------

class Mlp:
    """Affine layers with ReLU between them and a raw (linear) output."""

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]]):
        if not layers:
            raise InvalidInputError("an MLP needs at least one affine layer")
        self.layers = []
        for w, b in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidInputError("affine layer wants (out, in) weight and (out,) bias")
            self.layers.append((w, b))
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w1.shape[1] != w0.shape[0]:
                raise InvalidInputError("consecutive layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise InvalidInputError(f"MLP expects input dim {self.in_dim}, got {h.shape[1]}")
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.T + b
            if i + 1 < len(self.layers):
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    @classmethod
    def seeded(cls, dims: list[int], rng: np.random.Generator) -> "Mlp":
        layers = []
        for din, dout in zip(dims, dims[1:]):
            layers.append((rng.standard_normal((dout, din)) / np.sqrt(din),
                           np.zeros(dout)))
        return cls(layers)


@dataclass
class DecodeHeads:
    """Bundle of decode-side heads (all consuming the same input width)."""

    offset: Mlp            # query -> 3 * n_offsets, squashed by tanh
    feat: Mlp              # aggregate -> new feature (raw)
    geo: Mlp               # aggregate -> (d_mu[3], s_raw[3], r_raw[4], sigma_raw)
    weights: Mlp | None = None  # query -> one aggregation logit per sample point
    delta_max: float = DELTA_MAX
    s_min: float = S_MIN

    def __post_init__(self):
        if self.offset.out_dim % 3:
            raise InvalidInputError("offset head output must be a multiple of 3")
        if self.geo.out_dim != 11:
            raise InvalidInputError("geometry head must output 11 values")
        if self.weights is not None and self.weights.out_dim != self.n_offsets:
            raise InvalidInputError("weights head must output one logit per sample point")

    @property
    def n_offsets(self) -> int:
        return self.offset.out_dim // 3

    @classmethod
    def seeded(cls, query_dim: int, feature_dim: int, n_offsets: int = N_OFFSETS,
               hidden: tuple[int, ...] = (64,), seed: int = 0,
               with_weights: bool = True) -> "DecodeHeads":
        rng = np.random.default_rng(seed)
        h = list(hidden)
        return cls(
            offset=Mlp.seeded([query_dim, *h, 3 * n_offsets], rng),
            feat=Mlp.seeded([feature_dim, *h, feature_dim], rng),
            geo=Mlp.seeded([feature_dim, *h, 11], rng),
            weights=Mlp.seeded([query_dim, *h, n_offsets], rng) if with_weights else None,
        )

    # -- sidecar (de)serialization -------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {"meta.delta_max": np.array(self.delta_max),
               "meta.s_min": np.array(self.s_min)}
        for name, mlp in (("offset", self.offset), ("feat", self.feat),
                          ("geo", self.geo), ("agg", self.weights)):
            if mlp is None:
                continue
            for i, (w, b) in enumerate(mlp.layers):
                out[f"{name}.{i}.weight"] = w
                out[f"{name}.{i}.bias"] = b
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "DecodeHeads":
        def build(name):
            layers = []
            for i in range(len([k for k in tensors if k.startswith(f"{name}.") and k.endswith(".weight")])):
                layers.append((tensors[f"{name}.{i}.weight"], tensors[f"{name}.{i}.bias"]))
            return Mlp(layers) if layers else None
        offset, feat, geo = build("offset"), build("feat"), build("geo")
        if offset is None or feat is None or geo is None:
            raise InvalidInputError("sidecar is missing offset/feat/geo head tensors")
        return cls(offset=offset, feat=feat, geo=geo, weights=build("agg"),
                   delta_max=float(tensors.get("meta.delta_max", DELTA_MAX)),
                   s_min=float(tensors.get("meta.s_min", S_MIN)))


# ---------------------------------------------------------------------------
# Offsets and placement
# ---------------------------------------------------------------------------

def gen_offsets(query: np.ndarray, heads: DecodeHeads, n: int | None = None) -> np.ndarray:
    """(n, 3) offsets in the open unit cube: tanh of the offset head."""
    n = heads.n_offsets if n is None else int(n)
    if n != heads.n_offsets:
        raise InvalidInputError(f"heads produce {heads.n_offsets} offsets, asked for {n}")
    raw = heads.offset(np.asarray(query, dtype=np.float64))
    return np.tanh(raw).reshape(n, 3)


def place_samples(g: FeatureGaussian, offsets: np.ndarray) -> np.ndarray:
    """Map unit-cube offsets into the Gaussian's ellipsoid: mu + R (s * delta).

    With |delta|_inf <= 1 every sample has squared Mahalanobis distance
    |delta|^2 <= 3, i.e. it stays within sqrt(3) sigma of the center.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 2 or offsets.shape[1] != 3:
        raise InvalidInputError("offsets must be (n, 3)")
    if np.any(np.abs(offsets) > 1.0 + 1e-12):
        raise InvalidInputError("offsets must lie in the unit cube")
    return g.mu + (g.s * offsets) @ quat_to_rotmat(g.r).T


# ---------------------------------------------------------------------------
# Feature plane lookup
# ---------------------------------------------------------------------------

def bilinear_sample(plane: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at (u, v) with texel centers on integer coords.

    Callers must pass in-bounds coordinates (0 <= u <= W-1, 0 <= v <= H-1);
    boundary coordinates resolve exactly to edge texels.
    """
    plane = np.asarray(plane, dtype=np.float64)
    squeeze = plane.ndim == 2
    if squeeze:
        plane = plane[:, :, None]
    h, w = plane.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(int)
    v0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    out = ((1 - fu) * (1 - fv) * plane[v0, u0]
           + fu * (1 - fv) * plane[v0, u1]
           + (1 - fu) * fv * plane[v1, u0]
           + fu * fv * plane[v1, u1])
    return out[:, 0] if squeeze else out


def sample_features(points: np.ndarray, views: list[CameraView],
                    occlusion_margin: float | None = None):
    """Project ego points into every feature-carrying view and interpolate.

    Returns (features (M, L, F), valid (M, L)) over the views that carry a
    feature plane; a point is valid in a view when it projects in front of
    the near plane and inside the image rectangle.  Rows of invalid pairs
    are zero.

    With `occlusion_margin` set, a point is additionally invalid in a view
    whose reference depth at the nearest pixel is more than the margin
    closer than the point itself: the point sits behind the visible surface
    and the plane there describes the occluder, not it.  Pixels without a
    valid reference depth are left ungated.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    feat_views = [v for v in views if v.ref_feature is not None]
    if not feat_views:
        raise InvalidInputError("no view carries a feature plane")
    fdim = feat_views[0].ref_feature.shape[2]
    m = points.shape[0]
    feats = np.zeros((m, len(feat_views), fdim))
    valid = np.zeros((m, len(feat_views)), dtype=bool)
    for l, v in enumerate(feat_views):
        if v.ref_feature.shape[2] != fdim:
            raise InvalidInputError("views disagree on feature dimension")
        pc = v.ego_to_cam(points)
        z = pc[:, 2]
        front = z > Z_NEAR
        with np.errstate(divide="ignore", invalid="ignore"):
            u = v.fx * pc[:, 0] / z + v.cx
            vv = v.fy * pc[:, 1] / z + v.cy
        ok = front & (u >= 0) & (u <= v.width - 1) & (vv >= 0) & (vv <= v.height - 1)
        if occlusion_margin is not None and v.ref_depth is not None and np.any(ok):
            iu = np.clip(np.rint(u[ok]).astype(int), 0, v.width - 1)
            iv = np.clip(np.rint(vv[ok]).astype(int), 0, v.height - 1)
            ref_z = v.ref_depth[iv, iu]
            known = np.ones(ref_z.shape, dtype=bool)
            if v.ref_valid is not None:
                known = v.ref_valid[iv, iu]
            ok[np.flatnonzero(ok)[known & (z[ok] > ref_z + occlusion_margin)]] = False
        if np.any(ok):
            feats[ok, l] = bilinear_sample(v.ref_feature, u[ok], vv[ok])
        valid[:, l] = ok
    return feats, valid


# ---------------------------------------------------------------------------
# Aggregation and decoding
# ---------------------------------------------------------------------------

def aggregate(features: np.ndarray, valid: np.ndarray,
              weights_head: Mlp | None = None, query: np.ndarray | None = None):
    """Softmax-weighted mean of valid (point, view) feature pairs.

    Logits come from the weights head applied to the query, one per sample
    point, shared across views (so permuting the view list only reorders the
    summation).  Without a weights head the mean is uniform.  Returns None
    when no pair is valid - the caller keeps its previous state.
    """
    features = np.asarray(features, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if features.ndim != 3 or valid.shape != features.shape[:2]:
        raise InvalidInputError("features must be (n, L, F) with matching validity")
    if not np.any(valid):
        return None
    if weights_head is None:
        w = valid.astype(np.float64)
    else:
        if query is None:
            raise InvalidInputError("a weights head needs the query vector")
        logits = weights_head(np.asarray(query, dtype=np.float64))
        if logits.shape != (features.shape[0],):
            raise InvalidInputError("weights head must emit one logit per sample point")
        z = np.where(valid, logits[:, None], -np.inf)
        w = np.exp(z - z.max())
        w[~valid] = 0.0
    w = w / w.sum()
    return np.einsum("nl,nlf->f", w, features)


def decode_update(f_a: np.ndarray, heads: DecodeHeads,
                  g_prev: FeatureGaussian) -> FeatureGaussian:
    """Decode an aggregated feature into the Gaussian's next state.

    Position moves by at most delta_max per axis (tanh-bounded residual),
    scales are softplus-floored at s_min, opacity is squashed to (0, 1) and
    the orientation is the normalized raw quaternion (identity when the raw
    norm vanishes).  The feature head output is taken raw.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    new_f = heads.feat(f_a)
    geo = heads.geo(f_a)
    if not (np.all(np.isfinite(geo)) and np.all(np.isfinite(new_f))):
        raise NumericalDegeneracyError("decode heads produced non-finite values")
    mu = g_prev.mu + heads.delta_max * np.tanh(geo[0:3])
    s = np.logaddexp(0.0, geo[3:6]) + heads.s_min
    r_raw = geo[6:10]
    r = IDENTITY_QUAT if np.linalg.norm(r_raw) < 1e-8 else r_raw
    sigma = float(expit(geo[10]))
    return FeatureGaussian(mu, s, r, sigma, new_f)


# ---------------------------------------------------------------------------
# Whole-scene refinement pass
# ---------------------------------------------------------------------------

def refine_scene(scene: GaussianScene, views: list[CameraView],
                 heads: DecodeHeads | None = None, which: str = "all",
                 chunk: int = 2048,
                 occlusion_margin: float | None = None) -> GaussianScene:
    """One sampling + aggregation (+ decode) pass over the scene.

    `which` selects "all" Gaussians or only the "newest" layer.  With heads,
    each selected Gaussian is replaced by its decoded update; without heads,
    geometry is kept and the feature becomes the uniform aggregate of the
    center sample across views.  Gaussians with zero valid pairs are kept
    unchanged either way.  Layer structure is preserved.
    `occlusion_margin` is forwarded to the plane sampler.
    """
    if which not in ("all", "newest"):
        raise InvalidInputError("which must be 'all' or 'newest'")
    rows = np.arange(len(scene)) if which == "all" else \
        np.arange(scene.layer_slice(scene.layer_count - 1).start, len(scene))
    if rows.size == 0:
        return scene

    mu = scene.mu.copy()
    sc = scene.scale.copy()
    qu = scene.quat.copy()
    op = scene.opacity.copy()
    ft = scene.feature.copy()

    for lo in range(0, rows.size, chunk):
        sel = rows[lo:lo + chunk]
        m = sel.size
        queries = scene.feature[sel]
        if heads is None:
            pts = scene.mu[sel][:, None, :]                      # center sample only
            n = 1
        else:
            raw = heads.offset(queries)                          # (m, 3n)
            n = heads.n_offsets
            offs = np.tanh(raw).reshape(m, n, 3)
            rot = quats_to_rotmats(scene.quat[sel])
            local = scene.scale[sel][:, None, :] * offs          # (m, n, 3)
            pts = scene.mu[sel][:, None, :] + np.einsum("mij,mnj->mni", rot, local)

        feats, valid = sample_features(pts.reshape(-1, 3), views,
                                       occlusion_margin=occlusion_margin)
        nl = feats.shape[1]
        feats = feats.reshape(m, n, nl, -1)
        valid = valid.reshape(m, n, nl)
        any_valid = valid.any(axis=(1, 2))

        if heads is not None and heads.weights is not None:
            logits = heads.weights(queries)                      # (m, n)
            z = np.where(valid, logits[:, :, None], -np.inf)
            zmax = z.max(axis=(1, 2), keepdims=True)
            w = np.exp(z - np.where(np.isfinite(zmax), zmax, 0.0))
            w[~valid] = 0.0
        else:
            w = valid.astype(np.float64)
        totals = w.sum(axis=(1, 2))
        w = w / np.where(totals > 0.0, totals, 1.0)[:, None, None]
        f_a = np.einsum("mnl,mnlf->mf", w, feats)

        if heads is None:
            upd = sel[any_valid]
            ft[upd] = f_a[any_valid]
            continue

        new_f = heads.feat(f_a)
        geo = heads.geo(f_a)
        if not (np.all(np.isfinite(geo[any_valid])) and np.all(np.isfinite(new_f[any_valid]))):
            raise NumericalDegeneracyError("decode heads produced non-finite values")
        upd = sel[any_valid]
        ga = geo[any_valid]
        mu[upd] = scene.mu[upd] + heads.delta_max * np.tanh(ga[:, 0:3])
        sc[upd] = np.logaddexp(0.0, ga[:, 3:6]) + heads.s_min
        r_raw = ga[:, 6:10]
        norms = np.linalg.norm(r_raw, axis=1)
        qu[upd] = np.where(norms[:, None] < 1e-8, IDENTITY_QUAT, r_raw)
        op[upd] = expit(ga[:, 10])
        ft[upd] = new_f[any_valid]

    return GaussianScene(mu, sc, qu, op, ft, scene.layer_offsets)
