"""Gaussian-to-voxel occupancy, text-prompt classification, and metrics.

A scene is converted to a dense grid by accumulating each Gaussian's
unnormalized density at voxel centers, weighted by opacity (occupancy mass)
or by its class-probability vector (semantics).  Point-wise accumulation of
opacity and raw features supports open-vocabulary retrieval at arbitrary
query points.  Evaluation helpers (IoU / average precision) operate on the
resulting grids and score tables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianScene, quats_to_rotmats
from .errors import EmptyInputError, InvalidInputError

# Default decision threshold on accumulated opacity mass.
TAU_OCC = 0.1
# Default Mahalanobis support radius for accumulation (None disables).
DEFAULT_CUTOFF = 3.0
# In-memory label for unoccupied voxels (0xFFFF on disk).
EMPTY_LABEL = -1


# ---------------------------------------------------------------------------
# Text bank
# ---------------------------------------------------------------------------

@dataclass
class TextBankEntry:
    class_name: str
    prompts: list[str]
    embeddings: np.ndarray  # (P, F), one unit-norm row per prompt

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if self.embeddings.shape[0] != len(self.prompts):
            raise InvalidInputError(
                f"class {self.class_name!r}: {len(self.prompts)} prompts but "
                f"{self.embeddings.shape[0]} embeddings")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(norms < 1e-8):
            raise InvalidInputError(f"class {self.class_name!r}: zero-norm embedding")
        self.embeddings = self.embeddings / norms[:, None]


@dataclass
class TextBank:
    """Ordered set of promptable classes; one entry may be the empty/sky class.

    The empty class participates in the per-Gaussian softmax but an argmax win
    for it means "unoccupied", it is never emitted as a voxel label.
    """

    entries: list[TextBankEntry]
    empty_class: str | None = "empty"

    def __post_init__(self):
        if not self.entries:
            raise InvalidInputError("text bank must contain at least one class")
        dims = {e.embeddings.shape[1] for e in self.entries}
        if len(dims) != 1:
            raise InvalidInputError("all bank embeddings must share one dimension")

    @property
    def class_names(self) -> list[str]:
        return [e.class_name for e in self.entries]

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def feature_dim(self) -> int:
        return self.entries[0].embeddings.shape[1]

    @property
    def empty_index(self) -> int | None:
        if self.empty_class is None:
            return None
        names = self.class_names
        return names.index(self.empty_class) if self.empty_class in names else None

    def similarity(self, features: np.ndarray, reduce: str = "max") -> np.ndarray:
        """(N, C) per-class similarity of (N, F) features.

        Multi-prompt classes reduce over their prompts by max (default) or
        mean.
        """
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.feature_dim:
            raise InvalidInputError("feature dimension does not match bank")
        if reduce not in ("max", "mean"):
            raise InvalidInputError("reduce must be 'max' or 'mean'")
        out = np.empty((features.shape[0], self.num_classes))
        for c, entry in enumerate(self.entries):
            dots = features @ entry.embeddings.T  # (N, P)
            out[:, c] = dots.max(axis=1) if reduce == "max" else dots.mean(axis=1)
        return out


def orthonormal_bank(class_names, dim, seed=0, empty_class="empty") -> TextBank:
    """Synthetic bank with mutually orthonormal single-prompt embeddings."""
    if dim < len(class_names):
        raise InvalidInputError("need dim >= number of classes for orthonormal bank")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    entries = [TextBankEntry(name, [name], basis[i][None, :])
               for i, name in enumerate(class_names)]
    return TextBank(entries, empty_class=empty_class)


def text_probs(features: np.ndarray, bank: TextBank, reduce: str = "max") -> np.ndarray:
    """Softmax over per-class text similarities; rows sum to 1.

    Accepts one (F,) vector or an (N, F) batch; returns (C,) or (N, C).
    """
    single = np.asarray(features).ndim == 1
    sims = bank.similarity(features, reduce=reduce)
    sims = sims - sims.max(axis=1, keepdims=True)
    e = np.exp(sims)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs[0] if single else probs


# ---------------------------------------------------------------------------
# Voxel grid
# ---------------------------------------------------------------------------

@dataclass
class VoxelGrid:
    """Dense grid of occupancy mass and class labels.

    Voxel (i, j, k) is centered at origin + (i+0.5, j+0.5, k+0.5)*voxel_size.
    `labels` uses EMPTY_LABEL (-1) for unoccupied voxels and indices into the
    producing bank's class list otherwise.  `class_probs` optionally keeps the
    accumulated per-class mass field.
    """

    origin: np.ndarray          # (3,) low corner, ego frame
    voxel_size: float
    occ_mass: np.ndarray        # (nx, ny, nz) float
    labels: np.ndarray          # (nx, ny, nz) int32
    class_probs: np.ndarray | None = None  # (nx, ny, nz, C)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(self.voxel_size)
        if self.voxel_size <= 0:
            raise InvalidInputError("voxel size must be positive")
        self.occ_mass = np.asarray(self.occ_mass, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.occ_mass.ndim != 3 or self.labels.shape != self.occ_mass.shape:
            raise InvalidInputError("occ_mass/labels must be matching 3-D arrays")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occ_mass.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.labels != EMPTY_LABEL

    def centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) voxel center coordinates."""
        nx, ny, nz = self.dims
        ax = [self.origin[d] + (np.arange(n) + 0.5) * self.voxel_size
              for d, n in zip(range(3), (nx, ny, nz))]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


@dataclass
class GridSpec:
    origin: np.ndarray
    dims: tuple[int, int, int]
    voxel_size: float = 0.4

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in self.dims) or self.voxel_size <= 0:
            raise InvalidInputError("grid dims and voxel size must be positive")

    def centers_flat(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ax = [self.origin[d] + (np.arange(n) + 0.5) * self.voxel_size
              for d, n in zip(range(3), (nx, ny, nz))]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def _gaussian_precisions(scene: GaussianScene):
    """Per-Gaussian (rot, inv_var) so that Sigma^-1 = rot diag(inv_var) rot^T."""
    rot = quats_to_rotmats(scene.quat)
    inv_var = 1.0 / scene.scale**2
    return rot, inv_var


def _accumulate_kernel(points, scene, weights, cutoff):
    """Sum_i exp(-0.5 * mahalanobis^2(points, gaussian_i)) * weights_i.

    `weights` is (N,) or (N, C); result is (M,) or (M, C).  `cutoff` (if not
    None) zeroes contributions beyond that Mahalanobis radius.
    """
    points = np.asarray(points, dtype=np.float64)
    rot, inv_var = _gaussian_precisions(scene)
    weights = np.asarray(weights, dtype=np.float64)
    out_shape = (points.shape[0],) if weights.ndim == 1 else (points.shape[0], weights.shape[1])
    out = np.zeros(out_shape)
    for i in range(len(scene)):
        local = (points - scene.mu[i]) @ rot[i]        # into the Gaussian's frame
        q = np.einsum("md,d,md->m", local, inv_var[i], local)
        if cutoff is not None:
            sel = q <= cutoff * cutoff
            if not np.any(sel):
                continue
            k = np.exp(-0.5 * q[sel])
            if weights.ndim == 1:
                out[sel] += k * weights[i]
            else:
                out[sel] += k[:, None] * weights[i]
        else:
            k = np.exp(-0.5 * q)
            if weights.ndim == 1:
                out += k * weights[i]
            else:
                out += k[:, None] * weights[i]
    return out


def voxelize(scene: GaussianScene, bank: TextBank, grid: GridSpec,
             tau_occ: float = TAU_OCC, cutoff: float | None = DEFAULT_CUTOFF,
             reduce: str = "max", keep_class_probs: bool = True) -> VoxelGrid:
    """Accumulate a scene into an occupancy + semantics grid.

    Per voxel center x: occupancy mass V_o(x) = sum_i k_i(x) * opacity_i and
    class mass V_p(x) = sum_i k_i(x) * p_i with k_i the unnormalized Gaussian
    density and p_i the per-Gaussian text-probability vector.  A voxel is
    occupied iff V_o >= tau_occ and the argmax class (ties -> lowest index)
    is not the bank's empty class; its label is that argmax.

    For speed each Gaussian only touches voxels inside its axis-aligned
    cutoff-radius box; `cutoff=None` disables truncation entirely.
    """
    if bank.feature_dim != scene.feature_dim:
        raise InvalidInputError("bank/scene feature dimensions differ")
    nx, ny, nz = grid.dims
    occ = np.zeros((nx, ny, nz))
    cls = np.zeros((nx, ny, nz, bank.num_classes))
    if len(scene):
        probs = text_probs(scene.feature, bank, reduce=reduce)  # (N, C)
        rot, inv_var = _gaussian_precisions(scene)
        axes = [grid.origin[d] + (np.arange(n) + 0.5) * grid.voxel_size
                for d, n in zip(range(3), (nx, ny, nz))]
        cov_diag = np.einsum("nij,nj,nij->ni", rot, scene.scale**2, rot)  # marginal variances
        for i in range(len(scene)):
            if cutoff is None:
                sl = (slice(0, nx), slice(0, ny), slice(0, nz))
            else:
                # conservative box: |x_d - mu_d| <= cutoff * sqrt(Sigma_dd)
                radius = cutoff * np.sqrt(cov_diag[i])
                lo = np.floor((scene.mu[i] - radius - grid.origin) / grid.voxel_size - 0.5)
                hi = np.ceil((scene.mu[i] + radius - grid.origin) / grid.voxel_size - 0.5)
                lo = np.clip(lo.astype(int), 0, grid.dims)
                hi = np.clip(hi.astype(int) + 1, 0, grid.dims)
                if np.any(lo >= hi):
                    continue
                sl = tuple(slice(a, b) for a, b in zip(lo, hi))
            dx = axes[0][sl[0]] - scene.mu[i][0]
            dy = axes[1][sl[1]] - scene.mu[i][1]
            dz = axes[2][sl[2]] - scene.mu[i][2]
            # local coordinates in the Gaussian frame, built separably
            lx = (dx[:, None, None, None] * rot[i][0][None, None, None, :]
                  + dy[None, :, None, None] * rot[i][1][None, None, None, :]
                  + dz[None, None, :, None] * rot[i][2][None, None, None, :])
            q = np.einsum("xyzd,d->xyz", lx * lx, inv_var[i])
            k = np.exp(-0.5 * q)
            if cutoff is not None:
                k[q > cutoff * cutoff] = 0.0
            occ[sl] += k * scene.opacity[i]
            cls[sl] += k[..., None] * probs[i]

    labels = np.argmax(cls, axis=-1).astype(np.int32)  # ties -> lowest index
    occupied = occ >= tau_occ
    if bank.empty_index is not None:
        occupied &= labels != bank.empty_index
    labels[~occupied] = EMPTY_LABEL
    return VoxelGrid(grid.origin, grid.voxel_size, occ, labels,
                     cls if keep_class_probs else None)


def voxelize_oracle(scene: GaussianScene, bank: TextBank, grid: GridSpec,
                    tau_occ: float = TAU_OCC, reduce: str = "max") -> VoxelGrid:
    """Reference accumulation: every Gaussian against every voxel, no cutoff.

    Kept deliberately simple (explicit covariance inverses, dense evaluation)
    as the comparison target for `voxelize`.
    """
    if bank.feature_dim != scene.feature_dim:
        raise InvalidInputError("bank/scene feature dimensions differ")
    centers = grid.centers_flat()
    occ = np.zeros(centers.shape[0])
    cls = np.zeros((centers.shape[0], bank.num_classes))
    for i in range(len(scene)):
        g = scene.gaussian(i)
        prec = np.linalg.inv(g.cov)
        d = centers - g.mu
        k = np.exp(-0.5 * np.einsum("md,de,me->m", d, prec, d))
        occ += k * g.sigma
        cls += k[:, None] * text_probs(g.f, bank, reduce=reduce)
    nx, ny, nz = grid.dims
    occ = occ.reshape(nx, ny, nz)
    cls = cls.reshape(nx, ny, nz, bank.num_classes)
    labels = np.argmax(cls, axis=-1).astype(np.int32)
    occupied = occ >= tau_occ
    if bank.empty_index is not None:
        occupied &= labels != bank.empty_index
    labels[~occupied] = EMPTY_LABEL
    return VoxelGrid(grid.origin, grid.voxel_size, occ, labels, cls)


def query_points(scene: GaussianScene, points: np.ndarray,
                 cutoff: float | None = DEFAULT_CUTOFF):
    """Accumulated opacity and raw-feature vectors at arbitrary ego points.

    Returns (p_occ (M,), p_feat (M, F)).  Opacity weights the occupancy
    accumulation only; the feature accumulation sums kernel * feature
    directly, so a fully transparent Gaussian still contributes its feature
    mass.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidInputError("points must be (M, 3)")
    if len(scene) == 0:
        return np.zeros(points.shape[0]), np.zeros((points.shape[0], scene.feature_dim))
    p_occ = _accumulate_kernel(points, scene, scene.opacity, cutoff)
    p_feat = _accumulate_kernel(points, scene, scene.feature, cutoff)
    return p_occ, p_feat


def retrieval_scores(scene: GaussianScene, bank: TextBank, points: np.ndarray,
                     cutoff: float | None = DEFAULT_CUTOFF):
    """Per-class retrieval scores at query points: dot(P_f, embedding).

    Multi-prompt classes reduce by max over their prompt embeddings.  Returns
    (scores (C, M), p_occ (M,)).  Scores are mass-weighted (unnormalized), so
    empty space scores near 0 for every class.
    """
    p_occ, p_feat = query_points(scene, points, cutoff=cutoff)
    scores = np.empty((bank.num_classes, p_feat.shape[0]))
    for c, entry in enumerate(bank.entries):
        scores[c] = (p_feat @ entry.embeddings.T).max(axis=1)
    return scores, p_occ


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class IouResult:
    per_class: dict[int, float]
    miou: float
    evaluated_classes: list[int] = field(default_factory=list)


def eval_miou(pred: VoxelGrid, gt: VoxelGrid, class_ids=None,
              ignore: np.ndarray | None = None) -> IouResult:
    """Per-class intersection-over-union and its mean.

    IoU_c = TP / (TP + FP + FN) counted over non-ignored voxels.  Classes
    absent from both prediction and ground truth are excluded from the mean;
    a class present on exactly one side scores 0.
    """
    if pred.labels.shape != gt.labels.shape:
        raise InvalidInputError("prediction/ground-truth grids differ in shape")
    keep = np.ones(pred.labels.shape, dtype=bool)
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != pred.labels.shape:
            raise InvalidInputError("ignore mask shape mismatch")
        keep = ~ignore
    p = pred.labels[keep]
    g = gt.labels[keep]
    if class_ids is None:
        ids = np.union1d(np.unique(p), np.unique(g))
        class_ids = [int(c) for c in ids if c != EMPTY_LABEL]
    per_class: dict[int, float] = {}
    evaluated = []
    for c in class_ids:
        tp = int(np.count_nonzero((p == c) & (g == c)))
        fp = int(np.count_nonzero((p == c) & (g != c)))
        fn = int(np.count_nonzero((p != c) & (g == c)))
        if tp + fp + fn == 0:
            continue  # absent on both sides: excluded
        per_class[c] = tp / (tp + fp + fn)
        evaluated.append(c)
    if not per_class:
        raise EmptyInputError("no class present in either grid")
    return IouResult(per_class, float(np.mean(list(per_class.values()))), evaluated)


def average_precision(scores: np.ndarray, gt: np.ndarray) -> float:
    """Area under the precision-recall curve over all ranks.

    Points are ranked by descending score with ties broken by original index.
    Equals the mean of precision-at-k over the positive ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if scores.shape != gt.shape or scores.ndim != 1:
        raise InvalidInputError("scores/gt must be matching 1-D arrays")
    n_pos = int(np.count_nonzero(gt))
    if n_pos == 0:
        raise EmptyInputError("query has zero positives")
    order = np.argsort(-scores, kind="stable")
    hits = gt[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precision_at_hit = tp[hits] / ranks[hits]
    return float(np.sum(precision_at_hit) / n_pos)


@dataclass
class MapResult:
    per_query: dict[int, float]
    map: float


def eval_map(scores: np.ndarray, gt: np.ndarray,
             visible: np.ndarray | None = None) -> MapResult:
    """Mean average precision over queries; optional visibility restriction.

    `scores` is (Q, M), `gt` a boolean (Q, M); `visible` (if given) is a
    boolean (M,) mask selecting the points that count.  Queries with zero
    positives are excluded with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if scores.shape != gt.shape or scores.ndim != 2:
        raise InvalidInputError("scores/gt must be matching (Q, M) arrays")
    if visible is not None:
        visible = np.asarray(visible, dtype=bool)
        if visible.shape != (scores.shape[1],):
            raise InvalidInputError("visibility mask must be (M,)")
        scores = scores[:, visible]
        gt = gt[:, visible]
    per_query: dict[int, float] = {}
    for q in range(scores.shape[0]):
        if not np.any(gt[q]):
            warnings.warn(f"query {q} has zero positives; excluded from mAP")
            continue
        per_query[q] = average_precision(scores[q], gt[q])
    if not per_query:
        raise EmptyInputError("every query had zero positives")
    return MapResult(per_query, float(np.mean(list(per_query.values()))))
