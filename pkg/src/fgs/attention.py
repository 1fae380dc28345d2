"""Prefix-preserving masked self-attention over Gaussian queries.

When a scene grows, queries of previously settled layers must not change:
the attention mask blocks every (old row, new column) pair, so old queries
attend only to old ones while new queries see everything.  Positions enter
through a sinusoidal 3-axis encoding added to Q and K inputs only - values
stay position-free, which keeps the prefix outputs bit-for-bit reusable.

The "minus infinity" mask entries are realized as the most negative finite
float64; after the row-max shift they underflow to exp(.) == 0 exactly, so
masked columns carry zero weight without producing NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

HEADS = 8
MODEL_DIM = 256
LAMBDA_MAX = 100.0  # meters; longest wavelength of the positional ladder
NEG_MASK = -np.finfo(np.float64).max


@dataclass
class AsaMask:
    """Dense additive attention mask blocking old-row/new-column pairs."""

    x_prev: int
    x_total: int

    def __post_init__(self):
        if not 0 <= self.x_prev <= self.x_total:
            raise InvalidInputError("need 0 <= x_prev <= x_total")

    @property
    def matrix(self) -> np.ndarray:
        """(x_total, x_total) additive mask: NEG_MASK where blocked, else 0."""
        m = np.zeros((self.x_total, self.x_total))
        m[:self.x_prev, self.x_prev:] = NEG_MASK
        return m

    @property
    def blocked_count(self) -> int:
        return self.x_prev * (self.x_total - self.x_prev)


def build_mask(x_prev: int, x_total: int) -> AsaMask:
    """Mask for `x_total` queries of which the first `x_prev` are settled.

    Entry (i, j) is blocked iff i < x_prev and j >= x_prev: settled queries
    never attend to later ones; new queries attend everywhere.
    """
    return AsaMask(int(x_prev), int(x_total))


def positional_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of 3-D positions on a geometric frequency ladder.

    `dim` must be divisible by 6: each axis contributes dim/6 interleaved
    (sin, cos) pairs at frequencies 2*pi * 2^k / LAMBDA_MAX, k = 0.. .  The
    origin therefore encodes to the alternating (0, 1, 0, 1, ...) pattern.
    Accepts one (3,) position or an (N, 3) batch.
    """
    if dim <= 0 or dim % 6:
        raise InvalidInputError("encoding dim must be a positive multiple of 6")
    p = np.asarray(positions, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.ndim != 2 or p.shape[1] != 3:
        raise InvalidInputError("positions must be (3,) or (N, 3)")
    m = dim // 6
    freqs = 2.0 * np.pi * (2.0 ** np.arange(m)) / LAMBDA_MAX
    phase = p[:, :, None] * freqs[None, None, :]        # (N, 3, m)
    block = np.empty((p.shape[0], 3, 2 * m))
    block[:, :, 0::2] = np.sin(phase)
    block[:, :, 1::2] = np.cos(phase)
    out = block.reshape(p.shape[0], dim)
    return out[0] if single else out


def _padded_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Encoding stretched to any width: encode at the largest multiple of 6
    not above `dim` and zero-pad the tail (model dims are rarely %6)."""
    base = (dim // 6) * 6
    n = np.atleast_2d(positions).shape[0]
    out = np.zeros((n, dim))
    if base:
        out[:, :base] = positional_encoding(positions, base)
    return out


@dataclass
class AttentionWeights:
    """Projection matrices of one multi-head attention block."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    heads: int = HEADS

    def __post_init__(self):
        d = self.dim
        for name in ("wq", "wk", "wv", "wo"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.shape != (d, d):
                raise InvalidInputError(f"{name} must be square ({d}, {d})")
            setattr(self, name, w)
        for name in ("bq", "bk", "bv", "bo"):
            b = np.asarray(getattr(self, name), dtype=np.float64)
            if b.shape != (d,):
                raise InvalidInputError(f"{name} must be ({d},)")
            setattr(self, name, b)
        if self.heads <= 0 or d % self.heads:
            raise InvalidInputError("model dim must divide evenly into heads")

    @property
    def dim(self) -> int:
        return np.asarray(self.wq).shape[0]

    @classmethod
    def seeded(cls, dim: int = MODEL_DIM, heads: int = HEADS, seed: int = 0):
        rng = np.random.default_rng(seed)
        mk = lambda: rng.standard_normal((dim, dim)) / np.sqrt(dim)
        z = np.zeros(dim)
        return cls(mk(), mk(), mk(), mk(), z, z, z, z, heads=heads)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {n: getattr(self, n) for n in
               ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
        out["meta.heads"] = np.array(float(self.heads))
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray]) -> "AttentionWeights":
        try:
            return cls(t["wq"], t["wk"], t["wv"], t["wo"],
                       t["bq"], t["bk"], t["bv"], t["bo"],
                       heads=int(t.get("meta.heads", HEADS)))
        except KeyError as e:
            raise InvalidInputError(f"attention sidecar missing tensor {e}") from e


def asa_forward(queries: np.ndarray, positions: np.ndarray,
                weights: AttentionWeights, mask: AsaMask) -> np.ndarray:
    """Masked multi-head self-attention with position-aware Q/K only.

    Q and K project (queries + positional encoding); V projects the bare
    queries.  Per head: softmax(Q K^T / sqrt(D/h) + M) V, heads concatenated
    and output-projected.  Rows below mask.x_prev provably equal the same
    computation run on the prefix alone (masked columns get exactly zero
    weight), up to float summation order.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2:
        raise InvalidInputError("queries must be (n, D)")
    n, d = q.shape
    if d != weights.dim:
        raise InvalidInputError(f"queries dim {d} != weights dim {weights.dim}")
    if mask.x_total != n:
        raise InvalidInputError("mask size does not match query count")
    p = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    if p.shape != (n, 3):
        raise InvalidInputError("positions must be (n, 3)")
    if n == 0:
        return np.zeros((0, d))

    pe = _padded_encoding(p, d)
    qk_in = q + pe
    big_q = qk_in @ weights.wq.T + weights.bq
    big_k = qk_in @ weights.wk.T + weights.bk
    big_v = q @ weights.wv.T + weights.bv

    h = weights.heads
    dh = d // h
    scale = 1.0 / np.sqrt(dh)
    m = mask.matrix
    out = np.empty((n, d))
    with np.errstate(under="ignore"):
        for i in range(h):
            sl = slice(i * dh, (i + 1) * dh)
            logits = (big_q[:, sl] @ big_k[:, sl].T) * scale + m
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            attn = e / e.sum(axis=1, keepdims=True)
            out[:, sl] = attn @ big_v[:, sl]
    return out @ weights.wo.T + weights.bo
