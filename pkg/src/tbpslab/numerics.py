"""Shared numeric kernel: normalization, similarity, row softmax, row KL, RNG.

Everything downstream (losses, encoders, metrics) goes through these few
functions, so their contracts are deliberately strict: inputs must be finite,
shapes must agree, and every stochastic draw flows through a counter-based
splittable `Rng` so that any run can be replayed bit-for-bit from
(seed, stream) alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_NORM_FLOOR = 1e-12


class ZeroVector(ValueError):
    """Normalization was asked for a vector with (near-)zero norm."""


class DimMismatch(ValueError):
    """Embedding dimensions of two operands disagree."""


class ShapeMismatch(ValueError):
    """Matrix shapes of two operands disagree."""


class NonPositiveTemperature(ValueError):
    """A softmax temperature must be strictly positive."""


def _as_float_array(x, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeMismatch(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Return v / ||v||_2 for a single vector.

    Raises
    ------
    ZeroVector
        If the norm is below 1e-12, where the direction is meaningless.
    """
    vec = _as_float_array(v, "v", 1)
    norm = float(np.linalg.norm(vec))
    if norm < _NORM_FLOOR:
        raise ZeroVector(f"cannot normalize vector with norm {norm:.3e}")
    return vec / norm


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise L2 normalization of an (N x d) matrix."""
    mat = _as_float_array(m, "m", 2)
    norms = np.linalg.norm(mat, axis=1)
    if (norms < _NORM_FLOOR).any():
        bad = int(np.argmin(norms))
        raise ZeroVector(f"row {bad} has norm {norms[bad]:.3e}")
    return mat / norms[:, None]


def l2_normalize_rows_backward(raw, grad_out) -> np.ndarray:
    """Backpropagate through row-wise L2 normalization.

    With z_i = y_i / ||y_i|| the Jacobian-vector product is

        dL/dy_i = (g_i - z_i (z_i . g_i)) / ||y_i||

    where g_i is the incoming gradient on z_i.
    """
    y = _as_float_array(raw, "raw", 2)
    g = _as_float_array(grad_out, "grad_out", 2)
    if y.shape != g.shape:
        raise ShapeMismatch(f"raw {y.shape} vs grad_out {g.shape}")
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    if (norms < _NORM_FLOOR).any():
        raise ZeroVector("cannot backprop through a zero-norm row")
    z = y / norms
    dot = np.sum(z * g, axis=1, keepdims=True)
    return (g - z * dot) / norms


def sim_matrix(a, b) -> np.ndarray:
    """Pairwise dot products: S[i, j] = a[i] . b[j].

    For row-normalized inputs this is the cosine similarity matrix.
    """
    am = _as_float_array(a, "a", 2)
    bm = _as_float_array(b, "b", 2)
    if am.shape[1] != bm.shape[1]:
        raise DimMismatch(f"a has dim {am.shape[1]}, b has dim {bm.shape[1]}")
    return am @ bm.T


def softmax_rows(m, tau: float = 1.0) -> np.ndarray:
    """Row-wise softmax of m / tau, stabilized by row-max subtraction."""
    if not (tau > 0):
        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    mat = _as_float_array(m, "m", 2) / tau
    mat -= mat.max(axis=1, keepdims=True)
    e = np.exp(mat)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(m, tau: float = 1.0) -> np.ndarray:
    """Row-wise log-softmax of m / tau; exp of this matches softmax_rows."""
    if not (tau > 0):
        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    mat = _as_float_array(m, "m", 2) / tau
    mat -= mat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(mat).sum(axis=1, keepdims=True))
    return mat - lse


def kl_rows(p, q, eps: float = 1e-8) -> float:
    """Mean over rows of KL(p_row || q_row + eps).

    q gets the eps floor inside the log so that zero entries of q stay
    finite; p rows are taken as-is (p log p with p = 0 contributes 0).
    """
    pm = _as_float_array(p, "p", 2)
    qm = _as_float_array(q, "q", 2)
    if pm.shape != qm.shape:
        raise ShapeMismatch(f"p {pm.shape} vs q {qm.shape}")
    if (pm < 0).any():
        raise ValueError("p has negative entries")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pm > 0, pm * (np.log(np.maximum(pm, 1e-300)) - np.log(qm + eps)), 0.0)
    return float(terms.sum(axis=1).mean())


def _splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer; a cheap 64-bit avalanche."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """Counter-based splittable random stream.

    A stream is fully determined by the pair (seed, stream): constructing
    the same pair twice yields bit-identical draw sequences, and child
    streams derived via `child` / `named` are statistically independent of
    the parent and of each other. Backed by Philox4x64, which is keyed
    (not sequentially seeded), so derivation never consumes draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, k: int) -> "Rng":
        """Derive an independent substream keyed by integer k."""
        return Rng(self.seed, _splitmix64(self.stream ^ _splitmix64(int(k) & _MASK64)))

    def named(self, name: str) -> "Rng":
        """Derive an independent substream keyed by a string label."""
        h = int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")
        return self.child(h)

    # Draw methods delegate to the wrapped numpy Generator so downstream
    # code never touches global numpy state.

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in the half-open range [low, high)."""
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, size=None, replace: bool = True):
        return self._gen.choice(seq, size=size, replace=replace)
