"""Flat-vector kernels used by the aggregators and metrics.

Every parameter vector and model delta in the simulator is a 1-d float64
numpy array. Coordinate masks are sorted 1-d int64 arrays of positions.
"""
import numpy as np

from .errors import DegenerateVariance, EmptyInput, ShapeMismatch, ZeroNorm

ZERO_NORM_TOL = 1e-12


def as_vector(v):
    return np.asarray(v, dtype=np.float64).reshape(-1)


def cos_sim(a, b):
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Raises ZeroNorm when either vector is (numerically) all zeros.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"length {a.size} != {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM_TOL or nb < ZERO_NORM_TOL:
        raise ZeroNorm("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def largest_k(v, k):
    """Indices of the k entries of largest magnitude, sorted ascending.

    Ties on magnitude go to the lower index.
    """
    v = as_vector(v)
    k = int(k)
    if k < 0 or k > v.size:
        raise ValueError(f"k={k} outside [0, {v.size}]")
    if k == v.size:
        return np.arange(v.size, dtype=np.int64)
    # stable sort on -|v| keeps lower indices first among equal magnitudes
    order = np.argsort(-np.abs(v), kind="stable")
    return np.sort(order[:k]).astype(np.int64)


def mask_apply(v, mask):
    v = as_vector(v)
    out = np.zeros_like(v)
    idx = np.asarray(mask, dtype=np.int64)
    out[idx] = v[idx]
    return out


def coordinate_median(vs):
    if len(vs) == 0:
        raise EmptyInput("median of no vectors")
    stacked = np.stack([as_vector(v) for v in vs])
    return np.median(stacked, axis=0)


def pearson(x, y):
    """Sample Pearson correlation with corrected standard deviations."""
    x = as_vector(x)
    y = as_vector(y)
    n = x.size
    if n != y.size:
        raise ShapeMismatch(f"length {n} != {y.size}")
    if n < 2:
        raise EmptyInput("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx) / (n - 1))
    sy = np.sqrt(np.sum(dy * dy) / (n - 1))
    if sx < ZERO_NORM_TOL or sy < ZERO_NORM_TOL:
        raise DegenerateVariance("zero standard deviation")
    r = np.sum(dx * dy) / ((n - 1) * sx * sy)
    return float(np.clip(r, -1.0, 1.0))
