"""Per-brand unit ranking by symmetric KL divergence, and specialist counts."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptySetError, ShapeError

DEFAULT_BINS = 32
DEFAULT_ALPHA = 1e-6
DEFAULT_TOP_N = 10


@dataclass
class ScoreMatrix:
    """Images x units table of per-unit peak excitation scores.

    ``brands`` holds the manifest brand index of every row; rows keep
    manifest order.
    """
    image_ids: list
    brands: np.ndarray
    values: np.ndarray
    split: str = "test"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.brands = np.asarray(self.brands, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.image_ids) \
                or self.brands.shape != (len(self.image_ids),):
            raise ShapeError(
                f"score matrix of shape {self.values.shape} does not match "
                f"{len(self.image_ids)} ids / {self.brands.shape} brand labels")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise DataError("scores must be finite and non-negative")

    @property
    def num_units(self):
        return self.values.shape[1]

    def brand_set(self):
        return sorted(set(self.brands.tolist()))


@dataclass
class Histogram:
    masses: np.ndarray
    smoothing_alpha: float

    @property
    def bin_count(self):
        return len(self.masses)


@dataclass(frozen=True)
class UnitDiscriminability:
    unit: int
    brand: int
    d_value: float


def bin_index(normalized, bins):
    """Uniform bins on [0, 1]; 1.0 falls in the last bin."""
    return np.minimum((np.asarray(normalized) * bins).astype(np.int64), bins - 1)


def normalized_scores(scores, unit):
    col = scores.values[:, unit]
    top = col.max()
    if top <= 0:
        return np.zeros_like(col)
    return col / top


def _histogram(idx, bins, alpha):
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    p = counts / counts.sum() + alpha
    return Histogram(p / p.sum(), alpha)


def build_histograms(scores, unit, brand, bins=DEFAULT_BINS, alpha=DEFAULT_ALPHA):
    """Smoothed histograms of a unit's normalized scores on the brand's
    images (P+) and on every other image (P-)."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    pos = scores.brands == int(brand)
    if not pos.any():
        raise EmptySetError(f"brand {brand}: no positive images")
    if pos.all():
        raise EmptySetError(f"brand {brand}: no negative images")
    idx = bin_index(normalized_scores(scores, unit), bins)
    return _histogram(idx[pos], bins, alpha), _histogram(idx[~pos], bins, alpha)


def symmetric_kl(p, q):
    """KL(P||Q) + KL(Q||P), natural log."""
    p = p.masses if isinstance(p, Histogram) else np.asarray(p, dtype=np.float64)
    q = q.masses if isinstance(q, Histogram) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"histogram bin counts differ: {p.shape[0]} vs {q.shape[0]}")
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("symmetric_kl needs strictly positive masses")
    # (p - q) * ln(p / q) summed is the two KL terms combined
    return float(np.sum((p - q) * np.log(p / q)))


def unit_d_values(scores, brand, bins=DEFAULT_BINS, alpha=DEFAULT_ALPHA):
    return np.array([symmetric_kl(*build_histograms(scores, k, brand, bins, alpha))
                     for k in range(scores.num_units)])


def rank_units(scores, brand, bins=DEFAULT_BINS, alpha=DEFAULT_ALPHA):
    """All units for ``brand``, most discriminative first (ties: lower unit)."""
    brand = int(brand)
    if brand not in scores.brand_set():
        raise DataError(f"unknown brand {brand}")
    d = unit_d_values(scores, brand, bins, alpha)
    order = sorted(range(len(d)), key=lambda k: (-d[k], k))
    return [UnitDiscriminability(k, brand, float(d[k])) for k in order]


def rank_all(scores, brands=None, bins=DEFAULT_BINS, alpha=DEFAULT_ALPHA):
    brands = scores.brand_set() if brands is None else [int(b) for b in brands]
    return {b: rank_units(scores, b, bins, alpha) for b in brands}


def specialist_index(scores, brands=None, top_n=DEFAULT_TOP_N, bins=DEFAULT_BINS,
                     alpha=DEFAULT_ALPHA, rankings=None):
    """Number of brands whose top-``top_n`` units include each unit.

    Count 1 marks a specialist; counts near the number of brands mark
    generalists.
    """
    rankings = rankings or rank_all(scores, brands, bins, alpha)
    counts = {k: 0 for k in range(scores.num_units)}
    for ranked in rankings.values():
        for entry in ranked[:top_n]:
            counts[entry.unit] += 1
    return counts


def top_examples(scores, unit, m):
    """Ids of the ``m`` images with the highest raw score on ``unit``
    (ties keep manifest order)."""
    if m > len(scores.image_ids) or m < 0:
        raise ValueError(f"asked for {m} examples from {len(scores.image_ids)} images")
    order = np.argsort(-scores.values[:, unit], kind="stable")[:m]
    return [scores.image_ids[i] for i in order]
