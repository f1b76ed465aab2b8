"""Classical fingerprinting baseline: weighted k-nearest neighbors.

Queries are matched against a stored dictionary of (location, channel)
pairs under the normalized squared Frobenius distance; the estimate is the
inverse-distance-weighted centroid of the k best entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import _entries
from .dataio import Dataset
from .errors import EmptyDatabaseError

EXACT_MATCH_TOL = 1e-12
"""Normalized squared distance below which a fingerprint counts as exact."""


@dataclass
class FingerprintDB:
    """Location dictionary plus per-location channel matrices."""

    locations: np.ndarray
    channels: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.channels = np.asarray(self.channels, dtype=complex)
        if len(self.channels) != len(self.locations):
            raise ValueError("locations and channels must pair up")
        self._flat = self.channels.reshape(len(self.channels), -1)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "FingerprintDB":
        return cls(ds.locations, ds.channels)

    def __len__(self):
        return len(self.locations)

    @property
    def scalar_count(self) -> int:
        """Stored real scalars: 2|G| coordinates + 2 N_a N_s |G| channel parts."""
        n = len(self)
        n_a, n_s = self.channels.shape[1], self.channels.shape[2]
        return 2 * n + 2 * n_a * n_s * n


def _normalized_sq_distances(H, db: FingerprintDB) -> np.ndarray:
    h = _entries(H).reshape(-1)
    h_power = float(np.sum(np.abs(h) ** 2))
    diff = db._flat - h[None, :]
    return np.sum(np.abs(diff) ** 2, axis=1) / h_power


def knn_localize(H, db: FingerprintDB, k: int) -> np.ndarray:
    """Weighted centroid of the k nearest fingerprints.

    Weights are inverse normalized squared Frobenius errors, normalized to
    sum to one.  An (effectively) exact match short-circuits to the stored
    location, avoiding the undefined infinite weight.
    """
    if len(db) == 0:
        raise EmptyDatabaseError("empty fingerprint database")
    if not 1 <= k <= len(db):
        raise ValueError(f"k must be in [1, {len(db)}]")
    d = _normalized_sq_distances(H, db)
    exact = np.flatnonzero(d < EXACT_MATCH_TOL)
    if len(exact):
        return db.locations[exact[0]].copy()
    order = np.lexsort((np.arange(len(d)), d))[:k]
    w = 1.0 / d[order]
    w = w / w.sum()
    return (w[:, None] * db.locations[order]).sum(axis=0)


def fingerprint_memory_bits(db: FingerprintDB, float_bits: int) -> int:
    """Total storage for the dictionary at the given float width."""
    if float_bits not in (32, 64):
        raise ValueError("float_bits must be 32 or 64")
    return db.scalar_count * float_bits


def knn_error_scaling(db_sizes, db: FingerprintDB, eval_set: Dataset, k: int = 1,
                      seed: int = 0) -> list[tuple[int, float]]:
    """Median kNN error for nested random subsamples of the database.

    Exposes the dictionary-resolution law: with uniformly scattered
    fingerprints the error scales like (area / |G|)^(1/2).
    """
    sizes = list(db_sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("db_sizes must be strictly increasing")
    if sizes[-1] > len(db):
        raise ValueError("largest size exceeds the database")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(db))
    out = []
    for size in sizes:
        sub = FingerprintDB(db.locations[perm[:size]], db.channels[perm[:size]])
        errs = [
            float(np.linalg.norm(knn_localize(eval_set.channels[i], sub, k) - eval_set.locations[i]))
            for i in range(len(eval_set))
        ]
        out.append((size, float(np.median(errs))))
    return out
