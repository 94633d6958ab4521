"""Small numeric helpers used by several modules."""

from functools import lru_cache
import math

import numpy as np


def shannon_entropy(p, axis=-1):
    """Entropy in nats with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=axis)


@lru_cache(maxsize=None)
def _entropy_of_sorted_counts(counts):
    n = sum(counts)
    return -math.fsum(c / n * math.log(c / n) for c in counts)


def entropy_from_counts(counts):
    """Entropy of the empirical distribution given by visit counts.

    Counts are canonicalised (sorted, zeros dropped) so that permuted count
    vectors map to bit-identical floats.
    """
    key = tuple(sorted(int(c) for c in counts if c))
    if not key:
        return 0.0
    return _entropy_of_sorted_counts(key)


def row_entropies_from_sequences(seqs, support_size):
    """Entropy of d(seq) for every row of an integer array ``seqs`` (N, T)."""
    seqs = np.asarray(seqs, dtype=np.int64)
    n, length = seqs.shape
    flat = (np.arange(n)[:, None] * support_size + seqs).ravel()
    counts = np.bincount(flat, minlength=n * support_size).reshape(n, support_size)
    return shannon_entropy(counts / length, axis=1)


def sample_rows(probs, u):
    """Inverse-CDF draw of one index per row of ``probs`` using uniforms ``u``.

    Zero-probability entries are never selected.
    """
    probs = np.atleast_2d(probs)
    cum = np.cumsum(probs, axis=1)
    cum = cum / cum[:, -1:]
    return (cum <= np.asarray(u, dtype=float).reshape(-1, 1)).sum(axis=1)


def sample_index(p, u):
    return int(sample_rows(np.asarray(p, dtype=float)[None, :], [u])[0])

