"""Bayes belief filtering, the noisy belief oracle, and belief-set enumeration."""

from dataclasses import dataclass
import itertools

import numpy as np

from ._numerics import shannon_entropy
from .errors import BeliefSetSizeError, ImpossibleObservationError

BELIEF_TOL = 1e-10
DEFAULT_DEDUP_TOL = 1e-9


def uniform_belief(num_states):
    return np.full(num_states, 1.0 / num_states)


def check_belief(b, tol=BELIEF_TOL):
    """Raise ``ValueError`` unless ``b`` is a probability vector."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or not np.all(np.isfinite(b)):
        raise ValueError("belief must be a finite 1-d vector")
    if b.min() < -tol or b.max() > 1 + tol:
        raise ValueError(f"belief entries outside [0, 1]: min={b.min()}, max={b.max()}")
    if abs(b.sum() - 1.0) > tol:
        raise ValueError(f"belief sums to {b.sum()!r}")
    return b


def predict(model, prior, action):
    """Predicted state distribution sum_s' P(s|s',a) prior(s')."""
    return np.asarray(prior, dtype=float) @ model.transition[:, action, :]


def _condition(model, predicted, observation):
    numer = predicted * model.emission[:, observation]
    z = numer.sum()
    if not z > 0:
        raise ImpossibleObservationError(
            f"observation {observation} has zero probability under the predicted belief"
        )
    return numer / z


def measurement_update(model, prior, observation):
    """b(s) proportional to O(o|s) prior(s); used for the first step."""
    return _condition(model, np.asarray(prior, dtype=float), observation)


def bayes_update(model, prior, action, observation):
    """The belief update operator T^{ao} applied to ``prior``."""
    return _condition(model, predict(model, prior, action), observation)


def initial_belief(model, observation):
    """b_1: the uniform prior conditioned on the first observation."""
    return measurement_update(model, uniform_belief(model.num_states), observation)


@dataclass
class OracleStats:
    """Counts of clamp-to-zero fallbacks in the noisy oracle."""

    fallbacks: int = 0


def perturb_belief(exact, gaussian, noise_var):
    """Add scaled standard-normal draws, clamp to [0, 1], renormalise.

    Returns ``(belief, fell_back)``; when every entry clamps to zero the
    exact belief is returned unchanged.
    """
    if noise_var == 0:
        return exact.copy(), False
    noisy = np.clip(exact + np.sqrt(noise_var) * gaussian, 0.0, 1.0)
    z = noisy.sum()
    if not z > 0:
        return exact.copy(), True
    return noisy / z, False


def noisy_oracle_update(model, prior, action, observation, noise_var, rng, stats=None):
    """Exact update plus i.i.d. N(0, noise_var) entry noise, clamped and renormalised."""
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    exact = bayes_update(model, prior, action, observation)
    if noise_var == 0:
        return exact
    out, fell_back = perturb_belief(exact, rng.standard_normal(model.num_states), noise_var)
    if fell_back and stats is not None:
        stats.fallbacks += 1
    return out


def belief_entropy(b):
    return float(shannon_entropy(b))


class BeliefSet:
    """Deduplicated collection of beliefs with dense integer ids.

    Two beliefs closer than ``dedup_tol`` in L1 are considered the same.
    ``depths[i]`` is the smallest step index at which belief ``i`` was reached.
    """

    _GRID = 1e-8
    _MAX_AMBIGUOUS = 6

    def __init__(self, num_states, dedup_tol=DEFAULT_DEDUP_TOL):
        self.num_states = num_states
        self.dedup_tol = dedup_tol
        self._data = np.empty((16, num_states))
        self._count = 0
        self.depths = []
        self.index = {}

    def __len__(self):
        return self._count

    @property
    def beliefs(self):
        return self._data[: self._count]

    def __getitem__(self, i):
        return self.beliefs[i]

    def _keys(self, b):
        scaled = b / self._GRID
        cell = np.floor(scaled).astype(np.int64)
        frac = scaled - cell
        width = self.dedup_tol / self._GRID
        options = []
        ambiguous = 0
        for c, f in zip(cell, frac):
            opts = [int(c)]
            if f < width and c > 0:
                opts.append(int(c) - 1)
                ambiguous += 1
            elif 1 - f < width:
                opts.append(int(c) + 1)
                ambiguous += 1
            options.append(opts)
        if ambiguous > self._MAX_AMBIGUOUS:
            return None
        return [tuple(k) for k in itertools.product(*options)]

    def _primary_key(self, b):
        return tuple(np.floor(b / self._GRID).astype(np.int64).tolist())

    def find(self, b):
        """Id of the stored belief within ``dedup_tol`` of ``b``, else ``None``."""
        b = np.asarray(b, dtype=float)
        keys = self._keys(b)
        if keys is None:
            if not self._count:
                return None
            dist = np.abs(self.beliefs - b).sum(axis=1)
            i = int(np.argmin(dist))
            return i if dist[i] <= self.dedup_tol else None
        for key in keys:
            ids = self.index.get(key)
            if not ids:
                continue
            close = np.flatnonzero(np.abs(self._data[ids] - b).sum(axis=1) <= self.dedup_tol)
            if close.size:
                return ids[close[0]]
        return None

    def add(self, b, depth=1):
        """Insert ``b`` unless present; return ``(id, inserted)``."""
        b = np.asarray(b, dtype=float)
        found = self.find(b)
        if found is not None:
            return found, False
        if self._count == len(self._data):
            self._data = np.concatenate([self._data, np.empty_like(self._data)])
        i = self._count
        self._data[i] = b
        self._count += 1
        self.depths.append(depth)
        self.index.setdefault(self._primary_key(b), []).append(i)
        return i, True

    def nearest(self, b):
        """Id of the stored belief closest to ``b`` in L1 (lowest id on ties)."""
        found = self.find(b)
        if found is not None:
            return found
        dist = np.abs(self.beliefs - np.asarray(b, dtype=float)).sum(axis=1)
        return int(np.argmin(dist))

    def nearest_many(self, bs, dense_limit=256, chunk_elems=4 * 10**6):
        """``nearest`` for each row of ``bs``.

        Small sets use a dense distance matrix; rows within ``dedup_tol`` of a
        stored belief still go through ``find`` so both paths agree.
        """
        bs = np.asarray(bs, dtype=float)
        if self._count > dense_limit or not self._count:
            return np.array([self.nearest(b) for b in bs], dtype=np.int64)
        out = np.empty(len(bs), dtype=np.int64)
        step = max(1, chunk_elems // (self._count * self.num_states))
        for lo in range(0, len(bs), step):
            block = bs[lo : lo + step]
            dist = np.abs(block[:, None, :] - self.beliefs[None, :, :]).sum(axis=2)
            idx = dist.argmin(axis=1)
            out[lo : lo + step] = idx
            for r in np.flatnonzero(dist[np.arange(len(block)), idx] <= self.dedup_tol):
                out[lo + r] = self.nearest(block[r])
        return out

    def to_text(self):
        lines = [f"{self.num_states} {self._count}"]
        lines += [" ".join(repr(float(x)) for x in b) for b in self.beliefs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, dedup_tol=DEFAULT_DEDUP_TOL):
        rows = [line.split() for line in text.strip().splitlines()]
        num_states, count = int(rows[0][0]), int(rows[0][1])
        out = cls(num_states, dedup_tol)
        for row in rows[1 : count + 1]:
            out.add(np.array([float(x) for x in row]))
        return out


def _expand(model, bset, start, horizon, max_size):
    """Depth-first closure under T^{ao} from belief ``start`` (already stored).

    A belief first met deep in the tree and later reached at a shallower
    depth is expanded again, so the result is closed to ``horizon``.
    """
    stack = [(start, bset.depths[start])]
    while stack:
        i, t = stack.pop()
        if t >= horizon:
            continue
        b = bset[i].copy()
        children = []
        for o in range(model.num_observations):
            for a in range(model.num_actions):
                try:
                    child = bayes_update(model, b, a, o)
                except ImpossibleObservationError:
                    continue
                j, inserted = bset.add(child, depth=t + 1)
                if inserted:
                    if len(bset) > max_size:
                        raise BeliefSetSizeError(len(bset), max_size)
                    children.append(j)
                elif bset.depths[j] > t + 1:
                    bset.depths[j] = t + 1
                    children.append(j)
        stack.extend((j, t + 1) for j in reversed(children))
    return bset


def enumerate_belief_set(model, b0, horizon, dedup_tol=DEFAULT_DEDUP_TOL, max_size=10**6):
    """All beliefs reachable from ``b0`` within ``horizon`` steps (``b0`` at step 1)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    bset = BeliefSet(model.num_states, dedup_tol)
    start, _ = bset.add(check_belief(b0), depth=1)
    return _expand(model, bset, start, horizon, max_size)


def reachable_belief_set(model, horizon=None, dedup_tol=DEFAULT_DEDUP_TOL, max_size=10**6):
    """Belief set seeded with every possible first-step belief b_1."""
    horizon = model.horizon if horizon is None else horizon
    bset = BeliefSet(model.num_states, dedup_tol)
    prior = uniform_belief(model.num_states)
    roots = []
    for o in range(model.num_observations):
        try:
            b1 = measurement_update(model, prior, o)
        except ImpossibleObservationError:
            continue
        i, inserted = bset.add(b1, depth=1)
        if inserted:
            roots.append(i)
    for i in roots:
        _expand(model, bset, i, horizon, max_size)
    return bset
