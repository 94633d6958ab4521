"""Per-trajectory feedbacks for the MSE, MOE, MBE and Reg-MBE objectives."""

from dataclasses import dataclass

import numpy as np

from ._numerics import row_entropies_from_sequences, sample_rows, shannon_entropy
from .pomdp_core import empirical_distribution

FEEDBACK_NAMES = ("MSE", "MOE", "MBE", "RegMBE")


@dataclass(frozen=True)
class FeedbackKind:
    name: str
    rho: float = 0.0

    def __post_init__(self):
        if self.name not in FEEDBACK_NAMES:
            raise ValueError(f"unknown feedback {self.name!r}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")

    @property
    def needs_believed(self):
        return self.name in ("MBE", "RegMBE")

    @classmethod
    def parse(cls, text, rho=0.02):
        key = text.strip().lower().replace("_", "-")
        names = {"mse": "MSE", "moe": "MOE", "mbe": "MBE", "reg-mbe": "RegMBE", "regmbe": "RegMBE"}
        if key not in names:
            raise ValueError(f"unknown feedback {text!r}")
        name = names[key]
        return cls(name, rho if name == "RegMBE" else 0.0)

    @property
    def label(self):
        return "reg-mbe" if self.name == "RegMBE" else self.name.lower()


def entropy(d):
    """Shannon entropy (nats) of an ``EmpiricalDist`` or probability vector."""
    probs = getattr(d, "probs", d)
    return float(shannon_entropy(probs))


def sequence_entropy(seq, support_size):
    return entropy(empirical_distribution(seq, support_size))


def belief_regularizer(beliefs):
    """sum_t H(b_t)."""
    return float(shannon_entropy(np.asarray(beliefs)).sum())


def sample_believed_trajectory(beliefs, rng):
    """One believed state per step, s~_t ~ b_t."""
    beliefs = np.asarray(beliefs, dtype=float)
    return sample_rows(beliefs, rng.random(len(beliefs)))


def feedback_value(kind, traj, num_states, num_observations, extra_believed=()):
    """Return ``(feedback, regularizer)`` for one trajectory.

    For MBE kinds ``traj.believed_states`` plus any ``extra_believed``
    sequences are averaged (one believed trajectory by default).
    """
    reg = belief_regularizer(traj.beliefs)
    if kind.name == "MSE":
        return sequence_entropy(traj.states, num_states), reg
    if kind.name == "MOE":
        return sequence_entropy(traj.observations, num_observations), reg
    if traj.believed_states is None:
        raise ValueError(f"{kind.name} feedback needs believed states")
    samples = [traj.believed_states, *extra_believed]
    mbe = float(np.mean([sequence_entropy(s, num_states) for s in samples]))
    if kind.name == "RegMBE":
        return mbe - kind.rho * reg, reg
    return mbe, reg


def batch_feedbacks(kind, batch, num_states, num_observations, extra_believed=None):
    """Vectorised ``feedback_value`` over a ``Batch``.

    Returns ``(feedback, regularizer, true_entropy)`` arrays of length N.
    ``extra_believed`` is an optional (M-1, N, T) array of further samples.
    """
    true_h = row_entropies_from_sequences(batch.states, num_states)
    reg = shannon_entropy(batch.beliefs, axis=2).sum(axis=1)
    if kind.name == "MSE":
        return true_h, reg, true_h
    if kind.name == "MOE":
        return row_entropies_from_sequences(batch.observations, num_observations), reg, true_h
    mbe = row_entropies_from_sequences(batch.believed_states, num_states)
    if extra_believed is not None and len(extra_believed):
        extra = [row_entropies_from_sequences(e, num_states) for e in extra_believed]
        mbe = (mbe + np.sum(extra, axis=0)) / (1 + len(extra))
    if kind.name == "RegMBE":
        return mbe - kind.rho * reg, reg, true_h
    return mbe, reg, true_h
