"""Reg-PG: REINFORCE-style policy gradient on entropy feedbacks."""

from dataclasses import dataclass, field
import csv
import io

import numpy as np

from .feedback import FeedbackKind, batch_feedbacks
from .errors import NonFiniteGradientError
from .policy import floor_rows, init_policy, project_rows_to_simplex, batch_scores
from .pomdp_core import sample_batch, trajectory_rng
from ._numerics import sample_rows

CURVE_HEADER = ("iter", "run_seed", "true_entropy", "proxy_value", "regularizer")


@dataclass
class TrainConfig:
    learning_rate: float = 0.3
    batch_size: int = 10
    episodes: int = 1000
    feedback: FeedbackKind = field(default_factory=lambda: FeedbackKind("MSE"))
    policy_class: str = "BA"
    belief_noise: float = 0.0
    eval_every: int = 1
    master_seed: int = 0
    baseline: bool = True
    believed_samples: int = 1
    simplex_rows: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.episodes < 1 or self.eval_every < 1:
            raise ValueError("batch_size, episodes and eval_every must be >= 1")
        if self.belief_noise < 0:
            raise ValueError("belief noise variance must be nonnegative")
        if self.believed_samples < 1:
            raise ValueError("believed_samples must be >= 1")
        if self.believed_samples > 1 and self.policy_class == "S":
            raise ValueError("class S already conditions on its single believed trajectory")


@dataclass
class CurvePoint:
    iteration: int
    run_seed: int
    true_entropy: float
    proxy_value: float
    regularizer: float


@dataclass
class LearningCurve:
    points: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(p, name) for p in self.points])

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for p in self.points:
            writer.writerow([p.iteration, p.run_seed, repr(p.true_entropy), repr(p.proxy_value), repr(p.regularizer)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = csv.DictReader(io.StringIO(text))
        return cls([
            CurvePoint(int(r["iter"]), int(r["run_seed"]), float(r["true_entropy"]),
                       float(r["proxy_value"]), float(r["regularizer"]))
            for r in rows
        ])


def gradient_step(theta, scores, feedbacks, learning_rate, baseline=False, simplex_rows=True):
    """theta + (alpha/N) sum_n score_n * feedback_n, projected back to the simplex.

    ``scores`` is (N, I, A) with each entry sum_t grad log pi(a_t|i_t);
    ``feedbacks`` already includes any -rho * sum_t H(b_t) term.
    """
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(feedbacks, dtype=float)
    if baseline:
        weights = weights - weights.mean()
    direction = np.tensordot(weights, scores, axes=1) / len(weights)
    if not np.all(np.isfinite(direction)):
        bad = np.argwhere(~np.isfinite(direction))[0]
        raise NonFiniteGradientError(f"non-finite gradient at theta entry {tuple(bad)}")
    if learning_rate == 0:
        return np.array(theta, dtype=float)
    updated = theta + learning_rate * direction
    if simplex_rows:
        updated = floor_rows(project_rows_to_simplex(updated))
    return updated


def _extra_believed(batch, config, iteration):
    m = config.believed_samples - 1
    if m == 0:
        return None
    n, horizon, _ = batch.beliefs.shape
    out = np.empty((m, n, horizon), dtype=np.int64)
    for i in range(n):
        # stream index offset past the batch keeps these draws independent of the rollouts
        rng = trajectory_rng(config.master_seed, iteration, n + i)
        u = rng.random((m, horizon))
        for j in range(m):
            out[j, i] = sample_rows(batch.beliefs[i], u[j])
    return out


def train(model, config, belief_set=None, initial=None):
    """Run K iterations of Reg-PG; return the last-iterate policy and its learning curve.

    The logged true entropy is the batch mean of H(d(tau_S)) under the
    policy that generated the batch (before that iteration's update).
    """
    params = initial or init_policy(config.policy_class, model, belief_set, config.simplex_rows)
    curve = LearningCurve()
    last = config.episodes - 1
    for k in range(config.episodes):
        batch = sample_batch(model, params, config.master_seed, k, config.batch_size, config.belief_noise)
        fb, reg, true_h = batch_feedbacks(
            config.feedback, batch, model.num_states, model.num_observations,
            _extra_believed(batch, config, k),
        )
        if k % config.eval_every == 0 or k == last:
            curve.points.append(CurvePoint(k, config.master_seed, float(true_h.mean()),
                                           float(fb.mean()), float(reg.mean())))
        scores = batch_scores(params, batch.infos, batch.actions)
        theta = gradient_step(params.theta, scores, fb, config.learning_rate,
                              config.baseline, config.simplex_rows)
        params = params.with_theta(theta)
    return params, curve
