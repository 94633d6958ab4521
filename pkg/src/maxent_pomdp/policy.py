"""Deployable policy classes: O, BA, S (believed state) and B (belief-set index).

Rows of ``theta`` are action distributions under the default direct
parametrization. With ``simplex_rows=False`` rows are softmax logits.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import DimensionMismatchError, InfoStateMismatchError, ZeroProbabilityActionError

POLICY_CLASSES = ("O", "BA", "S", "B")
INFO_KIND = {"O": "obs", "BA": "belief", "S": "believed", "B": "belief_index"}
MIN_ACTION_PROB = 1e-8


@dataclass(frozen=True)
class InfoState:
    """What the agent conditions on at one step."""

    kind: str  # obs | belief | believed | belief_index
    value: object


@dataclass
class PolicyParams:
    class_tag: str
    theta: np.ndarray
    simplex_rows: bool = True
    belief_set: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.class_tag not in POLICY_CLASSES:
            raise ValueError(f"unknown policy class {self.class_tag!r}")
        self.theta = np.array(self.theta, dtype=float)
        if self.theta.ndim != 2:
            raise DimensionMismatchError("theta must be a matrix [I][A]")
        if self.class_tag == "B" and self.belief_set is None:
            raise ValueError("class B needs a belief set")

    @property
    def num_actions(self):
        return self.theta.shape[1]

    @property
    def num_info(self):
        return self.theta.shape[0]

    def with_theta(self, theta):
        return PolicyParams(self.class_tag, theta, self.simplex_rows, self.belief_set)

    def validate(self, tol=1e-10):
        if self.simplex_rows:
            if self.theta.min() < -tol:
                raise ValueError("direct parametrization needs nonnegative rows")
            bad = np.flatnonzero(np.abs(self.theta.sum(axis=1) - 1) > tol)
            if bad.size:
                raise ValueError(f"theta row {bad[0]} is not on the simplex")
        return self


def info_size(class_tag, model, belief_set=None):
    if class_tag == "O":
        return model.num_observations
    if class_tag in ("BA", "S"):
        return model.num_states
    if class_tag == "B":
        if belief_set is None:
            raise ValueError("class B needs a belief set")
        return len(belief_set)
    raise ValueError(f"unknown policy class {class_tag!r}")


def init_policy(class_tag, model, belief_set=None, simplex_rows=True):
    """Uniform action distribution for every information state."""
    rows = info_size(class_tag, model, belief_set)
    a = model.num_actions
    theta = np.full((rows, a), 1.0 / a) if simplex_rows else np.zeros((rows, a))
    return PolicyParams(class_tag, theta, simplex_rows, belief_set)


def check_compatible(params, model):
    expected = info_size(params.class_tag, model, params.belief_set)
    if params.theta.shape != (expected, model.num_actions):
        raise DimensionMismatchError(
            f"policy {params.class_tag} has theta {params.theta.shape}, "
            f"model needs {(expected, model.num_actions)}"
        )


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def row_probs(params):
    return params.theta if params.simplex_rows else _softmax(params.theta)


def info_row(params, info):
    """Row index for tabular classes; raises on a tag mismatch."""
    want = INFO_KIND[params.class_tag]
    if params.class_tag == "B" and info.kind == "belief":
        return params.belief_set.nearest(info.value)
    if info.kind != want:
        raise InfoStateMismatchError(f"class {params.class_tag} expects {want}, got {info.kind}")
    if want == "belief":
        raise InfoStateMismatchError("BA has no single row")
    return int(info.value)


def action_distribution(params, info):
    rows = row_probs(params)
    if params.class_tag == "BA":
        if info.kind != "belief":
            raise InfoStateMismatchError(f"class BA expects belief, got {info.kind}")
        return np.asarray(info.value, dtype=float) @ rows
    return rows[info_row(params, info)].copy()


def grad_action_prob(params, info, action):
    """Gradient of pi(action|info) with respect to theta."""
    g = np.zeros_like(params.theta)
    rows = row_probs(params)
    if params.class_tag == "BA":
        b = np.asarray(info.value, dtype=float)
        if params.simplex_rows:
            g[:, action] = b
        else:
            p = rows[:, action]
            g[:] = -(b * p)[:, None] * rows
            g[:, action] += b * p
        return g
    i = info_row(params, info)
    if params.simplex_rows:
        g[i, action] = 1.0
    else:
        g[i] = -rows[i, action] * rows[i]
        g[i, action] += rows[i, action]
    return g


def grad_log_policy(params, info, action):
    """Score function: gradient of log pi(action|info) with respect to theta."""
    prob = action_distribution(params, info)[action]
    if not prob > 0:
        raise ZeroProbabilityActionError(f"action {action} has probability {prob}")
    return grad_action_prob(params, info, action) / prob


def batch_action_probs(params, infos):
    """Action distributions for a batch: beliefs (N, S) for BA, row ids (N,) otherwise."""
    rows = row_probs(params)
    if params.class_tag == "BA":
        return np.asarray(infos) @ rows
    return rows[np.asarray(infos, dtype=np.int64)]


def batch_scores(params, infos, actions):
    """Summed score sum_t grad log pi(a_t|i_t) per trajectory.

    ``infos`` is (N, L, S) beliefs for BA or (N, L) row ids otherwise;
    ``actions`` is (N, L). Returns an array (N, I, A).
    """
    actions = np.asarray(actions, dtype=np.int64)
    n, length = actions.shape
    num_info, num_actions = params.theta.shape
    rows = row_probs(params)
    onehot = np.zeros((n, length, num_actions))
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=2)
    if params.class_tag == "BA":
        b = np.asarray(infos, dtype=float)
        probs = b @ rows  # (N, L, A)
        chosen = np.take_along_axis(probs, actions[..., None], axis=2)[..., 0]
        if np.any(chosen <= 0):
            raise ZeroProbabilityActionError("sampled action with zero probability")
        w = b / chosen[..., None]
        if params.simplex_rows:
            return np.einsum("nls,nla->nsa", w, onehot)
        p_a = np.take_along_axis(
            np.broadcast_to(rows, (n, length) + rows.shape), actions[..., None, None], axis=3
        )[..., 0]  # (N, L, S): p_s(a_t)
        coef = w * p_a
        return np.einsum("nls,nla->nsa", coef, onehot) - np.einsum("nls,sa->nsa", coef, rows)
    idx = np.asarray(infos, dtype=np.int64)
    out = np.zeros((n, num_info, num_actions))
    traj = np.repeat(np.arange(n), length)
    flat_i, flat_a = idx.ravel(), actions.ravel()
    if params.simplex_rows:
        chosen = rows[flat_i, flat_a]
        if np.any(chosen <= 0):
            raise ZeroProbabilityActionError("sampled action with zero probability")
        np.add.at(out, (traj, flat_i, flat_a), 1.0 / chosen)
    else:
        np.add.at(out, (traj, flat_i, flat_a), 1.0)
        np.add.at(out, (traj, flat_i), -rows[flat_i])
    return out


def project_rows_to_simplex(theta):
    """Euclidean projection of every row onto the probability simplex."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[1]
    u = -np.sort(-theta, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(theta.shape[0]), rho] / (rho + 1)
    out = np.maximum(theta - tau[:, None], 0.0)
    on_simplex = (theta.min(axis=1) >= 0) & (np.abs(theta.sum(axis=1) - 1.0) <= 1e-12)
    out[on_simplex] = theta[on_simplex]
    return out


def floor_rows(theta, eps=MIN_ACTION_PROB):
    """Clip entries to >= eps and renormalise so every action keeps mass."""
    clipped = np.maximum(theta, eps)
    return clipped / clipped.sum(axis=1, keepdims=True)


def policy_tv_distance(p1, p2):
    """Largest total-variation distance between the two policies' action distributions.

    For BA the maximum over the belief simplex sits at a vertex, i.e. a row.
    """
    r1, r2 = row_probs(p1), row_probs(p2)
    if r1.shape != r2.shape:
        raise DimensionMismatchError("policies have different shapes")
    return float(0.5 * np.abs(r1 - r2).sum(axis=1).max())


def policy_to_dict(params):
    return {
        "class_tag": params.class_tag,
        "num_info": int(params.theta.shape[0]),
        "num_actions": int(params.theta.shape[1]),
        "simplex_rows": bool(params.simplex_rows),
        "theta": params.theta.tolist(),
    }


def policy_from_dict(data, belief_set=None):
    theta = np.array(data["theta"], dtype=float)
    if theta.shape != (data["num_info"], data["num_actions"]):
        raise DimensionMismatchError("theta does not match the declared dimensions")
    return PolicyParams(data["class_tag"], theta, data.get("simplex_rows", True), belief_set)


def save_policy(params, path):
    with open(path, "w") as fh:
        json.dump(policy_to_dict(params), fh, indent=1)


def load_policy(path, belief_set=None):
    with open(path) as fh:
        return policy_from_dict(json.load(fh), belief_set)
