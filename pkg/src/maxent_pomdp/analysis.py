"""Exact enumeration oracles: objectives, gradients, proxy gaps, Lipschitz checks.

Two independent routes are provided. ``enumerate_trajectories`` walks every
joint trajectory and weights it with the product formula for p^pi(tau); it is
simple and exponential. The exact objective/gradient path is a forward
dynamic program that merges histories sharing (true state, belief, policy
input) and carries the distribution over visit-count vectors of the tracked
sequence, with the gradient propagated alongside in forward mode.
"""

from dataclasses import dataclass, field
import csv
import io
import itertools
import math

import numpy as np

from . import belief as bel
from ._numerics import entropy_from_counts, shannon_entropy
from .errors import BeliefSetClosureError, EnumerationCapError, ImpossibleObservationError
from .policy import InfoState, action_distribution, grad_action_prob, grad_log_policy, policy_tv_distance
from .pomdp_core import Trajectory

DEFAULT_CAP = 10**7
DEGENERATE_TOL = 1e-12
_BELIEF_KEY_DECIMALS = 12


def joint_outcome_count(model):
    """Number of joint (tau_S, tau_A, tau_O) outcomes."""
    t = model.horizon
    return model.num_states**t * model.num_observations**t * model.num_actions ** (t - 1)


def _check_cap(model, cap):
    n = joint_outcome_count(model)
    if n > cap:
        raise EnumerationCapError(f"{n} joint outcomes exceed the enumeration cap {cap}")


# --------------------------------------------------------------------------
# brute-force route


def _info_for(params, o, b, s_believed):
    tag = params.class_tag
    if tag == "O":
        return InfoState("obs", o)
    if tag == "BA":
        return InfoState("belief", b)
    if tag == "S":
        return InfoState("believed", s_believed)
    return InfoState("belief_index", params.belief_set.nearest(b))


def enumerate_trajectories(model, params, with_believed=False, cap=DEFAULT_CAP):
    """Yield ``(probability, Trajectory)`` for every joint outcome with nonzero weight.

    Believed states are enumerated (weight prod_t b_t(s~_t)) when the policy
    conditions on them or when ``with_believed`` is set.
    """
    _check_cap(model, cap)
    horizon = model.horizon
    believed = with_believed or params.class_tag == "S"
    prior = bel.uniform_belief(model.num_states)

    def rec(t, prob, states, obs, actions, beliefs, believed_seq):
        s, b = states[-1], beliefs[-1]
        choices = range(model.num_states) if believed else [None]
        for sb in choices:
            w = prob * (b[sb] if believed else 1.0)
            if w == 0:
                continue
            seq = believed_seq + [sb] if believed else believed_seq
            if t == horizon:
                yield w, Trajectory(np.array(states), np.array(actions), np.array(obs),
                                    np.array(beliefs), np.array(seq) if believed else None)
                continue
            pi = action_distribution(params, _info_for(params, obs[-1], b, sb))
            for a in range(model.num_actions):
                if pi[a] == 0:
                    continue
                for s2 in range(model.num_states):
                    p_s = model.transition[s, a, s2]
                    if p_s == 0:
                        continue
                    for o2 in range(model.num_observations):
                        p_o = model.emission[s2, o2]
                        if p_o == 0:
                            continue
                        b2 = bel.bayes_update(model, b, a, o2)
                        yield from rec(t + 1, w * pi[a] * p_s * p_o, states + [s2], obs + [o2],
                                       actions + [a], beliefs + [b2], seq)

    for s1 in range(model.num_states):
        for o1 in range(model.num_observations):
            w = model.initial_dist[s1] * model.emission[s1, o1]
            if w == 0:
                continue
            b1 = bel.measurement_update(model, prior, o1)
            yield from rec(1, w, [s1], [o1], [], [b1], [])


def _believed_entropy_table(num_states, horizon):
    """H of every believed sequence in S^T, laid out as a tensor of shape (S,)*T."""
    seqs = np.array(all_state_sequences(num_states, horizon)).reshape(-1, horizon)
    h = np.array([entropy_from_counts(np.bincount(r, minlength=num_states)) for r in seqs])
    return h.reshape((num_states,) * horizon)


def _expected_believed_entropy(beliefs, table):
    """E[H(d(s~))] with s~_t ~ b_t independently, summed over the whole table."""
    weights = table
    for b in beliefs[::-1]:
        weights = weights @ b
    return float(weights)


def _trajectory_feedback(kind, traj, model, table=None):
    if kind.name == "MSE":
        value = entropy_from_counts(np.bincount(traj.states, minlength=model.num_states))
    elif kind.name == "MOE":
        value = entropy_from_counts(np.bincount(traj.observations, minlength=model.num_observations))
    elif traj.believed_states is not None:
        value = entropy_from_counts(np.bincount(traj.believed_states, minlength=model.num_states))
    else:
        value = _expected_believed_entropy(traj.beliefs, table)
    if kind.name == "RegMBE":
        value -= kind.rho * float(shannon_entropy(traj.beliefs).sum())
    return value


def _feedback_setup(model, params, kind):
    table = None
    if kind.needs_believed and params.class_tag != "S":
        table = _believed_entropy_table(model.num_states, model.horizon)
    return table


def brute_force_objective(model, params, kind, cap=DEFAULT_CAP):
    """sum over trajectories of p(tau) * feedback(tau); believed states are
    averaged in closed form unless the policy conditions on them."""
    table = _feedback_setup(model, params, kind)
    terms = [p * _trajectory_feedback(kind, tr, model, table)
             for p, tr in enumerate_trajectories(model, params, False, cap)]
    return math.fsum(terms)


def trajectory_score(params, traj):
    """sum_t grad log pi(a_t | i_t) along one trajectory."""
    score = np.zeros_like(params.theta)
    for t, a in enumerate(traj.actions):
        sb = None if traj.believed_states is None else traj.believed_states[t]
        score += grad_log_policy(params, _info_for(params, traj.observations[t], traj.beliefs[t], sb), a)
    return score


def expected_update_direction(model, params, kind, cap=DEFAULT_CAP):
    """E[score(tau) * feedback(tau)] summed over every enumerated trajectory."""
    table = _feedback_setup(model, params, kind)
    total = np.zeros_like(params.theta)
    for p, tr in enumerate_trajectories(model, params, False, cap):
        total += p * trajectory_score(params, tr) * _trajectory_feedback(kind, tr, model, table)
    return total


def monte_carlo_gradient(model, params, kind, batches, batch_size=10, seed=0, chunk=20000):
    """Mean and standard error of the Reg-PG update direction over many batches.

    Each batch estimate is (1/N) sum_n score_n * feedback_n without a
    baseline, i.e. the quantity whose expectation is the exact gradient.
    """
    from .feedback import batch_feedbacks
    from .policy import batch_scores
    from .pomdp_core import simulate

    rng = np.random.default_rng(seed)
    total = np.zeros_like(params.theta)
    total_sq = np.zeros_like(params.theta)
    remaining = batches
    while remaining:
        nb = min(remaining, max(1, chunk // batch_size))
        sim = simulate(model, params, rng.random((nb * batch_size, 4, model.horizon)))
        fb, _, _ = batch_feedbacks(kind, sim, model.num_states, model.num_observations)
        per_traj = batch_scores(params, sim.infos, sim.actions) * fb[:, None, None]
        per_batch = per_traj.reshape((nb, batch_size) + params.theta.shape).mean(axis=1)
        total += per_batch.sum(axis=0)
        total_sq += (per_batch**2).sum(axis=0)
        remaining -= nb
    mean = total / batches
    var = (total_sq - batches * mean**2) / max(batches - 1, 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / batches)


# --------------------------------------------------------------------------
# dynamic-programming route


class _Tracker:
    """Layered index of symbol sequences, either as multisets or as full sequences."""

    def __init__(self, alphabet, horizon, mode):
        self.alphabet = alphabet
        self.mode = mode
        self.configs = [[()]] if mode == "sequence" else [[(0,) * alphabet]]
        self.shift = []
        for _ in range(horizon):
            prev = self.configs[-1]
            if mode == "sequence":
                nxt = [c + (k,) for c in prev for k in range(alphabet)]
                sh = np.arange(len(prev))[:, None] * alphabet + np.arange(alphabet)[None, :]
            else:
                index, nxt = {}, []
                sh = np.empty((len(prev), alphabet), dtype=np.int64)
                for i, c in enumerate(prev):
                    for k in range(alphabet):
                        new = c[:k] + (c[k] + 1,) + c[k + 1:]
                        if new not in index:
                            index[new] = len(nxt)
                            nxt.append(new)
                        sh[i, k] = index[new]
            self.configs.append(nxt)
            self.shift.append(sh)

    def size(self, t):
        return len(self.configs[t])

    def counts(self, t, i):
        c = self.configs[t][i]
        return np.bincount(c, minlength=self.alphabet) if self.mode == "sequence" else np.array(c)

    def entropies(self, t):
        return np.array([entropy_from_counts(self.counts(t, i)) for i in range(self.size(t))])


@dataclass
class _Node:
    belief: np.ndarray
    m: np.ndarray
    gm: np.ndarray = None
    # mass-weighted running sum of H(b_t) up to this layer, and its gradient
    r: float = 0.0
    gr: np.ndarray = None


@dataclass
class _DPResult:
    trackers: list
    final: dict
    horizon: int
    reg_value: float = 0.0
    reg_grad: np.ndarray = None


def _belief_key(b):
    return tuple(np.round(b, _BELIEF_KEY_DECIMALS).tolist())


def _shift(tensor, trackers, t, symbols, weights_axis=None):
    """Move ``tensor`` (configs at layer t) to layer t+1 by appending ``symbols``.

    A symbol of ``None`` marks the believed axis, mixed with ``weights_axis``.
    """
    lead = tuple(tr.size(t + 1) for tr in trackers)
    out = np.zeros(lead + tensor.shape[len(trackers):])
    if len(trackers) == 1:
        # each shift column is injective, so plain fancy indexing is exact
        shift = trackers[0].shift[t]
        if weights_axis is None:
            out[shift[:, symbols[0]]] = tensor
            return out
        for k in np.flatnonzero(weights_axis):
            out[shift[:, k]] += weights_axis[k] * tensor
        return out
    fixed = [tr.shift[t][:, sym] if sym is not None else None for tr, sym in zip(trackers, symbols)]
    if weights_axis is None:
        out[np.ix_(*fixed)] += tensor
        return out
    for k, w in enumerate(weights_axis):
        if w == 0:
            continue
        idx = [f if f is not None else tr.shift[t][:, k] for f, tr in zip(fixed, trackers)]
        out[np.ix_(*idx)] += w * tensor
    return out


def _run_dp(model, params, sources, modes, want_grad, cap):
    """Forward DP over layers t = 1..T.

    ``sources`` names what each tracker records ("state", "obs", "believed").
    Returns the final layer and E[sum_t H(b_t)] (and gradient). The
    regularizer is carried to the final layer so that, like every feedback,
    it is weighted by the probability of the complete trajectory.
    """
    _check_cap(model, cap)
    horizon = model.horizon
    tag = params.class_tag
    alph = {"state": model.num_states, "obs": model.num_observations, "believed": model.num_states}
    trackers = [_Tracker(alph[src], horizon, mode) for src, mode in zip(sources, modes)]
    split_believed = tag == "S"
    believed_axis = "believed" in sources
    theta_shape = params.theta.shape
    child_cache = {}

    def deposit(layer, t, s, o, b, m, gm, r=0.0, gr=None):
        """Add mass arriving in (s, o, b) at layer index t (0-based configs t -> t+1)."""
        bkey = _belief_key(b)
        syms = []
        for src in sources:
            syms.append(s if src == "state" else o if src == "obs" else None)
        if split_believed:
            for sb in np.flatnonzero(b > 0):
                onehot = np.zeros(model.num_states)
                onehot[sb] = b[sb]
                weights = onehot if believed_axis else None
                scale = 1.0 if believed_axis else b[sb]
                add(layer, (s, bkey, int(sb)), b, t, syms, weights, scale, m, gm, b[sb] * r,
                    b[sb] * gr if want_grad else None)
        else:
            extra = o if tag == "O" else None
            add(layer, (s, bkey, extra), b, t, syms, b if believed_axis else None, 1.0, m, gm, r, gr)

    def add(layer, key, b, t, syms, weights, scale, m, gm, r, gr):
        new_m = scale * _shift(m, trackers, t, syms, weights)
        new_gm = scale * _shift(gm, trackers, t, syms, weights) if want_grad else None
        node = layer.get(key)
        if node is None:
            layer[key] = _Node(b, new_m, new_gm, r, gr.copy() if want_grad else None)
        else:
            node.m += new_m
            node.r += r
            if want_grad:
                node.gm += new_gm
                node.gr += gr

    base_shape = tuple(tr.size(0) for tr in trackers)
    layer = {}
    prior = bel.uniform_belief(model.num_states)
    for s1 in range(model.num_states):
        for o1 in range(model.num_observations):
            c = model.initial_dist[s1] * model.emission[s1, o1]
            if c == 0:
                continue
            b1 = bel.measurement_update(model, prior, o1)
            m0 = np.full(base_shape, c)
            g0 = np.zeros(base_shape + theta_shape) if want_grad else None
            deposit(layer, 0, s1, o1, b1, m0, g0, 0.0, np.zeros(theta_shape) if want_grad else None)

    for t in range(1, horizon + 1):
        tracker_axes = tuple(range(len(trackers)))
        for node in layer.values():
            h_b = float(shannon_entropy(node.belief))
            node.r += node.m.sum() * h_b
            if want_grad:
                node.gr += node.gm.sum(axis=tracker_axes) * h_b
        if t == horizon:
            break
        nxt = {}
        for (s, bkey, extra), node in layer.items():
            info = _info_for(params, extra, node.belief, extra)
            probs = action_distribution(params, info)
            for a in range(model.num_actions):
                w = probs[a]
                gw = grad_action_prob(params, info, a) if want_grad else None
                if w == 0 and (gw is None or not gw.any()):
                    continue
                base_m = w * node.m
                base_gm = base_gr = None
                base_r = w * node.r
                if want_grad:
                    base_gm = w * node.gm + node.m[(...,) + (None,) * 2] * gw
                    base_gr = w * node.gr + node.r * gw
                for o2 in range(model.num_observations):
                    ck = (bkey, a, o2)
                    if ck not in child_cache:
                        try:
                            child_cache[ck] = bel.bayes_update(model, node.belief, a, o2)
                        except ImpossibleObservationError:
                            child_cache[ck] = None
                    b2 = child_cache[ck]
                    if b2 is None:
                        continue
                    for s2 in np.flatnonzero(model.transition[s, a]):
                        c = model.transition[s, a, s2] * model.emission[s2, o2]
                        if c == 0:
                            continue
                        deposit(nxt, t, int(s2), o2, b2, c * base_m,
                                c * base_gm if want_grad else None, c * base_r,
                                c * base_gr if want_grad else None)
        layer = nxt
    reg_value = math.fsum(node.r for node in layer.values())
    reg_grad = sum(node.gr for node in layer.values()) if want_grad else None
    return _DPResult(trackers, layer, horizon, reg_value, reg_grad)


def _source_for(kind):
    return {"MSE": "state", "MOE": "obs", "MBE": "believed", "RegMBE": "believed"}[kind.name]


def exact_value_and_gradient(model, params, kind, want_grad=True, cap=DEFAULT_CAP):
    """Exact J(pi) for ``kind`` and (optionally) its gradient with respect to theta."""
    res = _run_dp(model, params, [_source_for(kind)], ["counts"], want_grad, cap)
    h = res.trackers[0].entropies(res.horizon)
    value = math.fsum(float(node.m @ h) for node in res.final.values())
    grad = None
    if want_grad:
        grad = np.zeros_like(params.theta)
        for node in res.final.values():
            grad += np.tensordot(h, node.gm, axes=1)
    if kind.name == "RegMBE":
        value -= kind.rho * res.reg_value
        if want_grad:
            grad -= kind.rho * res.reg_grad
    return value, grad


def exact_objective(model, params, kind, cap=DEFAULT_CAP):
    return exact_value_and_gradient(model, params, kind, want_grad=False, cap=cap)[0]


def exact_gradient(model, params, kind, cap=DEFAULT_CAP):
    return exact_value_and_gradient(model, params, kind, want_grad=True, cap=cap)[1]


def expected_belief_entropy_sum(model, params, cap=DEFAULT_CAP):
    """E[sum_t H(b_t)] under the policy."""
    return _run_dp(model, params, [], [], False, cap).reg_value


def finite_difference_gradient(model, params, kind, step=1e-6, cap=DEFAULT_CAP):
    """Central differences of ``exact_objective`` over every theta entry."""
    grad = np.zeros_like(params.theta)
    for idx in np.ndindex(*params.theta.shape):
        up, down = params.theta.copy(), params.theta.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (exact_objective(model, params.with_theta(up), kind, cap)
                     - exact_objective(model, params.with_theta(down), kind, cap)) / (2 * step)
    return grad


def relative_error(approx, reference):
    """Entrywise |approx - reference| scaled by max(|reference|, ||reference||_inf).

    Entries that vanish analytically are compared against the gradient's
    overall scale instead of their own magnitude.
    """
    approx, reference = np.asarray(approx), np.asarray(reference)
    scale = np.maximum(np.abs(reference), np.abs(reference).max())
    scale = np.where(scale > 0, scale, 1.0)
    return float((np.abs(approx - reference) / scale).max())


# --------------------------------------------------------------------------
# proxy gaps


@dataclass
class GapReport:
    J_S: float
    J_O: float
    J_tilde: float
    moe_upper: float
    moe_lower: float
    mbe_upper: float
    mbe_lower: float
    # J_S restricted to the true-state trajectories each bound keeps
    J_S_moe_upper_support: float
    J_S_moe_lower_support: float
    J_S_mbe_upper_support: float
    J_S_mbe_lower_support: float
    excluded: dict
    hallucination_obs: dict = field(repr=False)
    hallucination_belief: dict = field(repr=False)

    def sandwich_holds(self, tol=1e-10):
        return {
            "moe_upper": self.J_S_moe_upper_support <= self.moe_upper + tol,
            "moe_lower": self.moe_lower <= self.J_S_moe_lower_support + tol,
            "mbe_upper": self.J_S_mbe_upper_support <= self.mbe_upper + tol,
            "mbe_lower": self.mbe_lower <= self.J_S_mbe_lower_support + tol,
        }


def _per_state_trajectory(res):
    """Aggregate (state sequence, proxy counts) mass into per-tau_S statistics."""
    state_tr, proxy_tr = res.trackers
    t = res.horizon
    joint = sum(node.m for node in res.final.values())
    h_proxy = proxy_tr.entropies(t)
    rows = []
    for i, seq in enumerate(state_tr.configs[t]):
        mass = joint[i]
        p = mass.sum()
        if p <= 0:
            continue
        h_s = entropy_from_counts(state_tr.counts(t, i))
        cond = mass / p
        rows.append({
            "tau_S": seq,
            "p": p,
            "H_S": h_s,
            "J_proxy": float(cond @ h_proxy),
            "hall": float(cond[h_proxy >= h_s - DEGENERATE_TOL].sum()),
        })
    return rows


def _bounds(rows, log_support):
    upper = lower = js_up = js_low = 0.0
    ex_up = ex_low = 0
    for r in rows:
        p, hall, jp, hs = r["p"], r["hall"], r["J_proxy"], r["H_S"]
        if hall > DEGENERATE_TOL:
            upper += p * jp / hall
            js_up += p * hs
        else:
            ex_up += 1
        if hall < 1 - DEGENERATE_TOL:
            lower += p * (jp - hall * log_support) / (1 - hall)
            js_low += p * hs
        else:
            ex_low += 1
    return upper, lower, js_up, js_low, ex_up, ex_low


def proxy_gap_bounds(model, params, cap=DEFAULT_CAP):
    """Enumerate the MOE and MBE sandwiches around the true-state objective.

    Outer expectations run over p^pi(tau_S). True-state trajectories whose
    hallucination probability is 0 (upper bound) or 1 (lower bound) are left
    out of that bound and counted in ``excluded``.
    """
    obs_res = _run_dp(model, params, ["state", "obs"], ["sequence", "counts"], False, cap)
    blf_res = _run_dp(model, params, ["state", "believed"], ["sequence", "counts"], False, cap)
    rows_o = _per_state_trajectory(obs_res)
    rows_b = _per_state_trajectory(blf_res)
    j_s = math.fsum(r["p"] * r["H_S"] for r in rows_o)
    j_o = math.fsum(r["p"] * r["J_proxy"] for r in rows_o)
    j_t = math.fsum(r["p"] * r["J_proxy"] for r in rows_b)
    mo = _bounds(rows_o, math.log(model.num_observations))
    mb = _bounds(rows_b, math.log(model.num_states))
    return GapReport(
        J_S=j_s, J_O=j_o, J_tilde=j_t,
        moe_upper=mo[0], moe_lower=mo[1], mbe_upper=mb[0], mbe_lower=mb[1],
        J_S_moe_upper_support=mo[2], J_S_moe_lower_support=mo[3],
        J_S_mbe_upper_support=mb[2], J_S_mbe_lower_support=mb[3],
        excluded={"moe_upper": mo[4], "moe_lower": mo[5], "mbe_upper": mb[4], "mbe_lower": mb[5]},
        hallucination_obs={r["tau_S"]: r["hall"] for r in rows_o},
        hallucination_belief={r["tau_S"]: r["hall"] for r in rows_b},
    )


def mbe_gap_band(p_bar, mbe_value, num_states):
    """Upper/lower MSE bounds for one tau_S given its hallucination probability and MBE value."""
    mbe_value = np.asarray(mbe_value, dtype=float)
    log_s = math.log(num_states)
    upper = mbe_value / p_bar if p_bar > 0 else np.full_like(mbe_value, np.inf)
    lower = (mbe_value - p_bar * log_s) / (1 - p_bar) if p_bar < 1 else np.full_like(mbe_value, -np.inf)
    return lower, upper


def gap_band_table(p_bars=(0.02, 0.25, 0.5, 0.9), num_states=25, points=11):
    """Rows (p_bar, mbe, lower, upper, lower_clipped, upper_clipped) over MBE in [0, log S]."""
    log_s = math.log(num_states)
    rows = []
    for p in p_bars:
        grid = np.linspace(0.0, log_s, points)
        lo, up = mbe_gap_band(p, grid, num_states)
        for v, l, u in zip(grid, lo, up):
            rows.append((p, float(v), float(l), float(u), max(float(l), 0.0), min(float(u), log_s)))
    return rows


# --------------------------------------------------------------------------
# Lipschitz bounds


@dataclass
class LipschitzResult:
    lhs: float
    bound: float
    h_star: float
    d_tv: float

    @property
    def holds(self):
        return self.lhs <= self.bound + 1e-12


def _support_max_entropy(model, policies, source, cap):
    best = 0.0
    for params in policies:
        res = _run_dp(model, params, [source], ["counts"], False, cap)
        h = res.trackers[0].entropies(res.horizon)
        mass = sum(node.m for node in res.final.values())
        if np.any(mass > 0):
            best = max(best, float(h[mass > 0].max()))
    return best


def _max_expected_believed_entropy(model, policies):
    """max over belief trajectories realizable under any policy of E[H(d(s~))|tau_B]."""
    tracker = _Tracker(model.num_states, model.horizon, "counts")
    horizon = model.horizon
    h_final = tracker.entropies(horizon)
    best = 0.0
    prior = bel.uniform_belief(model.num_states)

    def believed_step(q, b, t):
        return _shift(q, [tracker], t, [None], b)

    def rec(t, alpha, b, o, q, alive):
        nonlocal best
        if t == horizon:
            best = max(best, float(q @ h_final))
            return
        pis = [action_distribution(p, _info_for(p, o, b, None)) if ok else None
               for p, ok in zip(policies, alive)]
        for a in range(model.num_actions):
            nxt_alive = [ok and pi[a] > 0 for ok, pi in zip(alive, pis)]
            if not any(nxt_alive):
                continue
            pred = alpha @ model.transition[:, a, :]
            for o2 in range(model.num_observations):
                alpha2 = pred * model.emission[:, o2]
                if not alpha2.sum() > 0:
                    continue
                b2 = bel.bayes_update(model, b, a, o2)
                rec(t + 1, alpha2, b2, o2, believed_step(q, b2, t), nxt_alive)

    for o1 in range(model.num_observations):
        alpha1 = model.initial_dist * model.emission[:, o1]
        if not alpha1.sum() > 0:
            continue
        b1 = bel.measurement_update(model, prior, o1)
        rec(1, alpha1, b1, o1, believed_step(np.ones(1), b1, 0), [True] * len(policies))
    return best


def lipschitz_check(model, policy1, policy2, kind, cap=DEFAULT_CAP):
    """Compare |J(pi1) - J(pi2)| with T * H(d(tau*)) * d_TV(pi1, pi2)."""
    if kind.name not in ("MSE", "MOE", "MBE"):
        raise ValueError("Lipschitz bounds cover MSE, MOE and MBE")
    lhs = abs(exact_objective(model, policy1, kind, cap) - exact_objective(model, policy2, kind, cap))
    if kind.name == "MBE" and policy1.class_tag != "S":
        _check_cap(model, cap)
        h_star = _max_expected_believed_entropy(model, [policy1, policy2])
    else:
        h_star = _support_max_entropy(model, [policy1, policy2], _source_for(kind), cap)
    d_tv = policy_tv_distance(policy1, policy2)
    return LipschitzResult(lhs, model.horizon * h_star * d_tv, h_star, d_tv)


# --------------------------------------------------------------------------
# belief MDP


def observation_probability(model, b, action, observation):
    """P(o | b, a) = sum_s O(o|s) sum_s' b(s') P(s|s',a)."""
    return float(bel.predict(model, b, action) @ model.emission[:, observation])


def build_belief_mdp(model, belief_set, horizon=None, max_entries=5 * 10**7):
    """Transition tensor [|B|][A][|B|] of the belief MDP.

    A belief first reached at ``horizon`` (default: the model's) whose
    children were never generated is made absorbing for that action; any
    other missing child is a closure error.
    """
    horizon = model.horizon if horizon is None else horizon
    n = len(belief_set)
    if n * n * model.num_actions > max_entries:
        raise EnumerationCapError(f"belief MDP with {n} beliefs exceeds {max_entries} entries")
    out = np.zeros((n, model.num_actions, n))
    for i in range(n):
        b = belief_set[i]
        for a in range(model.num_actions):
            row = {}
            for o in range(model.num_observations):
                p_o = observation_probability(model, b, a, o)
                if p_o <= 0:
                    continue
                j = belief_set.find(bel.bayes_update(model, b, a, o))
                if j is None:
                    row = None
                    break
                row[j] = row.get(j, 0.0) + p_o
            if row is None:
                if belief_set.depths[i] < horizon:
                    raise BeliefSetClosureError(f"a child of belief {i} under action {a} is not in the set")
                out[i, a, i] = 1.0
                continue
            for j, p in row.items():
                out[i, a, j] = p
    return out


# --------------------------------------------------------------------------
# random instances


def random_pomdp(rng, num_states, num_actions, num_observations, horizon, concentration=1.0):
    from .pomdp_core import TabularPomdp, validate_pomdp

    alpha = np.full(num_states, concentration)
    transition = rng.dirichlet(alpha, size=(num_states, num_actions))
    emission = rng.dirichlet(np.full(num_observations, concentration), size=num_states)
    mu = rng.dirichlet(alpha)
    return validate_pomdp(TabularPomdp(num_states, num_actions, num_observations,
                                       transition, emission, horizon, mu))


def random_policy(rng, class_tag, model, belief_set=None, concentration=1.0):
    from .policy import PolicyParams, info_size

    rows = info_size(class_tag, model, belief_set)
    theta = rng.dirichlet(np.full(model.num_actions, concentration), size=rows)
    return PolicyParams(class_tag, theta, True, belief_set)


def all_state_sequences(num_states, horizon):
    return list(itertools.product(range(num_states), repeat=horizon))


# --------------------------------------------------------------------------
# CSV export


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def gap_summary_csv(report):
    names = ("J_S", "J_O", "J_tilde", "moe_upper", "moe_lower", "mbe_upper", "mbe_lower",
             "J_S_moe_upper_support", "J_S_moe_lower_support",
             "J_S_mbe_upper_support", "J_S_mbe_lower_support")
    rows = [(n, repr(float(getattr(report, n)))) for n in names]
    rows += [(f"excluded_{k}", v) for k, v in report.excluded.items()]
    return _csv_text(("quantity", "value"), rows)


def hallucination_csv(report):
    """One row per true-state trajectory (states joined by '-')."""
    rows = [("-".join(map(str, tau)), repr(report.hallucination_obs[tau]),
             repr(report.hallucination_belief.get(tau, float("nan"))))
            for tau in sorted(report.hallucination_obs)]
    return _csv_text(("tau_S", "hallucination_obs", "hallucination_belief"), rows)


def band_csv(rows):
    return _csv_text(("p_bar", "mbe", "lower", "upper", "lower_clipped", "upper_clipped"),
                     [tuple(repr(float(x)) for x in r) for r in rows])


def lipschitz_csv(results):
    return _csv_text(("lhs", "bound", "h_star", "d_tv", "holds"),
                     [(repr(r.lhs), repr(r.bound), repr(r.h_star), repr(r.d_tv), int(r.holds))
                      for r in results])
