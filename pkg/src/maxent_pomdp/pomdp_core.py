"""Tabular POMDP model, validation, serialisation and episode simulation."""

from dataclasses import dataclass
import json

import numpy as np

from . import belief as bel
from ._numerics import sample_rows
from .errors import DimensionMismatchError, ImpossibleObservationError, PomdpValidationError
from .policy import INFO_KIND, InfoState, batch_action_probs, check_compatible

ROW_SUM_TOL = 1e-12
# uniforms drawn per trajectory: initial/next state, observation, action, believed state
_STATE, _OBS, _ACT, _BELIEVED = range(4)


@dataclass(frozen=True, eq=False)
class TabularPomdp:
    num_states: int
    num_actions: int
    num_observations: int
    transition: np.ndarray  # [S][A][S]: P(s'|s,a)
    emission: np.ndarray  # [S][O]: O(o|s)
    horizon: int
    initial_dist: np.ndarray  # [S]

    def __post_init__(self):
        for name in ("transition", "emission", "initial_dist"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def with_horizon(self, horizon):
        return TabularPomdp(
            self.num_states, self.num_actions, self.num_observations,
            self.transition, self.emission, horizon, self.initial_dist,
        )


def validate_pomdp(model, tol=ROW_SUM_TOL):
    """Return ``model`` if every invariant holds, else raise with all violations."""
    errors = []
    s, a, o = model.num_states, model.num_actions, model.num_observations
    for name, val in (("num_states", s), ("num_actions", a), ("num_observations", o),
                      ("horizon", model.horizon)):
        if int(val) != val or val < 1:
            errors.append(f"{name} must be a positive integer, got {val!r}")
    if errors:
        raise PomdpValidationError(errors)
    shapes = {
        "transition": ((s, a, s), model.transition),
        "emission": ((s, o), model.emission),
        "initial_dist": ((s,), model.initial_dist),
    }
    for name, (shape, arr) in shapes.items():
        if arr.shape != shape:
            errors.append(f"{name} has shape {arr.shape}, expected {shape}")
    if errors:
        raise PomdpValidationError(errors)

    for (si, ai) in np.ndindex(s, a):
        row = model.transition[si, ai]
        for sp in np.flatnonzero(~np.isfinite(row) | (row < 0) | (row > 1)):
            errors.append(f"transition[{si}][{ai}][{sp}] = {row[sp]!r} outside [0, 1]")
        if abs(row.sum() - 1.0) > tol:
            errors.append(f"transition row (s={si}, a={ai}) sums to {row.sum()!r}")
    for si in range(s):
        row = model.emission[si]
        for oi in np.flatnonzero(~np.isfinite(row) | (row < 0) | (row > 1)):
            errors.append(f"emission[{si}][{oi}] = {row[oi]!r} outside [0, 1] (s={si}, o={oi})")
        if abs(row.sum() - 1.0) > tol:
            errors.append(f"emission row s={si} sums to {row.sum()!r}")
    mu = model.initial_dist
    for si in np.flatnonzero(~np.isfinite(mu) | (mu < 0) | (mu > 1)):
        errors.append(f"initial_dist[{si}] = {mu[si]!r} outside [0, 1]")
    if abs(mu.sum() - 1.0) > tol:
        errors.append(f"initial_dist sums to {mu.sum()!r}")
    if errors:
        raise PomdpValidationError(errors)
    return model


def model_to_dict(model):
    return {
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "num_observations": model.num_observations,
        "transition": model.transition.tolist(),
        "emission": model.emission.tolist(),
        "horizon": model.horizon,
        "initial_dist": model.initial_dist.tolist(),
    }


def model_from_dict(data):
    model = TabularPomdp(
        num_states=int(data["num_states"]),
        num_actions=int(data["num_actions"]),
        num_observations=int(data["num_observations"]),
        transition=np.array(data["transition"], dtype=float),
        emission=np.array(data["emission"], dtype=float),
        horizon=int(data["horizon"]),
        initial_dist=np.array(data["initial_dist"], dtype=float),
    )
    return validate_pomdp(model)


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


@dataclass
class Trajectory:
    states: np.ndarray  # [T]
    actions: np.ndarray  # [T-1]
    observations: np.ndarray  # [T]
    beliefs: np.ndarray  # [T][S]
    believed_states: np.ndarray = None  # [T]
    fallbacks: int = 0

    def __post_init__(self):
        t = len(self.states)
        if len(self.observations) != t or len(self.beliefs) != t or len(self.actions) != t - 1:
            raise ValueError("trajectory field lengths are inconsistent")
        if self.believed_states is not None and len(self.believed_states) != t:
            raise ValueError("believed_states must have one entry per step")


@dataclass
class EmpiricalDist:
    probs: np.ndarray
    support_size: int


def empirical_distribution(seq, support_size):
    """Normalised visit counts d(seq)."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        raise ValueError("empty sequence")
    if seq.min() < 0 or seq.max() >= support_size:
        raise ValueError(f"ids must lie in [0, {support_size})")
    counts = np.bincount(seq, minlength=support_size)
    return EmpiricalDist(counts / seq.size, support_size)


@dataclass
class Batch:
    """N trajectories simulated in lockstep; arrays are indexed [n, t, ...]."""

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    beliefs: np.ndarray
    believed_states: np.ndarray
    infos: np.ndarray  # policy inputs for t < T: beliefs for BA, row ids otherwise
    fallbacks: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def size(self):
        return len(self.states)

    def info_state(self, n, t, class_tag):
        """Policy input of trajectory ``n`` at step ``t`` as an ``InfoState``."""
        value = self.infos[n, t]
        return InfoState(INFO_KIND[class_tag], value if class_tag == "BA" else int(value))

    def trajectory(self, n):
        return Trajectory(
            self.states[n], self.actions[n], self.observations[n], self.beliefs[n],
            self.believed_states[n], int(self.fallbacks[n]),
        )


def trajectory_rng(master_seed, iteration, index):
    """Independent stream for trajectory ``index`` of batch ``iteration``."""
    return np.random.default_rng([int(master_seed), int(iteration), int(index)])


def draw_randomness(rng, horizon, num_states, noisy):
    """Fixed per-trajectory draw layout: uniforms (4, T), then normals (T, S) if noisy."""
    u = rng.random((4, horizon))
    z = rng.standard_normal((horizon, num_states)) if noisy else None
    return u, z


def _filter_step(model, prior, actions, obs):
    """Vectorised T^{ao} over a batch; returns beliefs and a mask of impossible rows."""
    pred = np.einsum("ns,nst->nt", prior, model.transition.transpose(1, 0, 2)[actions])
    numer = pred * model.emission[:, obs].T
    z = numer.sum(axis=1)
    bad = ~(z > 0)
    return numer / np.where(bad, 1.0, z)[:, None], bad


def _perturb_batch(exact, gaussian, noise_var):
    noisy = np.clip(exact + np.sqrt(noise_var) * gaussian, 0.0, 1.0)
    z = noisy.sum(axis=1)
    fell_back = ~(z > 0)
    out = noisy / np.where(fell_back, 1.0, z)[:, None]
    out[fell_back] = exact[fell_back]
    return out, fell_back


def simulate(model, params, uniforms, normals=None, noise_var=0.0):
    """Run N episodes in lockstep from pre-drawn randomness.

    ``uniforms`` has shape (N, 4, T); ``normals`` (N, T, S) is only read when
    ``noise_var > 0``. Beliefs follow the uniform-prior convention: b_1 is the
    measurement update of U(S) with o_1.
    """
    check_compatible(params, model)
    uniforms = np.asarray(uniforms, dtype=float)
    n, _, horizon = uniforms.shape
    s_count = model.num_states
    noisy = noise_var > 0
    if noisy and normals is None:
        raise ValueError("noisy beliefs need gaussian draws")

    states = np.empty((n, horizon), dtype=np.int64)
    obs = np.empty((n, horizon), dtype=np.int64)
    actions = np.empty((n, horizon - 1), dtype=np.int64)
    beliefs = np.empty((n, horizon, s_count))
    believed = np.empty((n, horizon), dtype=np.int64)
    if params.class_tag == "BA":
        infos = np.empty((n, horizon - 1, s_count))
    else:
        infos = np.empty((n, horizon - 1), dtype=np.int64)
    fallbacks = np.zeros(n, dtype=np.int64)

    states[:, 0] = sample_rows(np.broadcast_to(model.initial_dist, (n, s_count)), uniforms[:, _STATE, 0])
    obs[:, 0] = sample_rows(model.emission[states[:, 0]], uniforms[:, _OBS, 0])
    exact = model.emission[:, obs[:, 0]].T / model.emission[:, obs[:, 0]].sum(axis=0)[:, None]
    b = exact
    if noisy:
        b, fb = _perturb_batch(exact, normals[:, 0], noise_var)
        fallbacks += fb
    for t in range(horizon):
        beliefs[:, t] = b
        believed[:, t] = sample_rows(b, uniforms[:, _BELIEVED, t])
        if t == horizon - 1:
            break
        if params.class_tag == "BA":
            info = b
        elif params.class_tag == "O":
            info = obs[:, t]
        elif params.class_tag == "S":
            info = believed[:, t]
        else:
            info = params.belief_set.nearest_many(b)
        infos[:, t] = info
        a = sample_rows(batch_action_probs(params, info), uniforms[:, _ACT, t])
        actions[:, t] = a
        states[:, t + 1] = sample_rows(model.transition[states[:, t], a], uniforms[:, _STATE, t + 1])
        obs[:, t + 1] = sample_rows(model.emission[states[:, t + 1]], uniforms[:, _OBS, t + 1])
        if noisy:
            exact, bad = _filter_step(model, exact, a, obs[:, t + 1])
            step, bad_noisy = _filter_step(model, b, a, obs[:, t + 1])
            # the perturbed prior may have lost the true state's support
            step[bad_noisy] = exact[bad_noisy]
            fallbacks += bad_noisy
            b, fb = _perturb_batch(step, normals[:, t + 1], noise_var)
            fallbacks += fb
        else:
            b, bad = _filter_step(model, b, a, obs[:, t + 1])
        if np.any(bad):
            raise ImpossibleObservationError("sampled observation has zero probability under the filter")
    return Batch(states, actions, obs, beliefs, believed, infos, fallbacks)


def sample_batch(model, params, master_seed, iteration, batch_size, noise_var=0.0):
    """Sample ``batch_size`` episodes, trajectory n using ``trajectory_rng(seed, iteration, n)``."""
    noisy = noise_var > 0
    draws = [
        draw_randomness(trajectory_rng(master_seed, iteration, i), model.horizon, model.num_states, noisy)
        for i in range(batch_size)
    ]
    uniforms = np.stack([d[0] for d in draws])
    normals = np.stack([d[1] for d in draws]) if noisy else None
    return simulate(model, params, uniforms, normals, noise_var)


def sample_trajectory(model, params, rng, noise_var=0.0):
    """Sample one episode; the result depends only on the state of ``rng``."""
    if params.num_actions != model.num_actions:
        raise DimensionMismatchError("policy and model disagree on the number of actions")
    noisy = noise_var > 0
    u, z = draw_randomness(rng, model.horizon, model.num_states, noisy)
    batch = simulate(model, params, u[None], None if z is None else z[None], noise_var)
    return batch.trajectory(0)


def forward_posterior(model, observations, actions, prior=None):
    """Brute-force P(s_t | o_{1:t}, a_{1:t-1}) by summing over all state sequences.

    Independent of the recursive filter; cost is S**t per step.
    """
    s_count = model.num_states
    prior = bel.uniform_belief(s_count) if prior is None else np.asarray(prior, dtype=float)
    out = []
    for t in range(1, len(observations) + 1):
        mass = np.zeros(s_count)
        for seq in np.ndindex(*(s_count,) * t):
            w = prior[seq[0]] * model.emission[seq[0], observations[0]]
            for k in range(1, t):
                w *= model.transition[seq[k - 1], actions[k - 1], seq[k]]
                w *= model.emission[seq[k], observations[k]]
            mass[seq[-1]] += w
        out.append(mass / mass.sum())
    return np.array(out)
