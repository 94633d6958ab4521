"""Gridworld POMDP builders: single room and four rooms with several emission models.

Cells are numbered ``row * width + col``; row 0 is the top. Actions are
0=up, 1=down, 2=left, 3=right.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedLayoutError
from .pomdp_core import TabularPomdp, validate_pomdp

MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
FAIL_PROB = 0.1
OBS_MODES = ("gaussian", "room_id", "side_id")


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset = field(default_factory=frozenset)  # blocked edges {cell_a, cell_b}
    obs_mode: str = "gaussian"
    sigma2: float = 0.1
    stochastic: bool = False
    fail_prob: float = FAIL_PROB
    metric: str = "euclidean"  # or "manhattan"


def cell_id(row, col, width):
    return row * width + col


def cell_pos(s, width):
    return divmod(s, width)


def _edge(a, b):
    return frozenset((a, b))


def four_rooms_walls(width=6, height=6):
    """Interior walls splitting the grid into quadrants, one doorway per wall segment.

    Doorways sit at the middle cell of each segment: for 6x6 they open
    (1,2)-(1,3), (4,2)-(4,3), (2,1)-(3,1) and (2,4)-(3,4).
    """
    mid_r, mid_c = height // 2, width // 2
    walls = set()
    doors = {
        _edge(cell_id((mid_r - 1) // 2, mid_c - 1, width), cell_id((mid_r - 1) // 2, mid_c, width)),
        _edge(cell_id((mid_r + height - 1) // 2, mid_c - 1, width), cell_id((mid_r + height - 1) // 2, mid_c, width)),
        _edge(cell_id(mid_r - 1, (mid_c - 1) // 2, width), cell_id(mid_r, (mid_c - 1) // 2, width)),
        _edge(cell_id(mid_r - 1, (mid_c + width - 1) // 2, width), cell_id(mid_r, (mid_c + width - 1) // 2, width)),
    }
    for r in range(height):
        walls.add(_edge(cell_id(r, mid_c - 1, width), cell_id(r, mid_c, width)))
    for c in range(width):
        walls.add(_edge(cell_id(mid_r - 1, c, width), cell_id(mid_r, c, width)))
    return frozenset(walls - doors)


def _step(s, action, spec):
    r, c = cell_pos(s, spec.width)
    dr, dc = MOVES[action]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < spec.height and 0 <= nc < spec.width):
        return s
    t = cell_id(nr, nc, spec.width)
    return s if _edge(s, t) in spec.walls else t


def _check_connected(spec):
    n = spec.width * spec.height
    seen = {0}
    queue = deque([0])
    while queue:
        s = queue.popleft()
        for a in range(4):
            t = _step(s, a, spec)
            if t not in seen:
                seen.add(t)
                queue.append(t)
    if len(seen) != n:
        raise DisconnectedLayoutError(f"only {len(seen)} of {n} cells reachable")


def grid_transitions(spec):
    n = spec.width * spec.height
    p = np.zeros((n, 4, n))
    for s in range(n):
        for a in range(4):
            if spec.stochastic:
                for b in range(4):
                    w = 1.0 - spec.fail_prob if b == a else spec.fail_prob / 3.0
                    p[s, a, _step(s, b, spec)] += w
            else:
                p[s, a, _step(s, a, spec)] = 1.0
    return p


def gaussian_emission(spec, sigma2=None, metric=None):
    """Discretised Gaussian around each cell: O(o|s) proportional to exp(-dist(o,s)^2 / (2 sigma2))."""
    sigma2 = spec.sigma2 if sigma2 is None else sigma2
    metric = spec.metric if metric is None else metric
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    n = spec.width * spec.height
    pos = np.array([cell_pos(s, spec.width) for s in range(n)], dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    if metric == "euclidean":
        d2 = (diff**2).sum(axis=2)
    elif metric == "manhattan":
        d2 = np.abs(diff).sum(axis=2) ** 2
    else:
        raise ValueError(f"unknown metric {metric!r}")
    logits = -d2 / (2.0 * sigma2)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def room_of(s, spec):
    """Quadrant index: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    r, c = cell_pos(s, spec.width)
    return 2 * int(r >= spec.height / 2) + int(c >= spec.width / 2)


def room_emission(spec):
    n = spec.width * spec.height
    e = np.zeros((n, 4))
    for s in range(n):
        e[s, room_of(s, spec)] = 1.0
    return e


def side_emission(spec):
    """Observation 0 for the left half of the grid, 1 for the right half."""
    n = spec.width * spec.height
    e = np.zeros((n, 2))
    for s in range(n):
        e[s, int(cell_pos(s, spec.width)[1] >= spec.width / 2)] = 1.0
    return e


def build_env(spec):
    """TabularPomdp for a grid; start is the top-left cell and T = number of cells."""
    if spec.width < 1 or spec.height < 1:
        raise ValueError("grid dimensions must be positive")
    if not 0 <= spec.fail_prob < 1:
        raise ValueError("fail_prob must lie in [0, 1)")
    _check_connected(spec)
    n = spec.width * spec.height
    if spec.obs_mode == "gaussian":
        emission = gaussian_emission(spec)
    elif spec.obs_mode == "room_id":
        emission = room_emission(spec)
    elif spec.obs_mode == "side_id":
        emission = side_emission(spec)
    else:
        raise ValueError(f"unknown obs_mode {spec.obs_mode!r}")
    mu = np.zeros(n)
    mu[0] = 1.0
    model = TabularPomdp(n, 4, emission.shape[1], grid_transitions(spec), emission, n, mu)
    return validate_pomdp(model)


PRESETS = ("single-room-5x5", "four-rooms-6x6", "four-rooms-4obs", "four-rooms-2obs")


def preset_spec(name, sigma2=0.1, stochastic=False, size=None):
    """GridSpec for a named benchmark; ``size`` overrides the single-room side length."""
    if name == "single-room-5x5":
        k = size or 5
        return GridSpec(k, k, obs_mode="gaussian", sigma2=sigma2, stochastic=stochastic)
    walls = four_rooms_walls(6, 6)
    if name == "four-rooms-6x6":
        return GridSpec(6, 6, walls, "gaussian", sigma2, stochastic)
    if name == "four-rooms-4obs":
        return GridSpec(6, 6, walls, "room_id", sigma2, stochastic)
    if name == "four-rooms-2obs":
        return GridSpec(6, 6, walls, "side_id", sigma2, stochastic)
    raise ValueError(f"unknown env preset {name!r}; choose from {PRESETS}")


def make_env(name, sigma2=0.1, stochastic=False, size=None):
    return build_env(preset_spec(name, sigma2, stochastic, size))
