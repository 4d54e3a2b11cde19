"""Desk-scale gridworld analogs of the velocity, position and maze tasks.

Each builder returns an ``Environment`` bundling the MDP, the task reward,
the ground-truth constraint, the feature map the constraint class is built
on, and a default constraint set containing the ground truth.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .constraints import ConstraintSetDescriptor, FeatureMap, register_feature_map
from .mdp import Mdp, Policy, ScalarSignal, mix, sample_trajectories
from .solvers import CrlParams, crl

MARGIN = 0.1
POSITION_TEMPERATURE = 0.2
MAZE_CELL_SIZE = 1.0 / 3.0

MOVES4 = ((1, 0), (0, -1), (-1, 0), (0, 1), (0, 0))  # (dx, dy); the last one stays put
MOVES8 = MOVES4 + ((1, -1), (-1, -1), (-1, 1), (1, 1))


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    wall_cells: frozenset = frozenset()
    start_cells: tuple = ((0, 0),)
    goal_cell: tuple = None
    moves: int = 4
    slip_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "wall_cells", frozenset(tuple(c) for c in self.wall_cells))
        object.__setattr__(self, "start_cells", tuple(tuple(c) for c in self.start_cells))
        if self.goal_cell is not None:
            object.__setattr__(self, "goal_cell", tuple(self.goal_cell))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1 x 1")
        if self.moves not in (4, 8):
            raise ValueError("moves must be 4 or 8")
        if not 0 <= self.slip_prob < 0.5:
            raise ValueError("slip_prob must lie in [0, 0.5)")
        if not self.start_cells:
            raise ValueError("need at least one start cell")
        cells = list(self.start_cells) + ([self.goal_cell] if self.goal_cell else []) + list(self.wall_cells)
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} is outside the grid")
        for c in self.start_cells + ((self.goal_cell,) if self.goal_cell else ()):
            if c in self.wall_cells:
                raise ValueError(f"start/goal cell {c} is a wall")

    @property
    def num_cells(self):
        return self.width * self.height

    def index(self, x, y):
        return y * self.width + x

    def coords(self):
        """(x, y) arrays indexed by state."""
        s = np.arange(self.num_cells)
        return s % self.width, s // self.width

    def wall_mask(self):
        mask = np.zeros(self.num_cells, dtype=bool)
        for x, y in self.wall_cells:
            mask[self.index(x, y)] = True
        return mask

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "wall_cells": sorted(list(c) for c in self.wall_cells),
            "start_cells": [list(c) for c in self.start_cells],
            "goal_cell": list(self.goal_cell) if self.goal_cell else None,
            "moves": self.moves,
            "slip_prob": self.slip_prob,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            doc["width"],
            doc["height"],
            frozenset(tuple(c) for c in doc["wall_cells"]),
            tuple(tuple(c) for c in doc["start_cells"]),
            tuple(doc["goal_cell"]) if doc.get("goal_cell") else None,
            doc.get("moves", 4),
            doc.get("slip_prob", 0.0),
        )


def parse_maze(text, **kwargs):
    """Grid from text: ``#`` wall, ``.`` free, ``S`` start, ``G`` goal."""
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("maze rows must have equal width")
    walls, starts, goal = set(), [], None
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch == "S":
                starts.append((x, y))
            elif ch == "G":
                if goal is not None:
                    raise ValueError("maze text has more than one goal")
                goal = (x, y)
            elif ch != ".":
                raise ValueError(f"unknown maze character {ch!r}")
    return GridSpec(width, len(rows), frozenset(walls), tuple(starts) or ((0, 0),), goal, **kwargs)


def format_maze(spec):
    grid = [["."] * spec.width for _ in range(spec.height)]
    for x, y in spec.wall_cells:
        grid[y][x] = "#"
    for x, y in spec.start_cells:
        grid[y][x] = "S"
    if spec.goal_cell:
        gx, gy = spec.goal_cell
        grid[gy][gx] = "G"
    return "\n".join("".join(r) for r in grid)


def grid_mdp(spec, horizon):
    """Walls are permeable: every move is allowed; a slip leaves the agent in place."""
    moves = MOVES4 if spec.moves == 4 else MOVES8
    S, A = spec.num_cells, len(moves)
    xs, ys = spec.coords()
    P = np.zeros((S, A, S))
    for a, (dx, dy) in enumerate(moves):
        nx = np.clip(xs + dx, 0, spec.width - 1)
        ny = np.clip(ys + dy, 0, spec.height - 1)
        P[np.arange(S), a, ny * spec.width + nx] += 1.0 - spec.slip_prob
        P[np.arange(S), a, np.arange(S)] += spec.slip_prob
    mu = np.zeros(S)
    for x, y in spec.start_cells:
        mu[spec.index(x, y)] += 1.0 / len(spec.start_cells)
    return Mdp(P, mu, horizon)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    c_star: ScalarSignal
    description: str
    weights: np.ndarray = None  # a realizing weight vector in the env's feature map
    margin: float = 0.0  # safe-side margin mu; experts get budget -margin * T / 2

    def expert_delta(self, horizon):
        return -self.margin * horizon * 0.5

    def unsafe_mask(self):
        return self.c_star.values > 0


@dataclass(frozen=True, eq=False)
class Environment:
    name: str
    mdp: Mdp
    reward: ScalarSignal
    ground_truth: GroundTruth
    feature_map: FeatureMap
    constraint_set: ConstraintSetDescriptor
    spec: object = None
    info: dict = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (mdp, reward, ground_truth, feature_map)
        return iter((self.mdp, self.reward, self.ground_truth, self.feature_map))


def realizability_gap(gt, fmap):
    """max |c_w* - c*| for the ground truth's own weight vector."""
    return float(np.max(np.abs(fmap.evaluate(gt.weights) - gt.c_star.values)))


# -- feature maps ---------------------------------------------------------------


@register_feature_map("cell-onehot")
def cell_onehot_features(spec, num_actions):
    S = spec.num_cells
    phi = np.repeat(np.eye(S)[:, None, :], num_actions, axis=1)
    return FeatureMap(phi, "cell-onehot", tuple(f"cell{s}" for s in range(S)))


@register_feature_map("position")
def position_features(spec, num_actions):
    xs, ys = spec.coords()
    xn = xs / max(1, spec.width - 1)
    yn = ys / max(1, spec.height - 1)
    phi = np.stack([xn, yn, np.ones_like(xn)], axis=1)
    return FeatureMap(np.repeat(phi[:, None, :], num_actions, axis=1), "position", ("x", "y", "bias"))


@register_feature_map("velocity")
def velocity_features(speeds, num_states):
    speeds = np.asarray(speeds, dtype=float)
    vn = speeds / speeds.max()
    phi = np.stack([vn, np.ones_like(vn)], axis=1)
    return FeatureMap(np.repeat(phi[None, :, :], num_states, axis=0), "velocity", ("speed", "bias"))


# -- environments ----------------------------------------------------------------


def make_maze_env(spec, horizon=None, margin=MARGIN, name="maze", cell_size=MAZE_CELL_SIZE):
    """Permeable-wall maze: unit cost per step on a wall cell, -margin elsewhere.

    Reward is 2 exp(-d) - 1 with d the Euclidean distance from the cell centre
    to the goal centre measured in units of ``cell_size`` per cell, so the
    goal cell earns the maximum of 1.
    """
    if spec.goal_cell is None:
        raise ValueError("maze spec needs a goal cell")
    T = horizon or spec.width + spec.height
    mdp = grid_mdp(spec, T)
    A = mdp.num_actions
    xs, ys = spec.coords()
    gx, gy = spec.goal_cell
    dist = cell_size * np.hypot(xs - gx, ys - gy)
    reward = ScalarSignal.from_state_values(2.0 * np.exp(-dist) - 1.0, A)
    walls = spec.wall_mask()
    c_cells = np.where(walls, 1.0, -margin)
    fmap = cell_onehot_features(spec, A)
    gt = GroundTruth(
        ScalarSignal.from_state_values(c_cells, A),
        f"unit cost on {int(walls.sum())} wall cells, -{margin} elsewhere",
        c_cells.copy(),
        margin,
    )
    radius = float(np.ceil(np.linalg.norm(c_cells)))
    # start cells are never costly, so staying put is safe under every member of the class
    starts = [np.eye(fmap.dim)[spec.index(x, y)] for x, y in spec.start_cells]
    cset = ConstraintSetDescriptor.ball(fmap.dim, radius).with_halfspaces((e, 0.0) for e in starts)
    return Environment(name, mdp, reward, gt, fmap, cset, spec, {"wall_mask": walls})


def make_position_env(size=8, slope=0.5, horizon=10, slip_prob=0.0, scale=0.8, name="position"):
    """Grid rewarding progress in +x; the ground truth penalizes slope*x - y > 0.

    The reward is 1 for an east move that actually advances (progress per
    step), so it lies outside the span of the state features. Coordinates use
    y growing upward (row index counts from the bottom). The cost is linear
    in position, c*(x, y) = scale * (slope x - y) / (size - 1), exactly
    realizable by the (x, y, 1) features; cells on the line are safe.
    """
    spec = GridSpec(size, size, frozenset(), ((0, 0),), None, 4, slip_prob)
    mdp = grid_mdp(spec, horizon)
    A = mdp.num_actions
    reward = progress_reward(spec, (1.0, 0.0))
    w_star = scale * np.array([slope, -1.0, 0.0])
    fmap = position_features(spec, A)
    c_vals = fmap.evaluate(w_star)
    c_vals[np.abs(c_vals) < 1e-12] = 0.0  # roundoff must not push boundary cells to the unsafe side
    gt = GroundTruth(ScalarSignal(c_vals), f"{slope} x - y <= 0 (linear cost, scale {scale})", w_star, 0.0)
    cset = ConstraintSetDescriptor.ball(fmap.dim, 1.0)
    info = {"slope": slope, "boundary": np.array([slope, -1.0])}
    return Environment(name, mdp, reward, gt, fmap, cset, spec, info)


def progress_reward(spec, direction):
    """Forward part of the per-step displacement along ``direction``; backward moves earn 0."""
    moves = MOVES4 if spec.moves == 4 else MOVES8
    xs, ys = spec.coords()
    d = np.asarray(direction, dtype=float)
    r = np.zeros((spec.num_cells, len(moves)))
    for a, (dx, dy) in enumerate(moves):
        nx = np.clip(xs + dx, 0, spec.width - 1)
        ny = np.clip(ys + dy, 0, spec.height - 1)
        r[:, a] = np.maximum(0.0, (nx - xs) * d[0] + (ny - ys) * d[1])
    return ScalarSignal(r / max(1.0, np.max(r)))


def make_velocity_env(
    num_positions=4,
    speeds=(0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5),
    vmax=0.75,
    grips=(0.6, 1.0, 1.4),
    horizon=12,
    scale=0.85,
    name="velocity",
):
    """Looping track; the action picks a speed, the cost is linear in speed.

    Position p has grip g_p; driving at speed v earns g_p v - v^2 / 2 (progress
    net of quadratic drag). The ground truth is c*(v) = scale (v - vmax) / v_top,
    so a zero budget caps the average speed at vmax.
    """
    speeds = np.asarray(speeds, dtype=float)
    if np.any(speeds < 0):
        raise ValueError("speeds must be nonnegative")
    P_ = num_positions
    A = len(speeds)
    P = np.zeros((P_, A, P_))
    for p in range(P_):
        P[p, :, (p + 1) % P_] = 1.0
    mu = np.zeros(P_)
    mu[0] = 1.0
    mdp = Mdp(P, mu, horizon)
    g = np.array([grips[p % len(grips)] for p in range(P_)])
    r = g[:, None] * speeds[None, :] - 0.5 * speeds[None, :] ** 2
    reward = ScalarSignal(r / max(1.0, np.max(np.abs(r))))
    fmap = velocity_features(speeds, P_)
    v_top = speeds.max()
    w_star = scale * np.array([1.0, -vmax / v_top])
    c_vals = fmap.evaluate(w_star)
    gt = GroundTruth(ScalarSignal(c_vals), f"speed <= {vmax} on average (linear cost)", w_star, 0.0)
    cset = ConstraintSetDescriptor.ball(fmap.dim, 1.0)
    return Environment(name, mdp, reward, gt, fmap, cset, None, {"vmax": vmax, "speeds": speeds, "v_top": v_top})


# -- experts ----------------------------------------------------------------------


def make_expert(mdp, r, ground_truth, crl_params=CrlParams(), noise_level=0.0, n_demos=20, seed=0):
    """CRL expert under the ground truth, plus demonstrations.

    With noise_level eps > 0 the demonstrations come from the mixture
    (1 - eps) * expert + eps * uniform. Returns (behaviour policy, demos).
    """
    if n_demos < 1:
        raise ValueError("n_demos must be >= 1")
    if not 0 <= noise_level <= 1:
        raise ValueError("noise_level must lie in [0, 1]")
    res = crl(mdp, r, ground_truth.c_star, ground_truth.expert_delta(mdp.horizon), crl_params)
    policy = res.mixture
    if noise_level >= 1:
        policy = Policy.uniform(mdp)
    elif noise_level > 0:
        policy = mix(res.mixture, Policy.uniform(mdp), noise_level)
    demos = sample_trajectories(mdp, policy, n_demos, _rng.child_seed(seed, "demos"))
    return policy, demos


# -- fixtures and task families -----------------------------------------------------

MAZE10 = """
S.........
.########.
.########.
.########.
..........
.########.
.########.
.########.
.########.
S.........
"""
MAZE10_HORIZON = 20


def maze10_spec(goal_row=0):
    base = parse_maze(MAZE10)
    return replace(base, goal_cell=(base.width - 1, goal_row))


def maze10_envs(horizon=MAZE10_HORIZON):
    """The 10-task maze: both left starts, one goal per cell of the rightmost column."""
    return [make_maze_env(maze10_spec(k), horizon, name=f"maze10-goal{k}") for k in range(10)]


@dataclass(frozen=True, eq=False)
class Task:
    task_id: str
    env: Environment
    expert_policy: object
    demos: list


class TaskSampler:
    """Deterministic-given-seed stream of tasks sharing one MDP and one c*."""

    def __init__(self, family, params, seed):
        if family not in TASK_FAMILIES:
            raise ValueError(f"unknown task family {family!r}; known: {sorted(TASK_FAMILIES)}")
        self.family = family
        self.params = dict(params or {})
        self.seed = seed
        self._count = 0

    def draw(self, k=1):
        out = []
        for _ in range(k):
            idx = self._count
            self._count += 1
            out.append(TASK_FAMILIES[self.family](idx, _rng.child_seed(self.seed, self.family, idx), **self.params))
        return out


def _maze_goal_task(idx, seed, spec=None, horizon=None, crl_params=None, n_demos=20, noise_level=0.0, goals=None):
    base = spec or parse_maze(MAZE10)
    free = [(x, y) for y in range(base.height) for x in range(base.width) if (x, y) not in base.wall_cells]
    free = [c for c in free if c not in base.start_cells]
    if goals is not None:
        goal = tuple(goals[idx % len(goals)])
    else:
        goal = free[_rng.stream(seed, "goal").integers(len(free))]
    env = make_maze_env(replace(base, goal_cell=goal), horizon, name=f"maze-goal{goal[0]}-{goal[1]}")
    pol, demos = make_expert(env.mdp, env.reward, env.ground_truth, crl_params or CrlParams(), noise_level, n_demos, seed)
    return Task(f"task{idx:03d}-goal{goal[0]}_{goal[1]}", env, pol, demos)


def _position_task(idx, seed, size=8, horizon=10, crl_params=None, n_demos=20, noise_level=0.0, angle_range=(-0.5, 0.5)):
    base = make_position_env(size, horizon=horizon)
    theta = float(_rng.stream(seed, "angle").uniform(*angle_range))
    reward = progress_reward(base.spec, (np.cos(theta), np.sin(theta)))
    env = replace(base, reward=reward, name=f"position-theta{theta:.3f}", info={**base.info, "theta": theta})
    params = crl_params or CrlParams(temperature=POSITION_TEMPERATURE)
    pol, demos = make_expert(env.mdp, env.reward, env.ground_truth, params, noise_level, n_demos, seed)
    return Task(f"task{idx:03d}-theta{theta:+.3f}", env, pol, demos)


TASK_FAMILIES = {"maze-goals": _maze_goal_task, "position-slopes": _position_task}


def make_task_distribution(family, params=None, seed=0):
    return TaskSampler(family, params, seed)


# -- fixture registry -------------------------------------------------------------


@dataclass(frozen=True)
class Fixture:
    name: str
    build: object  # () -> list of Environment (one per task)
    crl_params: CrlParams
    rounds: int
    readout: str  # "threshold", "direction" or "walls"
    thresholds: dict = field(default_factory=dict)

    def envs(self):
        return self.build()


FIXTURES = {}


def register_fixture(fx):
    FIXTURES[fx.name] = fx
    return fx


register_fixture(Fixture("velocity", lambda: [make_velocity_env()], CrlParams(), 10, "threshold",
                         {"threshold_error": 0.1, "pareto_slack": 0.05}))
register_fixture(Fixture("position", lambda: [make_position_env()], CrlParams(temperature=POSITION_TEMPERATURE), 10,
                         "direction", {"cosine": 0.99, "pareto_slack": 0.05}))
register_fixture(Fixture("maze10", maze10_envs, CrlParams(), 20, "walls", {"f1": 0.8, "pareto_slack": 0.05}))


def get_fixture(name):
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(FIXTURES)}")
    return FIXTURES[name]
