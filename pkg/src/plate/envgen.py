"""Synthetic goal-conditioned task families with exact ground truth.

A family is a deterministic transition table over ``S`` discrete states
split into task blocks. Every task owns a contiguous block of states and a
subset of the shared action vocabulary; an action outside that subset is
inadmissible in the task's states. Observations are a fixed random linear
embedding of the state plus Gaussian noise.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import container

DATASET_SCHEMA = 1
DEFAULT_JUMPS = (1, 2, 3, -1)


class UnreachableError(ValueError):
    """No expert path of the requested length exists."""


class GenerationError(RuntimeError):
    """A task family with the requested properties could not be built."""


@dataclass
class TaskGraph:
    num_states: int
    num_actions: int
    transitions: np.ndarray  # (S, A), -1 marks an inadmissible pair
    task_of_state: np.ndarray  # (S,)
    task_actions: list
    start_states: list
    seed: int

    @property
    def num_tasks(self):
        return len(self.task_actions)

    def step(self, state, action):
        """Next state, or ``None`` if the action is inadmissible in ``state``."""
        if not 0 <= action < self.num_actions:
            return None
        nxt = int(self.transitions[state, action])
        return None if nxt < 0 else nxt

    def admissible(self, state):
        return [a for a in range(self.num_actions) if self.transitions[state, a] >= 0]

    def states_of_task(self, task):
        return [int(s) for s in np.flatnonzero(self.task_of_state == task)]

    def distances_from(self, start):
        dist = {start: 0}
        queue = deque([start])
        while queue:
            s = queue.popleft()
            for a in self.admissible(s):
                n = int(self.transitions[s, a])
                if n not in dist:
                    dist[n] = dist[s] + 1
                    queue.append(n)
        return dist

    def distances_to(self, goal):
        preds = {}
        for s in range(self.num_states):
            for a in self.admissible(s):
                preds.setdefault(int(self.transitions[s, a]), []).append(s)
        dist = {goal: 0}
        queue = deque([goal])
        while queue:
            s = queue.popleft()
            for p in preds.get(s, ()):
                if p not in dist:
                    dist[p] = dist[s] + 1
                    queue.append(p)
        return dist

    def replay(self, start, actions):
        """Final state after executing ``actions``; ``None`` if any step is inadmissible."""
        s = start
        for a in actions:
            s = self.step(s, int(a))
            if s is None:
                return None
        return s

    def to_arrays(self):
        width = max(len(a) for a in self.task_actions)
        acts = np.full((self.num_tasks, width), -1, dtype=np.int64)
        for i, a in enumerate(self.task_actions):
            acts[i, :len(a)] = a
        return {
            "graph.transitions": self.transitions,
            "graph.task_of_state": self.task_of_state,
            "graph.task_actions": acts,
            "graph.start_states": np.asarray(self.start_states, dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays, seed):
        acts = arrays["graph.task_actions"]
        return cls(
            num_states=int(arrays["graph.transitions"].shape[0]),
            num_actions=int(arrays["graph.transitions"].shape[1]),
            transitions=arrays["graph.transitions"].astype(np.int64),
            task_of_state=arrays["graph.task_of_state"].astype(np.int64),
            task_actions=[[int(a) for a in row if a >= 0] for row in acts],
            start_states=[int(s) for s in arrays["graph.start_states"]],
            seed=seed,
        )


def generate_task_family(seed, num_states=20, num_actions=8, num_tasks=2,
                         actions_per_task=None, jumps=DEFAULT_JUMPS, max_retries=200):
    """Random transition structure, reproducible from ``seed``.

    States are split into ``num_tasks`` contiguous blocks (each at least two
    states). Within a block an admissible action moves local state ``i`` to
    ``(i + j) mod n`` for a jump ``j`` drawn per (state, action) from
    ``jumps``; self-loops are never generated. Every state of a block is
    reachable from the block's first state.
    """
    if num_states < 2 or num_actions < 1 or num_tasks < 1:
        raise ValueError("need at least 2 states, 1 action and 1 task")
    if num_states < 2 * num_tasks:
        raise ValueError("every task needs at least two states")
    m = actions_per_task or min(num_actions, max(1, int(np.ceil(0.6 * num_actions))))
    if not 1 <= m <= num_actions:
        raise ValueError("actions_per_task outside [1, num_actions]")
    rng = np.random.default_rng(seed)
    sizes = [num_states // num_tasks + (i < num_states % num_tasks) for i in range(num_tasks)]
    transitions = np.full((num_states, num_actions), -1, dtype=np.int64)
    task_of_state = np.repeat(np.arange(num_tasks), sizes).astype(np.int64)
    task_actions, start_states = [], []
    base = 0
    for task, n in enumerate(sizes):
        usable = [j for j in jumps if j % n != 0]
        if not usable:
            raise GenerationError(f"no jump in {jumps} leaves a block of {n} states")
        for _ in range(max_retries):
            acts = sorted(int(a) for a in rng.choice(num_actions, size=m, replace=False))
            block = np.full((n, num_actions), -1, dtype=np.int64)
            for i in range(n):
                for a in acts:
                    block[i, a] = (i + usable[rng.integers(len(usable))]) % n
            if _block_connected(block):
                break
        else:
            raise GenerationError(f"task {task}: no connected block after {max_retries} tries")
        transitions[base:base + n] = np.where(block >= 0, block + base, -1)
        task_actions.append(acts)
        start_states.append(base)
        base += n
    return TaskGraph(num_states, num_actions, transitions, task_of_state,
                     task_actions, start_states, int(seed))


def _block_connected(block):
    seen = {0}
    queue = deque([0])
    while queue:
        s = queue.popleft()
        for n in block[s]:
            if n >= 0 and int(n) not in seen:
                seen.add(int(n))
                queue.append(int(n))
    return len(seen) == len(block)


def expert_actions(graph: TaskGraph, start, goal, T):
    """Lexicographically smallest shortest action sequence; its length must be ``T``."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    to_goal = graph.distances_to(goal)
    if to_goal.get(start) != T:
        raise UnreachableError(f"shortest path {start}->{goal} is {to_goal.get(start)}, not {T}")
    s, out = start, []
    for _ in range(T):
        for a in graph.admissible(s):
            n = int(graph.transitions[s, a])
            if to_goal.get(n) == to_goal[s] - 1:
                out.append(a)
                s = n
                break
    return out


def render_observations(embedding, states, sigma, rng):
    clean = embedding[np.asarray(states, dtype=np.int64)]
    if sigma == 0:
        return clean.copy()
    return clean + sigma * rng.standard_normal(clean.shape)


@dataclass
class Trajectory:
    id: int
    task: int
    start_state: int
    goal_state: int
    actions: np.ndarray  # (T,)
    states: np.ndarray  # (T+1,)
    observations: np.ndarray  # (T+1, D); the last row is the goal observation

    @property
    def horizon(self):
        return len(self.actions)

    @property
    def start_obs(self):
        return self.observations[0]

    @property
    def goal_obs(self):
        return self.observations[-1]


def expert_trajectory(graph, start, goal, T, embedding, sigma=0.0, noise_seed=0, traj_id=0):
    """Expert demonstration with rendered observations, deterministic in its inputs."""
    actions = expert_actions(graph, start, goal, T)
    states = [start]
    for a in actions:
        states.append(graph.step(states[-1], a))
    obs = render_observations(embedding, states, sigma, np.random.default_rng(noise_seed))
    return Trajectory(traj_id, int(graph.task_of_state[start]), int(start), int(goal),
                      np.asarray(actions, dtype=np.int64), np.asarray(states, dtype=np.int64), obs)


def oracle_plan(graph, start_state, goal_state, T):
    """Every admissible length-``T`` action sequence from start that ends at goal."""
    to_goal = graph.distances_to(goal_state)
    found = set()

    def walk(s, prefix):
        remaining = T - len(prefix)
        if remaining == 0:
            if s == goal_state:
                found.add(tuple(prefix))
            return
        for a in graph.admissible(s):
            n = int(graph.transitions[s, a])
            if to_goal.get(n, T + 1) <= remaining - 1:
                walk(n, prefix + [a])

    if to_goal.get(start_state, T + 1) <= T:
        walk(start_state, [])
    return found


@dataclass
class Dataset:
    header: dict
    graph: TaskGraph
    embedding: np.ndarray
    trajectories: list
    split: np.ndarray  # 1 = train, 0 = test, aligned with trajectories

    def train(self):
        return [t for t, s in zip(self.trajectories, self.split) if s == 1]

    def test(self):
        return [t for t, s in zip(self.trajectories, self.split) if s == 0]

    @property
    def obs_dim(self):
        return int(self.embedding.shape[1])

    @property
    def num_actions(self):
        return self.graph.num_actions

    def fingerprint(self):
        return hashlib.sha256(container.dumps("dataset", self.header, self._arrays())).hexdigest()[:16]

    def _arrays(self):
        arrays = dict(self.graph.to_arrays())
        arrays["embedding"] = self.embedding
        arrays["traj.meta"] = np.array(
            [[t.id, t.task, t.start_state, t.goal_state, t.horizon] for t in self.trajectories],
            dtype=np.int64).reshape(-1, 5)
        arrays["traj.actions"] = np.concatenate([t.actions for t in self.trajectories]) \
            if self.trajectories else np.zeros(0, dtype=np.int64)
        arrays["traj.states"] = np.concatenate([t.states for t in self.trajectories]) \
            if self.trajectories else np.zeros(0, dtype=np.int64)
        arrays["traj.observations"] = np.concatenate([t.observations for t in self.trajectories]) \
            if self.trajectories else np.zeros((0, self.obs_dim))
        arrays["split"] = np.asarray(self.split, dtype=np.int64)
        return arrays

    def save(self, path):
        meta = dict(self.header, schema=DATASET_SCHEMA)
        return container.save(path, "dataset", meta, self._arrays())

    @classmethod
    def load(cls, path):
        meta, arrays = container.load(path, kind="dataset")
        if meta.get("schema") != DATASET_SCHEMA:
            raise container.VersionMismatchError(
                f"dataset schema {meta.get('schema')}, this build reads {DATASET_SCHEMA}")
        header = {k: v for k, v in meta.items() if k != "schema"}
        graph = TaskGraph.from_arrays(arrays, header["seed"])
        trajs, a_off, s_off = [], 0, 0
        for tid, task, start, goal, T in arrays["traj.meta"]:
            trajs.append(Trajectory(
                int(tid), int(task), int(start), int(goal),
                arrays["traj.actions"][a_off:a_off + T].copy(),
                arrays["traj.states"][s_off:s_off + T + 1].copy(),
                arrays["traj.observations"][s_off:s_off + T + 1].copy(),
            ))
            a_off += T
            s_off += T + 1
        return cls(header, graph, arrays["embedding"], trajs, arrays["split"])


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_dataset(seed=0, num_states=20, num_actions=8, num_tasks=2, obs_dim=64, sigma=0.05,
                     horizons=(3,), num_trajectories=500, train_fraction=0.7,
                     actions_per_task=None, jumps=DEFAULT_JUMPS, max_resamples=1000):
    """Build a task family, sample expert demonstrations and split them.

    Each trajectory gets its own seed derived from ``(seed, index)``, so the
    result does not depend on generation order.
    """
    horizons = tuple(int(h) for h in horizons)
    if not horizons or min(horizons) < 1:
        raise ValueError("horizons must be positive")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    graph = generate_task_family(seed, num_states, num_actions, num_tasks, actions_per_task, jumps)
    emb_rng = np.random.default_rng([seed, 1])
    embedding = emb_rng.standard_normal((num_states, obs_dim))
    trajs = []
    for i in range(num_trajectories):
        rng = np.random.default_rng([seed, 2, i])
        for _ in range(max_resamples):
            T = horizons[rng.integers(len(horizons))]
            start = int(rng.integers(num_states))
            dist = graph.distances_from(start)
            goals = sorted(s for s, d in dist.items() if d == T)
            if goals:
                goal = goals[rng.integers(len(goals))]
                break
        else:
            raise GenerationError(f"no start/goal pair at distance {horizons}")
        trajs.append(expert_trajectory(graph, start, goal, T, embedding, sigma,
                                       noise_seed=[seed, 3, i], traj_id=i))
    n_train = int(round(train_fraction * num_trajectories))
    order = np.random.default_rng([seed, 4]).permutation(num_trajectories)
    split = np.zeros(num_trajectories, dtype=np.int64)
    split[order[:n_train]] = 1
    header = {
        "seed": int(seed), "num_states": num_states, "num_actions": num_actions,
        "num_tasks": num_tasks, "obs_dim": obs_dim, "sigma": float(sigma),
        "horizons": list(horizons), "num_trajectories": num_trajectories,
        "train_fraction": float(train_fraction), "jumps": list(jumps),
        "actions_per_task": actions_per_task,
    }
    header["config_hash"] = config_hash(header)
    return Dataset(header, graph, embedding, trajs, split)


def brute_force_plans(graph, start, goal, T):
    """All ``|A|**T`` sequences checked by replay. Independent of :func:`oracle_plan`."""
    return {seq for seq in itertools.product(range(graph.num_actions), repeat=T)
            if graph.replay(start, seq) == goal}


def stack_trajectories(trajs):
    """``(obs (B, T+1, D), actions (B, T))`` for trajectories sharing a horizon."""
    horizons = {t.horizon for t in trajs}
    if len(horizons) != 1:
        raise ValueError(f"mixed horizons {sorted(horizons)}")
    return (np.stack([t.observations for t in trajs]), np.stack([t.actions for t in trajs]))


def group_by_horizon(trajs):
    groups = {}
    for t in trajs:
        groups.setdefault(t.horizon, []).append(t)
    return dict(sorted(groups.items()))
