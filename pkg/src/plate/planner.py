"""Discrepancy-constrained beam search over action sequences.

The planner talks to any model exposing::

    n_actions
    action_logits(states (B,t,d), prev_actions (B,t-1), goal (B,d)) -> (B, |A|)
    next_state(states (B,t,d), actions (B,t), goal (B,d)) -> (B, d)

Hypotheses are scored by the cumulative action log-probability only; the
predicted latents advance the context but never enter the score unless a
goal-distance weight is configured.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .numcore import log_softmax_np


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 2
    n_extensions: int = 3
    n_max: int | None = None
    goal_weight: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.n_extensions < 1:
            raise ValueError("n_extensions must be >= 1")


@dataclass
class BeamHypothesis:
    score: float
    actions: list = field(default_factory=list)
    latents: list = field(default_factory=list)
    logits: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    finished: bool = False

    @property
    def discrepancies(self):
        """Number of steps where a non-argmax token was chosen."""
        return sum(1 for g in self.gaps if g > 0.0)


@dataclass
class SearchTrace:
    """Counters collected during one search."""

    expansions: int = 0
    hypotheses_scored: int = 0
    max_rank: int = 0
    live_per_step: list = field(default_factory=list)


def discrepancy_gap(logits, chosen):
    """``max_a log p(a) - log p(chosen)`` for one step's logits (>= 0)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= chosen < logits.shape[-1]:
        raise IndexError(f"action {chosen} outside [0, {logits.shape[-1]})")
    logp = log_softmax_np(logits)
    return float(max(0.0, logp.max() - logp[chosen]))


def token_ranks(logits):
    """1-based rank of every token under the (descending logit, ascending id) order."""
    order = np.lexsort((np.arange(len(logits)), -np.asarray(logits)))
    ranks = np.empty(len(logits), dtype=np.int64)
    ranks[order] = np.arange(1, len(logits) + 1)
    return ranks


def admissible_extensions(logits, N):
    """The ``N`` most probable tokens; ties go to the lower action id."""
    if N < 1:
        raise ValueError("N must be >= 1")
    logits = np.asarray(logits, dtype=np.float64)
    order = np.lexsort((np.arange(len(logits)), -logits))
    return [int(a) for a in order[:N]]


def _rank_key(h, goal, goal_weight):
    bonus = 0.0
    if goal_weight:
        bonus = -goal_weight * float(np.mean((h.latents[-1] - goal) ** 2))
    return (-(h.score + bonus), tuple(h.actions))


def _extend(model, hyps, goal, config, trace):
    """Expand every live hypothesis by its admissible one-token extensions."""
    states = np.stack([np.stack(h.latents) for h in hyps])
    prev = np.array([h.actions for h in hyps], dtype=np.int64).reshape(len(hyps), -1)
    goals = np.repeat(goal[None], len(hyps), axis=0)
    logits = model.action_logits(states, prev, goals)
    children = []
    for h, lo in zip(hyps, logits):
        logp = log_softmax_np(lo)
        ranks = token_ranks(lo)
        for a in admissible_extensions(lo, config.n_extensions):
            children.append((h, a, lo, float(logp[a]), int(ranks[a]), float(logp.max() - logp[a])))
    trace.expansions += len(hyps)
    if not children:
        return []
    # advance the latent context of every child in one batch
    c_states = np.stack([np.stack(h.latents) for h, *_ in children])
    c_actions = np.array([h.actions + [a] for h, a, *_ in children], dtype=np.int64)
    nxt = model.next_state(c_states, c_actions, np.repeat(goal[None], len(children), axis=0))
    out = []
    for (h, a, lo, lp, rank, gap), s_next in zip(children, nxt):
        out.append(BeamHypothesis(
            score=h.score + lp,
            actions=h.actions + [a],
            latents=h.latents + [s_next],
            logits=h.logits + [np.asarray(lo).copy()],
            ranks=h.ranks + [rank],
            gaps=h.gaps + [max(0.0, gap)],
        ))
        trace.max_rank = max(trace.max_rank, rank)
    trace.hypotheses_scored += len(out)
    return out


def beam_search(model, s1, goal, T, config: BeamConfig = BeamConfig(), trace=None,
                return_all=False):
    """Plan ``T`` actions from latent ``s1`` towards latent ``goal``.

    Each step expands every live hypothesis with its top-``n_extensions``
    tokens, scores them by cumulative log-probability and keeps the best
    ``beam_width``. Hypotheses that reached the horizon are carried over
    unchanged. Ties are broken by the lexicographically smaller action
    prefix. Returns the best hypothesis (or the final beam when
    ``return_all``).
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n_max = config.n_max if config.n_max is not None else T
    if T > n_max:
        raise ValueError(f"horizon {T} exceeds n_max={n_max}")
    trace = trace if trace is not None else SearchTrace()
    s1 = np.asarray(s1, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    beam = [BeamHypothesis(score=0.0, latents=[s1])]
    for _ in range(T):
        done = [h for h in beam if h.finished]
        live = [h for h in beam if not h.finished]
        candidates = done + (_extend(model, live, goal, config, trace) if live else [])
        for h in candidates:
            h.finished = len(h.actions) >= T
        candidates.sort(key=lambda h: _rank_key(h, goal, config.goal_weight))
        beam = candidates[:config.beam_width]
        trace.live_per_step.append(len(beam))
    beam.sort(key=lambda h: _rank_key(h, goal, config.goal_weight))
    return beam if return_all else beam[0]


def greedy_search(model, s1, goal, T):
    """Argmax decoding: at every step take the single most probable action."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    h = BeamHypothesis(score=0.0, latents=[np.asarray(s1, dtype=np.float64)])
    goal = np.asarray(goal, dtype=np.float64)
    for _ in range(T):
        lo = model.action_logits(np.stack(h.latents)[None], np.array([h.actions], dtype=np.int64),
                                 goal[None])[0]
        logp = log_softmax_np(lo)
        a = int(np.argmax(lo))
        h.actions.append(a)
        h.logits.append(lo)
        h.score += float(logp[a])
        h.ranks.append(1)
        h.gaps.append(0.0)
        s_next = model.next_state(np.stack(h.latents)[None], np.array([h.actions], dtype=np.int64),
                                  goal[None])[0]
        h.latents.append(s_next)
    h.finished = True
    return h


def sequence_log_prob(model, s1, goal, actions):
    """Total log-probability the model assigns to a fixed action sequence."""
    latents = [np.asarray(s1, dtype=np.float64)]
    goal = np.asarray(goal, dtype=np.float64)
    total = 0.0
    for t, a in enumerate(actions):
        lo = model.action_logits(np.stack(latents)[None], np.array([list(actions[:t])], dtype=np.int64),
                                 goal[None])[0]
        total += float(log_softmax_np(lo)[a])
        latents.append(model.next_state(np.stack(latents)[None],
                                        np.array([list(actions[:t + 1])], dtype=np.int64), goal[None])[0])
    return total


def exhaustive_search(model, s1, goal, T):
    """Score all ``|A|**T`` sequences; return ``(best_sequence, best_score)``.

    Ties go to the lexicographically smallest sequence. Meant as a test
    oracle for small vocabularies and horizons.
    """
    best, best_score = None, -np.inf
    for seq in itertools.product(range(model.n_actions), repeat=T):
        score = sequence_log_prob(model, s1, goal, seq)
        if score > best_score:
            best, best_score = list(seq), score
    return best, best_score


class TableModel:
    """Model defined by explicit logit tables keyed on the action prefix.

    ``table`` maps a tuple of previous actions to a logits vector; prefixes
    not in the table fall back to ``default``. Latents are a fixed-size
    encoding of the prefix so that the planner's bookkeeping can be checked.
    Useful for building search instances with known answers.
    """

    def __init__(self, n_actions, table, default=None, latent_dim=4):
        self.n_actions = n_actions
        self.table = {tuple(k): np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.default = np.zeros(n_actions) if default is None else np.asarray(default, dtype=np.float64)
        self.latent_dim = latent_dim

    @classmethod
    def random(cls, rng, n_actions, T, scale=2.0):
        table = {}
        for t in range(T):
            for prefix in itertools.product(range(n_actions), repeat=t):
                table[prefix] = rng.normal(0.0, scale, size=n_actions)
        return cls(n_actions, table)

    def _logits(self, prefix):
        return self.table.get(tuple(int(a) for a in prefix), self.default)

    def action_logits(self, states, prev_actions, goal):
        prev_actions = np.asarray(prev_actions).reshape(len(states), -1)
        return np.stack([self._logits(p) for p in prev_actions])

    def next_state(self, states, actions, goal):
        out = np.zeros((len(states), self.latent_dim))
        for i, acts in enumerate(np.asarray(actions).reshape(len(states), -1)):
            out[i, 0] = len(acts)
            out[i, 1] = acts[-1]
        return out
