"""Plan-quality metrics, compounding-error curves and report emission."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

OFFLINE = "offline"
INTERACTIVE = "interactive"
REPORT_COLUMNS = ("metric", "horizon", "method", "value", "seed")


class MetricWarning(UserWarning):
    """A pair was scored by convention (length mismatch, two empty sets)."""


def _plans(xs):
    return [[int(a) for a in x] for x in xs]


def success_rate(plans, ground_truths, mode=OFFLINE, graph=None):
    """Fraction of successful plans.

    ``offline``: a plan succeeds iff it equals the expert sequence position by
    position; ``ground_truths`` are expert action sequences and a length
    mismatch counts as failure (with a :class:`MetricWarning`).

    ``interactive``: ``ground_truths`` are ``(start_state, goal_state)``
    pairs and a plan succeeds iff replaying it in ``graph`` ends at the goal.
    """
    plans = list(plans)
    ground_truths = list(ground_truths)
    if len(plans) != len(ground_truths):
        raise ValueError(f"{len(plans)} plans vs {len(ground_truths)} references")
    if not plans:
        return 0.0
    if mode == OFFLINE:
        hits = 0
        for p, g in zip(_plans(plans), _plans(ground_truths)):
            if len(p) != len(g):
                warnings.warn(f"plan length {len(p)} != reference length {len(g)}; scored as failure",
                              MetricWarning, stacklevel=2)
                continue
            hits += p == g
        return hits / len(plans)
    if mode == INTERACTIVE:
        if graph is None:
            raise ValueError("interactive success needs the task graph")
        hits = sum(graph.replay(int(s), p) == int(g) for p, (s, g) in zip(_plans(plans), ground_truths))
        return hits / len(plans)
    raise ValueError(f"unknown success mode {mode!r}")


def top1_accuracy(plans, ground_truths):
    """Per-step match fraction pooled over every action in the corpus."""
    hits = total = 0
    for p, g in zip(_plans(plans), _plans(ground_truths)):
        hits += sum(a == b for a, b in zip(p, g))
        total += len(g)
    return hits / total if total else 0.0


def iou(plan, ground_truth):
    a, b = {int(x) for x in plan}, {int(x) for x in ground_truth}
    if not a and not b:
        warnings.warn("IoU of two empty action sets defined as 1.0", MetricWarning, stacklevel=2)
        return 1.0
    return len(a & b) / len(a | b)


def miou(plans, ground_truths):
    """Mean over plans of the set IoU between planned and expert actions."""
    values = [iou(p, g) for p, g in zip(plans, ground_truths)]
    return float(np.mean(values)) if values else 0.0


def compounding_error(model, trajectories, T, decode="greedy", beam=None):
    """Mean squared latent error of the rolled-out state model, per step.

    From ``s_1 = f(o_1)`` the action model picks actions (greedy by
    default) and the state model predicts the next latent from its own
    previous predictions. At each ``t = 1..T`` the prediction is compared
    with ``f(o_t)`` of the expert trajectory. Returns ``[(t, mse), ...]``.
    """
    from .planner import BeamConfig, beam_search, greedy_search

    trajectories = [tr for tr in trajectories if tr.horizon >= T]
    if not trajectories:
        raise ValueError(f"no trajectory with horizon >= {T}")
    sq = np.zeros(T)
    for tr in trajectories:
        expert = model.encode(tr.observations[:T])
        goal = model.encode(tr.observations[-1:])[0]
        if decode == "greedy":
            hyp = greedy_search(model, expert[0], goal, T)
        else:
            hyp = beam_search(model, expert[0], goal, T, beam or BeamConfig(n_max=T))
        pred = np.stack(hyp.latents[:T])
        sq += ((pred - expert) ** 2).mean(axis=1)
    return [(t + 1, float(v / len(trajectories))) for t, v in enumerate(sq)]


@dataclass
class MetricsReport:
    method: str
    success_rate: float
    interactive_success_rate: float
    top1_accuracy: float
    miou: float
    n_plans: int
    per_horizon: dict = field(default_factory=dict)
    compounding_error: list = field(default_factory=list)
    n_params: int | None = None
    seed: int | None = None

    def rows(self):
        """Rows of the machine-readable schema ``metric,horizon,method,value,seed``."""
        out = []
        for name in ("success_rate", "interactive_success_rate", "top1_accuracy", "miou"):
            out.append((name, "all", self.method, getattr(self, name), self.seed))
        for h, m in sorted(self.per_horizon.items()):
            for name in ("success_rate", "interactive_success_rate", "top1_accuracy", "miou", "n_plans"):
                out.append((name, h, self.method, m[name], self.seed))
        for t, v in self.compounding_error:
            out.append((f"compounding_error_t{t}", "all", self.method, v, self.seed))
        if self.n_params is not None:
            out.append(("n_params", "all", self.method, self.n_params, self.seed))
        return out


def evaluate_plans(method, plans, trajectories, graph, seed=None, n_params=None):
    """Score plans against expert trajectories, overall and per horizon."""
    trajectories = list(trajectories)
    plans = list(plans)

    def block(ps, ts):
        experts = [t.actions for t in ts]
        return {
            "success_rate": success_rate(ps, experts, OFFLINE),
            "interactive_success_rate": success_rate(
                ps, [(t.start_state, t.goal_state) for t in ts], INTERACTIVE, graph),
            "top1_accuracy": top1_accuracy(ps, experts),
            "miou": miou(ps, experts),
            "n_plans": len(ts),
        }

    overall = block(plans, trajectories)
    per_h = {}
    for h in sorted({t.horizon for t in trajectories}):
        idx = [i for i, t in enumerate(trajectories) if t.horizon == h]
        per_h[h] = block([plans[i] for i in idx], [trajectories[i] for i in idx])
    return MetricsReport(method, overall["success_rate"], overall["interactive_success_rate"],
                         overall["top1_accuracy"], overall["miou"], len(plans), per_h,
                         n_params=n_params, seed=seed)


def reports_to_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        for row in r.rows():
            writer.writerow(row)
    return buf.getvalue()


def reports_to_table(reports):
    """Human-readable summary, one line per method."""
    head = f"{'method':<28}{'success':>9}{'interact':>10}{'top1':>8}{'mIoU':>8}{'n':>6}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.method:<28}{r.success_rate:>9.3f}{r.interactive_success_rate:>10.3f}"
                     f"{r.top1_accuracy:>8.3f}{r.miou:>8.3f}{r.n_plans:>6d}")
        for h, m in sorted(r.per_horizon.items()):
            lines.append(f"{'  T=' + str(h):<28}{m['success_rate']:>9.3f}"
                         f"{m['interactive_success_rate']:>10.3f}{m['top1_accuracy']:>8.3f}"
                         f"{m['miou']:>8.3f}{m['n_plans']:>6d}")
    return "\n".join(lines)


def is_non_decreasing(curve, tol=0.0):
    values = [v for _, v in curve]
    return all(b >= a - tol for a, b in zip(values, values[1:]))
