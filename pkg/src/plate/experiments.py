"""Train/evaluate harness shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .envgen import Dataset
from .estimators import RetrievalPlanner, baseline_random
from .evaluation import compounding_error, evaluate_plans
from .model import FC, TRANSFORMER, ModelConfig, PlaTeModel
from .planner import BeamConfig, beam_search, greedy_search
from .training import TrainConfig, new_state, train

log = logging.getLogger(__name__)


def plan_all(model: PlaTeModel, trajectories, decode="greedy", beam: BeamConfig | None = None):
    plans = []
    for tr in trajectories:
        s1, goal = model.encode(np.stack([tr.start_obs, tr.goal_obs]))
        if decode == "greedy":
            hyp = greedy_search(model, s1, goal, tr.horizon)
        else:
            hyp = beam_search(model, s1, goal, tr.horizon, beam or BeamConfig())
        plans.append(hyp.actions)
    return plans


def decode_label(decode, beam):
    if decode == "greedy":
        return "greedy"
    return f"beam(k={beam.beam_width},N={beam.n_extensions})"


def evaluate_model(model, dataset: Dataset, trajectories=None, method="plate", decode="greedy",
                   beam=None, seed=None):
    trajectories = dataset.test() if trajectories is None else trajectories
    beam = beam or BeamConfig()
    plans = plan_all(model, trajectories, decode, beam)
    return evaluate_plans(f"{method}/{decode_label(decode, beam)}", plans, trajectories,
                          dataset.graph, seed=seed, n_params=model.num_parameters())


def evaluate_baselines(dataset: Dataset, encoder=None, seed=0, trajectories=None):
    """Random and retrieval baselines on the test split."""
    test = dataset.test() if trajectories is None else trajectories
    train_set = dataset.train()
    rng = np.random.default_rng(seed)
    random_plans = [baseline_random(dataset.num_actions, t.horizon, rng) for t in test]
    rb = RetrievalPlanner(encoder).fit([t.observations for t in train_set],
                                       [t.actions for t in train_set])
    rb_plans = [rb.predict(np.stack([t.start_obs, t.goal_obs])[None], t.horizon)[0] for t in test]
    return [
        evaluate_plans("random", random_plans, test, dataset.graph, seed=seed),
        evaluate_plans("retrieval", rb_plans, test, dataset.graph, seed=seed),
    ]


def train_model(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig):
    state = new_state(model_config, train_config)
    train(state, dataset.train(), train_config, dataset.test())
    return state


def beam_sweep(model, dataset, widths=(1, 2, 3), n_extensions=3, seed=None):
    """Greedy row plus one beam row per width, all on the same checkpoint."""
    reports = [evaluate_model(model, dataset, decode="greedy", seed=seed)]
    for k in widths:
        n = 1 if k == 1 else n_extensions
        reports.append(evaluate_model(model, dataset, decode="beam", seed=seed,
                                      beam=BeamConfig(beam_width=k, n_extensions=n)))
    return reports


def baseline_fc_transition(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
                           beam=None, curve_horizon=None):
    """Same data, loss and optimiser as the transformer model, MLP backbones instead.

    Returns ``(report, state)``; the report carries the parameter count and,
    when ``curve_horizon`` is given, the compounding-error curve.
    """
    state = train_model(dataset, replace(model_config, backbone=FC), train_config)
    report = evaluate_model(state.model, dataset, method="fc", decode="beam" if beam else "greedy",
                            beam=beam, seed=train_config.seed)
    if curve_horizon:
        report.compounding_error = compounding_error(state.model, dataset.test(), curve_horizon)
    return report, state


def compounding_study(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig, T):
    """Train transformer and FC variants on the same data; return both curves."""
    curves = {}
    for backbone in (TRANSFORMER, FC):
        state = train_model(dataset, replace(model_config, backbone=backbone), train_config)
        curves[backbone] = compounding_error(state.model, dataset.test(), T)
        log.info("%s compounding error: %s", backbone, curves[backbone])
    return curves
