"""Teacher-forced imitation training with Adam, checkpoints and resume."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from . import numcore as nc
from .envgen import group_by_horizon, stack_trajectories
from .model import ModelConfig, PlaTeModel, training_loss

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr, batch_size and epochs must be positive")


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    model: PlaTeModel
    adam: nc.AdamState
    epoch: int = 0
    history: list = field(default_factory=list)
    best_test_loss: float = math.inf
    best_params: dict | None = None

    @property
    def step(self):
        return self.adam.step


def make_batches(trajs, batch_size, rng):
    """Shuffled same-horizon batches; deterministic given ``rng``."""
    batches = []
    for _, group in group_by_horizon(trajs).items():
        idx = rng.permutation(len(group))
        for i in range(0, len(group), batch_size):
            batches.append([group[j] for j in idx[i:i + batch_size]])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def dataset_loss(model, trajs, batch_size=256):
    """Mean per-trajectory teacher-forced loss, no dropout, no graph."""
    if not trajs:
        return math.nan
    total, n = 0.0, 0
    with nc.no_grad():
        for _, group in group_by_horizon(trajs).items():
            for i in range(0, len(group), batch_size):
                chunk = group[i:i + batch_size]
                obs, acts = stack_trajectories(chunk)
                total += float(training_loss(model, obs, acts).data) * len(chunk)
                n += len(chunk)
    return total / n


def new_state(model_config: ModelConfig, train_config: TrainConfig):
    return TrainState(PlaTeModel(model_config), nc.AdamState(lr=train_config.lr))


def train(state: TrainState, train_trajs, config: TrainConfig, test_trajs=None,
          epochs=None, on_epoch=None):
    """Run ``epochs`` more epochs (default: up to ``config.epochs``) in place.

    Epoch ``e`` shuffles with seed ``(seed, e)`` and step ``k`` draws dropout
    noise from ``(seed, k)``, so resuming from a saved state reproduces an
    uninterrupted run bit-for-bit.
    """
    if not train_trajs:
        raise ValueError("no training trajectories")
    model = state.model
    params = {k: p.data for k, p in model.named_parameters()}
    target = config.epochs if epochs is None else state.epoch + epochs
    while state.epoch < target:
        rng = np.random.default_rng([config.seed, state.epoch])
        losses = []
        for batch in make_batches(train_trajs, config.batch_size, rng):
            obs, acts = stack_trajectories(batch)
            drop_rng = np.random.default_rng([config.seed, 1, state.adam.step])
            model.zero_grad()
            loss = training_loss(model, obs, acts, rng=drop_rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise nc.NumericError(f"loss became {value} at step {state.adam.step}")
            loss.backward()
            grads = {k: p.grad for k, p in model.named_parameters()}
            nc.adam_step(params, grads, state.adam)
            losses.append(value * len(batch))
        state.epoch += 1
        row = {"epoch": state.epoch, "step": state.adam.step,
               "train_loss": sum(losses) / len(train_trajs),
               "test_loss": dataset_loss(model, test_trajs) if test_trajs else math.nan}
        state.history.append(row)
        if test_trajs and row["test_loss"] < state.best_test_loss:
            state.best_test_loss = row["test_loss"]
            state.best_params = model.state_dict()
        log.info("epoch %d step %d train %.5f test %.5f", row["epoch"], row["step"],
                 row["train_loss"], row["test_loss"])
        if on_epoch is not None:
            on_epoch(state, row)
    return state


def save_checkpoint(path, state: TrainState, meta=None, params=None):
    """Write config, parameters, optimizer moments and history.

    ``params`` overrides the live parameters (used for best-by-test files).
    """
    model = state.model
    arrays = {f"param/{k}": v for k, v in (params or model.state_dict()).items()}
    for k in sorted(state.adam.m):
        arrays[f"adam.m/{k}"] = state.adam.m[k]
        arrays[f"adam.v/{k}"] = state.adam.v[k]
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "model": model.config.to_dict(),
        "adam": {"lr": state.adam.lr, "beta1": state.adam.beta1, "beta2": state.adam.beta2,
                 "eps": state.adam.eps, "step": state.adam.step},
        "epoch": state.epoch,
        "history": state.history,
        "best_test_loss": state.best_test_loss if math.isfinite(state.best_test_loss) else None,
        "meta": meta or {},
    }
    return container.save(path, "checkpoint", header, arrays)


def load_checkpoint(path):
    """Returns ``(TrainState, meta)``."""
    header, arrays = container.load(path, kind="checkpoint")
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise container.VersionMismatchError(
            f"checkpoint schema {header.get('schema')}, this build reads {CHECKPOINT_SCHEMA}")
    model = PlaTeModel(ModelConfig.from_dict(header["model"]))
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    a = header["adam"]
    adam = nc.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    for k, v in arrays.items():
        if k.startswith("adam.m/"):
            adam.m[k[7:]] = v
        elif k.startswith("adam.v/"):
            adam.v[k[7:]] = v
    best = header.get("best_test_loss")
    state = TrainState(model, adam, header["epoch"], header["history"],
                       math.inf if best is None else best)
    return state, header.get("meta", {})


def train_config_dict(config: TrainConfig):
    return asdict(config)
