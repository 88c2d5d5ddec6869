"""scikit-learn style planners.

All planners share one data convention:

* ``fit(X, y)``: ``X`` holds expert observation sequences, each of shape
  ``(T + 1, n_features)`` whose last row is the goal observation; ``y``
  holds the matching expert action sequences of length ``T``. Either a
  3-D array (common ``T``) or a list of 2-D arrays (mixed horizons).
* ``predict(X, horizon)``: ``X`` is ``(n, 2, n_features)`` start/goal
  observation pairs; returns an ``(n, T)`` integer array of plans (or a
  list when horizons differ).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import numcore as nc
from .attention import AttentionConfig
from .envgen import Trajectory
from .evaluation import top1_accuracy
from .model import TRANSFORMER, ModelConfig, PlaTeModel
from .planner import BeamConfig, beam_search, greedy_search
from .training import TrainConfig, TrainState, train


def check_trajectories(X, y, n_features=None):
    """Validate expert sequences; returns lists of float and int arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if isinstance(y, np.ndarray) and y.ndim == 2:
        y = list(y)
    X, y = list(X), list(y)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sequences but y has {len(y)}")
    if not X:
        raise ValueError("no training sequences")
    obs, acts = [], []
    for o, a in zip(X, y):
        o = check_array(o, dtype=np.float64)
        a = np.asarray(a, dtype=np.int64).reshape(-1)
        if o.shape[0] != a.shape[0] + 1 or a.shape[0] < 1:
            raise ValueError(f"sequence with {o.shape[0]} observations needs {o.shape[0] - 1} actions, got {a.shape[0]}")
        if n_features is not None and o.shape[1] != n_features:
            raise ValueError(f"X has {o.shape[1]} features, expected {n_features}")
        if a.min() < 0:
            raise ValueError("action ids must be non-negative")
        obs.append(o)
        acts.append(a)
    if len({o.shape[1] for o in obs}) != 1:
        raise ValueError("inconsistent feature count across sequences")
    return obs, acts


def check_pairs(X, n_features=None):
    """Validate ``(n, 2, n_features)`` start/goal observation pairs."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim == 2 and X.shape[0] == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != 2:
        raise ValueError(f"expected (n, 2, n_features) start/goal pairs, got {X.shape}")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"X has {X.shape[2]} features, expected {n_features}")
    return X


def _horizons(horizon, n):
    h = np.broadcast_to(np.asarray(horizon, dtype=np.int64), (n,))
    if (h < 1).any():
        raise ValueError("horizon must be at least 1")
    return h


def _pack(plans):
    if len({len(p) for p in plans}) <= 1:
        return np.asarray(plans, dtype=np.int64).reshape(len(plans), -1)
    return [np.asarray(p, dtype=np.int64) for p in plans]


def _as_trajectories(obs, acts):
    return [Trajectory(i, -1, -1, -1, a, np.full(len(o), -1), o)
            for i, (o, a) in enumerate(zip(obs, acts))]


class PlaTePlanner(BaseEstimator):
    """Goal-conditioned procedure planner with twin transformers.

    The encoder maps observations to latents, the action model proposes the
    next action and the state model predicts the next latent. Training is
    teacher-forced imitation of the expert sequences; planning uses greedy
    or discrepancy-constrained beam decoding.
    """

    def __init__(self, n_actions=None, latent_dim=32, encoder_hidden=64, d_model=32, heads=4,
                 layers=2, attention_kind="causal", future_n=None, dropout=0.1,
                 backbone=TRANSFORMER, fc_hidden=128, lr=1e-4, batch_size=32, epochs=200,
                 decode="beam", beam_width=2, n_extensions=3, goal_weight=0.0, random_state=0):
        self.n_actions = n_actions
        self.latent_dim = latent_dim
        self.encoder_hidden = encoder_hidden
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.attention_kind = attention_kind
        self.future_n = future_n
        self.dropout = dropout
        self.backbone = backbone
        self.fc_hidden = fc_hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.decode = decode
        self.beam_width = beam_width
        self.n_extensions = n_extensions
        self.goal_weight = goal_weight
        self.random_state = random_state

    def _model_config(self, n_features, n_actions):
        return ModelConfig(
            obs_dim=n_features, n_actions=n_actions, latent_dim=self.latent_dim,
            encoder_hidden=self.encoder_hidden,
            attention=AttentionConfig(self.d_model, self.heads, self.layers, self.attention_kind,
                                      self.future_n, self.dropout),
            backbone=self.backbone, fc_hidden=self.fc_hidden, seed=int(self.random_state or 0))

    def _train_config(self):
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           seed=int(self.random_state or 0))

    def beam_config(self):
        return BeamConfig(self.beam_width, self.n_extensions, None, self.goal_weight)

    def fit(self, X, y, X_val=None, y_val=None):
        obs, acts = check_trajectories(X, y)
        n_features = obs[0].shape[1]
        n_actions = self.n_actions or int(max(a.max() for a in acts)) + 1
        if max(a.max() for a in acts) >= n_actions:
            raise ValueError(f"action id outside [0, {n_actions})")
        val = None
        if X_val is not None:
            vo, va = check_trajectories(X_val, y_val, n_features)
            val = _as_trajectories(vo, va)
        state = TrainState(PlaTeModel(self._model_config(n_features, n_actions)),
                           nc.AdamState(lr=self.lr))
        train(state, _as_trajectories(obs, acts), self._train_config(), val)
        self._set_fitted(state)
        return self

    def _set_fitted(self, state):
        self.train_state_ = state
        self.model_ = state.model
        self.history_ = state.history
        self.n_features_in_ = state.model.config.obs_dim
        self.n_actions_ = state.model.config.n_actions
        return self

    @classmethod
    def from_model(cls, model: PlaTeModel, state=None, **params):
        """Wrap an already trained model (e.g. loaded from a checkpoint)."""
        c = model.config
        a = c.attention
        est = cls(n_actions=c.n_actions, latent_dim=c.latent_dim, encoder_hidden=c.encoder_hidden,
                  d_model=a.d_model, heads=a.heads, layers=a.layers, attention_kind=a.attention_kind,
                  future_n=a.future_n, dropout=a.dropout, backbone=c.backbone,
                  fc_hidden=c.fc_hidden, random_state=c.seed)
        est.set_params(**params)
        return est._set_fitted(state or TrainState(model, nc.AdamState()))

    def transform(self, X):
        """Latent states ``f(o)`` for observations of shape ``(n, n_features)``."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.encode(X)

    def plan(self, o_1, o_T, T, decode=None):
        """Full hypothesis (actions, latents, logits, discrepancy gaps) for one problem."""
        check_is_fitted(self, "model_")
        s1, goal = self.model_.encode(np.stack([o_1, o_T]))
        mode = decode or self.decode
        if mode == "greedy":
            return greedy_search(self.model_, s1, goal, int(T))
        if mode == "beam":
            return beam_search(self.model_, s1, goal, int(T), self.beam_config())
        raise ValueError(f"unknown decode mode {mode!r}")

    def predict(self, X, horizon=3, decode=None):
        check_is_fitted(self, "model_")
        X = check_pairs(X, self.n_features_in_)
        hs = _horizons(horizon, len(X))
        return _pack([self.plan(p[0], p[1], h, decode).actions for p, h in zip(X, hs)])

    def score(self, X, y):
        """Top-1 accuracy of the plans for start/goal pairs ``X`` against ``y``."""
        y = [np.asarray(a).reshape(-1) for a in y]
        plans = self.predict(X, [len(a) for a in y])
        return top1_accuracy(plans, y)


class RetrievalPlanner(BaseEstimator):
    """Nearest-neighbour baseline.

    Stores ``(f(o_1), f(o_goal))`` keys of the training sequences and, for a
    query pair, returns the expert actions of the closest key (Euclidean).
    Ties go to the lowest training index. When a horizon is requested only
    training sequences of that length are considered, if any exist.
    """

    def __init__(self, encoder=None):
        self.encoder = encoder

    def _encode(self, obs):
        return obs if self.encoder is None else np.asarray(self.encoder(obs), dtype=np.float64)

    def fit(self, X, y):
        obs, acts = check_trajectories(X, y)
        starts = np.stack([o[0] for o in obs])
        goals = np.stack([o[-1] for o in obs])
        self.keys_ = np.concatenate([self._encode(starts), self._encode(goals)], axis=1)
        self.actions_ = acts
        self.horizons_ = np.array([len(a) for a in acts])
        self.n_features_in_ = obs[0].shape[1]
        return self

    def kneighbors(self, X, horizon=None):
        check_is_fitted(self, "keys_")
        X = check_pairs(X, self.n_features_in_)
        q = np.concatenate([self._encode(X[:, 0]), self._encode(X[:, 1])], axis=1)
        out = []
        hs = [None] * len(X) if horizon is None else _horizons(horizon, len(X))
        for row, h in zip(q, hs):
            d = ((self.keys_ - row) ** 2).sum(axis=1)
            if h is not None and (self.horizons_ == h).any():
                d = np.where(self.horizons_ == h, d, np.inf)
            out.append(int(np.argmin(d)))
        return np.asarray(out)

    def predict(self, X, horizon=None):
        return _pack([self.actions_[i] for i in self.kneighbors(X, horizon)])


class RandomPlanner(BaseEstimator):
    """Uniformly random actions, reproducible through ``random_state``."""

    def __init__(self, n_actions=None, random_state=0):
        self.n_actions = n_actions
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.n_actions is not None:
            self.n_actions_ = int(self.n_actions)
        else:
            _, acts = check_trajectories(X, y)
            self.n_actions_ = int(max(a.max() for a in acts)) + 1
        return self

    def predict(self, X, horizon=3):
        check_is_fitted(self, "n_actions_")
        X = check_pairs(X)
        rng = np.random.default_rng(self.random_state)
        return _pack([rng.integers(self.n_actions_, size=h) for h in _horizons(horizon, len(X))])


def baseline_random(n_actions, T, rng):
    """One uniformly random plan of length ``T``."""
    return [int(a) for a in rng.integers(n_actions, size=T)]


def baseline_retrieval(o_1, o_T, train_trajectories, encoder=None, horizon=None):
    """Expert actions of the nearest training ``(start, goal)`` pair."""
    if not train_trajectories:
        raise ValueError("retrieval needs a non-empty training set")
    rb = RetrievalPlanner(encoder).fit([t.observations for t in train_trajectories],
                                       [t.actions for t in train_trajectories])
    return [int(a) for a in rb.predict(np.stack([o_1, o_T])[None], horizon)[0]]
