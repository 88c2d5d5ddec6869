"""Twin action/state sequence models with a shared observation encoder.

Token layout (both transformers share one positional scheme)::

    action model h: [goal, s_1, a_0, s_2, a_1, ..., s_t, a_{t-1}]
    state model  g: [goal, s_1, a_1, s_2, a_2, ..., s_t, a_t]

``a_0`` is the BOS row of the action table. The output of ``h`` at the
token holding ``a_{t-1}`` gives the logits of ``a_t``; the output of ``g``
at the token holding ``a_t`` gives the prediction of ``s_{t+1}``. With a
causal mask both read only their own prefix, so a whole teacher-forced
sequence is scored in one pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numcore as nc
from .attention import CAUSAL, AttentionConfig, TransformerStack, sinusoidal_positions
from .layers import MLP, Embedding, Linear, Module

TRANSFORMER = "transformer"
FC = "fc"


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int = 64
    n_actions: int = 8
    latent_dim: int = 32
    encoder_hidden: int = 64
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    backbone: str = TRANSFORMER
    fc_hidden: int = 128
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in (TRANSFORMER, FC):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if min(self.obs_dim, self.n_actions, self.latent_dim, self.encoder_hidden) < 1:
            raise ValueError("model dimensions must be positive")
        if isinstance(self.attention, dict):
            object.__setattr__(self, "attention", AttentionConfig(**self.attention))

    @property
    def bos(self):
        return self.n_actions

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["attention"] = AttentionConfig(**d.get("attention", {}))
        return cls(**d)


@dataclass
class PlanStep:
    t: int
    latent: np.ndarray
    action_id: int
    action_logits: np.ndarray


class _SequenceHead(Module):
    """One transformer (``h`` or ``g``) plus its output heads."""

    def __init__(self, rng, config: ModelConfig, out_dim):
        att = config.attention
        self.state_proj = Linear(rng, config.latent_dim, att.d_model)
        self.stack = TransformerStack(rng, att)
        self.heads = [Linear(rng, att.d_model, out_dim) for _ in range(att.n_future_heads)]

    def encode_sequence(self, goal, states, action_tokens, rng=None):
        """``goal`` (B, d_s), ``states`` (B, t, d_s), ``action_tokens`` (B, t, d_model)."""
        B, t, _ = states.shape
        d = action_tokens.shape[-1]
        s_tok = nc.reshape(self.state_proj(states), (B, t, 1, d))
        a_tok = nc.reshape(action_tokens, (B, t, 1, d))
        pairs = nc.reshape(nc.concat([s_tok, a_tok], axis=2), (B, 2 * t, d))
        g_tok = nc.reshape(self.state_proj(goal), (B, 1, d))
        seq = nc.concat([g_tok, pairs], axis=1)
        seq = nc.add_mask(seq, sinusoidal_positions(2 * t + 1, d))
        return self.stack(seq, rng)


class _FCHead(Module):
    def __init__(self, rng, config: ModelConfig, out_dim):
        d_in = 2 * config.latent_dim + config.attention.d_model
        self.mlp = MLP(rng, [d_in, config.fc_hidden, out_dim], config.leaky_slope)

    def __call__(self, goal, states, action_tokens):
        B, t, _ = states.shape
        goal_rep = nc.take(nc.reshape(goal, (B, 1, goal.shape[-1])), np.zeros(t, dtype=np.int64), axis=1)
        return self.mlp(nc.concat([states, action_tokens, goal_rep], axis=-1))


class PlaTeModel(Module):
    """Encoder ``f``, action model ``h`` and state model ``g`` with their parameters."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = MLP(rng, [config.obs_dim, config.encoder_hidden, config.latent_dim],
                           config.leaky_slope)
        self.action_embedding = Embedding(rng, config.n_actions + 1, config.attention.d_model)
        if config.backbone == TRANSFORMER:
            self.h = _SequenceHead(rng, config, config.n_actions)
            self.g = _SequenceHead(rng, config, config.latent_dim)
        else:
            self.h = _FCHead(rng, config, config.n_actions)
            self.g = _FCHead(rng, config, config.latent_dim)

    @property
    def n_actions(self):
        return self.config.n_actions

    @property
    def is_causal(self):
        return self.config.backbone == FC or self.config.attention.attention_kind == CAUSAL

    # ------------------------------------------------------------------
    # differentiable pieces
    # ------------------------------------------------------------------

    def f(self, obs):
        obs = nc.as_tensor(obs)
        if obs.shape[-1] != self.config.obs_dim:
            raise nc.ShapeError(f"observation dim {obs.shape[-1]} != {self.config.obs_dim}")
        return self.encoder(obs)

    def _h_outputs(self, goal, states, prev_actions, rng=None):
        """Per-position action logits, list over future heads, each (B, t, |A|)."""
        a_tok = self.action_embedding(prev_actions)
        if self.config.backbone == FC:
            return [self.h(goal, states, a_tok)]
        return self._heads_at_actions(self.h, goal, states, a_tok, rng)

    def _g_outputs(self, goal, states, actions, rng=None):
        a_tok = self.action_embedding(actions)
        if self.config.backbone == FC:
            return [self.g(goal, states, a_tok)]
        return self._heads_at_actions(self.g, goal, states, a_tok, rng)

    def _heads_at_actions(self, head, goal, states, a_tok, rng):
        t = states.shape[1]
        hidden = head.encode_sequence(goal, states, a_tok, rng)
        if self.is_causal:
            sel = nc.take(hidden, np.arange(2, 2 * t + 1, 2), axis=1)
            return [lin(sel) for lin in head.heads]
        # full attention: only the last position may be read
        last = nc.take(hidden, np.array([2 * t]), axis=1)
        return [lin(last) for lin in head.heads]

    def teacher_forced_outputs(self, obs, actions, rng=None):
        """Encode a batch of expert trajectories and score every step.

        ``obs`` is (B, T+1, D) where the last observation is the goal;
        ``actions`` is (B, T). Returns a list of
        ``(head_offset, step_index, logits, state_pred)`` tuples together with
        the encoded expert latents (B, T+1, d_s). ``step_index`` is the
        0-based index of the first step covered and ``head_offset`` the
        future-head number.
        """
        obs = nc.as_tensor(obs)
        actions = np.asarray(actions, dtype=np.int64)
        if obs.ndim != 3 or actions.ndim != 2 or obs.shape[1] != actions.shape[1] + 1:
            raise nc.ShapeError(f"obs {obs.shape} does not match actions {actions.shape}")
        B, T = actions.shape
        if B == 0 or T == 0:
            raise ValueError("empty batch")
        latents = self.f(obs)
        goal = nc.reshape(nc.take(latents, np.array([T]), axis=1), (B, self.config.latent_dim))
        states = nc.take(latents, np.arange(T), axis=1)
        prev = np.concatenate([np.full((B, 1), self.config.bos), actions[:, :-1]], axis=1)
        if self.is_causal:
            logits = self._h_outputs(goal, states, prev, rng)[0]
            preds = self._g_outputs(goal, states, actions, rng)[0]
            return [(0, 0, logits, preds)], latents
        outs = []
        for t in range(1, T + 1):
            st = nc.take(states, np.arange(t), axis=1)
            lh = self._h_outputs(goal, st, prev[:, :t], rng)
            lg = self._g_outputs(goal, st, actions[:, :t], rng)
            for j, (lo, pr) in enumerate(zip(lh, lg)):
                if t + j <= T:
                    outs.append((j, t - 1 + j, lo, pr))
        return outs, latents

    # ------------------------------------------------------------------
    # inference interface shared with the planner
    # ------------------------------------------------------------------

    def encode(self, obs):
        with nc.no_grad():
            return self.f(np.asarray(obs, dtype=nc.DTYPE)).data.copy()

    def action_logits(self, states, prev_actions, goal):
        """Logits of ``a_t`` given ``s_1..s_t``, ``a_1..a_{t-1}`` and the goal.

        Batched: ``states`` (B, t, d_s), ``prev_actions`` (B, t-1) ints,
        ``goal`` (B, d_s). Returns (B, |A|).
        """
        states = np.asarray(states, dtype=nc.DTYPE)
        goal = np.asarray(goal, dtype=nc.DTYPE)
        B, t, _ = states.shape
        if t < 1:
            raise ValueError("action prediction needs at least one state")
        prev_actions = np.asarray(prev_actions, dtype=np.int64).reshape(B, t - 1)
        prev = np.concatenate([np.full((B, 1), self.config.bos), prev_actions], axis=1)
        with nc.no_grad():
            out = self._h_outputs(goal, states, prev)[0]
            return out.data[:, -1, :].copy()

    def next_state(self, states, actions, goal):
        """Prediction of ``s_{t+1}`` given ``s_1..s_t``, ``a_1..a_t`` and the goal."""
        states = np.asarray(states, dtype=nc.DTYPE)
        goal = np.asarray(goal, dtype=nc.DTYPE)
        B, t, _ = states.shape
        actions = np.asarray(actions, dtype=np.int64)
        if actions.ndim != 2 or actions.shape != (B, t):
            raise ValueError(f"state prediction needs a_t for every state: got {actions.shape} for {t} states")
        with nc.no_grad():
            out = self._g_outputs(goal, states, actions)[0]
            return out.data[:, -1, :].copy()

    def rollout(self, o_1, o_T, T, decode="greedy", beam=None):
        """Plan ``T`` actions from start observation ``o_1`` towards goal ``o_T``."""
        from .planner import BeamConfig, beam_search, greedy_search

        if T < 1:
            raise ValueError("horizon must be at least 1")
        s1 = self.encode(np.asarray(o_1)[None])[0]
        goal = self.encode(np.asarray(o_T)[None])[0]
        if decode == "greedy":
            hyp = greedy_search(self, s1, goal, T)
        elif decode == "beam":
            hyp = beam_search(self, s1, goal, T, beam or BeamConfig(n_max=T))
        else:
            raise ValueError(f"unknown decode mode {decode!r}")
        return [PlanStep(t=i + 1, latent=hyp.latents[i], action_id=int(a),
                         action_logits=hyp.logits[i])
                for i, a in enumerate(hyp.actions)]

    # ------------------------------------------------------------------
    # parameter access
    # ------------------------------------------------------------------

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in params.items():
            a = np.asarray(arrays[k], dtype=nc.DTYPE)
            if a.shape != p.shape:
                raise nc.ShapeError(f"{k}: stored {a.shape} vs model {p.shape}")
            p.data = a.copy()

    def clone(self):
        other = PlaTeModel(self.config)
        other.load_state_dict(self.state_dict())
        return other

    def with_config(self, **changes):
        return PlaTeModel(replace(self.config, **changes))


def plate_objective(logits, actions, state_pred, state_target):
    """Per-step imitation loss: mean squared state error plus action cross-entropy.

    ``logits`` (N, |A|), ``actions`` (N,), ``state_pred``/``state_target``
    (N, d_s). Returns ``(state_term, action_term)`` as scalar tensors.
    """
    return nc.mse(state_pred, state_target), nc.cross_entropy(logits, actions)


def training_loss(model: PlaTeModel, obs, actions, rng=None, return_parts=False):
    """Teacher-forced loss summed over the horizon and averaged over the batch.

    For every step ``t = 1..T`` the action model is scored on the expert
    action and the state model's prediction of ``s_{t+1}`` is compared to
    the encoded expert observation (the goal observation at ``t = T``).
    Gradients reach the encoder through both the inputs and the targets.
    """
    obs = np.asarray(obs, dtype=nc.DTYPE)
    actions = np.asarray(actions, dtype=np.int64)
    if obs.ndim != 3 or obs.shape[0] == 0:
        raise ValueError("training_loss needs a non-empty batch of trajectories")
    outputs, latents = model.teacher_forced_outputs(obs, actions, rng)
    B, T = actions.shape
    d_s = model.config.latent_dim
    state_terms, action_terms = [], []
    for _, start, logits, pred in outputs:
        n = logits.shape[1]
        steps = np.arange(start, start + n)
        target = nc.take(latents, steps + 1, axis=1)
        s_term, a_term = plate_objective(
            nc.reshape(logits, (B * n, model.n_actions)),
            actions[:, steps].reshape(-1),
            nc.reshape(pred, (B * n, d_s)),
            nc.reshape(target, (B * n, d_s)),
        )
        # the mean over B*n rows times n is the sum over steps of batch means
        state_terms.append(nc.scale(s_term, n))
        action_terms.append(nc.scale(a_term, n))
    s_total = nc.add_scalars(state_terms)
    a_total = nc.add_scalars(action_terms)
    loss = nc.add(s_total, a_total)
    if return_parts:
        return loss, float(s_total.data), float(a_total.data)
    return loss
