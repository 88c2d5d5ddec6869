import numpy as np
import pytest

from plate import numcore as nc
from plate.attention import AttentionConfig
from plate.model import FC, ModelConfig, PlaTeModel, training_loss
from plate.planner import BeamConfig, beam_search, greedy_search
from plate.training import TrainConfig, load_checkpoint, new_state, save_checkpoint


def tiny_config(**kw):
    att = kw.pop("attention", AttentionConfig(d_model=8, heads=2, layers=1, dropout=0.0))
    base = dict(obs_dim=6, n_actions=3, latent_dim=4, encoder_hidden=5, attention=att, fc_hidden=7)
    base.update(kw)
    return ModelConfig(**base)


def toy_batch(seed=0, B=2, T=3, D=6, A=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, T + 1, D)), rng.integers(A, size=(B, T))


def test_encoder_is_deterministic_and_sensitive():
    model = PlaTeModel(tiny_config())
    o = np.random.default_rng(0).normal(size=(3, 6))
    a, b = model.encode(o), model.encode(o)
    assert a.shape == (3, 4)
    assert np.array_equal(a, b)
    o2 = o.copy()
    o2[1, 2] += 1.0
    c = model.encode(o2)
    assert np.array_equal(c[[0, 2]], a[[0, 2]])
    assert not np.array_equal(c[1], a[1])


def test_encoder_rejects_wrong_dimension():
    with pytest.raises(nc.ShapeError):
        PlaTeModel(tiny_config()).encode(np.zeros((2, 5)))


def test_same_seed_same_weights():
    a, b = PlaTeModel(tiny_config()), PlaTeModel(tiny_config())
    for k, v in a.state_dict().items():
        assert np.array_equal(v, b.state_dict()[k])
    c = PlaTeModel(tiny_config(seed=1))
    assert any(not np.array_equal(v, c.state_dict()[k]) for k, v in a.state_dict().items())


@pytest.mark.parametrize("backbone", ["transformer", FC])
def test_inference_shapes(backbone):
    model = PlaTeModel(tiny_config(backbone=backbone))
    rng = np.random.default_rng(1)
    states, goal = rng.normal(size=(5, 2, 4)), rng.normal(size=(5, 4))
    assert model.action_logits(states, rng.integers(3, size=(5, 1)), goal).shape == (5, 3)
    assert model.next_state(states, rng.integers(3, size=(5, 2)), goal).shape == (5, 4)
    with pytest.raises(ValueError):
        model.next_state(states, rng.integers(3, size=(5, 1)), goal)


def test_teacher_forced_logits_match_incremental_queries():
    """One causal pass over the whole sequence equals step-by-step prefix calls."""
    model = PlaTeModel(tiny_config())
    obs, acts = toy_batch()
    with nc.no_grad():
        outs, lat = model.teacher_forced_outputs(obs, acts)
    (_, _, logits, preds), = outs
    lat = lat.data
    goal = lat[:, -1]
    for t in range(1, 4):
        lo = model.action_logits(lat[:, :t], acts[:, :t - 1], goal)
        np.testing.assert_allclose(lo, logits.data[:, t - 1], atol=1e-12)
        sp = model.next_state(lat[:, :t], acts[:, :t], goal)
        np.testing.assert_allclose(sp, preds.data[:, t - 1], atol=1e-12)


def test_action_logits_ignore_future_actions():
    model = PlaTeModel(tiny_config())
    obs, acts = toy_batch(1)
    with nc.no_grad():
        base = model.teacher_forced_outputs(obs, acts)[0][0][2].data
        acts2 = acts.copy()
        acts2[:, 2] = (acts2[:, 2] + 1) % 3
        other = model.teacher_forced_outputs(obs, acts2)[0][0][2].data
    np.testing.assert_array_equal(base, other)


@pytest.mark.parametrize("backbone", ["transformer", FC])
def test_loss_gradient_matches_finite_differences(backbone):
    model = PlaTeModel(tiny_config(backbone=backbone))
    obs, acts = toy_batch(2)
    params = list(model.parameters().values())
    err = nc.grad_check(lambda *_: training_loss(model, obs, acts), params)
    assert err < 1e-4


def test_full_attention_gradient_and_shapes():
    att = AttentionConfig(d_model=8, heads=2, layers=1, attention_kind="full", future_n=2, dropout=0.0)
    model = PlaTeModel(tiny_config(attention=att))
    obs, acts = toy_batch(3)
    outs, _ = model.teacher_forced_outputs(obs, acts)
    # 3 main-head steps plus 2 second-head steps
    assert sorted((j, s) for j, s, *_ in outs) == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2)]
    params = list(model.parameters().values())
    assert nc.grad_check(lambda *_: training_loss(model, obs, acts), params) < 1e-4
    assert model.action_logits(np.zeros((1, 2, 4)), [[1]], np.zeros((1, 4))).shape == (1, 3)


def test_loss_is_sum_over_steps():
    model = PlaTeModel(tiny_config())
    obs, acts = toy_batch(4)
    with nc.no_grad():
        loss, s_part, a_part = training_loss(model, obs, acts, return_parts=True)
        outs, lat = model.teacher_forced_outputs(obs, acts)
    (_, _, logits, preds), = outs
    lat = lat.data
    expected = 0.0
    for t in range(3):
        lp = nc.log_softmax_np(logits.data[:, t])
        expected += -np.mean(lp[np.arange(2), acts[:, t]])
        expected += np.mean((preds.data[:, t] - lat[:, t + 1]) ** 2)
    assert float(loss.data) == pytest.approx(expected, abs=1e-12)
    assert s_part + a_part == pytest.approx(expected, abs=1e-12)


def test_loss_decreases_with_adam():
    state = new_state(tiny_config(), TrainConfig(lr=1e-2))
    model = state.model
    obs, acts = toy_batch(5, B=4)
    params = {k: p.data for k, p in model.named_parameters()}
    losses = []
    for _ in range(10):
        model.zero_grad()
        loss = training_loss(model, obs, acts)
        loss.backward()
        losses.append(float(loss.data))
        nc.adam_step(params, {k: p.grad for k, p in model.named_parameters()}, state.adam)
    assert losses[-1] < losses[0]


def test_dropout_only_with_rng():
    att = AttentionConfig(d_model=8, heads=2, layers=1, dropout=0.5)
    model = PlaTeModel(tiny_config(attention=att))
    obs, acts = toy_batch(6)
    a = float(training_loss(model, obs, acts).data)
    assert a == float(training_loss(model, obs, acts).data)
    b = float(training_loss(model, obs, acts, rng=np.random.default_rng(0)).data)
    assert a != b


def test_greedy_equals_beam_width_one():
    model = PlaTeModel(tiny_config())
    rng = np.random.default_rng(7)
    for _ in range(5):
        s1, goal = rng.normal(size=4), rng.normal(size=4)
        g = greedy_search(model, s1, goal, 4)
        b = beam_search(model, s1, goal, 4, BeamConfig(beam_width=1, n_extensions=1))
        assert g.actions == b.actions
        assert g.score == pytest.approx(b.score, abs=1e-12)


def test_rollout_steps_and_checkpoint_round_trip(tmp_path):
    state = new_state(tiny_config(), TrainConfig())
    model = state.model
    rng = np.random.default_rng(8)
    o1, oT = rng.normal(size=6), rng.normal(size=6)
    steps = model.rollout(o1, oT, 3, decode="beam", beam=BeamConfig(2, 2))
    assert [s.t for s in steps] == [1, 2, 3]
    assert all(s.action_logits.shape == (3,) for s in steps)
    save_checkpoint(tmp_path / "m.plte", state)
    loaded, _ = load_checkpoint(tmp_path / "m.plte")
    again = loaded.model.rollout(o1, oT, 3, decode="beam", beam=BeamConfig(2, 2))
    for a, b in zip(steps, again):
        assert a.action_id == b.action_id
        assert np.array_equal(a.latent, b.latent)
        assert np.array_equal(a.action_logits, b.action_logits)


def test_rollout_validates_arguments():
    model = PlaTeModel(tiny_config())
    with pytest.raises(ValueError):
        model.rollout(np.zeros(6), np.zeros(6), 0)
    with pytest.raises(ValueError):
        model.rollout(np.zeros(6), np.zeros(6), 2, decode="sample")


def test_config_round_trip_and_validation():
    cfg = tiny_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        tiny_config(backbone="lstm")
    with pytest.raises(ValueError):
        tiny_config(latent_dim=0)


def test_load_state_dict_rejects_mismatch():
    model = PlaTeModel(tiny_config())
    sd = model.state_dict()
    sd.pop(next(iter(sd)))
    with pytest.raises(KeyError):
        model.load_state_dict(sd)
