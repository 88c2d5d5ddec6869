import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from plate.envgen import generate_dataset
from plate.estimators import (
    PlaTePlanner,
    RandomPlanner,
    RetrievalPlanner,
    baseline_retrieval,
    check_pairs,
    check_trajectories,
)

TINY = dict(latent_dim=4, encoder_hidden=8, d_model=8, heads=2, layers=1, dropout=0.0,
            epochs=3, batch_size=8, lr=1e-3)


@pytest.fixture(scope="module")
def data():
    ds = generate_dataset(seed=0, num_states=10, num_actions=4, obs_dim=6, horizons=(2, 3),
                          num_trajectories=40)
    train = ds.train()
    return ds, [t.observations for t in train], [t.actions for t in train]


@pytest.fixture(scope="module")
def fitted(data):
    _, X, y = data
    return PlaTePlanner(n_actions=4, **TINY).fit(X, y)


def test_params_round_trip():
    est = PlaTePlanner(beam_width=3)
    params = est.get_params()
    assert params["beam_width"] == 3 and params["decode"] == "beam"
    other = clone(est)
    assert other.get_params() == params
    other.set_params(layers=4)
    assert other.layers == 4 and est.layers == 2


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        PlaTePlanner().predict(np.zeros((1, 2, 3)))
    with pytest.raises(NotFittedError):
        RetrievalPlanner().predict(np.zeros((1, 2, 3)))


def test_fit_records_history_and_shapes(fitted):
    assert len(fitted.history_) == 3
    assert fitted.n_features_in_ == 6 and fitted.n_actions_ == 4
    assert fitted.transform(np.zeros((5, 6))).shape == (5, 4)


def test_predict_shapes(fitted, data):
    ds = data[0]
    X = np.stack([[t.start_obs, t.goal_obs] for t in ds.test()])
    out = fitted.predict(X, horizon=3)
    assert out.shape == (len(X), 3) and out.dtype == np.int64
    assert ((0 <= out) & (out < 4)).all()
    mixed = fitted.predict(X[:2], horizon=[2, 3])
    assert [len(p) for p in mixed] == [2, 3]
    assert np.array_equal(fitted.predict(X, 3, decode="greedy"), fitted.predict(X, 3, decode="greedy"))
    assert 0.0 <= fitted.score(X, [t.actions for t in ds.test()]) <= 1.0


def test_plan_exposes_hypothesis(fitted):
    hyp = fitted.plan(np.zeros(6), np.ones(6), 3)
    assert len(hyp.actions) == 3 and len(hyp.latents) == 4 and len(hyp.gaps) == 3
    with pytest.raises(ValueError):
        fitted.plan(np.zeros(6), np.ones(6), 3, decode="nucleus")


def test_fit_is_reproducible(data):
    _, X, y = data
    a = PlaTePlanner(n_actions=4, **TINY).fit(X, y)
    b = PlaTePlanner(n_actions=4, **TINY).fit(X, y)
    assert [r["train_loss"] for r in a.history_] == [r["train_loss"] for r in b.history_]


def test_from_model_wraps_trained_model(fitted):
    est = PlaTePlanner.from_model(fitted.model_, decode="greedy")
    assert est.decode == "greedy" and est.layers == 1
    X = np.random.default_rng(0).normal(size=(3, 2, 6))
    assert np.array_equal(est.predict(X, 2), fitted.predict(X, 2, decode="greedy"))


def test_validation_helpers():
    obs, acts = check_trajectories(np.zeros((2, 4, 3)), np.zeros((2, 3), dtype=int))
    assert len(obs) == 2 and acts[0].dtype == np.int64
    with pytest.raises(ValueError):
        check_trajectories(np.zeros((2, 4, 3)), np.zeros((2, 2), dtype=int))
    with pytest.raises(ValueError):
        check_trajectories([np.zeros((3, 2)), np.zeros((3, 4))], [[0, 1], [0, 1]])
    with pytest.raises(ValueError):
        check_trajectories([np.zeros((2, 2))], [[-1]])
    with pytest.raises(ValueError):
        check_trajectories([np.full((2, 2), np.nan)], [[0]])
    assert check_pairs(np.zeros((2, 5))).shape == (1, 2, 5)
    with pytest.raises(ValueError):
        check_pairs(np.zeros((4, 3, 5)))
    with pytest.raises(ValueError):
        check_pairs(np.zeros((4, 2, 5)), n_features=6)


def test_fit_rejects_out_of_range_actions(data):
    _, X, y = data
    with pytest.raises(ValueError):
        PlaTePlanner(n_actions=2, **TINY).fit(X, y)


def test_retrieval_nearest_neighbour_and_ties():
    X = np.array([[[0.0], [0.0], [1.0]], [[0.0], [0.0], [1.0]], [[5.0], [5.0], [5.0]]])
    y = np.array([[1, 2], [3, 0], [2, 2]])
    rb = RetrievalPlanner().fit(X, y)
    assert rb.kneighbors(np.array([[[0.1], [0.9]]])).tolist() == [0]  # tie goes to lowest index
    assert rb.predict(np.array([[[4.0], [6.0]]])).tolist() == [[2, 2]]
    obs = X[2]
    assert baseline_retrieval(obs[0], obs[-1], [_T(o, a) for o, a in zip(X, y)]) == [2, 2]


class _T:
    def __init__(self, o, a):
        self.observations, self.actions = o, a


def test_retrieval_prefers_matching_horizon():
    X = [np.zeros((3, 1)), np.ones((4, 1))]
    y = [[0, 0], [1, 1, 1]]
    rb = RetrievalPlanner().fit(X, y)
    q = np.zeros((1, 2, 1))
    assert rb.predict(q).tolist() == [[0, 0]]
    assert rb.predict(q, horizon=3).tolist() == [[1, 1, 1]]


def test_retrieval_with_encoder():
    rb = RetrievalPlanner(encoder=lambda o: -o).fit(np.zeros((1, 3, 2)), [[1, 0]])
    assert rb.keys_.shape == (1, 4)


def test_random_planner_seeded():
    X = np.zeros((6, 2, 1))
    a = RandomPlanner(5, random_state=3).fit().predict(X, 4)
    b = RandomPlanner(5, random_state=3).fit().predict(X, 4)
    assert np.array_equal(a, b) and a.shape == (6, 4) and a.max() < 5
    assert RandomPlanner().fit(np.zeros((1, 3, 1)), [[0, 6]]).n_actions_ == 7
