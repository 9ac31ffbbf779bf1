import numpy as np
import pytest

from ilash.encoding import encode, task_features
from ilash.graph import build_base, default_bounds
from ilash.heuristic import SearchError, ilash_heu
from ilash.predictive import ilash_pred
from ilash.surrogate import DecisionTreeSurrogate, LinearSurrogate, ReplaySurrogate
from ilash.trainer import ReplayEvaluator, TrainConfig


class CountingTrainer:
    def __init__(self):
        self.train_calls = 0

    def train(self, model, data, cfg, trainable=None, tasks=None):
        self.train_calls += 1
        return model


class ConstantSurrogate:
    kind = "const"

    def __init__(self, value):
        self.value = value

    def predict_one(self, features):
        assert len(features) == 15
        return self.value


def test_pred_matches_replayed_heuristic(template11, small_data):
    tasks = small_data.task_list
    rng = np.random.default_rng(3)
    ev = ReplayEvaluator({(t, d): float(rng.uniform(0.2, 1.0)) for t in (2, 3) for d in range(20)})
    heu = ilash_heu(template11, small_data, tasks, evaluator=ev)
    sur = ReplaySurrogate().fit_records(heu.dataset)
    pred = ilash_pred(template11, sur, small_data, tasks, trainer=CountingTrainer())
    assert pred.chosen_depths() == heu.chosen_depths()
    assert pred.trainer_calls == 1
    assert pred.surrogate_calls == len(heu.dataset)


def test_constant_prediction_picks_first(template11, small_data):
    tasks = small_data.task_list[:2]
    t = CountingTrainer()
    res = ilash_pred(template11, ConstantSurrogate(0.5), small_data, tasks, trainer=t)
    assert res.chosen_depths() == {2: 2}
    assert t.train_calls == 1


def test_nonpositive_predictions_fall_back(template11, small_data):
    tasks = small_data.task_list[:2]
    with pytest.warns(RuntimeWarning):
        res = ilash_pred(template11, ConstantSurrogate(-1.0), small_data, tasks,
                         trainer=CountingTrainer())
    base = build_base(template11, tasks[0])
    assert res.chosen_depths()[2] == default_bounds(base)[1]


def test_surrogate_sees_task_and_layer_features(template11, small_data):
    tasks = small_data.task_list[:2]
    seen = []

    class Spy(ConstantSurrogate):
        def predict_one(self, features):
            seen.append(tuple(features))
            return 0.5

    ilash_pred(template11, Spy(0.5), small_data, tasks, trainer=CountingTrainer())
    base = build_base(template11, tasks[0])
    assert seen[0] == task_features(tasks[1]) + encode(base, 2)


def test_width_mismatch_is_search_error(template11, small_data):
    sur = LinearSurrogate().fit(np.random.default_rng(0).normal(size=(20, 3)), np.zeros(20))
    with pytest.raises(SearchError):
        ilash_pred(template11, sur, small_data, small_data.task_list,
                   trainer=CountingTrainer())


def test_final_joint_training_runs(template11, small_data):
    X = np.random.default_rng(0).normal(size=(30, 15))
    sur = DecisionTreeSurrogate().fit(X, np.linspace(0, 1, 30))
    res = ilash_pred(template11, sur, small_data, small_data.task_list,
                     cfg=TrainConfig(epochs=1))
    assert set(res.model.heads) == {1, 2, 3}
    assert res.surrogate_kind == "decision_tree"
