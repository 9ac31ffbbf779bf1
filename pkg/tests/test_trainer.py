import numpy as np
import pytest

from ilash.graph import TaskInfo, branch, build_base, conv, dense, flatten, pool
from ilash.trainer import (MiniTrainer, MultiTaskDataset, ReplayEvaluator, TrainConfig,
                           TrainingError, load_dataset, read_tensor, save_dataset, score,
                           split_indices, synth_dataset, train, write_tensor)


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1, 1, 4))
    w = np.array([1.0, -2.0, 0.5, 1.5])
    y = (X.reshape(n, 4) @ w > 0).astype(int)
    task = TaskInfo(1, "classification", 2, (1, 1, 4))
    return MultiTaskDataset(X, {1: y}, {1: task}, split_indices(n, seed=seed)), task


def test_split_sizes():
    s = split_indices(100)
    assert [len(s[k]) for k in ("train", "val", "test")] == [70, 10, 20]
    allidx = np.concatenate(list(s.values()))
    assert sorted(allidx.tolist()) == list(range(100))
    with pytest.raises(ValueError):
        split_indices(0)


def test_dense_net_learns_separable_data():
    data, task = separable()
    m = build_base([flatten(), dense(8)], task)
    m, hist = train(m, data, TrainConfig(learning_rate=0.01, epochs=50))
    assert score(m, data, "train", task) >= 0.95
    assert hist[-1] < hist[0]


def test_joint_training_reduces_loss(small_data):
    tasks = small_data.task_list
    m = build_base([conv(4, 3), pool(), flatten(), dense(8)], tasks[0])
    m = branch(m, 2, tasks[1])
    _, hist = train(m, small_data, TrainConfig(learning_rate=0.01, epochs=8), tasks=[1, 2])
    assert hist[-1] < hist[0]


def test_frozen_layers_untouched(small_data):
    tasks = small_data.task_list
    m = build_base([conv(4, 3), pool(), flatten(), dense(8)], tasks[0])
    b = branch(m, 1, tasks[1])
    new = b.branch_layers[2]
    trained, _ = train(b, small_data, TrainConfig(epochs=2), trainable=new, tasks=[2])
    for lid in b.params:
        same = all(np.array_equal(trained.params[lid][k], b.params[lid][k]) for k in b.params[lid])
        assert same == (lid not in new or not b.params[lid])
    # inputs are never mutated
    assert trained.params[0] is b.params[0]


def test_training_is_seed_deterministic(small_data):
    t = small_data.task_list[0]
    m = build_base([conv(2, 3), flatten(), dense(4)], t)
    a, ha = train(m, small_data, TrainConfig(epochs=2, seed=3))
    b, hb = train(m, small_data, TrainConfig(epochs=2, seed=3))
    assert ha == hb
    assert np.array_equal(a.params[0]["W"], b.params[0]["W"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_raises(small_data):
    t = small_data.task_list[1]
    m = build_base([flatten(), dense(4)], t)
    with pytest.raises(TrainingError):
        train(m, small_data, TrainConfig(learning_rate=1e30, epochs=3, optimizer="sgd"))


def test_shape_mismatch(small_data):
    m = build_base([flatten(), dense(4)], TaskInfo(1, "classification", 4, (4, 4, 1)))
    with pytest.raises(ValueError):
        train(m, small_data, TrainConfig(epochs=1))


def test_synth_dataset_properties():
    a = synth_dataset(samples=100, seed=5)
    b = synth_dataset(samples=100, seed=5)
    assert np.array_equal(a.X, b.X)
    assert all(np.array_equal(a.targets[t], b.targets[t]) for t in a.targets)
    assert [len(a.splits[s]) for s in ("train", "val", "test")] == [70, 10, 20]
    kinds = [(t.kind.value, t.num_outputs) for t in a.task_list]
    assert kinds == [("classification", 4), ("regression", 1), ("classification", 1)]
    with pytest.raises(ValueError):
        synth_dataset(samples=0)
    with pytest.raises(ValueError):
        synth_dataset(tasks=5)
    with pytest.raises(ValueError):
        synth_dataset(h=6)


@pytest.mark.parametrize("tid", [1, 2, 3])
def test_each_task_is_solvable_alone(tid):
    data = synth_dataset(samples=400, seed=0)
    task = data.tasks[tid]
    m = build_base([conv(8, 3), pool(), flatten(), dense(16)], task)
    m, _ = train(m, data, TrainConfig(learning_rate=0.01, epochs=15), tasks=[tid])
    assert score(m, data, "val", task) > 0.8


def test_tensor_and_dataset_io(tmp_path, small_data):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    write_tensor(tmp_path / "t.bin", arr)
    assert np.array_equal(read_tensor(tmp_path / "t.bin"), arr)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "bad.bin")
    save_dataset(small_data, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert np.allclose(back.X, small_data.X, atol=1e-6)
    assert all(np.array_equal(back.splits[s], small_data.splits[s]) for s in small_data.splits)
    assert back.tasks == small_data.tasks
    save_dataset(small_data, tmp_path / "e")
    for name in ("meta.json", "inputs.bin", "task_1.bin"):
        assert (tmp_path / "d" / name).read_bytes() == (tmp_path / "e" / name).read_bytes()


def test_replay_evaluator(template5, small_data):
    tasks = small_data.task_list
    m = build_base(template5, tasks[0])
    ev = ReplayEvaluator({(2, 3): 0.7})
    b = branch(m, 3, tasks[1])
    assert ev.train(b, small_data, TrainConfig()) is b
    assert ev.score(b, small_data, "val", tasks[1]) == 0.7
    with pytest.raises(KeyError):
        ev.score(branch(m, 2, tasks[1]), small_data, "val", tasks[1])
    with pytest.raises(KeyError):
        ev.score(m, small_data, "val", tasks[0])


def test_mini_trainer_counts(small_data):
    t = small_data.task_list[0]
    mt = MiniTrainer()
    m = mt.train(build_base([flatten(), dense(4)], t), small_data, TrainConfig(epochs=1))
    mt.score(m, small_data, "val", t)
    assert (mt.train_calls, mt.score_calls) == (1, 1)
    assert len(mt.history_) == 1
