import math

import numpy as np
import pytest

from ncg import model as M
from ncg import signals as S
from ncg import train as T
from ncg.rng import stream
from ncg.train import TrainConfig


def small_spec():
    return M.noise_default(hidden=4)


def small_data(seed=0, n=4000):
    return S.gen_mixture(S.NoiseSpec.ar1(cos_theta=0.9), S.NoiseSpec("gaussian"), 400, n, stream(seed, "d"))


CFG = TrainConfig(epochs=2, batch_size=1000, chunk_length=200, seed=3)


# -- Adam ------------------------------------------------------------------------------

def test_first_adam_step_moves_by_lr():
    cfg = TrainConfig(lr=0.1)
    p = {"w": np.array([1.0, -2.0])}
    mom = {"m": {}, "v": {}}
    T.adam_step(p, {"w": np.array([1.0, 1.0])}, mom, 1, cfg)
    np.testing.assert_allclose(p["w"], [0.9, -2.1], atol=1e-7)


def test_adam_matches_reference_recursion():
    cfg = TrainConfig(lr=0.01, beta1=0.8, beta2=0.99, eps_adam=1e-8)
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(5, 3))
    p = {"w": np.zeros(3)}
    mom = {"m": {}, "v": {}}
    m = v = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(grads, 1):
        T.adam_step(p, {"w": g}, mom, t, cfg)
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    p = {"w": np.zeros(2)}
    with pytest.raises(FloatingPointError, match="'w'"):
        T.adam_step(p, {"w": np.array([np.nan, 0.0])}, {"m": {}, "v": {}}, 1, TrainConfig())
    np.testing.assert_array_equal(p["w"], 0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(precision="f16")
    assert TrainConfig(batch_size=50_000, chunk_length=1000).chunks_per_batch == 50
    assert T.har_config().chunk_length == 120


# -- chunks ----------------------------------------------------------------------------

def test_make_chunks_are_contiguous_and_disjoint():
    x = np.arange(1050.0)
    c = T.make_chunks(x, 100)
    assert c.shape == (10, 1, 100)
    np.testing.assert_array_equal(c.reshape(-1), x[:1000])
    mc = T.make_chunks(np.stack([x, -x]), 100)
    np.testing.assert_array_equal(mc[3, 1], -x[300:400])
    with pytest.raises(ValueError, match="shorter than one chunk"):
        T.make_chunks(x[:50], 100)


def test_chunk_shorter_than_model_window_is_an_error():
    state = M.build(small_spec(), stream(0))
    with pytest.raises(ValueError, match="minimum window"):
        T.train(state, small_data(), TrainConfig(epochs=1, chunk_length=50, batch_size=100))


# -- training loop ------------------------------------------------------------------------

def test_training_is_reproducible(tmp_path):
    data = small_data()
    runs = []
    for i in range(2):
        state = M.build(small_spec(), stream(1, "init"))
        log = T.train(state, data, CFG, test=small_data(1), checkpoint=tmp_path / f"c{i}.npz")
        runs.append((log, (tmp_path / f"c{i}.npz").read_bytes()))
    assert [r.train_q for r in runs[0][0].records] == [r.train_q for r in runs[1][0].records]
    assert runs[0][1] == runs[1][1]


def test_training_reduces_q():
    data = small_data(n=20_000)
    state = M.build(small_spec(), stream(2, "init"))
    log = T.train(state, data, TrainConfig(epochs=8, batch_size=2000, chunk_length=200, lr=1e-2, seed=0))
    assert log.records[-1].train_q < log.records[0].train_q


def test_resume_continues_the_epoch_counter(tmp_path):
    data = small_data()
    ck = tmp_path / "ck.npz"
    state = M.build(small_spec(), stream(4, "init"))
    T.train(state, data, CFG, checkpoint=ck)
    resumed = M.load(ck)
    assert resumed.epoch == 2 and resumed.optimizer["t"] == state.optimizer["t"]
    log = T.train(resumed, data, CFG)
    assert [r.epoch for r in log.records] == [2, 3]

    straight = M.build(small_spec(), stream(4, "init"))
    T.train(straight, data, TrainConfig(**{**CFG.__dict__, "epochs": 4}))
    for k in straight.params:
        assert straight.params[k].data.tobytes() == resumed.params[k].data.tobytes()


def test_divergence_returns_last_good_state():
    data = small_data()
    state = M.build(small_spec(), stream(5, "init"))
    calls = []

    def poison(st, rec):
        calls.append(rec.epoch)
        if rec.epoch == 0:
            st.params["T.0.kernel"].data[...] = np.nan

    with pytest.raises(T.DivergenceError) as err:
        T.train(state, data, CFG, callback=poison)
    assert err.value.state.epoch == 1
    assert len(err.value.log.records) == 1


def test_run_log_csv_round_trip(tmp_path):
    log = T.RunLog([T.EpochRecord(0, -0.1, 0.02, 1.5), T.EpochRecord(1, -0.2, None, 1.25)])
    log.to_csv(tmp_path / "r.csv")
    back = T.RunLog.from_csv(tmp_path / "r.csv")
    assert back.records[0].train_q == -0.1 and back.records[1].test_q is None
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "epoch,train_Q,test_Q,seconds"
    assert "wall_seconds" not in log.summary(include_time=False)


def test_evaluate_q_leaves_running_stats_untouched():
    state = M.build(small_spec(), stream(6, "init"))
    T.train(state, small_data(), TrainConfig(epochs=1, batch_size=1000, chunk_length=200))
    before = {k: (v.mean.copy(), v.steps) for k, v in state.bn.items()}
    T.evaluate_q(state, T.make_chunks(small_data(2).samples, 200), 5, mode="train")
    for k, (mean, steps) in before.items():
        assert state.bn[k].steps == steps
        np.testing.assert_array_equal(state.bn[k].mean, mean)


@pytest.mark.parametrize("K", [2, 5, 20])
def test_uniform_state_sits_exactly_at_zero(K):
    state = T.uniform_state(M.noise_default(hidden=4, K=K))
    x = stream(7).normal(size=(3, 1, 300))
    _, _, q = M.ncg_forward(state, x, "train")
    assert abs(float(q.data)) < 1e-9


def test_float32_training_runs():
    state = M.build(small_spec(), stream(8, "init"))
    log = T.train(state, small_data(), TrainConfig(epochs=1, batch_size=1000, chunk_length=200, precision="f32"))
    assert state.dtype == np.float32 and math.isfinite(log.records[0].train_q)
