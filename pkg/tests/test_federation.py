import json

import numpy as np
import pytest

from fedwater.exceptions import DataError, NoEligibleClientsError
from fedwater.federation import (
    ClientUpdate,
    RoundConfig,
    TrainingLog,
    aggregate,
    local_update,
    make_client,
    monthly_load_delta,
    personalize,
    run_centralized,
    run_federated,
    select_clients,
    train_local,
)
from fedwater.ingest import Month, TimeSeries
from fedwater.lstm import ModelWeights, average_gradient, init_weights, sgd_step
from fedwater.series import WindowedDataset

from conftest import random_weights

START = Month(2013, 1)


def series(cid, values):
    return TimeSeries(cid, START, values)


def client_from(cid, values, split_at, lookback=3, hops=1):
    return make_client(series(cid, values), START + split_at, lookback, hops)


def upd(cid, flat, m):
    return ClientUpdate(cid, ModelWeights(1, np.full(14, flat, dtype=float)), m)


def seasonal(n, phase=0.0, base=10.0):
    t = np.arange(n)
    return base + 3 * np.sin(2 * np.pi * (t + phase) / 12)


def test_make_client_shapes_and_scaling():
    c = client_from("A", seasonal(36), 24, lookback=4, hops=2)
    assert c.m_s == 20 and len(c.test) == 12
    assert c.train_normalized.min() == 0.0 and c.train_normalized.max() == 1.0
    assert c.test_values.size == 12 and c.hops == 2
    assert c.test_start == Month(2015, 1)
    np.testing.assert_array_equal(c.seed_window, c.train_normalized[-4:])
    np.testing.assert_array_equal(c.test.inputs[0], c.seed_window)


def test_monthly_load_delta():
    const = client_from("C", np.full(30, 4.0), 24)
    assert monthly_load_delta(const) == 0.0
    values = np.concatenate([np.linspace(0, 10, 12), [2, 9, 4, 5, 6, 7, 5, 5, 5, 5, 5, 5], [1] * 6])
    c = client_from("V", values, 24)
    tail = c.train_normalized[-12:]
    assert monthly_load_delta(c, 12) == pytest.approx(tail.max() - tail.min())
    assert monthly_load_delta(c, 12) == pytest.approx(0.7)
    assert monthly_load_delta(c, 1000) == 1.0


def test_select_clients_filters_and_is_deterministic():
    clients = [client_from(f"B{k}", seasonal(30, phase=k), 24) for k in range(6)]
    clients.append(client_from("FLAT", np.full(30, 4.0), 24))
    cfg0 = RoundConfig(subset_size=7, threshold=0.0)
    picked = select_clients(clients, cfg0, 1)
    assert [c.client_id for c in picked] == [f"B{k}" for k in range(6)]
    cfg = RoundConfig(subset_size=3, threshold=0.05, rng_seed=5)
    for t in range(1, 30):
        ids = [c.client_id for c in select_clients(clients, cfg, t)]
        assert "FLAT" not in ids and len(ids) == 3 and ids == sorted(ids)
    a = select_clients(clients, cfg, 4)
    b = select_clients(list(reversed(clients)), cfg, 4)
    assert [c.client_id for c in a] == [c.client_id for c in b]


def test_select_post_filter_shrinks_subset():
    clients = [client_from("FLAT", np.full(30, 4.0), 24), client_from("S", seasonal(30), 24)]
    cfg = RoundConfig(subset_size=2, threshold=0.05, filter_mode="post")
    assert [c.client_id for c in select_clients(clients, cfg, 1)] == ["S"]


def test_select_no_eligible_returns_empty():
    clients = [client_from("FLAT", np.full(30, 4.0), 24)]
    assert select_clients(clients, RoundConfig(threshold=0.05), 1) == []


def test_local_update_unrolled():
    c = client_from("A", seasonal(30), 24)
    w = init_weights(2, 1)
    assert local_update(c, w, 0.3, 0).weights == w
    one = local_update(c, w, 0.3, 1)
    _, g = average_gradient(w, c.train)
    assert one.weights == sgd_step(w, g, 0.3)
    assert one.m_s == c.m_s
    two = local_update(c, w, 0.3, 2)
    assert two.weights == local_update(c, one.weights, 0.3, 1).weights


def test_train_local_rejects_empty():
    with pytest.raises(DataError):
        train_local(init_weights(1), WindowedDataset(2, np.empty((0, 2)), np.empty(0)), 0.1, 1)


def test_aggregate_examples():
    single = upd("a", 2.5, 7)
    assert aggregate([single]) == single.weights
    out = aggregate([upd("a", 1.0, 1), upd("b", 5.0, 3)])
    assert np.all(out.flat == 4.0)
    eq = aggregate([upd("a", 1.0, 2), upd("b", 2.0, 2), upd("c", 6.0, 2)])
    np.testing.assert_allclose(eq.flat, 3.0, rtol=1e-15)


def test_aggregate_order_invariant_bit_exact():
    rng = np.random.default_rng(0)
    ups = [ClientUpdate(f"c{k}", random_weights(rng, 2), int(rng.integers(1, 50))) for k in range(7)]
    ref = aggregate(ups)
    for _ in range(5):
        perm = rng.permutation(len(ups))
        assert aggregate([ups[i] for i in perm]) == ref


def test_aggregate_identical_weights_and_weight_sum():
    rng = np.random.default_rng(1)
    w = random_weights(rng, 3)
    ms = [3, 17, 29, 1]
    out = aggregate([ClientUpdate(f"c{k}", w, m) for k, m in enumerate(ms)])
    np.testing.assert_allclose(out.flat, w.flat, rtol=0, atol=1e-12)
    M = sum(ms)
    assert abs(sum(m / M for m in ms) - 1.0) <= 1e-12


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([upd("a", 1.0, 1), ClientUpdate("b", init_weights(2), 1)])
    with pytest.raises(ValueError):
        aggregate([upd("a", 1.0, 1), upd("a", 2.0, 1)])


def test_federated_single_client_equals_local_sgd():
    c = client_from("A", seasonal(40), 30)
    w0 = init_weights(3, 2)
    cfg = RoundConfig(t_max=4, subset_size=1, eta=0.3, local_epochs=3, threshold=0.0)
    fed, log = run_federated([c], cfg, w0)
    local, _ = train_local(w0, c.train, 0.3, 12)
    assert fed == local
    assert len(log) == 4 and all(r.selected == ["A"] for r in log.rounds)


def test_federated_zero_rounds():
    c = client_from("A", seasonal(40), 30)
    w0 = init_weights(2, 0)
    fed, log = run_federated([c], RoundConfig(t_max=0), w0)
    assert fed == w0 and len(log) == 0


def test_federated_identical_clients():
    values = seasonal(40)
    clients = [client_from(cid, values, 30) for cid in ("A", "B", "C")]
    w0 = init_weights(2, 0)
    cfg = RoundConfig(t_max=3, subset_size=2, eta=0.3, local_epochs=2, threshold=0.0)
    fed, log = run_federated(clients, cfg, w0)
    w = w0
    for _ in range(3):
        w = local_update(clients[0], w, 0.3, 2).weights
    np.testing.assert_allclose(fed.flat, w.flat, rtol=0, atol=1e-12)


def test_federated_all_rounds_empty_raises():
    clients = [client_from("FLAT", np.full(30, 4.0), 24)]
    with pytest.raises(NoEligibleClientsError, match="no eligible clients"):
        run_federated(clients, RoundConfig(t_max=2, threshold=0.05), init_weights(1))


def test_federated_logs_hops_and_is_deterministic():
    clients = [client_from(f"B{k}", seasonal(36, phase=k), 24, hops=k + 1) for k in range(5)]
    cfg = RoundConfig(t_max=4, subset_size=2, eta=0.3, local_epochs=1, rng_seed=3)
    w0 = init_weights(2, 0)
    a = run_federated(clients, cfg, w0)
    b = run_federated(clients, cfg, w0)
    assert a[0] == b[0] and a[1] == b[1]
    hop_of = {c.client_id: c.hops for c in clients}
    for r in a[1].rounds:
        assert r.hops == [hop_of[cid] for cid in r.selected]


def test_federated_threads_do_not_change_result():
    clients = [client_from(f"B{k}", seasonal(36, phase=k), 24) for k in range(5)]
    cfg = RoundConfig(t_max=3, subset_size=4, eta=0.3, local_epochs=2, rng_seed=1)
    w0 = init_weights(2, 0)
    serial = run_federated(clients, cfg, w0)
    threaded = run_federated(clients, cfg, w0, max_workers=4)
    assert serial[0] == threaded[0] and serial[1] == threaded[1]


def test_round_selection_independent_of_t_max():
    clients = [client_from(f"B{k}", seasonal(36, phase=k), 24) for k in range(6)]
    w0 = init_weights(1, 0)
    short = run_federated(clients, RoundConfig(t_max=2, subset_size=2, local_epochs=0), w0)[1]
    long = run_federated(clients, RoundConfig(t_max=5, subset_size=2, local_epochs=0), w0)[1]
    assert [r.selected for r in long.rounds[:2]] == [r.selected for r in short.rounds]


def test_early_stop():
    c = client_from("A", seasonal(40), 30)
    cfg = RoundConfig(t_max=50, subset_size=1, local_epochs=0, threshold=0.0, early_stop=True)
    _, log = run_federated([c], cfg, init_weights(2, 0))
    assert len(log) == 1


def test_training_log_roundtrip_and_schema():
    clients = [client_from(f"B{k}", seasonal(36, phase=k), 24) for k in range(3)]
    _, log = run_federated(clients, RoundConfig(t_max=2, subset_size=2, local_epochs=1),
                           init_weights(2, 0), evaluate=lambda w: {"mape": 1.0, "rmse": 2.0})
    text = log.to_jsonl()
    assert TrainingLog.from_jsonl(text) == log
    for line in text.splitlines():
        rec = json.loads(line)
        assert set(rec) == {"t", "selected", "hops", "mean_local_loss", "global_eval"}
        assert set(rec["global_eval"]) == {"mape", "rmse"}
    with pytest.raises(DataError):
        TrainingLog.from_jsonl('{"t": 1}\n')


def test_centralized_cases():
    a = client_from("A", seasonal(40), 30)
    w0 = init_weights(2, 0)
    assert run_centralized([a], 0.3, 0, w0) == w0
    assert run_centralized([a], 0.3, 4, w0) == train_local(w0, a.train, 0.3, 4)[0]
    with pytest.raises(DataError):
        run_centralized([], 0.3, 1, w0)


def test_centralized_duplicate_single_samples():
    values = np.array([1.0, 2.0, 3.0, 5.0])
    a = make_client(series("A", values), START + 3, 2)
    b = make_client(series("B", values), START + 3, 2)
    w0 = init_weights(2, 0)
    pooled = run_centralized([a, b], 0.2, 1, w0)
    single = run_centralized([a], 0.2, 1, w0)
    np.testing.assert_allclose(pooled.flat, single.flat, rtol=0, atol=1e-15)


def test_personalize_matches_local_update():
    c = client_from("A", seasonal(40), 30)
    g = init_weights(2, 4)
    assert personalize(g, c, 0.2, 0) == g
    p = personalize(g, c, 0.2, 3)
    assert p == local_update(c, g, 0.2, 3).weights
    assert p != g
    assert g == init_weights(2, 4)


def test_round_config_validation():
    for bad in ({"t_max": -1}, {"subset_size": 0}, {"eta": 0}, {"threshold": -1},
                {"filter_mode": "sideways"}):
        with pytest.raises(ValueError):
            RoundConfig(**bad)
