import dataclasses

import numpy as np
import pytest

from dprsa.attacks import AttackSpec
from dprsa.data import SyntheticSpec, gen_synthetic
from dprsa.errors import ConfigError
from dprsa.fedsim import (
    SimConfig,
    Simulation,
    partition_iid,
    partition_noniid,
    run_training,
    with_overrides,
)
from dprsa.paramcore import reg_grad


def _log_key(log):
    d = dataclasses.asdict(log)
    d.pop("wall_ms")
    return d


# --- partitions --------------------------------------------------------------

def test_iid_even_split(rng):
    shards = partition_iid(60000, 30, rng)
    assert {len(s) for s in shards} == {2000}


def test_iid_remainder(rng):
    assert sorted(len(s) for s in partition_iid(10, 3, rng)) == [3, 3, 4]


@pytest.mark.parametrize("n,k", [(17, 4), (101, 10), (5, 5)])
def test_iid_disjoint_union(n, k, rng):
    shards = partition_iid(n, k, rng)
    flat = np.concatenate(shards)
    assert len(flat) == n and set(flat.tolist()) == set(range(n))


def _class_counts(labels, shards, c):
    return [int(np.sum(labels[s] == c)) for s in shards]


def test_noniid_thirty_workers(rng):
    labels = np.repeat(np.arange(10), 6000)
    shards = partition_noniid(labels, 30, 3, rng)
    flat = np.concatenate(shards)
    assert len(flat) == labels.size and np.unique(flat).size == labels.size
    for c in range(10):
        counts = _class_counts(labels, shards, c)
        group = range(3 * c, 3 * c + 3)
        assert all(counts[k] == (1100 if k in group else 100) for k in range(30))


def test_noniid_pairs(rng):
    labels = np.repeat(np.arange(10), 6000)
    shards = partition_noniid(labels, 20, 2, rng)
    counts = _class_counts(labels, shards, 4)
    assert counts[8] == counts[9] == 150 + 1500
    assert all(counts[k] == 150 for k in range(20) if k not in (8, 9))


def test_noniid_single_group_is_even(rng):
    labels = np.repeat(np.arange(4), 100)
    shards = partition_noniid(labels, 5, 5, rng)
    for c in range(4):
        assert _class_counts(labels, shards, c) == [20] * 5


def test_noniid_needs_enough_classes(rng):
    with pytest.raises(ValueError):
        partition_noniid(np.repeat(np.arange(3), 10), 10, 2, rng)


# --- configuration -----------------------------------------------------------

@pytest.mark.parametrize(
    "changes",
    [dict(num_byzantine=10), dict(num_byzantine=9, num_workers=9), dict(rounds=0), dict(batch_size=0), dict(algorithm="adam"), dict(epsilon=8.0)],
)
def test_config_guards(changes):
    with pytest.raises(ConfigError):
        SimConfig(**changes)


def test_config_message_names_invariant():
    with pytest.raises(ConfigError, match="num_byzantine"):
        SimConfig(num_workers=4, num_byzantine=4)


def test_with_overrides_revalidates():
    cfg = SimConfig()
    assert with_overrides(cfg, seed=3).seed == 3
    with pytest.raises(ConfigError):
        with_overrides(cfg, num_byzantine=99)


# --- rounds ------------------------------------------------------------------

def test_deterministic_replay(small_problem):
    train, test = small_problem
    cfg = SimConfig(num_byzantine=2, attack=AttackSpec("gaussian"), rounds=30, eval_every=10, seed=5)
    a, b = run_training(cfg, train, test), run_training(cfg, train, test)
    assert [_log_key(x) for x in a.logs] == [_log_key(x) for x in b.logs]
    assert a.final_x0.tobytes() == b.final_x0.tobytes()


def test_thread_count_does_not_change_results(small_problem):
    train, test = small_problem
    cfg = SimConfig(algorithm="dp_rsa_flip", num_byzantine=1, attack=AttackSpec("sign_flip"), rounds=20, seed=2)
    a, b = run_training(cfg, train, test, threads=1), run_training(cfg, train, test, threads=4)
    assert a.final_x0.tobytes() == b.final_x0.tobytes()


def test_keep_probability_one_equals_plain_rsa(small_problem):
    train, test = small_problem
    base = dict(rounds=25, seed=9, alpha=0.05)
    rsa = run_training(SimConfig(algorithm="rsa", **base), train, test)
    flip = run_training(SimConfig(algorithm="dp_rsa_flip", gamma=1.0, **base), train, test)
    assert rsa.final_x0.tobytes() == flip.final_x0.tobytes()
    assert not flip.private


@pytest.mark.parametrize("algo", ["dp_rsa_gauss", "dp_rsa_flip"])
def test_one_mechanism_call_per_regular_worker(algo, small_problem):
    train, test = small_problem
    m = run_training(SimConfig(algorithm=algo, num_byzantine=3, attack=AttackSpec("gaussian"), rounds=5), train, test)
    assert all(log.mechanism_calls == 7 for log in m.logs)
    assert m.private and m.epsilon_round == pytest.approx(0.4)
    assert m.epsilon_total_naive == pytest.approx(2.0)


def test_nonprivate_runs_make_no_mechanism_calls(small_problem):
    train, test = small_problem
    m = run_training(SimConfig(algorithm="rsa", rounds=3), train, test)
    assert all(log.mechanism_calls == 0 for log in m.logs) and not m.private


def test_attack_kind_does_not_change_regular_models(small_problem):
    train, test = small_problem
    outs = []
    for kind in ("none", "gaussian", "sign_flip", "sample_duplicate"):
        sim = Simulation(SimConfig(num_byzantine=3, attack=AttackSpec(kind)), train, test)
        state = sim.initial_state()
        new_state, _ = sim.run_round(state)
        outs.append(np.concatenate(new_state.local_models))
    assert all(o.tobytes() == outs[0].tobytes() for o in outs)


@pytest.mark.parametrize("algo", ["rsa", "dp_rsa_gauss", "dp_rsa_flip"])
def test_master_step_norm_bound(algo, small_problem):
    train, test = small_problem
    cfg = SimConfig(algorithm=algo, num_byzantine=2, attack=AttackSpec("gaussian"), alpha=0.1, lam=0.05)
    sim = Simulation(cfg, train, test)
    state = sim.initial_state()
    d = state.x0.size
    for _ in range(20):
        new_state, _ = sim.run_round(state)
        bound = cfg.alpha * (np.linalg.norm(reg_grad(state.x0, cfg.reg_coeff)) + cfg.lam * cfg.num_workers * np.sqrt(d))
        assert np.linalg.norm(new_state.x0 - state.x0) <= bound * (1 + 1e-12)
        state = new_state


def test_accuracy_logged_on_cadence_and_last_round(small_problem):
    train, test = small_problem
    m = run_training(SimConfig(rounds=23, eval_every=10), train, test)
    evaluated = [log.round for log in m.logs if log.test_accuracy is not None]
    assert evaluated == [9, 19, 22]
    assert m.final_accuracy == m.logs[-1].test_accuracy


def test_sgd_learns_separable_data():
    train = gen_synthetic(SyntheticSpec(10, 20, 100, class_mean_separation=12.0, noise_std=1.0, seed=1))
    test = gen_synthetic(SyntheticSpec(10, 20, 100, class_mean_separation=12.0, noise_std=1.0, seed=2))
    m = run_training(SimConfig(algorithm="sgd", alpha=0.1, rounds=500, eval_every=500), train, test)
    assert m.final_accuracy > 0.95


@pytest.mark.parametrize("algo", ["sgd", "signsgd", "sgd_gm"])
def test_gradient_baselines_run(algo, small_problem):
    train, test = small_problem
    m = run_training(SimConfig(algorithm=algo, num_byzantine=2, attack=AttackSpec("sample_duplicate"), partition="noniid", group_size=1, rounds=10), train, test)
    assert np.all(np.isfinite(m.final_x0))


def test_mlp_model_runs(small_problem):
    train, test = small_problem
    m = run_training(SimConfig(model="mlp", hidden_dim=8, rounds=5), train, test)
    assert m.final_x0.size == 20 * 8 + 8 + 64 + 8 + 80 + 10


def test_stationarity_measure_shrinks_with_training(small_problem):
    train, test = small_problem
    early, late = [], []
    for seed in range(5):
        cfg = SimConfig(algorithm="rsa", alpha=0.1, lam=0.01, rounds=2000, eval_every=2000, moreau_every=100, seed=seed)
        logs = run_training(cfg, train, test).logs
        early.append(logs[99].moreau_grad_sq)
        late.append(logs[1999].moreau_grad_sq)
    assert np.mean(late) < np.mean(early)
