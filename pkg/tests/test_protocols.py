import numpy as np
import pytest

import fedrank.protocols as protocols
from fedrank.adversary import AttackConfig, AttackKind
from fedrank.aggregation import signs_of
from fedrank.nn import LayerSpec, Minibatch, SgdConfig, dense_weight_grads, unflatten_params
from fedrank.protocols import (Aggregator, Algorithm, DatasetSpec,
                               ExperimentConfig, ServerState, baseline_round,
                               build_environment, fedavg_client_update,
                               fsl_client_update, fsl_round, initial_state,
                               run_experiment, select_clients, sparse_fsl_round)
from fedrank.rng import InitKind, TAG_TRAIN, derive

FIG_R1 = np.array([4, 0, 2, 3, 5, 1])
FIG_R2 = np.array([2, 0, 1, 5, 4, 3])
FIG_R3 = np.array([0, 2, 5, 3, 4, 1])


def tiny_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        algorithm=Algorithm.FSL,
        rounds=3,
        num_clients=12,
        clients_per_round=4,
        local_epochs=1,
        eval_every=1,
        seed=321,
        architecture=[LayerSpec(6, 8, "relu"), LayerSpec(8, 4, "identity")],
        dataset=DatasetSpec(kind="blobs", blob_classes=4, blob_dims=6,
                            blob_samples_per_class=60, blob_cluster_std=1.0),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def fsl_env():
    cfg = tiny_config()
    return cfg, build_environment(cfg)


class TestConfigValidation:
    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            tiny_config(subnet_fraction=1.5)

    def test_clients_per_round_bound(self):
        with pytest.raises(ValueError):
            tiny_config(clients_per_round=13)

    def test_seed_width(self):
        with pytest.raises(ValueError):
            tiny_config(seed=2**32)

    def test_attack_protocol_compat(self):
        with pytest.raises(ValueError):
            tiny_config(attack=AttackConfig(0.1, AttackKind.SCALE))
        with pytest.raises(ValueError):
            tiny_config(algorithm=Algorithm.FEDAVG,
                        attack=AttackConfig(0.1, AttackKind.RANK_REVERSAL))

    def test_topk_average_only(self):
        with pytest.raises(ValueError):
            tiny_config(algorithm=Algorithm.TOPK, aggregator=Aggregator.MULTI_KRUM)


class TestSampling:
    def test_no_duplicates_and_range(self):
        cfg = tiny_config()
        for t in range(1, 30):
            picked = select_clients(cfg, t)
            assert len(picked) == cfg.clients_per_round
            assert len(set(picked)) == len(picked)
            assert all(0 <= u < cfg.num_clients for u in picked)

    def test_deterministic_per_round(self):
        cfg = tiny_config()
        assert select_clients(cfg, 5) == select_clients(cfg, 5)
        assert select_clients(cfg, 5) != select_clients(cfg, 6)


class TestFslClientUpdate:
    def test_zero_lr_returns_global_ranking(self, fsl_env):
        cfg, env = fsl_env
        state = initial_state(cfg)
        out = fsl_client_update(cfg.seed, state.ranking, env.train_batches[0],
                                1, 0.5, SgdConfig(0.0, 0.0, 0.0, 8),
                                derive(cfg.seed, [TAG_TRAIN, 1, 0]),
                                cfg.architecture, cfg.weight_init)
        for got, want in zip(out, state.ranking):
            assert np.array_equal(got, want)

    def test_identical_clients_identical_rankings(self, fsl_env):
        cfg, env = fsl_env
        state = initial_state(cfg)
        args = (cfg.seed, state.ranking, env.train_batches[3], 2, 0.5, cfg.sgd)
        a = fsl_client_update(*args, derive(9, [0]), cfg.architecture, cfg.weight_init)
        b = fsl_client_update(*args, derive(9, [0]), cfg.architecture, cfg.weight_init)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra, rb)

    def test_noise_feature_ranks_low(self):
        # feature 0 carries the labels, feature 1 is pure noise
        specs = [LayerSpec(2, 8, "relu"), LayerSpec(8, 2, "identity")]
        sgd = SgdConfig(0.4, 0.9, 1e-4, 8)
        hits = 0
        trials = 20
        total = 0
        for seed in range(trials):
            rng = derive(1000 + seed, [])
            labels = rng.integers_below(2, 64)
            signal = (2.0 * labels - 1.0) + 0.1 * rng.normal(64)
            noise = rng.normal(64)
            feats = np.stack([signal, noise], axis=1)
            batches = [Minibatch(feats[i : i + 8], labels[i : i + 8])
                       for i in range(0, 64, 8)]
            from fedrank.nn import Supernetwork
            rg = Supernetwork.from_seed(seed, specs).score_rankings()
            ranking = fsl_client_update(seed, rg, batches, 3, 0.5, sgd,
                                        derive(seed, [TAG_TRAIN, 1, 0]), specs,
                                        InitKind.SIGNED_KAIMING_CONSTANT)
            bottom = set(ranking[0][:8].tolist())
            noise_edges = {i for i in range(16) if i % 2 == 1}
            hits += len(bottom & noise_edges)
            total += len(noise_edges)
        assert hits / total > 0.5


class TestFslRound:
    def test_single_benign_client_becomes_global(self, fsl_env):
        cfg, env = fsl_env
        cfg1 = tiny_config(clients_per_round=1)
        state = initial_state(cfg1)
        new_state, record = fsl_round(state, env, cfg1, 1)
        u = record.selected[0]
        expected = fsl_client_update(cfg1.seed, state.ranking, env.train_batches[u],
                                     cfg1.local_epochs, cfg1.subnet_fraction, cfg1.sgd,
                                     derive(cfg1.seed, [TAG_TRAIN, 1, u]),
                                     cfg1.architecture, cfg1.weight_init)
        for got, want in zip(new_state.ranking, expected):
            assert np.array_equal(got, want)

    def test_unanimous_identity_round(self, fsl_env):
        cfg, env = fsl_env
        frozen = tiny_config()
        frozen.sgd = SgdConfig(0.0, 0.0, 0.0, 8)  # nobody moves a score
        state = initial_state(frozen)
        new_state, _ = fsl_round(state, env, frozen, 1)
        for got, want in zip(new_state.ranking, state.ranking):
            assert np.array_equal(got, want)

    def test_vote_fixture_through_round(self, fsl_env, monkeypatch):
        cfg, env = fsl_env
        cfg3 = tiny_config(clients_per_round=3)
        fixtures = [FIG_R1, FIG_R2, FIG_R3]
        calls = []

        def fake_update(seed, ranking, batches, epochs, k, sgd, rng, specs, init):
            calls.append(None)
            return [fixtures[(len(calls) - 1) % 3], fixtures[(len(calls) - 1) % 3]]

        monkeypatch.setattr(protocols, "fsl_client_update", fake_update)
        state = ServerState(round=0, ranking=[FIG_R1, FIG_R1])
        new_state, _ = fsl_round(state, env, cfg3, 1, with_eval=False)
        assert new_state.ranking[0].tolist() == [0, 2, 4, 5, 3, 1]

    def test_state_is_permutation_family(self, fsl_env):
        cfg, env = fsl_env
        state = initial_state(cfg)
        for t in range(1, 4):
            state, _ = fsl_round(state, env, cfg, t, with_eval=False)
            for layer, spec in zip(state.ranking, cfg.architecture):
                assert sorted(layer.tolist()) == list(range(spec.n_edges))


class TestSparseFslRound:
    def test_degenerate_sparsity_matches_full(self, fsl_env):
        cfg, env = fsl_env
        sparse_cfg = tiny_config(algorithm=Algorithm.SPARSE_FSL, sparsity=1.0)
        state = initial_state(cfg)
        for t in range(1, 6):
            full_state, _ = fsl_round(state, env, cfg, t, with_eval=False)
            sparse_state, _ = sparse_fsl_round(state, env, sparse_cfg, t, with_eval=False)
            for a, b in zip(full_state.ranking, sparse_state.ranking):
                assert a.tobytes() == b.tobytes()
            state = full_state

    def test_upload_bits_scale_with_sparsity(self):
        full = build_environment(tiny_config()).cost
        half = build_environment(
            tiny_config(algorithm=Algorithm.SPARSE_FSL, sparsity=0.5)).cost
        assert half.upload_bits == pytest.approx(0.5 * full.upload_bits)
        assert half.download_bits == full.download_bits


class TestFedavgClientUpdate:
    def test_zero_lr_zero_delta(self, fsl_env):
        cfg, env = fsl_env
        theta = initial_state(tiny_config(algorithm=Algorithm.FEDAVG)).weights
        out = fedavg_client_update(theta, cfg.architecture, env.train_batches[0],
                                   1, SgdConfig(0.0, 0.0, 0.0, 8), derive(1, []), 0)
        assert np.all(out.delta == 0.0)

    def test_single_step_is_neg_lr_grad(self, fsl_env):
        cfg, env = fsl_env
        fed = tiny_config(algorithm=Algorithm.FEDAVG)
        theta = initial_state(fed).weights
        batch = env.train_batches[2][0]
        out = fedavg_client_update(theta, fed.architecture, [batch], 1,
                                   SgdConfig(0.05, 0.0, 0.0, 8), derive(1, []), 2)
        grads = dense_weight_grads(unflatten_params(theta, fed.architecture),
                                   fed.architecture, batch)
        expected = np.concatenate([
            (w - (0.05 * g).astype(np.float32)).astype(np.float64).ravel() - w.astype(np.float64).ravel()
            for w, g in zip(unflatten_params(theta, fed.architecture), grads)])
        assert np.allclose(out.delta, expected, atol=1e-7)

    def test_identical_clients_identical_deltas(self, fsl_env):
        cfg, env = fsl_env
        theta = initial_state(tiny_config(algorithm=Algorithm.FEDAVG)).weights
        a = fedavg_client_update(theta, cfg.architecture, env.train_batches[1],
                                 2, cfg.sgd, derive(5, []), 1)
        b = fedavg_client_update(theta, cfg.architecture, env.train_batches[1],
                                 2, cfg.sgd, derive(5, []), 1)
        assert np.array_equal(a.delta, b.delta)


class TestBaselineRound:
    def test_fedavg_single_client_moves_by_delta(self):
        cfg = tiny_config(algorithm=Algorithm.FEDAVG, clients_per_round=1)
        cfg.sgd = SgdConfig(0.05, 0.9, 0.0, 8)
        env = build_environment(cfg)
        state = initial_state(cfg)
        new_state, record = baseline_round(state, env, cfg, 1, with_eval=False)
        u = record.selected[0]
        expected = fedavg_client_update(state.weights, cfg.architecture,
                                        env.train_batches[u], cfg.local_epochs,
                                        cfg.sgd, derive(cfg.seed, [TAG_TRAIN, 1, u]), u)
        assert np.allclose(new_state.weights, state.weights + expected.delta)

    def test_topk_full_fraction_equals_fedavg(self):
        fed = tiny_config(algorithm=Algorithm.FEDAVG)
        top = tiny_config(algorithm=Algorithm.TOPK, sparsity=1.0)
        env = build_environment(fed)
        s_fed, _ = baseline_round(initial_state(fed), env, fed, 1, with_eval=False)
        s_top, _ = baseline_round(initial_state(top), env, top, 1, with_eval=False)
        assert np.array_equal(s_fed.weights, s_top.weights)

    def test_topk_sparsify_keeps_layerwise_largest(self):
        specs = [LayerSpec(2, 2, "relu"), LayerSpec(2, 2, "identity")]
        delta = np.array([1.0, -5.0, 0.5, 2.0, 3.0, -1.0, 0.0, 0.0])
        out = protocols._topk_sparsify(delta, specs, 0.5)
        assert out.tolist() == [0.0, -5.0, 0.0, 2.0, 3.0, -1.0, 0.0, 0.0]

    def test_signsgd_single_client_sign_step(self):
        cfg = tiny_config(algorithm=Algorithm.SIGNSGD, clients_per_round=1,
                          server_lr=0.01)
        env = build_environment(cfg)
        state = initial_state(cfg)
        new_state, record = baseline_round(state, env, cfg, 1, with_eval=False)
        u = record.selected[0]
        delta = fedavg_client_update(state.weights, cfg.architecture,
                                     env.train_batches[u], cfg.local_epochs,
                                     cfg.sgd, derive(cfg.seed, [TAG_TRAIN, 1, u]), u)
        expected = state.weights - 0.01 * signs_of(delta.delta).signs.astype(np.float64)
        assert np.allclose(new_state.weights, expected)


class TestRunExperiment:
    def test_zero_rounds_empty_records(self):
        assert run_experiment(tiny_config(rounds=0)) == []

    def test_fixed_seed_reproducible(self):
        a = run_experiment(tiny_config(rounds=3))
        b = run_experiment(tiny_config(rounds=3))
        assert a == b

    def test_worker_count_does_not_change_results(self):
        serial = run_experiment(tiny_config(rounds=3))
        parallel = run_experiment(tiny_config(rounds=3), workers=4)
        assert serial == parallel

    def test_eval_cadence(self):
        recs = run_experiment(tiny_config(rounds=5, eval_every=2))
        assert [r.round for r in recs] == [2, 4, 5]

    def test_zero_fraction_attack_is_noop(self):
        benign = run_experiment(tiny_config(rounds=3))
        armed = run_experiment(tiny_config(
            rounds=3, attack=AttackConfig(0.0, AttackKind.RANK_REVERSAL)))
        assert benign == armed

    def test_attack_flag_recorded(self):
        recs = run_experiment(tiny_config(
            rounds=3, attack=AttackConfig(0.5, AttackKind.RANK_REVERSAL)))
        assert any(r.attack_active for r in recs)

    def test_records_match_cost_model(self):
        recs = run_experiment(tiny_config(rounds=2))
        env_cost = build_environment(tiny_config()).cost
        for r in recs:
            assert r.upload_bits == env_cost.upload_bits
            assert r.download_bits == env_cost.download_bits
