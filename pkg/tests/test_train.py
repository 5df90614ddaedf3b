import numpy as np
import pytest

from conftest import net_from_events, two_community_lines
from m2dne.graph import parse_edge_list
from m2dne.micro import draw_event_negatives
from m2dne.macro import fit_params, macro_loss
from m2dne.train import (TrainConfig, TrainData, fit, init_state, joint_loss,
                         load_checkpoint, sample_batch, save_checkpoint, step,
                         _joint_grads)
from m2dne.util import substream


def toy_net(seed=0, nodes=10, n_events=60, epochs=8):
    rng = np.random.default_rng(seed)
    events = []
    for _ in range(n_events):
        a = int(rng.integers(nodes))
        b = int((a + 1 + rng.integers(nodes - 1)) % nodes)
        events.append((a, b, int(rng.integers(1, epochs + 1))))
    return net_from_events(sorted(events, key=lambda e: e[2]),
                           node_count=nodes)


class TestInitState:
    def test_same_seed_bit_identical(self):
        cfg = TrainConfig(dim=8)
        s1 = init_state(12, cfg, substream(7, "init"))
        s2 = init_state(12, cfg, substream(7, "init"))
        assert np.array_equal(s1.embeddings, s2.embeddings)
        assert np.array_equal(s1.attention.att_vector, s2.attention.att_vector)
        assert np.array_equal(s1.attention.local_weight, s2.attention.local_weight)

    def test_shapes_and_bounds(self):
        cfg = TrainConfig(dim=8)
        s = init_state(12, cfg, substream(1, "init"))
        assert s.embeddings.shape == (12, 8)
        assert np.max(np.abs(s.embeddings)) <= 0.5 / 8
        assert s.attention.att_vector.shape == (16,)
        assert s.attention.s_bias == 0.0
        assert np.all(s.attention.decay_raw == 0.0)
        assert s.macro.zeta_raw == 0.0
        assert s.macro.gamma == 1.0
        assert s.macro.theta == 1.0

    def test_mean_within_three_sigma(self):
        cfg = TrainConfig(dim=10)
        s = init_state(1000, cfg, substream(2, "init"))
        entries = s.embeddings.ravel()
        bound = 0.5 / 10
        sigma_mean = bound / np.sqrt(3.0) / np.sqrt(entries.size)
        assert abs(entries.mean()) < 3 * sigma_mean

    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            init_state(1, TrainConfig(dim=4), substream(0, "init"))


class TestSampleBatch:
    def test_uniform_frequencies(self):
        # distinct events so every draw maps to a unique (src, dst, t) key
        events = [(k % 6, (k + 1 + k // 6) % 6, k // 6 + 1) for k in range(20)]
        events = [(a, b, t) for a, b, t in events if a != b][:18]
        net = net_from_events(events, node_count=6)
        data = TrainData(net, 2)
        rng = substream(5, "batch")
        counts = np.zeros(len(net))
        draws = 100_000
        for _ in range(20):
            batch = sample_batch(data, draws // 20, rng)
            match = (batch.src[:, None] == net.src[None, :]) \
                & (batch.dst[:, None] == net.dst[None, :]) \
                & (batch.t[:, None] == net.time[None, :])
            np.add.at(counts, match.argmax(axis=1), 1)
        p = 1.0 / len(net)
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) < 3 * sigma)

    def test_single_event_always_drawn(self):
        net = net_from_events([(0, 1, 1)])
        data = TrainData(net, 2)
        batch = sample_batch(data, 16, substream(0, "batch"))
        assert np.all(batch.src == 0) and np.all(batch.dst == 1)

    def test_weighted_sampling(self):
        net = net_from_events([(0, 1, 1), (1, 2, 2)], weights=[9.0, 1.0],
                              weighted=True)
        data = TrainData(net, 2)
        batch = sample_batch(data, 50_000, substream(1, "batch"))
        freq = float(np.mean(batch.src == 0))
        assert abs(freq - 0.9) < 0.01

    def test_fixed_seed_reproduces(self):
        net = toy_net(4)
        data = TrainData(net, 3)
        b1 = sample_batch(data, 32, substream(9, "batch"))
        b2 = sample_batch(data, 32, substream(9, "batch"))
        assert np.array_equal(b1.src, b2.src)
        assert np.array_equal(b1.t, b2.t)


class TestStep:
    def _setup(self, epsilon=0.3, seed=11):
        net = toy_net(seed)
        cfg = TrainConfig(dim=4, history=2, negatives=2, epsilon=epsilon,
                          seed=seed, learning_rate=0.01)
        state = init_state(net.node_count, cfg, substream(seed, "init"))
        data = TrainData(net, cfg.history)
        batch = sample_batch(data, 32, substream(seed, "batch"))
        return net, cfg, state, data, batch

    def test_zero_rate_leaves_state_unchanged(self):
        net, cfg, state, data, batch = self._setup()
        cfg.learning_rate = 0.0
        before = state.copy()
        step(state, batch, data, cfg, substream(1, "negatives"))
        assert np.array_equal(state.embeddings, before.embeddings)
        assert state.macro.gamma == before.macro.gamma
        assert state.attention.s_bias == before.attention.s_bias

    def test_small_rate_does_not_increase_loss(self):
        net, cfg, state, data, batch = self._setup()
        cfg.learning_rate = 1e-7
        neg = draw_event_negatives(batch.src, batch.dst, data.table,
                                   cfg.negatives, substream(2, "negatives"))
        before, *_ = _joint_grads(state, batch, neg[0], neg[1], data, cfg)
        step(state, batch, data, cfg, substream(2, "negatives"))
        after, *_ = _joint_grads(state, batch, neg[0], neg[1], data, cfg)
        assert after <= before

    def test_single_step_matches_manual_update(self):
        net, cfg, state, data, batch = self._setup()
        neg = draw_event_negatives(batch.src, batch.dst, data.table,
                                   cfg.negatives, substream(3, "negatives"))
        _, _, _, grads, _ = _joint_grads(state, batch, neg[0], neg[1], data,
                                         cfg)
        manual = state.copy()
        for name, ref in manual.param_groups().items():
            g = np.asarray(grads[name], dtype=np.float64)
            norm = float(np.linalg.norm(g))
            if norm > cfg.grad_clip:
                g = g * (cfg.grad_clip / norm)
            if np.ndim(ref) == 0:
                manual.set_scalar(name, float(ref) - cfg.learning_rate * float(g))
            else:
                manual.param_groups()[name][...] = ref - cfg.learning_rate * g
        step(state, batch, data, cfg, substream(3, "negatives"))
        assert np.allclose(state.embeddings, manual.embeddings, atol=1e-15)
        assert state.macro.theta == pytest.approx(manual.macro.theta, abs=1e-15)

    def test_nonfinite_gradient_names_group(self):
        net, cfg, state, data, batch = self._setup()
        state.embeddings[0, 0] = np.inf
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
            step(state, batch, data, cfg, substream(4, "negatives"))


class TestJointLoss:
    def test_epsilon_zero_equals_micro(self):
        net, cfg, state, data, batch = TestStep()._setup(epsilon=0.0)
        from m2dne.micrograd import micro_loss_sampled
        micro = micro_loss_sampled(batch, data.table, cfg.negatives,
                                   substream(6, "negatives"),
                                   state.embeddings, state.attention)
        total = joint_loss(state, batch, data, cfg, substream(6, "negatives"))
        assert total == micro

    def test_composition(self):
        net, cfg, state, data, batch = TestStep()._setup(epsilon=0.4)
        cfg.epsilon = 0.4
        from m2dne.micrograd import micro_loss_sampled
        from m2dne.macro import macro_loss
        micro = micro_loss_sampled(batch, data.table, cfg.negatives,
                                   substream(7, "negatives"),
                                   state.embeddings, state.attention)
        ma = macro_loss(data.series, state.embeddings, data.edge_src,
                        data.edge_dst, state.macro)
        total = joint_loss(state, batch, data, cfg, substream(7, "negatives"))
        assert total == pytest.approx(micro + 0.4 * ma, rel=1e-12)


class TestFit:
    def test_loss_decreases_on_toy(self, tmp_edges):
        path = tmp_edges(two_community_lines(seed=2, nodes=20, n_events=400,
                                             epochs=10, partners_per_node=3,
                                             bridges=4))
        net = parse_edge_list(path)
        cfg = TrainConfig(dim=8, epochs=50, batch_size=128, seed=3)
        state, trace = fit(net, cfg)
        assert trace.total[-1] < trace.total[0]
        assert state.all_finite()

    def test_deterministic_traces(self, tmp_edges):
        path = tmp_edges(two_community_lines(seed=4, nodes=16, n_events=200,
                                             epochs=8, partners_per_node=3,
                                             bridges=3))
        net = parse_edge_list(path)
        cfg = TrainConfig(dim=4, epochs=5, batch_size=64, seed=9)
        _, t1 = fit(net, cfg)
        _, t2 = fit(net, cfg)
        assert t1.micro == t2.micro
        assert t1.macro == t2.macro
        assert t1.total == t2.total

    def test_epsilon_zero_freezes_macro_params(self, tmp_edges):
        path = tmp_edges(two_community_lines(seed=5, nodes=16, n_events=200,
                                             epochs=8, partners_per_node=3,
                                             bridges=3))
        net = parse_edge_list(path)
        cfg = TrainConfig(dim=4, epochs=4, batch_size=64, seed=2, epsilon=0.0)
        state, trace = fit(net, cfg)
        assert state.macro.zeta_raw == 0.0
        assert state.macro.gamma == 1.0
        assert state.macro.theta == 1.0
        assert len(set(trace.macro)) == 1   # reported column frozen

    def test_needs_two_epochs(self):
        net = net_from_events([(0, 1, 1), (1, 2, 1)])
        with pytest.raises(ValueError):
            fit(net, TrainConfig(dim=2, epochs=1))

    def test_equivariant_under_relabeling(self):
        net = toy_net(8, nodes=9, n_events=70, epochs=7)
        cfg = TrainConfig(dim=4, history=2, negatives=2, epochs=3,
                          batch_size=32, seed=13)
        state0 = init_state(net.node_count, cfg, substream(13, "init"))
        final, _ = fit(net, cfg, initial_state=state0)

        perm = np.random.default_rng(99).permutation(net.node_count)
        events_p = [(int(perm[s]), int(perm[d]), int(t))
                    for s, d, t in zip(net.src, net.dst, net.time)]
        net_p = net_from_events(events_p, node_count=net.node_count)
        state0_p = state0.copy()
        state0_p.embeddings[perm] = state0.embeddings
        state0_p.attention.decay_raw[perm] = state0.attention.decay_raw
        final_p, _ = fit(net_p, cfg, initial_state=state0_p)

        assert np.allclose(final_p.embeddings[perm], final.embeddings,
                           atol=1e-12)
        assert np.allclose(final_p.attention.decay_raw[perm],
                           final.attention.decay_raw, atol=1e-12)
        assert np.allclose(final_p.attention.local_weight,
                           final.attention.local_weight, atol=1e-12)
        assert final_p.macro.theta == pytest.approx(final.macro.theta,
                                                    abs=1e-12)

    def test_macro_params_track_their_optimum(self):
        net = toy_net(9, nodes=12, n_events=100, epochs=10)
        cfg = TrainConfig(dim=4, epsilon=0.3, epochs=6, batch_size=64, seed=1)
        state, _ = fit(net, cfg)
        data = TrainData(net, cfg.history)
        best = fit_params(data.series, state.embeddings, data.edge_src,
                          data.edge_dst)
        achieved = macro_loss(data.series, state.embeddings, data.edge_src,
                              data.edge_dst, state.macro)
        optimal = macro_loss(data.series, state.embeddings, data.edge_src,
                             data.edge_dst, best)
        assert achieved <= 1.05 * optimal + 1e-9


class TestCheckpoint:
    def _state(self, V=12, d=8, seed=3):
        cfg = TrainConfig(dim=d)
        state = init_state(V, cfg, substream(seed, "init"))
        state.macro.gamma = 1.25
        state.attention.s_bias = -0.375
        return state

    def test_round_trip_bit_exact(self, tmp_path):
        state = self._state()
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(state, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded.embeddings, state.embeddings)
        assert loaded.macro.gamma == state.macro.gamma
        assert loaded.attention.s_bias == state.attention.s_bias

    def test_documented_size(self, tmp_path):
        state = self._state(V=12, d=8)
        path = tmp_path / "c.ckpt"
        save_checkpoint(state, path)
        V, d = 12, 8
        expected = 6 + 4 + 16 + 8 * (V * d + 2 * d + d * d + d + 1 + V + 3)
        assert path.stat().st_size == expected

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        state = self._state()
        save_checkpoint(state, path)
        blob = bytearray(path.read_bytes())
        blob[0] = ord("X")
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(self._state(), path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "ver.ckpt"
        save_checkpoint(self._state(), path)
        blob = bytearray(path.read_bytes())
        blob[6] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


class TestTrainConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"dim": 0}, {"history": 0}, {"negatives": -1}, {"epsilon": 1.5},
        {"epsilon": -0.1}, {"batch_size": 0}, {"learning_rate": -1.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
