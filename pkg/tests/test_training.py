import numpy as np
import pytest

from spacecode import tensor as T
from spacecode.alignment import IdentifierEntry, IdentifierMap
from spacecode.model import EncoderConfig, forward, init_params, loss
from spacecode.tensor import Tensor, backward
from spacecode.training import (EncodedSample, FullPerturbation, PerturbationSet,
                                TrainConfig, TrainingError, adv_minibatch,
                                ascent_step, augment_minibatch, baseline_minibatch,
                                length_grouped_batches, minibatch_gradient, project,
                                random_perturb_minibatch, scatter, space_minibatch,
                                train)


def fro(x):
    return float(np.linalg.norm(x))


@pytest.fixture(scope="module")
def tiny_config():
    return EncoderConfig(vocab_size=24, d=16, layers=1, heads=2, d_ff=32,
                         max_len=64, dropout=0.0)


@pytest.fixture(scope="module")
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=0)


def toy_map():
    return IdentifierMap(entries=(IdentifierEntry("add", (3, 4), (1,)),
                                  IdentifierEntry("x", (6,), (4,))))


def make_batch(rng, config, size, with_identifiers=True):
    batch = []
    for i in range(size):
        n = int(rng.integers(8, 14))
        ids = rng.integers(0, config.vocab_size, size=n).astype(np.int32)
        ids[0] = 0
        entries = []
        if with_identifiers:
            # two identifiers: one with two occurrences, one with a single
            ids[2], ids[3] = 5, 6
            ids[6], ids[7] = 5, 6
            ids[5] = 9
            entries = [IdentifierEntry("left", (5, 6), (2, 6)),
                       IdentifierEntry("top", (9,), (5,))]
        batch.append(EncodedSample(ids, IdentifierMap(entries=tuple(entries)),
                                   int(rng.integers(2)), i))
    return batch


class TestProject:
    def test_scales_onto_ball(self):
        out = project(np.array([[3.0, 4.0]], dtype=np.float32), 1.0)
        np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-7)

    def test_inside_ball_unchanged(self):
        x = np.array([[0.1, 0.0]], dtype=np.float32)
        assert project(x, 1.0) is x

    def test_zero_epsilon_zeroes_everything(self):
        out = project(np.array([[3.0, 4.0]], dtype=np.float32), 0.0)
        assert np.array_equal(out, np.zeros((1, 2), dtype=np.float32))

    def test_idempotent_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.normal(0, 2, (3, 5)).astype(np.float32)
            eps = float(rng.random() * 2)
            once = project(x, eps)
            twice = project(once, eps)
            assert np.array_equal(once, twice)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            project(np.ones((1, 1), dtype=np.float32), -0.5)


class TestAscentStep:
    def test_step_has_length_eta(self):
        out = ascent_step(np.zeros((1, 2), dtype=np.float32),
                          np.array([[2.0, 0.0]], dtype=np.float32), 0.1, 1.0)
        np.testing.assert_allclose(out, [[0.1, 0.0]], atol=1e-7)

    def test_projected_after_ascending_past_ball(self):
        out = ascent_step(np.array([[0.95, 0.0]], dtype=np.float32),
                          np.array([[1.0, 0.0]], dtype=np.float32), 0.1, 1.0)
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)

    def test_vanishing_gradient_skips(self):
        delta = np.array([[0.3, 0.4]], dtype=np.float32)
        out = ascent_step(delta, np.zeros((1, 2), dtype=np.float32), 0.1, 1.0)
        assert out is delta


class TestScatter:
    def test_rows_land_on_occurrences(self):
        d = 4
        idmap = IdentifierMap(entries=(IdentifierEntry("add", (3, 4), (1,)),
                                       IdentifierEntry("x", (6,), (4,))))
        mats = {"add": np.arange(2 * d, dtype=np.float32).reshape(2, d) + 1,
                "x": np.full((1, d), 9.0, dtype=np.float32)}
        perts = PerturbationSet(idmap, d, mats)
        delta = scatter(perts, idmap, 6, d).data
        np.testing.assert_array_equal(delta[1], mats["add"][0])
        np.testing.assert_array_equal(delta[2], mats["add"][1])
        np.testing.assert_array_equal(delta[4], mats["x"][0])
        for row in (0, 3, 5):
            assert np.array_equal(delta[row], np.zeros(d, dtype=np.float32))

    def test_empty_map_gives_zeros(self):
        idmap = IdentifierMap(entries=())
        delta = scatter(PerturbationSet(idmap, 4), idmap, 5, 4)
        assert np.array_equal(delta.data, np.zeros((5, 4), dtype=np.float32))

    def test_entry_mismatch_rejected(self):
        other = IdentifierMap(entries=(IdentifierEntry("zzz", (1,), (0,)),))
        with pytest.raises(ValueError, match="do not match"):
            scatter(PerturbationSet(other, 4), toy_map(), 6, 4)

    def test_gradient_sums_over_occurrences(self):
        d = 3
        idmap = IdentifierMap(entries=(IdentifierEntry("v", (5, 6), (1, 4)),))
        perts = PerturbationSet(idmap, d)
        rng = np.random.default_rng(1)
        g = Tensor(rng.normal(0, 1, (7, d)).astype(np.float32))
        out = T.reduce_sum(T.mul(scatter(perts, idmap, 7, d), g))
        grads = backward(out, list(perts.leaves.values()))
        expected = g.data[1:3] + g.data[4:6]
        np.testing.assert_allclose(grads[perts.leaves["v"]], expected, atol=1e-6)

    def test_gradient_matches_finite_differences(self):
        d = 3
        idmap = IdentifierMap(entries=(IdentifierEntry("v", (5, 6), (1, 4)),))
        rng = np.random.default_rng(2)
        g = rng.normal(0, 1, (7, d)).astype(np.float64)
        w = Tensor(g, dtype=np.float64)

        def f(mat):
            perts = PerturbationSet(idmap, d, dtype=np.float64)
            perts.leaves = {"v": mat}
            return T.reduce_sum(T.mul(scatter(perts, idmap, 7, d), w))

        err = T.grad_check(f, Tensor(rng.normal(0, 1, (2, d)), dtype=np.float64), 1e-6)
        assert err < 1e-8

    def test_occurrence_past_sequence_rejected(self):
        idmap = IdentifierMap(entries=(IdentifierEntry("v", (5,), (9,)),))
        with pytest.raises(ValueError, match="exceeds"):
            scatter(PerturbationSet(idmap, 4), idmap, 6, 4)


class TestDegenerateReductions:
    @pytest.mark.parametrize("mode", ["space", "adv", "rand_space", "rand_adv"])
    def test_epsilon_zero_equals_clean_gradient(self, tiny_params, tiny_config, mode):
        rng = np.random.default_rng(3)
        batch = make_batch(rng, tiny_config, 4)
        cfg = TrainConfig(mode=mode, epsilon=0.0, steps=3, seed=5)
        got = minibatch_gradient(tiny_params, batch, cfg, train=False).grads
        clean = baseline_minibatch(tiny_params, batch,
                                   TrainConfig(mode="baseline", seed=5),
                                   train=False).grads
        for name in clean:
            scale = np.abs(clean[name]).max() + 1e-12
            assert np.abs(got[name] - clean[name]).max() / scale < 1e-6, name

    def test_space_k1_equals_clean_exactly(self, tiny_params, tiny_config):
        rng = np.random.default_rng(4)
        batch = make_batch(rng, tiny_config, 3)
        cfg = TrainConfig(mode="space", epsilon=1.0, steps=1, seed=5)
        got = space_minibatch(tiny_params, batch, cfg, train=False).grads
        clean = baseline_minibatch(tiny_params, batch,
                                   TrainConfig(mode="baseline", seed=5),
                                   train=False).grads
        for name in clean:
            assert np.array_equal(got[name], clean[name]), name

    def test_no_identifiers_space_stays_clean_adv_does_not(self, tiny_params, tiny_config):
        rng = np.random.default_rng(5)
        batch = make_batch(rng, tiny_config, 3, with_identifiers=False)
        clean = baseline_minibatch(tiny_params, batch,
                                   TrainConfig(mode="baseline", seed=5),
                                   train=False).grads
        space = space_minibatch(tiny_params, batch,
                                TrainConfig(mode="space", epsilon=1.0, steps=3, seed=5),
                                train=False).grads
        adv = adv_minibatch(tiny_params, batch,
                            TrainConfig(mode="adv", epsilon=1.0, steps=3, seed=5),
                            train=False).grads
        for name in clean:
            scale = np.abs(clean[name]).max() + 1e-12
            assert np.abs(space[name] - clean[name]).max() / scale < 1e-6
        assert any(np.abs(adv[name] - clean[name]).max() > 1e-5 for name in clean)


class TestMechanismInvariants:
    def test_tying_keyword_rows_and_ball(self, tiny_params, tiny_config):
        rng = np.random.default_rng(6)
        batch = make_batch(rng, tiny_config, 4)
        cfg = TrainConfig(mode="space", epsilon=0.5, eta=0.05, steps=3, seed=7)
        result = space_minibatch(tiny_params, batch, cfg, train=False)
        for sample, perts in zip(batch, result.perturbations):
            identifier_rows = set()
            for entry in sample.idmap.entries:
                mat = perts.leaves[entry.name].data
                assert fro(mat) <= cfg.epsilon + 1e-6
                assert fro(mat) > 0  # ascent moved off zero
                for p, q in entry.ranges():
                    identifier_rows.update(range(p, q))
            delta = scatter(perts, sample.idmap, sample.n, tiny_config.d).data
            for entry in sample.idmap.entries:
                blocks = [delta[p:q] for p, q in entry.ranges()]
                for block in blocks[1:]:
                    assert np.array_equal(block, blocks[0])  # bitwise tying
            for row in range(sample.n):
                if row not in identifier_rows:
                    assert np.array_equal(delta[row],
                                          np.zeros(tiny_config.d, dtype=np.float32))

    def test_adv_whole_matrix_ball(self, tiny_params, tiny_config):
        rng = np.random.default_rng(7)
        batch = make_batch(rng, tiny_config, 3)
        cfg = TrainConfig(mode="adv", epsilon=0.25, eta=0.5, steps=3, seed=7)
        result = adv_minibatch(tiny_params, batch, cfg, train=False)
        for perts in result.perturbations:
            assert fro(perts.leaf.data) <= cfg.epsilon + 1e-6

    def test_rand_space_ties_and_spares_keywords(self, tiny_params, tiny_config):
        rng = np.random.default_rng(8)
        batch = make_batch(rng, tiny_config, 2)
        cfg = TrainConfig(mode="rand_space", epsilon=0.5, steps=2, seed=11)
        result = random_perturb_minibatch(tiny_params, batch, cfg, train=False)
        for sample, perts in zip(batch, result.perturbations):
            delta = scatter(perts, sample.idmap, sample.n, tiny_config.d).data
            entry = sample.idmap.entries[0]
            blocks = [delta[p:q] for p, q in entry.ranges()]
            assert np.array_equal(blocks[0], blocks[1])
            assert np.array_equal(delta[0], np.zeros(tiny_config.d, dtype=np.float32))

    def test_first_order_ascent_property(self, tiny_config):
        # frozen float64 model: stepping along g/||g|| should gain at least
        # half the first-order prediction eta * ||g||_F
        params = init_params(tiny_config, seed=1).astype(np.float64)
        rng = np.random.default_rng(9)
        ok = {1e-4: 0, 1e-3: 0}
        trials = 100
        for _ in range(trials):
            batch = make_batch(rng, tiny_config, 1)
            sample = batch[0]
            perts = PerturbationSet(sample.idmap, tiny_config.d, dtype=np.float64)
            delta = scatter(perts, sample.idmap, sample.n, tiny_config.d)
            out = loss(forward(params, sample.ids, delta), sample.label)
            grads = backward(out, list(perts.leaves.values()))
            base = float(out.data)
            gnorm_total = sum(fro(g) for g in grads.values())
            if gnorm_total < 1e-9:
                for eta in ok:
                    ok[eta] += 1
                continue
            for eta in ok:
                stepped = {name: leaf.data + eta * grads[leaf] / fro(grads[leaf])
                           for name, leaf in perts.leaves.items()}
                perts2 = PerturbationSet(sample.idmap, tiny_config.d, stepped,
                                         dtype=np.float64)
                delta2 = scatter(perts2, sample.idmap, sample.n, tiny_config.d)
                new = float(loss(forward(params, sample.ids, delta2), sample.label).data)
                if new - base >= 0.5 * eta * gnorm_total:
                    ok[eta] += 1
        for eta, count in ok.items():
            assert count >= 0.9 * trials, (eta, count)

    def test_gradient_accumulation_is_mean_of_passes(self, tiny_params, tiny_config):
        # reproduce the K passes by hand and compare with the loop's output
        rng = np.random.default_rng(10)
        batch = make_batch(rng, tiny_config, 2)
        cfg = TrainConfig(mode="space", epsilon=0.5, eta=0.05, steps=3, seed=13)
        result = space_minibatch(tiny_params, batch, cfg, train=False)

        from spacecode.model import forward_batch, loss_batch, pad_batch
        ids, lengths = pad_batch([s.ids for s in batch])
        labels = np.array([s.label for s in batch])
        perts = [PerturbationSet(s.idmap, tiny_config.d) for s in batch]
        per_pass = []
        for t in range(cfg.steps):
            from spacecode.training import scatter_batch
            delta = scatter_batch(perts, lengths, ids.shape[1], tiny_config.d)
            tiny_params.zero_grad()
            out = loss_batch(forward_batch(tiny_params, ids, lengths, delta), labels)
            backward(out)
            per_pass.append({k: v.grad.copy() if v.grad is not None else np.zeros_like(v.data)
                             for k, v in tiny_params.items()})
            perts = [p.ascended(cfg.eta, cfg.epsilon) for p in perts]
        tiny_params.zero_grad()
        for name in result.grads:
            mean = sum(p[name] for p in per_pass) / cfg.steps
            np.testing.assert_allclose(result.grads[name], mean, atol=1e-7)


class TestAugment:
    def test_k1_equals_baseline(self, tiny_params, tiny_config):
        rng = np.random.default_rng(11)
        batch = make_batch(rng, tiny_config, 3)
        cfg = TrainConfig(mode="augment", steps=1, seed=17)
        got = augment_minibatch(tiny_params, batch, cfg, train=False).grads
        clean = baseline_minibatch(tiny_params, batch,
                                   TrainConfig(mode="baseline", seed=17),
                                   train=False).grads
        for name in clean:
            assert np.array_equal(got[name], clean[name])

    def test_identity_variants_give_clean_gradient(self, tiny_params, tiny_config):
        rng = np.random.default_rng(12)
        batch = make_batch(rng, tiny_config, 3)
        for s in batch:
            s.variants = [s, s, s]
        cfg = TrainConfig(mode="augment", steps=3, seed=17)
        got = augment_minibatch(tiny_params, batch, cfg, train=False).grads
        clean = baseline_minibatch(tiny_params, batch,
                                   TrainConfig(mode="baseline", seed=17),
                                   train=False).grads
        for name in clean:
            scale = np.abs(clean[name]).max() + 1e-12
            assert np.abs(got[name] - clean[name]).max() / scale < 1e-6


class TestTrainLoop:
    def _data(self, tiny_config, count=60, seed=13):
        return make_batch(np.random.default_rng(seed), tiny_config, count)

    def test_zero_epochs_returns_initial_params(self, tiny_config):
        cfg = TrainConfig(mode="baseline", epochs=0, seed=1)
        data = self._data(tiny_config, 40)
        params, history = train(cfg, data[:30], data[30:], tiny_config)
        assert history == []
        from spacecode.seeding import stream_key
        expected = init_params(tiny_config, seed=stream_key(1, "init") % (2 ** 32))
        for name in params.names():
            assert np.array_equal(params[name].data, expected[name].data)

    def test_baseline_equals_space_eps0_k1_trajectory(self, tiny_config):
        data = self._data(tiny_config, 60)
        base_cfg = TrainConfig(mode="baseline", epochs=2, seed=3, batch_size=16)
        space_cfg = TrainConfig(mode="space", epsilon=0.0, steps=1, epochs=2,
                                seed=3, batch_size=16)
        p1, h1 = train(base_cfg, data[:48], data[48:], tiny_config)
        p2, h2 = train(space_cfg, data[:48], data[48:], tiny_config)
        assert [h["dev_acc"] for h in h1] == [h["dev_acc"] for h in h2]
        assert [h["train_loss"] for h in h1] == [h["train_loss"] for h in h2]
        for name in p1.names():
            assert np.array_equal(p1[name].data, p2[name].data)

    def test_metrics_stream_schema(self, tiny_config, tmp_path):
        import json
        data = self._data(tiny_config, 40)
        path = tmp_path / "metrics.jsonl"
        train(TrainConfig(mode="baseline", epochs=2, seed=1), data[:30], data[30:],
              tiny_config, metrics_path=path)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 2
        assert all(set(l) == {"epoch", "mode", "train_loss", "dev_acc", "wall_ms"}
                   for l in lines)

    def test_nonfinite_loss_aborts_with_diagnostics(self, tiny_config):
        data = self._data(tiny_config, 20)
        params = init_params(tiny_config, seed=0)
        params["cls_w"].data[0, 0] = np.nan  # poison the loss
        cfg = TrainConfig(mode="baseline", epochs=1, seed=1)
        with pytest.raises(TrainingError, match="epoch 1"):
            train(cfg, data[:16], data[16:], tiny_config, params=params)

    def test_empty_dataset_rejected(self, tiny_config):
        with pytest.raises(ValueError):
            train(TrainConfig(), [], [], tiny_config)

    def test_length_grouping(self, encoded_corpus):
        batches = length_grouped_batches(encoded_corpus, 16)
        flat = [i for b in batches for i in b]
        assert sorted(flat) == list(range(len(encoded_corpus)))
        lengths = [encoded_corpus[i].n for i in flat]
        assert lengths == sorted(lengths)


class TestTrainConfig:
    def test_mode_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="quantum")

    def test_eta_needed_for_ascent(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="space", eta=0.0)
        TrainConfig(mode="baseline", eta=0.0)  # fine for non-ascent modes

    def test_json_round_trip(self, tmp_path):
        cfg = TrainConfig(mode="space", epsilon=0.5, eta=1e-3, steps=2,
                          alpha=1e-3, epochs=7, batch_size=8, seed=9)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert TrainConfig.load(path) == cfg
