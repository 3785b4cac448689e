import numpy as np
import pytest

from atcadet import autodiff as ad
from atcadet import model as md
from atcadet import training as tr
from atcadet.errors import BadConfig, EmptySplit, MissingEmbedding, MissingFeature
from atcadet.metrics import compute_eer
from atcadet.protocol import ProtocolEntry

TOY_CFG = md.AtcaConfig(
    d_spec=4, d_model=4, d_k=4, n_heads=1, gru_layers=1, gru_hidden=4, d_text=8
)


def _toy_data(n_train=8, n_dev=4, seed=0, t_frames=3):
    """Linearly separable toy set: bonafide features sit at +1, spoof at -1."""
    rng = np.random.default_rng(seed)
    entries, features, embeddings = [], {}, {}
    for i in range(n_train + n_dev):
        split = "train" if i < n_train else "dev"
        label = "bonafide" if i % 2 == 0 else "spoof"
        mean = 1.0 if label == "bonafide" else -1.0
        utt = f"u{i}"
        entries.append(ProtocolEntry(utt, f"{utt}.wav", label, "g", split))
        features[utt] = mean + 0.1 * rng.normal(size=(t_frames, TOY_CFG.d_spec))
        embeddings[utt] = rng.normal(size=(2, TOY_CFG.d_text))
    return entries, features, embeddings


class TestTrainConfig:
    def test_defaults(self):
        cfg = tr.TrainConfig()
        assert cfg.lr == 1e-3 and cfg.grad_clip == 5.0

    def test_validation(self):
        with pytest.raises(BadConfig):
            tr.TrainConfig(epochs=0)
        with pytest.raises(BadConfig):
            tr.TrainConfig(lr=-0.1)
        with pytest.raises(BadConfig):
            tr.TrainConfig(adam_beta1=1.0)
        with pytest.raises(BadConfig):
            tr.TrainConfig(grad_clip=0.0)

    def test_zero_lr_allowed(self):
        assert tr.TrainConfig(lr=0.0).lr == 0.0

    def test_from_dict_unknown_key(self):
        with pytest.raises(BadConfig):
            tr.TrainConfig.from_dict({"epochs": 3, "momentum": 0.9})


class TestClassWeights:
    def test_inverse_frequency_hand_case(self):
        entries = [
            ProtocolEntry(f"u{i}", "w", "bonafide", "g", "train") for i in range(3)
        ] + [ProtocolEntry("u3", "w", "spoof", "g", "train")]
        w = tr.inverse_frequency_weights(entries)
        assert w == pytest.approx((0.5, 1.5))
        assert (w[0] + w[1]) / 2 == pytest.approx(1.0)

    def test_balanced_gives_unit_weights(self):
        entries = [
            ProtocolEntry("u0", "w", "bonafide", "g", "train"),
            ProtocolEntry("u1", "w", "spoof", "g", "train"),
        ]
        assert tr.inverse_frequency_weights(entries) == pytest.approx((1.0, 1.0))

    def test_one_class_only(self):
        entries = [ProtocolEntry("u0", "w", "spoof", "g", "train")]
        with pytest.raises(EmptySplit):
            tr.inverse_frequency_weights(entries)


class TestTrain:
    def test_zero_lr_leaves_parameters_untouched(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=5, lr=0.0, seed=3, patience=10)
        params, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        fresh = md.AtcaParams.init(params.config, seed=cfg.seed)
        for name, tensor in params.tensors.items():
            assert np.array_equal(tensor.values, fresh[name].values), name
        assert len(set(report.val_eer)) == 1

    def test_overfits_separable_toy_set(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=200, batch_size=8, lr=3e-2, seed=0, patience=200)
        params, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        assert min(report.train_loss) < 1e-2
        assert len(report.train_loss) <= 200

    def test_same_seed_reproduces_report_and_params(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=6, seed=11, patience=6)
        p1, r1 = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        p2, r2 = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        assert r1.train_loss == r2.train_loss
        assert r1.val_eer == r2.val_eer
        assert r1.best_epoch == r2.best_epoch
        for (n1, a1), (n2, a2) in zip(p1.named_arrays(), p2.named_arrays()):
            assert n1 == n2 and np.array_equal(a1, a2)

    def test_best_epoch_tracks_lowest_dev_eer(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=10, seed=2, patience=10)
        params, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        assert report.val_eer[report.best_epoch] == min(report.val_eer)
        dev = [e for e in entries if e.split == "dev"]
        trials = tr.score_protocol(params, dev, features, embeddings)
        assert compute_eer(trials).eer == pytest.approx(report.val_eer[report.best_epoch], abs=1e-12)

    def test_patience_stops_early(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=50, lr=0.0, seed=1, patience=2)
        _, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        # epoch 0 sets the best; two non-improving epochs then stop
        assert len(report.val_eer) == 3

    def test_class_weights_derived_from_train_split(self):
        entries, features, embeddings = _toy_data()
        # drop one spoof train utterance: 4 bona vs 3 spoof
        entries = [e for e in entries if e.utt_id != "u1"]
        cfg = tr.TrainConfig(epochs=1, seed=0)
        params, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        inv = np.array([1 / 4, 1 / 3])
        expect = tuple(inv / inv.mean())
        assert report.class_weights == pytest.approx(expect)
        assert params.config.class_weights == pytest.approx(expect)

    def test_manual_class_weights_respected(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=1, seed=0, auto_class_weights=False)
        model_cfg = md.AtcaConfig(
            d_spec=4, d_model=4, d_k=4, n_heads=1, gru_layers=1, gru_hidden=4,
            d_text=8, class_weights=(2.0, 0.5),
        )
        params, report = tr.train(entries, features, embeddings, cfg, model_cfg)
        assert report.class_weights == (2.0, 0.5)

    def test_normalizer_buffers_match_train_stats(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=1, lr=0.0, seed=0)
        params, _ = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        train_ids = [e.utt_id for e in entries if e.split == "train"]
        stacked = np.concatenate([features[u] for u in train_ids], axis=0)
        assert np.allclose(params.buffers["norm_mu"], stacked.mean(axis=0), atol=0)
        assert np.allclose(
            params.buffers["norm_sigma"], np.maximum(stacked.std(axis=0), 1e-6), atol=0
        )

    def test_missing_feature_and_embedding(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=1)
        broken = dict(features)
        del broken["u0"]
        with pytest.raises(MissingFeature):
            tr.train(entries, broken, embeddings, cfg, TOY_CFG)
        broken_e = dict(embeddings)
        del broken_e["u2"]
        with pytest.raises(MissingEmbedding):
            tr.train(entries, features, broken_e, cfg, TOY_CFG)

    def test_empty_splits(self):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=1)
        train_only = [e for e in entries if e.split == "train"]
        with pytest.raises(EmptySplit):
            tr.train(train_only, features, embeddings, cfg, TOY_CFG)
        dev_only = [e for e in entries if e.split == "dev"]
        with pytest.raises(EmptySplit):
            tr.train(dev_only, features, embeddings, cfg, TOY_CFG)

    def test_raw_branch_rejected(self):
        entries, features, embeddings = _toy_data()
        raw_cfg = md.AtcaConfig(
            d_spec=4, d_model=4, d_k=4, n_heads=1, gru_layers=1, gru_hidden=4,
            d_text=8, use_raw_branch=True, d_raw=4,
        )
        with pytest.raises(BadConfig):
            tr.train(entries, features, embeddings, tr.TrainConfig(epochs=1), raw_cfg)

    def test_wall_seconds_positive_and_report_round_trip(self, tmp_path):
        entries, features, embeddings = _toy_data()
        cfg = tr.TrainConfig(epochs=2, seed=0, patience=2)
        _, report = tr.train(entries, features, embeddings, cfg, TOY_CFG)
        assert report.wall_seconds > 0
        path = tmp_path / "report.json"
        tr.write_report(path, report)
        again = tr.load_report(path)
        assert again.to_dict() == report.to_dict()


class TestLossSmoothness:
    def test_full_batch_gd_non_increasing_first_steps(self):
        # plain gradient descent with a small step on a fixed batch
        entries, features, embeddings = _toy_data()
        train_e = [e for e in entries if e.split == "train"]
        params = md.AtcaParams.init(TOY_CFG, seed=4)
        specs = [features[e.utt_id] for e in train_e]
        texts = [embeddings[e.utt_id] for e in train_e]
        labels = np.array([0 if e.label == "bonafide" else 1 for e in train_e])
        weights = np.array([1.0, 1.0])
        prev = np.inf
        for _ in range(10):
            with ad.Tape() as tape:
                logits = md.forward_batch(specs, [None] * len(specs), texts, params)
                loss = ad.weighted_ce_logits(logits, labels, weights)
            assert loss.item() <= prev + 1e-12
            prev = loss.item()
            grad_map = ad.backward(tape, loss)
            for name, tensor in params.tensors.items():
                tensor.values = tensor.values - 1e-3 * grad_map[tensor]


@pytest.fixture(scope="module")
def trained():
    entries, features, embeddings = _toy_data()
    cfg = tr.TrainConfig(epochs=5, seed=0, patience=5)
    params, _ = tr.train(entries, features, embeddings, cfg, TOY_CFG)
    return params, entries, features, embeddings


class TestScoreProtocol:
    def test_empty_protocol(self, trained):
        params, _, features, embeddings = trained
        assert tr.score_protocol(params, [], features, embeddings) == []

    def test_row_count_and_order(self, trained):
        params, entries, features, embeddings = trained
        trials = tr.score_protocol(params, entries, features, embeddings)
        assert [t.utt_id for t in trials] == [e.utt_id for e in entries]
        assert all(t.label == e.label for t, e in zip(trials, entries))

    def test_scoring_twice_identical(self, trained):
        params, entries, features, embeddings = trained
        a = tr.score_protocol(params, entries, features, embeddings)
        b = tr.score_protocol(params, entries, features, embeddings)
        assert [t.score for t in a] == [t.score for t in b]

    def test_batched_matches_single(self, trained):
        params, entries, features, embeddings = trained
        batched = tr.score_protocol(params, entries, features, embeddings)
        for e, t in zip(entries, batched):
            single = tr.score_protocol(params, [e], features, embeddings)[0]
            assert single.score == pytest.approx(t.score, abs=1e-12)

    def test_checkpoint_round_trip_scores(self, trained, tmp_path):
        params, entries, features, embeddings = trained
        path = tmp_path / "model.atck"
        md.save_checkpoint(path, params)
        clone = md.load_checkpoint(path)
        a = tr.score_protocol(params, entries, features, embeddings)
        b = tr.score_protocol(clone, entries, features, embeddings)
        assert [t.score for t in a] == [t.score for t in b]

    def test_missing_feature(self, trained):
        params, entries, features, embeddings = trained
        with pytest.raises(MissingFeature):
            tr.score_protocol(params, entries, {}, embeddings)


class TestAblateText:
    def test_zero_value_projection_matches_full(self):
        entries, features, embeddings = _toy_data()
        params = md.AtcaParams.init(TOY_CFG, seed=6)
        params["Wv"].values = np.zeros_like(params["Wv"].values)
        full = tr.score_protocol(params, entries, features, embeddings)
        ablated = tr.ablate_text(params, entries, features)
        for a, b in zip(full, ablated):
            assert a.score == pytest.approx(b.score, abs=1e-12)

    def test_ablated_deterministic(self):
        entries, features, embeddings = _toy_data()
        params = md.AtcaParams.init(TOY_CFG, seed=7)
        a = tr.ablate_text(params, entries, features)
        b = tr.ablate_text(params, entries, features)
        assert [t.score for t in a] == [t.score for t in b]

    def test_ablated_ignores_embeddings_entirely(self):
        entries, features, embeddings = _toy_data()
        params = md.AtcaParams.init(TOY_CFG, seed=8)
        a = tr.ablate_text(params, entries, features)
        b = tr.score_protocol(params, entries, features, {}, ablate_text_branch=True)
        assert [t.score for t in a] == [t.score for t in b]


class TestLinearBaseline:
    def test_separable_stats_reach_zero_eer(self):
        entries, features, _ = _toy_data(n_train=16, n_dev=8, seed=3)
        train_e = [e for e in entries if e.split == "train"]
        dev_e = [e for e in entries if e.split == "dev"]
        baseline = tr.fit_linear_baseline(train_e, features)
        trials = tr.score_linear_baseline(baseline, dev_e, features)
        assert compute_eer(trials).eer == 0.0

    def test_stats_vector_layout(self):
        m = np.array([[0.0, 2.0], [2.0, 2.0]])
        stats = tr.logmel_stats(m)
        assert stats == pytest.approx([1.0, 2.0, 1.0, 0.0])

    def test_empty_and_missing(self):
        entries, features, _ = _toy_data()
        with pytest.raises(EmptySplit):
            tr.fit_linear_baseline([], features)
        with pytest.raises(MissingFeature):
            tr.fit_linear_baseline(entries, {})
        baseline = tr.fit_linear_baseline(
            [e for e in entries if e.split == "train"], features
        )
        assert tr.score_linear_baseline(baseline, [], features) == []
