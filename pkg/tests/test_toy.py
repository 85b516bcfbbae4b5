import numpy as np
import pytest

from brctc import DivergedLoss, RiskSpec
from brctc.toy import (
    ToyModel,
    ToyTaskConfig,
    Utterance,
    edit_distance,
    evaluate_spikes,
    gen_dataset,
    token_templates,
    train,
    windowed,
)

SMALL = ToyTaskConfig(num_train=8, num_eval=4, seed=5)


class TestDataset:
    def test_three_tokens_layout(self):
        cfg = ToyTaskConfig(min_tokens=3, max_tokens=3, num_train=3, num_eval=1)
        for utt in sum(gen_dataset(cfg), []):
            assert utt.T == 18
            assert utt.ref_starts == (1, 7, 13)

    def test_length_is_tokens_times_frames(self):
        for utt in sum(gen_dataset(ToyTaskConfig(frames_per_token=4)), []):
            assert utt.T == 4 * len(utt.labels)
            assert 3 <= len(utt.labels) <= 5

    def test_noise_free_features_are_templates(self):
        cfg = ToyTaskConfig(noise_scale=0.0, num_train=4, num_eval=1)
        templates = token_templates(cfg)
        for utt in gen_dataset(cfg)[0]:
            np.testing.assert_array_equal(utt.features, np.repeat(templates[list(utt.labels)], 6, axis=0))

    def test_regeneration_is_byte_identical(self):
        a, b = gen_dataset(SMALL), gen_dataset(SMALL)
        for x, y in zip(sum(a, []), sum(b, [])):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.labels == y.labels

    def test_seed_changes_data(self):
        a = gen_dataset(SMALL)[0][0]
        b = gen_dataset(ToyTaskConfig(num_train=8, num_eval=4, seed=6))[0][0]
        assert a.features.tobytes() != b.features.tobytes()

    def test_no_adjacent_repeats(self):
        for utt in gen_dataset(ToyTaskConfig())[0]:
            assert all(a != b for a, b in zip(utt.labels, utt.labels[1:]))
            assert all(1 <= k <= 4 for k in utt.labels)

    @pytest.mark.parametrize("field", ["vocab_size", "frames_per_token", "num_train", "num_eval", "feature_dim"])
    def test_counts_positive(self, field):
        with pytest.raises(ValueError):
            ToyTaskConfig(**{field: 0})


def test_windowed():
    feats = np.arange(6.0).reshape(3, 2)
    w = windowed(feats, 1)
    assert w.shape == (3, 6)
    np.testing.assert_array_equal(w[0], [0, 0, 0, 1, 2, 3])
    np.testing.assert_array_equal(w[2], [2, 3, 4, 5, 0, 0])


class TestModel:
    def test_rows_normalize(self):
        model = ToyModel.init(8, 4, window=3, hidden=6)
        utt = gen_dataset(SMALL)[0][0]
        y = model.posterior(utt.features)
        np.testing.assert_allclose(y.probs.sum(axis=1), 1.0, atol=1e-12)
        assert y.V == 4

    def test_checkpoint_round_trip(self, tmp_path):
        model = ToyModel.init(8, 4, window=2, hidden=5, seed=9)
        model.save(tmp_path / "m.npz")
        loaded = ToyModel.load(tmp_path / "m.npz")
        assert loaded.window == 2
        for name, value in model.params().items():
            np.testing.assert_array_equal(loaded.params()[name], value)

    def test_checkpoint_version(self, tmp_path):
        model = ToyModel.init(8, 4, window=1, hidden=2)
        np.savez(tmp_path / "m.npz", format_version=99, window=1, **model.params())
        with pytest.raises(ValueError):
            ToyModel.load(tmp_path / "m.npz")

    def test_untrained_keeps_everything(self):
        model = ToyModel.init(8, 4, window=4, hidden=32)
        summary = evaluate_spikes(model, gen_dataset(SMALL)[1])["summary"]
        assert summary["mean_dsf"] == 1.0


class TestTrain:
    @pytest.mark.parametrize("kind,lam", [("vanilla", 0.0), ("downsample", 10.0), ("early_emission", 20.0)])
    def test_deterministic(self, kind, lam):
        train_set, _ = gen_dataset(SMALL)
        runs = [
            train(ToyModel.init(8, 4, window=2, hidden=8, seed=1), train_set, RiskSpec(kind, lam), epochs=10, lr=0.1)
            for _ in range(2)
        ]
        assert runs[0].loss_trace == runs[1].loss_trace
        assert runs[0].model.W1.tobytes() == runs[1].model.W1.tobytes()

    def test_loss_goes_down(self):
        train_set, _ = gen_dataset(SMALL)
        trace = train(ToyModel.init(8, 4, window=2, hidden=8), train_set, RiskSpec(), epochs=40, lr=0.1).loss_trace
        assert trace[-1] < trace[0]

    def test_matches_unfused_objective(self):
        # the trainer's loss is the mean library loss over utterances
        from brctc import brctc_loss

        train_set, _ = gen_dataset(SMALL)
        model = ToyModel.init(8, 4, window=2, hidden=8)
        spec = RiskSpec("early_emission", 20.0)
        want = np.mean([brctc_loss(model.posterior(u.features), u.labels, spec).neg_log_objective for u in train_set])
        trace = train(model, train_set, spec, epochs=1, lr=0.0).loss_trace
        assert trace[0] == pytest.approx(want, abs=1e-10)

    def test_empty(self):
        with pytest.raises(ValueError):
            train(ToyModel.init(8, 4), [], RiskSpec())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        train_set, _ = gen_dataset(SMALL)
        with pytest.raises(DivergedLoss):
            train(ToyModel.init(8, 4, window=1, hidden=4), train_set, RiskSpec(), epochs=20, lr=1e300)


class TestEvaluate:
    def test_perfect_alignment_rows(self):
        # a model stand-in whose posterior is the true segmentation spiking at segment starts
        utt = gen_dataset(ToyTaskConfig(num_train=1, num_eval=1))[1][0]

        class Oracle:
            def posterior(self, features):
                from brctc import PosteriorGrid

                probs = np.full((utt.T, 5), 1e-4)
                probs[:, 0] = 1 - 4e-4
                for tok, start in zip(utt.labels, utt.ref_starts):
                    probs[start - 1] = 1e-4
                    probs[start - 1, tok] = 1 - 4e-4
                return PosteriorGrid.from_probs(probs)

        stats = evaluate_spikes(Oracle(), [utt])
        row = stats["utterances"][0]
        assert row["hyp"] == list(utt.labels) and row["edits"] == 0
        assert row["dl"] == 0.0
        assert row["last_spike"] == utt.ref_starts[-1]
        assert row["dsf"] == min(utt.ref_starts[-1] + 5, utt.T) / utt.T
        assert stats["summary"]["ter"] == 0.0


def test_edit_distance():
    assert edit_distance([1, 2, 3], [1, 3]) == 1
    assert edit_distance([], [1, 2]) == 2
    assert edit_distance([1, 2], [2, 1]) == 2


def test_utterance_length():
    assert Utterance(np.zeros((4, 2)), (1,), (1,)).T == 4


def test_vanilla_baseline_fits_eval_split():
    # 200 utterances, V=4, U in 3..5 with the default optimizer settings
    from brctc.toy import run_experiment

    result, stats = run_experiment(ToyTaskConfig(), RiskSpec())
    assert len(result.loss_trace) == 200
    assert stats["summary"]["mean_ctc_loss"] < 0.1
