import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cma_grounding.data import (FEATURE_HEADER, GroundingSample, SyntheticConfig, Vocabulary,
                                collate, dataset_stats, generate_synthetic, iterate_batches,
                                load_dataset, parse_annotations, read_features, save_dataset,
                                tokenize, uniform_sample_indices, write_annotations, write_features)
from cma_grounding.errors import DataError

JSONL_LINE = '{"id":"v1","start":2.0,"end":8.0,"duration":30.0,"query":"a person eats food"}'


class TestParse:
    def test_jsonl_normalizes(self, tmp_path):
        path = tmp_path / "a.jsonl"
        path.write_text(JSONL_LINE + "\n")
        [s] = parse_annotations(path, "jsonl")
        assert s.id == "v1" and s.query == "a person eats food"
        assert s.gt == pytest.approx((0.0667, 0.2667), abs=5e-5)
        assert s.gt == (2.0 / 30.0, 8.0 / 30.0)

    def test_charades_txt_same_record(self, tmp_path):
        a = tmp_path / "a.jsonl"
        a.write_text(JSONL_LINE + "\n")
        b = tmp_path / "b.txt"
        b.write_text("v1 2.0 8.0##a person eats food\n")
        [ja] = parse_annotations(a, "jsonl")
        [cb] = parse_annotations(b, "charades_txt", durations={"v1": 30.0})
        assert ja == cb

    def test_charades_needs_duration(self, tmp_path):
        b = tmp_path / "b.txt"
        b.write_text("v1 2.0 8.0##a person eats food\n")
        with pytest.raises(DataError, match="duration"):
            parse_annotations(b, "charades_txt")

    def test_degenerate_rejected(self, tmp_path, caplog):
        path = tmp_path / "a.jsonl"
        path.write_text('{"id":"v","start":0,"end":0,"duration":5,"query":"x"}\n'
                        '{"id":"w","start":3,"end":1,"duration":5,"query":"x"}\n')
        with caplog.at_level(logging.WARNING):
            assert parse_annotations(path) == []
        assert "rejected" in caplog.text

    def test_end_past_duration_clamped(self, tmp_path, caplog):
        path = tmp_path / "a.jsonl"
        path.write_text('{"id":"v","start":1,"end":12,"duration":10,"query":"x"}\n')
        with caplog.at_level(logging.WARNING):
            [s] = parse_annotations(path)
        assert s.gt_seconds == (1.0, 10.0)
        assert "clamped" in caplog.text

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "a.jsonl"
        path.write_text(JSONL_LINE + "\n{not json}\n")
        with pytest.raises(DataError, match=":2"):
            parse_annotations(path)
        path.write_text('{"id":"v","start":1}\n')
        with pytest.raises(DataError, match=":1"):
            parse_annotations(path)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 100), st.floats(0.01, 50), st.floats(0.1, 300),
                              st.text(min_size=1, max_size=20)), min_size=1, max_size=10))
    def test_jsonl_round_trip(self, tmp_path_factory, rows):
        samples = []
        for i, (a, length, extra, text) in enumerate(rows):
            duration = a + length + extra
            samples.append(GroundingSample(f"v{i}", text, duration, (a, a + length),
                                           true_seconds=(a, a + length / 2) if i % 2 else None))
        path = tmp_path_factory.mktemp("rt") / "x.jsonl"
        write_annotations(samples, path)
        assert parse_annotations(path) == samples

    def test_normalization_round_trip(self):
        s = GroundingSample("v", "q", 37.3, (3.1, 20.9))
        assert abs(s.gt[0] * s.duration - 3.1) < 1e-9
        assert abs(s.gt[1] * s.duration - 20.9) < 1e-9


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        feats = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
        write_features(tmp_path / "v.cmaf", feats)
        raw = (tmp_path / "v.cmaf").read_bytes()
        assert raw[:4] == b"CMAF" and len(raw) == 12 + 4 * 35
        assert FEATURE_HEADER.unpack_from(raw)[1:] == (5, 7)
        np.testing.assert_array_equal(read_features(tmp_path / "v.cmaf"), feats)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "v.cmaf").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(DataError, match="magic"):
            read_features(tmp_path / "v.cmaf")

    def test_truncated_body(self, tmp_path):
        (tmp_path / "v.cmaf").write_bytes(FEATURE_HEADER.pack(b"CMAF", 3, 2) + bytes(8))
        with pytest.raises(DataError):
            read_features(tmp_path / "v.cmaf")

    def test_dataset_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(count=6, N=8, d_v=4, seed=3))
        path = save_dataset(ds, tmp_path)
        loaded = load_dataset(path, tmp_path / "features", vocab=ds.vocab)
        for a, b in zip(ds, loaded):
            assert a.to_record() == b.to_record()
            assert a.tokens == b.tokens
            np.testing.assert_array_equal(a.features, b.features)


class TestSynthetic:
    def test_no_bias_keeps_true_interval(self):
        ds = generate_synthetic(SyntheticConfig(count=50, seed=1, bias_sigma=0.0))
        assert all(s.gt_seconds == s.true_seconds for s in ds)

    def test_bias_perturbs(self):
        ds = generate_synthetic(SyntheticConfig(count=50, seed=1, bias_sigma=0.2))
        moved = [s for s in ds if s.gt_seconds != s.true_seconds]
        assert len(moved) == 50
        for s in ds:
            (a, b), (ta, tb) = s.gt, s.true_gt
            assert 0 <= a < b <= 1
            # truncated at two standard deviations
            assert abs(a - ta) <= 2 * 0.2 * (tb - ta) + 1e-12

    def test_deterministic(self):
        a = generate_synthetic(SyntheticConfig(count=20, seed=7, bias_sigma=0.1))
        b = generate_synthetic(SyntheticConfig(count=20, seed=7, bias_sigma=0.1))
        for x, y in zip(a, b):
            assert x.to_record() == y.to_record() and x.tokens == y.tokens
            assert x.features.tobytes() == y.features.tobytes()

    def test_mean_ratio(self):
        ds = generate_synthetic(SyntheticConfig(count=10_000, N=8, d_v=4, seed=0, mean_ratio=0.27))
        assert abs(dataset_stats(ds).mean_ratio - 0.27) <= 0.02

    def test_query_has_one_action_word(self):
        ds = generate_synthetic(SyntheticConfig(count=100, seed=2))
        for s in ds:
            words = s.query.split()
            assert 3 <= len(words) <= 8
            assert sum(w.startswith("action") for w in words) == 1
        assert len(ds.vocab) == 64

    def test_signal_inside_interval(self):
        cfg = SyntheticConfig(count=200, N=16, d_v=32, seed=0, distractors=0, noise=0.0)
        ds = generate_synthetic(cfg)
        for s in ds[:20]:
            energy = np.linalg.norm(s.features, axis=1)
            a, b = s.true_gt
            inside = [i for i in range(16) if i / 16 >= a and (i + 1) / 16 <= b]
            outside = [i for i in range(16) if (i + 1) / 16 <= a or i / 16 >= b]
            assert np.all(energy[outside] == 0)
            if inside:
                assert np.all(energy[inside] > 0)


class TestStats:
    def test_full_video(self):
        samples = [GroundingSample(f"v{i}", "q", 10.0, (0.0, 10.0)) for i in range(5)]
        st_ = dataset_stats(samples)
        assert st_.mean_ratio == 1.0
        assert st_.ratio_histogram[-1] == 5 and sum(st_.ratio_histogram) == 5

    def test_single(self):
        assert dataset_stats([GroundingSample("v", "q", 4.0, (1.0, 2.0))]).mean_ratio == 0.25

    def test_empty(self):
        with pytest.raises(DataError):
            dataset_stats([])

    def test_histogram_mass(self):
        ds = generate_synthetic(SyntheticConfig(count=300, seed=4))
        st_ = dataset_stats(ds)
        assert sum(st_.ratio_histogram) == 300 and len(st_.ratio_histogram) == 20
        assert 0 < st_.mean_ratio <= 1


class TestBatching:
    def _ds(self, n=5):
        return generate_synthetic(SyntheticConfig(count=n, N=8, d_v=4, seed=0))

    def test_batch_sizes(self):
        sizes = [len(b.ids) for b in iterate_batches(self._ds().samples, 2, 8, 10)]
        assert sizes == [2, 2, 1]

    def test_query_mask(self):
        s = GroundingSample("v", "q", 1.0, (0.1, 0.5), features=np.zeros((8, 4), np.float32),
                            tokens=[4, 5, 6])
        b = collate([s], 8, 10)
        assert b.mask.sum().item() == 3 and (~b.mask).sum().item() == 7
        assert b.tokens[0].tolist() == [4, 5, 6] + [0] * 7

    def test_uniform_grid_over_200(self):
        idx = uniform_sample_indices(200, 64)
        expected = []
        for j in range(64):
            x = j * 199 / 63
            lo = int(x)
            expected.append(lo if x - lo <= 0.5 else lo + 1)
        assert idx.tolist() == expected
        assert idx[0] == 0 and idx[-1] == 199

    def test_tie_rounds_down(self):
        # 4 clips to 3 samples: grid 0, 1.5, 3
        assert uniform_sample_indices(4, 3).tolist() == [0, 1, 3]

    def test_short_video_repeats(self):
        assert uniform_sample_indices(2, 4).tolist() == [0, 0, 1, 1]

    def test_resampled_in_collate(self):
        feats = np.arange(200, dtype=np.float32)[:, None].repeat(3, 1)
        s = GroundingSample("v", "q", 1.0, (0.1, 0.5), features=feats, tokens=[2])
        b = collate([s], 64, 4)
        assert b.video.shape == (1, 64, 3)
        assert b.video[0, :, 0].tolist() == uniform_sample_indices(200, 64).astype(float).tolist()

    def test_order_preserved(self):
        ds = self._ds(7)
        ids = [i for b in iterate_batches(ds.samples, 3, 8, 8) for i in b.ids]
        assert ids == [s.id for s in ds]


def test_tokenize_and_vocab():
    assert tokenize("A person opens the Door, then sneezes.") == \
        ["a", "person", "opens", "the", "door", "then", "sneezes"]
    vocab = Vocabulary.build(["a person", "the person"])
    assert vocab.words == ["<pad>", "<unk>", "a", "person", "the"]
    assert vocab.encode("the dog") == [4, 1]
