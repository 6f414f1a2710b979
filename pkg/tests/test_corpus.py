import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylegraph.corpus import (
    DEFAULT_SPLIT,
    DEFAULT_VOCAB_SIZE,
    PAD_INDEX,
    REFERENCE_PROFILE,
    UNK_INDEX,
    CorpusError,
    Dataset,
    LoadReport,
    Sample,
    SynthConfig,
    Vocabulary,
    build_vocab,
    cooccurrence_counts,
    dataset_stats,
    dumps_jsonl,
    format_stats,
    generate_synthetic,
    load_jsonl,
    split,
    split_sizes,
    write_jsonl,
    write_synthetic,
)


def write_lines(tmp_path, objs, name="data.jsonl"):
    path = tmp_path / name
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs), encoding="utf-8")
    return path


def mk(i, labels, reviews=(("a",),)):
    return Sample(f"s{i}", "", tuple(tuple(r) for r in reviews), tuple(labels))


SMALL = SynthConfig(num_train=120, num_val=20, num_test=30, seed=3)


class TestLoad:
    def test_minimal_line(self, tmp_path):
        p = write_lines(tmp_path, [{"id": "a", "title": "t", "styles": ["Rock"], "reviews": [["good", "rock"]]}])
        ds = load_jsonl(p)
        assert len(ds) == 1
        assert ds.num_labels == 1
        assert sorted(ds.vocabulary.tokens) == ["good", "rock"]
        assert len(ds.vocabulary) == 4

    def test_duplicate_styles_unique_label_space(self, tmp_path):
        p = write_lines(
            tmp_path,
            [
                {"id": "a", "title": "", "styles": ["Rock", "Pop"], "reviews": [["x"]]},
                {"id": "b", "title": "", "styles": ["Pop", "Rock", "Pop"], "reviews": [["y"]]},
            ],
        )
        ds = load_jsonl(p)
        assert ds.label_space == ["Rock", "Pop"]
        assert ds.samples[1].labels == ("Pop", "Rock")

    def test_string_reviews_whitespace_split(self, tmp_path):
        p = write_lines(tmp_path, [{"id": "a", "title": "", "styles": ["A", "B"], "reviews": ["hello  big\tworld"]}])
        assert load_jsonl(p).samples[0].reviews == (("hello", "big", "world"),)

    def test_malformed_line_number(self, tmp_path):
        p = write_lines(tmp_path, [{"id": "a", "title": "", "styles": ["A", "B"], "reviews": [["x"]]}, "{not json"])
        with pytest.raises(CorpusError, match="line 2"):
            load_jsonl(p)

    def test_missing_field(self, tmp_path):
        p = write_lines(tmp_path, [{"id": "a", "title": "", "reviews": [["x"]]}])
        with pytest.raises(CorpusError, match="styles"):
            load_jsonl(p)

    def test_empty_styles_rejected_and_counted(self, tmp_path):
        p = write_lines(
            tmp_path,
            [
                {"id": "a", "title": "", "styles": [], "reviews": [["x"]]},
                {"id": "b", "title": "", "styles": ["A", "B"], "reviews": [["x"]]},
                {"id": "c", "title": "", "styles": [], "reviews": [["x"]]},
            ],
        )
        rep = LoadReport()
        ds = load_jsonl(p, report=rep)
        assert [s.id for s in ds.samples] == ["b"]
        assert rep.rejected == [1, 3]

    def test_off_profile_accepted_with_warning(self, tmp_path, caplog):
        p = write_lines(tmp_path, [{"id": "a", "title": "", "styles": ["A"], "reviews": [["x"]]}])
        rep = LoadReport()
        assert len(load_jsonl(p, report=rep)) == 1
        assert rep.off_profile == 1
        assert "fewer than 2" in caplog.text

    def test_label_space_mismatch(self, tmp_path):
        p = write_lines(tmp_path, [{"id": "a", "title": "", "styles": ["A", "Z"], "reviews": [["x"]]}])
        with pytest.raises(CorpusError, match="Z"):
            load_jsonl(p, label_space=["A", "B"])

    def test_round_trip_synthetic(self, tmp_path):
        corpus = generate_synthetic(SMALL)
        paths = write_synthetic(corpus, tmp_path)
        train = load_jsonl(paths["train"])
        assert train == corpus.train
        test = load_jsonl(paths["test"], vocabulary=train.vocabulary, label_space=train.label_space)
        assert test == corpus.test

    def test_truth_sidecar(self, tmp_path):
        corpus = generate_synthetic(SMALL)
        write_synthetic(corpus, tmp_path)
        rows = (tmp_path / "val.truth.csv").read_text().splitlines()
        assert rows[0].split(",") == ["label", *corpus.train.label_space]
        got = np.array([[int(v) for v in r.split(",")[1:]] for r in rows[1:]])
        np.testing.assert_array_equal(got, cooccurrence_counts(corpus.val))


class TestVocab:
    def test_frequency_cap(self):
        v = build_vocab([mk(0, "AB", [["a", "a", "b"]])], max_size=3)
        assert v.tokens == ["a"]
        assert v.index("b") == UNK_INDEX

    def test_lexicographic_tie_break(self):
        v = build_vocab([mk(0, "AB", [["b", "b", "a", "a"]])])
        assert v.tokens == ["a", "b"]

    def test_reserved(self):
        v = build_vocab([mk(0, "AB", [["<pad>", "x"]])])
        assert v.index("<pad>") == PAD_INDEX
        assert v.tokens == ["x"]
        with pytest.raises(CorpusError):
            build_vocab([], max_size=1)

    def test_default_size(self):
        assert DEFAULT_VOCAB_SIZE == 135_000

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=6), min_size=1, max_size=5))
    def test_indices_dense_and_unique(self, reviews):
        v = build_vocab([mk(0, "AB", reviews)])
        assert sorted(v.stoi.values()) == list(range(len(v)))
        assert v.itos[:2] == ["<pad>", "<unk>"]


class TestSplit:
    def test_reference_sizes(self):
        sizes = split_sizes(REFERENCE_PROFILE["samples"], DEFAULT_SPLIT)
        for got, want in zip(sizes, REFERENCE_PROFILE["split"]):
            assert abs(got - want) <= 1
        assert sum(sizes) == 7172

    def test_thirds(self):
        ds = Dataset([mk(i, "AB") for i in range(3)], ["A", "B"], Vocabulary(["a"]))
        parts = split(ds, (1 / 3, 1 / 3, 1 / 3))
        assert [len(p) for p in parts] == [1, 1, 1]

    def test_deterministic_and_disjoint(self):
        ds = Dataset([mk(i, "AB") for i in range(50)], ["A", "B"], Vocabulary(["a"]))
        a, b = split(ds, seed=7), split(ds, seed=7)
        assert a == b
        ids = [s.id for p in a for s in p.samples]
        assert sorted(ids) == sorted(s.id for s in ds.samples)

    def test_empty_part_is_error(self):
        ds = Dataset([mk(i, "AB") for i in range(2)], ["A", "B"], Vocabulary(["a"]))
        with pytest.raises(CorpusError, match="empty"):
            split(ds)

    @pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.1), (0.0, 0.5, 0.5), (-0.1, 0.6, 0.5)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(CorpusError):
            split_sizes(10, ratios)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(3, 5000), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
    def test_sizes_sum_and_near_quota(self, n, a, b):
        if a + b >= 0.95:
            return
        ratios = (a, b, 1 - a - b)
        sizes = split_sizes(n, ratios)
        assert sum(sizes) == n
        assert all(abs(s - n * r) < 1 + 1e-9 for s, r in zip(sizes, ratios))


class TestGenerator:
    def test_deterministic_bytes(self):
        a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
        for name in ("train", "val", "test"):
            assert dumps_jsonl(a.splits[name].samples) == dumps_jsonl(b.splits[name].samples)
        c = generate_synthetic(SynthConfig(**{**SMALL.to_json(), "seed": 4}))
        assert dumps_jsonl(c.train.samples) != dumps_jsonl(a.train.samples)

    def test_conditional_rate_of_planted_pair(self):
        cfg = SynthConfig(num_train=1000, num_val=1, num_test=1, planted=[(0, 1, 0.9)], seed=11)
        tr = generate_synthetic(cfg).train
        y = tr.label_matrix()
        i0, i1 = tr.label_index["L0"], tr.label_index["L1"]
        has0 = y[:, i0] == 1
        assert abs(y[has0, i1].mean() - 0.9) <= 0.05

    def test_noise_free_tokens_are_keywords_of_active_labels(self):
        cfg = SynthConfig(num_train=200, num_val=5, num_test=5, noise_word_fraction=0.0, seed=2)
        for s in generate_synthetic(cfg).train.samples:
            allowed = {lab[1:] for lab in s.labels}
            for r in s.reviews:
                for tok in r:
                    assert tok.startswith("kw")
                    assert tok[2:].split("_")[0] in allowed

    def test_label_band_and_ranges(self):
        c = generate_synthetic(SMALL)
        for ds in c.splits.values():
            for s in ds.samples:
                assert 2 <= len(s.labels) <= 5
                assert SMALL.reviews_per_sample[0] <= len(s.reviews) <= SMALL.reviews_per_sample[1]
                assert all(SMALL.words_per_review[0] <= len(r) <= SMALL.words_per_review[1] for r in s.reviews)

    def test_planted_cooccurrence_dominates(self):
        for seed in range(3):
            cfg = SynthConfig(num_train=500, num_val=1, num_test=1, seed=seed)
            c = generate_synthetic(cfg)
            idx = c.train.label_index
            co = cooccurrence_counts(c.train).astype(float)
            planted = {frozenset((idx[f"L{a}"], idx[f"L{b}"])) for a, b, _ in cfg.planted}
            m = co.shape[0]
            others = [co[i, j] for i in range(m) for j in range(i + 1, m) if frozenset((i, j)) not in planted]
            mu, sd = np.mean(others), np.std(others)
            for pair in planted:
                i, j = sorted(pair)
                assert co[i, j] > max(others)
                assert co[i, j] > mu + 3 * sd

    def test_cooccurrence_is_realized_counts(self):
        c = generate_synthetic(SMALL)
        y = np.vstack([d.label_matrix() for d in c.splits.values()])
        brute = np.zeros_like(c.cooccurrence)
        for row in y:
            on = np.flatnonzero(row)
            for i in on:
                for j in on:
                    brute[i, j] += 1
        np.testing.assert_array_equal(c.cooccurrence, brute)

    def test_infeasible_config(self):
        # near-certain chains over six labels push every draw above five
        chain = [(i, i + 1, 0.999) for i in range(6)] + [(6, 0, 0.999)]
        cfg = SynthConfig(num_labels=7, planted=chain, resample_budget=20, num_train=5, num_val=1, num_test=1)
        with pytest.raises(CorpusError, match="attempts"):
            generate_synthetic(cfg)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"planted": [(0, 0, 0.5)]},
            {"planted": [(0, 12, 0.5)]},
            {"planted": [(0, 1, 1.0)]},
            {"planted": [(0, 1, 0.5), (1, 0, 0.5)]},
            {"noise_word_fraction": 1.0},
            {"words_per_review": (0, 3)},
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(CorpusError):
            SynthConfig(**kwargs)

    def test_config_json_round_trip(self):
        assert SynthConfig.from_json(json.loads(json.dumps(SMALL.to_json()))) == SMALL
        with pytest.raises(CorpusError, match="bogus"):
            SynthConfig.from_json({"bogus": 1})


class TestStats:
    def test_single_sample(self):
        ds = Dataset([mk(0, "AB", [["x", "y"], ["z"]])], ["A", "B"], Vocabulary())
        s = dataset_stats(ds)
        assert s["mean_labels_per_sample"] == 2.0
        assert s["mean_reviews_per_sample"] == 2.0
        assert s["mean_words_per_review"] == 1.5
        assert s["label_frequency"] == {"A": 1.0, "B": 1.0}

    def test_generated_within_config(self):
        s = dataset_stats(generate_synthetic(SMALL).train)
        assert 2 <= s["mean_labels_per_sample"] <= 5
        assert SMALL.reviews_per_sample[0] <= s["mean_reviews_per_sample"] <= SMALL.reviews_per_sample[1]
        assert SMALL.words_per_review[0] <= s["mean_words_per_review"] <= SMALL.words_per_review[1]
        assert "labels / sample" in format_stats(s)

    def test_reference_profile(self):
        assert REFERENCE_PROFILE["samples"] == 7172
        assert REFERENCE_PROFILE["styles"] == 22
        assert REFERENCE_PROFILE["labels_per_sample"] == 2.2

    def test_empty(self):
        with pytest.raises(CorpusError):
            dataset_stats(Dataset([], ["A"], Vocabulary()))


def test_write_jsonl_round_trip(tmp_path):
    ds = Dataset([mk(0, "AB", [["é", "x"]]), mk(1, "BA")], ["A", "B"], Vocabulary())
    write_jsonl(ds, tmp_path / "d.jsonl")
    back = load_jsonl(tmp_path / "d.jsonl")
    assert back.samples == ds.samples
