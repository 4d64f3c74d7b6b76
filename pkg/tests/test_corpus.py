import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdecode.corpus import (
    EOS,
    PAD,
    SOS,
    SPECIALS,
    UNK,
    SyntheticSpec,
    Vocab,
    build_vocab,
    decode_sentence,
    encode_pairs,
    encode_sentence,
    read_corpus,
    read_manifest,
    split_dataset,
    synthesize_corpus,
    write_corpus,
    write_manifest,
)
from qdecode.errors import InvalidArgument


class TestVocab:
    def test_specials_fixed(self):
        v = build_vocab([["a", "b"]], 10)
        assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)
        assert v.id_to_token[:4] == list(SPECIALS)

    def test_size(self):
        assert len(build_vocab([["x", "y", "z", "x"]], 10)) == 7

    def test_frequency_then_lexicographic(self):
        v = build_vocab([["b", "a", "c", "c"]], 6)
        assert v.id_to_token[4:] == ["c", "a"]

    def test_oov_to_unk(self):
        v = build_vocab([["a"]], 10)
        assert encode_sentence(v, ["a", "zzz"]) == [4, UNK]
        assert encode_sentence(v, "a zzz") == [4, UNK]

    def test_decode_invalid_id(self):
        v = build_vocab([["a"]], 10)
        with pytest.raises(InvalidArgument):
            decode_sentence(v, [len(v)])

    def test_empty_corpus(self):
        with pytest.raises(InvalidArgument):
            build_vocab([], 10)

    def test_file_round_trip(self, tmp_path):
        v = build_vocab([["q", "r", "q"]], 10)
        v.save(tmp_path / "v.txt")
        assert (tmp_path / "v.txt").read_text().splitlines() == ["q", "r"]
        assert Vocab.load(tmp_path / "v.txt").id_to_token == v.id_to_token

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=6), min_size=1, max_size=10))
    def test_round_trip_bijection(self, sents):
        v = build_vocab(sents, 100)
        for s in sents:
            assert decode_sentence(v, encode_sentence(v, s)) == s
        assert len(set(v.id_to_token)) == len(v)


class TestSynthetic:
    def test_shape(self):
        pairs = synthesize_corpus(SyntheticSpec(), np.random.default_rng(0))
        assert len(pairs) == 500
        assert all(s == t and 3 <= len(s) <= 10 for s, t in pairs)
        assert len({tuple(s) for s, _ in pairs}) == 500

    def test_seeded(self):
        spec = SyntheticSpec(n_pairs=50)
        assert synthesize_corpus(spec, np.random.default_rng(4)) == synthesize_corpus(spec, np.random.default_rng(4))

    def test_unigram_skew(self):
        spec = SyntheticSpec(vocab_size=20, min_length=10, max_length=10, n_pairs=10**4)
        pairs = synthesize_corpus(spec, np.random.default_rng(1))
        names = spec.token_names()
        counts = np.zeros(20)
        for s, _ in pairs:
            for tok in s:
                counts[names.index(tok)] += 1
        freq = counts / counts.sum()
        expected = spec.token_probabilities()
        assert 0.5 * np.abs(freq - expected).sum() < 0.05
        # the head of the distribution is sampled densely enough for a per-token bound
        head = expected > 0.05
        np.testing.assert_array_less(np.abs(freq - expected)[head] / expected[head], 0.05)

    def test_too_many_pairs(self):
        with pytest.raises(InvalidArgument):
            synthesize_corpus(SyntheticSpec(vocab_size=2, min_length=1, max_length=2, n_pairs=7), np.random.default_rng(0))


class TestSplits:
    def _pairs(self, n):
        return [([f"t{i}"], [f"t{i}"]) for i in range(n)]

    def test_scaled_proportions(self):
        sp = split_dataset(self._pairs(120), (100, 10, 10), 10, np.random.default_rng(0))
        assert (len(sp.train), len(sp.validation), len(sp.unseen_test), len(sp.seen_test)) == (100, 10, 10, 10)
        train = {tuple(s) for s, _ in sp.train}
        assert {tuple(s) for s, _ in sp.seen_test} <= train
        assert not {tuple(s) for s, _ in sp.unseen_test} & train
        assert not {tuple(s) for s, _ in sp.validation} & train

    def test_fractions(self):
        sp = split_dataset(self._pairs(100), (0.8, 0.1, 0.1), 5, np.random.default_rng(0))
        assert (len(sp.train), len(sp.validation), len(sp.unseen_test)) == (80, 10, 10)

    def test_duplicates_never_leak(self):
        pairs = self._pairs(30) + self._pairs(30)
        sp = split_dataset(pairs, (20, 5, 5), 5, np.random.default_rng(2))
        assert not {tuple(s) for s, _ in sp.unseen_test} & {tuple(s) for s, _ in sp.train}

    def test_insufficient(self):
        with pytest.raises(InvalidArgument):
            split_dataset(self._pairs(10), (8, 2, 1), 1, np.random.default_rng(0))

    def test_seeded(self):
        a = split_dataset(self._pairs(50), (30, 10, 10), 5, np.random.default_rng(9))
        b = split_dataset(self._pairs(50), (30, 10, 10), 5, np.random.default_rng(9))
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(5, 60), seed=st.integers(0, 1000), data=st.data())
    def test_partition_property(self, n, seed, data):
        n_train = data.draw(st.integers(1, n))
        n_valid = data.draw(st.integers(0, n - n_train))
        n_unseen = data.draw(st.integers(0, n - n_train - n_valid))
        seen = data.draw(st.integers(0, n_train))
        sp = split_dataset(self._pairs(n), (n_train, n_valid, n_unseen), seen, np.random.default_rng(seed))
        idx = sp.indices
        assert len(set(idx["train"]) | set(idx["validation"]) | set(idx["unseen_test"])) == n_train + n_valid + n_unseen
        assert set(idx["seen_test"]) <= set(idx["train"])


class TestFiles:
    def test_round_trip(self, tmp_path):
        pairs = [(["a", "b"], ["a", "b"]), (["c"], ["d", "e"])]
        write_corpus(tmp_path / "c.txt", pairs)
        assert read_corpus(tmp_path / "c.txt") == pairs

    def test_blank_lines_skipped_with_warning(self, tmp_path, caplog):
        (tmp_path / "c.txt").write_text("a b\n\n  \nc\n")
        with caplog.at_level(logging.WARNING):
            pairs = read_corpus(tmp_path / "c.txt")
        assert len(pairs) == 2
        assert "empty line" in caplog.text

    def test_over_length_rejected(self, tmp_path):
        (tmp_path / "c.txt").write_text("a b c d\n")
        with pytest.raises(InvalidArgument):
            read_corpus(tmp_path / "c.txt", max_length=3)

    def test_manifest(self, tmp_path):
        idx = {"train": [3, 1], "validation": [], "seen_test": [1], "unseen_test": [0, 2]}
        write_manifest(tmp_path / "m.txt", idx)
        assert read_manifest(tmp_path / "m.txt") == idx

    def test_encode_pairs(self):
        v = build_vocab([["a", "b"]], 10)
        assert encode_pairs(v, [(["a"], ["b", "q"])]) == [([v.token_to_id["a"]], [v.token_to_id["b"], UNK])]
