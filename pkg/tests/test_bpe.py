import random
import string

import pytest

from trelab import bpe
from trelab.errors import ParseError, UserInputError

from oracles import bpe_train_oracle


def word_counts(corpus):
    counts = {}
    for sentence in corpus:
        for w in bpe.normalize(sentence).split(" "):
            if w:
                counts[w] = counts.get(w, 0) + 1
    return counts


class TestTrainer:
    def test_first_merge_most_frequent_pair(self):
        # pair (a, b</w>) occurs twice, (a, c</w>) once
        v = bpe.train_bpe(["ab", "ab", "ac"], target_vocab_size=6)
        assert v.merges[0] == ("a", "b" + bpe.END_OF_WORD)

    def test_no_budget_means_character_level(self):
        corpus = ["ab", "ab", "ac"]
        base = {"a", "b" + bpe.END_OF_WORD, "c" + bpe.END_OF_WORD}
        v = bpe.train_bpe(corpus, target_vocab_size=len(base))
        assert v.merges == []
        enc = bpe.encode("ab", v)
        assert [v.id_to_token[i] for i in enc.ids] == ["a", "b" + bpe.END_OF_WORD]

    def test_repeated_letter_merges_with_tie_rule(self):
        # "aaaa" -> (a a a a</w>); after merging (a,a) the remaining pairs
        # (aa,a) and (a,a</w>) tie on count 1 and (a,a</w>) sorts first
        v = bpe.train_bpe(["aaaa"], target_vocab_size=5)
        assert v.merges == [("a", "a"), ("a", "a" + bpe.END_OF_WORD)]

    def test_empty_corpus_rejected(self):
        with pytest.raises(UserInputError):
            bpe.train_bpe([], 10)
        with pytest.raises(UserInputError):
            bpe.train_bpe(["   "], 10)

    def test_target_below_base_symbols_rejected(self):
        with pytest.raises(UserInputError):
            bpe.train_bpe(["abcdef"], target_vocab_size=3)

    def test_vocab_size_hits_target(self):
        corpus = ["the cat sat on the mat", "the dog sat"]
        v = bpe.train_bpe(corpus, target_vocab_size=20)
        assert len(v) == 20
        assert bpe.UNK in v.token_to_id

    def test_stops_early_when_pairs_exhausted(self):
        # tiny corpus collapses every word to one symbol before the budget
        v = bpe.train_bpe(["ab ab"], target_vocab_size=50)
        assert len(v) < 50
        assert bpe.encode("ab", v).ids == [v.token_to_id["ab" + bpe.END_OF_WORD]]

    def test_determinism(self):
        corpus = ["she sells sea shells", "sea shells she sells"]
        a = bpe.train_bpe(corpus, 30)
        b = bpe.train_bpe(corpus, 30)
        assert a == b

    def test_matches_recount_oracle_on_random_corpora(self):
        rnd = random.Random(11)
        for trial in range(50):
            n_words = rnd.randint(1, 30)
            corpus = [" ".join(
                "".join(rnd.choice("abcd") for _ in range(rnd.randint(1, 6)))
                for _ in range(n_words))]
            counts = word_counts(corpus)
            base = {s for w in counts for s in bpe._word_symbols(w, bpe.END_OF_WORD)}
            budget = rnd.randint(0, 12)
            v = bpe.train_bpe(corpus, len(base) + 1 + budget)
            expected = bpe_train_oracle(counts, budget, bpe.END_OF_WORD)
            assert v.merges == expected, f"trial {trial}"


class TestEncodeDecode:
    def test_round_trip_simple(self):
        v = bpe.train_bpe(["hello world", "hello there"], 40)
        for text in ["hello world", "there world hello", "hello"]:
            assert bpe.decode(bpe.encode(text, v).ids, v) == text

    def test_round_trip_random_strings(self):
        v = bpe.train_bpe(["abc bca cab", "aabb ccab", "abcabc"], 30)
        rnd = random.Random(7)
        for _ in range(200):
            text = " ".join(
                "".join(rnd.choice("abc") for _ in range(rnd.randint(1, 8)))
                for _ in range(rnd.randint(1, 6)))
            assert bpe.decode(bpe.encode(text, v).ids, v) == text

    def test_learned_merge_applied(self):
        v = bpe.train_bpe(["ab", "ab", "ac"], 6)
        enc = bpe.encode("ab", v)
        assert len(enc.ids) in (1, 2)
        assert bpe.decode(enc.ids, v) == "ab"

    def test_unknown_symbol_falls_back(self):
        v = bpe.train_bpe(["ab ab"], 10)
        enc = bpe.encode("xy", v)
        assert all(i == v.unk_id for i in enc.ids)

    def test_offsets_cover_source(self):
        v = bpe.train_bpe(["hello world"], 30)
        text = "hello world"
        enc = bpe.encode(text, v)
        rebuilt = [""] * 2
        for (s, e), i in zip(enc.offsets, enc.ids):
            word_idx = 0 if e <= 5 else 1
            rebuilt[word_idx] += text[s:e]
        assert rebuilt == ["hello", "world"]

    def test_normalization(self):
        v = bpe.train_bpe(["ab  cd"], 20)
        assert bpe.normalize("  ab \t cd\n") == "ab cd"
        assert bpe.decode(bpe.encode("  ab \t cd\n", v).ids, v) == "ab cd"

    def test_empty_text(self):
        v = bpe.train_bpe(["ab"], 10)
        enc = bpe.encode("", v)
        assert enc.ids == [] and bpe.decode([], v) == ""


class TestSpecialTokens:
    def test_extension_appends(self):
        v = bpe.train_bpe(["ab ab ac"], 8)
        old = len(v)
        v2 = bpe.extend_with_special_tokens(v, ["<start>", "<clf>"])
        assert len(v2) == old + 2
        assert v2.id_to_token[:old] == v.id_to_token
        assert v2.special_tokens["<start>"] == old
        assert v2.special_tokens["<clf>"] == old + 1
        assert v2.merges == v.merges

    def test_duplicate_rejected(self):
        v = bpe.train_bpe(["ab"], 10)
        with pytest.raises(UserInputError):
            bpe.extend_with_special_tokens(v, ["<s>", "<s>"])
        v2 = bpe.extend_with_special_tokens(v, ["<s>"])
        with pytest.raises(UserInputError):
            bpe.extend_with_special_tokens(v2, ["<s>"])

    def test_plain_text_never_encodes_to_special(self):
        v = bpe.extend_with_special_tokens(
            bpe.train_bpe(["ab ab ac"], 8), ["<start>", "<clf>"])
        texts = ["ab ac", "abc", "a b c", "<start>"]
        for text in texts:
            enc = bpe.encode(text, v)
            assert not any(v.is_special(i) and i != v.unk_id for i in enc.ids)

    def test_decode_renders_special_names(self):
        v = bpe.extend_with_special_tokens(bpe.train_bpe(["ab"], 10), ["<m>"])
        ids = bpe.encode("ab", v).ids + [v.special_id("<m>")] + bpe.encode("ab", v).ids
        assert bpe.decode(ids, v) == "ab <m> ab"


class TestPersistence:
    def test_round_trip(self, tmp_path):
        v = bpe.extend_with_special_tokens(
            bpe.train_bpe(["the cat sat", "the mat"], 25),
            ["<start>", "<delim1>", "<delim2>", "<clf>"])
        path = tmp_path / "vocab.txt"
        bpe.save_vocab(v, path)
        assert bpe.load_vocab(path) == v

    def test_header_format(self, tmp_path):
        v = bpe.train_bpe(["ab ab"], 8)
        path = tmp_path / "v.txt"
        bpe.save_vocab(v, path)
        head = path.read_text(encoding="utf-8").splitlines()[0]
        assert head == f"bpe-vocab v1 {len(v)} {len(v.merges)}"

    def test_fingerprint_stable_and_sensitive(self, tmp_path):
        v = bpe.train_bpe(["ab ab ac"], 8)
        assert bpe.fingerprint(v) == bpe.fingerprint(v)
        v2 = bpe.extend_with_special_tokens(v, ["<clf>"])
        assert bpe.fingerprint(v) != bpe.fingerprint(v2)

    def test_duplicate_token_line_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("bpe-vocab v1 2 0\n0\txx\n1\txx\n", encoding="utf-8")
        with pytest.raises(ParseError) as err:
            bpe.load_vocab(path)
        assert ":3:" in str(err.value)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("vocab 1 2\n", encoding="utf-8")
        with pytest.raises(ParseError):
            bpe.load_vocab(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("bpe-vocab v1 5 0\n0\ta\n", encoding="utf-8")
        with pytest.raises(ParseError):
            bpe.load_vocab(path)

    def test_merge_ranks_preserved(self, tmp_path):
        v = bpe.train_bpe(["aaab aab ab"], 12)
        path = tmp_path / "v.txt"
        bpe.save_vocab(v, path)
        assert bpe.load_vocab(path).merges == v.merges
