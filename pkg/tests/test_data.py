import json
import os
import random

import pytest

from trelab import bpe, data
from trelab.data import (CLF, DELIM1, DELIM2, IGNORE_ID, MASK_UNK, START,
                         Dataset, MaskingStrategy, RelationInstance,
                         apply_masking, assemble_input, check_against_manifest,
                         load_semeval, load_tacred, mask_tokens_needed,
                         stratified_subsample)
from trelab.errors import ParseError, UserInputError, ValidationError

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture(name):
    return os.path.join(FIXTURES, name)


def make_instance(**overrides):
    base = dict(
        tokens=("The", "key", "was", "in", "a", "chest", "."),
        arg1_span=(1, 1), arg2_span=(5, 5),
        arg1_role="subject", arg2_role="object",
        arg1_type="OBJECT", arg2_type="CONTAINER",
        label="Content-Container(e1,e2)")
    base.update(overrides)
    return RelationInstance(**base)


def toy_vocab(extra_specials=()):
    corpus = ["the key was in a chest", "mr scheider played the police chief",
              "yolanda king died of an apparent heart attack",
              "aerolineas and its subsidiary austral"]
    v = bpe.train_bpe(corpus, 70)
    return bpe.extend_with_special_tokens(
        v, list(data.CORE_SPECIALS) + list(extra_specials))


class TestTacredLoader:
    def test_fixture_loads_table_rows(self):
        ds = load_tacred(fixture("tacred_fixture.json"))
        assert len(ds) == 3
        first = ds.instances[0]
        assert first.arg_tokens(1) == ("Scheider",)
        assert first.arg_tokens(2) == ("police", "chief")
        assert first.label == "per:title"
        assert first.arg1_type == "PERSON" and first.arg2_type == "TITLE"
        assert ds.instances[2].arg_tokens(2) == ("heart", "attack")

    def test_label_set_includes_no_relation(self):
        ds = load_tacred(fixture("tacred_fixture.json"))
        assert "no_relation" in ds.labels

    def test_extra_fields_ignored(self):
        ds = load_tacred(fixture("tacred_fixture.json"))
        assert ds.instances[0].tokens[0] == "Mr."

    def test_missing_field_reports_record_index(self, tmp_path):
        rec = {"token": ["a", "b"], "subj_start": 0, "subj_end": 0,
               "obj_start": 1, "obj_end": 1, "subj_type": "X",
               "obj_type": "Y", "relation": "r"}
        bad = dict(rec)
        del bad["obj_type"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([rec, bad]))
        with pytest.raises(ParseError) as err:
            load_tacred(path)
        assert "record 1" in str(err.value)

    def test_backwards_span_rejected(self, tmp_path):
        rec = {"token": ["a", "b", "c"], "subj_start": 1, "subj_end": 0,
               "obj_start": 2, "obj_end": 2, "subj_type": "X",
               "obj_type": "Y", "relation": "r"}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([rec]))
        with pytest.raises(ValidationError):
            load_tacred(path)

    def test_manifest_matches(self):
        ds = load_tacred(fixture("tacred_fixture.json"))
        check_against_manifest(ds, fixture("tacred_fixture.manifest"))

    def test_manifest_mismatch_detected(self):
        ds = load_tacred(fixture("tacred_fixture.json"))
        with pytest.raises(ValidationError):
            check_against_manifest(ds, fixture("semeval_fixture.manifest"))


class TestSemevalLoader:
    def test_fixture_loads(self):
        ds = load_semeval(fixture("semeval_fixture.txt"))
        assert len(ds) == 3
        inst = ds.instances[0]
        assert inst.arg_tokens(1) == ("key",)
        assert inst.arg_tokens(2) == ("chest",)
        assert inst.label == "Content-Container(e1,e2)"
        assert inst.arg1_type is None and inst.arg2_type is None

    def test_manifest_matches(self):
        ds = load_semeval(fixture("semeval_fixture.txt"))
        check_against_manifest(ds, fixture("semeval_fixture.manifest"))

    def test_nested_markers_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text('1\t"A <e1>b <e2>c</e2> d</e1> e."\nOther\nComment:\n\n')
        with pytest.raises(ParseError) as err:
            load_semeval(path)
        assert ":1:" in str(err.value)

    def test_unbalanced_markers_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text('1\t"A <e1>b and <e2>c</e2>."\nOther\nComment:\n\n')
        with pytest.raises(ParseError):
            load_semeval(path)

    def test_missing_relation_line_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text('1\t"A <e1>b</e1> x <e2>c</e2>."\n')
        with pytest.raises(ParseError):
            load_semeval(path)


class TestMasking:
    def test_unk_replaces_both_mentions(self):
        inst = make_instance()
        masked = apply_masking(inst, MaskingStrategy.UNK)
        assert masked.tokens[masked.arg1_span[0]] == MASK_UNK
        assert masked.tokens[masked.arg2_span[0]] == MASK_UNK
        assert "key" not in masked.tokens and "chest" not in masked.tokens

    def test_none_is_identity(self):
        inst = make_instance()
        assert apply_masking(inst, MaskingStrategy.NONE) is inst

    def test_ne_gr_combines_role_and_type(self):
        inst = make_instance(arg1_type="PERSON", arg2_type="TITLE")
        masked = apply_masking(inst, MaskingStrategy.NE_GR)
        assert masked.tokens[masked.arg1_span[0]] == "<mask-subj-PERSON>"
        assert masked.tokens[masked.arg2_span[0]] == "<mask-obj-TITLE>"

    def test_multiword_span_becomes_single_token(self):
        inst = make_instance(tokens=("Yolanda", "King", "died", "of", "heart",
                                     "attack", "."),
                             arg1_span=(0, 1), arg2_span=(4, 5))
        masked = apply_masking(inst, MaskingStrategy.GR)
        assert masked.tokens == ("<mask-subj>", "died", "of", "<mask-obj>", ".")
        assert masked.arg1_span == (0, 0)
        assert masked.arg2_span == (3, 3)

    def test_idempotent(self):
        inst = make_instance()
        for strategy in MaskingStrategy:
            once = apply_masking(inst, strategy)
            twice = apply_masking(once, strategy)
            assert once == twice

    def test_ne_without_types_rejected(self):
        inst = make_instance(arg1_type=None, arg2_type=None)
        with pytest.raises(UserInputError):
            apply_masking(inst, MaskingStrategy.NE)
        with pytest.raises(UserInputError):
            apply_masking(inst, MaskingStrategy.NE_GR)

    def test_unk_hides_type_differences(self):
        a = apply_masking(make_instance(arg1_type="PERSON"), MaskingStrategy.UNK)
        b = apply_masking(make_instance(arg1_type="CITY"), MaskingStrategy.UNK)
        assert a.tokens == b.tokens

    def test_ne_gr_keeps_type_differences(self):
        a = apply_masking(make_instance(arg1_type="PERSON"), MaskingStrategy.NE_GR)
        b = apply_masking(make_instance(arg1_type="CITY"), MaskingStrategy.NE_GR)
        assert a.tokens != b.tokens

    def test_mask_tokens_needed(self):
        insts = [make_instance(arg1_type="PERSON", arg2_type="TITLE"),
                 make_instance(arg1_type="PERSON", arg2_type="CITY")]
        assert mask_tokens_needed(MaskingStrategy.UNK, insts) == [MASK_UNK]
        assert mask_tokens_needed(MaskingStrategy.GR, insts) == [
            "<mask-subj>", "<mask-obj>"]
        assert mask_tokens_needed(MaskingStrategy.NE_GR, insts) == [
            "<mask-obj-CITY>", "<mask-obj-TITLE>", "<mask-subj-PERSON>"]

    def test_strategy_parse(self):
        assert MaskingStrategy.parse("NE_GR") is MaskingStrategy.NE_GR
        with pytest.raises(UserInputError):
            MaskingStrategy.parse("shrug")


class TestAssembly:
    def test_layout(self):
        vocab = toy_vocab()
        inst = make_instance()
        ex = assemble_input(inst, vocab, {inst.label: 0})
        sp = vocab.special_tokens
        assert ex.ids[0] == sp[START]
        assert ex.ids[-1] == sp[CLF]
        d1 = ex.ids.index(sp[DELIM1])
        d2 = ex.ids.index(sp[DELIM2])
        assert 0 < d1 < d2 < len(ex.ids) - 1
        assert bpe.decode(ex.ids[1:d1], vocab) == "key"
        assert bpe.decode(ex.ids[d1 + 1:d2], vocab) == "chest"

    def test_subject_always_leads(self):
        vocab = toy_vocab()
        swapped = make_instance(arg1_role="object", arg2_role="subject")
        ex = assemble_input(swapped, vocab, {swapped.label: 0})
        sp = vocab.special_tokens
        d1 = ex.ids.index(sp[DELIM1])
        assert bpe.decode(ex.ids[1:d1], vocab) == "chest"

    def test_lm_targets_shift(self):
        vocab = toy_vocab()
        inst = make_instance()
        ex = assemble_input(inst, vocab, {inst.label: 0})
        assert len(ex.lm_targets) == len(ex.ids)
        for i in range(len(ex.ids) - 1):
            assert ex.lm_targets[i] == ex.ids[i + 1]
        assert ex.lm_targets[-1] == IGNORE_ID

    def test_sentence_decodes_back_masked(self):
        vocab = toy_vocab(extra_specials=[MASK_UNK])
        inst = make_instance(tokens=("the", "key", "was", "in", "a", "chest"))
        masked = apply_masking(inst, MaskingStrategy.UNK)
        ex = assemble_input(masked, vocab, {masked.label: 0})
        sp = vocab.special_tokens
        d2 = ex.ids.index(sp[DELIM2])
        sentence_ids = ex.ids[d2 + 1:-1]
        assert bpe.decode(sentence_ids, vocab) == " ".join(masked.tokens)

    def test_mask_token_in_argument_and_sentence(self):
        vocab = toy_vocab(extra_specials=[MASK_UNK])
        masked = apply_masking(make_instance(), MaskingStrategy.UNK)
        ex = assemble_input(masked, vocab, {masked.label: 0})
        mask_id = vocab.special_tokens[MASK_UNK]
        sp = vocab.special_tokens
        d2 = ex.ids.index(sp[DELIM2])
        assert mask_id in ex.ids[:d2]
        assert mask_id in ex.ids[d2 + 1:]

    def test_truncation_drops_sentence_only(self):
        vocab = toy_vocab()
        inst = make_instance()
        full = assemble_input(inst, vocab, {inst.label: 0})
        budget = len(full.ids) - 3
        stats = {}
        ex = assemble_input(inst, vocab, {inst.label: 0},
                            max_positions=budget, stats=stats)
        assert len(ex.ids) == budget
        assert ex.ids[-1] == vocab.special_tokens[CLF]
        assert ex.ids[:ex.ids.index(vocab.special_tokens[DELIM2]) + 1] == \
            full.ids[:full.ids.index(vocab.special_tokens[DELIM2]) + 1]
        assert stats["truncated"] == 1

    def test_untruncatable_input_rejected(self):
        vocab = toy_vocab()
        inst = make_instance()
        with pytest.raises(ValidationError):
            assemble_input(inst, vocab, {inst.label: 0}, max_positions=5)


class TestSubsample:
    def build(self, n_a=80, n_b=20):
        insts = ([make_instance(label="A")] * n_a
                 + [make_instance(label="B")] * n_b)
        return Dataset(insts, ["A", "B"])

    def test_ratio_one_identity(self):
        ds = self.build()
        out = stratified_subsample(ds, 1.0, seed=3)
        assert out.instances == ds.instances

    def test_proportions(self):
        ds = self.build(800, 200)
        out = stratified_subsample(ds, 0.2, seed=4)
        counts = out.label_counts()
        assert abs(counts["A"] - 160) <= 1
        assert abs(counts["B"] - 40) <= 1

    def test_recount_oracle(self):
        rnd = random.Random(5)
        labels = ["w", "x", "y", "z"]
        insts = [make_instance(label=rnd.choice(labels)) for _ in range(300)]
        ds = Dataset(insts, labels)
        for ratio in (0.1, 0.3, 0.77):
            out = stratified_subsample(ds, ratio, seed=6)
            want = {lab: max(1, int(n * ratio + 0.5))
                    for lab, n in ds.label_counts().items()}
            got = out.label_counts()
            for lab in want:
                assert abs(got.get(lab, 0) - want[lab]) <= 1

    def test_minimum_one_per_label(self):
        ds = self.build(99, 1)
        out = stratified_subsample(ds, 0.05, seed=7)
        assert out.label_counts()["B"] == 1

    def test_deterministic(self):
        ds = self.build()
        a = stratified_subsample(ds, 0.5, seed=8)
        b = stratified_subsample(ds, 0.5, seed=8)
        assert a.instances == b.instances

    def test_bad_inputs(self):
        ds = self.build()
        with pytest.raises(UserInputError):
            stratified_subsample(ds, 0.0, seed=1)
        with pytest.raises(UserInputError):
            stratified_subsample(ds, 1.5, seed=1)
        with pytest.raises(UserInputError):
            stratified_subsample(Dataset([], []), 0.5, seed=1)
