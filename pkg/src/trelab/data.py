"""Dataset ingestion, entity masking, and fine-tuning input assembly.

The structured input layout is

    [START, a1 tokens, DELIM1, a2 tokens, DELIM2, sentence tokens, CLF]

with a1 always the subject-role argument. Masking replaces each argument
span (both in the argument segment and at its in-sentence position, since
the same tokens feed both) with a single reserved special token.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

import numpy as np

from . import bpe
from .errors import ParseError, UserInputError, ValidationError

IGNORE_ID = -1

START = "<start>"
DELIM1 = "<delim1>"
DELIM2 = "<delim2>"
CLF = "<clf>"
MASK_UNK = "<mask-unk>"

CORE_SPECIALS = (START, DELIM1, DELIM2, CLF)

NO_RELATION = "no_relation"
OTHER = "Other"

_ROLE_SHORT = {"subject": "subj", "object": "obj"}


class MaskingStrategy(enum.Enum):
    NONE = "none"
    UNK = "unk"
    NE = "ne"
    GR = "gr"
    NE_GR = "ne_gr"

    @classmethod
    def parse(cls, text: str) -> "MaskingStrategy":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UserInputError(
                f"unknown masking strategy {text!r} "
                f"(choose from {[s.value for s in cls]})") from None

    @property
    def needs_types(self) -> bool:
        return self in (MaskingStrategy.NE, MaskingStrategy.NE_GR)


@dataclass(frozen=True)
class RelationInstance:
    tokens: tuple
    arg1_span: tuple      # inclusive (start, end) token indices
    arg2_span: tuple
    arg1_role: str
    arg2_role: str
    arg1_type: str | None
    arg2_type: str | None
    label: str

    def arg_tokens(self, which: int) -> tuple:
        s, e = self.arg1_span if which == 1 else self.arg2_span
        return self.tokens[s:e + 1]


def validate_instance(inst: RelationInstance, where: str = "instance"):
    n = len(inst.tokens)
    for name, (s, e) in (("arg1", inst.arg1_span), ("arg2", inst.arg2_span)):
        if e < s:
            raise ValidationError(f"{where}: {name} span ends before it starts")
        if s < 0 or e >= n:
            raise ValidationError(
                f"{where}: {name} span ({s}, {e}) outside {n} tokens")
    (s1, e1), (s2, e2) = inst.arg1_span, inst.arg2_span
    if s1 <= e2 and s2 <= e1:
        raise ValidationError(f"{where}: argument spans overlap")
    if inst.arg1_role == inst.arg2_role:
        raise ValidationError(f"{where}: argument roles must differ")


class Dataset:
    """Immutable list of instances plus the closed label set."""

    def __init__(self, instances, labels):
        self.instances = list(instances)
        self.labels = list(labels)
        self.label_to_id = {lab: i for i, lab in enumerate(self.labels)}
        if len(self.label_to_id) != len(self.labels):
            raise ValidationError("duplicate label in label set")
        for inst in self.instances:
            if inst.label not in self.label_to_id:
                raise ValidationError(f"label {inst.label!r} not in label set")

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def label_counts(self) -> dict:
        counts = {}
        for inst in self.instances:
            counts[inst.label] = counts.get(inst.label, 0) + 1
        return counts


# ------------------------------------------------------------------ loaders

_TACRED_FIELDS = ("token", "subj_start", "subj_end", "obj_start", "obj_end",
                  "subj_type", "obj_type", "relation")


def load_tacred(path) -> Dataset:
    """Structured-array JSON: one record per example, extra fields ignored."""
    with open(path, encoding="utf-8") as f:
        try:
            records = json.load(f)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a top-level JSON array")
    instances = []
    for idx, rec in enumerate(records):
        missing = [f for f in _TACRED_FIELDS if f not in rec]
        if missing:
            raise ParseError(f"{path}: record {idx} missing fields {missing}")
        inst = RelationInstance(
            tokens=tuple(rec["token"]),
            arg1_span=(rec["subj_start"], rec["subj_end"]),
            arg2_span=(rec["obj_start"], rec["obj_end"]),
            arg1_role="subject", arg2_role="object",
            arg1_type=rec["subj_type"], arg2_type=rec["obj_type"],
            label=rec["relation"])
        validate_instance(inst, f"{path}: record {idx}")
        instances.append(inst)
    labels = sorted({i.label for i in instances} | {NO_RELATION})
    return Dataset(instances, labels)


def _parse_semeval_sentence(text: str, lineno: int, path):
    for tag in ("<e1>", "</e1>", "<e2>", "</e2>"):
        if text.count(tag) != 1:
            raise ParseError(
                f"{path}:{lineno}: marker {tag} must appear exactly once")
        text = text.replace(tag, f" {tag} ")
    raw = text.split()
    spans = {}
    tokens = []
    open_tag = None
    start = None
    for tok in raw:
        if tok in ("<e1>", "<e2>"):
            if open_tag is not None:
                raise ParseError(f"{path}:{lineno}: nested entity markers")
            open_tag, start = tok[1:3], len(tokens)
        elif tok in ("</e1>", "</e2>"):
            if open_tag != tok[2:4]:
                raise ParseError(f"{path}:{lineno}: unbalanced entity markers")
            if len(tokens) == start:
                raise ParseError(f"{path}:{lineno}: empty entity span")
            spans[open_tag] = (start, len(tokens) - 1)
            open_tag = None
        else:
            tokens.append(tok)
    if open_tag is not None or len(spans) != 2:
        raise ParseError(f"{path}:{lineno}: unbalanced entity markers")
    return tuple(tokens), spans["e1"], spans["e2"]


def load_semeval(path) -> Dataset:
    """Official 4-line record format: numbered quoted sentence with inline
    <e1>/<e2> markup, relation line, comment line, blank separator."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    instances = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        lineno = i + 1
        head = lines[i].split("\t", 1)
        if len(head) != 2:
            raise ParseError(
                f"{path}:{lineno}: expected '<number>\\t\"sentence\"'")
        sentence = head[1].strip()
        if sentence.startswith('"') and sentence.endswith('"'):
            sentence = sentence[1:-1]
        tokens, e1, e2 = _parse_semeval_sentence(sentence, lineno, path)
        if i + 1 >= len(lines) or not lines[i + 1].strip():
            raise ParseError(f"{path}:{lineno + 1}: missing relation line")
        label = lines[i + 1].strip()
        inst = RelationInstance(
            tokens=tokens, arg1_span=e1, arg2_span=e2,
            arg1_role="subject", arg2_role="object",
            arg1_type=None, arg2_type=None, label=label)
        validate_instance(inst, f"{path}:{lineno}")
        instances.append(inst)
        i += 3  # sentence, relation, comment; blank separators skip above
    labels = sorted({inst.label for inst in instances})
    return Dataset(instances, labels)


# ------------------------------------------------------------------ masking

def mask_token_for(strategy: MaskingStrategy, role: str, arg_type) -> str:
    short = _ROLE_SHORT[role]
    if strategy is MaskingStrategy.UNK:
        return MASK_UNK
    if strategy is MaskingStrategy.GR:
        return f"<mask-{short}>"
    if arg_type is None:
        raise UserInputError(
            f"masking strategy {strategy.value} requires argument entity "
            f"types, which this instance does not have")
    if strategy is MaskingStrategy.NE:
        return f"<mask-ne-{arg_type}>"
    if strategy is MaskingStrategy.NE_GR:
        return f"<mask-{short}-{arg_type}>"
    raise ValueError(strategy)


def apply_masking(inst: RelationInstance,
                  strategy: MaskingStrategy) -> RelationInstance:
    """Replace each argument span with one reserved token; idempotent."""
    if strategy is MaskingStrategy.NONE:
        return inst
    m1 = mask_token_for(strategy, inst.arg1_role, inst.arg1_type)
    m2 = mask_token_for(strategy, inst.arg2_role, inst.arg2_type)
    spans = sorted([(inst.arg1_span, 1, m1), (inst.arg2_span, 2, m2)])
    new_spans = {}
    cursor = 0
    out = []
    for (s, e), which, mask in spans:
        out.extend(inst.tokens[cursor:s])
        new_spans[which] = (len(out), len(out))
        out.append(mask)
        cursor = e + 1
    out.extend(inst.tokens[cursor:])
    return replace(inst, tokens=tuple(out),
                   arg1_span=new_spans[1], arg2_span=new_spans[2])


def mask_tokens_needed(strategy: MaskingStrategy, instances) -> list:
    """Reserved token names the vocabulary must carry for this strategy."""
    if strategy is MaskingStrategy.NONE:
        return []
    if strategy is MaskingStrategy.UNK:
        return [MASK_UNK]
    if strategy is MaskingStrategy.GR:
        return ["<mask-subj>", "<mask-obj>"]
    names = set()
    for inst in instances:
        names.add(mask_token_for(strategy, inst.arg1_role, inst.arg1_type))
        names.add(mask_token_for(strategy, inst.arg2_role, inst.arg2_type))
    return sorted(names)


# ----------------------------------------------------------------- assembly

@dataclass
class EncodedExample:
    ids: list
    label_id: int
    lm_targets: list


def _encode_words(words, vocab: bpe.Vocab) -> list:
    ids = []
    for word in words:
        if word in vocab.special_tokens:
            ids.append(vocab.special_tokens[word])
        else:
            ids.extend(bpe.encode(word, vocab).ids)
    return ids


def assemble_input(inst: RelationInstance, vocab: bpe.Vocab, label_to_id,
                   max_positions=None, stats=None) -> EncodedExample:
    """Build [START, a1, DELIM1, a2, DELIM2, sentence, CLF] with LM targets.

    Overlong inputs lose sentence tokens from the right, never argument or
    CLF tokens; stats["truncated"] counts affected examples.
    """
    if inst.label not in label_to_id:
        raise ValidationError(f"label {inst.label!r} not in label set")
    if inst.arg1_role == "subject":
        first, second = inst.arg_tokens(1), inst.arg_tokens(2)
    else:
        first, second = inst.arg_tokens(2), inst.arg_tokens(1)

    sp = vocab.special_tokens
    for name in CORE_SPECIALS:
        if name not in sp:
            raise ValidationError(f"vocabulary lacks special token {name!r}")
    head = ([sp[START]] + _encode_words(first, vocab) + [sp[DELIM1]]
            + _encode_words(second, vocab) + [sp[DELIM2]])
    sentence = _encode_words(inst.tokens, vocab)
    ids = head + sentence + [sp[CLF]]

    if max_positions is not None and len(ids) > max_positions:
        overflow = len(ids) - max_positions
        if overflow > len(sentence):
            raise ValidationError(
                f"input needs {len(ids)} positions but only {max_positions} "
                f"are available even without the sentence segment")
        sentence = sentence[:len(sentence) - overflow]
        ids = head + sentence + [sp[CLF]]
        if stats is not None:
            stats["truncated"] = stats.get("truncated", 0) + 1

    lm_targets = ids[1:] + [IGNORE_ID]
    return EncodedExample(ids=ids, label_id=label_to_id[inst.label],
                          lm_targets=lm_targets)


def assemble_dataset(dataset: Dataset, vocab: bpe.Vocab,
                     strategy: MaskingStrategy = MaskingStrategy.NONE,
                     max_positions=None, stats=None) -> list:
    return [assemble_input(apply_masking(inst, strategy), vocab,
                           dataset.label_to_id, max_positions, stats)
            for inst in dataset]


# --------------------------------------------------------------- subsampling

def stratified_subsample(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Per-label subsample of round(ratio * count), at least 1 per label.

    Deterministic under seed; instance order of the original is preserved.
    """
    if len(dataset) == 0:
        raise UserInputError("cannot subsample an empty dataset")
    if not 0.0 < ratio <= 1.0:
        raise UserInputError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return Dataset(dataset.instances, dataset.labels)
    by_label = {}
    for idx, inst in enumerate(dataset.instances):
        by_label.setdefault(inst.label, []).append(idx)
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(by_label):
        idxs = by_label[label]
        k = max(1, int(len(idxs) * ratio + 0.5))
        order = rng.permutation(len(idxs))[:k]
        keep.extend(idxs[i] for i in order)
    keep.sort()
    return Dataset([dataset.instances[i] for i in keep], dataset.labels)


# ---------------------------------------------------------------- manifests

def load_manifest(path):
    """Fixture manifest: 'fixture-manifest v1 <total>' then label\\tcount."""
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().split("\n") if ln]
    head = lines[0].split(" ") if lines else []
    if len(head) != 3 or head[0] != "fixture-manifest" or head[1] != "v1":
        raise ParseError(f"{path}:1: expected 'fixture-manifest v1 <total>'")
    try:
        total = int(head[2])
    except ValueError:
        raise ParseError(f"{path}:1: non-integer total") from None
    counts = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected '<label>\\t<count>'")
        if parts[0] in counts:
            raise ParseError(f"{path}:{lineno}: duplicate label {parts[0]!r}")
        counts[parts[0]] = int(parts[1])
    if sum(counts.values()) != total:
        raise ParseError(f"{path}: counts sum to {sum(counts.values())}, "
                         f"header says {total}")
    return total, counts


def check_against_manifest(dataset: Dataset, manifest_path):
    total, counts = load_manifest(manifest_path)
    if len(dataset) != total:
        raise ValidationError(
            f"dataset has {len(dataset)} examples, manifest expects {total}")
    actual = dataset.label_counts()
    if actual != counts:
        raise ValidationError(
            f"per-label counts {actual} do not match manifest {counts}")
