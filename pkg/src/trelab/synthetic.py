"""A small templated relation world for demos and end-to-end tests.

Four typed entity pools and four relations whose argument-type pair is
unique per relation. Half of the sentence templates are shared verbatim
between two relations, so once the argument mentions are hidden the label
is recoverable only from knowledge of the argument types; the other half
name the relation outright. Each pool is split into entities used for
training data, entities reserved for validation, and entities held out of
the pre-training corpus entirely.
"""

from __future__ import annotations

import json

import numpy as np

from .data import Dataset, RelationInstance
from .errors import UserInputError

ENTITY_POOLS = {
    "PERSON": ("anna", "boris", "clara", "derek", "elena", "felix",
               "greta", "hugo", "irene", "jonas", "karin", "lothar",
               "mira", "nils", "olga", "pavel"),
    "LOCATION": ("avignon", "bergen", "coimbra", "dresden", "espoo",
                 "florence", "galway", "hamburg", "izmir", "jena",
                 "kyoto", "lisbon", "malaga", "nantes", "oporto", "prague"),
    "ORGANIZATION": ("acme", "borki", "cintra", "dalton", "enso", "fabrik",
                     "gorex", "hansa", "inkor", "jalto", "kovna", "limex",
                     "merkur", "norsk", "orbix", "penta"),
    "ITEM": ("apples", "books", "chess", "drums", "engines", "flutes",
             "grapes", "honey", "ink", "jars", "kites", "lamps",
             "maps", "nails", "oats", "pears"),
}

_SPLITS = {"train": slice(0, 8), "val": slice(8, 12),
           "heldout": slice(12, 16), "pretrain": slice(0, 12),
           "all": slice(0, 16)}

# relation -> (subject type, object type); the pair identifies the relation
RELATIONS = {
    "lives_in": ("PERSON", "LOCATION"),
    "works_for": ("PERSON", "ORGANIZATION"),
    "likes": ("PERSON", "ITEM"),
    "based_in": ("ORGANIZATION", "LOCATION"),
}

# Each relation gets one template of its own and one shared with another
# relation ("is at": lives_in/based_in, "backs": works_for/likes). The
# shared ones are the entity-correlated half of the task.
TEMPLATES = {
    "lives_in": ((("{subj}", "settled", "in", "{obj}", "."), False),
                 (("{subj}", "is", "at", "{obj}", "."), True)),
    "based_in": ((("{subj}", "operates", "from", "{obj}", "."), False),
                 (("{subj}", "is", "at", "{obj}", "."), True)),
    "works_for": ((("{subj}", "is", "employed", "by", "{obj}", "."), False),
                  (("{subj}", "backs", "{obj}", "."), True)),
    "likes": ((("{subj}", "enjoys", "{obj}", "."), False),
              (("{subj}", "backs", "{obj}", "."), True)),
}

LABELS = sorted(RELATIONS)


def entities(entity_type: str, split: str = "all") -> tuple:
    if entity_type not in ENTITY_POOLS:
        raise UserInputError(f"unknown entity type {entity_type!r}")
    if split not in _SPLITS:
        raise UserInputError(
            f"unknown split {split!r} (choose from {sorted(_SPLITS)})")
    return ENTITY_POOLS[entity_type][_SPLITS[split]]


def make_instance(relation: str, template_index: int, subj: str,
                  obj: str) -> RelationInstance:
    template, _ = TEMPLATES[relation][template_index]
    tokens = []
    subj_pos = obj_pos = -1
    for word in template:
        if word == "{subj}":
            subj_pos = len(tokens)
            tokens.append(subj)
        elif word == "{obj}":
            obj_pos = len(tokens)
            tokens.append(obj)
        else:
            tokens.append(word)
    subj_type, obj_type = RELATIONS[relation]
    return RelationInstance(
        tokens=tuple(tokens), arg1_span=(subj_pos, subj_pos),
        arg2_span=(obj_pos, obj_pos), arg1_role="subject",
        arg2_role="object", arg1_type=subj_type, arg2_type=obj_type,
        label=relation)


def _sample_instance(rng, split: str) -> RelationInstance:
    relation = LABELS[rng.integers(0, len(LABELS))]
    template_index = int(rng.integers(0, len(TEMPLATES[relation])))
    subj_type, obj_type = RELATIONS[relation]
    subj_pool = entities(subj_type, split)
    obj_pool = entities(obj_type, split)
    subj = subj_pool[rng.integers(0, len(subj_pool))]
    obj = obj_pool[rng.integers(0, len(obj_pool))]
    return make_instance(relation, template_index, subj, obj)


def labeled_dataset(n: int, seed: int, split: str = "train") -> Dataset:
    """n sampled instances with arguments drawn from the given entity split."""
    if n < 1:
        raise UserInputError(f"need at least 1 example, got {n}")
    rng = np.random.default_rng((seed, 424243))
    return Dataset([_sample_instance(rng, split) for _ in range(n)], LABELS)


def pretrain_sentences(n: int, seed: int, split: str = "pretrain") -> list:
    """Plain-text sentences over the same templates and entity split."""
    if n < 1:
        raise UserInputError(f"need at least 1 sentence, got {n}")
    rng = np.random.default_rng((seed, 971317))
    return [" ".join(_sample_instance(rng, split).tokens) for _ in range(n)]


_MEMO_TAILS = (("keeps", "a", "quiet", "garden"),
               ("sails", "well", "before", "dawn"),
               ("counts", "old", "copper", "coins"),
               ("paints", "small", "harbor", "scenes"),
               ("repairs", "broken", "pocket", "clocks"))


def memorization_corpus(n: int = 50) -> list:
    """n sentences, each determined entirely by its distinct first word.

    Every continuation is one of five fixed tails keyed by position, so a
    language model can in principle reach zero loss on this corpus.
    """
    starters = [name for pool in ("PERSON", "LOCATION", "ORGANIZATION",
                                  "ITEM") for name in ENTITY_POOLS[pool]]
    if not 1 <= n <= len(starters):
        raise UserInputError(f"n must be in [1, {len(starters)}], got {n}")
    return [" ".join((starters[i],) + _MEMO_TAILS[i % len(_MEMO_TAILS)])
            for i in range(n)]


def write_tacred_json(dataset: Dataset, path):
    """Write instances in the TACRED record layout the data loader reads."""
    records = []
    for inst in dataset:
        if inst.arg1_role == "subject":
            subj_span, subj_type = inst.arg1_span, inst.arg1_type
            obj_span, obj_type = inst.arg2_span, inst.arg2_type
        else:
            subj_span, subj_type = inst.arg2_span, inst.arg2_type
            obj_span, obj_type = inst.arg1_span, inst.arg1_type
        records.append({
            "token": list(inst.tokens),
            "subj_start": subj_span[0], "subj_end": subj_span[1],
            "obj_start": obj_span[0], "obj_end": obj_span[1],
            "subj_type": subj_type or "", "obj_type": obj_type or "",
            "relation": inst.label,
        })
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(records, f, indent=1, sort_keys=True)
        f.write("\n")


def write_sentences(sentences, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sentence in sentences:
            f.write(sentence + "\n")
