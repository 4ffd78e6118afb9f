"""Byte-pair-encoding vocabulary training, encoding, and persistence.

Word-internal BPE: each word is split into characters, the final character
carries an end-of-word marker suffix, and the most frequent adjacent symbol
pair is merged repeatedly until the vocabulary budget is spent. Ties on
frequency are broken lexicographically by (left, right) so training is
fully deterministic.

Text is normalized before tokenization: unicode NFC, whitespace runs
collapsed to single spaces, leading/trailing whitespace stripped. decode()
reconstructs exactly this normalized form.
"""

from __future__ import annotations

import hashlib
import unicodedata

from .errors import ParseError, UserInputError, ValidationError

END_OF_WORD = "</w>"
UNK = "<unk>"


class Encoding:
    """Token ids plus per-id character spans into the normalized text."""

    __slots__ = ("ids", "offsets")

    def __init__(self, ids, offsets):
        self.ids = ids
        self.offsets = offsets

    def __eq__(self, other):
        return (isinstance(other, Encoding)
                and self.ids == other.ids and self.offsets == other.offsets)

    def __repr__(self):
        return f"Encoding(ids={self.ids})"


class Vocab:
    def __init__(self, id_to_token, merges, special_tokens,
                 end_of_word_marker=END_OF_WORD):
        self.id_to_token = list(id_to_token)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValidationError("duplicate token surface in vocabulary")
        self.merges = [tuple(m) for m in merges]
        self.merge_ranks = {m: r for r, m in enumerate(self.merges)}
        self.special_tokens = dict(special_tokens)
        self.end_of_word_marker = end_of_word_marker
        self._special_ids = set(self.special_tokens.values())

    def __len__(self):
        return len(self.id_to_token)

    def __eq__(self, other):
        return (isinstance(other, Vocab)
                and self.id_to_token == other.id_to_token
                and self.merges == other.merges
                and self.special_tokens == other.special_tokens
                and self.end_of_word_marker == other.end_of_word_marker)

    def is_special(self, token_id: int) -> bool:
        return token_id in self._special_ids

    def special_id(self, name: str) -> int:
        if name not in self.special_tokens:
            raise ValidationError(f"special token {name!r} not in vocabulary")
        return self.special_tokens[name]

    @property
    def unk_id(self) -> int:
        return self.special_tokens[UNK]


def normalize(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).split())


def _word_symbols(word: str, marker: str):
    syms = list(word)
    syms[-1] += marker
    return syms


def _merge_in_word(syms, pair, spans=None):
    """One left-to-right non-overlapping pass replacing pair occurrences."""
    out = []
    out_spans = [] if spans is not None else None
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(syms[i] + syms[i + 1])
            if spans is not None:
                out_spans.append((spans[i][0], spans[i + 1][1]))
            i += 2
        else:
            out.append(syms[i])
            if spans is not None:
                out_spans.append(spans[i])
            i += 1
    return (out, out_spans) if spans is not None else out


def _pairs_of(syms):
    return [(syms[i], syms[i + 1]) for i in range(len(syms) - 1)]


def train_bpe(corpus, target_vocab_size: int, marker: str = END_OF_WORD) -> Vocab:
    """Learn merges greedily by pair frequency until the budget is spent.

    The returned vocabulary holds target_vocab_size tokens in total: the
    distinct base symbols, the merge products, and the reserved unknown
    token. Pair counts are maintained incrementally (only words containing
    the merged pair are touched).
    """
    words: dict[tuple, int] = {}
    for sentence in corpus:
        for word in normalize(sentence).split(" "):
            if not word:
                continue
            key = tuple(_word_symbols(word, marker))
            words[key] = words.get(key, 0) + 1
    if not words:
        raise UserInputError("cannot train BPE on an empty corpus")

    base = sorted({s for w in words for s in w})
    if target_vocab_size < len(base):
        raise UserInputError(
            f"target vocabulary size {target_vocab_size} is below the "
            f"{len(base)} distinct base symbols")
    budget = max(0, target_vocab_size - len(base) - 1)  # -1 reserves <unk>

    pair_counts: dict[tuple, int] = {}
    for syms, c in words.items():
        for p in _pairs_of(syms):
            pair_counts[p] = pair_counts.get(p, 0) + c

    merges = []
    for _ in range(budget):
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        changed = [(syms, c) for syms, c in words.items()
                   if best in zip(syms, syms[1:])]
        for syms, c in changed:
            for p in _pairs_of(syms):
                pair_counts[p] -= c
                if pair_counts[p] == 0:
                    del pair_counts[p]
            del words[syms]
        for syms, c in changed:
            merged = tuple(_merge_in_word(list(syms), best))
            words[merged] = words.get(merged, 0) + c
            for p in _pairs_of(merged):
                pair_counts[p] = pair_counts.get(p, 0) + c

    id_to_token = base + [a + b for a, b in merges]
    specials = {UNK: len(id_to_token)}
    id_to_token.append(UNK)
    return Vocab(id_to_token, merges, specials, marker)


def encode(text: str, vocab: Vocab) -> Encoding:
    """Deterministic BPE encoding of normalized text.

    Unknown symbols map to the reserved unknown id; special tokens are
    never produced for plain text.
    """
    norm = normalize(text)
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    pos = 0
    for word in norm.split(" ") if norm else []:
        start = norm.index(word, pos)
        syms = _word_symbols(word, vocab.end_of_word_marker)
        spans = [(start + i, start + i + 1) for i in range(len(word))]
        for pair in vocab.merges:
            if len(syms) < 2:
                break
            syms, spans = _merge_in_word(syms, pair, spans)
        for sym, span in zip(syms, spans):
            ids.append(vocab.token_to_id.get(sym, vocab.unk_id))
            offsets.append(span)
        pos = start + len(word)
    return Encoding(ids, offsets)


def decode(ids, vocab: Vocab) -> str:
    """Reassemble normalized text; special ids render as their names."""
    words: list[str] = []
    current = ""
    marker = vocab.end_of_word_marker
    for i in ids:
        if not 0 <= i < len(vocab):
            raise ValidationError(f"token id {i} out of range for vocabulary "
                                  f"of {len(vocab)}")
        token = vocab.id_to_token[i]
        if vocab.is_special(i):
            if current:
                words.append(current)
                current = ""
            words.append(token)
        elif token.endswith(marker):
            words.append(current + token[:-len(marker)])
            current = ""
        else:
            current += token
    if current:
        words.append(current)
    return " ".join(words)


def extend_with_special_tokens(vocab: Vocab, names) -> Vocab:
    """Append reserved tokens (new ids after existing ones; merges untouched)."""
    names = list(names)
    if len(set(names)) != len(names):
        raise UserInputError(f"duplicate special token in {names}")
    id_to_token = list(vocab.id_to_token)
    specials = dict(vocab.special_tokens)
    for name in names:
        if name in vocab.token_to_id:
            raise UserInputError(f"special token {name!r} already in vocabulary")
        specials[name] = len(id_to_token)
        id_to_token.append(name)
    return Vocab(id_to_token, vocab.merges, specials, vocab.end_of_word_marker)


def serialize_vocab(vocab: Vocab) -> str:
    lines = [f"bpe-vocab v1 {len(vocab)} {len(vocab.merges)}"]
    for i, token in enumerate(vocab.id_to_token):
        lines.append(f"{i}\t{token}")
    for left, right in vocab.merges:
        lines.append(f"{left}\t{right}")
    for name in sorted(vocab.special_tokens, key=vocab.special_tokens.get):
        lines.append(f"special\t{name}\t{vocab.special_tokens[name]}")
    return "\n".join(lines) + "\n"


def save_vocab(vocab: Vocab, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_vocab(vocab))


def fingerprint(vocab: Vocab) -> str:
    return hashlib.sha256(serialize_vocab(vocab).encode("utf-8")).hexdigest()


def load_vocab(path) -> Vocab:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ParseError(f"{path}: cannot read: {e.strerror}") from None
    return parse_vocab(text, where=str(path))


def parse_vocab(text: str, where: str = "<vocab>") -> Vocab:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def fail(lineno, msg):
        raise ParseError(f"{where}:{lineno}: {msg}")

    if not lines:
        fail(1, "empty vocabulary file")
    head = lines[0].split(" ")
    if len(head) != 4 or head[0] != "bpe-vocab" or head[1] != "v1":
        fail(1, "expected header 'bpe-vocab v1 <V> <num_merges>'")
    try:
        n_tokens, n_merges = int(head[2]), int(head[3])
    except ValueError:
        fail(1, "non-integer counts in header")
    if len(lines) < 1 + n_tokens + n_merges:
        fail(len(lines), "file truncated")

    id_to_token = [None] * n_tokens
    seen = set()
    for k in range(n_tokens):
        lineno = 2 + k
        parts = lines[1 + k].split("\t")
        if len(parts) != 2:
            fail(lineno, "expected '<id>\\t<token>'")
        try:
            i = int(parts[0])
        except ValueError:
            fail(lineno, f"non-integer id {parts[0]!r}")
        if not 0 <= i < n_tokens:
            fail(lineno, f"id {i} outside 0..{n_tokens - 1}")
        if id_to_token[i] is not None:
            fail(lineno, f"duplicate id {i}")
        if parts[1] in seen:
            fail(lineno, f"duplicate token {parts[1]!r}")
        seen.add(parts[1])
        id_to_token[i] = parts[1]

    merges = []
    for k in range(n_merges):
        lineno = 2 + n_tokens + k
        parts = lines[1 + n_tokens + k].split("\t")
        if len(parts) != 2:
            fail(lineno, "expected merge line '<left>\\t<right>'")
        if parts[0] + parts[1] not in seen:
            fail(lineno, f"merge product {parts[0] + parts[1]!r} is not a token")
        merges.append((parts[0], parts[1]))

    specials = {}
    for k in range(1 + n_tokens + n_merges, len(lines)):
        parts = lines[k].split("\t")
        if len(parts) != 3 or parts[0] != "special":
            fail(k + 1, "expected 'special\\t<name>\\t<id>'")
        try:
            i = int(parts[2])
        except ValueError:
            fail(k + 1, f"non-integer special id {parts[2]!r}")
        if not 0 <= i < n_tokens or id_to_token[i] != parts[1]:
            fail(k + 1, f"special {parts[1]!r} does not match token id {i}")
        if parts[1] in specials:
            fail(k + 1, f"duplicate special {parts[1]!r}")
        specials[parts[1]] = i
    return Vocab(id_to_token, merges, specials)
