"""Decoder-only transformer with a tied-embedding LM head and a relation head.

The token embedding matrix is the single source for both the input
embedding and the LM output projection; the relation head reads the final
position's state, which summarizes the whole input under causal attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DimensionError, ValidationError
from .numerics import Parameter, Tensor

INIT_SCALE = 0.02


@dataclass
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    vocab_size: int = 0
    max_positions: int = 128
    residual_dropout: float = 0.1
    attention_dropout: float = 0.1
    classifier_dropout: float = 0.1
    n_relations: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for f in ("n_layers", "n_heads", "d_model", "d_ff"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        for f in ("residual_dropout", "attention_dropout", "classifier_dropout"):
            if not 0.0 <= getattr(self, f) < 1.0:
                raise ConfigError(f"{f} must be in [0, 1)")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


_BLOCK_WEIGHTS = ("w_q", "w_k", "w_v", "w_o", "w_f1", "w_f2")
_BLOCK_KEYS = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
               "ln1_g", "ln1_b", "w_f1", "b_f1", "w_f2", "b_f2",
               "ln2_g", "ln2_b")


class TransformerLM:
    def __init__(self, config: ModelConfig, w_e, w_p, blocks):
        self.config = config
        self.w_e = w_e
        self.w_p = w_p
        self.blocks = blocks

    def parameters(self) -> list[Parameter]:
        out = [self.w_e, self.w_p]
        for block in self.blocks:
            out.extend(block[k] for k in _BLOCK_KEYS)
        return out


class RelationHead:
    def __init__(self, w_r, b_r):
        self.w_r = w_r
        self.b_r = b_r

    def parameters(self) -> list[Parameter]:
        return [self.w_r, self.b_r]

    @property
    def n_relations(self) -> int:
        return self.w_r.shape[1]


def init_model(config: ModelConfig, rng,
               init_scale: float = INIT_SCALE) -> tuple[TransformerLM, RelationHead | None]:
    """Fresh parameters: weights N(0, init_scale^2), gains 1, biases 0.

    Draw order is fixed, so one seed pins every parameter bit-for-bit.
    Returns (model, head); head is None when config.n_relations == 0.
    """
    d, dff, v = config.d_model, config.d_ff, config.vocab_size
    if v < 1:
        raise ConfigError("vocab_size must be set before init_model")

    def weight(name, shape):
        return Parameter(rng.normal(0.0, init_scale, shape), name)

    w_e = weight("w_e", (v, d))
    w_p = weight("w_p", (config.max_positions, d))
    blocks = []
    for i in range(config.n_layers):
        pre = f"block{i}."
        block = {}
        for wname, shape in (("w_q", (d, d)), ("w_k", (d, d)), ("w_v", (d, d)),
                             ("w_o", (d, d)), ("w_f1", (d, dff)), ("w_f2", (dff, d))):
            block[wname] = weight(pre + wname, shape)
            bname = "b" + wname[1:]
            width = shape[1]
            block[bname] = Parameter(np.zeros(width), pre + bname)
        block["ln1_g"] = Parameter(np.ones(d), pre + "ln1_g")
        block["ln1_b"] = Parameter(np.zeros(d), pre + "ln1_b")
        block["ln2_g"] = Parameter(np.ones(d), pre + "ln2_g")
        block["ln2_b"] = Parameter(np.zeros(d), pre + "ln2_b")
        blocks.append(block)
    model = TransformerLM(config, w_e, w_p, blocks)

    head = None
    if config.n_relations > 0:
        head = RelationHead(weight("head.w_r", (d, config.n_relations)),
                            Parameter(np.zeros(config.n_relations), "head.b_r"))
    return model, head


def transformer_block(h: Tensor, block, config: ModelConfig, train_mode: bool,
                      rng, tape=None, attn_probs=None) -> Tensor:
    """Masked multi-head self-attention, then a position-wise FFN.

    Post-norm arrangement: each sub-layer output is dropped out, added to
    its input, then layer-normalized.
    """
    d_head = config.d_model // config.n_heads
    inv_sqrt = 1.0 / math.sqrt(d_head)

    q = nm.add(nm.matmul(h, block["w_q"], tape), block["b_q"], tape)
    k = nm.add(nm.matmul(h, block["w_k"], tape), block["b_k"], tape)
    v = nm.add(nm.matmul(h, block["w_v"], tape), block["b_v"], tape)

    head_outs = []
    for i in range(config.n_heads):
        lo, hi = i * d_head, (i + 1) * d_head
        qi = nm.slice_cols(q, lo, hi, tape)
        ki = nm.slice_cols(k, lo, hi, tape)
        vi = nm.slice_cols(v, lo, hi, tape)
        scores = nm.scale(nm.matmul(qi, nm.transpose(ki, tape), tape), inv_sqrt, tape)
        probs = nm.causal_softmax(scores, tape)
        if attn_probs is not None:
            attn_probs.append(probs.array.copy())
        probs = nm.dropout(probs, config.attention_dropout, rng, train_mode, tape)
        head_outs.append(nm.matmul(probs, vi, tape))

    attn = head_outs[0] if len(head_outs) == 1 else nm.concat_cols(head_outs, tape)
    attn = nm.add(nm.matmul(attn, block["w_o"], tape), block["b_o"], tape)
    attn = nm.dropout(attn, config.residual_dropout, rng, train_mode, tape)
    h = nm.layer_norm(nm.add(h, attn, tape), block["ln1_g"], block["ln1_b"], tape=tape)

    inner = nm.gelu(nm.add(nm.matmul(h, block["w_f1"], tape), block["b_f1"], tape), tape)
    ff = nm.add(nm.matmul(inner, block["w_f2"], tape), block["b_f2"], tape)
    ff = nm.dropout(ff, config.residual_dropout, rng, train_mode, tape)
    return nm.layer_norm(nm.add(h, ff, tape), block["ln2_g"], block["ln2_b"], tape=tape)


def forward_hidden(tokens, model: TransformerLM, train_mode: bool = False,
                   rng=None, tape=None, attn_probs=None) -> Tensor:
    """Embed, add positions, run all blocks; returns the n×d_model states."""
    ids = np.asarray(tokens, dtype=np.int64)
    n = ids.shape[0]
    if n == 0:
        raise ValidationError("empty token sequence")
    if n > model.config.max_positions:
        raise DimensionError(
            f"sequence length {n} exceeds max_positions {model.config.max_positions}")
    tok = nm.gather_rows(model.w_e, ids, tape)
    pos = nm.slice_rows(model.w_p, 0, n, tape)
    h = nm.add(tok, pos, tape)
    for block in model.blocks:
        h = transformer_block(h, block, model.config, train_mode, rng, tape,
                              attn_probs)
    return h


def forward_lm(tokens, model: TransformerLM, train_mode: bool = False,
               rng=None, tape=None, output_weight: Parameter | None = None) -> Tensor:
    """Next-token logits (n×V); the output projection is the embedding
    matrix transposed unless an explicit untied weight is supplied."""
    h = forward_hidden(tokens, model, train_mode, rng, tape)
    w_out = model.w_e if output_weight is None else output_weight
    return nm.matmul(h, nm.transpose(w_out, tape), tape)


def forward_relation(tokens, model: TransformerLM, head: RelationHead,
                     clf_id: int, train_mode: bool = False, rng=None,
                     tape=None, return_hidden: bool = False):
    """Relation logits (length R) read from the final position's state.

    The input must end with the classification token and contain it
    nowhere else.
    """
    ids = list(tokens)
    if not ids or ids[-1] != clf_id:
        raise ValidationError("input must end with the classification token")
    if clf_id in ids[:-1]:
        raise ValidationError(
            "classification token must appear only at the final position")
    h = forward_hidden(ids, model, train_mode, rng, tape)
    last = nm.slice_rows(h, len(ids) - 1, len(ids), tape)
    last = nm.dropout(last, model.config.classifier_dropout, rng, train_mode, tape)
    logits = nm.add(nm.matmul(last, head.w_r, tape), head.b_r, tape)
    flat = nm.reshape(logits, (head.n_relations,), tape)
    if return_hidden:
        return flat, h
    return flat


def resize_vocab(model: TransformerLM, new_vocab_size: int, rng,
                 init_scale: float = INIT_SCALE):
    """Grow the embedding matrix for appended special tokens.

    New rows are freshly initialized; existing rows (and therefore the tied
    output projection for old tokens) are untouched.
    """
    old = model.config.vocab_size
    if new_vocab_size < old:
        raise ConfigError(
            f"cannot shrink vocabulary from {old} to {new_vocab_size}")
    if new_vocab_size == old:
        return
    extra = rng.normal(0.0, init_scale, (new_vocab_size - old, model.config.d_model))
    model.w_e.array = np.concatenate([model.w_e.array, extra], axis=0)
    model.w_e.grad = np.zeros_like(model.w_e.array)
    model.config.vocab_size = new_vocab_size


def parameter_count(params) -> int:
    return sum(p.size for p in params)
