"""Checkpoint files: text header plus raw little-endian float64 tensors.

Layout:

    trelab-ckpt v1
    config <field> <value>          (one line per ModelConfig field)
    vocab-fingerprint <hex digest>
    meta <key> <json value>         (sorted by key)
    tensor <name> <d0,d1,...> <byte offset> <byte length>
    end
    <raw tensor bytes in manifest order>

Offsets are relative to the first byte after the header and must be
contiguous; load verifies offsets, lengths, and the total byte count.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError
from .model import ModelConfig

MAGIC = "trelab-ckpt v1"

_INT_FIELDS = {"n_layers", "n_heads", "d_model", "d_ff", "vocab_size",
               "max_positions", "n_relations"}


class Checkpoint:
    """Parsed checkpoint: config, vocab fingerprint, meta dict, tensors."""

    def __init__(self, config: ModelConfig, vocab_fingerprint: str,
                 meta: dict, tensors: dict, tensor_order: list):
        self.config = config
        self.vocab_fingerprint = vocab_fingerprint
        self.meta = meta
        self.tensors = tensors
        self.tensor_order = tensor_order


def save_checkpoint(path, config: ModelConfig, vocab_fingerprint: str,
                    tensors, meta: dict | None = None):
    """tensors: ordered (name, float64 array) pairs; meta values must be
    JSON-serializable."""
    lines = [MAGIC]
    for field in ModelConfig.field_names():
        lines.append(f"config {field} {getattr(config, field)!r}")
    lines.append(f"vocab-fingerprint {vocab_fingerprint}")
    for key in sorted(meta or {}):
        payload = json.dumps((meta or {})[key], sort_keys=True,
                             separators=(",", ":"))
        lines.append(f"meta {key} {payload}")
    blobs = []
    offset = 0
    for name, array in tensors:
        raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
        shape = ",".join(str(s) for s in array.shape)
        lines.append(f"tensor {name} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    with open(path, "wb") as f:
        f.write("\n".join(lines).encode("utf-8") + b"\n")
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ParseError(f"{path}: cannot read: {e.strerror}") from None

    def fail(msg):
        raise ParseError(f"{path}: {msg}")

    magic = MAGIC.encode("utf-8") + b"\n"
    if not data.startswith(magic):
        fail(f"missing {MAGIC!r} header")
    end_marker = b"\nend\n"
    split = data.find(end_marker)
    if split < 0:
        fail("header terminator 'end' not found")
    header = data[:split].decode("utf-8").split("\n")[1:]
    body = data[split + len(end_marker):]

    config_kv = {}
    fingerprint = None
    meta = {}
    manifest = []
    for line in header:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            field, _, value = rest.partition(" ")
            config_kv[field] = value
        elif kind == "vocab-fingerprint":
            fingerprint = rest
        elif kind == "meta":
            key, _, payload = rest.partition(" ")
            try:
                meta[key] = json.loads(payload)
            except json.JSONDecodeError:
                fail(f"bad JSON in meta line {key!r}")
        elif kind == "tensor":
            parts = rest.split(" ")
            if len(parts) != 4:
                fail(f"malformed tensor line {line!r}")
            name, shape_csv, offset_s, nbytes_s = parts
            shape = tuple(int(s) for s in shape_csv.split(",")) if shape_csv else ()
            manifest.append((name, shape, int(offset_s), int(nbytes_s)))
        else:
            fail(f"unknown header line kind {kind!r}")

    missing = [f for f in ModelConfig.field_names() if f not in config_kv]
    if missing:
        fail(f"config fields missing: {missing}")
    if fingerprint is None:
        fail("vocab-fingerprint line missing")
    kwargs = {}
    for field in ModelConfig.field_names():
        raw = config_kv[field]
        kwargs[field] = int(raw) if field in _INT_FIELDS else float(raw)
    config = ModelConfig(**kwargs)

    tensors = {}
    order = []
    expected_offset = 0
    for name, shape, offset, nbytes in manifest:
        if offset != expected_offset:
            fail(f"tensor {name!r} offset {offset}, expected {expected_offset}")
        n_entries = 1
        for s in shape:
            n_entries *= s
        if nbytes != n_entries * 8:
            fail(f"tensor {name!r} length {nbytes} does not match shape {shape}")
        if name in tensors:
            fail(f"duplicate tensor {name!r}")
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            fail(f"tensor {name!r} data truncated")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        order.append(name)
        expected_offset += nbytes
    if expected_offset != len(body):
        fail(f"{len(body) - expected_offset} trailing bytes after last tensor")
    return Checkpoint(config, fingerprint, meta, tensors, order)
