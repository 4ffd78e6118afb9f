"""Scoring conventions, multi-run selection, and the sample-efficiency harness.

Two scorers: pooled micro-F1 with a designated negative class (the TACRED
convention) and directed macro-F1 where the two directions of a relation
type share one bucket, direction errors count as errors, and the average
runs over the types that actually occur, excluding Other (the SemEval
convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import NO_RELATION, OTHER
from .errors import UserInputError
from .model import forward_relation


@dataclass
class ScoreReport:
    precision: float
    recall: float
    f1: float
    per_class: dict = field(default_factory=dict)  # label -> {tp, fp, fn}

    def line(self) -> str:
        return (f"P={self.precision:.4f} R={self.recall:.4f} "
                f"F1={self.f1:.4f}")


def _prf(tp: int, fp: int, fn: int):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def micro_f1_tacred(gold, pred, negative_label: str = NO_RELATION) -> ScoreReport:
    """Pooled TP/FP/FN over all classes except the negative one.

    A prediction counts as TP only on exact match of a positive label;
    predicting a wrong positive label yields both an FP (for the
    prediction) and an FN (for the gold label).
    """
    if len(gold) != len(pred):
        raise UserInputError(
            f"gold has {len(gold)} labels, predictions {len(pred)}")
    per_class: dict = {}

    def cell(label):
        return per_class.setdefault(label, {"tp": 0, "fp": 0, "fn": 0})

    for g, p in zip(gold, pred):
        if p != negative_label and p == g:
            cell(p)["tp"] += 1
        if p != negative_label and p != g:
            cell(p)["fp"] += 1
        if g != negative_label and p != g:
            cell(g)["fn"] += 1
    tp = sum(c["tp"] for c in per_class.values())
    fp = sum(c["fp"] for c in per_class.values())
    fn = sum(c["fn"] for c in per_class.values())
    p, r, f1 = _prf(tp, fp, fn)
    return ScoreReport(p, r, f1, per_class)


def directed_type(label: str) -> str:
    """Undirected relation type of a directed label; Other maps to itself."""
    if label == OTHER:
        return OTHER
    if label.endswith("(e1,e2)") or label.endswith("(e2,e1)"):
        return label[:-7]
    raise UserInputError(
        f"label {label!r} is neither '<Type>(e1,e2)', '<Type>(e2,e1)' "
        f"nor {OTHER!r}")


def macro_f1_semeval_directed(gold, pred, other_label: str = OTHER) -> ScoreReport:
    """Directed exact-match counts pooled per relation type, macro-averaged
    over the non-empty types; Other is excluded from the average but its
    mistakes still penalize real types."""
    if len(gold) != len(pred):
        raise UserInputError(
            f"gold has {len(gold)} labels, predictions {len(pred)}")
    per_type: dict = {}

    def cell(label):
        t = directed_type(label)
        if t == other_label:
            return None
        return per_type.setdefault(t, {"tp": 0, "fp": 0, "fn": 0})

    for g, p in zip(gold, pred):
        gc, pc = cell(g), cell(p)
        if g == p:
            if gc is not None:
                gc["tp"] += 1
        else:
            if pc is not None:
                pc["fp"] += 1
            if gc is not None:
                gc["fn"] += 1
    ps, rs, f1s = [], [], []
    for counts in per_type.values():
        p, r, f1 = _prf(counts["tp"], counts["fp"], counts["fn"])
        ps.append(p)
        rs.append(r)
        f1s.append(f1)
    if not f1s:
        return ScoreReport(0.0, 0.0, 0.0, per_type)
    n = len(f1s)
    return ScoreReport(sum(ps) / n, sum(rs) / n, sum(f1s) / n, per_type)


def score_predictions(gold, pred, fmt: str) -> ScoreReport:
    if fmt == "tacred":
        return micro_f1_tacred(gold, pred)
    if fmt == "semeval":
        return macro_f1_semeval_directed(gold, pred)
    raise UserInputError(f"unknown dataset format {fmt!r}")


# -------------------------------------------------------------- run selection

def median_run_selection(runs):
    """runs: (seed, validation_f1, test_f1) triples.

    Returns (selected_run, mean_test, std_test): the run whose validation
    score is the median (stable sort, lower middle for even counts) plus
    the mean and population standard deviation of the test scores.
    """
    runs = list(runs)
    if not runs:
        raise UserInputError("no runs to select from")
    by_val = sorted(runs, key=lambda r: r[1])
    selected = by_val[(len(runs) - 1) // 2]
    tests = [r[2] for r in runs]
    mean = sum(tests) / len(tests)
    std = math.sqrt(sum((t - mean) ** 2 for t in tests) / len(tests))
    return selected, mean, std


# ---------------------------------------------------------------- prediction

def predict_dataset(model, head, examples, labels, clf_id) -> list:
    """Greedy (argmax) relation prediction for assembled examples."""
    out = []
    for ex in examples:
        logits = forward_relation(ex.ids, model, head, clf_id=clf_id)
        out.append(labels[int(np.argmax(logits.array))])
    return out


def write_predictions(path, gold, pred):
    if len(gold) != len(pred):
        raise UserInputError(
            f"gold has {len(gold)} labels, predictions {len(pred)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for g, p in zip(gold, pred):
            f.write(f"{g}\t{p}\n")


def read_predictions(path):
    gold, pred = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise UserInputError(
                    f"{path}:{lineno}: expected '<gold>\\t<pred>'")
            gold.append(parts[0])
            pred.append(parts[1])
    return gold, pred


# ------------------------------------------------------------ learning curve

def validate_ratios(ratios):
    if not ratios:
        raise UserInputError("ratio list is empty")
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise UserInputError(f"ratio {r} outside (0, 1]")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise UserInputError(f"ratios must be strictly ascending, got {ratios}")


def sample_efficiency_curve(ratios, seeds, run_cell, csv_path, svg_path):
    """Learning curve over training-set fractions.

    run_cell(ratio, seed) -> validation F1 for a model trained on that
    stratified fraction. Emits CSV rows `ratio,seed,f1` and a line chart of
    per-ratio means; returns the list of (ratio, mean_f1).
    """
    validate_ratios(ratios)
    if not seeds:
        raise UserInputError("seed list is empty")
    rows = []
    means = []
    for ratio in ratios:
        scores = []
        for seed in seeds:
            f1 = run_cell(ratio, seed)
            rows.append((ratio, seed, f1))
            scores.append(f1)
        means.append((ratio, sum(scores) / len(scores)))
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("ratio,seed,f1\n")
        for ratio, seed, f1 in rows:
            f.write(f"{ratio:g},{seed},{f1:.6f}\n")
    with open(svg_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(curve_svg(means))
    return means


def curve_svg(means, width=640, height=400) -> str:
    """Self-contained line chart; pure string assembly so output bytes are
    reproducible."""
    margin = 60
    inner_w, inner_h = width - 2 * margin, height - 2 * margin

    def sx(ratio):
        return margin + ratio * inner_w

    def sy(f1):
        return height - margin - f1 * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = sx(tick), sy(tick)
        parts.append(f'<text x="{x:.1f}" y="{height - margin + 20}" '
                     f'font-size="12" text-anchor="middle">{tick:g}</text>')
        parts.append(f'<text x="{margin - 10}" y="{y:.1f}" font-size="12" '
                     f'text-anchor="end">{tick:g}</text>')
    parts.append(f'<text x="{width / 2:.1f}" y="{height - 15}" font-size="13" '
                 f'text-anchor="middle">training set fraction</text>')
    parts.append(f'<text x="18" y="{height / 2:.1f}" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 18 '
                 f'{height / 2:.1f})">validation F1</text>')
    if means:
        points = " ".join(f"{sx(r):.2f},{sy(f1):.2f}" for r, f1 in means)
        parts.append(f'<polyline points="{points}" fill="none" '
                     f'stroke="steelblue" stroke-width="2"/>')
        for r, f1 in means:
            parts.append(f'<circle cx="{sx(r):.2f}" cy="{sy(f1):.2f}" r="4" '
                         f'fill="steelblue"/>')
            parts.append(f'<text x="{sx(r):.2f}" y="{sy(f1) - 10:.2f}" '
                         f'font-size="11" text-anchor="middle">'
                         f'{f1:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
