"""Timing comparison of the compiled and pure-NumPy kernel backends.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N] [--scale F]

Each kernel is timed as best-of-N wall clock on shapes typical of a small
training run, followed by a full training step (forward, backward, Adam)
under both backends. Numeric agreement between backends is asserted on
every kernel before timing it.
"""

import argparse
import time

import numpy as np

from trelab import kernels
from trelab.data import IGNORE_ID, EncodedExample
from trelab.model import ModelConfig, init_model
from trelab.numerics import Tape, backward, zero_grads
from trelab.training import AdamState, adam_step, combined_loss


def best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng, scale):
    n = max(8, int(256 * scale))
    d = max(8, int(64 * scale))
    v = max(16, int(512 * scale))
    x = rng.standard_normal((n, n))
    h = rng.standard_normal((n, d))
    gain = rng.standard_normal(d)
    bias = rng.standard_normal(d)
    logits = rng.standard_normal((n, v))
    targets = rng.integers(0, v, size=n)
    targets[:: max(1, n // 7)] = IGNORE_ID
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    nvalid = int((targets != IGNORE_ID).sum())
    flat = rng.standard_normal(200_000)
    grad = rng.standard_normal(200_000)

    def adam_case():
        p, m, v_ = flat.copy(), np.zeros_like(flat), np.zeros_like(flat)
        kernels.adam_update(p, grad, m, v_, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
        return p

    return [
        ("gelu_fwd", lambda: kernels.gelu_fwd(h)),
        ("gelu_bwd", lambda: kernels.gelu_bwd(h, h)),
        ("softmax_rows", lambda: kernels.softmax_rows(x)),
        ("causal_softmax_rows", lambda: kernels.causal_softmax_rows(x)),
        ("layernorm_fwd", lambda: kernels.layernorm_fwd(h, gain, bias, 1e-5)),
        ("cross_entropy_fwd",
         lambda: kernels.cross_entropy_fwd(logits, targets, IGNORE_ID)),
        ("cross_entropy_bwd",
         lambda: kernels.cross_entropy_bwd(probs, targets, IGNORE_ID,
                                           nvalid, 1.0)),
        ("adam_update", adam_case),
    ]


def training_step_case(scale):
    rng = np.random.default_rng(7)
    config = ModelConfig(n_layers=2, n_heads=4,
                         d_model=max(16, int(64 * scale)),
                         d_ff=max(32, int(128 * scale)), vocab_size=256,
                         max_positions=64, residual_dropout=0.0,
                         attention_dropout=0.0, classifier_dropout=0.0,
                         n_relations=8)
    model, head = init_model(config, rng)
    params = model.parameters() + head.parameters()
    data_rng = np.random.default_rng(11)
    clf_id = 255
    examples = []
    for _ in range(4):
        tokens = list(data_rng.integers(0, 250, size=48))
        tokens[-1] = clf_id
        examples.append(EncodedExample(
            ids=tokens, label_id=int(data_rng.integers(0, 8)),
            lm_targets=tokens[1:] + [IGNORE_ID]))
    adam = AdamState(params)

    def step():
        zero_grads(params)
        tape = Tape()
        loss = combined_loss(model, head, examples, 0.5, clf_id, tape=tape)
        backward(loss, tape)
        adam_step(adam, 1e-4)
        return loss.array

    return step


def _flatten(out):
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def check_agreement(cases_by_backend):
    """Same inputs through both backends must agree to float tolerance."""
    names = [name for name, _ in cases_by_backend["python"]]
    for i, name in enumerate(names):
        outs = []
        for backend, cases in cases_by_backend.items():
            with kernels.use_backend(backend):
                outs.append(_flatten(cases[i][1]()))
        for other in outs[1:]:
            np.testing.assert_allclose(other, outs[0], rtol=1e-12,
                                       atol=1e-12, err_msg=name)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0,
                        help="multiplier on the benchmark shapes")
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled extension not built; timing the python backend only")

    rng = np.random.default_rng(0)
    cases_by_backend = {b: kernel_cases(np.random.default_rng(0), args.scale)
                        for b in backends}
    if len(backends) == 2:
        check_agreement(cases_by_backend)
        print("backend agreement: ok")

    header = f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for i, (name, _) in enumerate(cases_by_backend[backends[0]]):
        times = {}
        for backend in backends:
            fn = cases_by_backend[backend][i][1]
            with kernels.use_backend(backend):
                times[backend] = best_of(args.repeats, fn)
        row = f"{name:<22}" + "".join(f"{times[b] * 1e6:>12.1f}us"
                                      for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['compiled']:>9.2f}x"
        print(row)

    print()
    step_times = {}
    for backend in backends:
        step = training_step_case(args.scale)
        with kernels.use_backend(backend):
            step()  # warm up and materialize caches
            step_times[backend] = best_of(args.repeats, step)
    row = f"{'training step':<22}" + "".join(
        f"{step_times[b] * 1e3:>12.2f}ms" for b in backends)
    if len(backends) == 2:
        row += f"{step_times['python'] / step_times['compiled']:>9.2f}x"
    print(row)


if __name__ == "__main__":
    main()
