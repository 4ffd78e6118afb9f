"""Backend parity: the compiled kernels must match the NumPy fallback."""

import numpy as np
import pytest

from trelab import kernels
from trelab.errors import ConfigError

pytestmark = pytest.mark.skipif(
    "compiled" not in kernels.available_backends(),
    reason="compiled extension not built")


def rng(seed):
    return np.random.default_rng(seed)


def both(fn, *args):
    with kernels.use_backend("python"):
        a = fn(*args)
    with kernels.use_backend("compiled"):
        b = fn(*args)
    return a, b


def assert_close(a, b, tol=1e-12):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert np.max(np.abs(a - b)) <= tol * max(1.0, np.max(np.abs(b)))


def test_gelu():
    x = rng(0).uniform(-4, 4, 1000)
    g = rng(1).normal(size=1000)
    fa, fb = both(kernels.gelu_fwd, x)
    assert_close(fa, fb)
    ba, bb = both(kernels.gelu_bwd, x, g)
    assert_close(ba, bb)


def test_softmax_rows():
    x = rng(2).uniform(-5, 5, (40, 17))
    pa, pb = both(kernels.softmax_rows, x)
    assert_close(pa, pb)
    g = rng(3).normal(size=(40, 17))
    ga, gb = both(kernels.softmax_rows_bwd, pa, g)
    assert_close(ga, gb)


def test_causal_softmax_rows():
    x = rng(4).uniform(-5, 5, (23, 23))
    pa, pb = both(kernels.causal_softmax_rows, x)
    assert_close(pa, pb)
    assert np.array_equal(np.triu(pb, 1), np.zeros_like(pb))


def test_layernorm():
    x = rng(5).uniform(-3, 3, (11, 16))
    gain = rng(6).uniform(0.5, 2.0, 16)
    bias = rng(7).uniform(-1, 1, 16)
    (ya, ma, ra), (yb, mb, rb) = both(kernels.layernorm_fwd, x, gain, bias, 1e-5)
    assert_close(ya, yb)
    assert_close(ma, mb)
    assert_close(ra, rb)
    g = rng(8).normal(size=(11, 16))
    (xa, ga_, ba), (xb, gb_, bb) = both(kernels.layernorm_bwd, x, gain, ma, ra, g)
    assert_close(xa, xb)
    assert_close(ga_, gb_)
    assert_close(ba, bb)


def test_cross_entropy():
    logits = rng(9).uniform(-4, 4, (30, 12))
    targets = rng(10).integers(0, 12, 30)
    targets[::5] = -1
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    (la, na, pa), (lb, nb, pb) = both(kernels.cross_entropy_fwd, logits, targets, -1)
    assert na == nb
    assert abs(la - lb) < 1e-12
    assert_close(pa, pb)
    ga, gb = both(kernels.cross_entropy_bwd, pa, targets, -1, na, 1.0)
    assert_close(ga, gb)


def test_adam_update():
    n = 500
    p0 = rng(11).normal(size=n)
    g = rng(12).normal(size=n)
    m0 = rng(13).normal(size=n) * 0.1
    v0 = np.abs(rng(14).normal(size=n)) * 0.1
    results = []
    for name in ("python", "compiled"):
        p, m, v = p0.copy(), m0.copy(), v0.copy()
        with kernels.use_backend(name):
            kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8,
                                1 - 0.9 ** 3, 1 - 0.999 ** 3)
        results.append((p, m, v))
    for a, b in zip(*results):
        assert_close(a, b, tol=1e-14)


def test_unknown_backend_rejected():
    with pytest.raises(ConfigError):
        kernels.set_backend("fortran")


def test_env_var_selection():
    import subprocess
    import sys
    out = subprocess.run(
        [sys.executable, "-c",
         "import trelab.kernels as k; print(k.backend_name())"],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "TRELAB_KERNELS": "python"})
    assert out.stdout.strip() == "python"
