"""Backend parity: the numba kernels and the numpy fallback must agree with
each other and with the scalar oracle."""

import numpy as np
import pytest

from mccount.kernels import numpy_impl

from oracles import conv2d_scalar

try:
    from mccount.kernels import numba_impl
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    numba_impl = None

CASES = [
    # (c_in, c_out, h, k, stride, pad)
    (1, 1, 6, 1, 1, 0),
    (2, 3, 8, 3, 1, 1),
    (3, 2, 9, 3, 2, 0),
    (2, 4, 11, 5, 3, 2),
]


def _instance(c_in, c_out, h, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c_in, h, h))
    w = rng.normal(size=(c_out, c_in, k, k))
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    n_out = (h + 2 * pad - k) // stride + 1
    g = rng.normal(size=(c_out, n_out, n_out))
    return x, w, xp, g, n_out


@pytest.mark.parametrize("case", CASES)
def test_numpy_impl_matches_scalar_oracle(case):
    c_in, c_out, h, k, stride, pad = case
    x, w, xp, _, n_out = _instance(*case, seed=1)
    got = numpy_impl.conv2d_forward(xp, w, stride, n_out, n_out)
    assert np.abs(got - conv2d_scalar(x, w, stride, pad)).max() <= 1e-12


@pytest.mark.skipif(numba_impl is None, reason="numba unavailable")
@pytest.mark.parametrize("case", CASES)
def test_backends_agree(case):
    c_in, c_out, h, k, stride, pad = case
    _, w, xp, g, n_out = _instance(*case, seed=2)
    fa = numba_impl.conv2d_forward(xp, w, stride, n_out, n_out)
    fb = numpy_impl.conv2d_forward(xp, w, stride, n_out, n_out)
    assert np.abs(fa - fb).max() <= 1e-12

    hp = xp.shape[1]
    ia = numba_impl.conv2d_grad_input(g, w, stride, hp, hp)
    ib = numpy_impl.conv2d_grad_input(g, w, stride, hp, hp)
    assert np.abs(ia - ib).max() <= 1e-12

    ka = numba_impl.conv2d_grad_kernel(g, xp, stride, k)
    kb = numpy_impl.conv2d_grad_kernel(g, xp, stride, k)
    assert np.abs(ka - kb).max() <= 1e-12


def test_backend_env_flag_selects_numpy(tmp_path):
    import subprocess
    import sys

    code = ("import mccount.backend as b; import mccount.kernels as k; "
            "import mccount.kernels.numpy_impl as ni; "
            "print(b.BACKEND, k.conv2d_forward is ni.conv2d_forward)")
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "MOC_BACKEND": "numpy"},
        capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
