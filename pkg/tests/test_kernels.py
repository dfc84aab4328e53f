"""Compiled and numpy kernels must agree."""
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from llmpsych import _kernels, _pykernels

ck = pytest.importorskip("llmpsych._ckernels")


def test_backend_reports_compiled():
    forced = os.environ.get("LLMPSYCH_PURE_PYTHON", "") in ("1", "true", "yes")
    assert _kernels.BACKEND == ("python" if forced else "cython")


def test_env_forces_python(monkeypatch):
    import importlib
    monkeypatch.setenv("LLMPSYCH_PURE_PYTHON", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.key_correct is _pykernels.key_correct
    finally:
        monkeypatch.delenv("LLMPSYCH_PURE_PYTHON")
        importlib.reload(_kernels)


codes = arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(2, 10)),
               elements=st.integers(-1, 7))


@settings(max_examples=80, deadline=None)
@given(codes, st.data())
def test_key_correct_parity(raw, data):
    fk = np.array(data.draw(st.lists(st.booleans(), min_size=raw.shape[1], max_size=raw.shape[1])),
                  dtype=np.int8)
    a = ck.key_correct(raw, fk, 1, 5, 3)
    b = _pykernels.key_correct(raw, fk, 1, 5, 3)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=80, deadline=None)
@given(codes, st.data())
def test_agree_bias_parity(raw, data):
    k = raw.shape[1]
    split = data.draw(st.integers(1, k - 1))
    fk = np.array([0] * split + [1] * (k - split), dtype=np.int8)
    a = ck.agree_bias_rows(raw, fk, 1, 5, 3)
    b = _pykernels.agree_bias_rows(raw, fk, 1, 5, 3)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("mod", [ck, _pykernels])
def test_agree_bias_single_key_rejected(mod):
    with pytest.raises(ValueError):
        mod.agree_bias_rows(np.ones((2, 3), dtype=np.int64), np.zeros(3, dtype=np.int8), 1, 5, 3)


def test_read_only_input_accepted():
    raw = np.full((3, 4), 5, dtype=np.int64)
    raw.setflags(write=False)
    fk = np.array([0, 1, 0, 1], dtype=np.int8)
    fk.setflags(write=False)
    assert ck.agree_bias_rows(raw, fk, 1, 5, 3).tolist() == [4.0] * 3


@pytest.mark.parametrize("seed", range(10))
def test_varimax_parity(seed):
    L = np.random.default_rng(seed).normal(size=(30, 5))
    Bc, Rc, hc, cc = ck.varimax_sweeps(L, 1e-10, 1000)
    Bp, Rp, hp, cp = _pykernels.varimax_sweeps(L, 1e-10, 1000)
    assert cc and cp
    np.testing.assert_allclose(Bc, Bp, atol=1e-9)
    np.testing.assert_allclose(Rc, Rp, atol=1e-9)
    assert abs(ck.varimax_criterion(Bc) - _pykernels.varimax_criterion(Bp)) < 1e-12
