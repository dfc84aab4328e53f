"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the LLMPSYCH_PURE_PYTHON switch
does not matter here. Outputs are checked for agreement before timing.
"""
import argparse
import sys
import timeit

import numpy as np

from llmpsych import _pykernels

try:
    from llmpsych import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    L60 = rng.normal(size=(60, 5))
    L300 = rng.normal(size=(300, 10))
    raw = rng.integers(0, 6, size=(20000, 60))
    fk = rng.random(60) < 0.5
    return {
        "varimax_sweeps 60x5": lambda m: m.varimax_sweeps(L60),
        "varimax_sweeps 300x10": lambda m: m.varimax_sweeps(L300),
        "varimax_criterion 300x10": lambda m: m.varimax_criterion(L300),
        "key_correct 20000x60": lambda m: m.key_correct(raw, fk, 1, 5, 3),
        "agree_bias_rows 20000x60": lambda m: m.agree_bias_rows(raw, fk, 1, 5, 3),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        if not _same(fn(_pykernels), fn(_ckernels)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_py:>12.3f}{t_c:>12.3f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
