"""Pure-Python/numpy kernels, used when the compiled extension is unavailable."""
import numpy as np


def varimax_criterion(B):
    B2 = np.asarray(B, dtype=float) ** 2
    p = B2.shape[0]
    return float(np.sum(np.sum(B2**2, axis=0) / p - (np.sum(B2, axis=0) / p) ** 2))


def varimax_sweeps(L, tol=1e-8, max_sweeps=1000):
    B = np.array(L, dtype=float, copy=True)
    p, k = B.shape
    R = np.eye(k)
    history = [varimax_criterion(B)]
    converged = False
    for _ in range(max_sweeps):
        for a in range(k - 1):
            for b in range(a + 1, k):
                x, y = B[:, a], B[:, b]
                u = x * x - y * y
                v = 2.0 * x * y
                su, sv = u.sum(), v.sum()
                num = 2.0 * (u @ v) - 2.0 * su * sv / p
                den = (u @ u - v @ v) - (su * su - sv * sv) / p
                phi = np.arctan2(num, den) / 4.0
                if phi != 0.0:
                    c, s = np.cos(phi), np.sin(phi)
                    rot = np.array([[c, -s], [s, c]])
                    B[:, [a, b]] = B[:, [a, b]] @ rot
                    R[:, [a, b]] = R[:, [a, b]] @ rot
        history.append(varimax_criterion(B))
        if history[-1] - history[-2] < tol:
            converged = True
            break
    return B, R, history, converged


def key_correct(raw, false_key, lo, hi, neutral):
    X = np.asarray(raw, dtype=np.int64)
    X = np.where((X < lo) | (X > hi), neutral, X)
    fk = np.asarray(false_key, dtype=bool)
    return np.where(fk, (lo + hi) - X, X).astype(float)


def agree_bias_rows(raw, false_key, lo, hi, neutral):
    fk = np.asarray(false_key, dtype=bool)
    if fk.all() or not fk.any():
        raise ValueError("agree bias needs both true-key and false-key items")
    S = key_correct(raw, fk, lo, hi, neutral)
    return S[:, ~fk].mean(axis=1) - S[:, fk].mean(axis=1)
