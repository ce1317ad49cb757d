"""Shifted Legendre polynomials orthonormal on [0, 1].

Everything here is built from Gauss-Legendre quadrature on [0, 1], which
is exact for the polynomial degrees involved and keeps every table
bounded.  Monomial coefficient tables are avoided on purpose: their
entries grow like 10**(0.75 n) and the cancellation wipes out double
precision well before n = 12.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

__all__ = [
    "SingularGram",
    "gauss01",
    "vander",
    "at_one",
    "at_zero",
    "linearization",
    "dilation",
    "legendre_at",
    "monomial_coefficients",
    "log_gram",
    "check_gram",
]

# Smallest eigenvalue / largest eigenvalue accepted for a Gram matrix.
GRAM_RCOND = 1e-10


class SingularGram(ArithmeticError):
    """The Gram matrix cannot resolve the basis (too little history or
    too few distinct support points)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def gauss01(k: int) -> tuple[np.ndarray, np.ndarray]:
    """k-point Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = legendre.leggauss(k)
    return _frozen(0.5 * (x + 1.0)), _frozen(0.5 * w)


@lru_cache(maxsize=None)
def _recurrence(n: int) -> tuple[tuple[float, float], ...]:
    return tuple(((2 * k + 1) / (k + 1), k / (k + 1)) for k in range(n))


def vander(x, n: int) -> np.ndarray:
    """Rows ``[p_0(x_i), ..., p_{n-1}(x_i)]`` evaluated by the three-term
    recurrence."""
    t = 2.0 * np.asarray(x, dtype=float) - 1.0
    cols = [np.ones_like(t), t]
    for a, b in _recurrence(n)[1 : n - 1]:
        cols.append(a * t * cols[-1] - b * cols[-2])
    return np.stack(cols[:n], axis=-1) * at_one(n)


@lru_cache(maxsize=None)
def at_one(n: int) -> np.ndarray:
    return _frozen(np.sqrt(2.0 * np.arange(n) + 1.0))


@lru_cache(maxsize=None)
def at_zero(n: int) -> np.ndarray:
    return _frozen(at_one(n) * (-1.0) ** np.arange(n))


@lru_cache(maxsize=None)
def linearization(n: int) -> np.ndarray:
    """``L[j, k, l] = integral_0^1 p_j p_k p_l dx`` for ``j, k < n`` and
    ``l < 2n - 1``, so that ``p_j p_k = sum_l L[j, k, l] p_l``."""
    x, w = gauss01(2 * n)
    p = vander(x, 2 * n - 1)
    table = np.einsum("q,qj,qk,ql->jkl", w, p[:, :n], p[:, :n], p)
    table[np.abs(table) < 1e-13] = 0.0
    return _frozen(table)


@lru_cache(maxsize=None)
def _dilation_nodes(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss01(m)
    return x, _frozen(vander(x, m) * w[:, None])


def _dilation_direct(a: float, m: int) -> np.ndarray:
    x, pw = _dilation_nodes(m)
    return vander(a * x, m).T @ pw


@lru_cache(maxsize=None)
def _dilation_series(m: int) -> np.ndarray:
    # each entry of S(a) is a polynomial of degree < m in a; store its
    # Legendre coefficients so S(a) = sum_j p_j(a) series[j]
    a, w = gauss01(m)
    samples = np.stack([_dilation_direct(ai, m) for ai in a])
    series = np.einsum("q,qj,qlk->jlk", w, vander(a, m), samples)
    return _frozen(series.reshape(m, m * m))


def legendre_at(a: float, m: int) -> list[float]:
    """``[p_0(a), ..., p_{m-1}(a)]`` for a scalar, without numpy overhead."""
    t = 2.0 * a - 1.0
    vals = [1.0, t]
    for c1, c0 in _recurrence(m)[1 : m - 1]:
        vals.append(c1 * t * vals[-1] - c0 * vals[-2])
    scale = at_one(m)
    return [v * scale[k] for k, v in enumerate(vals[:m])]


def dilation(a: float, m: int) -> np.ndarray:
    """``S[l, k]`` with ``p_l(a x) = sum_k S[l, k] p_k(x)`` for ``l, k < m``
    and ``0 <= a <= 1``."""
    return np.dot(legendre_at(a, m), _dilation_series(m)).reshape(m, m)


@lru_cache(maxsize=None)
def monomial_coefficients(m: int) -> np.ndarray:
    """``C[i, l] = integral_0^1 x**i p_l dx``: coefficients of ``x**i`` in the
    basis.  All entries lie in [-1, 1]."""
    x, w = gauss01(m)
    return _frozen((x[:, None] ** np.arange(m) * w[:, None]).T @ vander(x, m))


def log_gram(n: int, depth: float) -> np.ndarray:
    """``integral_{x_min}^1 p_j(x) p_k(x) dx / x`` with ``x_min = exp(-depth)``.

    The ``1/x`` singularity is split off analytically:
    ``p_j p_k / x = p_j(0) p_k(0) / x + (polynomial of degree 2n-3)``.
    """
    x_min = np.exp(-depth)
    x, w = gauss01(n)
    x = x_min + (1.0 - x_min) * x
    w = (1.0 - x_min) * w
    p = vander(x, n)
    p0 = at_zero(n)
    corner = np.outer(p0, p0)
    smooth = np.einsum("q,qjk->jk", w / x, p[:, :, None] * p[:, None, :] - corner)
    return smooth + corner * depth


def check_gram(gram: np.ndarray, rcond: float = GRAM_RCOND) -> None:
    w = np.linalg.eigvalsh(gram)
    if not np.all(np.isfinite(w)) or w[-1] <= 0 or w[0] <= rcond * w[-1]:
        raise SingularGram(
            f"Gram matrix is numerically singular (eigenvalues {w[0]:.3g} .. {w[-1]:.3g})"
        )
