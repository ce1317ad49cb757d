"""Smoothed best-level estimates from the volume-by-price distribution.

The book side near the edge is treated as a discrete measure on the
offset ``y = |p - p_best|`` (dollars), cut at ``cutoff``.  Two estimates
are taken at ``y = 0``:

* volume: the weight at the fixed node of a Gauss-Radau rule for that
  measure, which is the Christoffel function value there;
* time in book: the Radon-Nikodym derivative of the age-weighted
  measure with respect to the volume measure, localized at ``y = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg

from .basis import SingularGram, at_zero, check_gram, vander
from .book import BUY, Order, OrderBook
from .itch import NS_PER_SECOND, PRICE_SCALE

__all__ = [
    "PriceMeasure",
    "RadauRule",
    "EmptySide",
    "NonFiniteMoments",
    "SingularGram",
    "build_measure",
    "measure_from_book",
    "lanczos",
    "radau_rule",
    "christoffel_volume",
    "rn_tau_at_edge",
]


class EmptySide(ValueError):
    pass


class NonFiniteMoments(ArithmeticError):
    pass


@dataclass(frozen=True)
class PriceMeasure:
    """Per-level offsets ``y`` (dollars from best, ascending), volumes
    ``w`` (shares) and size-weighted ages ``a`` (seconds)."""

    side: str
    y: np.ndarray
    w: np.ndarray
    a: np.ndarray
    cutoff: float = 1.0

    @property
    def size(self) -> int:
        return len(self.y)

    def moments(self, degree: int) -> np.ndarray:
        return np.array([np.sum(self.w * self.y**m) for m in range(degree + 1)])


@dataclass(frozen=True)
class RadauRule:
    nodes: np.ndarray
    weights: np.ndarray
    n_nodes: int

    @property
    def n_effective(self) -> int:
        return len(self.nodes)


def build_measure(
    orders: Iterable[Order], p_best: int, now_ns: int, cutoff: float = 1.0
) -> PriceMeasure:
    """Aggregate one side's orders by price level within ``cutoff`` dollars
    of ``p_best`` (raw 1/10000 units)."""
    volume: dict[int, int] = {}
    weighted_age: dict[int, int] = {}
    side = None
    limit = round(cutoff * PRICE_SCALE)
    for o in orders:
        side = o.side
        off = abs(o.price - p_best)
        if off > limit:
            continue
        volume[off] = volume.get(off, 0) + o.shares
        weighted_age[off] = weighted_age.get(off, 0) + o.shares * (now_ns - o.origination_ns)
    if not volume:
        raise EmptySide("no orders within the cutoff")
    offs = sorted(volume)
    w = np.array([volume[k] for k in offs], dtype=float)
    a = np.array([weighted_age[k] / volume[k] for k in offs]) / NS_PER_SECOND
    y = np.array(offs, dtype=float) / PRICE_SCALE
    return PriceMeasure(side or BUY, y, w, a, cutoff)


def measure_from_book(book: OrderBook, side: str, now_ns: int, cutoff: float = 1.0) -> PriceMeasure:
    """Same as :func:`build_measure` but read from the level sums."""
    book_side = book.side(side)
    best = book_side.best
    if best is None:
        raise EmptySide(f"side {side} is empty")
    limit = round(cutoff * PRICE_SCALE)
    levels = [book_side.levels[p] for p in book_side.prices_within(limit)]
    y = np.array([abs(lv.price - best.price) for lv in levels], dtype=float) / PRICE_SCALE
    w = np.array([lv.volume for lv in levels], dtype=float)
    a = np.array([now_ns - lv.age_sum / lv.volume for lv in levels]) / NS_PER_SECOND
    return PriceMeasure(side, y, w, a, cutoff)


def lanczos(y: np.ndarray, w: np.ndarray, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Recurrence coefficients of the polynomials orthonormal under
    ``sum_i w_i f(y_i)``: diagonal ``alpha[0..steps-1]`` and off-diagonal
    ``b[0..steps-1]`` (``b[k]`` couples degree k and k+1).

    Lanczos on ``diag(y)`` started from ``sqrt(w)``, with full
    reorthogonalization; needs more than ``steps`` support points.
    """
    s = len(y)
    if s <= steps:
        raise ValueError(f"{steps} Lanczos steps need more than {steps} support points, got {s}")
    q = np.zeros((s, steps + 1))
    q[:, 0] = np.sqrt(w / w.sum())
    alpha = np.zeros(steps)
    b = np.zeros(steps)
    for k in range(steps):
        z = y * q[:, k]
        alpha[k] = q[:, k] @ z
        z -= alpha[k] * q[:, k]
        if k:
            z -= b[k - 1] * q[:, k - 1]
        basis = q[:, : k + 1]
        for _ in range(2):
            z -= basis @ (basis.T @ z)
        b[k] = np.linalg.norm(z)
        if not b[k] > 0:
            raise NonFiniteMoments("Lanczos breakdown: measure has too few support points")
        q[:, k + 1] = z / b[k]
    return alpha, b


def radau_rule(measure: PriceMeasure, n_nodes: int = 10) -> RadauRule:
    """Gauss-Radau rule for ``measure`` with a node fixed at ``y = 0``.

    A measure with at most ``n_nodes`` support points is its own rule.
    """
    y = np.asarray(measure.y, dtype=float)
    w = np.asarray(measure.w, dtype=float)
    if len(y) == 0:
        raise EmptySide("empty measure")
    if len(y) <= n_nodes:
        return RadauRule(y.copy(), w.copy(), n_nodes)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise NonFiniteMoments("non-finite measure")
    total = w.sum()
    n = n_nodes - 1
    alpha, b = lanczos(y, w, n)
    # ratio pi_{k+1}(0) / pi_k(0) of the monic polynomials, then pick the
    # last diagonal entry so that pi_{n+1}(0) = 0
    r = -alpha[0]
    for k in range(1, n):
        r = -alpha[k] - b[k - 1] ** 2 / r
    diag = np.append(alpha, -(b[n - 1] ** 2) / r)
    nodes, vecs = scipy.linalg.eigh_tridiagonal(diag, b)
    weights = total * vecs[0] ** 2
    if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
        raise NonFiniteMoments("non-finite quadrature")
    # the fixed node comes out at rounding level; pin it exactly
    nodes[np.argmin(np.abs(nodes))] = 0.0
    return RadauRule(nodes, weights, n_nodes)


def christoffel_volume(rule: RadauRule) -> float:
    """Quadrature weight at the best price (``y = 0``)."""
    return float(rule.weights[np.argmin(np.abs(rule.nodes))])


def rn_tau_at_edge(measure: PriceMeasure, n_basis: int = 4) -> float:
    """Time in book at the best price, seconds, as the ratio of the age
    measure to the volume measure localized at ``y = 0``."""
    n = min(n_basis, measure.size)
    if n == 0:
        raise EmptySide("empty measure")
    phi = vander(np.asarray(measure.y) / measure.cutoff, n)
    w = np.asarray(measure.w, dtype=float)
    gram = phi.T @ (w[:, None] * phi)
    check_gram(gram)
    try:
        psi = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), at_zero(n))
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    z2 = w * (phi @ psi) ** 2
    a = np.asarray(measure.a, dtype=float)
    # a convex combination of the ages; clip the last-ulp rounding
    return float(np.clip(np.dot(z2, a) / z2.sum(), a.min(), a.max()))
