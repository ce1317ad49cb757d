"""
Smoothing the edge of the book
==============================

The volume at the best price is a noisy quantity: one order arriving or
leaving changes it completely.  Here we build a few books by hand and
compare the raw best volume with the quadrature weight at the best
price, and the raw best-level age with the localized age.

Run:  python demos/book_edge.py
"""

import numpy as np

from lobdyn.book import OrderBook
from lobdyn.edge import christoffel_volume, measure_from_book, radau_rule, rn_tau_at_edge
from lobdyn.itch import Kind, MarketEvent

NS = 10**9
T0 = 34_200 * NS


def book_from(levels, now):
    """``levels`` is a list of (cents behind best, shares, age in s)."""
    book = OrderBook("DEMO")
    ref = 1
    for ticks, shares, age in sorted(levels, key=lambda lv: -lv[2]):
        ev = MarketEvent(Kind.ADD_ORDER, now - round(age * NS), ref, "B", shares, "DEMO",
                         1_000_000 - 100 * ticks, type_code="A")
        book.apply_event(ev)
        ref += 1
    return book


def describe(name, levels):
    now = T0 + 3600 * NS
    book = book_from(levels, now)
    m = measure_from_book(book, "B", now, cutoff=1.0)
    vol = christoffel_volume(radau_rule(m, 10))
    tau = rn_tau_at_edge(m, 4)
    print(f"{name:<28} raw volume {m.w[0]:7.0f}  smoothed {vol:8.1f}   raw age {m.a[0]:6.1f} s  edge age {tau:6.1f} s")


# %%
# A flat book: 20 levels of 100 shares, all 60 s old.  The smoothed
# volume sits close to the raw one.
flat = [(k, 100, 60.0) for k in range(20)]
describe("flat", flat)

# %%
# The same book with one fresh 1000-share order at the best price.  The
# raw volume jumps tenfold.  The quadrature weight cannot fall below the
# point mass at the best price, so it follows the jump.
spike = [(0, 1000, 60.0)] + flat[1:]
describe("spike at best", spike)

# %%
# A thin best level in front of a deep book: the raw volume says the
# edge is nearly empty, the smoothed value reflects the depth behind it.
thin = [(0, 5, 2.0)] + [(k, 400, 300.0) for k in range(1, 20)]
describe("thin best, deep book", thin)

# %%
# Fewer than ten levels: the rule is the book itself and nothing is
# smoothed.
describe("three levels", [(0, 300, 10.0), (1, 50, 20.0), (5, 700, 30.0)])

# %%
# A random book, to show the ages: the localized age is a weighted
# average of level ages, weighted toward the best price.
rng = np.random.default_rng(3)
levels = [(int(k), int(rng.integers(50, 800)), float(rng.uniform(1, 900)))
          for k in np.sort(rng.choice(np.arange(1, 100), 30, replace=False))]
describe("random 31 levels", [(0, 200, 15.0)] + levels)
