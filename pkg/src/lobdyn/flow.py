"""Execution flow ``I = dv/dt`` estimated at "now".

Time is mapped to ``x = exp((t - t_now) / tau)`` in (0, 1], "now" being
``x = 1``.  The rate there is the Radon-Nikodym derivative of the
traded-volume measure with respect to the time measure, localized by the
reproducing kernel of a shifted Legendre basis::

    G[j, k] = integral p_j p_k dt      (time measure, closed form in x)
    M[j, k] = integral p_j p_k dv      (volume measure)
    I_now   = <psi M psi> / <psi G psi>,   psi = G^-1 p(1)

The generalized eigenproblem ``M psi = lambda G psi`` gives the states of
minimal and maximal rate.

The volume measure is streamed as its Legendre moments
``U_l = sum_i v_i p_l(x_i)``, ``l < 2n - 1``.  Moving "now" forward
multiplies every ``x_i`` by ``a = exp(-dt / tau)``, which acts on ``U`` as
a fixed-size dilation matrix, so each event costs O(n**2) whatever the
number of trades.  The monomial power sums ``u_m = sum v_i x_i**m`` carry
the same information but turning them into ``M`` is badly conditioned.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .basis import SingularGram, at_one, check_gram, dilation, linearization, log_gram, monomial_coefficients, vander
from .itch import NS_PER_SECOND

__all__ = [
    "FlowConfig",
    "FlowState",
    "FlowReading",
    "SingularGram",
    "i_now",
    "i_extremal",
    "i_sliding",
    "SlidingWindowRate",
]


@dataclass(frozen=True)
class FlowConfig:
    tau: float = 128.0
    n_basis: int = 7
    history_cap: float = 16.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 2 <= self.n_basis <= 12:
            raise ValueError("n_basis must be in [2, 12]")
        if not self.history_cap >= 4:
            raise ValueError("history_cap must be at least 4")


class FlowReading(NamedTuple):
    i_now: float
    lambda_min: float
    lambda_max: float
    c_max_sq: float


class FlowState:
    """Legendre moments of the trade measure in exponentially mapped time.

    Trades older than ``history_cap * tau`` are expired so the volume and
    time measures always cover the same window.
    """

    def __init__(self, config: FlowConfig | None = None, t_start_ns: int = 0):
        self.config = config or FlowConfig()
        self.t_start_ns = t_start_ns
        self.t_now_ns = t_start_ns
        self.size = 2 * self.config.n_basis - 1
        self.moments = np.zeros(self.size)
        self.total_volume = 0
        self._one = at_one(self.size)
        self._log: deque[tuple[int, float]] = deque()

    def copy(self) -> "FlowState":
        other = FlowState.__new__(FlowState)
        other.__dict__.update(self.__dict__)
        other.moments = self.moments.copy()
        other._log = deque(self._log)
        return other

    @property
    def history_seconds(self) -> float:
        return (self.t_now_ns - self.t_start_ns) / NS_PER_SECOND

    @property
    def n_retained(self) -> int:
        return len(self._log)

    @property
    def u(self) -> np.ndarray:
        """Power sums ``u_m = sum_i v_i x_i**m`` of the retained trades."""
        return monomial_coefficients(self.size) @ self.moments

    def advance(self, dt: float) -> None:
        """Move "now" forward by ``dt`` seconds."""
        if dt < 0:
            raise ValueError("time cannot move backwards")
        self._shift(dt, round(dt * NS_PER_SECOND))

    def advance_to(self, t_ns: int) -> None:
        if t_ns < self.t_now_ns:
            raise ValueError("time cannot move backwards")
        self._shift((t_ns - self.t_now_ns) / NS_PER_SECOND, t_ns - self.t_now_ns)

    def _shift(self, dt: float, dt_ns: int) -> None:
        if dt_ns == 0 and dt == 0:
            return
        self.t_now_ns += dt_ns
        if self._log:
            self.moments = dilation(math.exp(-dt / self.config.tau), self.size) @ self.moments
            self._expire()

    def _expire(self) -> None:
        log = self._log
        tau = self.config.tau
        horizon = self.t_now_ns - round(self.config.history_cap * tau * NS_PER_SECOND)
        if log[0][0] > horizon:
            return
        while log and log[0][0] <= horizon:
            t_i, v = log.popleft()
            x = math.exp((t_i - self.t_now_ns) / NS_PER_SECOND / tau)
            self.moments -= v * vander([x], self.size)[0]
        if not log:
            self.moments[:] = 0.0

    def add_trade(self, shares: float) -> None:
        """Record a trade at the current "now".  Fractional sizes are
        accepted so continuous flows can be discretized."""
        if shares <= 0:
            return
        self.moments += shares * self._one
        self.total_volume += shares
        self._log.append((self.t_now_ns, shares))

    def observe(self, t_ns: int, shares: float = 0) -> None:
        self.advance_to(t_ns)
        self.add_trade(shares)

    def time_span(self) -> float:
        """Length of the retained history, seconds."""
        cfg = self.config
        return min(self.history_seconds, cfg.history_cap * cfg.tau)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Time Gram ``G`` and volume matrix ``M`` in the Legendre basis."""
        cfg = self.config
        gram = cfg.tau * log_gram(cfg.n_basis, self.time_span() / cfg.tau)
        return gram, linearization(cfg.n_basis) @ self.moments


def _localized(state: FlowState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if state.t_now_ns <= state.t_start_ns:
        raise SingularGram("no history yet")
    gram, vol = state.matrices()
    check_gram(gram)
    k = at_one(state.config.n_basis)
    try:
        psi = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), k)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    return gram, vol, psi


def i_now(state: FlowState) -> float:
    """Execution rate at the current time, shares per second."""
    if not state.n_retained:
        return 0.0
    gram, vol, psi = _localized(state)
    return float(psi @ vol @ psi / (psi @ gram @ psi))


def i_extremal(state: FlowState) -> FlowReading:
    """``I_now`` together with the extreme rates of the generalized
    eigenproblem and the weight of the "now" state on the max-rate state.

    With no retained volume every rate is exactly zero whatever the Gram
    conditioning; the max-rate state is then undefined and ``c_max_sq`` is nan.
    """
    if not state.n_retained:
        return FlowReading(0.0, 0.0, 0.0, math.nan)
    gram, vol, psi = _localized(state)
    norm = psi @ gram @ psi
    i0 = float(psi @ vol @ psi / norm)
    try:
        lam, vecs = scipy.linalg.eigh(vol, gram)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    psi0 = psi / math.sqrt(norm)
    overlap = float(vecs[:, -1] @ gram @ psi0)
    return FlowReading(i0, float(lam[0]), float(lam[-1]), min(overlap * overlap, 1.0))


def i_sliding(times_ns, shares, window: float, t_now_ns: int) -> float:
    """Shares traded in ``(t_now - window, t_now]`` divided by ``window``."""
    if window <= 0:
        raise ValueError("window must be positive")
    times_ns = np.asarray(times_ns, dtype=np.int64)
    shares = np.asarray(shares, dtype=float)
    lo = np.searchsorted(times_ns, t_now_ns - round(window * NS_PER_SECOND), side="right")
    hi = np.searchsorted(times_ns, t_now_ns, side="right")
    return float(shares[lo:hi].sum()) / window


class SlidingWindowRate:
    """Streaming form of :func:`i_sliding`."""

    def __init__(self, window: float):
        if window <= 0:
            raise ValueError("window must be positive")
        self.window = window
        self._window_ns = round(window * NS_PER_SECOND)
        self._trades: deque[tuple[int, int]] = deque()
        self._volume = 0

    def add(self, t_ns: int, shares: int) -> None:
        self._trades.append((t_ns, shares))
        self._volume += shares

    def rate(self, t_now_ns: int) -> float:
        cutoff = t_now_ns - self._window_ns
        trades = self._trades
        while trades and trades[0][0] <= cutoff:
            self._volume -= trades.popleft()[1]
        return self._volume / self.window
