"""Run configuration and the output row schema shared by both replay paths."""

from __future__ import annotations

from dataclasses import dataclass

from .flow import FlowConfig

SCHEMA_VERSION = 1
COLUMNS = (
    "t_hours",
    "t_ns",
    "p_last",
    "p_buy",
    "p_sell",
    "p_buy_minus_last",
    "p_sell_minus_last",
    "v_best_buy",
    "v_best_sell",
    "eta_disbalance",
    "t_book_buy_s",
    "t_book_sell_s",
    "i_sliding",
    "i_now",
    "lambda_min",
    "lambda_max",
    "c_max_sq",
    "v_christoffel_buy",
    "v_christoffel_sell",
    "tau_edge_buy",
    "tau_edge_sell",
)


@dataclass
class RunConfig:
    symbol: str = ""
    tau: float = 128.0
    n_basis: int = 7
    cutoff: float = 1.0
    radau_nodes: int = 10
    edge_basis: int = 4
    window: float = 64.0
    t_from: float | None = None
    t_to: float | None = None
    edge_every_n: int = 1

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.radau_nodes < 2:
            raise ValueError("radau_nodes must be at least 2")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.edge_every_n < 1:
            raise ValueError("edge_every_n must be at least 1")
        FlowConfig(self.tau, self.n_basis)
