"""Order-book reconstruction from ITCH 4.1 captures and unnormalized
book attributes: edge prices, best-level volume and age, and the
execution flow ``I = dv/dt``."""

from .attributes import AttributeSample, disbalance, edge_prices, midprice, sample, time_in_book
from .book import BookUpdate, MatchKind, Order, OrderBook, SessionStats, Trade, best_levels, cancellation_ratio, run_session
from .edge import PriceMeasure, RadauRule, build_measure, christoffel_volume, measure_from_book, radau_rule, rn_tau_at_edge
from .flow import FlowConfig, FlowReading, FlowState, SingularGram, i_extremal, i_now, i_sliding
from .itch import Kind, MarketEvent, decode_message, read_frame, stream_events
from .synth import BookParams, Spike, SpikeProcess, gen_itch, gen_trades

__version__ = "0.1.0"
