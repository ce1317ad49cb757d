"""
A synthetic trading session end to end
======================================

Generate an hour of order flow around spiky trading, write it as an ITCH
4.1 capture, replay it with the compiled kernel and look at what the
attributes do around each spike.  The CSV written at the end is the
same one ``lobdyn dump --fast`` produces.

Run:  python demos/synthetic_session.py [out.csv]
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from lobdyn.book import cancellation_ratio
from lobdyn.cli import write_rows
from lobdyn.config import RunConfig
from lobdyn.fast import replay_file
from lobdyn.itch import write_itch
from lobdyn.synth import BookParams, gen_itch, random_spike_process

# %%
# Five spikes with random onsets, heights and relaxation times, on top of
# one trade per second.
rng = np.random.default_rng(11)
proc = random_spike_process(rng, 3300.0, 5, mean_size=100, size_dist="geometric")
params = BookParams(order_rate=60)
events = gen_itch(proc, params, 3600.0, seed=11)
for sp in proc.spikes:
    print(f"spike at {sp.onset:7.1f} s: +{sp.amplitude:4.1f} trades/s, relaxing over {sp.theta:6.1f} s")

# %%
# Round trip through the wire format, then replay.
capture = Path(tempfile.mkdtemp()) / "session.itch.gz"
n = write_itch(capture, events)
t = time.perf_counter()
result = replay_file(capture, RunConfig(symbol="SYNTH", edge_every_n=10))
spent = time.perf_counter() - t
print(f"{n} messages -> {result.rows} rows in {spent:.2f} s (first call includes compilation)")
s = result.stats
print(f"trades {s.trades}, volume {s.traded_volume}, cancellation ratio {cancellation_ratio(s):.3f}")

# %%
# Around each onset: the flow before, the peak within two tau and how
# long it took to get there.
cols = result.columns
t_s = (cols["t_ns"] - params.start_seconds * 10**9) / 1e9
i_now = cols["i_now"]
for sp in proc.spikes:
    before = (t_s >= sp.onset - 60) & (t_s < sp.onset)
    after = (t_s >= sp.onset) & (t_s <= sp.onset + 256)
    k = np.argmax(i_now[after])
    print(f"onset {sp.onset:7.1f} s: flow {np.mean(i_now[before]):7.1f} -> peak {i_now[after][k]:7.1f} "
          f"shares/s after {t_s[after][k] - sp.onset:5.1f} s")

# %%
# The smoothed edge volume and edge age on the rows where they were
# computed.
for side in ("buy", "sell"):
    v = cols[f"v_christoffel_{side}"]
    a = cols[f"tau_edge_{side}"]
    raw = cols[f"v_best_{side}"]
    ok = ~np.isnan(v)
    print(f"{side}: median raw best volume {np.median(raw[ok]):.0f}, smoothed {np.median(v[ok]):.0f}, "
          f"median edge age {np.nanmedian(a):.1f} s")

if len(sys.argv) > 1:
    with open(sys.argv[1], "w", newline="") as out:
        write_rows(cols, out)
    print(f"wrote {sys.argv[1]}")
