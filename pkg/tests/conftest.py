import pytest

from lobdyn.itch import write_itch
from lobdyn.synth import BookParams, Spike, SpikeProcess, gen_itch


@pytest.fixture(scope="session")
def small_stream():
    proc = SpikeProcess(2.0, (Spike(60.0, 20.0, 20.0),), mean_size=100, size_dist="geometric")
    return gen_itch(proc, BookParams(order_rate=40), 240.0, seed=11)


@pytest.fixture(scope="session")
def synthetic_itch(tmp_path_factory, small_stream):
    path = tmp_path_factory.mktemp("itch") / "synth.itch.gz"
    write_itch(path, small_stream)
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
