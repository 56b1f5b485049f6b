import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shsgrid.data.scenarios import ScenarioLibrary  # noqa: E402
from shsgrid.grid import default_network, default_params, load_network  # noqa: E402
from shsgrid.grid.network import bundled  # noqa: E402

MESH4 = """
[network]
name = mesh4
base_kv = 1.0
base_mva = 1.0
slack = 1
slack_tie_x = 0.05

[buses]
 id  type     p_mw  q_mvar
  1  dynamic   0.0   0.0
  2  load      0.4   0.1
  3  load      0.3   0.1
  4  dynamic   0.0   0.0

[lines]
 id  from  to  r_ohm  x_ohm  in_service
  1     1   2  0.01   0.10   1
  2     2   4  0.01   0.20   1
  3     1   4  0.01   0.25   1
  4     2   3  0.01   0.05   1

[generators]
 id  bus
 G1    1

[pvbess]
bus = 4
"""


@pytest.fixture(scope="session")
def ieee33():
    return default_network()


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def scen(ieee33, params):
    return ScenarioLibrary(ieee33, params)


@pytest.fixture(scope="session")
def chain3():
    return load_network(bundled("chain3.net"))


@pytest.fixture(scope="session")
def mesh4():
    return load_network(MESH4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS and "test_acceptance" not in str(terminalreporter.config.args):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(RESULTS.get(n, f"criterion {n:2d}: FAIL  (not run or errored)"))
