import dataclasses
import time

import numpy as np
import pytest

from custseg import pipeline
from custseg.config import PipelineConfig
from custseg.ingest import SynthConfig, generate_synthetic

TX_CSV = """Trans_ID,Account_ID,Type,Amount,Balance,Timestamp
T1,A1,Credit,100.0,100.0,30
T2,A1,Debit,40.0,60.0,10
T3,A2,Credit,500.0,500.0,20
T4,A1,Credit,5.5,65.5,10
T5,A2,Debit,50.0,450.0,40
"""

CU_CSV = """Customer_ID,Account_ID,Gender,Age,Latitude,Longitude
C1,A1,1,34,40.7,-74.0
C2,A2,0,58,34.05,-118.2
C3,A3,1,22,41.8,-87.6
"""


@pytest.fixture
def tx_csv():
    return TX_CSV


@pytest.fixture
def cu_csv():
    return CU_CSV


@pytest.fixture(scope="session")
def small_synth():
    """30 customers, three planted segments."""
    return generate_synthetic(SynthConfig(n_customers=30, seed=3, max_transactions=12))


@pytest.fixture(scope="session")
def shipped_run(tmp_path_factory):
    """Full pipeline on the shipped configuration: (config, manifest, output dir, seconds)."""
    root = tmp_path_factory.mktemp("shipped")
    cfg = dataclasses.replace(PipelineConfig(), out=str(root / "a"))
    t0 = time.perf_counter()
    manifest = pipeline.run_pipeline(cfg)
    return cfg, manifest, root / "a", time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
