import json
import time

import pytest

from hytl.pipeline import load_config, run_pipeline


class Run:
    def __init__(self, out, seconds):
        self.out = out
        self.seconds = seconds

    def json(self, name):
        return json.loads((self.out / name).read_text())


@pytest.fixture(scope="session")
def building(tmp_path_factory):
    """One full smart-building pipeline run shared by the slow tests."""
    out = tmp_path_factory.mktemp("building")
    t0 = time.perf_counter()
    run_pipeline(load_config("smart_building"), out, seed=0)
    return Run(out, time.perf_counter() - t0)
