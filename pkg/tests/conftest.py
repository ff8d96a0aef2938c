import os
import sys

import numpy as np
import pytest

from thinspec import model

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="session")
def catalog():
    return {name: model.catalog(name) for name in model.CATALOG_NAMES}


def mutant(name="shear"):
    """Catalog problem with the parity-breaking A12 = xi^2."""
    src = model.catalog(name).sources()
    src["A12"] = src["A21"] = "xi^2"
    return model.from_strings(src, model.catalog(name).params, "mutant")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
