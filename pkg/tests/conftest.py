"""Shared test configuration.

Tests marked ``long`` run hours of simulation when the results cache under
results/acceptance/ is cold; they are skipped unless PRLAND_RUN_LONG=1.
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

RUN_LONG = os.environ.get("PRLAND_RUN_LONG") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_LONG:
        return
    skip = pytest.mark.skip(reason="long test; set PRLAND_RUN_LONG=1 to run")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)
