"""Shared fixtures and the acceptance-summary reporting hook."""

from __future__ import annotations

import numpy as np
import pytest

from weakloc import bpe as bpe_mod
from weakloc import minilang as ml
from weakloc.model import ModelConfig, Parameters


@pytest.fixture(scope="session")
def small_splits() -> ml.DatasetSplits:
    config = ml.DatasetConfig(
        train_size=160, valid_size=60, test_size=60,
        mix={"bound": 1.0, "biop": 1.0, "varmisuse": 1.0}, seed=11,
    )
    return ml.build_dataset(config)


@pytest.fixture(scope="session")
def small_vocab(small_splits) -> bpe_mod.BpeVocabulary:
    return bpe_mod.train_bpe([e.tokens for e in small_splits.train], merge_count=256)


@pytest.fixture()
def tiny_params(small_vocab) -> Parameters:
    config = ModelConfig(
        vocab_size=small_vocab.size, layer_count=1, head_count=2, model_dim=8,
        ff_dim=16, max_len=32, dropout_rate=0.0, precision="float64",
    )
    return Parameters.initialize(config, seed=3)


# ---------------------------------------------------------------------------
# Acceptance summary: one pass/fail line per criterion at the end of the run.
# ---------------------------------------------------------------------------

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance.py" in report.nodeid and "test_criterion" in report.nodeid:
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{mark}  {name}")
