"""Shared fixtures: small corpora, a cheaply trained bundle, and the
acceptance-criterion summary printed at the end of a run."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import pytest
import torch

from tmca.config import ModelConfig
from tmca.synthetic import SynthSpec, generate_synthetic
from tmca.training import train

_CRITERIA_FILE = Path(__file__).parent / ".criterion_lines"


def record_criterion(line: str) -> None:
    """Collect one pass/fail line per acceptance criterion; the terminal
    summary hook prints them after the test tally."""
    with open(_CRITERIA_FILE, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA_FILE.exists():
        return
    lines = _CRITERIA_FILE.read_text(encoding="utf-8").splitlines()
    _CRITERIA_FILE.unlink()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)


def small_config(**kw) -> ModelConfig:
    base = dict(image_size=64, epochs=2, batch_size=16, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic(SynthSpec(seed=3, n_samples=24), "train")


@pytest.fixture(scope="session")
def tiny_val():
    return generate_synthetic(SynthSpec(seed=3, n_samples=8), "val")


@pytest.fixture(scope="session")
def tiny_result(tiny_corpus, tiny_val, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    return train(small_config(), tiny_corpus, tiny_val, out_dir=out)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_result):
    return tiny_result.bundle


@pytest.fixture(autouse=True)
def _reseed():
    # Keep torch's global RNG stable regardless of test execution order.
    torch.manual_seed(12345)
    yield


def make_blind_config(**kw) -> ModelConfig:
    cfg = small_config(**kw)
    return dataclasses.replace(cfg, ablation=cfg.ablation.with_tokens_off(["text"]))
