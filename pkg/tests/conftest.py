import json

import numpy as np
import pytest

from sleepyco.config import BackboneConfig, ModelConfig, config_from_obj


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_cfg():
    """Smallest config that still exercises every module."""
    return ModelConfig(
        d_f=16,
        d_m=16,
        d_ff=16,
        n_heads=4,
        n_layers=1,
        d_z=8,
        proj_hidden=8,
        backbone=BackboneConfig(block_channels=[4, 4, 8, 8, 8]),
    )


TINY_RUN = {
    "data": {"n_subjects": 4, "epochs_per_subject": 24, "k": 2, "n_val": 1, "trim_wake": False},
    "model": {
        "L": 2, "d_f": 8, "d_m": 8, "d_ff": 8, "n_heads": 2, "n_layers": 1, "d_z": 4, "proj_hidden": 8,
        "backbone": {"block_channels": [4, 4, 8, 8, 8]},
    },
    "train": {
        "batch_crl": 8, "batch_mtcl": 4, "psi1": 1, "psi2": 1, "phi": 50, "eta": 1e-3,
        "max_iters_crl": 3, "max_iters_mtcl": 3, "micro_batch": 4,
        "val_samples_crl": 8, "val_samples_mtcl": 6,
    },
}


@pytest.fixture
def tiny_run_obj():
    """JSON-style config for a seconds-long two-stage run; deep-copied per test."""
    return json.loads(json.dumps(TINY_RUN))


@pytest.fixture
def tiny_run_cfg(tiny_run_obj):
    return config_from_obj(tiny_run_obj)


@pytest.fixture(scope="session")
def tiny_subjects():
    from sleepyco.signal_io import preprocess, synth_dataset

    items = synth_dataset(0, 4, 24)
    return [preprocess(it.recording, it.labels, trim=False) for it in items]


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
