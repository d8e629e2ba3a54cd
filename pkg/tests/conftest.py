from fractions import Fraction

import pytest

from pbgan.data import synth_task
from pbgan.models import reference_spec
from pbgan.run import clone_run, new_run
from pbgan.trainer import TrainConfig, train_task


@pytest.fixture(scope="session")
def spec32():
    return reference_spec(32)


@pytest.fixture(scope="session")
def tiny_datasets():
    return {
        "invert": synth_task("invert", 101, 12),
        "edge_fill": synth_task("edge_fill", 102, 12),
        "checker_colorize": synth_task("checker_colorize", 103, 12),
        "blur_sharpen": synth_task("blur_sharpen", 104, 12),
    }


@pytest.fixture(scope="session")
def pb_runs(spec32, tiny_datasets):
    """Runs after tasks 1..3 of a small piggyback sequence (lam=1/4)."""
    run = new_run(spec32, Fraction(1, 4), 11)
    cfg = TrainConfig(mode="piggyback", epochs=1)
    states = []
    for kind in ("invert", "edge_fill", "blur_sharpen"):
        run, _ = train_task(run, tiny_datasets[kind], cfg)
        states.append(clone_run(run))
    return states
