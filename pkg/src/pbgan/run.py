"""Run state: everything a checkpoint persists about a continual run."""

import copy
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

MODES = ("piggyback", "full", "pure_factorization", "sequential_finetune")


@dataclass
class TrainLog:
    """Per-epoch losses and validation L1 for one task's training.

    ``wall_clock`` is informational only: it is excluded from equality
    and never serialized, so deterministic runs compare equal.
    """

    epochs: list = field(default_factory=list)  # [(g_loss, d_loss, val_l1)]
    seed: int = 0
    wall_clock: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, TrainLog):
            return NotImplemented
        return self.seed == other.seed and self.epochs == other.epochs

    @property
    def final_val_l1(self):
        return self.epochs[-1][2]


@dataclass
class TaskRecord:
    kind: str
    data_seed: int
    count: int
    epochs: int
    lr: float
    l1_weight: float
    batch_size: int
    train_seed: int
    trained_widths: list  # per shared layer, bank width at training time
    params: dict  # name -> ndarray; this task's own parameters
    log: TrainLog


@dataclass
class RunState:
    lam: Fraction
    seed: int
    spec: object  # ModelSpec
    mode: str | None = None
    banks: list = field(default_factory=list)  # per shared layer FilterBank
    tasks: list = field(default_factory=list)
    sft_params: dict | None = None  # single evolving model (sequential_finetune)

    @property
    def n_tasks(self):
        return len(self.tasks)


def new_run(spec, lam, seed):
    """Fresh run: empty banks, zero tasks."""
    from .piggyback import FilterBank

    lam = Fraction(lam)
    if lam < 0 or lam > 1:
        raise ValueError(f"lambda must be in [0,1], got {lam}")
    banks = [FilterBank(i) for i, _ in spec.shared_layers]
    return RunState(lam=lam, seed=int(seed), spec=spec, banks=banks)


def snapshot_params(run):
    """Deep copy of every stored array, for freeze verification."""
    snap = {}
    for t, rec in enumerate(run.tasks):
        for name, arr in rec.params.items():
            snap[f"task{t + 1}/{name}"] = np.array(arr)
    for i, bank in enumerate(run.banks):
        for j, block in enumerate(bank.blocks):
            snap[f"bank{i}/block{j}"] = np.array(block)
    return snap


def clone_run(run):
    return copy.deepcopy(run)


__all__ = ["MODES", "TrainLog", "TaskRecord", "RunState", "new_run",
           "snapshot_params", "clone_run", "replace"]
