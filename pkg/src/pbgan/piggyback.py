"""Filter factorization against a frozen, growing filter bank.

A layer's filters for task n are the concatenation (on the output-channel
axis) of a small unconstrained block learned freely and a "piggyback"
block mixed from the bank by a learned weight matrix:

    F_n = [F_n_unconstrained, R_inv(R(bank_prefix) @ W_n)]

where R flattens each filter into a column.  Bank blocks are appended
once per finished task and never change afterwards; each task records the
bank width it trained against (``trained_bank_width``) so its composition
is reproducible bitwise no matter how much the bank grows later.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad


class PiggybackError(ValueError):
    pass


# ---------------------------------------------------------------------------
# reshape operator

def reshape_R(f):
    """Flatten (kw,kh,cin,cout) filters to a (kw*kh*cin, cout) matrix.

    Column j is filter j flattened row-major; exact inverse is
    :func:`reshape_R_inv`.
    """
    kw, kh, cin, cout = f.shape
    return np.ascontiguousarray(f.reshape(kw * kh * cin, cout))


def reshape_R_inv(m, kw, kh, cin):
    rows, cout = m.shape
    if rows != kw * kh * cin:
        raise PiggybackError(f"reshape_R_inv: {rows} rows != {kw}*{kh}*{cin}")
    return np.ascontiguousarray(m.reshape(kw, kh, cin, cout))


# ---------------------------------------------------------------------------
# channel partition

@dataclass(frozen=True)
class Partition:
    lam: Fraction
    n_u: int
    n_p: int


def partition_channels(c_out, lam):
    """Split c_out channels into unconstrained/piggyback counts.

    n_u = round(lam * c_out) with ties rounded up, then clamped so both
    partitions stay nonempty when 0 < lam < 1.
    """
    lam = Fraction(lam)
    if lam < 0 or lam > 1:
        raise PiggybackError(f"lambda must be in [0,1], got {lam}")
    if c_out < 1:
        raise PiggybackError(f"c_out must be >= 1, got {c_out}")
    if lam == 0:
        n_u = 0
    elif lam == 1:
        n_u = c_out
    else:
        scaled = lam * c_out
        n_u = int(scaled) + (1 if (scaled - int(scaled)) * 2 >= 1 else 0)
        n_u = min(max(n_u, 1), c_out - 1)
    return Partition(lam=lam, n_u=n_u, n_p=c_out - n_u)


# ---------------------------------------------------------------------------
# filter bank

class FilterBank:
    """Immutable per-layer stack of frozen unconstrained filter blocks."""

    __slots__ = ("layer_index", "blocks", "task_indices")

    def __init__(self, layer_index, blocks=(), task_indices=()):
        self.layer_index = layer_index
        blocks = tuple(np.asarray(b, dtype=np.float64) for b in blocks)
        for b in blocks:
            b.flags.writeable = False
        if blocks:
            head = blocks[0].shape[:3]
            for b in blocks[1:]:
                if b.shape[:3] != head:
                    raise PiggybackError("bank blocks disagree on (kw,kh,c_in)")
        self.blocks = blocks
        self.task_indices = tuple(task_indices)
        if len(self.task_indices) != len(blocks):
            raise PiggybackError("one task index per block required")

    @property
    def width(self):
        return sum(b.shape[3] for b in self.blocks)

    def stacked(self, width=None):
        """The bank's first `width` output channels as one filter tensor."""
        if not self.blocks:
            raise PiggybackError("empty bank")
        full = np.concatenate(self.blocks, axis=3)
        if width is None:
            width = full.shape[3]
        if width > full.shape[3]:
            raise PiggybackError(f"bank width {full.shape[3]} < requested {width}")
        return np.ascontiguousarray(full[:, :, :, :width])


def expand_bank(bank, new_unconstrained, task_index):
    """Append a finished task's unconstrained block; prior blocks untouched."""
    block = np.asarray(new_unconstrained, dtype=np.float64)
    if bank.blocks and block.shape[:3] != bank.blocks[0].shape[:3]:
        raise PiggybackError(
            f"block shape {block.shape[:3]} does not match bank {bank.blocks[0].shape[:3]}"
        )
    if task_index in bank.task_indices:
        raise PiggybackError(f"task {task_index} already contributed to this bank")
    return FilterBank(
        bank.layer_index,
        bank.blocks + (block,),
        bank.task_indices + (task_index,),
    )


# ---------------------------------------------------------------------------
# per-task layer parameters

@dataclass
class TaskLayerParams:
    """Trainables of one shared layer for one task.

    For task 1, W is None and the unconstrained block spans all output
    channels.  ``unconstrained`` may have zero output channels (lam = 0).
    """

    task_index: int
    unconstrained: np.ndarray
    W: np.ndarray | None
    bias: np.ndarray
    trained_bank_width: int


def compose_filters(bank, params):
    """Resolve a layer's full filter tensor from bank + task params (numpy)."""
    unc = np.asarray(params.unconstrained, dtype=np.float64)
    if params.W is None:
        return np.ascontiguousarray(unc)
    if bank.width < params.trained_bank_width:
        raise PiggybackError(
            f"bank width {bank.width} < trained width {params.trained_bank_width}"
        )
    prefix = bank.stacked(params.trained_bank_width)
    if unc.shape[3] > 0 and unc.shape[:3] != prefix.shape[:3]:
        raise PiggybackError("unconstrained block does not match bank geometry")
    kw, kh, cin = prefix.shape[:3]
    piggy = reshape_R_inv(reshape_R(prefix) @ params.W, kw, kh, cin)
    if unc.shape[3] == 0:
        return piggy
    return np.ascontiguousarray(np.concatenate([unc, piggy], axis=3))


def compose_filters_node(bank, unc, W, trained_bank_width):
    """Autodiff version of :func:`compose_filters`.

    ``unc`` and ``W`` are graph leaves; the bank enters as a constant, so
    no gradient can reach it.
    """
    if W is None:
        return unc
    prefix = bank.stacked(trained_bank_width)
    kw, kh, cin = prefix.shape[:3]
    bank_const = ad.Tensor(reshape_R(prefix))
    piggy2d = ad.matmul(bank_const, W)
    piggy = ad.reshape(piggy2d, (kw, kh, cin, W.data.shape[1]))
    if unc.data.shape[3] == 0:
        return piggy
    return ad.concat_last_axis([unc, piggy])


# ---------------------------------------------------------------------------
# trainable enumeration and closed-form accounting

def trainable_set(run, task_index):
    """Names and arrays of everything trainable for the current task.

    Bank blocks and earlier tasks' parameters never appear.  For
    sequential fine-tuning the single evolving model is the trainable set.
    """
    n = len(run.tasks)
    if task_index != n:
        raise PiggybackError(f"task {task_index} is not the current task ({n})")
    record = run.tasks[task_index - 1]
    if run.mode == "sequential_finetune":
        return sorted(run.sft_params.items())
    return sorted(record.params.items())


def param_count(spec, task_index, lam, mode):
    """Closed-form generator parameter counts.

    Returns ``{"trainable": int, "stored_cumulative": int}``.  Counts
    cover the generator only (the discriminator is full per task in every
    mode and cancels out of all comparisons).
    """
    if mode not in ("full", "piggyback", "pure_factorization"):
        raise PiggybackError(f"unknown mode {mode!r}")
    if task_index < 1:
        raise PiggybackError("task_index must be >= 1")
    lam = Fraction(0) if mode == "pure_factorization" else Fraction(lam)

    full_single = 0
    for lay in spec.gen_layers:
        full_single += lay.kw * lay.kh * lay.c_in * lay.c_out + lay.c_out
    if mode == "full":
        return {"trainable": full_single, "stored_cumulative": task_index * full_single}

    shared = [lay for lay in spec.gen_layers if not lay.task_specific]
    task_specific = [lay for lay in spec.gen_layers if lay.task_specific]
    ts_single = sum(l.kw * l.kh * l.c_in * l.c_out + l.c_out for l in task_specific)

    def width_at(lay, n):
        # bank width after n tasks for this layer
        w = lay.c_out
        if n >= 2:
            w += (n - 1) * partition_channels(lay.c_out, lam).n_u
        return w

    if task_index == 1:
        trainable = full_single
    else:
        trainable = ts_single
        for lay in shared:
            part = partition_channels(lay.c_out, lam)
            trainable += part.n_u * lay.kw * lay.kh * lay.c_in
            trainable += width_at(lay, task_index - 1) * part.n_p
            trainable += lay.c_out

    stored = task_index * ts_single
    for lay in shared:
        part = partition_channels(lay.c_out, lam)
        stored += width_at(lay, task_index) * lay.kw * lay.kh * lay.c_in  # bank
        stored += task_index * lay.c_out  # per-task biases
        for t in range(2, task_index + 1):
            stored += width_at(lay, t - 1) * part.n_p  # W_t
    return {"trainable": trainable, "stored_cumulative": stored}
