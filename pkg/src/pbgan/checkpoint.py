"""Single-file binary checkpoint format (magic "PBGK").

Little-endian, self-describing tensor records (rank + extents + raw f64
payload), canonical field order (parameter dicts sorted by name), so an
unmodified run re-serializes byte-identically.  Writes go to a temp file
in the same directory followed by an atomic rename; a crashed write can
never corrupt the previous checkpoint.
"""

import io
import os
import struct
from fractions import Fraction

import numpy as np

from .models import LayerSpec, ModelSpec
from .piggyback import FilterBank
from .run import RunState, TaskRecord, TrainLog

MAGIC = b"PBGK"
VERSION = 1
CHECKPOINT_NAME = "run.pbgk"

_MODES = [None, "piggyback", "full", "pure_factorization", "sequential_finetune"]
_KINDS = ["conv", "deconv"]
_ACTS = ["none", "relu", "leaky_relu", "tanh"]
_NORMS = ["none", "instance"]


class CheckpointError(IOError):
    """Corrupt or unreadable checkpoint; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt, *vals):
        self.buf.write(struct.pack("<" + fmt, *vals))

    def string(self, s):
        raw = s.encode("utf-8")
        self.pack("I", len(raw))
        self.buf.write(raw)

    def tensor(self, arr):
        # np.ascontiguousarray would promote rank 0 to (1,)
        arr = np.asarray(arr, dtype="<f8", order="C")
        self.pack("I", arr.ndim)
        for e in arr.shape:
            self.pack("I", e)
        self.buf.write(arr.tobytes())

    def getvalue(self):
        return self.buf.getvalue()


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.blob):
            raise CheckpointError("truncated checkpoint", self.pos)
        vals = struct.unpack_from("<" + fmt, self.blob, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def string(self):
        n = self.unpack("I")
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated string", self.pos)
        raw = self.blob[self.pos:self.pos + n]
        self.pos += n
        return raw.decode("utf-8")

    def tensor(self):
        rank = self.unpack("I")
        if rank > 4:
            raise CheckpointError(f"tensor rank {rank} > 4", self.pos)
        shape = tuple(self.unpack("I") for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        size = 8 * count
        if self.pos + size > len(self.blob):
            raise CheckpointError("truncated tensor payload", self.pos)
        arr = np.frombuffer(self.blob, dtype="<f8", count=count,
                            offset=self.pos).reshape(shape)
        self.pos += size
        return np.array(arr)


def _write_layer(w, lay):
    w.pack("B", _KINDS.index(lay.kind))
    w.pack("6I", lay.kw, lay.kh, lay.c_in, lay.c_out, lay.stride, lay.pad)
    w.pack("B", _ACTS.index(lay.activation))
    w.pack("B", _NORMS.index(lay.normalization))
    w.pack("B", 1 if lay.task_specific else 0)
    w.pack("i", -1 if lay.skip_from is None else lay.skip_from)


def _read_layer(r):
    kind = _KINDS[r.unpack("B")]
    kw, kh, c_in, c_out, stride, pad = r.unpack("6I")
    act = _ACTS[r.unpack("B")]
    norm = _NORMS[r.unpack("B")]
    ts = bool(r.unpack("B"))
    skip = r.unpack("i")
    return LayerSpec(kind, kw, kh, c_in, c_out, stride, pad, act, norm,
                     ts, None if skip < 0 else skip)


def _write_params(w, params):
    w.pack("I", len(params))
    for name in sorted(params):
        w.string(name)
        w.tensor(params[name])


def _read_params(r):
    return {r.string(): r.tensor() for _ in range(r.unpack("I"))}


def serialize_run(run):
    w = _Writer()
    w.buf.write(MAGIC)
    w.pack("I", VERSION)
    w.pack("II", run.lam.numerator, run.lam.denominator)
    w.pack("Q", run.seed)
    w.pack("B", _MODES.index(run.mode))

    spec = run.spec
    w.string(spec.name)
    w.pack("II", spec.image_size, spec.image_channels)
    w.pack("I", len(spec.gen_layers))
    for lay in spec.gen_layers:
        _write_layer(w, lay)
    w.pack("I", len(spec.disc_layers))
    for lay in spec.disc_layers:
        _write_layer(w, lay)

    w.pack("I", len(run.banks))
    for bank in run.banks:
        w.pack("II", bank.layer_index, len(bank.blocks))
        for task_index, block in zip(bank.task_indices, bank.blocks):
            w.pack("I", task_index)
            w.tensor(block)

    w.pack("I", len(run.tasks))
    for rec in run.tasks:
        w.string(rec.kind)
        w.pack("Q", rec.data_seed)
        w.pack("II", rec.count, rec.epochs)
        w.pack("dd", rec.lr, rec.l1_weight)
        w.pack("I", rec.batch_size)
        w.pack("Q", rec.train_seed)
        w.pack("I", len(rec.trained_widths))
        for width in rec.trained_widths:
            w.pack("I", width)
        _write_params(w, rec.params)
        w.pack("I", len(rec.log.epochs))
        for g, d, v in rec.log.epochs:
            w.pack("ddd", g, d, v)

    w.pack("B", 1 if run.sft_params is not None else 0)
    if run.sft_params is not None:
        _write_params(w, run.sft_params)
    return w.getvalue()


def deserialize_run(blob):
    r = _Reader(blob)
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    r.pos = 4
    version = r.unpack("I")
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}", 4)
    num, den = r.unpack("II")
    if den == 0:
        raise CheckpointError("lambda denominator is zero", 8)
    seed = r.unpack("Q")
    mode_idx = r.unpack("B")
    if mode_idx >= len(_MODES):
        raise CheckpointError(f"bad mode tag {mode_idx}", r.pos - 1)
    mode = _MODES[mode_idx]

    name = r.string()
    image_size, image_channels = r.unpack("II")
    gen = tuple(_read_layer(r) for _ in range(r.unpack("I")))
    disc = tuple(_read_layer(r) for _ in range(r.unpack("I")))
    spec = ModelSpec(name=name, image_size=image_size,
                     image_channels=image_channels, gen_layers=gen,
                     disc_layers=disc)

    banks = []
    for _ in range(r.unpack("I")):
        layer_index, n_blocks = r.unpack("II")
        tasks_idx, blocks = [], []
        for _ in range(n_blocks):
            tasks_idx.append(r.unpack("I"))
            blocks.append(r.tensor())
        banks.append(FilterBank(layer_index, blocks, tasks_idx))

    tasks = []
    for _ in range(r.unpack("I")):
        kind = r.string()
        data_seed = r.unpack("Q")
        count, epochs = r.unpack("II")
        lr, l1_weight = r.unpack("dd")
        batch_size = r.unpack("I")
        train_seed = r.unpack("Q")
        widths = [r.unpack("I") for _ in range(r.unpack("I"))]
        params = _read_params(r)
        log = TrainLog(seed=train_seed)
        for _ in range(r.unpack("I")):
            log.epochs.append(tuple(r.unpack("ddd")))
        tasks.append(TaskRecord(
            kind=kind, data_seed=data_seed, count=count, epochs=epochs,
            lr=lr, l1_weight=l1_weight, batch_size=batch_size,
            train_seed=train_seed, trained_widths=widths, params=params,
            log=log))

    sft_params = _read_params(r) if r.unpack("B") else None
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes", r.pos)
    return RunState(lam=Fraction(num, den), seed=seed, spec=spec, mode=mode,
                    banks=banks, tasks=tasks, sft_params=sft_params)


# ---------------------------------------------------------------------------
# file handling

def checkpoint_path(run_dir):
    return os.path.join(run_dir, CHECKPOINT_NAME)


def save_run(run, run_dir):
    """Atomic write: temp file in the same directory, then rename."""
    os.makedirs(run_dir, exist_ok=True)
    blob = serialize_run(run)
    path = checkpoint_path(run_dir)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_run(run_dir_or_file):
    path = run_dir_or_file
    if os.path.isdir(path):
        path = checkpoint_path(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return deserialize_run(blob)


class RunLock:
    """One writer per run directory, enforced via an O_EXCL lock file."""

    def __init__(self, run_dir):
        self.path = os.path.join(run_dir, "LOCK")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CheckpointError(
                f"run directory is locked by another writer ({self.path})") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False
