"""Sequential-task adversarial training with strict freeze semantics.

Four modes:

* ``piggyback`` -- the factorization mechanism: train unconstrained
  blocks + piggyback weight matrices against the frozen bank, then append
  the unconstrained blocks to the bank.
* ``full`` -- an independent standalone model per task.
* ``pure_factorization`` -- piggyback with the unconstrained proportion
  forced to 0 from task 2 on; the bank never grows past task 1.
* ``sequential_finetune`` -- one model fine-tuned across tasks with no
  protection (the catastrophic-forgetting control).

Objective: least-squares adversarial loss plus a strong L1 term, one
discriminator step per generator step, Adam with betas (0.5, 0.999).
Everything is a pure function of (run, dataset, config): repeated runs
are bitwise identical.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from . import models
from .piggyback import partition_channels
from .rng import rng_stream
from .run import MODES, RunState, TaskRecord, TrainLog


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str
    epochs: int
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    l1_weight: float = 100.0
    batch_size: int = 4
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainingError(f"unknown mode {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be positive")


def gan_losses(d_real, d_fake, fake, target, l1_weight):
    """Least-squares GAN losses plus weighted L1 reconstruction.

    d_loss = 0.5*mean((d_real-1)^2) + 0.5*mean(d_fake^2)
    g_loss = 0.5*mean((d_fake-1)^2) + l1_weight*mean|fake-target|
    """
    d_loss = ad.add(
        ad.scale(ad.mean(ad.square(ad.sub(d_real, 1.0))), 0.5),
        ad.scale(ad.mean(ad.square(d_fake)), 0.5),
    )
    g_loss = ad.add(
        ad.scale(ad.mean(ad.square(ad.sub(d_fake, 1.0))), 0.5),
        ad.scale(ad.mean(ad.absolute(ad.sub(fake, target))), l1_weight),
    )
    return {"g_loss": g_loss, "d_loss": d_loss}


# ---------------------------------------------------------------------------
# parameter initialization

def _filter_std(lay):
    return math.sqrt(2.0 / (lay.kw * lay.kh * lay.c_in))


def _init_disc(spec, seed, task_index):
    params = {}
    for idx, lay in enumerate(spec.disc_layers):
        rng = rng_stream(seed, "disc_init", task_index, idx)
        params[f"d/L{idx}/filters"] = rng.normal(
            0.0, _filter_std(lay), (lay.kw, lay.kh, lay.c_in, lay.c_out))
        params[f"d/L{idx}/bias"] = np.zeros(lay.c_out)
    return params


def _init_full_gen(spec, seed, task_index):
    params = {}
    for idx, lay in enumerate(spec.gen_layers):
        rng = rng_stream(seed, "filter_init", task_index, idx)
        params[f"g/L{idx}/filters"] = rng.normal(
            0.0, _filter_std(lay), (lay.kw, lay.kh, lay.c_in, lay.c_out))
        params[f"g/L{idx}/bias"] = np.zeros(lay.c_out)
    return params


def _init_piggyback_gen(run, task_index, mode):
    """Task parameters + bank widths for the factorized modes.

    The unconstrained block of layer L draws from the same stream and in
    the same order as the full model's filters for that layer, so at
    lam=1 the two modes start bitwise identical.
    """
    spec = run.spec
    lam = Fraction(0) if (mode == "pure_factorization" and task_index > 1) else run.lam
    params = {}
    widths = []
    shared_pos = 0
    for idx, lay in enumerate(spec.gen_layers):
        rng = rng_stream(run.seed, "filter_init", task_index, idx)
        if lay.task_specific:
            params[f"g/L{idx}/filters"] = rng.normal(
                0.0, _filter_std(lay), (lay.kw, lay.kh, lay.c_in, lay.c_out))
            params[f"g/L{idx}/bias"] = np.zeros(lay.c_out)
            continue
        width = run.banks[shared_pos].width
        if task_index == 1:
            n_u, n_p = lay.c_out, 0
        else:
            part = partition_channels(lay.c_out, lam)
            n_u, n_p = part.n_u, part.n_p
        params[f"g/L{idx}/unc"] = rng.normal(
            0.0, _filter_std(lay), (lay.kw, lay.kh, lay.c_in, n_u))
        if task_index > 1 and n_p > 0:
            wrng = rng_stream(run.seed, "w_init", task_index, idx)
            params[f"g/L{idx}/W"] = wrng.normal(0.0, 1.0 / math.sqrt(width), (width, n_p))
        params[f"g/L{idx}/bias"] = np.zeros(lay.c_out)
        widths.append(width)
        shared_pos += 1
    return params, widths


# ---------------------------------------------------------------------------
# forward helpers

def _resolved_gen_arrays(mode, spec, banks, gparams, widths):
    """Per-layer (filters, bias) numpy arrays from the current parameters."""
    out = []
    shared_pos = 0
    for idx, lay in enumerate(spec.gen_layers):
        if mode in ("piggyback", "pure_factorization") and not lay.task_specific:
            from .piggyback import TaskLayerParams, compose_filters

            tlp = TaskLayerParams(
                task_index=0,
                unconstrained=gparams[f"g/L{idx}/unc"],
                W=gparams.get(f"g/L{idx}/W"),
                bias=gparams[f"g/L{idx}/bias"],
                trained_bank_width=widths[shared_pos],
            )
            out.append((compose_filters(banks[shared_pos], tlp), tlp.bias))
            shared_pos += 1
        else:
            out.append((gparams[f"g/L{idx}/filters"], gparams[f"g/L{idx}/bias"]))
    return out


def _gen_leaves(mode, spec, banks, gparams, widths):
    if mode in ("piggyback", "pure_factorization"):
        return models.resolve_shared_filter_nodes(spec, banks, gparams, widths)
    leaves = {name: ad.Tensor(arr, requires_grad=True) for name, arr in gparams.items()}
    tensors = [
        (leaves[f"g/L{idx}/filters"], leaves[f"g/L{idx}/bias"])
        for idx in range(len(spec.gen_layers))
    ]
    return tensors, leaves


def _disc_leaves(spec, dparams, requires_grad):
    leaves = {name: ad.Tensor(arr, requires_grad=requires_grad)
              for name, arr in dparams.items()}
    tensors = [
        (leaves[f"d/L{idx}/filters"], leaves[f"d/L{idx}/bias"])
        for idx in range(len(spec.disc_layers))
    ]
    return tensors, leaves


def _grads_of(leaves):
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in leaves.items()}


def validation_l1(gen_instance, val_pairs):
    """Mean per-image L1 over the validation split, fixed index order."""
    nthreads = int(os.environ.get("PBGAN_THREADS", "1"))

    def one(pair):
        cond, target = pair
        fake = models.generate(gen_instance, cond)
        return float(np.abs(fake - target).mean())

    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            vals = list(pool.map(one, val_pairs))
    else:
        vals = [one(p) for p in val_pairs]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# training loop

def train_task(run, task, cfg):
    """Train the next task; returns (new RunState, TrainLog).

    The input run is not mutated.  On completion in piggyback mode the
    unconstrained blocks are appended to the bank and the pre-expansion
    bank widths are recorded for bitwise-stable recomposition.
    """
    spec = run.spec
    if run.mode is not None and run.mode != cfg.mode:
        raise TrainingError(
            f"mode {cfg.mode!r} incompatible with run history ({run.mode!r})")
    if not task.pairs:
        raise TrainingError("task dataset is empty")
    probe = task.pairs[0][0]
    if probe.shape != (spec.image_size, spec.image_size, spec.image_channels):
        raise TrainingError(
            f"data extents {probe.shape} do not match model spec")
    mode = cfg.mode
    n = run.n_tasks + 1
    seed = run.seed if cfg.seed is None else cfg.seed
    t0 = time.monotonic()

    # parameter initialization
    widths = []
    if mode in ("piggyback", "pure_factorization"):
        gparams, widths = _init_piggyback_gen(run, n, mode)
        dparams = _init_disc(spec, run.seed, n)
    elif mode == "full":
        gparams = _init_full_gen(spec, run.seed, n)
        dparams = _init_disc(spec, run.seed, n)
    else:  # sequential_finetune
        if n == 1:
            gparams = _init_full_gen(spec, run.seed, 1)
            dparams = _init_disc(spec, run.seed, 1)
        else:
            gparams = {k: v for k, v in run.sft_params.items() if k.startswith("g/")}
            dparams = {k: v for k, v in run.sft_params.items() if k.startswith("d/")}

    g_state = ad.AdamState.for_params(gparams)
    d_state = ad.AdamState.for_params(dparams)
    train_pairs = task.train_pairs()
    val_pairs = task.val_pairs()
    log = TrainLog(seed=seed)

    for epoch in range(cfg.epochs):
        order = rng_stream(seed, "shuffle", n, epoch).permutation(len(train_pairs))
        g_losses, d_losses = [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            inv_b = 1.0 / len(batch)

            # discriminator step (generator held fixed)
            resolved = _resolved_gen_arrays(mode, spec, run.banks, gparams, widths)
            gi = models.GeneratorInstance(spec, n, resolved)
            d_tensors, d_leaves = _disc_leaves(spec, dparams, True)
            d_total = 0.0
            try:
                for cond, target in batch:
                    fake = models.generate(gi, cond)
                    cond_t, target_t = ad.Tensor(cond), ad.Tensor(target)
                    d_real = models.discriminator_forward_node(
                        spec, d_tensors, cond_t, target_t)
                    d_fake = models.discriminator_forward_node(
                        spec, d_tensors, cond_t, ad.Tensor(fake))
                    losses = gan_losses(d_real, d_fake, ad.Tensor(fake), target_t,
                                        cfg.l1_weight)
                    ad.backward(ad.scale(losses["d_loss"], inv_b))
                    d_total += float(losses["d_loss"].data) * inv_b
                dparams, d_state = ad.adam_step(
                    dparams, _grads_of(d_leaves), d_state, cfg.lr, cfg.beta1, cfg.beta2)

                # generator step (updated discriminator held fixed)
                g_tensors, g_leaves = _gen_leaves(mode, spec, run.banks, gparams, widths)
                dc_tensors, _ = _disc_leaves(spec, dparams, False)
                g_total = 0.0
                for cond, target in batch:
                    cond_t, target_t = ad.Tensor(cond), ad.Tensor(target)
                    fake = models.generator_forward_node(spec, g_tensors, cond_t)
                    d_fake = models.discriminator_forward_node(
                        spec, dc_tensors, cond_t, fake)
                    losses = gan_losses(d_fake, d_fake, fake, target_t, cfg.l1_weight)
                    ad.backward(ad.scale(losses["g_loss"], inv_b))
                    g_total += float(losses["g_loss"].data) * inv_b
                gparams, g_state = ad.adam_step(
                    gparams, _grads_of(g_leaves), g_state, cfg.lr, cfg.beta1, cfg.beta2)
            except ad.NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite loss at task {n}, epoch {epoch}, "
                    f"batch starting {start}: {exc}") from exc
            g_losses.append(g_total)
            d_losses.append(d_total)

        resolved = _resolved_gen_arrays(mode, spec, run.banks, gparams, widths)
        val_l1 = validation_l1(models.GeneratorInstance(spec, n, resolved), val_pairs)
        log.epochs.append((float(np.mean(g_losses)), float(np.mean(d_losses)), val_l1))

    # assemble the new run state
    new_banks = list(run.banks)
    record_params = dict(gparams)
    record_params.update(dparams)
    sft_params = run.sft_params
    if mode in ("piggyback", "pure_factorization"):
        from .piggyback import expand_bank

        shared_pos = 0
        for idx, lay in enumerate(spec.gen_layers):
            if lay.task_specific:
                continue
            block = gparams[f"g/L{idx}/unc"]
            if block.shape[3] > 0:
                new_banks[shared_pos] = expand_bank(new_banks[shared_pos], block, n)
            shared_pos += 1
    elif mode == "sequential_finetune":
        sft_params = record_params
        record_params = {}

    log.wall_clock = time.monotonic() - t0
    record = TaskRecord(
        kind=task.name, data_seed=task.seed, count=len(task.pairs),
        epochs=cfg.epochs, lr=cfg.lr, l1_weight=cfg.l1_weight,
        batch_size=cfg.batch_size, train_seed=seed,
        trained_widths=list(widths), params=record_params, log=log,
    )
    new_run = RunState(
        lam=run.lam, seed=run.seed, spec=spec, mode=mode,
        banks=new_banks, tasks=run.tasks + [record], sft_params=sft_params,
    )
    return new_run, log
