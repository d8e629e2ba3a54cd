"""Command-line surface: run lifecycle, training, evaluation, verification.

Exit codes: 0 success/pass, 1 verification failure, 2 usage error,
3 I/O or checkpoint format error.
"""

import os
import sys
from fractions import Fraction

import click
import numpy as np

from . import checkpoint as ckpt
from . import metrics, models, trainer
from .data import TASK_KINDS, synth_task, write_ppm
from .piggyback import partition_channels
from .run import new_run
from .rng import rng_stream

MODE_ALIASES = {
    "piggyback": "piggyback",
    "full": "full",
    "pf": "pure_factorization",
    "sft": "sequential_finetune",
}


def _fail_io(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(3)


def _parse_lambda(text):
    try:
        num, _, den = text.partition("/")
        lam = Fraction(int(num), int(den) if den else 1)
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter(f"lambda must be N or N/D, got {text!r}")
    if lam < 0 or lam > 1:
        raise click.BadParameter(f"lambda must be in [0,1], got {lam}")
    return lam


@click.group()
def main():
    """Continual learning for image-conditioned generation with a frozen
    filter bank."""


@main.command()
@click.option("--arch", default="small-unet", type=click.Choice(["small-unet"]))
@click.option("--lambda", "lam_text", required=True, help="unconstrained proportion, N/D")
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def init(arch, lam_text, seed, out_dir):
    """Create a fresh run: empty bank, zero tasks."""
    lam = _parse_lambda(lam_text)
    if os.path.exists(out_dir) and os.listdir(out_dir):
        raise click.UsageError(f"output directory {out_dir} is not empty")
    spec = models.reference_spec(32)
    run = new_run(spec, lam, seed)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with ckpt.RunLock(out_dir):
            ckpt.save_run(run, out_dir)
    except (ckpt.CheckpointError, OSError) as exc:
        _fail_io(exc)
    click.echo(f"initialized {arch} run at {out_dir} (lambda={lam}, seed={seed})")
    for idx, lay in spec.shared_layers:
        part = partition_channels(lay.c_out, lam)
        click.echo(f"  layer {idx}: c_out={lay.c_out} -> n_u={part.n_u}, n_p={part.n_p}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--task", "kind", required=True, type=click.Choice(TASK_KINDS))
@click.option("--mode", required=True, type=click.Choice(sorted(MODE_ALIASES)))
@click.option("--epochs", default=5, type=int)
@click.option("--count", default=60, type=int)
@click.option("--data-seed", default=1, type=int)
def train(run_dir, kind, mode, epochs, count, data_seed):
    """Train the next task and append it to the checkpoint atomically."""
    try:
        run = ckpt.load_run(run_dir)
    except ckpt.CheckpointError as exc:
        _fail_io(exc)
    cfg = trainer.TrainConfig(mode=MODE_ALIASES[mode], epochs=epochs)
    dataset = synth_task(kind, data_seed, count)
    try:
        with ckpt.RunLock(run_dir):
            new_state, log = trainer.train_task(run, dataset, cfg)
            ckpt.save_run(new_state, run_dir)
    except trainer.TrainingError as exc:
        raise click.UsageError(str(exc))
    except (ckpt.CheckpointError, OSError) as exc:
        _fail_io(exc)
    click.echo(f"task {new_state.n_tasks} ({kind}, mode {mode}) trained "
               f"for {epochs} epochs")
    click.echo(f"final validation L1: {log.final_val_l1:.6f}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--task-index", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval(run_dir, task_index, out_dir):
    """Metrics over the task's regenerated validation split, plus samples."""
    try:
        run = ckpt.load_run(run_dir)
    except ckpt.CheckpointError as exc:
        _fail_io(exc)
    if task_index < 1 or task_index > run.n_tasks:
        raise click.UsageError(f"task {task_index} not trained (run has {run.n_tasks})")
    rec = run.tasks[task_index - 1]
    dataset = synth_task(rec.kind, rec.data_seed, rec.count)
    row = metrics.task_metrics(run, task_index, dataset)
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv = ("task_index,kind,n_val,l1,psnr,rp_frechet\n"
               f"{row['task_index']},{row['kind']},{row['n_val']},"
               f"{row['l1']!r},{row['psnr']!r},{row['rp_frechet']!r}\n")
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="\n") as fh:
            fh.write(csv)
        gen = models.build_generator(run, task_index)
        for i, pair_idx in enumerate(dataset.val_indices[:8]):
            cond, target = dataset.pairs[pair_idx]
            fake = models.generate(gen, cond)
            for tag, img in (("cond", cond), ("fake", fake), ("target", target)):
                write_ppm(img, os.path.join(out_dir, f"sample_{i:04d}_{tag}.ppm"))
    except OSError as exc:
        _fail_io(exc)
    click.echo(f"task {task_index} ({row['kind']}): l1={row['l1']:.6f} "
               f"psnr={row['psnr']:.2f} rp_frechet={row['rp_frechet']:.6f}")


@main.command("verify-forgetting")
@click.option("--before", required=True, type=click.Path(exists=True))
@click.option("--after", required=True, type=click.Path(exists=True))
@click.option("--task-index", required=True, type=int)
def verify_forgetting(before, after, task_index):
    """Exit 0 iff task k's generator outputs are bitwise unchanged."""
    try:
        run_before = ckpt.load_run(before)
        run_after = ckpt.load_run(after)
    except ckpt.CheckpointError as exc:
        _fail_io(exc)
    if task_index < 1 or task_index > run_before.n_tasks:
        raise click.UsageError(f"task {task_index} not present in --before run")
    rec = run_before.tasks[task_index - 1]
    dataset = synth_task(rec.kind, rec.data_seed, rec.count)
    probes = dataset
    try:
        report = metrics.verify_forgetting(run_before, run_after, probes, task_index)
    except metrics.MetricError as exc:
        raise click.UsageError(str(exc))
    status = "PASS" if report.passed else "FAIL"
    click.echo(f"task {task_index}: max abs output diff {report.max_abs_diff!r} "
               f"over {report.n_probes} probes -> {status}")
    sys.exit(0 if report.passed else 1)


@main.command("report-params")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--tasks", "n_tasks", default=0, type=int,
              help="number of tasks to tabulate (default: trained tasks, min 4)")
def report_params(run_dir, n_tasks):
    """Parameter-growth table: trainable and stored counts per strategy."""
    try:
        run = ckpt.load_run(run_dir)
    except ckpt.CheckpointError as exc:
        _fail_io(exc)
    if n_tasks < 1:
        n_tasks = max(run.n_tasks, 4)
    rows = metrics.param_report_rows(run.spec, n_tasks, run.lam)
    click.echo(metrics.param_report_text(rows), nl=False)
    try:
        with open(os.path.join(run_dir, "param_report.csv"), "w", newline="\n") as fh:
            fh.write(metrics.param_report_csv(rows))
    except OSError as exc:
        _fail_io(exc)


@main.command()
@click.option("--instances", default=20, type=int)
def gradcheck(instances):
    """Finite-difference check of every differentiable op."""
    from .gradcheck import REL_TOL, run_suite

    worst = run_suite(n_instances=instances)
    overall = 0.0
    for name in sorted(worst):
        click.echo(f"{name:<24} worst rel err {worst[name]:.3e}")
        overall = max(overall, worst[name])
    click.echo(f"overall worst relative error: {overall:.3e}")
    sys.exit(0 if overall <= REL_TOL else 1)


if __name__ == "__main__":
    main()
