"""Quality metrics, the bit-exact forgetting verifier, and parameter reports.

The Frechet distance runs over 16-dimensional random-projection features
of images (a fixed seeded Gaussian projection followed by relu) instead
of a pretrained embedding; absolute values are meaningful only for
ordering comparisons within this codebase.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .piggyback import param_count
from .rng import rng_stream

RP_SEED = 7777
RP_DIM = 16

_proj_cache = {}


class MetricError(ValueError):
    pass


def l1_psnr(fake, target):
    """Mean absolute error and PSNR (peak-to-peak 2, capped at 99 dB)."""
    fake = np.asarray(fake, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if fake.shape != target.shape:
        raise MetricError(f"extent mismatch {fake.shape} vs {target.shape}")
    l1 = float(np.abs(fake - target).mean())
    mse = float(((fake - target) ** 2).mean())
    psnr = 99.0 if mse == 0.0 else min(99.0, 10.0 * math.log10(4.0 / mse))
    return {"l1": l1, "psnr": psnr}


def rp_features(image, seed=RP_SEED):
    """Fixed random-projection feature vector (dim 16) of an image."""
    image = np.asarray(image, dtype=np.float64)
    flat = image.reshape(-1)
    key = (flat.size, seed)
    if key not in _proj_cache:
        rng = rng_stream(seed, "rp_proj")
        _proj_cache[key] = rng.normal(0.0, 1.0, (RP_DIM, flat.size)) / math.sqrt(flat.size)
    return np.maximum(_proj_cache[key] @ flat, 0.0)


def _sqrtm_psd(mat):
    # symmetric square root with negative eigenvalues floored at 0
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a, feats_b):
    """Frechet distance between Gaussian fits of two feature sets."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError("feature sets must be (n, d) with matching d")
    if a.shape[0] < 32 or b.shape[0] < 32:
        raise MetricError("need at least 32 samples per side")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * cross))
    return d


@dataclass
class ForgettingReport:
    task_index: int
    max_abs_diff: float
    n_probes: int

    @property
    def passed(self):
        return self.max_abs_diff == 0.0


def verify_forgetting(run_before, run_after, probes, task_index):
    """Max absolute output difference of task k's generator between runs.

    Piggyback and full runs must report exactly 0; sequential fine-tuning
    is expected to report > 0.
    """
    if task_index > run_before.n_tasks or task_index > run_after.n_tasks:
        raise MetricError(f"task {task_index} missing from one of the runs")
    g_before = models.build_generator(run_before, task_index)
    g_after = models.build_generator(run_after, task_index)
    worst = 0.0
    for cond, _ in probes.pairs:
        out_b = models.generate(g_before, cond)
        out_a = models.generate(g_after, cond)
        worst = max(worst, float(np.abs(out_b - out_a).max()))
    return ForgettingReport(task_index=task_index, max_abs_diff=worst,
                            n_probes=len(probes.pairs))


@dataclass
class MetricReport:
    rows: list  # per-task dicts: task_index, kind, n_val, l1, psnr, rp_frechet

    def aggregate(self):
        return {
            "l1": float(np.mean([r["l1"] for r in self.rows])),
            "psnr": float(np.mean([r["psnr"] for r in self.rows])),
        }


def task_metrics(run, task_index, dataset):
    """Metrics of one task's generator over the dataset's validation split.

    rp_frechet needs >= 32 validation pairs; with fewer it is NaN.
    """
    gen = models.build_generator(run, task_index)
    val = dataset.val_pairs()
    l1s, psnrs = [], []
    fake_feats, real_feats = [], []
    for cond, target in val:
        fake = models.generate(gen, cond)
        m = l1_psnr(fake, target)
        l1s.append(m["l1"])
        psnrs.append(m["psnr"])
        fake_feats.append(rp_features(fake))
        real_feats.append(rp_features(target))
    if len(val) >= 32:
        fd = frechet_distance(np.array(fake_feats), np.array(real_feats))
    else:
        fd = float("nan")
    return {
        "task_index": task_index,
        "kind": dataset.name,
        "n_val": len(val),
        "l1": float(np.mean(l1s)),
        "psnr": float(np.mean(psnrs)),
        "rp_frechet": fd,
    }


# ---------------------------------------------------------------------------
# parameter-growth report

STRATEGIES = ("full", "piggyback", "pure_factorization")


def param_report_rows(spec, n_tasks, lam):
    """Strategy x task table of trainable / cumulative stored counts."""
    full_ref = {n: param_count(spec, n, lam, "full") for n in range(1, n_tasks + 1)}
    rows = []
    for strategy in STRATEGIES:
        for n in range(1, n_tasks + 1):
            c = param_count(spec, n, lam, strategy)
            rows.append({
                "strategy": strategy,
                "task": n,
                "trainable": c["trainable"],
                "stored_cumulative": c["stored_cumulative"],
                "trainable_vs_full": c["trainable"] / full_ref[n]["trainable"],
                "stored_vs_full": c["stored_cumulative"] / full_ref[n]["stored_cumulative"],
            })
    return rows


def param_report_csv(rows):
    lines = ["strategy,task,trainable,stored_cumulative,trainable_vs_full,stored_vs_full"]
    for r in rows:
        lines.append(
            f"{r['strategy']},{r['task']},{r['trainable']},{r['stored_cumulative']},"
            f"{r['trainable_vs_full']!r},{r['stored_vs_full']!r}")
    return "\n".join(lines) + "\n"


def param_report_text(rows):
    hdr = f"{'strategy':<20}{'task':>5}{'trainable':>12}{'stored':>12}{'vs full':>10}"
    lines = [hdr, "-" * len(hdr)]
    for r in rows:
        lines.append(
            f"{r['strategy']:<20}{r['task']:>5}{r['trainable']:>12}"
            f"{r['stored_cumulative']:>12}{r['stored_vs_full']:>10.3f}")
    return "\n".join(lines) + "\n"
