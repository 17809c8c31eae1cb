"""Quantitative evaluation: reconstruction errors, outlier/normal error
ratio, ROC/AUC detection, the beta x contamination sweep, latent export,
and PGM image grids.

Detection scores are posterior-mean reconstructions (no sampling noise),
so every evaluation is deterministic given (params, dataset).  Sweep cells
are independent seeded runs and may execute in parallel worker processes;
per-cell failures land in the grid as NaN plus a failure log entry.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataio, optim, vaemodel
from .dataio import ContaminationSpec, Dataset
from .divergences import LossSpec
from .errors import DataError, ShapeError
from .vaemodel import Arch, VaeParams

_EVAL_CHUNK = 1024


@dataclass
class EvalReport:
    """Per-record errors plus the derived detection metrics."""

    per_record_error: np.ndarray
    ratio_metric: float
    roc: list[tuple[float, float, float]]  # (fpr, tpr, threshold)
    auc: float
    run_meta: dict = field(default_factory=dict)


@dataclass
class SweepGrid:
    """ratio/auc matrices indexed [beta, fraction]."""

    betas: list[float]
    fractions: list[float]
    ratio_cells: np.ndarray
    auc_cells: np.ndarray
    failures: list[str] = field(default_factory=list)


def error_rows(x: np.ndarray, xhat: np.ndarray, mode: str = "mse") -> np.ndarray:
    """Per-record error between image rows: mean over pixels of the squared
    (mse) or absolute (abs) difference."""
    if mode not in ("mse", "abs"):
        raise DataError(f"unknown error mode {mode!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xhat = np.atleast_2d(np.asarray(xhat, dtype=np.float64))
    if x.shape != xhat.shape:
        raise ShapeError(f"shapes {x.shape} and {xhat.shape} disagree")
    diff = xhat - x
    per_dim = diff * diff if mode == "mse" else np.abs(diff)
    return per_dim.mean(axis=1)


def recon_error(params: VaeParams, ds: Dataset, mode: str = "mse") -> np.ndarray:
    """Per-record reconstruction error against the posterior-mean decode."""
    if ds.dim != params.arch.input_dim:
        raise ShapeError(
            f"dataset dim {ds.dim} != checkpoint input_dim {params.arch.input_dim}")
    errors = np.empty(ds.n)
    for lo in range(0, ds.n, _EVAL_CHUNK):
        x = ds.images[lo:lo + _EVAL_CHUNK]
        xhat = vaemodel.reconstruct_arrays(params, x)
        errors[lo:lo + _EVAL_CHUNK] = error_rows(x, xhat, mode)
    return errors


def ratio_metric(errors: np.ndarray, flags: np.ndarray) -> float:
    """Mean error over flagged records divided by mean over unflagged ones.

    Group means (not raw sums) so unequal group sizes do not bias the
    ratio; higher means outliers are encoded worse, i.e. more robustly.
    """
    errors = np.asarray(errors, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if errors.shape != flags.shape:
        raise ShapeError("errors and flags must align")
    if not flags.any() or flags.all():
        raise DataError("ratio_metric needs at least one record in each group")
    return float(errors[flags].mean() / errors[~flags].mean())


def roc_auc(scores: np.ndarray, flags: np.ndarray) \
        -> tuple[list[tuple[float, float, float]], float]:
    """Threshold sweep over distinct scores (predict outlier when
    score >= threshold); AUC by the trapezoidal rule.  Tied scores enter
    together, which makes the AUC equal the pairwise probability
    P(score_pos > score_neg) + 0.5 * P(equal).
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    n_pos = int(flags.sum())
    n_neg = int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_auc needs both positive and negative records")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = flags[order]
    cum_tp = np.cumsum(y)
    cum_fp = np.cumsum(~y)
    boundary = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    roc = [(0.0, 0.0, math.inf)]
    for i in boundary:
        roc.append((float(cum_fp[i] / n_neg), float(cum_tp[i] / n_pos),
                    float(s[i])))
    fpr = np.array([p[0] for p in roc])
    tpr = np.array([p[1] for p in roc])
    trapezoid = getattr(np, "trapezoid", np.trapz)
    auc = float(trapezoid(tpr, fpr))
    return roc, auc


def evaluate(params: VaeParams, ds: Dataset, mode: str = "mse",
             run_meta: dict | None = None) -> EvalReport:
    """Full detection report for one trained model on one dataset."""
    errors = recon_error(params, ds, mode)
    roc, auc = roc_auc(errors, ds.is_outlier)
    return EvalReport(per_record_error=errors,
                      ratio_metric=ratio_metric(errors, ds.is_outlier),
                      roc=roc, auc=auc, run_meta=run_meta or {})


@dataclass(frozen=True)
class SweepBase:
    """Everything a sweep cell needs besides its (beta, fraction) pair."""

    arch: Arch
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.001
    seed: int = 0
    corpus_n: int = 2000
    corpus_seed: int = 0
    geometry: str = "bars"
    train_frac: float = 0.8
    outlier_kind: str = dataio.GAUSSIAN_NOISE
    binarize: bool = True
    error_mode: str = "mse"


def _cell_datasets(base: SweepBase, fraction: float, i_frac: int) \
        -> tuple[Dataset, Dataset]:
    """Contaminated train/test pair for one fraction (beta-independent)."""
    corpus = dataio.make_synthetic_clusters(
        base.corpus_n, base.arch.input_dim, base.corpus_seed, base.geometry)
    train, test = dataio.split(corpus, base.train_frac, base.seed)
    out = []
    for side_salt, ds in ((1, train), (2, test)):
        seed = int(np.random.SeedSequence(
            (base.seed, i_frac, side_salt)).generate_state(1)[0])
        spec = ContaminationSpec(kind=base.outlier_kind,
                                 fraction=fraction, seed=seed)
        ds = dataio.contaminate(ds, spec)
        if base.binarize:
            ds = dataio.binarize(ds)
        out.append(ds)
    return out[0], out[1]


def _run_cell(args) -> tuple[int, int, float, float, str]:
    base, i_beta, beta, i_frac, fraction = args
    try:
        train_ds, test_ds = _cell_datasets(base, fraction, i_frac)
        spec = LossSpec(obs_model=base.arch.obs_model, divergence="beta", beta=beta)
        config = optim.TrainConfig(arch=base.arch, loss_spec=spec,
                                   epochs=base.epochs, batch_size=base.batch_size,
                                   seed=base.seed, lr=base.lr)
        params, _ = optim.train(config, train_ds)
        report = evaluate(params, test_ds, base.error_mode)
        return i_beta, i_frac, report.ratio_metric, report.auc, ""
    except Exception as e:  # cell failures become NaN, the sweep continues
        return i_beta, i_frac, math.nan, math.nan, \
            f"beta={beta} fraction={fraction}: {e}"


def sweep(base: SweepBase, betas: list[float], fractions: list[float],
          workers: int = 1) -> SweepGrid:
    """Train and evaluate one robust model per (beta, fraction) cell."""
    if not betas or not fractions:
        raise DataError("sweep needs nonempty beta and fraction grids")
    jobs = [(base, i, b, j, f)
            for i, b in enumerate(betas) for j, f in enumerate(fractions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    ratio = np.full((len(betas), len(fractions)), math.nan)
    auc = np.full((len(betas), len(fractions)), math.nan)
    failures = []
    for i, j, r, a, err in results:
        ratio[i, j] = r
        auc[i, j] = a
        if err:
            failures.append(err)
    return SweepGrid(list(betas), list(fractions), ratio, auc, failures)


def write_sweep_csv(grid: SweepGrid, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["beta", "fraction", "ratio", "auc"])
        for i, beta in enumerate(grid.betas):
            for j, frac in enumerate(grid.fractions):
                writer.writerow([repr(float(beta)), repr(float(frac)),
                                 repr(float(grid.ratio_cells[i, j])),
                                 repr(float(grid.auc_cells[i, j]))])


def write_roc_csv(roc: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fpr", "tpr"])
        for fpr, tpr, threshold in roc:
            writer.writerow([repr(threshold), repr(fpr), repr(tpr)])


def export_latent(params: VaeParams, ds: Dataset, path) -> None:
    """CSV of posterior means: mu_1..mu_L, label, is_outlier."""
    latent = params.arch.latent_dim
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"mu_{i + 1}" for i in range(latent)]
                        + ["label", "is_outlier"])
        for lo in range(0, ds.n, _EVAL_CHUNK):
            mu, _ = vaemodel.posterior_arrays(params, ds.images[lo:lo + _EVAL_CHUNK])
            for row, label, flag in zip(mu, ds.labels[lo:lo + _EVAL_CHUNK],
                                        ds.is_outlier[lo:lo + _EVAL_CHUNK]):
                writer.writerow([repr(float(v)) for v in row]
                                + [label, int(flag)])


def emit_image_grid(images: np.ndarray, cols: int, path) -> None:
    """Tile images row-major into one binary PGM (P5, maxval 255).

    Tiles are separated by 1-pixel mid-gray lines; unused trailing cells
    stay black.  Feature dimension must be a perfect square.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, dim = images.shape
    side = int(round(math.sqrt(dim)))
    if side * side != dim:
        raise DataError(f"image dimension {dim} is not a perfect square")
    if cols < 1:
        raise DataError("cols must be >= 1")
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    height = rows * side + (rows - 1)
    width = cols * side + (cols - 1)
    canvas = np.zeros((height, width), dtype=np.uint8)
    if rows > 1:
        canvas[side::side + 1, :] = 127
    if cols > 1:
        canvas[:, side::side + 1] = 127
    for k in range(n):
        r, c = divmod(k, cols)
        tile = np.rint(np.clip(images[k], 0.0, 1.0) * 255.0).astype(np.uint8)
        top, left = r * (side + 1), c * (side + 1)
        canvas[top:top + side, left:left + side] = tile.reshape(side, side)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(canvas.tobytes())
