"""Command-line entry point for the full pipeline.

Subcommands: train, eval, sweep, select-beta, robustfit-demo, make-data.
Every option can come from a "key = value" config file (sections group
keys, '#' starts a comment) or from flags; flags override file values.
Each run writes a resolved-config echo with all defaults materialized next
to its outputs, and re-running from that echo reproduces the outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
If no seed is configured anywhere, the RVAE_SEED environment variable is
used, and failing that, 0.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import betaselect, dataio, evalkit, optim, robustfit, vaemodel
from .config import format_kv, parse_kv_file
from .divergences import BETA, STANDARD, LossSpec
from .errors import ConfigError, DataError, NumericError
from .vaemodel import Arch

_SEED_SENTINEL = "env"


@dataclass(frozen=True)
class _Opt:
    key: str            # "section.name" in config files
    flag: str           # "--long-flag"
    kind: str           # int | float | bool | str | floats | strs
    default: object     # None = required; _SEED_SENTINEL = RVAE_SEED fallback
    help: str


def _opt(key, flag, kind, default, help):  # noqa: A002 - argparse vocabulary
    return _Opt(key, flag, kind, default, help)


SCHEMAS: dict[str, list[_Opt]] = {
    "train": [
        _opt("train.manifest", "--manifest", "str", None, "dataset manifest to train on"),
        _opt("train.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("train.epochs", "--epochs", "int", 20, "training epochs"),
        _opt("train.batch_size", "--batch-size", "int", 128, "minibatch size"),
        _opt("train.seed", "--seed", "int", _SEED_SENTINEL, "run seed"),
        _opt("train.lr", "--lr", "float", 0.001, "Adam learning rate"),
        _opt("train.shuffle", "--shuffle", "bool", True, "shuffle each epoch"),
        _opt("train.checkpoint_every", "--checkpoint-every", "int", 0,
             "write a snapshot every N epochs (0 = only the final one)"),
        _opt("loss.obs_model", "--obs-model", "str", "bernoulli",
             "bernoulli | gaussian"),
        _opt("loss.divergence", "--divergence", "str", STANDARD,
             "standard | beta"),
        _opt("loss.beta", "--beta", "float", 0.0,
             "robustness parameter (required when divergence = beta)"),
        _opt("loss.sigma", "--sigma", "float", 1.0, "Gaussian observation sigma"),
        _opt("arch.hidden", "--hidden", "int", 400, "hidden units per side"),
        _opt("arch.latent", "--latent", "int", 2, "latent dimensions"),
    ],
    "eval": [
        _opt("eval.checkpoint", "--checkpoint", "str", None, "model checkpoint"),
        _opt("eval.manifest", "--manifest", "str", None, "dataset manifest to score"),
        _opt("eval.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("eval.error_mode", "--error-mode", "str", "mse", "mse | abs"),
        _opt("eval.grid_cols", "--grid-cols", "int", 8, "columns in image grids"),
        _opt("eval.grid_count", "--grid-count", "int", 32,
             "how many records to tile into the grids"),
    ],
    "sweep": [
        _opt("sweep.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("sweep.betas", "--betas", "floats", None, "comma-separated beta grid"),
        _opt("sweep.fractions", "--fractions", "floats", None,
             "comma-separated contamination fractions"),
        _opt("sweep.workers", "--workers", "int", os.cpu_count() or 1,
             "parallel worker processes"),
        _opt("sweep.seed", "--seed", "int", _SEED_SENTINEL, "run seed"),
        _opt("data.n", "--data-n", "int", 2000, "synthetic corpus size"),
        _opt("data.dim", "--data-dim", "int", 256, "flattened image dimension"),
        _opt("data.corpus_seed", "--corpus-seed", "int", 0, "synthetic corpus seed"),
        _opt("data.geometry", "--geometry", "str", "bars", "bars | blobs"),
        _opt("data.train_frac", "--train-frac", "float", 0.8, "train split fraction"),
        _opt("data.outlier_kind", "--outlier-kind", "str", dataio.GAUSSIAN_NOISE,
             "contamination kind"),
        _opt("data.binarize", "--binarize", "bool", True, "binarize after contamination"),
        _opt("train.epochs", "--epochs", "int", 20, "training epochs per cell"),
        _opt("train.batch_size", "--batch-size", "int", 128, "minibatch size"),
        _opt("train.lr", "--lr", "float", 0.001, "Adam learning rate"),
        _opt("arch.hidden", "--hidden", "int", 400, "hidden units per side"),
        _opt("arch.latent", "--latent", "int", 2, "latent dimensions"),
        _opt("arch.obs_model", "--obs-model", "str", "bernoulli",
             "bernoulli | gaussian"),
        _opt("eval.error_mode", "--error-mode", "str", "mse", "mse | abs"),
    ],
    "select-beta": [
        _opt("select-beta.checkpoints", "--checkpoints", "strs", None,
             "comma-separated checkpoint paths"),
        _opt("select-beta.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("select-beta.n_probe", "--n-probe", "int", 8, "probe images per model"),
        _opt("select-beta.seed", "--seed", "int", _SEED_SENTINEL, "probe seed"),
    ],
    "robustfit-demo": [
        _opt("robustfit-demo.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("robustfit-demo.n", "--n", "int", 2000, "number of mixture samples"),
        _opt("robustfit-demo.weight", "--weight", "float", 0.9,
             "weight of the normal (tall) component"),
        _opt("robustfit-demo.m1", "--m1", "float", 0.0, "normal component mean"),
        _opt("robustfit-demo.s1", "--s1", "float", 1.0, "normal component sigma"),
        _opt("robustfit-demo.m2", "--m2", "float", 8.0, "outlier component mean"),
        _opt("robustfit-demo.s2", "--s2", "float", 1.0, "outlier component sigma"),
        _opt("robustfit-demo.beta", "--beta", "float", 0.5, "robustness parameter"),
        _opt("robustfit-demo.seed", "--seed", "int", _SEED_SENTINEL, "sampling seed"),
        _opt("robustfit-demo.steps", "--steps", "int", 3000, "gradient steps"),
        _opt("robustfit-demo.lr", "--lr", "float", 0.05, "gradient step size"),
    ],
    "make-data": [
        _opt("make-data.out_dir", "--out-dir", "str", None, "output directory"),
        _opt("make-data.source", "--source", "str", "synthetic", "synthetic | idx"),
        _opt("make-data.seed", "--seed", "int", _SEED_SENTINEL,
             "seed for split and contamination"),
        _opt("synthetic.n", "--n", "int", 2000, "synthetic corpus size"),
        _opt("synthetic.dim", "--dim", "int", 256, "flattened image dimension"),
        _opt("synthetic.geometry", "--geometry", "str", "bars", "bars | blobs"),
        _opt("idx.images", "--images", "str", "", "image IDX file (source = idx)"),
        _opt("idx.labels", "--labels", "str", "", "label IDX file (optional)"),
        _opt("pipeline.train_frac", "--train-frac", "float", 0.8,
             "train split fraction"),
        _opt("pipeline.outlier_kind", "--outlier-kind", "str",
             dataio.GAUSSIAN_NOISE, "contamination kind, or none"),
        _opt("pipeline.fraction", "--fraction", "float", 0.1,
             "contamination fraction"),
        _opt("pipeline.outlier_images", "--outlier-images", "str", "",
             "image IDX file supplying foreign outliers"),
        _opt("pipeline.binarize", "--binarize", "bool", True,
             "binarize in the manifests"),
        _opt("pipeline.binarize_threshold", "--binarize-threshold", "float", 0.5,
             "binarization threshold fraction"),
    ],
}


def _coerce(opt: _Opt, raw) -> object:
    if not isinstance(raw, str):
        return raw
    try:
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if opt.kind == "floats":
            return [float(v) for v in raw.replace(",", " ").split()]
        if opt.kind == "strs":
            return [v for v in raw.replace(",", " ").split() if v]
        return raw
    except ValueError as e:
        raise ConfigError(f"key {opt.key!r}: cannot parse {raw!r} as {opt.kind}") from e


def _format_value(opt: _Opt, value) -> str:
    if opt.kind == "bool":
        return "true" if value else "false"
    if opt.kind == "floats":
        return ", ".join(repr(v) for v in value)
    if opt.kind == "strs":
        return ", ".join(value)
    if opt.kind == "float":
        return repr(float(value))
    return str(value)


def _flag_dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvae",
        description="Robust VAE training, evaluation, and experiment harnesses.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, schema in SCHEMAS.items():
        p = sub.add_parser(cmd, help=f"run the {cmd} pipeline step")
        p.add_argument("--config", default=None, help="key = value config file")
        seen = set()
        for opt in schema:
            if opt.flag in seen:
                raise RuntimeError(f"duplicate flag {opt.flag} in {cmd}")
            seen.add(opt.flag)
            p.add_argument(opt.flag, default=None, help=opt.help, dest=_flag_dest(opt.flag))
    return parser


def _resolve(cmd: str, args: argparse.Namespace) -> dict[str, object]:
    """Merge defaults < config file < flags into a fully-typed mapping."""
    schema = SCHEMAS[cmd]
    by_key = {opt.key: opt for opt in schema}
    file_items: dict[str, str] = {}
    if args.config is not None:
        file_items = parse_kv_file(args.config)
        unknown = set(file_items) - set(by_key)
        if unknown:
            raise ConfigError(
                f"{args.config}: unknown keys for '{cmd}': {sorted(unknown)}")
    resolved: dict[str, object] = {}
    for opt in schema:
        flag_value = getattr(args, _flag_dest(opt.flag))
        if flag_value is not None:
            value = _coerce(opt, flag_value)
        elif opt.key in file_items:
            value = _coerce(opt, file_items[opt.key])
        elif opt.default is None:
            raise ConfigError(f"missing required option {opt.key!r} "
                              f"(flag {opt.flag})")
        elif opt.default == _SEED_SENTINEL:
            value = int(os.environ.get("RVAE_SEED", "0"))
        else:
            value = opt.default
        resolved[opt.key] = value
    return resolved


def _write_echo(cmd: str, resolved: dict[str, object], out_dir: Path) -> None:
    items = {opt.key: _format_value(opt, resolved[opt.key])
             for opt in SCHEMAS[cmd]}
    name = cmd.replace("-", "_") + "_config_resolved.cfg"
    (out_dir / name).write_text(format_kv(items), encoding="utf-8")


def _prepare_out_dir(cmd: str, resolved: dict[str, object], key: str) -> Path:
    out_dir = Path(resolved[key])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_echo(cmd, resolved, out_dir)
    return out_dir


def _loss_spec(obs_model: str, divergence: str, beta: float, sigma: float) -> LossSpec:
    return LossSpec(obs_model=obs_model, divergence=divergence,
                    beta=beta if divergence == BETA else None, sigma=sigma)


def _cmd_train(cfg: dict[str, object]) -> int:
    ds = dataio.load_manifest(cfg["train.manifest"])
    arch = Arch(input_dim=ds.dim, latent_dim=cfg["arch.latent"],
                hidden_dim=cfg["arch.hidden"], obs_model=cfg["loss.obs_model"])
    spec = _loss_spec(cfg["loss.obs_model"], cfg["loss.divergence"],
                      cfg["loss.beta"], cfg["loss.sigma"])
    out_dir = _prepare_out_dir("train", cfg, "train.out_dir")
    config = optim.TrainConfig(
        arch=arch, loss_spec=spec, epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"], seed=cfg["train.seed"],
        lr=cfg["train.lr"], shuffle=cfg["train.shuffle"],
        checkpoint_every=cfg["train.checkpoint_every"])
    params, log = optim.train(config, ds, checkpoint_dir=out_dir)
    meta = {"seed": config.seed, "epochs": config.epochs,
            "obs_model": spec.obs_model, "divergence": spec.divergence,
            "beta": spec.beta if spec.beta is not None else 0.0,
            "sigma": spec.sigma, "manifest": str(cfg["train.manifest"])}
    vaemodel.save_checkpoint(params, out_dir / "model.ckpt", meta=meta)
    log.to_csv(out_dir / "train_log.csv")
    last = log.epochs[-1]
    print(f"trained {spec.divergence} {spec.obs_model} model: "
          f"epoch {last.epoch} total {last.total:.4f} "
          f"(recon {last.recon:.4f}, kl {last.kl:.4f}) -> {out_dir / 'model.ckpt'}")
    return 0


def _cmd_eval(cfg: dict[str, object]) -> int:
    params, meta = vaemodel.load_checkpoint(cfg["eval.checkpoint"])
    ds = dataio.load_manifest(cfg["eval.manifest"])
    if ds.dim != params.arch.input_dim:
        raise DataError(
            f"checkpoint expects input_dim {params.arch.input_dim} but the "
            f"dataset has {ds.dim} columns; re-train or pick a matching manifest")
    out_dir = _prepare_out_dir("eval", cfg, "eval.out_dir")
    mode = cfg["eval.error_mode"]
    errors = evalkit.recon_error(params, ds, mode)
    with open(out_dir / "errors.csv", "w", newline="") as f:
        f.write("index,error,label,is_outlier\n")
        for i, (e, lab, flag) in enumerate(zip(errors, ds.labels, ds.is_outlier)):
            f.write(f"{i},{e!r},{lab},{int(flag)}\n")
    both_classes = bool(ds.is_outlier.any() and not ds.is_outlier.all())
    ratio = auc = float("nan")
    if both_classes:
        roc, auc = evalkit.roc_auc(errors, ds.is_outlier)
        ratio = evalkit.ratio_metric(errors, ds.is_outlier)
        evalkit.write_roc_csv(roc, out_dir / "roc.csv")
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        f.write("ratio,auc,n,n_outliers,error_mode\n")
        f.write(f"{ratio!r},{auc!r},{ds.n},{int(ds.is_outlier.sum())},{mode}\n")
    evalkit.export_latent(params, ds, out_dir / "latent.csv")
    count = min(cfg["eval.grid_count"], ds.n)
    evalkit.emit_image_grid(ds.images[:count], cfg["eval.grid_cols"],
                            out_dir / "inputs.pgm")
    recons = vaemodel.reconstruct_arrays(params, ds.images[:count])
    evalkit.emit_image_grid(recons, cfg["eval.grid_cols"], out_dir / "recons.pgm")
    print(f"evaluated {ds.n} records: ratio {ratio:.4f}, auc {auc:.4f} -> {out_dir}")
    return 0


def _cmd_sweep(cfg: dict[str, object]) -> int:
    arch = Arch(input_dim=cfg["data.dim"], latent_dim=cfg["arch.latent"],
                hidden_dim=cfg["arch.hidden"], obs_model=cfg["arch.obs_model"])
    base = evalkit.SweepBase(
        arch=arch, epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"], seed=cfg["sweep.seed"], corpus_n=cfg["data.n"],
        corpus_seed=cfg["data.corpus_seed"], geometry=cfg["data.geometry"],
        train_frac=cfg["data.train_frac"], outlier_kind=cfg["data.outlier_kind"],
        binarize=cfg["data.binarize"], error_mode=cfg["eval.error_mode"])
    out_dir = _prepare_out_dir("sweep", cfg, "sweep.out_dir")
    grid = evalkit.sweep(base, cfg["sweep.betas"], cfg["sweep.fractions"],
                         workers=cfg["sweep.workers"])
    evalkit.write_sweep_csv(grid, out_dir / "sweep.csv")
    if grid.failures:
        (out_dir / "failures.log").write_text("\n".join(grid.failures) + "\n",
                                              encoding="utf-8")
        print(f"{len(grid.failures)} sweep cells failed; see failures.log",
              file=sys.stderr)
    print(f"swept {len(grid.betas)} betas x {len(grid.fractions)} fractions "
          f"-> {out_dir / 'sweep.csv'}")
    return 0


def _cmd_select_beta(cfg: dict[str, object]) -> int:
    pairs = []
    for path in cfg["select-beta.checkpoints"]:
        params, meta = vaemodel.load_checkpoint(path)
        pairs.append((float(meta.get("beta", 0.0)), params))
    out_dir = _prepare_out_dir("select-beta", cfg, "select-beta.out_dir")
    results = betaselect.probe(pairs, cfg["select-beta.n_probe"],
                               cfg["select-beta.seed"], out_dir)
    for r in results:
        print(f"beta {r.beta:g}: proxy {r.proxy_score:.4f} "
              f"variability {r.variability:.4f} grid {r.grid_path}")
    print("pick beta from the grids: reconstructions of noise should match "
          "the decoder samples without the samples collapsing")
    return 0


def _cmd_robustfit_demo(cfg: dict[str, object]) -> int:
    out_dir = _prepare_out_dir("robustfit-demo", cfg, "robustfit-demo.out_dir")
    fits = robustfit.run_demo(
        out_dir, n=cfg["robustfit-demo.n"], w=cfg["robustfit-demo.weight"],
        m1=cfg["robustfit-demo.m1"], s1=cfg["robustfit-demo.s1"],
        m2=cfg["robustfit-demo.m2"], s2=cfg["robustfit-demo.s2"],
        beta=cfg["robustfit-demo.beta"], seed=cfg["robustfit-demo.seed"],
        steps=cfg["robustfit-demo.steps"], lr=cfg["robustfit-demo.lr"])
    for fit in fits.values():
        print(f"{fit.method}: mu {fit.mu:.4f} sigma {fit.sigma:.4f}")
    return 0


def _cmd_make_data(cfg: dict[str, object]) -> int:
    out_dir = _prepare_out_dir("make-data", cfg, "make-data.out_dir")
    source = cfg["make-data.source"]
    entries: dict[str, object] = {}
    if source == "synthetic":
        ds = dataio.make_synthetic_clusters(
            cfg["synthetic.n"], cfg["synthetic.dim"], cfg["make-data.seed"],
            cfg["synthetic.geometry"])
        side = int(round(cfg["synthetic.dim"] ** 0.5))
        dataio.write_idx(out_dir / "images.idx",
                         ds.images.reshape(ds.n, side, side))
        dataio.write_idx(out_dir / "labels.idx", ds.labels)
        entries["source"] = "idx"
        entries["images"] = "images.idx"
        entries["labels"] = "labels.idx"
    elif source == "idx":
        images = cfg["idx.images"]
        if not images:
            raise ConfigError("source = idx needs --images")
        dataio.read_idx(images)  # fail fast on bad inputs
        entries["source"] = "idx"
        entries["images"] = os.path.relpath(os.path.abspath(images), out_dir)
        if cfg["idx.labels"]:
            entries["labels"] = os.path.relpath(
                os.path.abspath(cfg["idx.labels"]), out_dir)
    else:
        raise ConfigError(f"unknown source {source!r}")
    entries["train_frac"] = cfg["pipeline.train_frac"]
    entries["split_seed"] = cfg["make-data.seed"]
    kind = cfg["pipeline.outlier_kind"]
    for side_name, salt in (("train", 1), ("test", 2)):
        manifest = dict(entries)
        manifest["split"] = side_name
        if kind != "none":
            manifest["outlier_kind"] = kind
            manifest["outlier_fraction"] = cfg["pipeline.fraction"]
            manifest["outlier_seed"] = cfg["make-data.seed"] + salt
            if kind == dataio.FOREIGN_DATASET:
                foreign = cfg["pipeline.outlier_images"]
                if not foreign:
                    raise ConfigError("foreign_dataset needs --outlier-images")
                manifest["outlier_images"] = os.path.relpath(
                    os.path.abspath(foreign), out_dir)
        manifest["binarize"] = "true" if cfg["pipeline.binarize"] else "false"
        manifest["binarize_threshold"] = cfg["pipeline.binarize_threshold"]
        dataio.write_manifest(out_dir / f"{side_name}.manifest", manifest)
        # replay once so broken inputs surface now, not at train time
        replay = dataio.load_manifest(out_dir / f"{side_name}.manifest")
        print(f"{side_name}.manifest -> {replay.n} records, dim {replay.dim}, "
              f"{int(replay.is_outlier.sum())} outliers")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "select-beta": _cmd_select_beta,
    "robustfit-demo": _cmd_robustfit_demo,
    "make-data": _cmd_make_data,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        resolved = _resolve(args.command, args)
        return _COMMANDS[args.command](resolved)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
