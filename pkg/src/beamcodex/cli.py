"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
failures while running an experiment.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .channel import generate_channels
from .datafile import DatasetError, save_dataset
from .harness import experiments as ex
from .harness import records
from .harness.config import OUTPUT_DIR_ENV, ConfigError, load_config

logger = logging.getLogger("beamcodex")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _common(parser):
    parser.add_argument("--config", help="TOML experiment configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set sweep.l_csi=[1,4,32]")
    parser.add_argument("--seed", type=int, help="root seed (same as --set seed=N)")
    parser.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_DIR_ENV} and the config)")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="beamcodex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", help="synthesize the MU scenario channel tensor (BSIM1 file)")
    _common(p)
    p.add_argument("--users", type=int, help="only the first N users")
    p.add_argument("--out", default="channels.bsim")

    p = sub.add_parser("build-dataset", help="generate beamspace training/validation samples")
    _common(p)
    p.add_argument("--out", default="dataset.npz")

    p = sub.add_parser("train", help="fit the codebook generator; writes checkpoint, history and metrics")
    _common(p)
    p.add_argument("--dataset", help="npz written by build-dataset (built on the fly if omitted)")
    p.add_argument("--out", default="model.bscm")

    p = sub.add_parser("eval-ssb", help="best-beam RSRP CDFs of no-BF, DFT, BSC and RSV codebooks")
    _common(p)
    p.add_argument("--model", help="trained checkpoint (required unless --no-bsc)")
    p.add_argument("--no-bsc", action="store_true", help="skip the learned codebook")
    p.add_argument("--drops", type=int, help="held-out drops (default: config test_drops)")

    p = sub.add_parser("sweep-csirs", help="Eff-SSE over the L_CSI / P_CSI / BWP / NRB sweep grid")
    _common(p)
    p.add_argument("--drops", type=int, help="Monte Carlo drops (default: config monte_carlo_drops)")
    p.add_argument("--workers", type=int, default=1, help="worker processes over drops")

    p = sub.add_parser("site-transfer", help="agnostic vs fine-tuned generator on a regenerated site")
    _common(p)
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--budget", type=float, help="fine-tuning step budget as a fraction of training steps")

    p = sub.add_parser("plot", help="render SVG charts from CSV outputs (needs matplotlib)")
    _common(p)
    p.add_argument("--input-dir", help="directory holding the CSV files (default: output dir)")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    drops = getattr(args, "drops", None)
    if drops is not None:
        key = "monte_carlo_drops" if args.command == "sweep-csirs" else "test_drops"
        overrides.append(f"{key}={drops}")
    cfg = load_config(args.config, overrides)
    out = args.output_dir or cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    return cfg, out


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def cmd_gen_channels(cfg, out, args):
    sc = cfg.scenario
    if args.users is not None:
        if not 1 <= args.users <= sc.n_users:
            raise ConfigError(f"--users must lie in [1, {sc.n_users}]")
        sc = sc.replace(n_users=args.users)
    site = ex.Site(cfg, sc)
    tensor = generate_channels(sc, site.geometry)
    path = os.path.join(out, args.out)
    save_dataset(tensor, path)
    logger.info("wrote %s %s", path, tensor.h.shape)
    return [path]


def cmd_build_dataset(cfg, out, args):
    site = ex.Site(cfg, cfg.ssb_scenario)
    x_tr, y_tr, x_va, y_va = ex.training_sets(cfg, site)
    path = os.path.join(out, args.out)
    np.savez(path, x_train=x_tr, y_train=y_tr, x_val=x_va, y_val=y_va,
             config=json.dumps(cfg.to_dict(), sort_keys=True, default=str))
    return [path]


def _load_npz(path):
    try:
        with np.load(path) as data:
            return data["x_train"], data["y_train"], data["x_val"], data["y_val"]
    except FileNotFoundError:
        raise ConfigError(f"dataset {path} not found") from None
    except KeyError as exc:
        raise DatasetError(f"{path}: missing array {exc}") from None


def cmd_train(cfg, out, args):
    site = ex.Site(cfg, cfg.ssb_scenario)
    start = time.perf_counter()
    sets = _load_npz(args.dataset) if args.dataset else ex.training_sets(cfg, site)
    built = time.perf_counter()
    est = ex.make_estimator(cfg).fit(*sets[:2], *sets[2:])
    model_path = os.path.join(out, args.out)
    est.save(model_path)
    hist_path = os.path.join(out, "history.csv")
    est.history_.to_csv(hist_path)
    metrics = {"steps": est.n_steps_, "train_samples": len(sets[0]), "val_samples": len(sets[2]),
               "val_loss": est.validation_loss(sets[2], sets[3]), "config_id": cfg.config_id(),
               "dataset_seconds": built - start, "train_seconds": time.perf_counter() - built}
    metrics_path = os.path.join(out, "train_metrics.json")
    _write_json(metrics_path, metrics)
    return [model_path, hist_path, metrics_path]


def _load_model(path):
    from .bsc.codex import BeamspaceCodex
    if not os.path.exists(path):
        raise ConfigError(f"model checkpoint {path} not found")
    return BeamspaceCodex.load(path)


def cmd_eval_ssb(cfg, out, args):
    if args.model is None and not args.no_bsc:
        raise ConfigError("the BSC codebook needs a trained model: pass --model or --no-bsc")
    est = None if args.no_bsc else _load_model(args.model)
    cdf, summary, _ = ex.run_ssb_experiment(cfg, est)
    cid = cfg.config_id()
    paths = [records.write_csv(os.path.join(out, "ssb_cdf.csv"), cdf, records.CDF_COLUMNS, cid),
             records.write_csv(os.path.join(out, "ssb_summary.csv"), summary,
                               records.SSB_SUMMARY_COLUMNS, cid)]
    for row in summary:
        logger.info("%-6s mean RSRP %.2f dBm", row["kind"], row["mean_rsrp_dbm"])
    return paths


def cmd_sweep_csirs(cfg, out, args):
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    recs, summary = ex.run_csirs_sweep(cfg, workers=args.workers,
                                       progress=lambda d: logger.debug("drop %d done", d))
    cid = cfg.config_id()
    return [records.write_csv(os.path.join(out, "sweep_records.csv"), recs, records.SWEEP_COLUMNS, cid),
            records.write_csv(os.path.join(out, "sweep_summary.csv"), summary,
                              records.SWEEP_SUMMARY_COLUMNS, cid)]


def cmd_site_transfer(cfg, out, args):
    est = _load_model(args.model)
    if args.budget is not None and not 0 <= args.budget <= 1:
        raise ConfigError("--budget must lie in [0, 1]")
    rows, summary, tuned = ex.run_site_transfer(cfg, est, args.budget)
    cid = cfg.config_id()
    hist = records.write_csv(os.path.join(out, "site_transfer_hist.csv"), rows,
                             records.TRANSFER_COLUMNS, cid)
    summ = records.write_csv(os.path.join(out, "site_transfer_summary.csv"),
                             [{"metric": k, "value": v} for k, v in summary.items()],
                             ("schema_version", "config_id", "metric", "value"), cid)
    model = os.path.join(out, "model_finetuned.bscm")
    tuned.save(model)
    return [hist, summ, model]


def cmd_plot(cfg, out, args):
    from .plotting import render_all
    return render_all(args.input_dir or out, out)


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval-ssb": cmd_eval_ssb,
    "sweep-csirs": cmd_sweep_csirs,
    "site-transfer": cmd_site_transfer,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = _config(args)
        written = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError, ImportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
