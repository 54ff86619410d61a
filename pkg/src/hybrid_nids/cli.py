"""Command-line entry point: ``nids <stage> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import ArgumentError, NidsError
from .evaluation import GLOBAL_SMOTE, TRAIN_ONLY_SMOTE
from .synth import generate_synthetic, to_csv

logger = logging.getLogger("hybrid_nids")

_SCOPES = {"global": GLOBAL_SMOTE, "train-only": TRAIN_ONLY_SMOTE,
           GLOBAL_SMOTE: GLOBAL_SMOTE, TRAIN_ONLY_SMOTE: TRAIN_ONLY_SMOTE}


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--out", help="output directory (config: output_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=("binary", "multilabel"))
    p.add_argument("--threads", type=int, help="parallelism cap (env NIDS_THREADS)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", dest="dataset_path", help="input CSV")
    g.add_argument("--kind", choices=("kdd", "malmem", "generic"))
    g.add_argument("--sample-rows", type=int, help="subsample to N rows after cleaning (0 keeps all)")
    g.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=None,
                   help="class-proportional subsampling (default on)")
    g = p.add_argument_group("balancing and ranking")
    g.add_argument("--smote-k", type=int)
    g.add_argument("--no-smote", action="store_true")
    g.add_argument("--rounds", type=int, help="boosting rounds")
    g.add_argument("--quantile", action="store_true", help="quantile-binned boosting splits (256 bins)")
    g.add_argument("--max-bins", type=int, help="quantile bins for boosting; 0 means exact splits")
    g = p.add_argument_group("selection")
    g.add_argument("--threshold", type=float)
    g.add_argument("--step", type=int)
    g.add_argument("--select-learners", type=_csv_list)
    g.add_argument("--early-exit", action="store_true")
    g.add_argument("--fast-selection", action="store_true", help="3-fold CV inside the prefix sweep")
    g.add_argument("--fixed-k", type=int, help="skip the sweep and keep the top K features")
    g = p.add_argument_group("evaluation")
    g.add_argument("--folds", type=int)
    g.add_argument("--scope", choices=sorted(_SCOPES))
    g.add_argument("--learners", type=_csv_list)
    g.add_argument("--feature-sets", type=_csv_list)
    g.add_argument("--knn-sample", type=int, help="cap KNN reference rows per fold")
    g.add_argument("--scalability", action="store_true")
    g.add_argument("--epochs", type=_int_list, help="scalability epoch counts, e.g. 125,200")


def _overrides(args: argparse.Namespace) -> dict:
    pairs = {
        "output_dir": args.out,
        "seed": args.seed,
        "task": args.task,
        "threads": args.threads,
        "dataset.path": args.dataset_path,
        "dataset.kind": args.kind,
        "dataset.sample_rows": args.sample_rows,
        "dataset.stratified": args.stratified,
        "smote.k_neighbors": args.smote_k,
        "boost.n_rounds": args.rounds,
        "boost.max_bins": args.max_bins if args.max_bins is not None else (256 if args.quantile else None),
        "selection.threshold": args.threshold,
        "selection.step": args.step,
        "selection.learners": args.select_learners,
        "selection.fixed_k": args.fixed_k,
        "folds.n_folds": args.folds,
        "folds.scope": _SCOPES[args.scope] if args.scope else None,
        "evaluate.learners": args.learners,
        "evaluate.feature_sets": args.feature_sets,
        "evaluate.knn_sample": args.knn_sample,
        "scalability.epochs": args.epochs,
    }
    out = {k: v for k, v in pairs.items() if v is not None}
    if args.threads is None and os.environ.get("NIDS_THREADS"):
        try:
            out["threads"] = int(os.environ["NIDS_THREADS"])
        except ValueError:
            raise ArgumentError("NIDS_THREADS must be an integer") from None
    if args.no_smote:
        out["smote.enabled"] = False
    for flag, key in ((args.early_exit, "selection.early_exit"), (args.fast_selection, "selection.fast"),
                      (args.scalability, "scalability.enabled")):
        if flag:
            out[key] = True
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nids", description="Boosted feature selection and intrusion detection pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "load, clean, encode and standardize the dataset",
        "balance": "SMOTE the prepared data (skipped when already balanced)",
        "rank": "rank features by accumulated boosting gain",
        "select": "pick the smallest top-k prefix every learner accepts",
        "train": "fit the evaluated learners on the proposed feature set",
        "evaluate": "k-fold cross-validation of every learner and feature set",
        "report": "write metrics, confusion, ROC tables and the manifest",
        "run": "all stages in order",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    s = sub.add_parser("synth", help="write a synthetic Gaussian-cluster CSV in the generic schema")
    s.add_argument("output", type=Path)
    s.add_argument("--counts", type=_int_list, default=[500, 500], help="rows per class, e.g. 500,500")
    s.add_argument("--informative", type=int, default=3)
    s.add_argument("--noise", type=int, default=7)
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            data = generate_synthetic(args.counts, args.informative, args.noise, args.seed, args.separation)
            to_csv(data, args.output)
            print(f"wrote {data.n_rows} rows x {data.n_features} features to {args.output}")
            return 0
        cfg = load_config(args.config, _overrides(args))
        out = Path(cfg.output_dir)
        if args.command == "run":
            report = pipeline.run_pipeline(cfg, out)
        else:
            result = pipeline.STAGE_FUNCS[args.command](cfg, out)
            report = result if isinstance(result, pipeline.EvalReport) else None
        if report is not None:
            for key, row in report.mean.items():
                print(f"{key:<24} accuracy {row.accuracy * 100:9.4f}%  f1 {row.f1 * 100:9.4f}%")
            print(f"manifest digest {report.manifest['digest']}")
        else:
            print(f"{args.command}: done ({out})")
        return 0
    except NidsError as exc:
        print(f"nids: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
