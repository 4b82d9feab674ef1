"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 verification
failure, 4 theorem precondition unmet (empty feasible interval).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import EmptyClusterError, verify_identity
from .constraints import check_collapse_exclusion
from .data_io import (
    GmmSpec,
    IdxFormatError,
    load_dataset,
    load_idx,
    save_dataset,
    synth_gmm,
    write_csv,
    write_series,
)
from .geometry import ShellParams, ZeroNormRowError
from .metrics import collapse_verdict, evaluate
from .numeric_core import ConvergenceError
from .pipeline import (
    ABLATION_COLUMNS,
    FingerprintMismatch,
    ablation_ordering,
    load_region,
    preprocess,
    run_ablation,
    save_region,
)
from .trainer import Seeds, TrainConfig, TrainingError, split_indices, train
from .vae import load_checkpoint

log = logging.getLogger("shellvae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY, EXIT_PRECONDITION = 0, 1, 2, 3, 4

VARIANT_FLAGS = {"none": "none", "boundary": "boundary_only", "norm": "norm_only", "full": "full"}
DEFAULT_K = {"gmm": 8, "idx": 10}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = GmmSpec(args.n, args.dim, args.components, args.separation, args.std, args.seed)
    data, labels = synth_gmm(spec)
    digest = save_dataset(args.out, data, labels, {"source": "gmm", "spec": asdict(spec)})
    print(digest)
    return EXIT_OK


def cmd_import_idx(args) -> int:
    images, labels = load_idx(args.images, args.labels)
    n = len(images)
    if args.subset and args.subset < n:
        idx = np.sort(np.random.default_rng(args.seed).permutation(n)[: args.subset])
        images = images[idx]
        labels = labels[idx] if labels is not None else None
    meta = {"source": "idx", "images": str(args.images), "subset": args.subset, "seed": args.seed}
    print(save_dataset(args.out, images, labels, meta))
    return EXIT_OK


def cmd_cluster(args) -> int:
    data, _, meta = load_dataset(args.data)
    k = args.k if args.k is not None else DEFAULT_K.get(meta.get("source"), 8)
    prep = preprocess(
        data, k, ShellParams(args.rmin, args.rmax), args.shell_seed, args.kmeans_seed,
        skip_transform=args.skip_transform, max_iters=args.max_iters, tol=args.tol,
    )
    save_region(args.out, prep)
    reg = prep.region
    print(f"TSS={reg.tss:.12g}")
    print(f"W={reg.w:.12g}")
    print(f"delta_collapse={reg.delta_collapse:.12g}")
    print(f"identity_residual={verify_identity(reg):.3e}")
    print(f"feasible: W < delta = {str(reg.is_feasible).lower()}")
    return EXIT_OK


def _load_pair(args):
    data, _, _ = load_dataset(args.data)
    prep, doc = load_region(args.region, data)
    return data, prep, doc


def _train_config(args, prep) -> TrainConfig:
    seeds = replace(Seeds.from_base(args.seed), shell=prep.shell_seed, kmeans=prep.kmeans_seed)
    if args.violation < 0:
        raise UsageError("--violation must be >= 0")
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        beta_start=args.beta_start,
        beta_end=args.beta_end,
        beta_ramp_epochs=args.beta_ramp,
        two_stage=args.two_stage,
        stage_one_fraction=args.stage_one_fraction,
        stage_one_penalties=args.stage_one_penalties,
        violation_factor=args.violation,
        sigma_sq_override=args.sigma_sq,
        constraint_variant=VARIANT_FLAGS[getattr(args, "variant", "full")],
        lambda_boundary=args.lambda_boundary,
        lambda_norm=args.lambda_norm,
        latent_dim=args.latent_dim,
        holdout_fraction=args.holdout,
        checkpoint_every=args.checkpoint_every,
        seeds=seeds,
    )


def _manifest(config: TrainConfig, prep, doc, extra=None) -> dict:
    m = {
        "tool_version": __version__,
        "config": config.as_dict(),
        "dataset_hash": prep.dataset_hash,
        "shell_hash": doc["shell_hash"],
        "region": {"tss": prep.region.tss, "w": prep.region.w, "delta_collapse": prep.region.delta_collapse},
        "seeds": asdict(config.seeds),
    }
    m.update(extra or {})
    return m


def _progress(verbose):
    if not verbose:
        return None

    def show(rec):
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)

    return show


def cmd_train(args) -> int:
    _, prep, doc = _load_pair(args)
    config = _train_config(args, prep)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, report = train(prep.shell, prep.region, config, out / "model.npz", _progress(args.verbose))
    write_series(out / "report.jsonl", report.records, report.summary())
    write_csv(out / "series.csv", report.records)
    (out / "manifest.json").write_text(_dump(_manifest(config, prep, doc)) + "\n")
    summary = {"final": report.final.as_dict(), "collapse_verdict": report.collapse_verdict,
               "sigma_sq": report.sigma_sq}
    print(_dump(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    _, prep, _ = _load_pair(args)
    model, extra = load_checkpoint(args.checkpoint)
    if model.data_dim != prep.shell.data.shape[1]:
        raise FingerprintMismatch(
            f"checkpoint expects {model.data_dim}-dim inputs, dataset has {prep.shell.data.shape[1]}"
        )
    n = len(prep.shell.data)
    if args.split == "holdout":
        _, idx = split_indices(n, extra.get("holdout_fraction", 0.1), model.seeds.get("shuffle", 1))
    else:
        idx = np.arange(n)
    res = evaluate(
        model, prep.shell.data[idx], prep.region.clustering.assignments[idx], prep.region, prep.shell.params
    )
    doc = {"final": res.as_dict(), "collapse_verdict": collapse_verdict(res)}
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(f"avg_kl={res.avg_kl:.6g}")
        print(f"active_units={res.active_units}")
        print(f"feasible_coverage_pct={res.feasible_coverage_pct:.4g}")
        print(f"norm_satisfaction_pct={res.norm_satisfaction_pct:.4g}")
        print(f"collapsed={str(doc['collapse_verdict']).lower()}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    _, prep, doc = _load_pair(args)
    args.variant = "full"
    base = _train_config(args, prep)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(prep, base, seeds, _progress(args.verbose))
    rows = [r for r, _ in results]
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for row, report in results:
        write_series(out / f"report_{row['variant']}_seed{row['seed']}.jsonl", report.records, report.summary())
    ordering = ablation_ordering(rows)
    (out / "manifest.json").write_text(
        _dump(_manifest(base, prep, doc, {"ablation_seeds": seeds})) + "\n"
    )
    print(_dump({"rows": rows, "ordering": {str(k): v for k, v in ordering.items()}}))
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    _, prep, _ = _load_pair(args)
    chk = check_collapse_exclusion(prep.shell.data, prep.region, args.epsilon, args.tol)
    print(f"W={chk.w:.12g}")
    print(f"epsilon={chk.epsilon:.12g}")
    print(f"delta_collapse={chk.delta_collapse:.12g}")
    print(f"l_C(collapse)={chk.l_c_collapse:.12g}  residual={chk.collapse_residual:.3e}")
    print(f"l_C(ideal)={chk.l_c_ideal:.12g}  residual={chk.ideal_residual:.3e}")
    if not prep.region.is_feasible or not chk.precondition:
        print("PRECONDITION UNMET: feasible interval (W, delta_collapse) is empty")
        return EXIT_PRECONDITION
    failures = []
    if chk.collapse_residual > chk.tol:
        failures.append(f"l_C(collapse) - delta_collapse = {chk.l_c_collapse - chk.delta_collapse:.3e}")
    if chk.ideal_residual > chk.tol:
        failures.append(f"l_C(ideal) - W = {chk.l_c_ideal - chk.w:.3e}")
    if not chk.collapse_excluded:
        failures.append("collapse decoder is inside F(C, epsilon)")
    if not chk.ideal_feasible:
        failures.append("ideal decoder is outside F(C, epsilon)")
    if failures:
        print("FAIL")
        for f in failures:
            print(f"  {f}")
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_pair(p):
    p.add_argument("--data", required=True, help="dataset .npz written by synth/import-idx")
    p.add_argument("--region", required=True, help="region JSON written by cluster")


def _add_train_flags(p):
    p.add_argument("--violation", type=float, default=5.0,
                   help="sigma^2 = factor * lambda_max; 0 uses --sigma-sq")
    p.add_argument("--sigma-sq", type=float, default=1.0)
    p.add_argument("--lambda-boundary", type=float, default=200.0)
    p.add_argument("--lambda-norm", type=float, default=200.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta-start", type=float, default=0.1)
    p.add_argument("--beta-end", type=float, default=1.0)
    p.add_argument("--beta-ramp", type=int, default=100)
    p.add_argument("--two-stage", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--stage-one-fraction", type=float, default=0.6)
    p.add_argument("--stage-one-penalties", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0, help="base seed for init/shuffle/noise")
    p.add_argument("--out-dir", required=True)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shellvae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian mixture")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("import-idx", help="convert IDX image/label files to a dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--labels")
    p.add_argument("--subset", type=int, default=5000, help="seeded subset size; 0 keeps all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_idx)

    p = sub.add_parser("cluster", help="shell-transform, run K-means, write the feasible region")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=None, help="clusters; default 8 for synth data, 10 for IDX imports")
    p.add_argument("--rmin", type=float, default=0.85)
    p.add_argument("--rmax", type=float, default=1.0)
    p.add_argument("--shell-seed", type=int, default=3)
    p.add_argument("--kmeans-seed", type=int, default=4)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--skip-transform", action="store_true",
                   help="data is already in shell space; cluster it as-is")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train one constraint variant")
    _add_pair(p)
    p.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default="full")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_pair(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("holdout", "all"), default="holdout")
    p.add_argument("--json", action="store_true", help="machine-readable output only")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train all four constraint variants")
    _add_pair(p)
    p.add_argument("--seeds", default="0,1,2")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate, violation=2.0)

    p = sub.add_parser("verify-theorem", help="check collapse exclusion numerically")
    _add_pair(p)
    p.add_argument("--epsilon", type=float, default=None, help="default (W + delta) / 2")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify_theorem)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"shellvae: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        FileNotFoundError, IdxFormatError, ZeroNormRowError, FingerprintMismatch,
        EmptyClusterError, ConvergenceError, KeyError, ValueError, TrainingError,
    ) as exc:
        print(f"shellvae: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
