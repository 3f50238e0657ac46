"""Command-line interface.

Subcommands:
  run      execute a configured experiment grid (baseline + treatment)
  tiermap  build a tier assignment and heterogeneity report for a dataset
  report   compute the fairness report from two per-tier AUC files
  synth    generate a synthetic dataset CSV from a params file

Exit codes: 0 success, 1 usage / config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .data import DatasetError, save_csv, schema_to_dict, synth_params_from_dict, synthesize
from .experiment import (
    ConfigError,
    load_dataset,
    load_experiment_config,
    run_experiment,
    atomic_write,
)
from .metrics import TierAUC, fairness, write_fairness_csv
from .tiering import (
    TIERS,
    Tier,
    dirichlet_tier_map,
    heterogeneity_report,
    random_tier_map,
    write_assignment_csv,
    write_heterogeneity_csv,
)

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedtier", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed list")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p_map = sub.add_parser("tiermap", help="compute a tier assignment")
    p_map.add_argument(
        "--input", required=True,
        help="dataset CSV, or a JSON dataset spec ({'kind': 'csv'|'synthetic', ...})",
    )
    p_map.add_argument("--schema", default=None, help="schema JSON for a CSV input")
    group = p_map.add_mutually_exclusive_group(required=True)
    group.add_argument("--alpha", type=float, help="Dirichlet concentration")
    group.add_argument("--random", action="store_true", help="uniform random mapping")
    p_map.add_argument("--seed", type=int, required=True)
    p_map.add_argument("--out", required=True, help="output directory")
    p_map.add_argument("--no-balance", action="store_true", help="skip tier-size balancing")
    p_map.add_argument("--top-k", type=int, default=10, help="items in the report")
    p_map.add_argument("--no-figures", action="store_true")

    p_rep = sub.add_parser("report", help="fairness report from two AUC files")
    p_rep.add_argument("--baseline", required=True)
    p_rep.add_argument("--treatment", required=True)
    p_rep.add_argument("--out", required=True, help="output CSV path")
    p_rep.add_argument("--no-figures", action="store_true")

    p_syn = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p_syn.add_argument("--params", required=True, help="synth params JSON")
    p_syn.add_argument("--seed", type=int, required=True)
    p_syn.add_argument("--out", required=True, help="output CSV path")
    return parser


def _tiermap_dataset(args):
    path = Path(args.input)
    if path.suffix.lower() == ".json":
        spec = json.loads(path.read_text())
        return load_dataset(spec)
    spec = {"kind": "csv", "path": str(path)}
    if args.schema:
        spec["schema"] = json.loads(Path(args.schema).read_text())
    return load_dataset(spec)


def cmd_tiermap(args) -> int:
    if args.alpha is not None and args.alpha <= 0:
        raise ConfigError(f"--alpha must be positive, got {args.alpha}")
    dataset = _tiermap_dataset(args)
    if args.random:
        assignment = random_tier_map(dataset, args.seed)
    else:
        assignment = dirichlet_tier_map(
            dataset, args.alpha, args.seed, balanced=not args.no_balance
        )
    report = heterogeneity_report(dataset, assignment, top_k=args.top_k)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "tier_assignment.csv", lambda p: write_assignment_csv(assignment, p))
    atomic_write(out / "heterogeneity.csv", lambda p: write_heterogeneity_csv(report, p))
    if not args.no_figures:
        from .plotting import save_heterogeneity_figure

        tag = "random" if args.random else f"alpha={args.alpha:g}"
        save_heterogeneity_figure(report, out / "heterogeneity.png", title=tag)

    sizes = report.tier_sizes
    print(f"tv_distance: {report.tv_distance:.4f}")
    print("tier sizes: " + ", ".join(f"{t.value}={sizes[t]}" for t in TIERS))
    if report.degenerate_tiers:
        print(
            "degenerate tiers (no clicks): "
            + ", ".join(t.value for t in report.degenerate_tiers)
        )
    return 0


def _read_tier_aucs(path: Path) -> dict[Tier, float | None]:
    """Per-tier AUCs from a long (tier,auc) or wide (auc_low,...) CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetError(f"{path}: empty file")
        names = set(reader.fieldnames)
        rows = list(reader)
    wide = [f"auc_{t.value}" for t in TIERS]
    if any(c in names for c in wide):
        missing = [c for c in wide if c not in names]
        if missing:
            raise DatasetError(f"{path}: missing column {missing[0]!r}")
        if len(rows) != 1:
            raise DatasetError(f"{path}: expected exactly one data row, got {len(rows)}")
        row = rows[0]
        return {
            t: (float(row[c]) if row[c] else None) for t, c in zip(TIERS, wide)
        }
    if "tier" not in names or "auc" not in names:
        raise DatasetError(
            f"{path}: expected columns tier/auc or auc_low/auc_mid/auc_high"
        )
    by_value = {t.value: t for t in TIERS}
    out: dict[Tier, float | None] = {t: None for t in TIERS}
    seen = set()
    for row in rows:
        name = row["tier"]
        if name in by_value:
            out[by_value[name]] = float(row["auc"]) if row["auc"] else None
            seen.add(name)
    missing = [t.value for t in TIERS if t.value not in seen]
    if missing:
        raise DatasetError(f"{path}: missing tier rows {missing}")
    return out


def cmd_report(args) -> int:
    base = _read_tier_aucs(Path(args.baseline))
    treat = _read_tier_aucs(Path(args.treatment))
    report = fairness(
        TierAUC(None, base, {t: 0 for t in TIERS}),
        TierAUC(None, treat, {t: 0 for t in TIERS}),
        baseline_id=str(args.baseline),
        treatment_id=str(args.treatment),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, lambda p: write_fairness_csv(report, p))
    if not args.no_figures:
        from .plotting import save_fairness_figure

        save_fairness_figure(report, out.with_suffix(".png"))
    for t in TIERS:
        if t in report.rel_change_per_tier:
            print(f"rel_change {t.value}: {100.0 * report.rel_change_per_tier[t]:+.2f}%")
    print(f"MDAC: {100.0 * report.mdac:.2f}%")
    return 0


def cmd_synth(args) -> int:
    params = synth_params_from_dict(json.loads(Path(args.params).read_text()))
    dataset = synthesize(params, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, lambda p: save_csv(dataset, p))
    sidecar = Path(str(out) + ".schema.json")
    sidecar.write_text(json.dumps(schema_to_dict(dataset.schema), indent=2) + "\n")
    n_rows = sum(len(c.train) + len(c.test) for c in dataset.clients.values())
    print(f"wrote {n_rows} interactions for {dataset.n_clients} clients to {out}")
    print(f"schema sidecar: {sidecar}")
    return 0


def cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.out is not None:
        config.output_dir = Path(args.out)
    if args.no_figures:
        config.figures = False
    rows = run_experiment(config)
    print(f"wrote {len(rows)} result rows to {config.output_dir / 'results.csv'}")
    for row in rows:
        if row.report is not None:
            print(f"{row.run_id}: MDAC {100.0 * row.report.mdac:.2f}%")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "tiermap": cmd_tiermap,
        "report": cmd_report,
        "synth": cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
