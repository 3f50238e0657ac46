"""Experiment runner: paired baseline/treatment runs over a mapping grid.

For every (mapping, seed) cell the baseline (no optimization) and the
treatment share the same tier assignment, model init, and shuffle seeds, so
the only difference between the two runs is the optimization itself.
Results land in a fixed-schema CSV; per-run round logs, per-tier AUC
tables, fairness tables, and figures are written alongside.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import (
    Dataset,
    SplitPolicy,
    infer_schema,
    load_csv,
    schema_from_dict,
    synth_params_from_dict,
    synthesize,
)
from .engine import NONE, HyperParams, OptimizationConfig, train, write_round_log_csv
from .metrics import (
    FairnessReport,
    TierAUC,
    fairness,
    per_tier_auc,
    write_fairness_csv,
    write_tier_auc_csv,
)
from .model import ModelConfig
from .presets import PRESETS, get_preset
from .tiering import TIERS, Tier, dirichlet_tier_map, random_tier_map

CONFIG_VERSION = 1
WORKERS_ENV = "FEDTIER_WORKERS"
DEFAULT_ALPHA_GRID = (0.005, 0.05, 0.5, 5.0, 5000.0)

RESULTS_COLUMNS = [
    "run_id", "mapping", "alpha", "optimization", "seed",
    "auc_total", "auc_low", "auc_mid", "auc_high",
    "rel_low", "rel_mid", "rel_high", "mdac", "rounds", "elapsed_seconds",
]


class ConfigError(ValueError):
    """Experiment config problems, reported with the offending field."""


@dataclass(frozen=True)
class MappingSpec:
    method: str  # "random" | "dirichlet"
    alpha: float | None = None
    balanced: bool = True

    @property
    def tag(self) -> str:
        if self.method == "random":
            return "random"
        return f"dirichlet-a{self.alpha:g}"


@dataclass
class ExperimentConfig:
    dataset: dict
    mappings: list[MappingSpec]
    optimization: str
    opt_config: OptimizationConfig
    hyper: HyperParams
    model: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("results")
    figures: bool = True


def _require(spec: dict, key: str, where: str):
    if key not in spec:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return spec[key]


def parse_optimization(spec) -> tuple[str, OptimizationConfig]:
    """A preset name, or a custom {'variant': ..., 'per_tier': {...}} object."""
    if isinstance(spec, str):
        return spec, get_preset(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"optimization: expected preset name or object, got {spec!r}")
    kwargs = dict(spec)
    variant = kwargs.pop("variant", None)
    if variant is None:
        raise ConfigError("optimization: custom object needs a 'variant' key")
    per_tier = kwargs.pop("per_tier", None)
    if per_tier is not None:
        try:
            per_tier = {Tier(t): v for t, v in per_tier.items()}
        except ValueError as exc:
            raise ConfigError(f"optimization.per_tier: {exc}") from None
    try:
        opt = OptimizationConfig(variant=variant, per_tier=per_tier, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimization: {exc}") from None
    return f"custom-{variant}", opt


def parse_mappings(spec: dict) -> list[MappingSpec]:
    mapping = _require(spec, "mapping", "config")
    if not isinstance(mapping, dict):
        raise ConfigError("mapping: expected an object")
    method = _require(mapping, "method", "mapping")
    balanced = bool(mapping.get("balanced", True))
    if method == "random":
        return [MappingSpec("random")]
    if method != "dirichlet":
        raise ConfigError(f"mapping.method: expected 'random' or 'dirichlet', got {method!r}")
    if "alpha_grid" in spec:
        grid = spec["alpha_grid"]
        if grid is None:
            grid = list(DEFAULT_ALPHA_GRID)
        if not isinstance(grid, list) or not grid:
            raise ConfigError("alpha_grid: expected a non-empty list of alpha values")
        alphas = grid
    else:
        alphas = [_require(mapping, "alpha", "mapping")]
    out = []
    for a in alphas:
        a = float(a)
        if a <= 0:
            raise ConfigError(f"mapping.alpha: must be positive, got {a}")
        out.append(MappingSpec("dirichlet", a, balanced))
    return out


def load_dataset(spec: dict) -> Dataset:
    """Build a dataset from its config object: synthetic params or a CSV."""
    kind = _require(spec, "kind", "dataset")
    if kind == "synthetic":
        params = synth_params_from_dict(_require(spec, "params", "dataset"))
        return synthesize(params, int(spec.get("seed", 0)))
    if kind == "csv":
        path = _require(spec, "path", "dataset")
        if "schema" in spec:
            schema = schema_from_dict(spec["schema"])
        else:
            sidecar = Path(str(path) + ".schema.json")
            if sidecar.exists():
                schema = schema_from_dict(json.loads(sidecar.read_text()))
            else:
                schema = infer_schema(path)
        split = SplitPolicy(float(spec.get("test_fraction", 0.2)))
        threshold = spec.get("rating_threshold")
        return load_csv(
            path,
            schema,
            split,
            rating_threshold=None if threshold is None else float(threshold),
            log_dense=tuple(spec.get("log_dense", ())),
        )
    raise ConfigError(f"dataset.kind: expected 'synthetic' or 'csv', got {kind!r}")


def load_experiment_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {version}")

    dataset = _require(raw, "dataset", "config")
    mappings = parse_mappings(raw)
    opt_name, opt_config = parse_optimization(_require(raw, "optimization", "config"))

    hyper_spec = raw.get("hyper", {})
    known = set(HyperParams.__dataclass_fields__)
    unknown = set(hyper_spec) - known
    if unknown:
        raise ConfigError(f"hyper: unknown keys {sorted(unknown)}")
    try:
        hyper = HyperParams(**hyper_spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"hyper: {exc}") from None

    model_spec = raw.get("model", {})
    allowed = {"embedding_dim", "bottom_hidden", "top_hidden"}
    unknown = set(model_spec) - allowed
    if unknown:
        raise ConfigError(f"model: unknown keys {sorted(unknown)}")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: expected a non-empty list of integers")

    return ExperimentConfig(
        dataset=dataset,
        mappings=mappings,
        optimization=opt_name,
        opt_config=opt_config,
        hyper=hyper,
        model=model_spec,
        seeds=[int(s) for s in seeds],
        output_dir=Path(raw.get("output_dir", "results")),
        figures=bool(raw.get("figures", True)),
    )


def apply_worker_override(hyper: HyperParams) -> HyperParams:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return hyper
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}: expected an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV}: must be >= 1, got {workers}")
    return replace(hyper, workers=workers)


@dataclass
class ResultRow:
    run_id: str
    mapping: str
    alpha: float | None
    optimization: str
    seed: int
    tier_auc: TierAUC
    report: FairnessReport | None  # None for baseline rows
    rounds: int
    elapsed_seconds: float

    def as_csv_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(v)

        rel = {t: None for t in TIERS}
        mdac = None
        if self.report is not None:
            rel = {t: self.report.rel_change_per_tier.get(t) for t in TIERS}
            mdac = self.report.mdac
        return [
            self.run_id,
            self.mapping,
            "" if self.alpha is None else repr(self.alpha),
            self.optimization,
            str(self.seed),
            fmt(self.tier_auc.auc_total),
            *[fmt(self.tier_auc.auc_per_tier[t]) for t in TIERS],
            *[fmt(rel[t]) for t in TIERS],
            fmt(mdac),
            str(self.rounds),
            repr(self.elapsed_seconds),
        ]


def atomic_write(path: Path, write_fn) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)


def write_results_csv(rows: list[ResultRow], path: Path) -> None:
    def write(tmp: Path):
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULTS_COLUMNS)
            for row in rows:
                writer.writerow(row.as_csv_row())

    atomic_write(path, write)


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Execute the (mapping, seed) grid and write all report files."""
    out = config.output_dir
    runs_dir = out / "runs"
    fair_dir = out / "fairness"
    for d in (out, runs_dir, fair_dir):
        d.mkdir(parents=True, exist_ok=True)

    dataset = load_dataset(config.dataset)
    hyper = apply_worker_override(config.hyper)
    model_config = ModelConfig(schema=dataset.schema, **config.model)
    baseline_opt = OptimizationConfig(variant=NONE)

    rows: list[ResultRow] = []
    for mapping in config.mappings:
        for seed in config.seeds:
            if mapping.method == "random":
                assignment = random_tier_map(dataset, seed)
            else:
                assignment = dirichlet_tier_map(dataset, mapping.alpha, seed, mapping.balanced)

            def one_run(opt_name: str, opt: OptimizationConfig) -> tuple[ResultRow, TierAUC]:
                run_id = f"{mapping.tag}-{opt_name}-s{seed}"
                t0 = time.perf_counter()
                params, log = train(dataset, assignment, opt, hyper, seed, model_config)
                elapsed = time.perf_counter() - t0
                tier_auc = per_tier_auc(params, dataset, assignment)
                run_dir = runs_dir / run_id
                run_dir.mkdir(parents=True, exist_ok=True)
                atomic_write(run_dir / "round_log.csv", lambda p: write_round_log_csv(log, p))
                atomic_write(run_dir / "tier_auc.csv", lambda p: write_tier_auc_csv(tier_auc, p))
                row = ResultRow(
                    run_id=run_id,
                    mapping=mapping.tag,
                    alpha=mapping.alpha,
                    optimization=opt_name,
                    seed=seed,
                    tier_auc=tier_auc,
                    report=None,
                    rounds=len(log),
                    elapsed_seconds=elapsed,
                )
                return row, tier_auc

            base_row, base_auc = one_run("none", baseline_opt)
            rows.append(base_row)
            if config.optimization == "none":
                treat_row, treat_auc = base_row, base_auc
            else:
                treat_row, treat_auc = one_run(config.optimization, config.opt_config)
            report = fairness(
                base_auc,
                treat_auc,
                baseline_id=base_row.run_id,
                treatment_id=treat_row.run_id,
            )
            if treat_row is not base_row:
                treat_row.report = report
                rows.append(treat_row)
            else:
                base_row.report = report

            cell = f"{mapping.tag}-{config.optimization}-s{seed}"
            atomic_write(
                fair_dir / f"{cell}_fairness.csv", lambda p: write_fairness_csv(report, p)
            )
            if config.figures:
                from .plotting import save_fairness_figure

                save_fairness_figure(report, fair_dir / f"{cell}_fairness.png", title=cell)

    write_results_csv(rows, out / "results.csv")
    if config.figures:
        from .plotting import save_mdac_summary_figure

        save_mdac_summary_figure(rows, out / "mdac_summary.png")
    return rows
