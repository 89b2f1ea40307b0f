"""Subcommand front end: ingest, estimate, repair, smooth, rank, aggregate,
simulate, validate.

Every writing command takes --out DIR, creates it if needed, and leaves a
manifest.json recording the command line, input digests, seed, and timings.
All CSV floats are written with repr() so they round-trip losslessly and
reruns with the same inputs and seed are byte-identical (the manifest's
timing field is the one intentional exception).
"""
from __future__ import annotations

import argparse
import csv
import gzip
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (
    AggregationError,
    aggregate_admin1,
    aggregate_national,
    design_weight_fractions,
    load_population_fractions,
)
from .augment import (
    AugmentationError,
    PhantomPrior,
    Strategy,
    apply_strategy,
    national_priors,
)
from .data import SurveyDataError, extend_domain, load_survey, validate
from .direct import DomainEstimate, Legality
from .fay_herriot import (
    FHFit,
    FHInput,
    FitError,
    build_scaled_icar,
    fit_bym2_mcmc,
    fit_iid_eb,
    posterior_prevalence,
    rank_from_draws,
)
from .interval import BoundaryEstimateError, estimate_interval
from .simulate import ConfigError, SimulationError, parse_config, run_study

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64

ESTIMATE_COLUMNS = (
    "domain",
    "p_hat",
    "variance",
    "se",
    "cv",
    "legality",
    "n_clusters",
    "method",
    "phantom_strata",
    "phantom_mean",
    "phantom_weight",
    "lower",
    "upper",
    "level",
    "admin1",
)

METRIC_COLUMNS = (
    "area",
    "admin1",
    "strategy",
    "level",
    "s_i",
    "coverage",
    "mean_width",
    "mean_interval_score",
    "mean_score_legal",
    "n_legal",
    "mean_score_illegal",
    "n_illegal",
    "mean_p_hat",
    "mean_bias",
    "rmse",
    "true_p",
)


class CliError(Exception):
    """Input-level failure carrying its intended exit code."""

    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _write_csv_gz(path: Path, header, rows) -> None:
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            with io.TextIOWrapper(gz, encoding="utf-8", newline="") as txt:
                writer = csv.writer(txt, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_cell(v) for v in row])


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _Manifest:
    """Collects provenance while a command runs, then writes manifest.json."""

    def __init__(self, subcommand: str, argv: list[str]):
        self.subcommand = subcommand
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.seed: int | None = None
        self.t0 = time.monotonic()

    def add_input(self, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise CliError(f"input file not found: {path}")
        self.inputs[str(path)] = _sha256(path)
        return path

    def write(self, outdir: Path) -> None:
        body = {
            "tool": "smallarea",
            "version": __version__,
            "command": self.subcommand,
            "argv": self.argv,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            **self.extra,
            "elapsed_seconds": round(time.monotonic() - self.t0, 3),
        }
        with open(outdir / "manifest.json", "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=False)
            fh.write("\n")


def _outdir(raw: str) -> Path:
    out = Path(raw)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_class_overrides(pairs: list[str], flag: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in pairs:
        if "=" not in item:
            raise CliError(f"{flag} expects CLASS=VALUE, got {item!r}")
        cls, _, raw = item.partition("=")
        try:
            out[cls.strip()] = float(raw)
        except ValueError as exc:
            raise CliError(f"{flag}: bad value in {item!r}") from exc
    return out


def _apply_prior_overrides(
    priors: dict[str, PhantomPrior],
    means: dict[str, float],
    weights: dict[str, float],
) -> dict[str, PhantomPrior]:
    classes = set(priors) | set(means) | set(weights)
    out = {}
    for cls in classes:
        base = priors.get(cls)
        mean = means.get(cls, base.mean if base else None)
        weight = weights.get(cls, base.weight if base else None)
        if mean is None or weight is None:
            raise CliError(
                f"class {cls!r} is not in the survey, so both --phantom-mean "
                "and --phantom-weight must be given for it"
            )
        out[cls] = PhantomPrior(urban_rural=cls, mean=mean, weight=weight)
    return out


def _estimate_rows(
    estimates: dict[str, DomainEstimate],
    phantoms: dict,
    level: float,
):
    for domain_id in sorted(estimates):
        est = estimates[domain_id]
        added = phantoms.get(domain_id, ())
        if est.p_hat is None:
            lower = upper = None
        else:
            ci = estimate_interval(est.p_hat, est.variance, level)
            lower, upper = ci.lower, ci.upper
        yield (
            domain_id,
            est.p_hat,
            est.variance,
            est.se,
            est.cv,
            est.legality.value,
            est.n_clusters_in_domain,
            est.method,
            ";".join(ph.urban_rural for ph in added),
            ";".join(f"{ph.urban_rural}={ph.mean!r}" for ph in added),
            ";".join(f"{ph.urban_rural}={ph.weight!r}" for ph in added),
            lower,
            upper,
            level,
            est.admin1_id,
        )


def _phantom_rows(data, result):
    """Table rows describing every repaired domain: its real clusters plus
    the phantoms appended to them."""
    for domain_id in sorted(result.phantoms):
        ext = extend_domain(data, domain_id, allow_missing=True)
        for block in ext.blocks:
            for j in range(block.cluster_ids.shape[0]):
                wt = float(block.weight_totals[j])
                events = int(block.events[j])
                n_units = int(block.n_units[j])
                yield (
                    domain_id,
                    ext.admin1_id,
                    block.urban_rural,
                    block.cluster_ids[j],
                    wt,
                    n_units,
                    events,
                    events / n_units if n_units else None,
                    False,
                    None,
                )
        for ph in result.phantoms[domain_id]:
            yield (
                domain_id,
                ph.admin1_id,
                ph.urban_rural,
                ph.cluster_id,
                ph.weight,
                None,
                None,
                None,
                True,
                ph.mean,
            )


def _cmd_estimate(args, manifest: _Manifest) -> int:
    path = manifest.add_input(Path(args.input))
    data = load_survey(path, schema=args.schema)
    priors = national_priors(data)
    means = _parse_class_overrides(args.phantom_mean, "--phantom-mean")
    weights = _parse_class_overrides(args.phantom_weight, "--phantom-weight")
    if means or weights:
        priors = _apply_prior_overrides(priors, means, weights)
    result = apply_strategy(data, args.fix, priors=priors)
    out = _outdir(args.out)
    _write_csv(
        out / "estimates.csv",
        ESTIMATE_COLUMNS,
        _estimate_rows(result.estimates, result.phantoms, args.level),
    )
    manifest.outputs.append("estimates.csv")
    _write_csv(
        out / "phantoms.csv",
        (
            "domain",
            "admin1",
            "urban_rural",
            "cluster",
            "weight",
            "n_units",
            "events",
            "p_cluster",
            "is_phantom",
            "prior_mean",
        ),
        _phantom_rows(data, result),
    )
    manifest.outputs.append("phantoms.csv")
    manifest.extra["strategy"] = Strategy(args.fix).value
    manifest.extra["n_domains"] = len(result.estimates)
    manifest.extra["n_repaired"] = len(result.phantoms)
    manifest.write(out)
    return EXIT_OK


def _load_estimates(path: Path) -> dict[str, DomainEstimate]:
    """Read estimates.csv back into domain estimates."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"domain", "p_hat", "variance", "legality", "n_clusters", "admin1"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise CliError(f"{path}: needs columns {sorted(needed)}")
        out: dict[str, DomainEstimate] = {}
        for row in reader:
            out[row["domain"]] = DomainEstimate(
                domain_id=row["domain"],
                admin1_id=row["admin1"] or None,
                p_hat=float(row["p_hat"]) if row["p_hat"] else None,
                variance=float(row["variance"]) if row["variance"] else None,
                legality=Legality(row["legality"]),
                n_clusters_in_domain=int(row["n_clusters"]),
                method=row.get("method") or "hajek",
            )
    if not out:
        raise CliError(f"{path}: no estimate rows")
    return out


def _load_adjacency(path: Path) -> list[tuple[str, str]]:
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CliError(f"{path}: empty adjacency file")
        if [h.strip() for h in header[:2]] != ["area_a", "area_b"]:
            raise CliError(f"{path}: expected header area_a,area_b")
        for row in reader:
            if len(row) < 2:
                raise CliError(f"{path}: bad edge row {row!r}")
            edges.append((row[0], row[1]))
    return edges


def _load_roster(path: Path) -> dict[str, str | None]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "area_id" not in reader.fieldnames:
            raise CliError(f"{path}: needs an area_id column")
        has_admin1 = "admin1_id" in reader.fieldnames
        out = {}
        for row in reader:
            out[row["area_id"]] = row["admin1_id"] if has_admin1 else None
    return out


def _estimates_file(raw: str) -> Path:
    """Accept either an estimate output directory or the CSV itself."""
    path = Path(raw)
    if path.is_dir():
        return path / "estimates.csv"
    return path


def _cmd_smooth(args, manifest: _Manifest) -> int:
    est_path = manifest.add_input(_estimates_file(args.estimates))
    estimates = _load_estimates(est_path)
    extra = {}
    if args.areas:
        extra = _load_roster(manifest.add_input(Path(args.areas)))
    fh_input = FHInput.from_estimates(estimates, extra_areas=extra)
    manifest.seed = args.seed

    if args.model == "bym2":
        if not args.adjacency:
            raise CliError("--model bym2 needs --adjacency")
        edges = _load_adjacency(manifest.add_input(Path(args.adjacency)))
        spatial = build_scaled_icar(fh_input.area_ids, edges)
        fit = fit_bym2_mcmc(
            fh_input,
            spatial,
            nested=args.nested,
            chains=args.chains,
            iterations=args.iterations,
            burn_in=args.burn_in,
            seed=args.seed,
            fix_phi=args.fix_phi,
        )
    else:
        fit = fit_iid_eb(
            fh_input, nested=args.nested, ndraws=args.draws, seed=args.seed
        )
    for note in fit.warnings:
        print(f"warning: {note}", file=sys.stderr)

    summaries = posterior_prevalence(fit)
    out = _outdir(args.out)
    _write_csv(
        out / "smoothed.csv",
        ("area", "admin1", "missing", "median", "q2_5", "q10", "q90", "q97_5"),
        (
            (
                s.area_id,
                s.admin1_id,
                s.missing,
                s.median,
                s.q2_5,
                s.q10,
                s.q90,
                s.q97_5,
            )
            for s in summaries
        ),
    )
    manifest.outputs.append("smoothed.csv")
    _write_csv(
        out / "hyperparameters.csv",
        ("parameter", "mean", "sd", "q2_5", "median", "q97_5"),
        (
            (r["parameter"], r["mean"], r["sd"], r["q2_5"], r["median"], r["q97_5"])
            for r in fit.hyperparameter_summary()
        ),
    )
    manifest.outputs.append("hyperparameters.csv")
    np.save(out / "smoothed_draws.npy", fit.theta_draws)
    manifest.outputs.append("smoothed_draws.npy")
    manifest.extra["model"] = fit.model
    manifest.extra["nested"] = fit.nested
    manifest.extra["n_draws"] = fit.n_draws
    manifest.extra["diagnostics"] = fit.diagnostics
    manifest.extra["warnings"] = fit.warnings
    manifest.write(out)
    return EXIT_OK


def _load_smoothed(dirpath: Path) -> FHFit:
    """Rebuild a draw container from a smooth command's output directory."""
    table = dirpath / "smoothed.csv"
    draws_path = dirpath / "smoothed_draws.npy"
    if not table.exists() or not draws_path.exists():
        raise CliError(
            f"{dirpath}: needs smoothed.csv and smoothed_draws.npy "
            "(the smooth command writes both)"
        )
    area_ids: list[str] = []
    admin1_ids: list[str | None] = []
    missing: list[bool] = []
    with open(table, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            area_ids.append(row["area"])
            admin1_ids.append(row["admin1"] or None)
            missing.append(row["missing"] == "1")
    draws = np.load(draws_path)
    if draws.ndim != 2 or draws.shape[1] != len(area_ids):
        raise CliError(
            f"{draws_path}: draw matrix is {draws.shape}, expected "
            f"(ndraws, {len(area_ids)})"
        )
    return FHFit(
        model="loaded",
        nested=False,
        area_ids=tuple(area_ids),
        admin1_ids=tuple(admin1_ids),
        missing=np.array(missing, dtype=bool),
        theta_draws=draws,
    )


def _cmd_rank(args, manifest: _Manifest) -> int:
    dirpath = Path(args.smoothed)
    if not dirpath.is_dir():
        raise CliError(f"--smoothed expects a smooth output directory: {dirpath}")
    fit = _load_smoothed(dirpath)
    manifest.add_input(dirpath / "smoothed.csv")
    manifest.add_input(dirpath / "smoothed_draws.npy")
    try:
        fractions = tuple(float(x) for x in args.bands.split(","))
    except ValueError as exc:
        raise CliError(f"--bands expects comma-separated fractions") from exc
    table = rank_from_draws(fit.area_ids, fit.prevalence_draws(), fractions)
    out = _outdir(args.out)
    n_bands = len(table.sizes)
    header = ["area", "median_prevalence"] + [
        f"band_{i + 1}" for i in range(n_bands)
    ]
    rows = (
        [table.area_ids[i], float(table.median_prevalence[i])]
        + [float(p) for p in table.probabilities[i]]
        for i in range(len(table.area_ids))
    )
    _write_csv(out / "ranking.csv", header, rows)
    manifest.outputs.append("ranking.csv")
    manifest.extra["band_fractions"] = list(table.fractions)
    manifest.extra["band_sizes"] = list(table.sizes)
    manifest.write(out)
    return EXIT_OK


def _cmd_aggregate(args, manifest: _Manifest) -> int:
    if bool(args.estimates) == bool(args.smoothed):
        raise CliError("pass exactly one of --estimates or --smoothed")
    if bool(args.fractions) == bool(args.from_weights):
        raise CliError("pass exactly one of --fractions or --from-weights")

    if args.fractions:
        fractions = load_population_fractions(
            manifest.add_input(Path(args.fractions))
        )
    else:
        survey = load_survey(
            manifest.add_input(Path(args.from_weights)), schema=args.schema
        )
        fractions = design_weight_fractions(survey)

    if args.estimates:
        source = _load_estimates(manifest.add_input(_estimates_file(args.estimates)))
    else:
        dirpath = Path(args.smoothed)
        source = _load_smoothed(dirpath)
        manifest.add_input(dirpath / "smoothed.csv")
        manifest.add_input(dirpath / "smoothed_draws.npy")

    rows = []
    admin1 = aggregate_admin1(source, fractions)
    if args.level in ("admin1", "both"):
        rows.extend(admin1)
    if args.level in ("national", "both"):
        rows.append(aggregate_national(admin1, fractions))
    out = _outdir(args.out)
    _write_csv(
        out / "aggregates.csv",
        ("level", "group", "point", "q2_5", "q97_5"),
        ((r.level, r.group_id, r.point, r.q2_5, r.q97_5) for r in rows),
    )
    manifest.outputs.append("aggregates.csv")
    manifest.extra["fraction_source"] = fractions.source
    manifest.write(out)
    return EXIT_OK


def _cmd_simulate(args, manifest: _Manifest) -> int:
    cfg_path = manifest.add_input(Path(args.config))
    cfg = parse_config(cfg_path)
    manifest.seed = args.seed
    levels = tuple(float(x) for x in args.levels.split(","))
    strategies = tuple(s.strip() for s in args.strategies.split(","))
    results = run_study(
        cfg,
        reps=args.reps,
        seed=args.seed,
        strategies=strategies,
        levels=levels,
        workers=args.workers,
    )
    out = _outdir(args.out)
    _write_csv(
        out / "metrics.csv",
        METRIC_COLUMNS,
        ([row[c] for c in METRIC_COLUMNS] for row in results.metrics),
    )
    manifest.outputs.append("metrics.csv")

    stratum_header: list[str] = []
    for row in results.stratum_summary:
        for key in row:
            if key not in stratum_header:
                stratum_header.append(key)
    _write_csv(
        out / "stratum_summary.csv",
        stratum_header,
        ([row.get(c) for c in stratum_header] for row in results.stratum_summary),
    )
    manifest.outputs.append("stratum_summary.csv")

    _write_csv_gz(
        out / "replicates.csv.gz", results.replicate_columns, results.replicates
    )
    manifest.outputs.append("replicates.csv.gz")
    manifest.extra["config_name"] = cfg.name
    manifest.extra["n_replicates"] = results.n_replicates
    manifest.extra["levels"] = list(levels)
    manifest.extra["strategies"] = [s for s in strategies]
    manifest.write(out)
    return EXIT_OK


def _cmd_validate(args, manifest: _Manifest) -> int:
    path = manifest.add_input(Path(args.input))
    data = load_survey(path, schema=args.schema)
    report = validate(data)
    print(report.to_text())
    return EXIT_OK if not report.violations else EXIT_INPUT


def build_parser() -> _Parser:
    parser = _Parser(prog="smallarea", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("estimate", help="direct estimates with optional repair")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", choices=("unit", "cluster"), default="unit")
    p.add_argument(
        "--fix",
        choices=tuple(s.value for s in Strategy),
        default=Strategy.MIXED.value,
    )
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--phantom-mean", action="append", default=[], metavar="CLASS=V")
    p.add_argument("--phantom-weight", action="append", default=[], metavar="CLASS=V")
    p.add_argument("--out", required=True)

    p = sub.add_parser("smooth", help="area-level smoothing of estimates")
    p.add_argument("--estimates", required=True)
    p.add_argument("--model", choices=("iid", "bym2"), required=True)
    p.add_argument("--nested", action="store_true")
    p.add_argument("--adjacency")
    p.add_argument("--areas", help="roster CSV adding areas absent from estimates")
    p.add_argument("--draws", type=int, default=4000)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iterations", type=int, default=2500)
    p.add_argument("--burn-in", type=int, default=500, dest="burn_in")
    p.add_argument("--fix-phi", type=float, default=None, dest="fix_phi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rank", help="posterior ranking band probabilities")
    p.add_argument("--smoothed", required=True, help="smooth output directory")
    p.add_argument("--bands", default="0.2,0.6,0.2")
    p.add_argument("--out", required=True)

    p = sub.add_parser("aggregate", help="roll areas up to admin1 or national")
    p.add_argument("--estimates")
    p.add_argument("--smoothed", help="smooth output directory")
    p.add_argument("--fractions", help="population CSV")
    p.add_argument("--from-weights", dest="from_weights", help="survey CSV")
    p.add_argument("--schema", choices=("unit", "cluster"), default="unit")
    p.add_argument("--level", choices=("admin1", "national", "both"), default="both")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="replicated sampling study")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--levels", default="0.8")
    p.add_argument("--strategies", default="all_unfixed,all_fixed,mixed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="structural checks on a survey file")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", choices=("unit", "cluster"), default="unit")

    return parser


_HANDLERS = {
    "estimate": _cmd_estimate,
    "smooth": _cmd_smooth,
    "rank": _cmd_rank,
    "aggregate": _cmd_aggregate,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = _Manifest(args.subcommand, argv)
    try:
        return _HANDLERS[args.subcommand](args, manifest)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FitError, AugmentationError, BoundaryEstimateError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SurveyDataError, ConfigError, AggregationError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entrypoint()
