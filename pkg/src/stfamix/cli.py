"""Command-line interface: CSV in, JSON/CSV out.

Three subcommands: ``simulate`` draws labelled data from a skew-t factor
mixture, ``fit`` runs the BIC grid search on a CSV, ``evaluate`` scores
predicted against true labels.  Every output directory receives a manifest
sufficient to reproduce the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aecm import FitConfig, e_step
from .distributions import LowRankCov, SkewTParams, sample_skew_t
from .errors import (
    DataError,
    DomainError,
    FitFailureError,
    NumericalError,
)
from .model import ALL_CONSTRAINTS, ConstraintId, count_free_params
from .selection import (
    GridSpec,
    adjusted_rand_index,
    confusion_table,
    grid_search,
)

__all__ = [
    "Dataset",
    "RunManifest",
    "ingest_csv",
    "cmd_simulate",
    "cmd_fit",
    "cmd_evaluate",
    "main",
    "run",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus column names; labels held out for evaluation."""

    values: np.ndarray
    column_names: tuple[str, ...]
    labels: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit."""

    command: str
    input_path: str | None
    columns: tuple[str, ...] | None
    label_column: str | None
    grid: dict | None
    config: dict | None
    outputs: tuple[str, ...]
    seed: int
    tool_version: str = __version__


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract reserves 2 for
    # data errors, so route usage problems through our own exception.
    def error(self, message):
        raise _UsageError(message)


def _format_value(value: float) -> str:
    return f"{value:.17g}"


def ingest_csv(
    path: str | Path,
    feature_columns: list[str] | None = None,
    label_column: str | None = None,
) -> Dataset:
    """Read a header-bearing CSV into a finite feature matrix.

    ``feature_columns`` defaults to every column except the label column.
    Any missing, non-numeric or non-finite cell is reported with its data
    row number and column name.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty; a header row is required")
        header = [name.strip() for name in header]
        if feature_columns is None:
            feature_columns = [c for c in header if c != label_column]
        missing = [c for c in feature_columns if c not in header]
        if label_column is not None and label_column not in header:
            missing.append(label_column)
        if missing:
            raise DataError(f"columns not present in {path}: {', '.join(missing)}")
        indices = [header.index(c) for c in feature_columns]
        label_index = header.index(label_column) if label_column else None

        rows: list[list[float]] = []
        labels: list[str] = []
        for row_number, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {row_number} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for col_idx, name in zip(indices, feature_columns):
                cell = row[col_idx].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric cell at row {row_number}, column {name!r}: "
                        f"{cell!r}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(
                        f"non-finite value at row {row_number}, column {name!r}"
                    )
                parsed.append(value)
            rows.append(parsed)
            if label_index is not None:
                labels.append(row[label_index].strip())
    if not rows:
        raise DataError(f"{path} contains no data rows")
    values = np.asarray(rows, dtype=float)
    if values.shape[0] <= values.shape[1]:
        warnings.warn(
            f"{path}: only {values.shape[0]} rows for {values.shape[1]} columns",
            stacklevel=2,
        )
    return Dataset(
        values=values,
        column_names=tuple(feature_columns),
        labels=tuple(labels) if label_index is not None else None,
    )


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as handle:
        json.dump(asdict(manifest), handle, indent=2)
        handle.write("\n")


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

def sim13_preset() -> dict:
    """Two well-separated, strongly skewed 13-dimensional components.

    Skewness 30 in every coordinate makes each component a long asymmetric
    needle along the all-ones direction; the location offset keeps the two
    needles clearly apart so a two-component model is unambiguous.
    """
    p = 13
    return {
        "q": 1,
        "components": [
            {
                "n": 30,
                "mu": [0.0] * p,
                "loadings": [1.0] * p,
                "psi_diag": [1.0] * p,
                "alpha": [30.0] * p,
                "nu": 100.0,
            },
            {
                "n": 30,
                "mu": [40.0] * p,
                "loadings": [1.0] * p,
                "psi_diag": [1.0] * p,
                "alpha": [30.0] * p,
                "nu": 100.0,
            },
        ],
    }


def _component_from_schema(entry: dict, q: int) -> tuple[int, SkewTParams]:
    try:
        n = int(entry["n"])
        mu = np.asarray(entry["mu"], dtype=float)
        p = mu.size
        loadings = np.asarray(entry["loadings"], dtype=float).reshape(p, q)
        psi = np.asarray(entry["psi_diag"], dtype=float)
        alpha = np.asarray(entry["alpha"], dtype=float)
        nu = float(entry["nu"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed simulation component: {exc}") from exc
    params = SkewTParams(mu, LowRankCov(loadings, psi), alpha, nu)
    return n, params


def cmd_simulate(
    out_dir: str | Path,
    seed: int,
    preset: str | None = "sim13",
    params_path: str | Path | None = None,
) -> tuple[Path, Path]:
    """Write features.csv and labels.csv drawn from a skew-t mixture."""
    if params_path is not None:
        with Path(params_path).open(encoding="utf-8") as handle:
            schema = json.load(handle)
    elif preset == "sim13":
        schema = sim13_preset()
    else:
        raise DataError(f"unknown preset {preset!r}")
    q = int(schema.get("q", 1))
    blocks = []
    labels = []
    for index, entry in enumerate(schema["components"], start=1):
        n, params = _component_from_schema(entry, q)
        if n < 1:
            raise DataError("each component needs n >= 1")
        blocks.append(sample_skew_t(params, n, seed + index))
        labels.extend([index] * n)
    data = np.vstack(blocks)
    p = data.shape[1]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features_path = out / "features.csv"
    labels_path = out / "labels.csv"
    _write_csv(
        features_path,
        [f"v{j + 1}" for j in range(p)],
        ([_format_value(v) for v in row] for row in data),
    )
    _write_csv(labels_path, ["label"], ([str(v)] for v in labels))
    _write_manifest(
        out,
        RunManifest(
            command="simulate",
            input_path=str(params_path) if params_path else f"preset:{preset}",
            columns=tuple(f"v{j + 1}" for j in range(p)),
            label_column="label",
            grid=None,
            config=None,
            outputs=(str(features_path), str(labels_path)),
            seed=seed,
        ),
    )
    return features_path, labels_path


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------

def _model_to_json(model, rho: int) -> dict:
    return {
        "g": model.g,
        "q": model.q,
        "constraint": model.constraint.id,
        "loglik": model.loglik,
        "bic": model.bic,
        "rho": rho,
        "components": [
            {
                "pi": comp.pi,
                "mu": comp.mu.tolist(),
                "loadings": comp.loadings.ravel().tolist(),  # row-major
                "psi_diag": comp.psi_diag.tolist(),
                "alpha": comp.alpha.tolist(),
                "nu": comp.nu,
            }
            for comp in model.components
        ],
    }


def cmd_fit(
    dataset: Dataset,
    spec: GridSpec,
    out_dir: str | Path,
    input_path: str | None = None,
    label_column: str | None = None,
) -> Path:
    """Run the grid search and write model JSON, BIC table and labels."""
    result = grid_search(dataset.values, spec)
    best = result.best
    model = best.report.model
    _, rho = count_free_params(model.constraint, model.p, model.q, model.g)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "best_model.json"
    with model_path.open("w", encoding="utf-8") as handle:
        json.dump(_model_to_json(model, rho), handle, indent=2)
        handle.write("\n")

    table_path = out / "bic_table.csv"
    _write_csv(
        table_path,
        ["g", "q", "model", "bic", "loglik", "converged"],
        (
            [
                entry.g,
                entry.q,
                entry.constraint.id,
                _format_value(entry.bic),
                _format_value(entry.loglik),
                str(entry.converged).lower(),
            ]
            for entry in result.entries
        ),
    )

    responsibilities = e_step(dataset.values, model).z
    labels_path = out / "classification.csv"
    _write_csv(
        labels_path,
        ["label"] + [f"resp_{j + 1}" for j in range(model.g)],
        (
            [int(np.argmax(row)) + 1] + [_format_value(v) for v in row]
            for row in responsibilities
        ),
    )

    _write_manifest(
        out,
        RunManifest(
            command="fit",
            input_path=input_path,
            columns=dataset.column_names,
            label_column=label_column,
            grid={
                "g_values": list(spec.g_values),
                "q_values": list(spec.q_values),
                "models": [c.id for c in spec.constraints],
            },
            config={
                "max_iter": spec.config.max_iter,
                "aitken_tol": spec.config.aitken_tol,
                "nu_bounds": list(spec.config.nu_bounds),
                "kmeans_restarts": spec.config.kmeans_restarts,
            },
            outputs=(str(model_path), str(table_path), str(labels_path)),
            seed=spec.config.seed,
        ),
    )
    return model_path


# ----------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------

def _read_label_column(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty; a header row is required")
        labels = [row[0].strip() for row in reader if row and row[0].strip()]
    if not labels:
        raise DataError(f"{path} contains no labels")
    return labels


def cmd_evaluate(
    predicted_path: str | Path,
    truth_path: str | Path,
    out_dir: str | Path | None = None,
) -> float:
    """Print (and optionally write) the ARI and the confusion table."""
    predicted = _read_label_column(predicted_path)
    truth = _read_label_column(truth_path)
    if len(predicted) != len(truth):
        raise DataError(
            f"label files disagree in length: {len(truth)} vs {len(predicted)}"
        )
    table = confusion_table(truth, predicted)
    ari = adjusted_rand_index(truth, predicted)

    truth_values = np.unique(truth)
    pred_values = np.unique(predicted)
    print(f"ARI: {ari:.3f}")
    print("confusion (rows = true, columns = predicted):")
    header = "\t" + "\t".join(str(v) for v in pred_values)
    print(header)
    for name, row in zip(truth_values, table):
        print(str(name) + "\t" + "\t".join(str(int(v)) for v in row))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "confusion.csv",
            ["true"] + [str(v) for v in pred_values],
            (
                [str(name)] + [str(int(v)) for v in row]
                for name, row in zip(truth_values, table)
            ),
        )
        _write_csv(out / "metrics.csv", ["ari"], [[f"{ari:.6f}"]])
        _write_manifest(
            out,
            RunManifest(
                command="evaluate",
                input_path=f"{truth_path},{predicted_path}",
                columns=None,
                label_column=None,
                grid=None,
                config=None,
                outputs=(str(out / "confusion.csv"), str(out / "metrics.csv")),
                seed=0,
            ),
        )
    return ari


# ----------------------------------------------------------------------
# argument parsing / dispatch
# ----------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(
        prog="stfamix",
        description=(
            "Model-based clustering with parsimonious mixtures of skew-t "
            "factor analyzers"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw labelled data from a mixture")
    sim.add_argument("--preset", default="sim13", help="named preset (sim13)")
    sim.add_argument("--params", default=None, help="JSON parameter file")
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--out-dir", required=True)

    fit_p = sub.add_parser("fit", help="grid search over mixture models")
    fit_p.add_argument("--input", required=True, help="feature CSV with header")
    fit_p.add_argument(
        "--columns",
        default=None,
        help="comma-separated feature columns (default: all non-label columns)",
    )
    fit_p.add_argument("--label-column", default=None)
    fit_p.add_argument("--g-min", type=int, default=1)
    fit_p.add_argument("--g-max", type=int, default=3)
    fit_p.add_argument("--q-min", type=int, default=1)
    fit_p.add_argument("--q-max", type=int, default=1)
    fit_p.add_argument(
        "--models",
        default="all",
        help='comma list of the 8 model ids, or "all"',
    )
    fit_p.add_argument("--seed", type=int, default=1)
    fit_p.add_argument("--max-iter", type=int, default=500)
    fit_p.add_argument("--aitken-tol", type=float, default=1e-2)
    fit_p.add_argument("--out-dir", required=True)

    ev = sub.add_parser("evaluate", help="score predicted against true labels")
    ev.add_argument("--predicted", required=True, help="predicted-label CSV")
    ev.add_argument("--truth", required=True, help="true-label CSV")
    ev.add_argument("--out-dir", default=None)
    return parser


def _parse_models(text: str) -> tuple[ConstraintId, ...]:
    if text.strip().lower() == "all":
        return ALL_CONSTRAINTS
    return tuple(ConstraintId.from_id(part) for part in text.split(","))


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        cmd_simulate(
            out_dir=args.out_dir,
            seed=args.seed,
            preset=None if args.params else args.preset,
            params_path=args.params,
        )
        return EXIT_OK
    if args.command == "fit":
        if args.g_min < 1 or args.g_min > args.g_max or args.q_min > args.q_max:
            raise _UsageError("invalid --g-min/--g-max/--q-min/--q-max ranges")
        columns = (
            [c.strip() for c in args.columns.split(",")] if args.columns else None
        )
        dataset = ingest_csv(args.input, columns, args.label_column)
        spec = GridSpec(
            g_values=tuple(range(args.g_min, args.g_max + 1)),
            q_values=tuple(range(args.q_min, args.q_max + 1)),
            constraints=_parse_models(args.models),
            config=FitConfig(
                max_iter=args.max_iter,
                aitken_tol=args.aitken_tol,
                seed=args.seed,
            ),
        )
        cmd_fit(
            dataset,
            spec,
            args.out_dir,
            input_path=args.input,
            label_column=args.label_column,
        )
        return EXIT_OK
    if args.command == "evaluate":
        cmd_evaluate(args.predicted, args.truth, args.out_dir)
        return EXIT_OK
    raise _UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FitFailureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def run() -> None:
    raise SystemExit(main())
