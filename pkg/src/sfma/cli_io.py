"""
Dataset ingestion, run configuration and result files, plus the ``sfma``
command line (subcommands ``fit``, ``simulate`` and ``benchmark``).

Configuration files are JSON. Every default is written back into the echoed
``config.json`` so a run directory describes itself. Numeric CSV output uses
``%.17g`` and each file is written to a temporary name and renamed, so a
failed run never leaves a half-written file behind.
"""
import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, SFMAError, SolverError, SpecError
from .likelihood import Dataset
from .solvers import FitOptions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

FRONTIER_POINTS = 200
TRANSFORMS = ("none", "log")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SplineConfig:
    num_knots: int = 7
    knot_rule: str = "quantile"
    degree: int = 3
    left_linear: bool = False
    right_linear: bool = False


@dataclass
class RunConfig:
    """Settings of one ``fit`` run.

    ``columns`` maps the roles ``y``, ``x`` and ``se`` to header names; a
    missing ``se`` column means all reported errors are zero. ``transforms``
    applies ``none`` or ``log`` to the y and x columns (se is taken as given,
    i.e. already on the fitted scale).
    """

    input_path: str = ""
    output_dir: str = "sfma_out"
    delimiter: str = ","
    columns: Dict[str, str] = field(default_factory=lambda: {"y": "y", "x": "x", "se": "se"})
    transforms: Dict[str, str] = field(default_factory=lambda: {"y": "none", "x": "none"})
    spline: SplineConfig = field(default_factory=SplineConfig)
    shapes: List[str] = field(default_factory=lambda: ["increasing", "concave"])
    grid_size: int = 20
    trim_proportion: float = 0.0
    solver: Dict[str, object] = field(default_factory=lambda: _options_dict(FitOptions()))
    seed: int = 0

    def validate(self) -> "RunConfig":
        if not isinstance(self.input_path, str) or not self.input_path:
            raise ConfigError("input_path is required")
        if not isinstance(self.delimiter, str) or len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")
        for role in ("y", "x"):
            if not self.columns.get(role):
                raise ConfigError(f"columns.{role} is required")
        unknown = set(self.columns) - {"y", "x", "se"}
        if unknown:
            raise ConfigError(f"unknown column role(s): {sorted(unknown)}")
        for role, name in self.transforms.items():
            if role not in ("y", "x"):
                raise ConfigError(f"transforms apply to y and x only, got {role!r}")
            if name not in TRANSFORMS:
                raise ConfigError(f"unknown transform {name!r} (use one of {TRANSFORMS})")
        if not 0.0 <= float(self.trim_proportion) < 1.0:
            raise ConfigError("trim_proportion must lie in [0, 1)")
        if self.spline.knot_rule not in ("quantile", "uniform"):
            raise ConfigError("spline.knot_rule must be 'quantile' or 'uniform'")
        if int(self.spline.num_knots) < 2 or int(self.spline.degree) < 0:
            raise ConfigError("spline needs num_knots >= 2 and degree >= 0")
        self.fit_options()
        return self

    def fit_options(self) -> FitOptions:
        values = dict(self.solver)
        for key in ("gamma_bounds", "eta_bounds"):
            if key in values:
                values[key] = tuple(values[key])
        try:
            return FitOptions(**values)
        except TypeError as exc:
            raise ConfigError(f"bad solver options: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        raw = dict(raw)
        spline = raw.pop("spline", {})
        try:
            spline_cfg = SplineConfig(**spline)
        except TypeError as exc:
            raise ConfigError(f"bad spline section: {exc}") from exc
        cfg = cls(spline=spline_cfg)
        for key, value in raw.items():
            default = getattr(cfg, key)
            if isinstance(default, dict):
                merged = dict(default)
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                merged.update(value)
                value = merged
            setattr(cfg, key, value)
        if "se" in cfg.columns and cfg.columns["se"] in (None, ""):
            del cfg.columns["se"]
        return cfg


def _options_dict(opts: FitOptions) -> dict:
    out = dataclasses.asdict(opts)
    for key in ("gamma_bounds", "eta_bounds"):
        out[key] = list(out[key])
    return out


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# input


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def _transform(values: np.ndarray, name: str, column: str, lines: Sequence[int]) -> np.ndarray:
    if name == "none":
        return values
    if np.any(values <= 0):
        row = lines[int(np.flatnonzero(values <= 0)[0])]
        raise DataError(f"row {row}, column {column!r}: log transform needs positive values")
    return np.log(values)


def load_dataset(path: str, config: Optional[RunConfig] = None) -> Dataset:
    """Read a delimited file with a header row into a ``Dataset``.

    Row numbers in error messages count the header as row 1.
    """
    config = RunConfig(input_path=path) if config is None else config
    cols = config.columns
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=config.delimiter)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"{path}: file is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read data file {path!r}: {exc}") from exc

    index = {}
    for role in ("y", "x"):
        if cols[role] not in header:
            raise DataError(f"{path}: header has no column {cols[role]!r} (role {role})")
        index[role] = header.index(cols[role])
    se_name = cols.get("se")
    se_idx = header.index(se_name) if se_name and se_name in header else None

    ys, xs, ses, lines, missing = [], [], [], [], []
    for offset, row in enumerate(rows):
        line = offset + 2
        if not any(cell.strip() for cell in row):
            continue
        cells = {role: (row[i].strip() if i < len(row) else "") for role, i in index.items()}
        if not cells["y"] or not cells["x"]:
            missing.append(line)
            continue
        ys.append(_parse_cell(cells["y"], line, cols["y"]))
        xs.append(_parse_cell(cells["x"], line, cols["x"]))
        se_text = row[se_idx].strip() if se_idx is not None and se_idx < len(row) else ""
        se = _parse_cell(se_text, line, se_name) if se_text else 0.0
        if se_text and not se > 0:
            raise DataError(f"row {line}, column {se_name!r}: standard error must be positive")
        ses.append(se)
        lines.append(line)
    if missing:
        raise DataError(f"{path}: missing y or x in row(s) {missing}")
    if not ys:
        raise DataError(f"{path}: no data rows")
    y = _transform(np.array(ys), config.transforms.get("y", "none"), cols["y"], lines)
    x = _transform(np.array(xs), config.transforms.get("x", "none"), cols["x"], lines)
    return Dataset(y, x, np.array(ses))


# ---------------------------------------------------------------------------
# output


def format_number(value) -> str:
    value = float(value)
    if math.isnan(value):
        return ""
    return "%.17g" % value


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], columns: Sequence, delimiter: str = ",") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([cell if isinstance(cell, str) else format_number(cell) for cell in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_dataset(path: str, data: Dataset, extra: Optional[Dict[str, np.ndarray]] = None,
                  delimiter: str = ",") -> None:
    header, cols = ["y", "x", "se"], [data.y, data.x, data.se]
    for name, values in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(values, dtype=float))
    atomic_write(path, csv_text(header, cols, delimiter))


# ---------------------------------------------------------------------------
# runs


def run_fit(config: RunConfig):
    """Fit the frontier described by ``config`` and write the result files.

    Writes ``frontier.csv``, ``points.csv``, ``params.json`` and
    ``config.json`` into ``config.output_dir``. Returns the ``FitResult``.
    """
    from .model import FrontierModel

    config.validate()
    data = load_dataset(config.input_path, config)
    spline = config.spline
    model = FrontierModel(
        num_knots=int(spline.num_knots), knot_rule=spline.knot_rule, degree=int(spline.degree),
        left_linear=bool(spline.left_linear), right_linear=bool(spline.right_linear),
        shapes=tuple(config.shapes), grid_size=int(config.grid_size),
        trim_proportion=float(config.trim_proportion), options=config.fit_options(),
    )
    try:
        result = model.fit(data)
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc

    out = config.output_dir
    grid = np.linspace(data.x.min(), data.x.max(), FRONTIER_POINTS)
    files = {
        "frontier.csv": csv_text(["x", "frontier"], [grid, result.frontier(grid)], config.delimiter),
        "points.csv": csv_text(
            ["y", "x", "se", "r", "u_hat", "v_hat", "weight", "outlier"],
            [data.y, data.x, data.se, result.residuals, result.u_hat, result.v_hat,
             result.weights, result.outliers.astype(float)],
            config.delimiter,
        ),
        "params.json": json_text({
            "beta": [float(b) for b in result.params.beta],
            "gamma": result.params.gamma,
            "eta": result.params.eta,
            "objective": result.objective,
            "iterations": int(result.iterations),
            "knots": list(result.spec.knots),
            "excluded": [int(i) for i in np.flatnonzero(result.outliers)],
        }),
        "config.json": json_text(config.to_dict()),
    }
    for name, text in files.items():
        atomic_write(os.path.join(out, name), text)
    return result


@dataclass
class BenchSpec:
    """Benchmark request read from JSON."""

    sims: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    methods: List[str] = field(default_factory=lambda: ["DEA", "SFA", "StoNED-MoM", "StoNED-QLE", "SFMA", "R-SFMA"])
    replications: int = 20
    seed: int = 0
    n: Optional[int] = None
    sim2_noise: str = "variance"
    output_dir: str = "sfma_bench"

    @classmethod
    def from_dict(cls, raw) -> "BenchSpec":
        from .simbench import METHODS, SimSpec

        if not isinstance(raw, dict):
            raise ConfigError("benchmark spec must be a JSON object")
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown benchmark key(s): {sorted(unknown)}")
        spec = cls(**raw)
        if not isinstance(spec.sims, list) or not spec.sims:
            raise ConfigError("sims must be a non-empty list")
        if not isinstance(spec.methods, list) or not spec.methods:
            raise ConfigError("methods must be a non-empty list")
        bad = [m for m in spec.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if not isinstance(spec.replications, int) or spec.replications < 1:
            raise ConfigError("replications must be a positive integer")
        if not isinstance(spec.seed, int):
            raise ConfigError("seed must be an integer")
        for sim in spec.sims:
            SimSpec(sim, spec.seed, spec.n, spec.sim2_noise)
        return spec


def run_benchmark(spec: BenchSpec):
    """Run the Monte-Carlo comparison and write ``bench.csv`` plus curve files."""
    from .simbench import SimSpec, run_monte_carlo, true_frontier

    results = []
    for sim in spec.sims:
        sim_spec = SimSpec(sim, spec.seed, spec.n, spec.sim2_noise)
        results.append(run_monte_carlo(sim_spec, spec.methods, spec.replications))

    rows = [row for res in results for row in res.table()]
    files = {
        "bench.csv": csv_text(
            ["sim", "method", "mean_rmse", "median_rmse", "failures"],
            [[str(r["sim"]) for r in rows], [r["method"] for r in rows],
             [r["mean_rmse"] for r in rows], [r["median_rmse"] for r in rows],
             [str(r["failures"]) for r in rows]],
        )
    }
    for res in results:
        header = ["x", "truth"]
        cols = [res.grid, true_frontier(res.grid)]
        for method in res.methods:
            curve = res.first_curves[method]
            header.append(method)
            cols.append(np.full(res.grid.size, np.nan) if curve is None else curve)
        files[f"frontiers_sim{res.sim_id}.csv"] = csv_text(header, cols)
    for name, text in files.items():
        atomic_write(os.path.join(spec.output_dir, name), text)
    return results


# ---------------------------------------------------------------------------
# command line


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfma", description="Stochastic frontier meta-analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a frontier to a data file")
    fit.add_argument("--config", help="JSON run configuration")
    fit.add_argument("--input", help="data file (overrides input_path)")
    fit.add_argument("--output", help="output directory (overrides output_dir)")
    fit.add_argument("--delimiter")
    fit.add_argument("--y-col")
    fit.add_argument("--x-col")
    fit.add_argument("--se-col")
    fit.add_argument("--knots", type=int, help="number of knots")
    fit.add_argument("--knot-rule", choices=("quantile", "uniform"))
    fit.add_argument("--degree", type=int)
    fit.add_argument("--shapes", help="comma-separated shape constraints ('' for none)")
    fit.add_argument("--trim", type=float, help="trim proportion in [0, 1)")
    fit.add_argument("--seed", type=int)

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--sim", type=int, required=True, choices=(1, 2, 3, 4))
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--sim2-noise", choices=("variance", "sd"), default="variance")
    sim.add_argument("--output", required=True, help="output CSV path")

    bench = sub.add_parser("benchmark", help="Monte-Carlo comparison of frontier methods")
    bench.add_argument("--config", required=True, help="JSON benchmark spec")
    bench.add_argument("--replications", type=int)
    bench.add_argument("--output", help="output directory")
    bench.add_argument("--seed", type=int)
    return parser


def _fit_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.input is not None:
        cfg.input_path = args.input
    if args.output is not None:
        cfg.output_dir = args.output
    if args.delimiter is not None:
        cfg.delimiter = args.delimiter
    for role, value in (("y", args.y_col), ("x", args.x_col), ("se", args.se_col)):
        if value is not None:
            cfg.columns[role] = value
    if args.knots is not None:
        cfg.spline.num_knots = args.knots
    if args.knot_rule is not None:
        cfg.spline.knot_rule = args.knot_rule
    if args.degree is not None:
        cfg.spline.degree = args.degree
    if args.shapes is not None:
        cfg.shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
    if args.trim is not None:
        cfg.trim_proportion = args.trim
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _bench_spec(args) -> BenchSpec:
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read benchmark spec {args.config!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"benchmark spec is not valid JSON: {exc}") from exc
    if isinstance(raw, dict):
        for key, value in (("replications", args.replications), ("output_dir", args.output),
                           ("seed", args.seed)):
            if value is not None:
                raw[key] = value
    return BenchSpec.from_dict(raw)


def _diagnostic(out_dir: Optional[str], exc: BaseException) -> None:
    if not out_dir:
        return
    info = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("block", "iteration", "residual"):
        value = getattr(exc, attr, None)
        if value is not None:
            info[attr] = value
    try:
        atomic_write(os.path.join(out_dir, "diagnostic.json"), json_text(info))
    except OSError:
        logger.exception("could not write diagnostic file")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = None
    try:
        if args.command == "fit":
            cfg = _fit_config(args)
            out_dir = cfg.output_dir
            run_fit(cfg)
        elif args.command == "simulate":
            from .simbench import SimSpec, generate_sim

            draw = generate_sim(SimSpec(args.sim, args.seed, args.n, args.sim2_noise))
            write_dataset(args.output, draw.dataset, {"outlier": draw.outlier_mask.astype(float)})
        elif args.command == "benchmark":
            spec = _bench_spec(args)
            out_dir = spec.output_dir
            run_benchmark(spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        _diagnostic(out_dir, exc)
        return EXIT_SOLVER
    except SFMAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _diagnostic(out_dir, exc)
        return EXIT_SOLVER
    except Exception:  # noqa: BLE001 - last-resort guard for the exit-code contract
        logger.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
