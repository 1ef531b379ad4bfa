"""Seeded experiment grids, the result CSV and plot-ready data files.

Every grid point draws its training batch, test batch and channel noise
from streams keyed by ``(seed, purpose)`` only, so points that differ in
rho, M, rate or epsilon see the same underlying random numbers. Rows are
written in grid order whatever the worker count, so output is reproducible
byte for byte.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from dcvq.bounds import COUPLING_MINUS, COUPLING_PLUS, composite_bound
from dcvq.errors import ConfigError, InvalidParameterError
from dcvq.estimator import (
    ASYMMETRIC_WEIGHTING,
    SYMMETRIC_WEIGHTING,
    SupportPosterior,
    oracle_cs_bound,
    per_sample_distortion,
)
from dcvq.model import ModelParams, build_dct_sensing_matrix, sample_sources, sigma_w_sq_for_smnr
from dcvq.quantizer.core import ANALYTIC, SAMPLED
from dcvq.quantizer.tables import MARGINAL, NEAREST
from dcvq.quantizer.training import TrainingConfig, evaluate, train, train_centralized
from dcvq.streams import substream

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "DCVQ_OUTPUT_ROOT"

EXPERIMENTS = ("cs-distortion-vs-rho", "mse-vs-rho", "mse-vs-rate", "mse-vs-epsilon", "custom")
MIN_BATCH = 1000
FAST_BATCH = 10_000

COLUMNS = (
    "experiment", "seed", "N", "K", "M", "R1", "R2", "rho", "epsilon", "smnr_db",
    "d_db", "dcs_db", "dq_db", "bound_db", "train_iters", "wall_seconds",
)
EXTRA_COLUMNS = ("dcs_oracle_db", "dq_oracle_db", "d_stderr", "scheme", "bound_violation")
ALL_COLUMNS = COLUMNS + EXTRA_COLUMNS

RHO_SWEEP = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
ALPHA_SWEEP_M = (3, 4, 5, 6)

# grid/setting overrides applied when the config file leaves the key unset
PRESETS = {
    "cs-distortion-vs-rho": {"M": ALPHA_SWEEP_M, "rho": RHO_SWEEP, "smnr_db": 10.0,
                             "test_size": 20_000},
    "mse-vs-rho": {"M": ALPHA_SWEEP_M, "rho": RHO_SWEEP, "R": (10,), "smnr_db": math.inf},
    "mse-vs-rate": {"R": (6, 8, 10), "rho": (1.0, 10.0, 1e3), "smnr_db": 10.0},
    "mse-vs-epsilon": {"rho": (1.0, 1e3), "R": (10,), "smnr_db": math.inf,
                       "epsilon": (0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.499),
                       "centralized": True},
    "custom": {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: fixed settings plus the grids swept over.

    ``R`` lists total rates, each split as evenly as possible with the
    first terminal taking the extra bit; when ``R`` is empty the single
    pair ``(R1, R2)`` is used.
    """

    experiment: str
    seed: int
    N: int = 10
    K: int = 2
    M: tuple[int, ...] = (5,)
    R1: int = 5
    R2: int = 5
    R: tuple[int, ...] = ()
    rho: tuple[float, ...] = (1.0,)
    epsilon: tuple[float, ...] = (0.0,)
    smnr_db: float = 10.0
    r_y: int = 3
    train_size: int = 300_000
    test_size: int = 300_000
    prequant_samples: int = 100_000
    max_iters: int = 50
    tol: float = 1e-4
    decoder_update: str = ANALYTIC
    fallback: str = NEAREST
    bound_variant: str = COUPLING_PLUS
    weighting: str = SYMMETRIC_WEIGHTING
    centralized: bool = False
    fast: bool = False
    workers: int = 1
    wall_time_in_csv: bool = False
    save_systems: bool = False
    output_dir: str = ""

    @property
    def rate_pairs(self) -> tuple[tuple[int, int], ...]:
        if not self.R:
            return ((self.R1, self.R2),)
        return tuple(((r + 1) // 2, r // 2) for r in self.R)

    @property
    def quantized(self) -> bool:
        return self.experiment != "cs-distortion-vs-rho"

    def output_path(self) -> Path:
        out = Path(self.output_dir or f"results/{self.experiment}")
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
        return out

    def grid(self):
        """Grid points in output order: M, rate pair, rho, epsilon."""
        eps = self.epsilon if self.quantized else (0.0,)
        rates = self.rate_pairs if self.quantized else ((0, 0),)
        return list(itertools.product(self.M, rates, self.rho, eps))


# (parser, help text) per key; defaults come from the dataclass
def _int(v: str) -> int:
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def _float(v: str) -> float:
    if v.lower() in ("inf", "+inf", "clean"):
        return math.inf
    return float(v)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _choice(*options):
    def parse(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


def _list(parse):
    def parse_list(parts: list[str]) -> tuple:
        if not parts:
            raise ValueError("empty list")
        return tuple(parse(p) for p in parts)
    parse_list.is_list = True
    return parse_list


KEYS = {
    "experiment": (_choice(*EXPERIMENTS), "experiment name (required): " + ", ".join(EXPERIMENTS)),
    "seed": (_int, "master random seed (required)"),
    "N": (_int, "source dimension"),
    "K": (_int, "sparsity level"),
    "M": (_list(_int), "measurements per terminal; a list sweeps the measurement rate M/N"),
    "R1": (_int, "terminal-1 rate in bits (used when R is unset)"),
    "R2": (_int, "terminal-2 rate in bits (used when R is unset)"),
    "R": (_list(_int), "total rates R1+R2 to sweep, split evenly"),
    "rho": (_list(_float), "correlation ratio grid"),
    "epsilon": (_list(_float), "BSC cross-over probability grid"),
    "smnr_db": (_float, "measurement SMNR in dB; inf or clean for noiseless measurements"),
    "r_y": (_int, "pre-quantizer bits per measurement entry"),
    "train_size": (_int, "training draws per grid point"),
    "test_size": (_int, "test draws per grid point"),
    "prequant_samples": (_int, "samples used to design the pre-quantizer"),
    "max_iters": (_int, "maximum training iterations"),
    "tol": (_float, "relative MSE improvement that stops training"),
    "decoder_update": (_choice(ANALYTIC, SAMPLED), "decoder centroid rule"),
    "fallback": (_choice(NEAREST, MARGINAL), "encoder policy for measurement cells unseen in training"),
    "bound_variant": (_choice(COUPLING_PLUS, COUPLING_MINUS), "quantization bound coupling: plus = rho^2/(1+rho)^2, minus = rho^2/(1-rho)^2"),
    "weighting": (_choice(SYMMETRIC_WEIGHTING, ASYMMETRIC_WEIGHTING), "estimation bound weighting: symmetric [[2I,I,I],[I,I,0],[I,0,I]] or the asymmetric variant with last row [I,I,I]"),
    "centralized": (_bool, "also train the centralized benchmark at each point"),
    "fast": (_bool, f"cap train/test sizes at {FAST_BATCH}"),
    "workers": (_int, "grid points evaluated in parallel"),
    "wall_time_in_csv": (_bool, "write wall_seconds into the result CSV (breaks byte-identity)"),
    "save_systems": (_bool, "write each trained system as JSON lines"),
    "output_dir": (str, f"output directory; relative paths resolve under ${OUTPUT_ROOT_ENV}"),
}
REQUIRED = ("experiment", "seed")


def config_help() -> str:
    defaults = {f.name: f.default for f in fields(ExperimentConfig) if f.name not in REQUIRED}
    lines = []
    for key, (_, text) in KEYS.items():
        d = defaults.get(key)
        shown = "" if key in REQUIRED else f" [default: {_show(d)}]"
        lines.append(f"  {key:<17} {text}{shown}")
    lines.append("  Per-experiment grid defaults override the above when a key is unset:")
    for name, preset in PRESETS.items():
        if preset:
            lines.append(f"    {name}: " + "; ".join(f"{k}={_show(v)}" for k, v in preset.items()))
    return "\n".join(lines)


def _show(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_show(x) for x in v) if v else "(unset)"
    if v == "":
        return "(unset)"
    return str(v)


def _assignments(line: str):
    """Split ``a = 1, b = 2`` or ``rho = 1,2,3`` into (key, [parts])."""
    out = []
    for seg in line.split(","):
        if "=" in seg:
            key, _, val = seg.partition("=")
            out.append((key.strip(), [val.strip()]))
        elif out:
            out[-1][1].append(seg.strip())
        else:
            raise ValueError(f"expected 'key = value', got {line.strip()!r}")
    return out


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    where: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            pairs = _assignments(line)
        except ValueError as exc:
            raise ConfigError(str(exc), line=lineno) from None
        for key, parts in pairs:
            if key not in KEYS:
                raise ConfigError("unknown key", line=lineno, key=key)
            if key in values:
                raise ConfigError("duplicate key", line=lineno, key=key)
            parse = KEYS[key][0]
            try:
                if getattr(parse, "is_list", False):
                    val = parse([p for p in parts if p != ""])
                else:
                    if len(parts) != 1:
                        raise ValueError("expected a single value")
                    val = parse(parts[0])
            except ValueError as exc:
                raise ConfigError(f"malformed value: {exc}", line=lineno, key=key) from None
            values[key] = val
            where[key] = lineno
    for key in REQUIRED:
        if key not in values:
            raise ConfigError("missing required key", key=key)
    return build_config(values, where)


def parse_config(path) -> ExperimentConfig:
    """Read a ``key = value`` experiment file (``#`` comments, comma lists)."""
    return parse_config_text(Path(path).read_text())


def build_config(values: dict, where: dict | None = None) -> ExperimentConfig:
    where = where or {}
    merged = dict(PRESETS[values["experiment"]])
    merged.update(values)
    cfg = ExperimentConfig(**merged)
    if cfg.fast:
        cfg = replace(cfg, train_size=min(cfg.train_size, FAST_BATCH),
                      test_size=min(cfg.test_size, FAST_BATCH))
    validate(cfg, where)
    return cfg


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply command-line overrides, then re-apply the fast cap and validation."""
    cfg = replace(cfg, **changes)
    if cfg.fast:
        cfg = replace(cfg, train_size=min(cfg.train_size, FAST_BATCH),
                      test_size=min(cfg.test_size, FAST_BATCH))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig, where: dict | None = None) -> None:
    where = where or {}

    def fail(msg, key):
        raise ConfigError(msg, line=where.get(key), key=key)

    if cfg.K < 1:
        fail("K must be at least 1", "K")
    for M in cfg.M:
        if not (cfg.K <= M < cfg.N):
            key = "K" if cfg.K > M else ("M" if "M" in where else "N")
            fail(f"K ≤ M < N violated (N={cfg.N}, K={cfg.K}, M={M})", key)
    for key in ("rho", "epsilon"):
        if not getattr(cfg, key):
            fail("grid must be nonempty", key)
    if any(r < 0 or math.isnan(r) for r in cfg.rho):
        fail("rho must be nonnegative", "rho")
    if any(not (0.0 <= e <= 0.5) for e in cfg.epsilon):
        fail("epsilon must lie in [0, 0.5]", "epsilon")
    if cfg.R and any(r < 0 for r in cfg.R):
        fail("rates must be nonnegative", "R")
    if cfg.R1 < 0 or cfg.R2 < 0:
        fail("rates must be nonnegative", "R1" if cfg.R1 < 0 else "R2")
    for key in ("train_size", "test_size"):
        if getattr(cfg, key) < MIN_BATCH:
            fail(f"batch size must be at least {MIN_BATCH}", key)
    if cfg.r_y < 1:
        fail("r_y must be at least 1", "r_y")
    if cfg.workers < 1:
        fail("workers must be at least 1", "workers")
    if cfg.max_iters < 1:
        fail("max_iters must be at least 1", "max_iters")
    if cfg.prequant_samples < 2 ** cfg.r_y:
        fail("too few pre-quantizer samples", "prequant_samples")


def _db(v: float) -> float:
    if v <= 0:
        return -math.inf
    return 10.0 * math.log10(v)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)  # dicts keyed by ALL_COLUMNS
    timings: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path, wall_time: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ALL_COLUMNS)
            for row in self.rows:
                r = dict(row)
                if not wall_time:
                    r["wall_seconds"] = None
                w.writerow([_fmt(r.get(c)) for c in ALL_COLUMNS])

    def violations(self) -> list:
        return [r for r in self.rows if r["bound_violation"]]


def point_params(cfg: ExperimentConfig, M: int, rho: float) -> ModelParams:
    return ModelParams(cfg.N, cfg.K, M, rho=rho, sigma_w_sq=sigma_w_sq_for_smnr(cfg.K, M, cfg.smnr_db))


def _row(cfg, M, R1, R2, rho, eps, scheme, d, d_se, dcs, dq, bound, iters, wall):
    # below the support budget the bound is only indicative, so it is not audited
    violation = bound.support_budget_feasible and d < bound.composite - 3.0 * d_se
    return {
        "experiment": cfg.experiment, "seed": cfg.seed, "N": cfg.N, "K": cfg.K, "M": M,
        "R1": R1, "R2": R2, "rho": float(rho), "epsilon": float(eps), "smnr_db": float(cfg.smnr_db),
        "d_db": _db(d), "dcs_db": _db(dcs), "dq_db": None if dq is None else _db(dq),
        "bound_db": _db(bound.composite), "train_iters": iters, "wall_seconds": wall,
        "dcs_oracle_db": _db(bound.d_cs_oracle),
        "dq_oracle_db": None if scheme == "estimator" else _db(bound.d_q_oracle),
        "d_stderr": float(d_se), "scheme": scheme, "bound_violation": bool(violation),
    }


def run_point(cfg: ExperimentConfig, point) -> list[dict]:
    """Train and evaluate every scheme at one grid point."""
    M, (R1, R2), rho, eps = point
    start = time.perf_counter()
    p = point_params(cfg, M, rho)
    phi1 = np.asarray(build_dct_sensing_matrix(cfg.N, M, 1))
    phi2 = np.asarray(build_dct_sensing_matrix(cfg.N, M, 2))
    test = sample_sources(p, phi1, phi2, substream(cfg.seed, "test"), size=cfg.test_size)
    posterior = SupportPosterior(phi1, phi2, p)
    dcs_or = oracle_cs_bound(phi1, phi2, p, weighting=cfg.weighting)
    if not cfg.quantized:
        x_tilde = posterior.estimate_or_oracle(test.y, test.supports)
        e = per_sample_distortion(test.x, x_tilde, cfg.K)
        se = float(np.std(e, ddof=1) / math.sqrt(len(e)))
        # no quantizer: the only applicable bound is the estimation bound
        bound = composite_bound(p, phi1, phi2, math.inf, variant=cfg.bound_variant,
                                d_cs_oracle=dcs_or)
        bound = replace(bound, composite=bound.d_cs_oracle)
        wall = time.perf_counter() - start
        return [_row(cfg, M, None, None, rho, 0.0, "estimator", float(e.mean()), se,
                     float(e.mean()), None, bound, 0, wall)]

    tc = TrainingConfig(
        p, phi1, phi2, rates=(R1, R2), epsilon=eps, train_size=cfg.train_size, r_y=cfg.r_y,
        max_iters=cfg.max_iters, tol=cfg.tol, decoder_update=cfg.decoder_update,
        fallback=cfg.fallback, prequant_samples=cfg.prequant_samples,
    )
    batch = sample_sources(p, phi1, phi2, substream(cfg.seed, "train"), size=cfg.train_size)
    bound = composite_bound(p, phi1, phi2, R1 + R2, variant=cfg.bound_variant, d_cs_oracle=dcs_or)
    rows = []
    system = train(tc, substream(cfg.seed, "design"), batch=batch)
    ev = evaluate(system, test, substream(cfg.seed, "channel"), posterior=posterior)
    rows.append(_row(cfg, M, R1, R2, rho, eps, "distributed", ev.d, ev.d_se, ev.d_cs, ev.d_q,
                     bound, system.iterations, time.perf_counter() - start))
    if cfg.save_systems:
        from dcvq.quantizer.io import save_system

        tag = f"M{M}_R{R1}-{R2}_rho{rho!r}_eps{eps!r}"
        save_system(system, cfg.output_path() / "systems" / f"{tag}.jsonl")
    if cfg.centralized:
        t0 = time.perf_counter()
        central = train_centralized(tc, substream(cfg.seed, "design-central"), batch=batch)
        ev = evaluate(central, test, substream(cfg.seed, "channel"), posterior=posterior)
        rows.append(_row(cfg, M, R1, R2, rho, eps, "centralized", ev.d, ev.d_se, ev.d_cs, ev.d_q,
                         bound, central.iterations, time.perf_counter() - t0))
    return rows


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    with open(probe, "w") as fh:
        fh.write("")
    probe.unlink()
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory not writable: {out}")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ResultTable:
    """Evaluate every grid point and (optionally) write ``results.csv``,
    ``timing.csv`` and the plot data under the output directory."""
    out = cfg.output_path()
    if write:
        _check_writable(out)
        if cfg.save_systems:
            (out / "systems").mkdir(exist_ok=True)
    points = cfg.grid()
    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_point = list(pool.map(run_point, itertools.repeat(cfg), points))
    else:
        per_point = [run_point(cfg, pt) for pt in points]
    table = ResultTable()
    for rows in per_point:
        for row in rows:
            table.rows.append(row)
            table.timings.append((row["M"], row["R1"], row["R2"], row["rho"], row["epsilon"],
                                  row["scheme"], row["wall_seconds"]))
    for row in table.violations():
        log.warning("bound violated at M=%s R=%s/%s rho=%r eps=%r (%s): D %.3f dB < bound %.3f dB",
                    row["M"], row["R1"], row["R2"], row["rho"], row["epsilon"], row["scheme"],
                    row["d_db"], row["bound_db"])
    if write:
        table.to_csv(out / "results.csv", wall_time=cfg.wall_time_in_csv)
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["M", "R1", "R2", "rho", "epsilon", "scheme", "wall_seconds"])
            w.writerows([[_fmt(v) for v in t] for t in table.timings])
        emit_plotdata(table, out / "plotdata")
    return table


# x-axis column and the columns identifying one curve, per experiment
GROUPINGS = {
    "cs-distortion-vs-rho": ("rho", ("M",), "dcs_db"),
    "mse-vs-rho": ("rho", ("M", "scheme"), "d_db"),
    "mse-vs-rate": ("R", ("rho", "scheme"), "d_db"),
    "mse-vs-epsilon": ("epsilon", ("rho", "scheme"), "d_db"),
}
_AXES = ("R", "rho", "epsilon", "M")


def _axis_value(row, name):
    if name == "R":
        return (row["R1"] or 0) + (row["R2"] or 0)
    return row[name]


def _grouping(table: ResultTable):
    exp = table.rows[0]["experiment"]
    if exp in GROUPINGS:
        return GROUPINGS[exp]
    varying = [a for a in _AXES if len({_axis_value(r, a) for r in table.rows}) > 1]
    if not varying:
        return None, ("scheme",), "d_db"
    x = varying[0]
    return x, tuple(a for a in varying[1:]) + ("scheme",), "d_db"


def _label(v) -> str:
    return format(v, "g") if isinstance(v, float) else str(v)


def emit_plotdata(table: ResultTable, out_dir) -> list[Path]:
    """Write one CSV per figure grouping and one whitespace-separated data
    file per curve (columns: x, measured dB, bound dB). Returns the paths."""
    if len(table) == 0:
        raise InvalidParameterError("empty result table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, curve_keys, y = _grouping(table)
    exp = table.rows[0]["experiment"]
    curves: dict = {}
    for row in table.rows:
        key = tuple(_axis_value(row, k) for k in curve_keys)
        xv = _axis_value(row, x) if x else len(curves.get(key, []))
        curves.setdefault(key, []).append((xv, row[y], row["bound_db"]))
    xname = x or "index"
    written = []
    summary = out / f"{exp}.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(curve_keys) + [xname, y, "bound_db"])
        for key, pts in curves.items():
            for p in pts:
                w.writerow([_fmt(k) for k in key] + [_fmt(v) for v in p])
    written.append(summary)
    for key, pts in curves.items():
        tag = "_".join(f"{k}{_label(v)}" for k, v in zip(curve_keys, key))
        path = out / f"{exp}_{tag}.dat"
        lines = [f"# {xname} {y} bound_db"]
        lines.extend(" ".join(_fmt(v) for v in p) for p in sorted(pts, key=lambda p: p[0]))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
