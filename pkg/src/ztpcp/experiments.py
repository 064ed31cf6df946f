"""Replicated sweeps over the trusted-set fraction for the three estimators.

One ground truth is drawn per sweep.  For every fraction and replicate a
fresh trusted set and fresh counts on it are drawn from their own
substreams, and each requested method is fit from a shared initialization.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimators import DataInsufficiencyError, EstimatorKind, FitSpec, fit
from .generate import GenConfig, generate_truth, sample_counts, sample_omega
from .optim import OptimOptions
from .sampling import stream
from .tensors import ContractError, KruskalModel, Shape
from .theory import dimension_requirement_met

log = logging.getLogger(__name__)

PAPER_FRACTIONS = (0.01, 0.02, 0.03, 0.04, 0.05) + tuple(round(0.05 * i, 2) for i in range(2, 21))
PAPER_DIMS = (50, 100, 200)
PAPER_REPLICATES = 50

CSV_HEADER = ["method", "omega_fraction", "mean_rel_error", "std_rel_error", "mean_iterations", "flagged"]
METHOD_ORDER = (EstimatorKind.POISSON, EstimatorKind.ORACLE, EstimatorKind.ZTP)


@dataclass(frozen=True)
class ExperimentConfig:
    order: int = 3
    dims: int = 100
    rank: int = 5
    beta: float = 1.0
    alpha: float = 2.5
    omega_fractions: tuple[float, ...] = (0.05, 0.3, 0.6, 1.0)
    replicates: int = 5
    methods: tuple[EstimatorKind, ...] = METHOD_ORDER
    seed: int = 0
    optim: OptimOptions = OptimOptions()

    def __post_init__(self):
        fr = tuple(float(f) for f in self.omega_fractions)
        if not fr:
            raise ContractError("need at least one omega fraction")
        if any(not 0 < f <= 1 for f in fr):
            raise ContractError("omega fractions must lie in (0, 1]")
        if list(fr) != sorted(fr):
            raise ContractError("omega fractions must be sorted ascending")
        if self.replicates < 1:
            raise ContractError("replicates must be >= 1")
        methods = tuple(EstimatorKind(m) if isinstance(m, str) else m for m in self.methods)
        object.__setattr__(self, "omega_fractions", fr)
        object.__setattr__(self, "methods", tuple(m for m in METHOD_ORDER if m in methods))
        # Validates beta/alpha/rank eagerly.
        self.gen_config()

    @property
    def shape(self) -> Shape:
        return Shape((self.dims,) * self.order)

    def gen_config(self) -> GenConfig:
        return GenConfig(self.shape, self.rank, self.beta, self.alpha, self.seed)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        if "optim" in doc:
            doc["optim"] = OptimOptions(**doc["optim"])
        for key in ("omega_fractions", "methods"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["methods"] = [m.value for m in self.methods]
        doc["omega_fractions"] = list(self.omega_fractions)
        return doc

    def paper_scale(self) -> list[ExperimentConfig]:
        """The same sweep at every published dimension with 50 replicates."""
        return [replace(self, dims=I, replicates=PAPER_REPLICATES, omega_fractions=PAPER_FRACTIONS) for I in PAPER_DIMS]


@dataclass(frozen=True)
class SweepRow:
    method: EstimatorKind
    omega_fraction: float
    mean_rel_error: float
    std_rel_error: float
    mean_iterations: float
    flagged: int


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def row(self, method, fraction: float) -> SweepRow:
        method = EstimatorKind(method) if isinstance(method, str) else method
        for r in self.rows:
            if r.method is method and math.isclose(r.omega_fraction, fraction, rel_tol=0, abs_tol=1e-12):
                return r
        raise KeyError((method, fraction))

    def mean(self, method, fraction: float) -> float:
        return self.row(method, fraction).mean_rel_error


def _replicate(task):
    """Fit every method on one (fraction, replicate) draw."""
    cfg, truth, fi, rep = task
    shape = cfg.shape
    size = min(shape.size, int(round(cfg.omega_fractions[fi] * shape.size)))
    omega = sample_omega(shape, size, stream(cfg.seed, "omega", fi, rep))
    counts = sample_counts(truth, omega, stream(cfg.seed, "counts", fi, rep))
    init_seed = int(stream(cfg.seed, "init", fi, rep).integers(2**62))
    out = {}
    for method in cfg.methods:
        spec = FitSpec(method, cfg.rank, init_seed=init_seed, optim=cfg.optim)
        try:
            res = fit(spec, counts, omega, truth=truth)
        except DataInsufficiencyError:
            out[method] = None
            continue
        out[method] = (res.rel_error, res.iterations, res.flagged)
    return fi, rep, out


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> SweepResult:
    if not dimension_requirement_met(cfg.shape):
        log.warning("dims=%d is below the sampling-theory requirement for order %d", cfg.dims, cfg.order)
    truth: KruskalModel = generate_truth(cfg.gen_config(), stream(cfg.seed, "truth"))
    tasks = [(cfg, truth, fi, rep) for fi in range(len(cfg.omega_fractions)) for rep in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_replicate, tasks))
    else:
        outputs = [_replicate(t) for t in tasks]
    outputs.sort(key=lambda o: (o[0], o[1]))

    rows = []
    for method in cfg.methods:
        for fi, fraction in enumerate(cfg.omega_fractions):
            fits = [o[2][method] for o in outputs if o[0] == fi]
            done = [f for f in fits if f is not None]
            flagged = sum(f is None for f in fits) + sum(bool(f[2]) for f in done)
            if done:
                errs = np.array([f[0] for f in done])
                mean = float(errs.mean())
                std = float(errs.std(ddof=1)) if len(errs) > 1 else 0.0
                iters = float(np.mean([f[1] for f in done]))
            else:
                mean = std = iters = math.nan
            rows.append(SweepRow(method, fraction, mean, std, iters, flagged))
    return SweepResult(rows)


def check_invariants(result: SweepResult, replicates: int | None = None) -> list[str]:
    """Hard invariant violations of a sweep (empty list when all hold)."""
    problems = []
    for r in result.rows:
        skipped = math.isnan(r.mean_rel_error) and r.flagged > 0
        if not (r.mean_rel_error >= 0 or skipped):
            problems.append(f"{r.method.value}@{r.omega_fraction}: mean error {r.mean_rel_error} is not >= 0")
        if replicates == 1 and r.std_rel_error != 0:
            problems.append(f"{r.method.value}@{r.omega_fraction}: nonzero std with a single replicate")
    for fraction in {r.omega_fraction for r in result.rows if r.omega_fraction == 1.0}:
        try:
            p, o = result.mean("poisson", fraction), result.mean("oracle", fraction)
        except KeyError:
            continue
        if abs(p - o) > 1e-10:
            problems.append(f"Poisson and Oracle differ at full observation: {p} vs {o}")
    return problems


def structural_warnings(result: SweepResult) -> list[str]:
    """Soft expectations: the oracle should not lose to the Poisson fit below half coverage."""
    notes = []
    for r in result.rows:
        if r.method is not EstimatorKind.ORACLE or r.omega_fraction >= 0.5:
            continue
        try:
            p = result.row("poisson", r.omega_fraction)
        except KeyError:
            continue
        if r.mean_rel_error > p.mean_rel_error + 2 * (r.std_rel_error + p.std_rel_error):
            notes.append(f"Oracle worse than Poisson at fraction {r.omega_fraction}")
    return notes


def _g(v) -> str:
    return format(v, ".10g")


def emit_csv(result: SweepResult, path) -> None:
    """Write the sweep table and a gnuplot script next to it."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in result.rows:
                w.writerow(
                    [r.method.value, _g(r.omega_fraction), _g(r.mean_rel_error), _g(r.std_rel_error), _g(r.mean_iterations), r.flagged]
                )
        path.with_suffix(".gp").write_text(_gnuplot_script(result, path.name), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write sweep results to {path}: {exc}") from exc


def _gnuplot_script(result: SweepResult, csv_name: str) -> str:
    methods = [m for m in METHOD_ORDER if any(r.method is m for r in result.rows)]
    plots = ", \\\n     ".join(
        f"'{csv_name}' using (strcol(1) eq '{m.value}' ? $2 : 1/0):3:4 with yerrorlines title '{m.value}'" for m in methods
    )
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel '|Omega| / I^N'\n"
        "set ylabel 'Average Relative Error'\n"
        "set logscale y\n"
        f"plot {plots or '1/0 notitle'}\n"
    )


def read_csv(path) -> SweepResult:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [
            SweepRow(EstimatorKind(m), float(f), float(me), float(sd), float(it), int(fl))
            for m, f, me, sd, it, fl in reader
        ]
    return SweepResult(rows)
