"""Command-line entry point: ``ztpcp generate|fit|theory|experiment``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .estimators import EstimatorKind, FitSpec, fit
from .experiments import ExperimentConfig, check_invariants, emit_csv, run_sweep, structural_warnings
from .generate import GenConfig, make_instance
from .optim import OptimOptions
from .sampling import stream
from .tensors import ContractError, ObservationSet
from .theory import BoundInputs, BoundKind, DomainError, c_beta, kappa, theorem_bound, verify_kl_bounds


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return dims


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_generate(args) -> int:
    cfg = GenConfig(args.dims, args.rank, args.beta, args.alpha, args.seed)
    size = int(round(args.omega_frac * cfg.shape.size))
    inst = make_instance(cfg, size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_model(out / "truth.json", inst.truth)
    io.write_counts(out / "counts.tns", inst.counts)
    io.write_observations(out / "omega.tns", inst.omega)
    io.write_observations(out / "gamma.tns", inst.gamma)
    print(f"wrote {out}: |omega|={len(inst.omega)} |gamma|={len(inst.gamma)} nnz={inst.counts.nnz}")
    return 0


def cmd_fit(args) -> int:
    kind = EstimatorKind(args.method)
    truth = io.read_model(args.truth) if args.truth else None
    shape = truth.shape if truth is not None else None
    X = io.read_counts(args.counts, shape)
    if args.omega:
        omega = io.read_observations(args.omega, X.shape)
    elif kind is EstimatorKind.POISSON:
        omega = ObservationSet.full(X.shape)
    else:
        raise ContractError(f"--omega is required for method {kind.value}")
    optim = replace(OptimOptions(), max_iters=args.max_iters, grad_tol=args.tol)
    res = fit(FitSpec(kind, args.rank, init_seed=args.seed, optim=optim), X, omega, truth=truth)
    doc = {
        "method": kind.value,
        "final_nll": res.final_nll,
        "rel_error": res.rel_error,
        "truth_nll": res.truth_nll,
        "iterations": res.iterations,
        "status": res.status.value,
        "restarts": res.restarts,
        "flagged": res.flagged,
        "model": json.loads(io.model_to_json(res.model)),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    rel = "n/a" if res.rel_error is None else format(res.rel_error, ".10g")
    print(f"final_nll {res.final_nll:.10g}")
    print(f"rel_error {rel}")
    return 0


def cmd_theory(args) -> int:
    if args.what == "kappa":
        k = kappa(args.beta)
        _emit({"beta": args.beta, "kappa": k, "sqrt_kappa": math.sqrt(k), "c_beta": c_beta(args.beta)})
    elif args.what == "bound":
        shape = args.dims
        if len(shape) == 1 and args.order:
            shape = shape * args.order
        inputs = BoundInputs(shape, args.beta, args.alpha, args.rank, args.rank_est or args.rank, args.omega_size)
        value = theorem_bound(inputs, BoundKind(args.kind))
        doc = {"kind": args.kind, "shape": list(inputs.shape), "beta": args.beta, "alpha": args.alpha,
               "rank_true": inputs.rank_true, "rank_est": inputs.rank_est, "omega_size": args.omega_size,
               "bound": value}
        if args.warn_vacuous:
            doc["vacuous"] = value >= 1.0
        _emit(doc)
    else:
        report = verify_kl_bounds(args.beta, args.alpha, args.samples, stream(args.seed, "verify-kl"))
        _emit(report.as_dict())
        return 0 if report.ok else 1
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    configs = cfg.paper_scale() if args.paper_scale else [cfg]
    out = Path(args.out)
    status = 0
    for c in configs:
        path = out if len(configs) == 1 else out.with_name(f"{out.stem}_I{c.dims}{out.suffix}")
        result = run_sweep(c, workers=args.workers)
        emit_csv(result, path)
        for note in structural_warnings(result):
            logging.warning(note)
        problems = check_invariants(result, c.replicates)
        for p in problems:
            print(f"invariant violated: {p}", file=sys.stderr)
        status = status or (1 if problems else 0)
        print(f"wrote {path}")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ztpcp", description="Zero-truncated Poisson CP completion tools.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic problem instance")
    g.add_argument("--dims", type=_dims, required=True)
    g.add_argument("--rank", type=int, required=True)
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--alpha", type=float, required=True)
    g.add_argument("--omega-frac", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a CP model to a counts file")
    f.add_argument("--method", choices=[k.value for k in EstimatorKind], required=True)
    f.add_argument("--counts", required=True)
    f.add_argument("--omega")
    f.add_argument("--rank", type=int, required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--max-iters", type=int, default=OptimOptions().max_iters)
    f.add_argument("--tol", type=float, default=OptimOptions().grad_tol, help="projected-gradient tolerance")
    f.add_argument("--truth")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("theory", help="error-bound calculators")
    tsub = t.add_subparsers(dest="what", required=True)
    k = tsub.add_parser("kappa")
    k.add_argument("--beta", type=float, required=True)
    b = tsub.add_parser("bound")
    b.add_argument("--kind", choices=[k.value for k in BoundKind], required=True)
    b.add_argument("--dims", type=_dims, required=True, help="a,b,c or a single cubic extent with --order")
    b.add_argument("--order", type=int)
    b.add_argument("--rank", type=int, required=True)
    b.add_argument("--rank-est", type=int)
    b.add_argument("--omega-size", type=int, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--warn-vacuous", action="store_true")
    v = tsub.add_parser("verify-kl")
    v.add_argument("--beta", type=float, required=True)
    v.add_argument("--alpha", type=float, required=True)
    v.add_argument("--samples", type=int, default=10**6)
    v.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_theory)

    e = sub.add_parser("experiment", help="run a replicated sweep and write a CSV")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--paper-scale", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractError, DomainError, io.FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
