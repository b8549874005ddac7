import argparse
import csv
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import settings
from .errors import ConfigError, exit_code_for
from .experiments import (
    certify_convergence,
    certify_divergence,
    config_hash,
    convergence_study,
    lemma_coefficients,
    load_experiment_config,
    residual_scan,
    upsilon_family,
    upsilon_polynomial,
    write_report_csv,
    write_run_summary,
)
from .geometry import box, polytope_from_file, polytope_from_name
from .identities import SCOPES, run_identity_suite, write_identity_csv
from .logger import logger, result_logger
from .smoothbody import SURFACE_NAMES, phi_j1_smooth, surface_from_name
from .sphereint import CapPolynomial, QuadratureSpec, SphericalRegion
from .valuations import Full, LocalTensorSpec, ProductIndicator, local_tensor
from .validators import short_tensor, validate_tolerance


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Expected comma-separated numbers, got {text!r}") from e


def parse_eta(values: Optional[List[str]], n: int):
    """
    Build a test function from --eta items.

    Items: "full", "box:LO:HI", "cap:AXIS:MU", "weight:AXIS:COEFFS[:TAU]",
    with vectors written as comma-separated numbers. A box and a cap combine
    into one product indicator; a weight stands alone.
    """
    if not values or values == ["full"]:
        return Full()
    beta = region = weight = None
    for item in values:
        kind, *parts = item.split(":")
        if kind == "box" and len(parts) == 2:
            beta = box(_floats(parts[0]), _floats(parts[1]))
        elif kind == "cap" and len(parts) == 2:
            region = SphericalRegion.cap(_floats(parts[0]), float(parts[1]))
        elif kind == "weight" and len(parts) in (2, 3):
            tau = float(parts[2]) if len(parts) == 3 else None
            weight = CapPolynomial(np.asarray(_floats(parts[0])), tau, tuple(_floats(parts[1])))
        else:
            raise ConfigError(f"Cannot parse --eta {item!r}")
    if weight is not None:
        if beta is not None or region is not None:
            raise ConfigError("A weight cannot be combined with a box or cap")
        if weight.axis.size != n:
            raise ConfigError(f"Weight axis has dimension {weight.axis.size}, expected {n}")
        return weight
    return ProductIndicator(beta, region)


def _quadrature(tol: Optional[float], seed: Optional[int]) -> QuadratureSpec:
    values = {}
    if tol is not None:
        values["rel_tol"] = validate_tolerance(tol)
    if seed is not None:
        values["seed"] = seed
    return QuadratureSpec(**values)


def _write_tensor(tensor, path: Path, fmt: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["index", "value"])
            for index, value in tensor.items():
                writer.writerow([" ".join(str(i + 1) for i in index), repr(value)])
    else:
        path.write_text(json.dumps(tensor.to_records(), indent=2), encoding="utf-8")


def cmd_compute(body: Optional[str] = None, polytope: Optional[str] = None, k: int = 0, r: int = 0, s: int = 0,
                j: int = 0, m: int = 0, eta: Optional[List[str]] = None, tol: Optional[float] = None,
                seed: Optional[int] = None, out: Optional[str] = None, fmt: str = "summary"):
    """
    Evaluate Q^m phi_k^{r,s,j} on a builtin body, a polytope file or a smooth surface.
    """
    if bool(body) == bool(polytope):
        raise ConfigError("Give exactly one of --body or --polytope")
    quad = _quadrature(tol, seed)
    spec = LocalTensorSpec(k=k, r=r, s=s, j=j, m=m)

    if body and body.partition(":")[0] in SURFACE_NAMES:
        if (k, j, m) != (1, 1, 0):
            raise ConfigError("Smooth surfaces support k=1, j=1, m=0 only")
        surface = surface_from_name(body)
        f = parse_eta(eta, 3)
        if isinstance(f, ProductIndicator):
            raise ConfigError("Smooth surfaces take weights, not indicators")
        print(f"📊 Smooth surface {surface.name}: {spec.label}")
        value = phi_j1_smooth(surface, r, s, None if isinstance(f, Full) else f, quad)
        tensor, error, converged = value.tensor, value.error, value.converged
    else:
        P = polytope_from_name(body) if body else polytope_from_file(polytope)
        spec.validate_for(P.dimension)
        print(f"📊 {body or polytope}: n={P.dimension}, f-vector {P.f_vector()}, {spec.label}")
        value = local_tensor(P, spec, parse_eta(eta, P.dimension), quad)
        tensor, error, converged = value.tensor, value.error, value.converged

    print(f"   Value: {short_tensor(tensor, 12)}")
    if tensor.rank > 0:
        for index, component in tensor.items():
            print(f"      [{' '.join(str(i + 1) for i in index)}] = {component:.12g}")
    print(f"   Error estimate: {error:.2e}{'' if converged else ' (not converged)'}")
    if not converged:
        logger.warning(f"Quadrature for {spec.label} did not reach rel_tol={quad.rel_tol:g}")
    if out:
        _write_tensor(tensor, Path(out), fmt)
        print(f"✅ Tensor written to {out}")
    result_logger.log_check("compute", spec.label, "pass" if converged else "fail",
                            value=tensor.max_abs(), tolerance=quad.rel_tol, detail=body or polytope)
    return tensor


def cmd_identity_suite(scopes: List[str], trials: int = 3, max_rank: int = 2, tol: Optional[float] = None,
                       seed: int = 0, threads: Optional[int] = None, out: Optional[str] = None,
                       fmt: str = "summary") -> bool:
    """
    Run identity checks and print a pass/fail table.
    """
    print(f"Running identity suite: {', '.join(scopes)} (trials={trials}, p<={max_rank}, seed={seed})")
    rows = run_identity_suite(scopes, _quadrature(tol, seed), seed=seed, trials=trials,
                              max_rank=max_rank, threads=threads)
    failed = [row for row in rows if row.status != "pass"]

    if fmt == "summary" or failed:
        for scope in scopes:
            scoped = [row for row in rows if row.check == scope]
            bad = [row for row in scoped if row.status != "pass"]
            worst = max((row.defect for row in scoped), default=0.0)
            mark = "✅" if not bad else "❌"
            print(f"   {mark} {scope}: {len(scoped) - len(bad)}/{len(scoped)} passed, worst defect {worst:.2e}")
        for row in failed[:10]:
            print(f"      ❌ {row.check}:{row.case} defect {row.defect:.3e} > {row.tolerance:g} {row.detail or ''}")
        if len(failed) > 10:
            print(f"      ... and {len(failed) - 10} more")

    path = Path(out) if out else Path(settings.REPORT_DIR) / "identities.csv"
    if fmt == "csv" or out:
        write_identity_csv(rows, path)
        print(f"📄 Table written to {path}")
    print(f"\n📈 Summary: ✅ {len(rows) - len(failed)} passed | ❌ {len(failed)} failed")
    return not failed


def cmd_experiment(config_path: str, tol: Optional[float] = None, threads: Optional[int] = None,
                   out: Optional[str] = None, fmt: str = "csv", eps_scan: Optional[List[float]] = None) -> bool:
    """
    Run a lifted-paraboloid experiment and write its report.
    """
    config = load_experiment_config(config_path)
    quad = config.quadrature()
    if tol is not None:
        quad = quad.model_copy(update={"rel_tol": validate_tolerance(tol)})
    digest = config_hash(config)
    print(f"🧪 Experiment {config.name} [{digest}]: n={config.n}, k={config.k}, "
          f"t in {config.t_values}, threads={threads or settings.THREADS}")

    report = convergence_study(config, quad, threads)
    lemma = report.lemma
    print(f"   s0={lemma.s0}, q={lemma.q}, c_j={lemma.coefficients}")
    for row in report.rows:
        extra = f", target error {row.target_error:.2e}" if row.target_error is not None else ""
        ratio = f", residual {row.residual_ratio:.3f}" if row.residual_ratio is not None else ""
        print(f"   📊 t={row.t:g}: Gamma(E)={row.gamma_e:.8g}, defect={row.defect:.4e}{ratio}{extra}")

    certificates = []
    if config.target == "smooth":
        certificates.append(certify_convergence(report))
    elif any(term.j >= 2 for term in config.terms):
        certificates.append(certify_divergence(report))
    for certificate in certificates:
        mark = "✅" if certificate.passed else "❌"
        print(f"   {mark} {certificate.name}: {certificate.detail}")
        result_logger.log_check("experiment", certificate.name, "pass" if certificate.passed else "fail",
                                detail=certificate.detail)

    if eps_scan:
        for eps, ratio in residual_scan(config, eps_scan, quad=quad):
            print(f"   eps={eps:g}: residual ratio {'n/a' if ratio is None else f'{ratio:.4f}'}")

    path = Path(out) if out else Path(settings.REPORT_DIR) / f"{config.name}.csv"
    write_report_csv(report, path)
    summary_path = write_run_summary(report, path.with_suffix(".summary.json"), config, certificates)
    print(f"📄 Report written to {path} (summary {summary_path})")
    if fmt == "summary":
        print(f"📈 {len(report.rows)} levels in {report.runtime:.1f}s")
    return all(c.passed for c in certificates)


def cmd_upsilon(config_path: str) -> bool:
    """
    Print the exact polynomial restriction of Upsilon and its leading-coefficient certificate.
    """
    config = load_experiment_config(config_path)
    lemma = lemma_coefficients(config)
    family = upsilon_family(config)
    poly = upsilon_polynomial(lemma.coefficients, lemma.q, config.n, config.k, family, config.d)
    print(f"📐 Upsilon ({family}) for {config.name}: c_j={lemma.coefficients}, q={lemma.q}")
    print(f"   p = {poly.expression}")
    print(f"   Leading {poly.leading_monomial}: {poly.leading_coefficient} (expected {poly.expected_leading})")
    if poly.is_constant:
        print("   ✅ Polynomial is constant on the curve (rotation invariant)")
        return True
    mark = "✅" if poly.matches_expected else "❌"
    print(f"   {mark} Leading coefficient {'matches' if poly.matches_expected else 'differs from'} the prediction")
    return poly.matches_expected


def cmd_validate(config_path: Optional[str] = None) -> bool:
    """
    Validate settings and, optionally, an experiment config without running it.
    """
    print("Validating environment...")
    problems = settings.validate_settings()
    if problems:
        print(f"❌ Configuration issues: {', '.join(problems)}")
        print("Please check your .env file.")
        return False
    print("✅ Settings valid")
    print(f"   Threads: {settings.THREADS}")
    print(f"   Log file: {settings.LOG_FILE}")
    print(f"   Result log: {settings.RESULT_LOG_FILE}")
    print(f"   Reports: {settings.REPORT_DIR}")

    if config_path:
        config = load_experiment_config(config_path)
        lemma = lemma_coefficients(config)
        print(f"✅ Experiment config {config.name} valid [{config_hash(config)}]")
        print(f"   n={config.n}, k={config.k}, complex={config.complex_kind}, t={config.t_values}")
        print(f"   Cap mu={config.cap_mu:.6g}, eps={config.eps:g}, h={config.h:g}")
        print(f"   s0={lemma.s0}, q={lemma.q}, c_j={lemma.coefficients}")
    return True


def cmd_summary():
    summary = result_logger.log_run_summary()
    print(f"📈 {summary['date']}: {summary['total_checks']} checks, ✅ {summary['passed']} passed, "
          f"❌ {summary['failed']} failed, ⚠️ {summary['errors']} errors, {summary['experiment_rows']} experiment rows")
    for family, count in summary["failures_by_family"].items():
        print(f"   {family}: {count} failures")
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Local Minkowski tensor toolkit")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    compute = subparsers.add_parser("compute", help="Evaluate one local tensor")
    compute.add_argument("--body", type=str, help="Builtin body, e.g. cube, segment:L=2, ball:R=1")
    compute.add_argument("--polytope", type=str, help="Polytope JSON file")
    for flag in ("k", "r", "s", "j", "m"):
        compute.add_argument(f"--{flag}", type=int, default=0, help=f"Index {flag}")
    compute.add_argument("--eta", action="append", help="full | box:LO:HI | cap:AXIS:MU | weight:AXIS:COEFFS[:TAU]")
    compute.add_argument("--tol", type=float, help="Relative quadrature tolerance")
    compute.add_argument("--seed", type=int, help="Seed for randomized quadrature")
    compute.add_argument("--out", type=str, help="Write the tensor to this file")
    compute.add_argument("--format", choices=["csv", "summary"], default="summary")

    suite = subparsers.add_parser("identity-suite", help="Run identity checks")
    suite.add_argument("--all", action="store_true", help="Run every scope")
    suite.add_argument("--scope", action="append", choices=SCOPES, help="Scope to run (repeatable)")
    suite.add_argument("--trials", type=int, default=3, help="Random trials per scope")
    suite.add_argument("--max-rank", type=int, default=2, help="Largest tensor rank p checked")
    suite.add_argument("--tol", type=float, help="Relative quadrature tolerance")
    suite.add_argument("--seed", type=int, default=0)
    suite.add_argument("--threads", type=int, help="Worker threads (overrides THREADS)")
    suite.add_argument("--out", type=str, help="CSV output path")
    suite.add_argument("--format", choices=["csv", "summary"], default="summary")

    experiment = subparsers.add_parser("experiment", help="Lifted-paraboloid experiments")
    experiment_sub = experiment.add_subparsers(dest="action")
    run = experiment_sub.add_parser("run", help="Run an experiment config")
    run.add_argument("config", type=str)
    run.add_argument("--tol", type=float, help="Relative quadrature tolerance")
    run.add_argument("--threads", type=int, help="Worker threads (overrides THREADS)")
    run.add_argument("--out", type=str, help="CSV output path")
    run.add_argument("--format", choices=["csv", "summary"], default="csv")
    run.add_argument("--eps-scan", type=float, nargs="+", help="Report the residual ratio for these eps")
    ups = experiment_sub.add_parser("upsilon", help="Exact Upsilon polynomial certificate")
    ups.add_argument("config", type=str)

    validate = subparsers.add_parser("validate", help="Validate settings and an optional experiment config")
    validate.add_argument("--config", type=str, help="Experiment config to check")

    subparsers.add_parser("summary", help="Show today's check summary")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "compute":
            cmd_compute(body=args.body, polytope=args.polytope, k=args.k, r=args.r, s=args.s, j=args.j, m=args.m,
                        eta=args.eta, tol=args.tol, seed=args.seed, out=args.out, fmt=args.format)
            return 0
        if args.command == "identity-suite":
            scopes = list(SCOPES) if args.all or not args.scope else args.scope
            ok = cmd_identity_suite(scopes, trials=args.trials, max_rank=args.max_rank, tol=args.tol,
                                    seed=args.seed, threads=args.threads, out=args.out, fmt=args.format)
            return 0 if ok else 1
        if args.command == "experiment" and args.action == "run":
            ok = cmd_experiment(args.config, tol=args.tol, threads=args.threads, out=args.out,
                                fmt=args.format, eps_scan=args.eps_scan)
            return 0 if ok else 1
        if args.command == "experiment" and args.action == "upsilon":
            return 0 if cmd_upsilon(args.config) else 1
        if args.command == "validate":
            return 0 if cmd_validate(args.config) else 2
        if args.command == "summary":
            cmd_summary()
            return 0
    except Exception as e:
        code = exit_code_for(e)
        print(f"❌ {type(e).__name__}: {e}")
        logger.exception(f"Command {args.command} failed")
        return code

    parser.print_help()
    return 0


if __name__ == "__main__":
    sys.exit(main())
