"""Command-line interface: ``gmn <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 model-validation error, 3 numerical
failure (diagnostic on stderr).  Every subcommand is deterministic given the
model, ``--seed`` and ``--budget``.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import List, Optional

import numpy as np

from . import core
from . import families as fam
from . import fitting
from . import mixing as mx
from .errors import GmnError, QuadratureError, UnsupportedVariantError, ValidationError
from .io import as_gmn, dumps_json, format_csv, load_model, read_csv

__all__ = ["main", "run", "default_probes", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
_CHECK_RTOL = 1e-7


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0, help="64-bit unsigned seed (default 0)")
    common.add_argument("--out", default="-", help="output path ('-' for stdout)")

    model = _Parser(add_help=False)
    model.add_argument("--model", required=True, help="model JSON file, or pkg:<name> for a packaged model")

    probes = _Parser(add_help=False)
    probes.add_argument("--probes", help="CSV of probe points (header y1..yd); default: built-in probes")

    parser = _Parser(prog="gmn", description="Generalized mixtures of normals.")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True

    p = sub.add_parser("sample", parents=[common, model], help="draw a sample (CSV)")
    p.add_argument("-n", type=_positive_int, default=1000, help="number of draws")

    p = sub.add_parser("pdf", parents=[common, model, probes], help="density at probe points (CSV)")
    p.add_argument("--method", choices=("auto", "closed", "quadrature"), default="auto")
    p.add_argument("--rtol", type=float, default=1e-10, help="quadrature relative tolerance")

    p = sub.add_parser("cdf", parents=[common, model, probes], help="distribution function at probe points (CSV)")
    p.add_argument("--budget", type=_positive_int, default=core.DEFAULT_MC_DRAWS, help="Monte Carlo draws for d > 1")

    sub.add_parser("moments", parents=[common, model], help="mean, covariance and mixing moments (JSON)")
    sub.add_parser("mardia", parents=[common, model], help="Mardia skewness and kurtosis (JSON)")

    p = sub.add_parser("quadform", parents=[common, model], help="quadratic-form expectations (JSON)")
    p.add_argument("--budget", type=_positive_int, default=None, help="decomposition draws (mean mixtures)")

    p = sub.add_parser("marginal", parents=[common, model], help="marginal model (JSON)")
    p.add_argument("--indices", type=_int_list, required=True, help="0-based components to keep, e.g. 0,2")

    p = sub.add_parser("conditional", parents=[common, model], help="conditional law and posterior nodes (JSON)")
    p.add_argument("--given", type=_int_list, required=True, help="0-based conditioning components")
    p.add_argument("--values", type=_float_list, required=True, help="observed values of the given components")

    p = sub.add_parser("fit", parents=[common], help="EM fit of the chi-mixture family (JSON)")
    p.add_argument("--data", required=True, help="CSV data file (header y1..yd)")
    p.add_argument("--nu", type=_int_list, default=[1], help="degrees of freedom; several values profile nu")
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--init", choices=("moments", "skew_direction"), default="moments")

    p = sub.add_parser("check", parents=[common, model, probes], help="run the invariant suite (table)")
    p.add_argument("--budget", type=_positive_int, default=200_000, help="Monte Carlo draws")
    p.add_argument("--csv", dest="probe_csv", help="write probe, closed, quadrature, rel_err to this CSV")
    return parser


def default_probes(dist: core.GmnDistribution) -> np.ndarray:
    """Seven fixed probe points around ``xi`` scaled by the Cholesky factor of ``Sigma``."""
    d = dist.dim
    offsets = np.random.default_rng(20240917).standard_normal((7, d))
    offsets[0] = 0.0
    return dist.xi + offsets @ dist.sigma.chol.T


def _probe_points(args, dist) -> np.ndarray:
    if not args.probes:
        return default_probes(dist)
    _, data = read_csv(args.probes)
    if data.shape[1] != dist.dim:
        raise ValidationError(f"probe file has {data.shape[1]} columns, model dimension is {dist.dim}")
    return data


def _header(d: int) -> List[str]:
    return [f"y{j + 1}" for j in range(d)]


def _emit(args, text: str) -> None:
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)


def _has_closed_form(model) -> bool:
    if isinstance(model, core.GmnDistribution):
        return False
    return not (isinstance(model, fam.ChiMix) and float(model.nu) != int(model.nu))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_sample(args, model, rng):
    dist = as_gmn(model)
    return format_csv(dist.sample(rng, args.n), _header(dist.dim))


def _cmd_pdf(args, model, rng):
    dist = as_gmn(model)
    pts = _probe_points(args, dist)
    method = args.method
    if method == "auto":
        method = "closed" if _has_closed_form(model) else "quadrature"
    if method == "closed":
        if isinstance(model, core.GmnDistribution):
            raise UnsupportedVariantError("a GMN model has no closed-form density; use --method quadrature")
        vals = fam.closed_pdf(model, pts)
    else:
        vals = core.pdf_numeric(dist, pts, rtol=args.rtol)
    return format_csv(np.column_stack([pts, np.atleast_1d(vals)]), _header(dist.dim) + ["pdf"])


def _cmd_cdf(args, model, rng):
    dist = as_gmn(model)
    pts = _probe_points(args, dist)
    rows = []
    for y in pts:
        est = core.cdf(dist, y, rng=rng, budget=args.budget)
        rows.append([*y, est.value, est.se])
    return format_csv(rows, _header(dist.dim) + ["cdf", "se"])


def _cmd_moments(args, model, rng):
    dist = as_gmn(model)
    der = dist.derived
    return dumps_json(
        {
            "mean": core.mean(dist),
            "covariance": core.covariance(dist),
            "mixing_moments": dist.moment_set,
            "derived": {
                "omega": der.omega,
                "alpha_sq": der.alpha_sq,
                "delta_sq": der.delta_sq,
                "eta": der.eta,
                "tau_bar": der.tau_bar,
            },
        }
    )


def _cmd_mardia(args, model, rng):
    return dumps_json(core.mardia(as_gmn(model)))


def _cmd_quadform(args, model, rng):
    dist = as_gmn(model)
    report = core.quad_form_report(dist)
    out = {"e_mdist": report.e_mdist, "e_q": report.e_q, "gamma_free": report.gamma_free}
    if isinstance(dist.mixing, mx.MeanOnly):
        n = args.budget or 10_000
        ds = core.sample_q0_decomposition(dist, rng, n)
        out["decomposition"] = {
            "n": n,
            "mean_q0": float(ds.q0.mean()),
            "se_q0": float(ds.q0.std(ddof=1) / math.sqrt(n)),
            "max_abs_pathwise_gap": float(np.max(np.abs(ds.q0 - ds.w_sq - ds.v0_sq))),
        }
    return dumps_json(out)


def _cmd_marginal(args, model, rng):
    if isinstance(model, core.GmnDistribution):
        return dumps_json(core.marginal(model, args.indices))
    return dumps_json(fam.family_marginal(model, args.indices))


def _cmd_conditional(args, model, rng):
    if len(args.given) != len(args.values):
        raise _UsageError("gmn conditional: --given and --values must have the same length")
    dist = as_gmn(model)
    cond = core.conditional(dist, args.given, np.asarray(args.values, float))
    out = cond.to_json()
    out["mean"] = cond.mean()
    return dumps_json(out)


def _cmd_fit(args, model, rng):
    _, data = read_csv(args.data)
    cfg = fitting.FitConfig(max_iter=args.max_iter, tol=args.tol, nu=args.nu[0], init_method=args.init)
    if len(args.nu) == 1:
        return dumps_json(fitting.em_fit_chimix(data, cfg))
    best, results = fitting.profile_nu(data, args.nu, cfg)
    out = best.to_json()
    out["profile"] = {str(k): r.loglik for k, r in sorted(results.items())}
    return dumps_json(out)


def _check_rows(args, model, rng):
    """Run the invariant suite; returns ``(table_rows, probe_rows)``."""
    dist = as_gmn(model)
    rows = []

    def record(name, ok, detail):
        rows.append((name, bool(ok), detail))

    pts = _probe_points(args, dist)
    quad = np.atleast_1d(core.pdf_numeric(dist, pts))
    record("pdf_positive_finite", np.all(np.isfinite(quad) & (quad > 0)), f"{pts.shape[0]} probes")
    if _has_closed_form(model):
        closed = np.atleast_1d(fam.closed_pdf(model, pts))
        rel = np.abs(closed - quad) / np.abs(closed)
        record("closed_vs_quadrature", np.all(rel <= _CHECK_RTOL), f"max rel err {rel.max():.3e} (tol {_CHECK_RTOL:g})")
    else:
        closed = np.full(quad.shape, np.nan)
        rel = np.full(quad.shape, np.nan)
    probe_rows = np.column_stack([np.arange(pts.shape[0]), pts, closed, quad, rel])

    try:
        rep = core.mardia(dist)
        ok = True
        detail = f"path {rep.path}"
    except GmnError as exc:
        rep, ok, detail = None, False, str(exc)
    record("mardia_paths_agree", ok, detail)
    if rep is not None and rep.intermediates is not None and not isinstance(rep.beta1, core.Undefined):
        b1, b1r = rep.beta1, rep.intermediates.beta1_remark
        record("mardia_beta1_identity", abs(b1 - b1r) <= 1e-12 * max(1.0, abs(b1)), f"{b1:.15g} vs {b1r:.15g}")
        if not isinstance(rep.beta2, core.Undefined):
            b2, b2r = rep.beta2, rep.intermediates.beta2_remark
            record("mardia_beta2_identity", abs(b2 - b2r) <= 1e-12 * max(1.0, abs(b2)), f"{b2:.15g} vs {b2r:.15g}")
        if not np.any(dist.gamma):
            record("mardia_symmetric_beta1_zero", rep.beta1 == 0.0, f"beta1 = {rep.beta1!r}")

    if isinstance(model, (fam.Gh, fam.Sichel, fam.SymGh, fam.StudentT)) and rep is not None:
        fast = fam.family_mardia(model)
        pairs = [(rep.beta1, fast.beta1), (rep.beta2, fast.beta2)]
        gaps = [abs(a - b) / max(1.0, abs(a)) for a, b in pairs if not isinstance(a, core.Undefined)]
        record("mardia_fast_path", all(g <= 1e-9 for g in gaps), f"max rel gap {max(gaps, default=0.0):.3e}")

    n = args.budget
    draws = dist.sample(rng, n)
    mu = core.mean(dist)
    if isinstance(mu, core.Undefined):
        record("mean_vs_mc", True, f"skipped: {mu.reason}")
    else:
        se = draws.std(axis=0, ddof=1) / math.sqrt(n)
        z = np.abs(draws.mean(axis=0) - mu) / se
        record("mean_vs_mc", np.all(z <= 4.0), f"max |z| {z.max():.2f} over {n} draws")

    qf = core.quad_form_report(dist)
    if isinstance(dist.mixing, mx.MeanOnly) and not isinstance(qf.e_q, core.Undefined):
        ds = core.sample_q0_decomposition(dist, rng, n)
        gap = float(np.max(np.abs(ds.q0 - ds.w_sq - ds.v0_sq) / np.maximum(1.0, ds.q0)))
        record("q0_pathwise_decomposition", gap <= 1e-10, f"max rel gap {gap:.2e}")
        z = abs(ds.q0.mean() - qf.e_q) / (ds.q0.std(ddof=1) / math.sqrt(n))
        record("e_q_vs_mc", z <= 4.0, f"|z| {z:.2f}")

    if dist.dim > 1:
        j = 0
        marg = core.marginal(dist, [j])
        y = float(pts[0, j])
        direct = float(core.pdf_numeric(marg, [y]))
        normalizer = math.exp(core.conditional(dist, [j], [y]).log_marginal)
        rel_gap = abs(normalizer - direct) / direct
        record("marginal_matches_conditional_normalizer", rel_gap <= 1e-7, f"rel gap {rel_gap:.2e}")
    return rows, probe_rows


def _cmd_check(args, model, rng):
    rows, probe_rows = _check_rows(args, model, rng)
    width = max(len(r[0]) for r in rows)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for name, ok, detail in rows:
        lines.append(f"{name.ljust(width)}  {'PASS' if ok else 'FAIL'}    {detail}")
    if args.probe_csv:
        d = probe_rows.shape[1] - 4
        with open(args.probe_csv, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(format_csv(probe_rows, ["probe"] + _header(d) + ["closed", "quadrature", "rel_err"]))
    failed = [r[0] for r in rows if not r[1]]
    return "\n".join(lines) + "\n", failed


_COMMANDS = {
    "sample": _cmd_sample,
    "pdf": _cmd_pdf,
    "cdf": _cmd_cdf,
    "moments": _cmd_moments,
    "mardia": _cmd_mardia,
    "quadform": _cmd_quadform,
    "marginal": _cmd_marginal,
    "conditional": _cmd_conditional,
    "fit": _cmd_fit,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Execute one CLI invocation and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    try:
        model = load_model(args.model) if getattr(args, "model", None) else None
        if args.subcommand == "check":
            text, failed = _cmd_check(args, model, rng)
            _emit(args, text)
            if failed:
                print(f"gmn check: failed: {', '.join(failed)}", file=sys.stderr)
                return EXIT_NUMERICAL
            return EXIT_OK
        _emit(args, _COMMANDS[args.subcommand](args, model, rng))
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gmn {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, UnsupportedVariantError) as exc:
        print(f"gmn {args.subcommand}: invalid model or input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except QuadratureError as exc:
        print(
            f"gmn {args.subcommand}: numerical failure: {exc} (estimate {exc.value!r}, error {exc.error!r})",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL
    except (GmnError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"gmn {args.subcommand}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
