"""Command line entry point: ``cofrag {run,two-run,study,check-kernel} <config>``.

Exit status: 0 when every requested check passes, 1 for configuration or
I/O errors, 2 when a bound check fails, 3 when the kernel hypotheses are
not certified (override with ``--force``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics
from .config import Config, ConfigError, format_config, load_config
from .kernels import admissible_m0_interval, verify_hypotheses
from .solver import HypothesisError, SolverError, run, two_run_distance

__all__ = ["main", "run_command", "two_run_command", "convergence_study", "check_kernel_command"]

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_HYPOTHESIS = 0, 1, 2, 3
WORKERS_ENV = "COFRAG_WORKERS"

logger = logging.getLogger("cofrag")


def _num(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(v)
    return repr(float(v))


def _provenance(config: Config) -> list[str]:
    return ["# " + line for line in format_config(config).splitlines()]


def _write_csv(path: Path, header: list[str], rows, config: Config | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("\n".join(_provenance(config)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_moments(path: Path, series: diagnostics.MomentSeries, config: Config) -> None:
    cols = series.columns()
    rows = [[_num(c[1][k]) for c in cols] for k in range(len(series.times))]
    _write_csv(path, [c[0] for c in cols], rows, config)


def write_report(out: Path, config: Config, report: diagnostics.BoundReport, preamble: list[str]) -> None:
    text = preamble + ["", "bound checks:"] + ["  " + line for line in report.lines()]
    verdict = "all checks passed" if report.passed else "CHECK FAILURE"
    text += ["", verdict]
    (out / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    _write_csv(out / "report.csv", ["name", "worst_margin", "pass"], report.csv_rows())


def _stability(config: Config, scenario):
    tr = two_run_distance(scenario)
    kappa = diagnostics.compute_kappa(scenario.spec, scenario.delta)
    check = diagnostics.check_stability_envelope(tr.times, tr.distance, *tr.series, kappa.kappa, lockstep=tr.lockstep)
    return tr, kappa, check


def _write_distance(out: Path, tr, check, config: Config) -> None:
    rows = [[_num(t), _num(d), _num(e)] for t, d, e in zip(tr.times, tr.distance, check.envelope)]
    _write_csv(out / "distance.csv", ["t", "distance", "envelope"], rows, config)


def run_command(config: Config, out: Path) -> int:
    """Single run with the toggled checks; the stability check adds a lockstep pair."""
    scenario = config.scenario()
    result = run(scenario, checks=False)
    report = diagnostics.run_checks(result)
    out.mkdir(parents=True, exist_ok=True)
    write_moments(out / "moments.csv", result.series, config)

    m1 = result.series.moment(1.0)
    drift = float(np.max(np.abs(m1 - m1[0])) / m1[0]) if m1[0] > 0 else 0.0
    sub = float(result.series.subgrid_fraction[-1])
    pre = result.hypotheses.lines() + [
        "",
        f"grid: {result.grid.n} cells on [{config.x_min:g}, {config.j:g}), {config.cells_per_decade} per decade",
        f"steps: {result.steps}",
        f"relative mass drift: {drift:.3e}",
        f"sub-grid mass fraction at t_end: {sub:.3e}",
        "temporal error estimate (accumulated Heun-Euler): "
        + ", ".join(f"{k} {v:.3e}" for k, v in result.temporal_error.items()),
    ]
    if sub > config.subgrid_threshold:
        pre.append(f"WARNING: sub-grid mass fraction exceeds {config.subgrid_threshold:g}; lower x_min")
    if "stability" in config.checks:
        tr, kappa, check = _stability(config, scenario)
        report.add(check)
        _write_distance(out, tr, check, config)
        pre.append(f"kappa = {kappa.kappa:.6g} attained by {kappa.attained_by}")
    write_report(out, config, report, pre)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


def two_run_command(config: Config, out: Path) -> int:
    scenario = config.scenario()
    tr, kappa, check = _stability(config, scenario)
    out.mkdir(parents=True, exist_ok=True)
    _write_distance(out, tr, check, config)
    report = diagnostics.BoundReport([check])
    pre = [
        f"perturbation: {config.perturbation:g}",
        f"kappa = {kappa.kappa:.6g} attained by {kappa.attained_by}, Y = {kappa.Y:.6g}",
        "kappa terms: " + ", ".join(f"{k}={v:.4g}" for k, v in kappa.terms.items()),
    ]
    write_report(out, config, report, pre)
    print(check.line())
    return EXIT_OK if report.passed else EXIT_CHECK


def check_kernel_command(config: Config) -> int:
    spec = config.kernel_spec()
    lines = []
    for R in sorted({1.0, config.j}):
        lines += verify_hypotheses(spec, R=R).lines()
    if config.coag == "power_law_sum" and config.frag == "power_law":
        iv = admissible_m0_interval(config.alpha, config.beta, config.gamma, config.nu)
        lines.append("admissible m0: " + ("empty" if iv is None else f"({iv[0]:g}, {iv[1]:g}]"))
    try:
        k = diagnostics.compute_kappa(spec, config.delta)
        lines.append(f"kappa = {k.kappa:.6g} attained by {k.attained_by}")
    except ValueError as exc:
        lines.append(f"kappa unavailable: {exc}")
    print("\n".join(lines))
    return EXIT_OK if verify_hypotheses(spec, R=config.j).passed else EXIT_HYPOTHESIS


# ---------------------------------------------------------------------------
# convergence study


def _study_job(args):
    config, kind = args
    result = run(config.scenario(), checks=True)
    s = result.series
    m0 = config.m0
    row = {
        "sweep": kind,
        "j": config.j,
        "cells_per_decade": config.cells_per_decade,
        f"M_{m0:g}": s.moment(m0)[-1],
        "M_1": s.moment(1.0)[-1],
        "M_2": s.moment(2.0)[-1],
        "W_functional": s.w_functional[-1],
        "subgrid_fraction": s.subgrid_fraction[-1],
    }
    if result.report is not None:
        for c in result.report.checks:
            row[f"margin_{c.name}"] = c.worst_margin
    return row


def observed_order(errors, refinements) -> list[float]:
    """``log(e_k / e_{k+1}) / log(r_k)`` for consecutive errors against a reference."""
    out = []
    for a, b, r in zip(errors[:-1], errors[1:], refinements):
        out.append(math.log(a / b) / math.log(r) if a > 0 and b > 0 else math.nan)
    return out


def convergence_study(config: Config, out: Path, workers: int | None = None) -> Path:
    """Sweep ``j_values`` at fixed resolution and ``resolutions`` at fixed ``j``.

    Writes ``summary.csv``: one row per run with final moments, worst check
    margins and successive differences within its sweep. The resolution sweep
    also runs a reference at twice the finest resolution and reports the error
    against it and the observed order between consecutive resolutions.
    """
    if len(config.j_values) < 3 and len(config.resolutions) < 3:
        raise ValueError("a convergence study needs at least 3 values of j or of cells_per_decade")
    jobs = []
    if len(config.j_values) >= 3:
        jobs += [(config.with_(j=float(j)), "j") for j in sorted(config.j_values)]
    if len(config.resolutions) >= 3:
        res = sorted(int(r) for r in config.resolutions)
        jobs += [(config.with_(cells_per_decade=r), "resolution") for r in res]
        jobs.append((config.with_(cells_per_decade=2 * res[-1]), "reference"))
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_study_job, jobs))
    else:
        rows = [_study_job(job) for job in jobs]

    m0_key = f"M_{config.m0:g}"
    tracked = (m0_key, "M_1", "M_2")
    for kind in ("j", "resolution"):
        sweep = [r for r in rows if r["sweep"] == kind]
        for prev, cur in zip(sweep[:-1], sweep[1:]):
            for key in tracked:
                cur[f"diff_{key}"] = abs(cur[key] - prev[key])
    sweep = [r for r in rows if r["sweep"] == "resolution"]
    if sweep:
        ref = next(r for r in rows if r["sweep"] == "reference")
        ratios = [b["cells_per_decade"] / a["cells_per_decade"] for a, b in zip(sweep[:-1], sweep[1:])]
        for key in tracked:
            errs = [abs(r[key] - ref[key]) for r in sweep]
            for r, e in zip(sweep, errs):
                r[f"err_{key}"] = e
            for r, order in zip(sweep[1:], observed_order(errs, ratios)):
                r[f"order_{key}"] = order

    header = []
    for r in rows:
        header += [k for k in r if k not in header]
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.csv"
    body = [[r.get(k, "") if isinstance(r.get(k, ""), str) else _num(r[k]) for k in header] for r in rows]
    _write_csv(path, header, body, config)
    print(f"wrote {path}")
    return path


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cofrag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "integrate one scenario and evaluate the toggled checks"),
        ("two-run", "lockstep perturbed pair and the stability envelope"),
        ("study", "convergence study over j and/or grid resolution"),
        ("check-kernel", "certify the kernel hypotheses and report constants"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", type=Path)
        sp.add_argument("--force", action="store_true", help="skip the hypothesis gate")
        sp.add_argument("--dry-run", action="store_true", help="validate and print the resolved config only")
        sp.add_argument("--out", type=Path, default=Path("cofrag_out"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.force:
        config = config.with_(force=True)
    if args.dry_run:
        print(format_config(config), end="")
        print("\n".join(verify_hypotheses(config.kernel_spec(), R=config.j).lines()))
        return EXIT_OK
    try:
        if args.command == "run":
            return run_command(config, args.out)
        if args.command == "two-run":
            return two_run_command(config, args.out)
        if args.command == "study":
            convergence_study(config, args.out)
            return EXIT_OK
        return check_kernel_command(config)
    except HypothesisError as exc:
        print(exc, file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ValueError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
