"""Command-line entry point.

    etmpc condense          print problem dimensions and the constraint count
    etmpc simulate          one closed-loop run, per-step CSV (+ figure)
    etmpc batch             many runs, aggregate CSV and histogram (+ figure)
    etmpc analyze           cost-model sweep CSV over active-set sizes (+ figure)
    etmpc compare-encodings per-event bit comparison report
    etmpc serve             run the central node on a TCP address
    etmpc verify            run the acceptance suite; nonzero exit on failure

CSV output uses a comma separator, a header row, and '.' decimals.  Report
commands that write a CSV also render a PNG next to it unless --no-plot is
given.  Exit codes: 0 success, 1 validation/usage failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import costmodel, plotting
from .costmodel import Dims, VARIANTS, compare_encodings
from .errors import EtmpcError, ValidationError
from .netio import CentralNode, CentralServer, SocketTransport
from .problem import condense, load_problem, validate
from .sim import (
    SimConfig,
    run_batch,
    sample_feasible_states,
    simulate_event_triggered,
)
from .verify import VerifyContext, run_criteria

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _parse_x0(text: str, n: int) -> np.ndarray:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != n:
        raise ValidationError([f"--x0 needs {n} values, got {len(vals)}"])
    return np.array(vals)


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError([f"--address must be HOST:PORT, got {text!r}"])
    return host, int(port)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _figure_path(csv_path: str, suffix: str = "") -> str:
    stem, _ = os.path.splitext(csv_path)
    return f"{stem}{suffix}.png"


def cmd_condense(args) -> int:
    problem = load_problem(args.problem)
    report = validate(problem)
    if not report.ok:
        for v in report.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_USAGE
    qp = condense(problem)
    n, m, N, q = qp.dims
    print(f"problem  {problem.name}")
    print(f"n={n} m={m} N={N}")
    print(f"decision variables mN = {m * N}")
    print(f"constraint rows q = {q} (= 2mN + 2nN + 2n for the box loader)")
    print(f"max active rows mN = {m * N}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem = load_problem(args.problem)
    qp = condense(problem)
    if args.x0 is not None:
        x0 = _parse_x0(args.x0, problem.n)
    else:
        x0 = sample_feasible_states(problem, 1, args.seed, qp)[0]
    config = SimConfig(
        problem=problem, x0=x0, variant=args.variant, backend=args.backend,
        precision=args.precision, max_steps=args.max_steps,
    )
    transport = None
    if args.connect:
        transport = SocketTransport(_parse_address(args.connect), timeout=args.timeout)
    traj = simulate_event_triggered(config, qp=qp, transport=transport)

    n, m = problem.n, problem.m
    header = (["k"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
              + ["e", "q_A", "bits", "flops_inv", "flops_mat"])
    rows = []
    for s in traj.steps:
        rows.append(
            [s.k] + [repr(v) for v in s.x] + [repr(v) for v in s.u]
            + [s.e, "" if s.q_active is None else s.q_active,
               s.bits, s.flops_inv, s.flops_mat])
    _write_csv(args.output, header, rows)
    print(f"{len(traj.steps)} steps, {traj.total_events} events, "
          f"{traj.total_bits} bits downlink, converged={traj.converged}")
    if traj.aborted:
        print(f"aborted: {traj.aborted}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.output}")
    if not args.no_plot:
        print(f"wrote {plotting.save_trajectory_figure(traj, _figure_path(args.output))}")
    return EXIT_OK


def cmd_batch(args) -> int:
    problem = load_problem(args.problem)
    qp = condense(problem)
    variants = tuple(v.strip() for v in args.variants.split(","))
    report = run_batch(problem, args.count, args.seed, variants=variants,
                       backend=args.backend, precision=args.precision, qp=qp)
    header = ["variant", "runs", "steps", "events", "event_rate",
              "bits", "flops_inv", "flops_mat", "converged_runs"]
    rows = []
    for v in variants:
        agg = report.aggregates[v]
        rows.append([v, agg.runs, agg.steps, agg.events, repr(agg.event_rate),
                     agg.bits, agg.flops_inv, agg.flops_mat, agg.converged_runs])
    _write_csv(args.output, header, rows)
    hist_path = _figure_path(args.output, "_qa_hist").replace(".png", ".csv")
    hist_rows = []
    for v in variants:
        for qa, count in sorted(report.aggregates[v].q_active_hist.items()):
            hist_rows.append([v, qa, count])
    _write_csv(hist_path, ["variant", "q_A", "events"], hist_rows)
    print(f"wrote {args.output} and {hist_path}")
    if not args.no_plot:
        fig = plotting.save_qa_histogram(report, problem.m * problem.N,
                                         _figure_path(args.output, "_qa_hist"))
        print(f"wrote {fig}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    problem = load_problem(args.problem)
    qp = condense(problem)
    n, m, N, q = qp.dims
    reports = costmodel.sweep_reports(Dims(n, m, N, q))
    header = ["variant", "n", "m", "N", "q", "q_A", "bits", "flops",
              "flops_inv", "flops_mat", "ratio"]
    rows = [
        [r.variant, n, m, N, q, r.dims.q_active, r.bits, r.flops,
         r.flops_inv, r.flops_mat, f"{float(r.ratio):.12g}"]
        for r in reports
    ]
    _write_csv(args.output, header, rows)
    print(f"wrote {args.output}")
    if not args.no_plot:
        print(f"wrote {plotting.save_sweep_figure(reports, _figure_path(args.output))}")
    return EXIT_OK


def cmd_compare_encodings(args) -> int:
    problem = load_problem(args.problem)
    qp = condense(problem)
    n, m, N, q = qp.dims
    qa = args.q_active if args.q_active is not None else m * N
    cmp = compare_encodings(Dims(n, m, N, q, q_active=qa))
    print(f"problem {problem.name}: n={n} m={m} N={N} q={q}, q_active={qa}")
    for v in VARIANTS:
        print(f"  bits({v}) = {cmp.bits[v]}")
    print(f"  bits(A1) <= bits(A2): {cmp.a1_le_a2}")
    for v, ok in cmp.a4_dominates.items():
        print(f"  bits({v}) <= bits(A4): {ok}")
    lam = costmodel.BITS_PER_REAL

    def fmt(threshold, direct, agrees, label):
        if threshold is None:
            return f"  {label}: threshold holds with equality, no prediction"
        if threshold:
            verdict = "correct" if agrees else "WRONG"
            return (f"  {label}: threshold holds, predicts it; "
                    f"direct comparison {'confirms' if direct else 'refutes'} ({verdict})")
        return (f"  {label}: threshold does not hold, no prediction; "
                f"direct comparison says {direct}")

    print(fmt(cmp.a3_gt_a1_threshold, cmp.a3_gt_a1_direct, cmp.a3_gt_a1_agrees,
              f"(lam-2)/3 > n/m  [lam={lam}] => bits(A3) > bits(A1)"))
    print(fmt(cmp.a3_gt_a2_threshold, cmp.a3_gt_a2_direct, cmp.a3_gt_a2_agrees,
              "(lam-2)/3 > n/m + lam*q_a*(q_a+1)/(6mN) => bits(A3) > bits(A2)"))
    return EXIT_OK


def cmd_serve(args) -> int:
    problem = load_problem(args.problem)
    qp = condense(problem)
    central = CentralNode()
    precision = "half" if args.precision == "binary16-downlink" else "double"
    central.register(args.node_id, qp, args.variant, precision)
    server = CentralServer(_parse_address(args.address), central)
    host, port = server.server_address[:2]
    print(f"central node serving {problem.name} ({args.variant}) on {host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.server_close()
    return EXIT_OK


def cmd_verify(args) -> int:
    numbers = None
    if args.criterion:
        numbers = sorted({int(c) for c in args.criterion.split(",")})
    ctx = VerifyContext(state_count=args.count, seed=args.seed)
    out_dir = args.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results = run_criteria(numbers, ctx=ctx, output_dir=out_dir)
    failed = 0
    for res in results:
        print(res.line())
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return EXIT_OK if failed == 0 else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etmpc",
        description="Event-triggered networked MPC toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_problem(p):
        p.add_argument("--problem", required=True,
                       help="bundled problem name or path to a definition file "
                            "(search also honors $ETMPC_PROBLEM_DIR)")

    p = sub.add_parser("condense", help="print condensed QP dimensions")
    add_problem(p)
    p.set_defaults(fn=cmd_condense)

    p = sub.add_parser("simulate", help="run one closed loop, write per-step CSV")
    add_problem(p)
    p.add_argument("--x0", help="comma-separated initial state (default: sampled)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=VARIANTS, default="A1")
    p.add_argument("--backend", choices=("naive-inverse", "lu-pivoted"),
                   default="lu-pivoted")
    p.add_argument("--precision", choices=("full", "binary16-downlink"),
                   default="full")
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--connect", help="HOST:PORT of a remote central node "
                                     "(default: in-process loopback)")
    p.add_argument("--timeout", type=float, default=1.0,
                   help="socket reply timeout in seconds")
    p.add_argument("--output", "-o", default="simulate.csv")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("batch", help="aggregate many runs per variant")
    add_problem(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variants", default="A1,A2,A3,A4")
    p.add_argument("--backend", choices=("naive-inverse", "lu-pivoted"),
                   default="lu-pivoted")
    p.add_argument("--precision", choices=("full", "binary16-downlink"),
                   default="full")
    p.add_argument("--output", "-o", default="batch.csv")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("analyze", help="cost-model sweep over active-set sizes")
    add_problem(p)
    p.add_argument("--output", "-o", default="analyze.csv")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("compare-encodings", help="per-event bit comparison")
    add_problem(p)
    p.add_argument("--q-active", type=int, default=None,
                   help="active-set size for the comparison (default mN)")
    p.set_defaults(fn=cmd_compare_encodings)

    p = sub.add_parser("serve", help="run the central node over TCP")
    add_problem(p)
    p.add_argument("--address", default="127.0.0.1:7340")
    p.add_argument("--variant", choices=VARIANTS, default="A1")
    p.add_argument("--precision", choices=("full", "binary16-downlink"),
                   default="full")
    p.add_argument("--node-id", type=int, default=1)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--criterion", help="comma-separated subset, e.g. 3,5,6")
    p.add_argument("--count", type=int, default=100,
                   help="initial states per problem for the simulation criteria")
    p.add_argument("--seed", type=int, default=2026)
    p.add_argument("--output-dir", help="where to write histogram CSVs")
    p.set_defaults(fn=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EtmpcError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
