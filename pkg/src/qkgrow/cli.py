"""Command-line experiment runner.

Subcommands: ``run``, ``attack``, ``analyze``, ``verify-transcript``.
Exit status is 0 when every check passes, 1 when a check fails and 2 on
usage errors.  ``--config FILE`` loads a JSON object of option values;
flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import analysis
from .adversary import BRUTE_FORCE_MAX_N
from .channel import ChannelConfig
from .experiments import (intercept_resend_study, run_sessions, surviving_count_study,
                          tamper_study)
from .keybits import RngHandle
from .protocol import DEFAULT_ABORT_THRESHOLD, SessionConfig, SiftMode
from .reports import Check, Estimate, RunReport, write_csv
from .transcript import read_transcripts, verify_transcript, write_transcripts

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _flip_prob(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 0.5:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 0.5]")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _int_list(text: str) -> list[int]:
    """Parse ``4,8,12`` or a range ``2:20:2`` (start:stop:step, stop inclusive)."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="qkgrow", formatter_class=fmt,
        description="Simulate and analyse quantum key growing with encrypted basis sifting.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option defaults")
    common.add_argument("--seed", type=int, default=1, help="master random seed")
    common.add_argument("--report", type=Path, help="also write the report as JSON here")
    common.add_argument("--quiet", action="store_true", help="only print the verdict")

    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], formatter_class=fmt,
                         help="run protocol sessions and report QBER and key yield")
    run.add_argument("--n", type=_positive_int, default=1000, help="raw key length")
    run.add_argument("--sessions", type=_positive_int, default=10)
    run.add_argument("--epsilon", type=_flip_prob, default=0.0, help="intrinsic flip probability")
    run.add_argument("--sift-mode", choices=[m.value for m in SiftMode],
                     default=SiftMode.ENCRYPTED.value)
    run.add_argument("--adversary", choices=["none", "intercept_resend", "tamper"],
                     default="none")
    run.add_argument("--tamper-flips", type=int, default=10,
                     help="bits flipped in Bob's basis message with --adversary tamper")
    run.add_argument("--sacrifice-fraction", type=_probability, default=0.1)
    run.add_argument("--refresh-fraction", type=_probability, default=0.5)
    run.add_argument("--abort-threshold", type=_probability, default=DEFAULT_ABORT_THRESHOLD)
    run.add_argument("--workers", type=_positive_int, default=1)
    run.add_argument("--transcripts", type=Path, help="write session transcripts here")

    attack = sub.add_parser("attack", parents=[common], formatter_class=fmt,
                            help="run an adversary experiment against the protocol")
    attack.add_argument("--adversary", required=True,
                        choices=["oracle_plaintext", "intercept_resend", "tamper"])
    attack.add_argument("--n", type=_positive_int, help="raw key length "
                        "(default: 12 oracle_plaintext, 100000 intercept_resend, 1000 tamper)")
    attack.add_argument("--sessions", type=_positive_int, help="sessions "
                        "(default: 2000 oracle_plaintext, 500 tamper)")
    attack.add_argument("--epsilon", type=_flip_prob, default=0.0)
    attack.add_argument("--tamper-flips", type=int, default=50)

    analyze = sub.add_parser("analyze", parents=[common], formatter_class=fmt,
                             help="evaluate closed forms and emit CSV tables")
    analyze.add_argument("--info-gain", action="store_true", help="entropy table")
    analyze.add_argument("--provenance", action="store_true", help="provenance distribution")
    analyze.add_argument("--gaussian", action="store_true", help="Gaussian comparison")
    analyze.add_argument("--growth", action="store_true", help="surviving-count growth fit")
    analyze.add_argument("--n", type=_int_list, default=[4], help="raw lengths, e.g. 4,8 or 2:20:2")
    analyze.add_argument("--l", type=_int_list, default=[1], help="sifted positions (1-based)")
    analyze.add_argument("--empirical", action="store_true",
                         help="also simulate the provenance distribution")
    analyze.add_argument("--trials", type=_positive_int, default=1_000_000)
    analyze.add_argument("--raw-length", type=_positive_int,
                         help="raw length for --empirical (default: tail below 1e-6)")
    analyze.add_argument("--out-dir", type=Path, help="directory for CSV output")

    verify = sub.add_parser("verify-transcript", parents=[common], formatter_class=fmt,
                            help="replay stored transcripts and re-check them")
    verify.add_argument("path", type=Path)

    parser._subparser_map = {"run": run, "attack": attack, "analyze": analyze,
                             "verify-transcript": verify}
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command not in parser._subparser_map:
        return
    try:
        values = json.loads(known.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {known.config}: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    sub = parser._subparser_map[known.command]
    dests = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown config field '{key}' for '{known.command}'")
        defaults[dest] = value
    sub.set_defaults(**defaults)


def _session_config(args) -> SessionConfig:
    try:
        channel = ChannelConfig(args.epsilon)
    except ValueError as exc:
        raise UsageError(f"--epsilon: {exc}") from exc
    try:
        return SessionConfig(args.n, channel, args.sift_mode,
                             sacrifice_fraction=args.sacrifice_fraction,
                             refresh_fraction=args.refresh_fraction,
                             abort_threshold=args.abort_threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _within(est: Estimate, target: float, k: float = 3.0) -> bool:
    return abs(est.mean - target) <= k * est.stderr


def cmd_run(args) -> RunReport:
    cfg = _session_config(args)
    adversary = args.adversary
    report = RunReport("run", {"n": cfg.n, "sessions": args.sessions, "seed": args.seed,
                               "epsilon": args.epsilon, "sift_mode": cfg.sift_mode.value,
                               "adversary": adversary})
    transcripts = run_sessions(cfg, args.sessions, args.seed, adversary=adversary,
                               workers=args.workers,
                               tamper_flips=args.tamper_flips if adversary == "tamper" else 0)
    if args.transcripts:
        try:
            write_transcripts(args.transcripts, transcripts)
        except OSError as exc:
            raise OSError(f"cannot write transcripts to {args.transcripts}: {exc}") from exc

    qbers = [t.qber_estimate for t in transcripts if t.qber_estimate is not None]
    compared = sum(len(t.sacrificed_indices) for t in transcripts)
    errors = sum(round(t.qber_estimate * len(t.sacrificed_indices))
                 for t in transcripts if t.qber_estimate is not None)
    qber = Estimate.from_proportion(errors, compared) if compared else Estimate(float("nan"), 0, 0)
    report.add_stat("qber_pooled", qber)
    if len(qbers) > 1:
        report.add_stat("qber_session_mean", Estimate.from_samples(qbers))
    report.add_stat("sifted_length",
                    Estimate.from_samples([len(t.sifted_alice) for t in transcripts]))
    report.add_stat("net_key_bits", Estimate.from_samples([t.net_key_bits for t in transcripts]))
    report.add_stat("aborted", Estimate.from_proportion(sum(t.aborted for t in transcripts),
                                                        len(transcripts)))
    digest = hashlib.sha256()
    for t in transcripts:
        digest.update(str(t.sifted_alice.bits).encode() + b"|" + str(t.sifted_bob.bits).encode())
    report.config["sifted_digest"] = digest.hexdigest()[:16]

    sifted = report.statistics["sifted_length"]
    report.checks.append(Check(
        "sifted length ~ n/2", cfg.n / 2, sifted["mean"],
        abs(sifted["mean"] - cfg.n / 2) <= 3 * math.sqrt(cfg.n / 4 / len(transcripts)),
        "3 sigma of Binomial(n, 1/2) mean", "formula vs monte-carlo",
        stderr=math.sqrt(cfg.n / 4 / len(transcripts)), trials=len(transcripts)))
    if adversary == "none":
        expected = args.epsilon
        if expected == 0:
            ok = qber.mean == 0.0
        else:
            ok = _within(qber, expected)
        report.checks.append(Check("QBER without eavesdropper", expected, qber.mean, ok,
                                   "exact" if expected == 0 else "3 sigma",
                                   stderr=qber.stderr, trials=qber.trials))
    elif adversary == "intercept_resend":
        expected = 0.25 + 0.5 * args.epsilon
        report.checks.append(Check("QBER under intercept-resend", expected, qber.mean,
                                   _within(qber, expected), "3 sigma",
                                   stderr=qber.stderr, trials=qber.trials))
    return report


def cmd_attack(args) -> RunReport:
    report = RunReport("attack", {"adversary": args.adversary, "seed": args.seed})
    if args.adversary == "oracle_plaintext":
        n = args.n or 12
        sessions = args.sessions or 2000
        if n > BRUTE_FORCE_MAX_N:
            raise UsageError(f"--n {n} exceeds the brute-force guard ({BRUTE_FORCE_MAX_N}); "
                             "use 'analyze --growth' for the closed-form estimate")
        if n % 2:
            raise UsageError("--n must be even for the half-length sifting analysis")
        report.config.update(n=n, sessions=sessions)
        res = surviving_count_study(n, sessions, args.seed)
        report.add_stat("consistent_function_count", res.count)
        report.add_stat("log2_consistent_function_count", res.mean_log2_count)
        report.config["acceptance_rate"] = round(res.acceptance_rate, 6)
        report.checks.append(Check(
            "mean consistent sifting functions", res.predicted, res.count.mean,
            0.5 <= res.ratio <= 2.0, "within a factor of 2 of C(n,n/2)/2^(n/2)",
            "formula vs monte-carlo", res.count.stderr, res.count.trials))
        report.checks.append(Check(
            "true sifting function always survives", 1, res.min_count, res.min_count >= 1,
            "count >= 1", "monte-carlo"))
    elif args.adversary == "intercept_resend":
        n = args.n or 100_000
        report.config.update(n=n, epsilon=args.epsilon)
        res = intercept_resend_study(n, args.seed, ChannelConfig(args.epsilon).intrinsic_flip_prob)
        report.add_stat("qber", res.qber)
        for name in ("with_basis_info", "uniform_sift_guess", "maximum_likelihood_position"):
            report.add_stat(f"eve_agreement_{name}", getattr(res, name))
        expected_qber = 0.25 + 0.5 * args.epsilon
        report.checks.append(Check("sifted QBER", expected_qber, res.qber.mean,
                                   _within(res.qber, expected_qber), "3 sigma",
                                   stderr=res.qber.stderr, trials=res.qber.trials))
        report.checks.append(Check("Eve agreement with basis information", 0.75,
                                   res.with_basis_info.mean, _within(res.with_basis_info, 0.75),
                                   "3 sigma", stderr=res.with_basis_info.stderr,
                                   trials=res.with_basis_info.trials))
        for name, gap in (("uniform_sift_guess", res.uniform_gap),
                          ("maximum_likelihood_position", res.ml_gap)):
            report.checks.append(Check(f"{name} below with_basis_info", None, gap.mean,
                                       gap.mean - 3 * gap.stderr > 0, "paired gap > 3 sigma",
                                       stderr=gap.stderr, trials=gap.trials))
    else:
        n = args.n or 1000
        sessions = args.sessions or 500
        report.config.update(n=n, sessions=sessions, flips=args.tamper_flips,
                             epsilon=args.epsilon)
        res = tamper_study(n, sessions, args.tamper_flips, args.seed,
                           ChannelConfig(args.epsilon).intrinsic_flip_prob)
        report.add_stat("baseline_qber", res.baseline_qber)
        report.add_stat("tampered_qber", res.tampered_qber)
        report.add_stat("paired_qber_increase", res.paired_increase)
        report.config["verdict"] = "QBER decrease" if res.decreased else "no QBER decrease"
        report.checks.append(Check("tampering does not lower QBER", None,
                                   res.paired_increase.mean, not res.decreased,
                                   "one-sided 3 sigma", stderr=res.paired_increase.stderr,
                                   trials=res.paired_increase.trials))
    return report


def cmd_analyze(args) -> RunReport:
    report = RunReport("analyze", {"n": args.n, "l": args.l})
    if not (args.info_gain or args.provenance or args.gaussian or args.growth):
        raise UsageError("choose at least one of --info-gain, --provenance, --gaussian, --growth")
    out_dir = args.out_dir
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    lines = []

    if args.info_gain:
        rows = []
        for n in args.n:
            if n < 2 or n % 2:
                raise UsageError(f"--n {n}: info gain needs an even n >= 2")
            r = analysis.info_gain_oracle_eve(n)
            rows.append((n, r.apriori_bits, r.aposteriori_bits, r.info_gain_bits))
            report.checks.append(Check(f"info gain n={n}", n / 2, r.info_gain_bits,
                                       abs(r.info_gain_bits - n / 2) < 1e-12, "|error| < 1e-12",
                                       "formula"))
        lines.append("n,apriori_bits,aposteriori_bits,info_gain_bits")
        lines += [",".join(repr(v) for v in row) for row in rows]
        if out_dir:
            write_csv(out_dir / "info_gain.csv",
                      ["n", "apriori_bits", "aposteriori_bits", "info_gain_bits"], rows)

    if args.provenance:
        for l in args.l:
            if l < 1:
                raise UsageError("--l is 1-based")
            dist = analysis.provenance_distribution(l)
            total = dist.tabulated_mass + dist.tail_mass
            report.checks.append(Check(f"provenance l={l} normalisation", 1.0, total,
                                       abs(total - 1.0) < 1e-9, "|sum - 1| < 1e-9", "formula"))
            rows = [(int(i), float(p)) for i, p in zip(dist.support, dist.masses)]
            emp = None
            if args.empirical:
                emp = analysis.provenance_empirical(l, args.raw_length, args.trials,
                                                    RngHandle(args.seed, 1000 + l))
                tv = emp.tv_distance(dist)
                report.checks.append(Check(f"empirical provenance l={l}", 0.0, tv, tv < 0.01,
                                           "total variation < 0.01", "formula vs monte-carlo",
                                           trials=emp.trials))
                report.config[f"conditioning_rate_l{l}"] = emp.conditioning_rate
                freq = emp.frequencies
                rows = [(i, p, float(freq[i - 1]) if i <= emp.n else 0.0) for i, p in rows]
            header = ["i", "exact"] + (["empirical"] if emp else [])
            lines.append(f"# provenance l={l} mode={dist.mode} tail={dist.tail_mass:.3g}")
            lines.append(",".join(header))
            lines += [",".join(repr(v) for v in row) for row in rows[:50]]
            if len(rows) > 50:
                lines.append(f"# ... {len(rows) - 50} more rows")
            if out_dir:
                write_csv(out_dir / f"provenance_l{l}.csv", header, rows)

    if args.gaussian:
        rows = []
        for l in args.l:
            g = analysis.gaussian_comparison(l)
            rows.append((l, g.center, g.sigma, g.exact_sigma, g.exact_mode, g.max_abs_deviation,
                         g.exact_fwhm_count, g.gaussian_fwhm, g.fixed_index_fwhm_count,
                         g.fixed_index_gaussian_fwhm))
            report.checks.append(Check(
                f"FWHM contributors l={l}", round(g.gaussian_fwhm), g.exact_fwhm_count,
                abs(g.exact_fwhm_count - round(g.gaussian_fwhm)) <= 2,
                "within +/-2 of Gaussian FWHM, sigma = sqrt(2l)/2", "formula"))
        header = ["l", "center", "sigma", "exact_sigma", "exact_mode", "max_abs_deviation",
                  "exact_fwhm_count", "gaussian_fwhm", "fixed_index_fwhm_count",
                  "fixed_index_gaussian_fwhm"]
        lines.append(",".join(header))
        lines += [",".join(repr(v) for v in row) for row in rows]
        if out_dir:
            write_csv(out_dir / "gaussian.csv", header, rows)

    if args.growth:
        ns = [n for n in args.n if n >= 2 and n % 2 == 0]
        if len(ns) < 2:
            raise UsageError("--growth needs at least two even values of --n")
        fit = analysis.fit_growth_rate(ns)
        rows = [(n, float(analysis.surviving_functions_bound(n).exact)) for n in ns]
        report.config["growth_alpha"] = fit.alpha
        report.checks.append(Check("growth rate in (0, 1)", None, fit.alpha,
                                   0 < fit.alpha < 1, "0 < alpha < 1", "formula"))
        lines.append("n,k_max")
        lines += [",".join(repr(v) for v in row) for row in rows]
        if out_dir:
            write_csv(out_dir / "growth.csv", ["n", "k_max"], rows)

    report.config["table"] = lines
    return report


def cmd_verify_transcript(args) -> RunReport:
    report = RunReport("verify-transcript", {"path": str(args.path)})
    try:
        transcripts = read_transcripts(args.path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read transcripts: {exc}") from exc
    bad = 0
    for tr in transcripts:
        problems = verify_transcript(tr)
        if problems:
            bad += 1
            report.config[f"session_{tr.session_id}"] = problems
    report.checks.append(Check("transcripts replay", len(transcripts), len(transcripts) - bad,
                               bad == 0, "all sessions re-verify", "replay",
                               trials=len(transcripts)))
    return report


COMMANDS = {"run": cmd_run, "attack": cmd_attack, "analyze": cmd_analyze,
            "verify-transcript": cmd_verify_transcript}


def _print_report(report: RunReport, quiet: bool) -> None:
    table = report.config.pop("table", None)
    if quiet:
        print("PASS" if report.passed else "FAIL")
    else:
        if table:
            print("\n".join(table))
        print(report.to_text())
    if table is not None:
        report.config["table"] = table


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    started = time.perf_counter()
    try:
        report = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report.wall_clock_s = time.perf_counter() - started
    _print_report(report, args.quiet)
    print(f"wall-clock: {report.wall_clock_s:.3f} s", file=sys.stderr)
    if args.report:
        # timing lives on its own header line so the body stays reproducible
        header = json.dumps({"wall_clock_s": round(report.wall_clock_s, 6)})
        args.report.write_text(header + "\n" + report.to_json() + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
