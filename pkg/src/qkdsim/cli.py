"""Command line front end: run experiments, sweeps, bound checks, pads.

The ``qkdsim`` command reads a TOML experiment file and writes its
results into an output directory: one JSON-lines and one CSV report,
rendered figures, and the final key files with their text sidecars.
Exit status is 0 on success, 2 when the experiment was dominated by
aborts (or a bound check failed to bracket the truth), and 1 for
configuration or usage errors.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .otp import OtpError, PadExhaustedError, PadLedger, otp_apply
from .pipeline import abort_fraction, run_experiment, sweep, verify_bounds
from .postprocess import read_key_file, write_key_file
from .report import (
    aggregate_reports,
    render_run_figures,
    render_sweep_figure,
    write_reports_csv,
    write_reports_jsonl,
)

logger = logging.getLogger(__name__)

TRANSCRIPT_HEADER = (
    "index, alice_basis, alice_bit, intensity, bob_basis, click, bob_bit"
)


def build_parser():
    """Construct the argument parser (exposed for tests and docs)."""
    parser = argparse.ArgumentParser(
        prog="qkdsim",
        description="Simulate prepare-and-measure key distribution sessions.",
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true",
        help="enable debug logging on stderr",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True, metavar="PATH",
        help="TOML experiment description",
    )
    common.add_argument(
        "--seed", type=int, default=None, metavar="N",
        help="override the seed given in the config",
    )
    common.add_argument(
        "--out", default=".", metavar="PATH",
        help="directory for reports, figures and key files",
    )

    workers = argparse.ArgumentParser(add_help=False)
    workers.add_argument(
        "--workers", type=int, default=1, metavar="N",
        help="number of worker processes (default 1)",
    )

    p_run = sub.add_parser(
        "run", parents=[common, workers],
        help="run the configured repetitions and write reports and keys",
    )
    p_run.add_argument(
        "--transcript", action="store_true",
        help="also write one pulse-level transcript text file per run",
    )

    sub.add_parser(
        "sweep", parents=[common, workers],
        help="rerun the experiment across the configured axis values",
    )

    sub.add_parser(
        "verify-bounds", parents=[common],
        help="compare decoy-state bounds against the hidden photon tallies",
    )

    p_otp = sub.add_parser(
        "otp",
        help="encrypt or decrypt a message with a one-time-pad key file",
    )
    p_otp.add_argument(
        "--pad", required=True, metavar="PATH",
        help="key file holding the pad; rewritten in place after use",
    )
    mode = p_otp.add_mutually_exclusive_group(required=True)
    mode.add_argument(
        "--text", metavar="STR", help="plain text to encrypt",
    )
    mode.add_argument(
        "--cipher", metavar="PATH", help="cipher key file to decrypt",
    )
    p_otp.add_argument(
        "--out", default=".", metavar="PATH",
        help="directory for the cipher or recovered message",
    )
    return parser


def _load_experiment(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=int(args.seed))
    return config


def _write_transcripts(outcomes, out_dir):
    written = []
    for outcome in outcomes:
        if outcome.transcript is None:
            continue
        path = out_dir / f"transcript_run{outcome.report.run_index:03d}.txt"
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(TRANSCRIPT_HEADER + "\n")
            for line in outcome.transcript.export_lines():
                handle.write(line + "\n")
        written.append(path)
    return written


def _write_keys(outcomes, out_dir):
    written = []
    for outcome in outcomes:
        if outcome.final_key is None:
            continue
        report = outcome.report
        path = out_dir / f"key_run{report.run_index:03d}.bin"
        write_key_file(
            path,
            outcome.final_key.alice_bits,
            metadata={
                "run_index": str(report.run_index),
                "base_seed": str(report.base_seed),
                "stage": "final",
            },
        )
        written.append(path)
    return written


def _cmd_run(args):
    config = _load_experiment(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = run_experiment(
        config, workers=args.workers, keep_transcripts=args.transcript)
    reports = [o.report for o in outcomes]

    write_reports_jsonl(out_dir / "report.jsonl", reports)
    write_reports_csv(out_dir / "report.csv", reports)
    figures = render_run_figures(
        reports, out_dir, stem="report", abort_qber=config.protocol.abort_qber)
    keys = _write_keys(outcomes, out_dir)
    transcripts = _write_transcripts(outcomes, out_dir) if args.transcript else []

    summary = aggregate_reports(reports)
    print(f"runs: {summary['runs']}  aborted: {summary['aborted_runs']} "
          f"(fraction {summary['abort_fraction']:.2f})")
    if summary["mean_qber"] is not None:
        print(f"mean error rate: {summary['mean_qber']:.4f}")
    print(f"mean key rate: {summary['mean_key_rate']:.4e} secret bits/pulse")
    print(f"total final key bits: {summary['total_final_key_bits']}")
    print(f"wrote report.jsonl, report.csv, {len(figures)} figure(s), "
          f"{len(keys)} key file(s)"
          + (f", {len(transcripts)} transcript(s)" if transcripts else "")
          + f" in {out_dir}")
    return 2 if summary["abort_fraction"] > 0.5 else 0


def _cmd_sweep(args):
    config = _load_experiment(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = sweep(config, workers=args.workers)
    reports = [r for point in points for r in point.reports]

    write_reports_jsonl(out_dir / "sweep.jsonl", reports)
    write_reports_csv(out_dir / "sweep.csv", reports)
    figures = render_sweep_figure(
        [(point.value, point.reports) for point in points],
        out_dir, stem="sweep", axis_label=config.sweep.axis)

    for point in points:
        finished = [r for r in point.reports if not r.aborted]
        rate = (float(np.mean([r.key_rate for r in finished]))
                if finished else 0.0)
        print(f"{config.sweep.axis} = {point.value:g}: "
              f"{len(finished)}/{len(point.reports)} finished, "
              f"mean key rate {rate:.4e}")
    print(f"wrote sweep.jsonl, sweep.csv, {len(figures)} figure(s) "
          f"in {out_dir}")
    return 2 if abort_fraction(reports) > 0.5 else 0


def _cmd_verify_bounds(args):
    config = _load_experiment(args)
    result = verify_bounds(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bounds.json", "w", encoding="utf-8") as handle:
        json.dump(result, handle, indent=2, sort_keys=True)
        handle.write("\n")

    print(f"true single-photon yield: {result['y1_true']:.6f}")
    print(f"true single-photon error: {result['e1_true']:.6f}")
    if result["y1_lower"] is None:
        print(f"estimate failed: {result.get('error', 'unknown')}")
    else:
        print(f"yield lower bound: {result['y1_lower']:.6f}")
        print(f"error upper bound: {result['e1_upper']:.6f}")
    print("bracketed: " + ("yes" if result["bracketed"] else "no"))
    return 0 if result["bracketed"] else 2


def _text_to_bits(text):
    data = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
    return np.unpackbits(data)


def _bits_to_text(bits):
    if bits.size % 8 != 0:
        raise OtpError("cipher length is not a whole number of bytes")
    data = np.packbits(bits).tobytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise OtpError(
            "decrypted bits are not valid text; pad and cipher are "
            "probably out of step") from exc


def _cmd_otp(args):
    pad_path = Path(args.pad)
    ledger = PadLedger.load(pad_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.text is not None:
        message = _text_to_bits(args.text)
        cipher, start = otp_apply(ledger, message)
        cipher_path = out_dir / "cipher.bin"
        write_key_file(cipher_path, cipher,
                       metadata={"pad_offset": str(start),
                                 "content": "otp-cipher"})
        ledger.save(pad_path)
        print(f"encrypted {message.size} bits at pad offset {start}")
        print(f"wrote {cipher_path}")
        print(f"pad advanced to offset {ledger.consumed_offset}; "
              f"{ledger.remaining} bits remain")
        return 0

    cipher, metadata = read_key_file(Path(args.cipher))
    if "pad_offset" not in metadata:
        raise OtpError("cipher sidecar does not record a pad offset")
    offset = int(metadata["pad_offset"])
    plain, _ = otp_apply(ledger, cipher, offset=offset)
    text = _bits_to_text(plain)
    message_path = out_dir / "message.txt"
    message_path.write_text(text, encoding="utf-8")
    ledger.save(pad_path)
    print(f"decrypted {cipher.size} bits from pad offset {offset}")
    print(f"wrote {message_path}")
    print(f"pad advanced to offset {ledger.consumed_offset}; "
          f"{ledger.remaining} bits remain")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "verify-bounds": _cmd_verify_bounds,
    "otp": _cmd_otp,
}


def main(argv=None):
    """Entry point; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OtpError, PadExhaustedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
