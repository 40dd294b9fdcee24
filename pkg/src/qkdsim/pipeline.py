"""End-to-end experiment execution: session, estimation, distillation.

:func:`execute_run` drives one complete run from an
:class:`~qkdsim.config.ExperimentConfig`: simulate the session, sift,
disclose and discard a test sample, abort on a bad error estimate,
bound the single-photon contribution, reconcile, and compress to the
final key.  All randomness derives from
``SeedSequence(seed, spawn_key=(point_index, run_index))``, so any run
of any sweep point can be reproduced in isolation and results do not
depend on worker scheduling.

:func:`run_experiment` repeats a config, :func:`sweep` walks the
configured axis, and :func:`verify_bounds` replays a decoy session and
checks the estimate against the simulator's hidden tallies.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig
from .hashing import random_hash_seed
from .optics import transmittance
from .postprocess import (
    KeyMaterial,
    ParityChannel,
    ReconciliationError,
    b_step,
    finalize_key,
    reconcile,
)
from .protocols import (
    DecoyEstimateError,
    ProtocolError,
    binary_entropy,
    decoy_estimate,
    decoy_yields,
    estimate_qber,
    key_rate_estimate,
    run_session,
    select_test_bits,
    sift,
    suggested_signal_mean,
)
from .report import RunReport, aggregate_reports

__all__ = [
    "RunOutcome",
    "SweepPoint",
    "abort_fraction",
    "derive_rng",
    "execute_run",
    "run_experiment",
    "sweep",
    "verify_bounds",
]

logger = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    """One run's report plus the heavyweight artifacts that produced it.

    ``transcript`` is None when the caller asked not to keep it (sweep
    workers);  ``final_key`` is None when the run aborted or distilled
    to zero bits.
    """

    report: RunReport
    transcript: object = None
    final_key: KeyMaterial | None = None


@dataclass
class SweepPoint:
    """All repetitions of one swept value."""

    axis: str
    value: float
    reports: list


def derive_rng(seed, point_index=0, run_index=0):
    """The run's generator; identical regardless of execution order."""
    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(point_index), int(run_index)))
    return np.random.default_rng(sequence)


def _eve_guess_accuracy(transcript):
    log = transcript.eve_side_information
    if log is None:
        return None
    idx = transcript.sifted_indices
    if idx.size == 0:
        return None
    guesses = log.guess[idx]
    held = guesses >= 0
    if not held.any():
        return None
    alice = transcript.alice_bits[idx]
    return float(np.mean(guesses[held] == alice[held]))


def execute_run(config, run_index=0, point_index=0, axis_value=None,
                keep_transcript=True):
    """Run one session end to end.

    Parameters
    ----------
    config : ExperimentConfig
    run_index, point_index : int
        Coordinates in the (sweep point, repetition) grid; they select
        the run's random stream.
    axis_value : float, optional
        Recorded in the report for sweep points.
    keep_transcript : bool
        Drop the transcript from the outcome when False (cheaper to
        ship between processes).

    Returns
    -------
    RunOutcome
    """
    rng = derive_rng(config.seed, point_index, run_index)
    protocol = config.protocol
    mode = config.postprocess.resolved_mode(config.decoy)
    transcript = run_session(
        protocol, config.decoy, config.source, config.channel,
        config.detectors, config.attack, rng,
    )
    detected = transcript.detected_count
    sifted = transcript.sifted_count
    common = {
        "run_index": run_index,
        "base_seed": config.seed,
        "pulse_count": transcript.pulse_count,
        "detected_count": detected,
        "sifted_count": sifted,
        "sifted_fraction": sifted / detected if detected else 0.0,
        "eve_guess_accuracy": _eve_guess_accuracy(transcript),
        "eve_known_fraction": 0.0,
        "axis_value": axis_value,
    }

    try:
        yields = decoy_yields(transcript)
        gains = {c.label: c.gain for c in yields.classes}
    except ProtocolError:
        # Only reachable when a declared intensity class sent zero
        # pulses, which needs a pulse count of the order of the class
        # count; every later stage depends on the table, so abort.
        yields = None
        gains = {}

    def aborted(reason, qber=None, bounds=None, leakage=0.0):
        report = RunReport(
            qber=qber, gains=gains, y1_lower=None, e1_upper=None,
            key_rate=0.0, final_key_length=0, aborted=True,
            abort_reason=reason, leakage_bits=leakage, **common,
        )
        if bounds is not None:
            report = RunReport(**{**report.to_dict(),
                                  "y1_lower": bounds[0],
                                  "e1_upper": bounds[1]})
        logger.info("run %d aborted: %s", run_index, reason)
        return RunOutcome(report, transcript if keep_transcript else None, None)

    key = sift(transcript)
    common["eve_known_fraction"] = key.eve_known_fraction
    if key.length == 0:
        return aborted("no-sifted-bits")
    try:
        test_indices, disclosed = select_test_bits(
            key, protocol.test_fraction, rng)
    except ProtocolError:
        return aborted("degenerate-test-sample")
    qber = estimate_qber(disclosed[0], disclosed[1])
    transcript = transcript.with_test_selection(test_indices, disclosed)
    key = key.drop(test_indices)
    if qber > protocol.abort_qber:
        return aborted("qber-threshold", qber=qber)

    if yields is None:
        return aborted("no-class-tally", qber=qber)
    bounds = None
    if mode == "decoy":
        try:
            bounds = decoy_estimate(
                yields, config.decoy, config.postprocess.confidence_sigmas)
        except DecoyEstimateError:
            return aborted("decoy-bounds", qber=qber)
    rate = key_rate_estimate(
        yields, bounds, mode,
        config.postprocess.error_correction_efficiency)

    if config.postprocess.b_step and key.length >= 2:
        key, _ = b_step(key, permutation=rng.permutation(key.length))
    noise = config.postprocess.noise_rate
    if noise > 0.0 and key.length:
        # Alice flips her own bits with the announced probability;
        # reconciliation below pulls Bob onto the noised string.
        flips = (rng.random(key.length) < noise).astype(np.uint8)
        key = KeyMaterial(key.alice_bits ^ flips, key.bob_bits,
                          "preprocessed", key.leakage_bits,
                          key.eve_known_fraction)
    if key.length == 0:
        return aborted("no-key-after-preprocessing", qber=qber, bounds=bounds)
    try:
        key = reconcile(key, ParityChannel(rng))
    except ReconciliationError:
        return aborted("reconciliation-failed", qber=qber, bounds=bounds)

    announced_error = qber + noise - 2.0 * qber * noise
    margin = 2.0 * math.log2(1.0 / config.postprocess.security_epsilon)
    secret_bits = int(math.floor(
        key.length * (1.0 - binary_entropy(announced_error))
        - key.leakage_bits - margin))
    if secret_bits <= 0:
        return aborted("no-distillable-key", qber=qber, bounds=bounds,
                       leakage=key.leakage_bits)
    seed = random_hash_seed(
        config.postprocess.hash_family, key.length, secret_bits, rng)
    final_key = finalize_key(key, seed)
    secret_bits = final_key.length

    report = RunReport(
        qber=qber,
        gains=gains,
        y1_lower=bounds[0] if bounds else None,
        e1_upper=bounds[1] if bounds else None,
        key_rate=rate,
        final_key_length=secret_bits,
        aborted=False,
        abort_reason="",
        leakage_bits=key.leakage_bits,
        **common,
    )
    logger.info(
        "run %d: %d sifted, qber %.4f, rate %.3e, %d final bits",
        run_index, sifted, qber, rate, secret_bits,
    )
    return RunOutcome(report, transcript if keep_transcript else None,
                      final_key)


def _run_task(args):
    config, run_index, point_index, axis_value, keep = args
    return execute_run(config, run_index, point_index, axis_value, keep)


def run_experiment(config, workers=1, keep_transcripts=False):
    """Execute every repetition of a config.

    Returns
    -------
    list of RunOutcome
        In repetition order.  By default only the first outcome keeps
        its transcript; ``keep_transcripts`` retains every run's
        transcript for export at the cost of memory.
    """
    tasks = [
        (config, r, 0, None, keep_transcripts or r == 0)
        for r in range(config.repetitions)
    ]
    if workers <= 1 or len(tasks) == 1:
        return [_run_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks))


def sweep(config, workers=1):
    """Execute the configured sweep.

    Each point reruns the experiment with the swept axis set to the
    point's value (optionally retuning the source mean for non-decoy
    scans).  Results arrive in point order regardless of ``workers``.

    Returns
    -------
    list of SweepPoint
    """
    if config.sweep is None:
        raise ConfigError("config has no [sweep] section")
    plan = config.sweep
    mode = config.postprocess.resolved_mode(config.decoy)
    tasks = []
    for point_index, value in enumerate(plan.values):
        point_config = config.with_axis_value(plan.axis, value)
        if plan.adapt_signal_mean:
            eta = (transmittance(point_config.channel)
                   * point_config.detectors[0].base_efficiency)
            point_config = point_config.with_signal_mean(
                suggested_signal_mean(mode, eta))
        for run_index in range(config.repetitions):
            tasks.append((point_config, run_index, point_index, float(value),
                          False))
    if workers <= 1 or len(tasks) == 1:
        outcomes = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    points = []
    reps = config.repetitions
    for point_index, value in enumerate(plan.values):
        chunk = outcomes[point_index * reps:(point_index + 1) * reps]
        points.append(SweepPoint(plan.axis, float(value),
                                 [o.report for o in chunk]))
    return points


def verify_bounds(config):
    """Compare the decoy estimate against the hidden per-photon truth.

    Returns
    -------
    dict
        Bound values, ground truth, and whether the bounds bracket it.
    """
    if config.decoy is None:
        raise ConfigError("verify-bounds needs a [decoy] section")
    rng = derive_rng(config.seed)
    transcript = run_session(
        config.protocol, config.decoy, config.source, config.channel,
        config.detectors, config.attack, rng,
    )
    yields = decoy_yields(transcript)
    result = {
        "y1_true": yields.true_single_photon_yield(),
        "e1_true": yields.true_single_photon_error_rate(),
    }
    try:
        y1_lower, e1_upper = decoy_estimate(
            yields, config.decoy, config.postprocess.confidence_sigmas)
    except DecoyEstimateError as exc:
        result.update(y1_lower=None, e1_upper=None, bracketed=False,
                      error=str(exc))
        return result
    result.update(
        y1_lower=y1_lower,
        e1_upper=e1_upper,
        bracketed=bool(y1_lower <= result["y1_true"]
                       and e1_upper >= result["e1_true"]),
    )
    return result


def abort_fraction(reports):
    """Fraction of aborted runs; drives the CLI exit status."""
    if not reports:
        return 0.0
    return sum(1 for r in reports if r.aborted) / len(reports)
