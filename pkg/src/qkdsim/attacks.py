"""Eavesdropping strategies for the session engine.

Each strategy rewrites a batch of in-flight pulses (state labels, photon
numbers, arrival offsets, effective-transmittance factors) and logs what
Eve learned per pulse.  The engine applies at most one strategy per
session, between the source and the channel; strategies that exploit
detector timing (time-shift, faked-state) additionally need the receiver's
detector pair to pick their offsets, passed in through
:class:`AttackContext`.

All strategies take ``fraction``, the per-pulse Bernoulli probability of
attacking; ``fraction=0`` leaves the batch untouched without consuming
randomness, so a disabled attack is indistinguishable from no attack.

Conventions
-----------
Basis and bit labels follow :mod:`qkdsim.qsim` integer codes.  Eve's
per-pulse actions are logged as small integers (ACTION_*) and exported with
the labels "forwarded", "suppressed", "shifted-early", "shifted-late".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Iterator, Optional, Sequence

import numpy as np

from . import qsim
from .optics import (
    EARLY_OFFSET_NS,
    LATE_OFFSET_NS,
    DetectorConfig,
    mismatched_curves,
)

__all__ = [
    "AttackError",
    "AttackContext",
    "AttackStrategy",
    "EveLog",
    "EveRecord",
    "FakedState",
    "InterceptResend",
    "PhaseRemap",
    "PhotonNumberSplitting",
    "Pulse",
    "PulseBatch",
    "TimeShift",
    "ACTION_LABELS",
    "faked_state_attack",
    "intercept_resend",
    "make_attack",
    "phase_remap_attack",
    "pns_attack",
    "pns_matching_suppression",
    "time_shift_attack",
]


class AttackError(ValueError):
    """Invalid attack parameters or missing context."""


# per-pulse action codes stored in EveLog.action
ACTION_IDLE = 0
ACTION_FORWARDED = 1
ACTION_SUPPRESSED = 2
ACTION_SHIFTED_EARLY = 3
ACTION_SHIFTED_LATE = 4

ACTION_LABELS: dict[int, str] = {
    ACTION_FORWARDED: "forwarded",
    ACTION_SUPPRESSED: "suppressed",
    ACTION_SHIFTED_EARLY: "shifted-early",
    ACTION_SHIFTED_LATE: "shifted-late",
}


@dataclass
class Pulse:
    """One signal pulse in flight (scalar interface to the strategies)."""

    basis: int
    bit: int
    photons: int = 1
    offset_ns: float = 0.0
    index: int = 0

    def __post_init__(self) -> None:
        if self.basis not in (0, 1, 2):
            raise AttackError(f"basis code {self.basis!r} out of range")
        if self.bit not in (0, 1):
            raise AttackError(f"bit must be 0 or 1, got {self.bit!r}")
        if self.photons < 0:
            raise AttackError("photon number must be non-negative")


@dataclass(frozen=True)
class EveRecord:
    """What Eve did to, and learned from, one pulse.

    ``eve_basis``/``eve_bit_guess`` are present only when the strategy
    measured the pulse or can infer the bit another way (timing asymmetry,
    a kept photon measured after basis announcement).
    """

    pulse_index: int
    eve_basis: Optional[int]
    eve_bit_guess: Optional[int]
    kept_photons: int
    action: str


class EveLog:
    """Columnar per-pulse attack log for one session."""

    __slots__ = ("attacked", "action", "basis", "guess", "kept", "known")

    def __init__(self, size: int) -> None:
        self.attacked = np.zeros(size, dtype=bool)
        self.action = np.zeros(size, dtype=np.int8)
        self.basis = np.full(size, -1, dtype=np.int8)
        self.guess = np.full(size, -1, dtype=np.int8)
        self.kept = np.zeros(size, dtype=np.int16)
        # True where Eve holds the bit with certainty (kept photon measured
        # in the announced basis), as opposed to a probabilistic guess.
        self.known = np.zeros(size, dtype=bool)

    @property
    def size(self) -> int:
        return self.attacked.size

    @classmethod
    def concat(cls, logs: Sequence["EveLog"]) -> "EveLog":
        out = cls(0)
        if logs:
            for name in cls.__slots__:
                setattr(out, name,
                        np.concatenate([getattr(log, name) for log in logs]))
        return out

    def record(self, index: int) -> Optional[EveRecord]:
        """The :class:`EveRecord` for one pulse, or None if Eve idled."""
        action = int(self.action[index])
        if action == ACTION_IDLE:
            return None
        basis = int(self.basis[index])
        guess = int(self.guess[index])
        return EveRecord(
            pulse_index=index,
            eve_basis=basis if basis >= 0 else None,
            eve_bit_guess=guess if guess >= 0 else None,
            kept_photons=int(self.kept[index]),
            action=ACTION_LABELS[action],
        )

    def records(self) -> list[EveRecord]:
        recs = []
        for index in np.flatnonzero(self.action != ACTION_IDLE):
            rec = self.record(int(index))
            if rec is not None:
                recs.append(rec)
        return recs

    def summary(self) -> dict[str, int]:
        counts = {label: int((self.action == code).sum())
                  for code, label in ACTION_LABELS.items()}
        counts["attacked"] = int(self.attacked.sum())
        counts["guesses"] = int((self.guess >= 0).sum())
        counts["kept_photons"] = int(self.kept.sum())
        counts["known_bits"] = int(self.known.sum())
        return counts

    def export_lines(self) -> Iterator[str]:
        """Delimited per-pulse lines for attacked pulses.

        Format: ``pulse_index, action, eve_basis, eve_bit_guess,
        kept_photons`` with ``-`` for absent guesses; indices match the
        session transcript.
        """
        for rec in self.records():
            basis = "-" if rec.eve_basis is None else str(rec.eve_basis)
            guess = "-" if rec.eve_bit_guess is None else str(rec.eve_bit_guess)
            yield (f"{rec.pulse_index}, {rec.action}, {basis}, {guess}, "
                   f"{rec.kept_photons}")


@dataclass
class PulseBatch:
    """Mutable view of a block of pulses between source and channel.

    The engine builds it from Alice's emission and hands it to the
    strategy; afterwards ``basis``/``bit`` describe the forwarded states,
    ``eta_factor`` scales the channel transmittance per pulse, and
    ``bypass_channel`` marks pulses rerouted through Eve's lossless line.
    """

    basis: np.ndarray
    bit: np.ndarray
    photons: np.ndarray
    offset_ns: np.ndarray
    eta_factor: np.ndarray
    bypass_channel: np.ndarray
    log: EveLog

    @classmethod
    def from_alice(cls, basis: np.ndarray, bit: np.ndarray,
                   photons: np.ndarray) -> "PulseBatch":
        n = basis.size
        return cls(
            basis=np.array(basis, dtype=np.int8, copy=True),
            bit=np.array(bit, dtype=np.int8, copy=True),
            photons=np.array(photons, dtype=np.int64, copy=True),
            offset_ns=np.zeros(n),
            eta_factor=np.ones(n),
            bypass_channel=np.zeros(n, dtype=bool),
            log=EveLog(n),
        )

    @property
    def size(self) -> int:
        return self.basis.size


@dataclass(frozen=True)
class AttackContext:
    """Receiver-side facts a strategy may need to pick its moves."""

    detectors: Optional[tuple[DetectorConfig, DetectorConfig]] = None
    encoding: str = "polarization"

    def require_detectors(self, kind: str) -> tuple[DetectorConfig, DetectorConfig]:
        if self.detectors is None:
            raise AttackError(
                f"{kind} needs the receiver's detector pair in the attack context")
        return self.detectors


@dataclass
class AttackStrategy:
    """Base class: per-pulse Bernoulli(fraction) attack mask."""

    fraction: float = 1.0

    kind: ClassVar[str] = "none"

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise AttackError("attack fraction must lie in [0, 1]")

    def _attack_mask(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.fraction >= 1.0:
            return np.ones(size, dtype=bool)
        return rng.random(size) < self.fraction

    def apply_batch(self, batch: PulseBatch, ctx: AttackContext,
                    rng: np.random.Generator) -> None:
        raise NotImplementedError

    def suggested_compensation(
            self, detectors: tuple[DetectorConfig, DetectorConfig]) -> float:
        """Transmittance factor that would hide this attack's click deficit."""
        return 1.0


def _eve_measurement(batch: PulseBatch, measured: np.ndarray,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform BB84-basis measurement of the selected pulses.

    Returns (eve_basis, outcome) arrays over the True entries of
    ``measured``; Born probabilities come from the shared table, so the
    statistics match a projective qubit measurement exactly.
    """
    m = int(measured.sum())
    eve_basis = rng.integers(0, 2, size=m).astype(np.int8)
    p1 = qsim.born_probability_table()[
        batch.basis[measured], batch.bit[measured], eve_basis, 1]
    outcome = (rng.random(m) < p1).astype(np.int8)
    return eve_basis, outcome


@dataclass
class InterceptResend(AttackStrategy):
    """Measure each attacked pulse in a random basis and resend the result.

    The resent pulse keeps the original photon number (Eve re-emits at the
    intensity she received) and travels the normal channel.
    """

    kind: ClassVar[str] = "intercept-resend"

    def apply_batch(self, batch, ctx, rng):
        if self.fraction == 0.0:
            return
        mask = self._attack_mask(batch.size, rng)
        if not mask.any():
            return
        log = batch.log
        log.attacked |= mask
        log.action[mask] = ACTION_FORWARDED
        measured = mask & (batch.photons > 0)
        if not measured.any():
            return
        eve_basis, outcome = _eve_measurement(batch, measured, rng)
        batch.basis[measured] = eve_basis
        batch.bit[measured] = outcome
        log.basis[measured] = eve_basis
        log.guess[measured] = outcome


@dataclass
class PhotonNumberSplitting(AttackStrategy):
    """Suppress single-photon pulses, split and forward multi-photon ones.

    Attacked pulses that survive are forwarded through Eve's lossless
    line (the channel is bypassed); from every multi-photon pulse she
    keeps one photon and, after basis announcement, reads the sifted bit
    off it with certainty.  ``suppression`` is the blocking probability
    for single-photon pulses.
    """

    suppression: float = 1.0

    kind: ClassVar[str] = "pns"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 0.0 <= self.suppression <= 1.0:
            raise AttackError("suppression probability must lie in [0, 1]")

    def apply_batch(self, batch, ctx, rng):
        if self.fraction == 0.0:
            return
        mask = self._attack_mask(batch.size, rng)
        if not mask.any():
            return
        log = batch.log
        log.attacked |= mask
        log.action[mask] = ACTION_FORWARDED
        single = mask & (batch.photons == 1)
        if self.suppression > 0.0 and single.any():
            kill = np.zeros(batch.size, dtype=bool)
            kill[single] = rng.random(int(single.sum())) < self.suppression
            batch.photons[kill] = 0
            log.action[kill] = ACTION_SUPPRESSED
            mask = mask & ~kill
        multi = mask & (batch.photons >= 2)
        if multi.any():
            batch.photons[multi] -= 1
            log.kept[multi] = 1
            # the kept photon is measured in the announced basis later;
            # Alice's bit is already certain knowledge
            log.guess[multi] = batch.bit[multi]
            log.known[multi] = True
        batch.bypass_channel[mask] = True


@dataclass
class TimeShift(AttackStrategy):
    """Shift arrival times without touching the quantum state.

    Each attacked pulse arrives early with probability ``fraction_early``,
    else late.  Eve's bit guess is whichever detector the published
    efficiency curves favor at that offset.  ``compensation_factor``
    multiplies the channel transmittance of attacked pulses so the click
    rate deficit can be hidden (a more transparent line).
    """

    fraction_early: float = 0.5
    early_ns: float = EARLY_OFFSET_NS
    late_ns: float = LATE_OFFSET_NS
    compensation_factor: float = 1.0

    kind: ClassVar[str] = "time-shift"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 0.0 <= self.fraction_early <= 1.0:
            raise AttackError("fraction_early must lie in [0, 1]")
        if self.early_ns == self.late_ns:
            raise AttackError("early and late offsets must differ")
        if self.compensation_factor < 1.0:
            raise AttackError("compensation factor must be >= 1")

    @staticmethod
    def _favored_detector(detectors, offset_ns: float) -> int:
        eff0 = float(detectors[0].efficiency_at(offset_ns))
        eff1 = float(detectors[1].efficiency_at(offset_ns))
        if eff0 == eff1:
            return -1
        return 0 if eff0 > eff1 else 1

    def apply_batch(self, batch, ctx, rng):
        if self.fraction == 0.0:
            return
        detectors = ctx.require_detectors(self.kind)
        mask = self._attack_mask(batch.size, rng)
        if not mask.any():
            return
        early = np.zeros(batch.size, dtype=bool)
        early[mask] = rng.random(int(mask.sum())) < self.fraction_early
        late = mask & ~early
        log = batch.log
        log.attacked |= mask
        batch.offset_ns[early] = self.early_ns
        batch.offset_ns[late] = self.late_ns
        log.action[early] = ACTION_SHIFTED_EARLY
        log.action[late] = ACTION_SHIFTED_LATE
        log.guess[early] = self._favored_detector(detectors, self.early_ns)
        log.guess[late] = self._favored_detector(detectors, self.late_ns)
        batch.eta_factor[mask] *= self.compensation_factor

    def suggested_compensation(self, detectors) -> float:
        """1 / (mean efficiency multiplier over offsets and detectors)."""
        nominal = (float(detectors[0].efficiency_at(0.0))
                   + float(detectors[1].efficiency_at(0.0))) / 2.0
        shifted = 0.0
        for offset, weight in ((self.early_ns, self.fraction_early),
                               (self.late_ns, 1.0 - self.fraction_early)):
            pair = (float(detectors[0].efficiency_at(offset))
                    + float(detectors[1].efficiency_at(offset))) / 2.0
            shifted += weight * pair
        if shifted <= 0.0:
            raise AttackError("shifted efficiency is zero; no finite compensation")
        return nominal / shifted


@dataclass
class FakedState(AttackStrategy):
    """Measure, then resend the opposite bit in the opposite basis, timed
    so the detector for the resent bit sits in its low-efficiency window.

    The resend is a fresh single-photon state.  The offset for suppressing
    detector ``w`` is whichever of the two shifted arrival times gives
    detector ``w`` the smaller efficiency.
    """

    early_ns: float = EARLY_OFFSET_NS
    late_ns: float = LATE_OFFSET_NS

    kind: ClassVar[str] = "faked-state"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.early_ns == self.late_ns:
            raise AttackError("early and late offsets must differ")

    def _suppressing_offset(self, detectors, detector_id: int) -> float:
        det = detectors[detector_id]
        at_early = float(det.efficiency_at(self.early_ns))
        at_late = float(det.efficiency_at(self.late_ns))
        return self.early_ns if at_early <= at_late else self.late_ns

    def apply_batch(self, batch, ctx, rng):
        if self.fraction == 0.0:
            return
        detectors = ctx.require_detectors(self.kind)
        mask = self._attack_mask(batch.size, rng)
        if not mask.any():
            return
        log = batch.log
        log.attacked |= mask
        log.action[mask] = ACTION_FORWARDED
        measured = mask & (batch.photons > 0)
        if not measured.any():
            return
        eve_basis, outcome = _eve_measurement(batch, measured, rng)
        send_bit = (1 - outcome).astype(np.int8)
        offsets = np.where(
            send_bit == 0,
            self._suppressing_offset(detectors, 0),
            self._suppressing_offset(detectors, 1),
        )
        batch.basis[measured] = (1 - eve_basis).astype(np.int8)
        batch.bit[measured] = send_bit
        batch.photons[measured] = 1
        batch.offset_ns[measured] = offsets
        log.basis[measured] = eve_basis
        log.guess[measured] = outcome
        log.action[measured] = np.where(
            offsets == self.early_ns, ACTION_SHIFTED_EARLY, ACTION_SHIFTED_LATE)


@dataclass
class PhaseRemap(AttackStrategy):
    """Remap Alice's preparation phases to {0, a, 2a, 3a} and intercept.

    On each attacked pulse Eve (driving a bidirectional link) squeezes
    Alice's four phases to ``angle_a`` times {0, 1, 2, 3}, guesses a basis,
    applies the minimum-error two-state measurement between that basis's
    two remapped states, and resends the standard signal state for her
    outcome.  Untouched pulses carry the standard phases.
    """

    angle_a: float = math.pi / 2.0
    bidirectional_system: bool = True

    kind: ClassVar[str] = "phase-remap"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.angle_a == 0.0:
            raise AttackError("remap angle 0 collapses all four states; rejected")
        if not 0.0 < self.angle_a <= math.pi / 2.0:
            raise AttackError("remap angle must lie in (0, pi/2]")

    def remapped_phase(self, basis: np.ndarray, bit: np.ndarray) -> np.ndarray:
        """Phase Alice's source actually emits under the remap."""
        return self.angle_a * (2.0 * np.asarray(bit) + np.asarray(basis))

    def measurement_phases(self, eve_basis: int) -> tuple[float, float]:
        """Phases of the two minimum-error measurement directions.

        For the basis pair with phases {b*a, (2+b)*a} the optimal
        projectors point along the pair midpoint rotated by -+ pi/2;
        outcome 0 is the direction nearer the bit-0 state.
        """
        mid = self.angle_a * (1.0 + eve_basis)
        return mid - math.pi / 2.0, mid + math.pi / 2.0

    def discrimination_success(self) -> float:
        """Probability Eve's measurement identifies the bit when her basis
        guess matches Alice's: (1 + sin a) / 2."""
        return 0.5 * (1.0 + math.sin(self.angle_a))

    def apply_batch(self, batch, ctx, rng):
        if self.fraction == 0.0:
            return
        if ctx.encoding != "phase":
            raise AttackError("phase remap requires the phase encoding")
        if not self.bidirectional_system:
            raise AttackError(
                "phase remap drives Alice's modulator through a bidirectional "
                "link; set bidirectional_system=True")
        mask = self._attack_mask(batch.size, rng)
        if not mask.any():
            return
        log = batch.log
        log.attacked |= mask
        log.action[mask] = ACTION_FORWARDED
        measured = mask & (batch.photons > 0)
        if not measured.any():
            return
        m = int(measured.sum())
        eve_basis = rng.integers(0, 2, size=m).astype(np.int8)
        true_phase = self.remapped_phase(batch.basis[measured],
                                         batch.bit[measured])
        omega0 = self.angle_a * (1.0 + eve_basis) - math.pi / 2.0
        p0 = np.cos((true_phase - omega0) / 2.0) ** 2
        outcome = (rng.random(m) >= p0).astype(np.int8)
        batch.basis[measured] = eve_basis
        batch.bit[measured] = outcome
        log.basis[measured] = eve_basis
        log.guess[measured] = outcome


_STRATEGY_KINDS: dict[str, type[AttackStrategy]] = {
    cls.kind: cls
    for cls in (InterceptResend, PhotonNumberSplitting, TimeShift,
                FakedState, PhaseRemap)
}


def make_attack(kind: Optional[str], **parameters) -> Optional[AttackStrategy]:
    """Build a strategy from its config-file kind string and parameters.

    ``kind`` of None or "none" returns None (no attack).
    """
    if kind is None or kind == "none":
        if parameters:
            raise AttackError("attack parameters given without an attack kind")
        return None
    cls = _STRATEGY_KINDS.get(kind)
    if cls is None:
        raise AttackError(
            f"unknown attack kind {kind!r}; expected one of "
            f"{sorted(_STRATEGY_KINDS)} or 'none'")
    try:
        return cls(**parameters)
    except TypeError as exc:
        raise AttackError(f"bad parameters for attack {kind!r}: {exc}") from exc


def pns_matching_suppression(mu: float, channel_transmittance: float,
                             detector_efficiency: float) -> float:
    """Single-photon suppression that makes the splitting attack gain-neutral.

    Solves for the blocking probability ``s`` at which the attacked click
    rate (surviving single photons and split multi-photon pulses, all on a
    lossless line with per-photon detection probability
    ``detector_efficiency``) equals the no-attack click rate
    ``1 - exp(-mu * eta * eff)``.  Dark counts cancel on both sides.

    Raises :class:`AttackError` when no suppression in [0, 1] matches
    (the lossless forwarding already over- or under-shoots the honest
    rate, which happens on short, low-loss links).
    """
    if mu <= 0.0:
        raise AttackError("mean photon number must be positive")
    if not 0.0 < channel_transmittance <= 1.0:
        raise AttackError("channel transmittance must lie in (0, 1]")
    if not 0.0 < detector_efficiency <= 1.0:
        raise AttackError("detector efficiency must lie in (0, 1]")
    eff = detector_efficiency
    honest = 1.0 - math.exp(-mu * channel_transmittance * eff)
    p1 = mu * math.exp(-mu)
    # click probability from multi-photon pulses forwarding n-1 photons
    if eff == 1.0:
        miss = 0.0
    else:
        keep = mu * (1.0 - eff)
        miss = math.exp(-mu) / (1.0 - eff) * (math.exp(keep) - 1.0 - keep)
    multi = (1.0 - math.exp(-mu) * (1.0 + mu)) - miss
    if honest < multi:
        raise AttackError(
            "split multi-photon pulses alone already out-click the honest "
            "channel; no suppression can hide the attack")
    s = 1.0 - (honest - multi) / (p1 * eff)
    if s < 0.0:
        raise AttackError(
            "even without suppression the attacked line clicks too rarely; "
            "the channel is too transparent for gain matching")
    return s


# ---------------------------------------------------------------------------
# single-pulse wrappers
# ---------------------------------------------------------------------------

def _canonical_detectors() -> tuple[DetectorConfig, DetectorConfig]:
    c0, c1 = mismatched_curves()
    return (DetectorConfig(efficiency_curve=c0),
            DetectorConfig(efficiency_curve=c1))


def _apply_single(strategy: AttackStrategy, pulse: Pulse, ctx: AttackContext,
                  rng: np.random.Generator) -> tuple[Pulse, Optional[EveRecord]]:
    batch = PulseBatch.from_alice(
        np.array([pulse.basis]), np.array([pulse.bit]),
        np.array([pulse.photons]))
    batch.offset_ns[0] = pulse.offset_ns
    strategy.apply_batch(batch, ctx, rng)
    forwarded = Pulse(
        basis=int(batch.basis[0]),
        bit=int(batch.bit[0]),
        photons=int(batch.photons[0]),
        offset_ns=float(batch.offset_ns[0]),
        index=pulse.index,
    )
    record = batch.log.record(0)
    if record is not None and record.pulse_index != pulse.index:
        record = EveRecord(pulse.index, record.eve_basis, record.eve_bit_guess,
                           record.kept_photons, record.action)
    return forwarded, record


def intercept_resend(pulse: Pulse, rng: np.random.Generator
                     ) -> tuple[Pulse, Optional[EveRecord]]:
    """Measure one pulse in a random basis and forward the outcome state."""
    return _apply_single(InterceptResend(), pulse, AttackContext(), rng)


def pns_attack(pulse_photon_number: int, rng: np.random.Generator, *,
               suppression: float = 1.0) -> tuple[int, Optional[EveRecord]]:
    """Photon-number-splitting decision for one pulse of known size."""
    strategy = PhotonNumberSplitting(suppression=suppression)
    pulse = Pulse(basis=0, bit=0, photons=int(pulse_photon_number))
    forwarded, record = _apply_single(strategy, pulse, AttackContext(), rng)
    return forwarded.photons, record


def time_shift_attack(pulse: Pulse, policy: float, rng: np.random.Generator, *,
                      detectors: Optional[tuple[DetectorConfig, DetectorConfig]] = None,
                      ) -> tuple[Pulse, Optional[EveRecord]]:
    """Shift one pulse early (probability ``policy``) or late."""
    strategy = TimeShift(fraction_early=float(policy))
    ctx = AttackContext(detectors=detectors or _canonical_detectors())
    return _apply_single(strategy, pulse, ctx, rng)


def faked_state_attack(pulse: Pulse, rng: np.random.Generator, *,
                       detectors: Optional[tuple[DetectorConfig, DetectorConfig]] = None,
                       ) -> tuple[Pulse, Optional[EveRecord]]:
    """Measure one pulse, resend flipped bit and basis at a blind offset."""
    strategy = FakedState()
    ctx = AttackContext(detectors=detectors or _canonical_detectors())
    return _apply_single(strategy, pulse, ctx, rng)


def phase_remap_attack(angle_a: float, *, fraction: float = 1.0) -> PhaseRemap:
    """Configure the phase-remap stage for a session.

    The returned strategy both rewrites Alice's preparation phases on the
    pulses it touches and performs Eve's discrimination and resend; hand
    it to the session engine as the attack.
    """
    return PhaseRemap(fraction=fraction, angle_a=angle_a)
