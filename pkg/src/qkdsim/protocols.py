"""Prepare-and-measure key distribution sessions.

:func:`run_session` drives one session pulse by pulse: Alice draws bits,
bases, and intensity classes, the source emits photon numbers, an
optional attack strategy transforms the pulses in flight, the channel
thins them, and Bob's gated detector pair measures in his basis choice.
Everything lands in a :class:`SessionTranscript` holding both the
publicly announced columns and the simulator-only ground truth (true
photon numbers, Eve's log).

The remaining functions consume transcripts: :func:`sift` extracts the
matched-basis key, :func:`select_test_bits` and :func:`estimate_qber`
implement parameter estimation, :func:`decoy_yields` tallies per-class
gains, :func:`decoy_estimate` bounds the single-photon yield and error
rate from the decoy classes, and :func:`key_rate_estimate` turns those
bounds into an asymptotic secret-key rate per signal pulse.

Supported variants: ``bb84`` (unbiased), ``efficient-bb84`` (biased
bases, the bias announced and shared by both sides), ``six-state``
(three conjugate bases, polarization only), and ``entanglement-bb84``
(a pair source at the midpoint or in Alice's lab; both parties measure).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackContext, AttackStrategy, EveLog, PulseBatch
from .optics import (
    CAUSE_LABELS,
    CAUSE_NONE,
    CAUSE_PHOTON,
    ChannelConfig,
    DetectionEvent,
    DetectorConfig,
    DetectorPairState,
    SourceConfig,
    detect_batch,
    propagate_batch,
    sample_photon_number_batch,
    transmittance,
)
from .postprocess import KeyMaterial
from .qsim import born_probability_table

__all__ = [
    "BASIS_CODES",
    "DecoyConfig",
    "DecoyEstimateError",
    "IntensityClass",
    "ClassYield",
    "ProtocolConfig",
    "ProtocolError",
    "SessionTranscript",
    "VARIANTS",
    "YieldTable",
    "binary_entropy",
    "decoy_estimate",
    "decoy_yields",
    "estimate_qber",
    "eve_mutual_information",
    "key_rate_estimate",
    "replay_session",
    "run_session",
    "select_test_bits",
    "sift",
    "suggested_signal_mean",
]

logger = logging.getLogger(__name__)

VARIANTS = ("bb84", "efficient-bb84", "six-state", "entanglement-bb84")
ENCODINGS = ("polarization", "phase")
BASIS_CODES = ("R", "D", "C")

CHUNK_PULSES = 1 << 20


class ProtocolError(ValueError):
    """Raised for inconsistent protocol configurations or inputs."""


class DecoyEstimateError(RuntimeError):
    """Raised when decoy bounds cross; the session should abort."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Session-level protocol choices.

    Parameters
    ----------
    variant : str
        One of :data:`VARIANTS`.
    encoding : str
        ``"polarization"`` or ``"phase"``; six-state and entanglement
        sessions support polarization only.
    basis_bias : float
        Probability of the rectilinear basis for both parties, in
        (0, 1).  Must be 0.5 except for ``efficient-bb84``.
    test_fraction : float
        Fraction of the sifted key disclosed for error estimation, in
        (0, 1).
    abort_qber : float
        Estimated-error threshold at which a session aborts.
    pulse_count : int
        Number of pulses per session.
    entanglement_source : str
        ``"midpoint"`` or ``"alice"``; used by the entanglement variant
        to place the pair source.
    """

    variant: str = "bb84"
    encoding: str = "polarization"
    basis_bias: float = 0.5
    test_fraction: float = 0.1
    abort_qber: float = 0.11
    pulse_count: int = 1
    entanglement_source: str = "midpoint"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ProtocolError(f"unknown variant {self.variant!r}")
        if self.encoding not in ENCODINGS:
            raise ProtocolError(f"unknown encoding {self.encoding!r}")
        if not 0.0 < self.basis_bias < 1.0:
            raise ProtocolError("basis_bias must lie in (0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ProtocolError("test_fraction must lie in (0, 1)")
        if not 0.0 < self.abort_qber < 0.5:
            raise ProtocolError("abort_qber must lie in (0, 0.5)")
        if self.pulse_count < 1:
            raise ProtocolError("pulse_count must be at least 1")
        if self.variant != "efficient-bb84" and self.basis_bias != 0.5:
            raise ProtocolError(
                f"{self.variant} uses unbiased bases; set variant to "
                "efficient-bb84 for a biased session"
            )
        if self.variant in ("six-state", "entanglement-bb84") and self.encoding != "polarization":
            raise ProtocolError(f"{self.variant} supports polarization encoding only")
        if self.entanglement_source not in ("midpoint", "alice"):
            raise ProtocolError("entanglement_source must be 'midpoint' or 'alice'")


@dataclass(frozen=True)
class IntensityClass:
    """One decoy intensity setting."""

    label: str
    mean_photon_number: float
    probability: float


@dataclass(frozen=True)
class DecoyConfig:
    """Random per-pulse intensity modulation for decoy-state analysis.

    Parameters
    ----------
    intensity_classes : sequence
        ``(label, mean_photon_number, probability)`` triples or
        :class:`IntensityClass` instances.  Probabilities must sum to 1
        and the mean photon numbers must be pairwise distinct.
    signal_label : str
        Label of the single class used for key generation.
    """

    intensity_classes: tuple
    signal_label: str = "signal"

    def __post_init__(self):
        classes = []
        for entry in self.intensity_classes:
            if isinstance(entry, IntensityClass):
                classes.append(entry)
            else:
                label, mean, prob = entry
                classes.append(IntensityClass(str(label), float(mean), float(prob)))
        if not classes:
            raise ProtocolError("at least one intensity class is required")
        labels = [c.label for c in classes]
        if len(set(labels)) != len(labels):
            raise ProtocolError("intensity class labels must be unique")
        if labels.count(self.signal_label) != 1:
            raise ProtocolError(
                f"exactly one class must carry the signal label {self.signal_label!r}"
            )
        total = sum(c.probability for c in classes)
        if any(c.probability < 0 for c in classes) or abs(total - 1.0) > 1e-9:
            raise ProtocolError("class probabilities must be non-negative and sum to 1")
        means = [c.mean_photon_number for c in classes]
        if any(m < 0 for m in means):
            raise ProtocolError("mean photon numbers must be non-negative")
        for i in range(len(means)):
            for j in range(i + 1, len(means)):
                if abs(means[i] - means[j]) <= 1e-12:
                    raise ProtocolError("mean photon numbers must be pairwise distinct")
        if classes[labels.index(self.signal_label)].mean_photon_number <= 0:
            raise ProtocolError("the signal class needs a positive mean photon number")
        object.__setattr__(self, "intensity_classes", tuple(classes))

    @classmethod
    def vacuum_weak(cls, signal_mean=0.5, weak_mean=0.1, signal_probability=0.7,
                    weak_probability=0.15):
        """Standard three-class layout: signal, weak decoy, vacuum."""
        vacuum_probability = 1.0 - signal_probability - weak_probability
        return cls(
            (
                ("signal", signal_mean, signal_probability),
                ("weak", weak_mean, weak_probability),
                ("vacuum", 0.0, vacuum_probability),
            ),
            "signal",
        )

    @property
    def labels(self):
        return tuple(c.label for c in self.intensity_classes)

    @property
    def means(self):
        return tuple(c.mean_photon_number for c in self.intensity_classes)

    @property
    def signal(self):
        return self.by_label(self.signal_label)

    def by_label(self, label):
        for c in self.intensity_classes:
            if c.label == label:
                return c
        raise ProtocolError(f"no intensity class labeled {label!r}")

    def cumulative_probabilities(self):
        return np.cumsum([c.probability for c in self.intensity_classes])


def _int8(values, name, low, high):
    arr = np.asarray(values, dtype=np.int8)
    if arr.ndim != 1:
        raise ProtocolError(f"{name} must be one-dimensional")
    if arr.size and (arr.min() < low or arr.max() > high):
        raise ProtocolError(f"{name} values must lie in [{low}, {high}]")
    return arr


@dataclass(frozen=True)
class SessionTranscript:
    """Complete per-pulse record of one session.

    Public columns (index, bases, bits, intensity labels, detection
    outcomes) are what the parties and an eavesdropper could write
    down.  ``photon_numbers`` holds the true emitted photon number per
    pulse and ``eve_side_information`` the attack log; both exist only
    for simulator-side analysis and are never visible to the protocol.
    """

    variant: str
    encoding: str
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    intensity_index: np.ndarray
    class_labels: tuple
    class_means: tuple
    signal_label: str
    photon_numbers: np.ndarray
    bob_bases: np.ndarray
    clicked: np.ndarray
    double: np.ndarray
    cause: np.ndarray
    bob_bits: np.ndarray
    alice_detected: np.ndarray
    test_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    disclosed_test_bits: np.ndarray = field(
        default_factory=lambda: np.zeros((2, 0), dtype=np.int8)
    )
    eve_side_information: EveLog | None = None

    def __post_init__(self):
        n = self.alice_bits.size
        same_length = (
            "alice_bits", "alice_bases", "intensity_index", "photon_numbers",
            "bob_bases", "clicked", "double", "cause", "bob_bits", "alice_detected",
        )
        for name in same_length:
            if getattr(self, name).shape != (n,):
                raise ProtocolError(f"transcript column {name} must have length {n}")
        if self.signal_label not in self.class_labels:
            raise ProtocolError("signal label missing from the class labels")
        if self.eve_side_information is not None and self.eve_side_information.size != n:
            raise ProtocolError("attack log length must match the pulse count")
        for name in same_length + ("test_indices", "disclosed_test_bits"):
            getattr(self, name).setflags(write=False)

    @property
    def pulse_count(self):
        return int(self.alice_bits.size)

    @property
    def intensity_labels(self):
        return np.asarray(self.class_labels, dtype=object)[self.intensity_index]

    @property
    def sifted_mask(self):
        return (
            self.clicked
            & self.alice_detected
            & (self.alice_bases == self.bob_bases)
            & (self.alice_bits >= 0)
        )

    @property
    def sifted_indices(self):
        return np.flatnonzero(self.sifted_mask)

    @property
    def detected_count(self):
        return int(np.count_nonzero(self.clicked & self.alice_detected))

    @property
    def sifted_count(self):
        return int(np.count_nonzero(self.sifted_mask))

    def detection(self, index):
        """The pulse's detection outcome as a :class:`DetectionEvent`."""
        i = int(index)
        clicked = bool(self.clicked[i])
        return DetectionEvent(
            pulse_index=i,
            clicked=clicked,
            detector_id=int(self.bob_bits[i]) if clicked else None,
            double_click=bool(self.double[i]),
            cause=CAUSE_LABELS[int(self.cause[i])],
        )

    def with_test_selection(self, test_indices, disclosed_test_bits):
        """Copy of the transcript with the disclosed test sample attached."""
        return replace(
            self,
            test_indices=np.asarray(test_indices, dtype=np.int64),
            disclosed_test_bits=np.asarray(disclosed_test_bits, dtype=np.int8),
        )

    def export_lines(self):
        """Per-pulse lines ``index, alice_basis, alice_bit, intensity,
        bob_basis, click, bob_bit`` with ``-`` for unresolved values."""
        labels = self.class_labels
        for i in range(self.pulse_count):
            a_bit = int(self.alice_bits[i])
            b_bit = int(self.bob_bits[i])
            yield (
                f"{i}, {BASIS_CODES[self.alice_bases[i]]}, "
                f"{a_bit if a_bit >= 0 else '-'}, "
                f"{labels[self.intensity_index[i]]}, "
                f"{BASIS_CODES[self.bob_bases[i]]}, "
                f"{int(self.clicked[i])}, "
                f"{b_bit if b_bit >= 0 else '-'}"
            )


def _draw_bases(rng, count, protocol):
    if protocol.variant == "six-state":
        return rng.integers(0, 3, size=count, dtype=np.int8)
    return (rng.random(count) >= protocol.basis_bias).astype(np.int8)


def run_session(protocol, decoy, source, channel, detectors, attack, rng):
    """Simulate one session and return its transcript.

    Pulses are processed in chunks: Alice's draws, the source's photon
    numbers, the attack, the channel, and Bob's measurement each consume
    an independent child generator of ``rng``, so disabling one stage
    leaves every other stage's randomness untouched.

    Parameters
    ----------
    protocol : ProtocolConfig
    decoy : DecoyConfig or None
        Per-pulse intensity modulation; requires a weak-coherent source
        whose configured mean matches the signal class.
    source : SourceConfig
    channel : ChannelConfig
    detectors : tuple of DetectorConfig
        Bob's detector pair (detector index = bit value).
    attack : AttackStrategy or None
        Applied to every pulse between the source and the detectors.
    rng : numpy.random.Generator

    Returns
    -------
    SessionTranscript
    """
    if not isinstance(rng, np.random.Generator):
        raise ProtocolError("rng must be a numpy Generator")
    if attack is not None and not isinstance(attack, AttackStrategy):
        raise ProtocolError("attack must be an AttackStrategy or None")
    entangled = protocol.variant == "entanglement-bb84"
    if decoy is not None:
        if source.kind != "weak-coherent":
            raise ProtocolError("decoy intensity classes require a weak-coherent source")
        signal_mean = decoy.signal.mean_photon_number
        if abs(signal_mean - source.mean_photon_number) > 1e-9:
            raise ProtocolError(
                f"signal class mean {signal_mean} disagrees with the source "
                f"mean {source.mean_photon_number}"
            )
    if entangled:
        if source.kind != "entangled-pair":
            raise ProtocolError("the entanglement variant requires an entangled-pair source")
        if decoy is not None:
            raise ProtocolError("the entanglement variant does not use decoy classes")
        if attack is not None:
            raise ProtocolError("attack strategies are not defined for the entanglement variant")
    if attack is not None and protocol.variant == "six-state":
        raise ProtocolError("attack strategies support bb84 and efficient-bb84 sessions")

    rng_alice, rng_source, rng_eve, rng_channel, rng_bob = rng.spawn(5)
    born = born_probability_table()
    ctx = AttackContext(detectors=tuple(detectors), encoding=protocol.encoding)
    eta_channel = transmittance(channel)
    if entangled:
        # The pair source sits either in Alice's lab (her arm is
        # lossless) or at the midpoint (each arm crosses half the span,
        # so each sees the square root of the end-to-end transmittance).
        if protocol.entanglement_source == "midpoint":
            eta_alice_arm = math.sqrt(eta_channel)
            eta_bob_arm = math.sqrt(eta_channel)
        else:
            eta_alice_arm = 1.0
            eta_bob_arm = eta_channel
    else:
        eta_alice_arm = 1.0
        eta_bob_arm = eta_channel

    if decoy is not None:
        class_labels = decoy.labels
        class_means = decoy.means
        signal_label = decoy.signal_label
        cumulative = decoy.cumulative_probabilities()
        means_array = np.asarray(class_means)
    else:
        mean = 1.0 if source.kind in ("single-photon", "entangled-pair") else source.mean_photon_number
        class_labels = ("signal",)
        class_means = (float(mean),)
        signal_label = "signal"
        cumulative = None
        means_array = None

    n = protocol.pulse_count
    columns = {name: [] for name in (
        "alice_bits", "alice_bases", "intensity_index", "photon_numbers",
        "bob_bases", "clicked", "double", "cause", "bob_bits", "alice_detected",
    )}
    eve_logs = []
    detector_state = DetectorPairState()

    for start in range(0, n, CHUNK_PULSES):
        m = min(CHUNK_PULSES, n - start)
        a_bases = _draw_bases(rng_alice, m, protocol)
        a_bits = rng_alice.integers(0, 2, size=m, dtype=np.int8)
        if cumulative is not None:
            intensity = np.searchsorted(
                cumulative, rng_alice.random(m), side="right"
            ).astype(np.int16)
            intensity = np.minimum(intensity, len(class_labels) - 1)
            photons = sample_photon_number_batch(
                source, means_array[intensity], rng_source, m
            )
        else:
            intensity = np.zeros(m, dtype=np.int16)
            photons = sample_photon_number_batch(source, None, rng_source, m)

        if entangled:
            detected_a = rng_source.random(m) < eta_alice_arm
        else:
            detected_a = np.ones(m, dtype=bool)

        batch = PulseBatch.from_alice(a_bases, a_bits, photons)
        if attack is not None:
            attack.apply_batch(batch, ctx, rng_eve)
        eta = np.where(
            batch.bypass_channel,
            1.0,
            np.clip(eta_bob_arm * batch.eta_factor, 0.0, 1.0),
        )
        arriving = propagate_batch(batch.photons, eta, rng_channel)

        b_bases = _draw_bases(rng_bob, m, protocol)
        p_one = born[batch.basis, batch.bit, b_bases, 1]
        expected = (p_one > 0.5).astype(np.int64)
        leak = np.minimum(p_one, 1.0 - p_one)
        outcome = detect_batch(
            arriving,
            batch.offset_ns,
            tuple(detectors),
            expected,
            leak,
            rng_bob,
            start_gate=start,
            state=detector_state,
        )

        columns["alice_bits"].append(np.where(detected_a, a_bits, -1).astype(np.int8))
        columns["alice_bases"].append(a_bases)
        columns["intensity_index"].append(intensity)
        columns["photon_numbers"].append(photons)
        columns["bob_bases"].append(b_bases)
        columns["clicked"].append(outcome["clicked"])
        columns["double"].append(outcome["double"])
        columns["cause"].append(outcome["cause"])
        columns["bob_bits"].append(
            np.where(outcome["clicked"], outcome["detector"], -1).astype(np.int8)
        )
        columns["alice_detected"].append(detected_a)
        eve_logs.append(batch.log)

    arrays = {name: np.concatenate(parts) for name, parts in columns.items()}
    transcript = SessionTranscript(
        variant=protocol.variant,
        encoding=protocol.encoding,
        class_labels=class_labels,
        class_means=class_means,
        signal_label=signal_label,
        eve_side_information=EveLog.concat(eve_logs) if attack is not None else None,
        **arrays,
    )
    logger.debug(
        "session: %d pulses, %d detected, %d sifted",
        transcript.pulse_count, transcript.detected_count, transcript.sifted_count,
    )
    return transcript


def replay_session(protocol, alice_bits, alice_bases, bob_bases, clicked, bob_bits):
    """Rebuild a transcript from a hand-specified lossless session.

    Used to replay worked examples exactly: the caller lists every
    pulse's preparation, Bob's basis, which pulses clicked, and the
    recorded outcomes.  Outcomes at matched bases must equal Alice's
    bit (an ideal channel leaves no other possibility); mismatched
    bases accept whichever outcome the example recorded.

    Returns
    -------
    SessionTranscript
    """
    a_bits = _int8(alice_bits, "alice_bits", 0, 1)
    n = a_bits.size
    if protocol.pulse_count != n:
        raise ProtocolError(
            f"protocol.pulse_count is {protocol.pulse_count} but {n} pulses were given"
        )
    limit = 2 if protocol.variant == "six-state" else 1
    a_bases = _int8(alice_bases, "alice_bases", 0, limit)
    b_bases = _int8(bob_bases, "bob_bases", 0, limit)
    click = np.asarray(clicked, dtype=bool)
    b_bits = _int8(bob_bits, "bob_bits", -1, 1)
    if a_bases.size != n or b_bases.size != n or click.size != n or b_bits.size != n:
        raise ProtocolError("replay columns must share one length")
    if np.any((b_bits >= 0) != click):
        raise ProtocolError("bob_bits must be set exactly at the clicked pulses")
    matched = click & (a_bases == b_bases)
    if np.any(b_bits[matched] != a_bits[matched]):
        raise ProtocolError(
            "replay is inconsistent: a matched-basis measurement of an "
            "undisturbed pulse must reproduce Alice's bit"
        )
    cause = np.where(click, CAUSE_PHOTON, CAUSE_NONE).astype(np.int8)
    return SessionTranscript(
        variant=protocol.variant,
        encoding=protocol.encoding,
        alice_bits=a_bits,
        alice_bases=a_bases,
        intensity_index=np.zeros(n, dtype=np.int16),
        class_labels=("signal",),
        class_means=(1.0,),
        signal_label="signal",
        photon_numbers=np.ones(n, dtype=np.int64),
        bob_bases=b_bases,
        clicked=click,
        double=np.zeros(n, dtype=bool),
        cause=cause,
        bob_bits=b_bits,
        alice_detected=np.ones(n, dtype=bool),
    )


def sift(transcript):
    """Extract the matched-basis key from a transcript.

    A pulse survives sifting when Bob registered a click, both parties
    hold a resolved bit, and the basis choices agree.  Double clicks
    enter with their coin-resolved bit.  ``eve_known_fraction`` is the
    fraction of sifted positions where the attack log marks Eve's
    knowledge as certain.

    Returns
    -------
    KeyMaterial
        Raw-stage key pair.
    """
    idx = transcript.sifted_indices
    alice = transcript.alice_bits[idx].astype(np.uint8)
    bob = transcript.bob_bits[idx].astype(np.uint8)
    log = transcript.eve_side_information
    known = 0.0
    if log is not None and idx.size:
        known = float(np.mean(log.known[idx]))
    return KeyMaterial(alice, bob, "raw", 0.0, known)


def select_test_bits(sifted, fraction, rng):
    """Sample random sifted positions for public error estimation.

    Parameters
    ----------
    sifted : KeyMaterial
        The sifted key pair.
    fraction : float
        Fraction of positions to disclose, in (0, 1).
    rng : numpy.random.Generator

    Returns
    -------
    (numpy.ndarray, numpy.ndarray)
        Sorted positions into the sifted key, and a ``(2, k)`` array of
        the disclosed bits (Alice's row first).  After comparing, both
        parties discard these positions.

    Raises
    ------
    ProtocolError
        If the sample would be degenerate: no sifted bits, a rounded
        sample of zero, or the whole key disclosed.
    """
    if not isinstance(sifted, KeyMaterial):
        raise ProtocolError("sifted must be a KeyMaterial")
    if not 0.0 < fraction < 1.0:
        raise ProtocolError("fraction must lie in (0, 1)")
    n = sifted.length
    count = int(round(fraction * n))
    if n == 0 or count == 0 or count >= n:
        raise ProtocolError(
            f"degenerate test sample: {count} of {n} sifted bits"
        )
    test = np.sort(rng.choice(n, size=count, replace=False)).astype(np.int64)
    disclosed = np.vstack(
        (sifted.alice_bits[test], sifted.bob_bits[test])
    ).astype(np.int8)
    return test, disclosed


def estimate_qber(test_alice, test_bob):
    """Observed disagreement fraction of the disclosed test bits."""
    a = np.asarray(test_alice)
    b = np.asarray(test_bob)
    if a.size != b.size:
        raise ProtocolError("test samples must have equal length")
    if a.size == 0:
        raise ProtocolError("cannot estimate an error rate from zero test bits")
    return float(np.mean(a != b))


@dataclass(frozen=True)
class ClassYield:
    """Observed counts for one intensity class.

    ``photon_*`` arrays tally the same counts by true emitted photon
    number; they are simulator-side ground truth for validating the
    decoy estimates and are not available to the protocol.
    """

    label: str
    mean_photon_number: float
    pulses_sent: int
    clicks: int
    sifted: int
    errors: int
    photon_pulses: np.ndarray
    photon_clicks: np.ndarray
    photon_sifted: np.ndarray
    photon_errors: np.ndarray

    def __post_init__(self):
        if not 0 <= self.errors <= self.sifted <= self.clicks <= self.pulses_sent:
            raise ProtocolError(
                f"class {self.label!r} counts must satisfy "
                "errors <= sifted <= clicks <= pulses_sent"
            )

    @property
    def gain(self):
        """Clicks per sent pulse."""
        return self.clicks / self.pulses_sent

    @property
    def error_rate_per_click(self):
        """Sifted errors per click; dark counts contribute exactly 1/4."""
        return self.errors / self.clicks if self.clicks else 0.0

    @property
    def error_rate_sifted(self):
        """Sifted errors per sifted bit (the QBER convention)."""
        return self.errors / self.sifted if self.sifted else 0.0


@dataclass(frozen=True)
class YieldTable:
    """Per-class gains and error counts for one transcript."""

    classes: tuple
    signal_label: str

    def __post_init__(self):
        if self.signal_label not in [c.label for c in self.classes]:
            raise ProtocolError("signal label missing from the yield table")

    def by_label(self, label):
        for c in self.classes:
            if c.label == label:
                return c
        raise ProtocolError(f"no intensity class labeled {label!r}")

    @property
    def signal(self):
        return self.by_label(self.signal_label)

    def _pooled(self, name, n):
        total = 0
        for c in self.classes:
            arr = getattr(c, name)
            if n < arr.size:
                total += int(arr[n])
        return total

    def true_single_photon_yield(self):
        """Ground-truth click probability of single-photon pulses.

        Pooled over classes from the hidden photon-number tallies; not
        available to the protocol.
        """
        pulses = self._pooled("photon_pulses", 1)
        if pulses == 0:
            raise ProtocolError("no single-photon pulses were sent")
        return self._pooled("photon_clicks", 1) / pulses

    def true_single_photon_error_rate(self):
        """Ground-truth sifted error rate of single-photon pulses.

        Returns 0 when no single-photon pulse reached the sifted key.
        """
        sifted = self._pooled("photon_sifted", 1)
        if sifted == 0:
            return 0.0
        return self._pooled("photon_errors", 1) / sifted


def decoy_yields(transcript):
    """Tally per-intensity-class gains and sifted errors.

    Every class must have sent at least one pulse.  Errors are counted
    over all sifted positions of the class, so dark counts land at a
    per-click error rate of exactly 1/4 (half of the dark clicks
    survive sifting, half of those disagree).

    Returns
    -------
    YieldTable
    """
    sifted_mask = transcript.sifted_mask
    error_mask = sifted_mask & (transcript.alice_bits != transcript.bob_bits)
    photons = transcript.photon_numbers
    width = int(photons.max()) + 1 if photons.size else 1
    rows = []
    for index, label in enumerate(transcript.class_labels):
        in_class = transcript.intensity_index == index
        pulses = int(np.count_nonzero(in_class))
        if pulses == 0:
            raise ProtocolError(f"intensity class {label!r} sent no pulses")
        clicks = in_class & transcript.clicked
        sifted = in_class & sifted_mask
        errors = in_class & error_mask
        rows.append(ClassYield(
            label=label,
            mean_photon_number=float(transcript.class_means[index]),
            pulses_sent=pulses,
            clicks=int(np.count_nonzero(clicks)),
            sifted=int(np.count_nonzero(sifted)),
            errors=int(np.count_nonzero(errors)),
            photon_pulses=np.bincount(photons[in_class], minlength=width),
            photon_clicks=np.bincount(photons[clicks], minlength=width),
            photon_sifted=np.bincount(photons[sifted], minlength=width),
            photon_errors=np.bincount(photons[errors], minlength=width),
        ))
    return YieldTable(tuple(rows), transcript.signal_label)


def _binomial_slack(rate, trials, sigmas):
    # Normal-approximation slack plus a 1/N continuity floor so that
    # zero-count classes still carry uncertainty.
    return sigmas * (math.sqrt(max(rate * (1.0 - rate), 0.0) / trials) + 1.0 / trials)


def decoy_estimate(yields, decoy, confidence_sigmas=5.0):
    """Bound the single-photon yield and error rate from decoy classes.

    Works with the standard vacuum-plus-weak-decoy layout: the signal
    class (mean ``mu``), the weakest positive decoy class (mean ``nu``),
    and a vacuum class.  Observed gains and error gains are widened by
    ``confidence_sigmas`` binomial standard deviations (plus a ``1/N``
    floor) in the direction that weakens the result, then combined into
    a lower bound on the single-photon yield and an upper bound on the
    single-photon sifted error rate.

    Returns
    -------
    (float, float)
        ``(yield_lower, error_upper)``.  When the yield bound collapses
        to zero the error bound is vacuous ``(0, 1)``.

    Raises
    ------
    DecoyEstimateError
        If a required class is missing or the statistical bounds cross
        (the session should abort rather than trust them).
    """
    for c in yields.classes:
        expected = decoy.by_label(c.label).mean_photon_number
        if abs(expected - c.mean_photon_number) > 1e-9:
            raise ProtocolError(
                f"yield table and decoy config disagree on class {c.label!r}"
            )
    signal = yields.signal
    mu = signal.mean_photon_number
    vacuum = None
    weak = None
    for c in yields.classes:
        if c.mean_photon_number == 0.0:
            vacuum = c
        elif c.label != yields.signal_label and c.mean_photon_number < mu:
            if weak is None or c.mean_photon_number < weak.mean_photon_number:
                weak = c
    if vacuum is None:
        raise DecoyEstimateError("single-photon estimation needs a vacuum class")
    if weak is None:
        raise DecoyEstimateError(
            "single-photon estimation needs a decoy class weaker than the signal"
        )
    nu = weak.mean_photon_number
    z = float(confidence_sigmas)

    q_mu = signal.gain
    q_nu = weak.gain
    y0 = vacuum.gain
    q_mu_low = max(0.0, q_mu - _binomial_slack(q_mu, signal.pulses_sent, z))
    q_mu_high = min(1.0, q_mu + _binomial_slack(q_mu, signal.pulses_sent, z))
    q_nu_low = max(0.0, q_nu - _binomial_slack(q_nu, weak.pulses_sent, z))
    y0_low = max(0.0, y0 - _binomial_slack(y0, vacuum.pulses_sent, z))
    y0_high = min(1.0, y0 + _binomial_slack(y0, vacuum.pulses_sent, z))

    # Vacuum+weak bound: subtract the worst-case multi-photon content of
    # the weak class using the signal gain, then the vacuum-only bound
    # that charges every multi-photon pulse with a unit yield.
    ratio = nu * nu / (mu * mu)
    vw = (mu / (mu * nu - nu * nu)) * (
        q_nu_low * math.exp(nu)
        - q_mu_high * math.exp(mu) * ratio
        - (1.0 - ratio) * y0_high
    )
    vo = (q_mu_low * math.exp(mu) - y0_high - (math.exp(mu) - 1.0 - mu)) / mu
    y1_lower = min(1.0, max(0.0, vw, vo))
    if y1_lower == 0.0:
        return 0.0, 1.0

    candidates = []
    for c, mean in ((weak, nu), (signal, mu)):
        w = c.errors / c.pulses_sent
        w_high = min(1.0, w + _binomial_slack(w, c.pulses_sent, z))
        numerator = w_high * math.exp(mean) - 0.25 * y0_low
        if numerator < 0.0:
            raise DecoyEstimateError(
                f"error bounds cross for class {c.label!r}: the vacuum "
                "contribution exceeds the observed error gain"
            )
        candidates.append(numerator / (mean * y1_lower))
    # Per-click error rates convert to the sifted convention by the
    # factor two (half of the clicks survive sifting).
    e1_upper = min(1.0, 2.0 * min(candidates))
    return float(y1_lower), float(e1_upper)


def binary_entropy(p):
    """Binary Shannon entropy in bits; 0 at both endpoints."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)):
        raise ProtocolError("binary_entropy needs probabilities in [0, 1]")
    result = np.zeros_like(arr)
    interior = (arr > 0.0) & (arr < 1.0)
    q = arr[interior]
    result[interior] = -q * np.log2(q) - (1.0 - q) * np.log2(1.0 - q)
    if np.isscalar(p) or np.ndim(p) == 0:
        return float(result)
    return result


def key_rate_estimate(yields, decoy_bounds=None, mode="decoy",
                      error_correction_efficiency=1.2):
    """Asymptotic secret-key rate per signal pulse.

    The rate charges error correction at ``efficiency * H2(E)`` per
    sifted bit and credits only single-photon detections:

        rate = Q1 * (1 - H2(e1)) - Q * efficiency * H2(E)

    clamped at zero.  In ``"decoy"`` mode the single-photon gain and
    error rate come from ``decoy_bounds`` (``Q1 = Y1 * mu * exp(-mu)``);
    in ``"non-decoy"`` mode every multi-photon pulse is assumed to click
    and to hand Eve its bit, so ``Q1 = Q - P(n >= 2)`` and the
    single-photon error rate is rescaled accordingly.

    Parameters
    ----------
    yields : YieldTable
    decoy_bounds : tuple, optional
        ``(yield_lower, error_upper)`` from :func:`decoy_estimate`.
    mode : str
        ``"decoy"`` or ``"non-decoy"``.
    error_correction_efficiency : float
        Multiplier on the Shannon limit for reconciliation leakage.

    Returns
    -------
    float
        Non-negative rate in secret bits per signal pulse.
    """
    if mode not in ("decoy", "non-decoy"):
        raise ProtocolError(f"unknown key rate mode {mode!r}")
    if error_correction_efficiency < 1.0:
        raise ProtocolError("error_correction_efficiency cannot beat the Shannon limit")
    signal = yields.signal
    gain = signal.gain
    if gain == 0.0:
        return 0.0
    qber = signal.error_rate_sifted
    mu = signal.mean_photon_number
    if mode == "decoy":
        if decoy_bounds is None:
            raise ProtocolError("decoy mode requires decoy_bounds")
        y1_lower, e1_upper = decoy_bounds
        single_gain = y1_lower * mu * math.exp(-mu)
        single_error = min(0.5, e1_upper)
    else:
        multi = 1.0 - math.exp(-mu) * (1.0 + mu)
        single_gain = gain - multi
        if single_gain <= 0.0:
            return 0.0
        single_error = min(0.5, qber * gain / single_gain)
    rate = single_gain * (1.0 - binary_entropy(single_error))
    rate -= gain * error_correction_efficiency * binary_entropy(qber)
    return max(0.0, float(rate))


def suggested_signal_mean(mode, eta_effective):
    """Reasonable signal mean photon number for a channel.

    Without decoy classes the multi-photon fraction must stay below the
    detection gain, which pins the optimum near the end-to-end
    transmittance; with decoy bounds an order-one mean is optimal.
    """
    if mode not in ("decoy", "non-decoy"):
        raise ProtocolError(f"unknown key rate mode {mode!r}")
    if not 0.0 < eta_effective <= 1.0:
        raise ProtocolError("eta_effective must lie in (0, 1]")
    if mode == "decoy":
        return 0.5
    return float(min(0.9, eta_effective))


def eve_mutual_information(transcript):
    """Plug-in mutual information between Eve's records and the sifted key.

    Eve's per-pulse symbol is her logged guess (0 or 1) where she holds
    one and "none" elsewhere; the estimate is the empirical mutual
    information between that symbol and Alice's bit over the sifted
    positions, in bits.
    """
    log = transcript.eve_side_information
    idx = transcript.sifted_indices
    if log is None or idx.size == 0:
        return 0.0
    guesses = log.guess[idx]
    symbols = np.where(guesses >= 0, guesses, 2).astype(np.int64)
    bits = transcript.alice_bits[idx].astype(np.int64)
    joint = np.zeros((3, 2))
    np.add.at(joint, (symbols, bits), 1.0)
    joint /= joint.sum()
    p_symbol = joint.sum(axis=1, keepdims=True)
    p_bit = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    terms = joint[mask] * np.log2(joint[mask] / (p_symbol @ p_bit)[mask])
    return float(terms.sum())
