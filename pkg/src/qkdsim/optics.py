"""Photonic layer: pulsed sources, lossy fiber, threshold detectors.

Pulses are tracked by photon number only; the qubit content rides in the
protocol layer.  Sources emit Poisson photon numbers (weak coherent) or
exactly one photon; the fiber thins the count binomially with
transmittance 10^(-L*alpha/10); a pair of gated threshold detectors
converts arriving photons into click events with efficiency-curve,
dark-count, dead-time, and double-click behavior.

Detector model, per gate
------------------------
Photons are routed to the expected detector except for an independent
per-photon leak probability toward the wrong one (the Born weight of the
opposite outcome, supplied by the caller).  A detector holding k photons
clicks with probability 1 - (1 - eff)^k where eff = base_efficiency times
the arrival-offset multiplier of its efficiency curve (gated detectors
only; free-running detectors ignore the curve).  Each detector also dark
fires with its dark_count_prob each gate, so a vacuum pulse produces a
click with probability 1 - (1 - d)^2 across the pair.  A click at gate t
blocks that detector for the next dead_time_gates gates; suppressed events
do not extend the window.  When both detectors fire the event carries a
double_click flag and is resolved to a uniformly random bit by
:func:`resolve_double_click`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "OpticsError",
    "EfficiencyCurve",
    "flat_curve",
    "mismatched_curves",
    "EARLY_OFFSET_NS",
    "LATE_OFFSET_NS",
    "SourceConfig",
    "ChannelConfig",
    "DetectorConfig",
    "DetectorPairState",
    "DetectionEvent",
    "sample_photon_number",
    "sample_photon_number_batch",
    "transmittance",
    "propagate",
    "propagate_batch",
    "detect",
    "detect_batch",
    "resolve_double_click",
]

#: Canonical gate offsets (ns) used by the timing attacks and their tests.
EARLY_OFFSET_NS = -1.0
LATE_OFFSET_NS = 1.0

SOURCE_KINDS = ("weak-coherent", "single-photon", "entangled-pair")

# cause codes used by the vectorized engine
CAUSE_NONE = 0
CAUSE_PHOTON = 1
CAUSE_DARK = 2
CAUSE_LABELS = ("none", "photon", "dark")


class OpticsError(ValueError):
    """Raised for invalid optical configuration or impossible inputs."""


@dataclass(frozen=True)
class EfficiencyCurve:
    """Piecewise-linear efficiency multiplier versus arrival offset.

    Interpolates linearly between (offset_ns, multiplier) knots and clamps
    to the end values outside the knot range.  The multiplier at offset 0
    must be 1 so that base_efficiency keeps its meaning at the nominal
    gate center.
    """

    offsets_ns: tuple[float, ...]
    multipliers: tuple[float, ...]

    def __post_init__(self) -> None:
        off = tuple(float(x) for x in self.offsets_ns)
        mul = tuple(float(x) for x in self.multipliers)
        if len(off) != len(mul) or not off:
            raise OpticsError("curve needs matching, non-empty knot arrays")
        if any(b <= a for a, b in zip(off, off[1:])):
            raise OpticsError("curve offsets must be strictly increasing")
        if any(not 0.0 <= m <= 1.0 for m in mul):
            raise OpticsError("curve multipliers must lie in [0, 1]")
        if abs(self(0.0) - 1.0) > 1e-9:
            raise OpticsError("curve multiplier at offset 0 must be 1")
        object.__setattr__(self, "offsets_ns", off)
        object.__setattr__(self, "multipliers", mul)

    def __call__(self, offset_ns):
        return np.interp(offset_ns, self.offsets_ns, self.multipliers)


def flat_curve() -> EfficiencyCurve:
    """Unit multiplier at every offset (no timing mismatch)."""
    return EfficiencyCurve((0.0,), (1.0,))


def mismatched_curves(
    early_ns: float = EARLY_OFFSET_NS,
    late_ns: float = LATE_OFFSET_NS,
    strong: float = 0.5,
    weak: float = 0.05,
) -> tuple[EfficiencyCurve, EfficiencyCurve]:
    """The canonical mirrored detector-efficiency mismatch pair.

    Detector 0 responds at (early, nominal, late) with multipliers
    (strong, 1, weak); detector 1 mirrors it.  With the defaults an early
    arrival leaves detector 0 ten times likelier to fire than detector 1,
    the asymmetry the timing attacks exploit.
    """
    c0 = EfficiencyCurve((early_ns, 0.0, late_ns), (strong, 1.0, weak))
    c1 = EfficiencyCurve((early_ns, 0.0, late_ns), (weak, 1.0, strong))
    return c0, c1


@dataclass(frozen=True)
class SourceConfig:
    """Pulsed photon source.

    kind "weak-coherent" emits Poisson(mean_photon_number) photons per
    pulse; "single-photon" and "entangled-pair" emit exactly one photon
    (one pair) per pulse.  repetition_rate_hz is bookkeeping for reports.
    """

    kind: str = "weak-coherent"
    mean_photon_number: float = 0.5
    repetition_rate_hz: float = 1e6

    def __post_init__(self) -> None:
        if self.kind not in SOURCE_KINDS:
            raise OpticsError(f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        if self.mean_photon_number < 0:
            raise OpticsError("mean photon number must be non-negative")
        if self.repetition_rate_hz <= 0:
            raise OpticsError("repetition rate must be positive")


@dataclass(frozen=True)
class ChannelConfig:
    """Fiber span with exponential loss.

    Transmittance is 10^(-length_km * loss_db_per_km / 10) unless
    excess_transmittance_override pins it directly (useful for attack
    compensation scenarios and unit tests).
    """

    length_km: float = 0.0
    loss_db_per_km: float = 0.21
    excess_transmittance_override: Optional[float] = None

    def __post_init__(self) -> None:
        if self.length_km < 0:
            raise OpticsError("channel length must be non-negative")
        if self.loss_db_per_km < 0:
            raise OpticsError("loss coefficient must be non-negative")
        if self.excess_transmittance_override is not None and not (
            0.0 <= self.excess_transmittance_override <= 1.0
        ):
            raise OpticsError("transmittance override must lie in [0, 1]")


@dataclass(frozen=True)
class DetectorConfig:
    """A single threshold detector behind one output port.

    gated=True applies the efficiency curve at the pulse's arrival offset;
    gated=False ignores arrival timing entirely.  dead_time_gates is the
    number of subsequent gates a click blinds this detector for.
    """

    base_efficiency: float = 0.1
    dark_count_prob: float = 1e-5
    efficiency_curve: EfficiencyCurve = field(default_factory=flat_curve)
    dead_time_gates: int = 0
    gated: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.base_efficiency <= 1.0:
            raise OpticsError("base efficiency must lie in [0, 1]")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise OpticsError("dark count probability must lie in [0, 1)")
        if self.dead_time_gates < 0 or int(self.dead_time_gates) != self.dead_time_gates:
            raise OpticsError("dead time must be a non-negative integer gate count")

    def efficiency_at(self, offset_ns) -> np.ndarray:
        """Effective efficiency for an arrival offset (scalar or array)."""
        mult = self.efficiency_curve(offset_ns) if self.gated else np.ones_like(
            np.asarray(offset_ns, dtype=float))
        return self.base_efficiency * mult


class DetectorPairState:
    """Dead-time memory for one detector pair, owned by one session."""

    __slots__ = ("blocked_until",)

    def __init__(self) -> None:
        # first gate index at which each detector may fire again
        self.blocked_until = np.zeros(2, dtype=np.int64)

    def reset(self) -> None:
        self.blocked_until[:] = 0


@dataclass(frozen=True)
class DetectionEvent:
    """Outcome of one detector gate."""

    pulse_index: int
    clicked: bool
    detector_id: Optional[int]
    double_click: bool
    cause: str

    def __post_init__(self) -> None:
        if self.cause not in CAUSE_LABELS:
            raise OpticsError(f"unknown cause tag {self.cause!r}")


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

def sample_photon_number_batch(
    source: SourceConfig,
    intensity_class_mean,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Photon numbers for ``size`` pulses; vector core for the engine.

    ``intensity_class_mean`` may be a scalar or a per-pulse array and
    overrides the source's configured mean (decoy intensity classes);
    pass None to use the configured mean.
    """
    if source.kind in ("single-photon", "entangled-pair"):
        return np.ones(size, dtype=np.int64)
    mean = source.mean_photon_number if intensity_class_mean is None else intensity_class_mean
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0):
        raise OpticsError("intensity class mean must be non-negative")
    return rng.poisson(lam=np.broadcast_to(mean, (size,))).astype(np.int64)


def sample_photon_number(
    source: SourceConfig,
    intensity_class_mean: Optional[float],
    rng: np.random.Generator,
) -> int:
    """Photon number of a single pulse (Poisson for weak-coherent sources)."""
    return int(sample_photon_number_batch(source, intensity_class_mean, rng, 1)[0])


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------

def transmittance(channel: ChannelConfig) -> float:
    """Power transmittance of the configured span, in [0, 1]."""
    if channel.excess_transmittance_override is not None:
        return float(channel.excess_transmittance_override)
    return float(10.0 ** (-channel.length_km * channel.loss_db_per_km / 10.0))


def propagate_batch(pulse_photons: np.ndarray, eta, rng: np.random.Generator) -> np.ndarray:
    """Binomial thinning of photon counts with per-pulse survival ``eta``."""
    photons = np.asarray(pulse_photons, dtype=np.int64)
    if np.any(photons < 0):
        raise OpticsError("photon counts must be non-negative")
    eta_arr = np.broadcast_to(np.asarray(eta, dtype=float), photons.shape)
    if np.any((eta_arr < 0.0) | (eta_arr > 1.0)):
        raise OpticsError("transmittance must lie in [0, 1]")
    return rng.binomial(photons, eta_arr)


def propagate(pulse_photons: int, channel: ChannelConfig, rng: np.random.Generator) -> int:
    """Photons surviving one pass through ``channel`` (each survives iid)."""
    return int(propagate_batch(np.array([pulse_photons]), transmittance(channel), rng)[0])


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def detect_batch(
    arriving_photons: np.ndarray,
    arrival_offset_ns: np.ndarray,
    detectors: tuple[DetectorConfig, DetectorConfig],
    expected_detector: np.ndarray,
    wrong_detector_leak: np.ndarray,
    rng: np.random.Generator,
    *,
    start_gate: int = 0,
    state: Optional[DetectorPairState] = None,
) -> dict[str, np.ndarray]:
    """Vectorized detection of consecutive gates.

    Pulse i occupies gate ``start_gate + i``.  Returns arrays ``clicked``
    (bool), ``detector`` (int8; -1 none, 0/1 resolved detector),
    ``double`` (bool), and ``cause`` (int8 codes none/photon/dark).
    Double clicks arrive already resolved to a uniform random detector but
    keep their flag so analyses can drop or study them.

    The rng draw order is fixed (routing split, photon survival per
    detector, dark pair, double-click coin) so identical seeds give
    identical sessions.
    """
    photons = np.asarray(arriving_photons, dtype=np.int64)
    n = photons.shape[0]
    offsets = np.broadcast_to(np.asarray(arrival_offset_ns, dtype=float), (n,))
    expected = np.asarray(expected_detector, dtype=np.int64)
    leak = np.broadcast_to(np.asarray(wrong_detector_leak, dtype=float), (n,))
    if np.any(photons < 0):
        raise OpticsError("photon counts must be non-negative")
    if np.any((expected != 0) & (expected != 1)):
        raise OpticsError("expected detector must be 0 or 1")
    if np.any((leak < 0.0) | (leak > 1.0)):
        raise OpticsError("wrong-detector leak must lie in [0, 1]")
    if state is None:
        state = DetectorPairState()

    # Route each photon independently; leak is the Born weight of the
    # opposite outcome given the incoming state and Bob's basis.
    to_wrong = rng.binomial(photons, leak)
    to_expected = photons - to_wrong
    count = np.empty((2, n), dtype=np.int64)
    at_expected_0 = expected == 0
    count[0] = np.where(at_expected_0, to_expected, to_wrong)
    count[1] = np.where(at_expected_0, to_wrong, to_expected)

    # Photon-driven clicks: P = 1 - (1 - eff)^k, then darks on top.
    photon_click = np.empty((2, n), dtype=bool)
    dark_click = np.empty((2, n), dtype=bool)
    for d, det in enumerate(detectors):
        eff = det.efficiency_at(offsets)
        p_click = 1.0 - np.power(1.0 - eff, count[d])
        photon_click[d] = rng.random(n) < p_click
        dark_click[d] = rng.random(n) < det.dark_count_prob
    would_click = photon_click | dark_click

    # Dead time: a click at gate g blinds the detector through
    # g + dead_time_gates; suppressed events do not extend the window.
    if any(det.dead_time_gates > 0 for det in detectors) and would_click.any():
        blocked = state.blocked_until
        dead = np.array([det.dead_time_gates for det in detectors], dtype=np.int64)
        cols = np.flatnonzero(would_click.any(axis=0))
        for i in cols:
            gate = start_gate + i
            for d in range(2):
                if would_click[d, i]:
                    if gate < blocked[d]:
                        would_click[d, i] = False
                    else:
                        blocked[d] = gate + 1 + dead[d]

    clicked = would_click.any(axis=0)
    double = would_click.all(axis=0)
    detector = np.full(n, -1, dtype=np.int8)
    only0 = would_click[0] & ~would_click[1]
    only1 = would_click[1] & ~would_click[0]
    detector[only0] = 0
    detector[only1] = 1
    if double.any():
        detector[double] = (rng.random(int(double.sum())) < 0.5).astype(np.int8)

    # cause: photon wins if any clicked detector saw a surviving photon
    photon_caused = (would_click & photon_click).any(axis=0)
    cause = np.zeros(n, dtype=np.int8)
    cause[clicked & photon_caused] = CAUSE_PHOTON
    cause[clicked & ~photon_caused] = CAUSE_DARK
    return {"clicked": clicked, "detector": detector, "double": double, "cause": cause}


def detect(
    arriving_photons: int,
    arrival_offset_ns: float,
    detectors: tuple[DetectorConfig, DetectorConfig],
    expected_detector: int,
    wrong_detector_leak: float,
    rng: np.random.Generator,
    *,
    pulse_index: int = 0,
    state: Optional[DetectorPairState] = None,
) -> DetectionEvent:
    """Detect a single gate; see :func:`detect_batch` for the model.

    ``state`` carries dead-time memory between gates belonging to one
    session (``pulse_index`` is the gate index); omit both for an
    isolated gate.  Double clicks are left unresolved here: detector_id
    is None until :func:`resolve_double_click` assigns the random bit.
    """
    out = detect_batch(
        np.array([arriving_photons]),
        np.array([arrival_offset_ns]),
        detectors,
        np.array([expected_detector]),
        np.array([wrong_detector_leak]),
        rng,
        start_gate=pulse_index,
        state=state,
    )
    double = bool(out["double"][0])
    det: Optional[int] = int(out["detector"][0])
    if det < 0 or double:
        det = None
    return DetectionEvent(
        pulse_index=pulse_index,
        clicked=bool(out["clicked"][0]),
        detector_id=det,
        double_click=double,
        cause=CAUSE_LABELS[int(out["cause"][0])],
    )


def resolve_double_click(event: DetectionEvent, rng: np.random.Generator) -> DetectionEvent:
    """Assign a uniformly random detector to a double-click event."""
    if not event.double_click:
        raise OpticsError("event is not a double click")
    return DetectionEvent(
        pulse_index=event.pulse_index,
        clicked=True,
        detector_id=int(rng.random() < 0.5),
        double_click=True,
        cause=event.cause,
    )
