"""Experiment configuration: the TOML schema and its object builder.

One TOML file describes one experiment end to end: protocol choices,
optional decoy intensity classes, source, channel, detector pair,
optional attack, postprocessing policy, and an optional sweep
definition.  :func:`load_config` parses and validates a file;
:func:`build_config` does the same for an in-memory mapping.  Unknown
keys and type mismatches are reported with their dotted path so a typo
in a config file points at itself.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .attacks import AttackError, make_attack
from .optics import (
    ChannelConfig,
    DetectorConfig,
    OpticsError,
    SourceConfig,
    mismatched_curves,
)
from .protocols import DecoyConfig, ProtocolConfig, ProtocolError

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PostprocessConfig",
    "SWEEP_AXES",
    "SweepConfig",
    "build_config",
    "load_config",
]

logger = logging.getLogger(__name__)

SWEEP_AXES = (
    "channel.length_km",
    "channel.excess_transmittance_override",
    "source.mean_photon_number",
    "protocol.pulse_count",
    "attack.fraction",
)

_MISSING = object()


class ConfigError(ValueError):
    """Raised for unparseable, unknown, or inconsistent configuration."""


@dataclass(frozen=True)
class PostprocessConfig:
    """Classical postprocessing policy for a run.

    ``mode`` selects the single-photon accounting: ``"decoy"`` uses the
    decoy-state bounds, ``"non-decoy"`` the worst-case multi-photon
    assumption, and ``"auto"`` picks by whether decoy classes are
    configured.  ``security_epsilon`` sets the composable failure
    budget; the final key is shortened by ``2*log2(1/security_epsilon)``
    bits beyond the entropy and leakage terms.
    """

    mode: str = "auto"
    error_correction_efficiency: float = 1.2
    confidence_sigmas: float = 5.0
    hash_family: str = "toeplitz"
    b_step: bool = False
    noise_rate: float = 0.0
    security_epsilon: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("auto", "decoy", "non-decoy"):
            raise ConfigError(f"postprocess.mode {self.mode!r} is not recognized")
        if self.error_correction_efficiency < 1.0:
            raise ConfigError(
                "postprocess.error_correction_efficiency must be at least 1"
            )
        if self.confidence_sigmas < 0.0:
            raise ConfigError("postprocess.confidence_sigmas must be non-negative")
        if self.hash_family not in ("toeplitz", "affine"):
            raise ConfigError(
                "postprocess.hash_family must be 'toeplitz' or 'affine'"
            )
        if not 0.0 <= self.noise_rate < 0.5:
            raise ConfigError("postprocess.noise_rate must lie in [0, 0.5)")
        if not 0.0 < self.security_epsilon < 1.0:
            raise ConfigError(
                "postprocess.security_epsilon must lie in (0, 1)"
            )

    def resolved_mode(self, decoy):
        if self.mode == "auto":
            return "decoy" if decoy is not None else "non-decoy"
        return self.mode


@dataclass(frozen=True)
class SweepConfig:
    """One swept axis with its point values."""

    axis: str
    values: tuple
    adapt_signal_mean: bool = False

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(
                f"sweep.axis {self.axis!r} is not sweepable; choose one of "
                + ", ".join(SWEEP_AXES)
            )
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ConfigError("sweep.values must not be empty")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, fully constructed and validated."""

    protocol: ProtocolConfig
    source: SourceConfig
    channel: ChannelConfig
    detectors: tuple
    seed: int
    repetitions: int = 1
    decoy: DecoyConfig | None = None
    attack: object = None
    postprocess: PostprocessConfig = PostprocessConfig()
    sweep: SweepConfig | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def with_axis_value(self, axis, value):
        """Copy of the config with one swept axis set to ``value``."""
        if axis == "channel.length_km":
            channel = dataclasses.replace(self.channel, length_km=float(value))
            return dataclasses.replace(self, channel=channel)
        if axis == "channel.excess_transmittance_override":
            channel = dataclasses.replace(
                self.channel, excess_transmittance_override=float(value))
            return dataclasses.replace(self, channel=channel)
        if axis == "source.mean_photon_number":
            if self.decoy is not None:
                raise ConfigError(
                    "sweeping source.mean_photon_number would desynchronize "
                    "the decoy signal class; sweep the channel instead"
                )
            source = dataclasses.replace(
                self.source, mean_photon_number=float(value))
            return dataclasses.replace(self, source=source)
        if axis == "protocol.pulse_count":
            protocol = dataclasses.replace(self.protocol, pulse_count=int(value))
            return dataclasses.replace(self, protocol=protocol)
        if axis == "attack.fraction":
            if self.attack is None:
                raise ConfigError("attack.fraction needs an [attack] section")
            attack = dataclasses.replace(self.attack, fraction=float(value))
            return dataclasses.replace(self, attack=attack)
        raise ConfigError(f"axis {axis!r} is not sweepable")

    def with_signal_mean(self, mean):
        """Copy with the source mean replaced (non-decoy tuning)."""
        if self.decoy is not None:
            raise ConfigError("cannot retune the signal mean under decoy classes")
        source = dataclasses.replace(self.source, mean_photon_number=float(mean))
        return dataclasses.replace(self, source=source)


def _check_keys(mapping, allowed, path):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown configuration key {where!r}")


def _get(mapping, key, path, kinds, default=_MISSING):
    if key not in mapping:
        if default is _MISSING:
            raise ConfigError(f"missing required key {path}.{key}" if path
                              else f"missing required key {key}")
        return default
    value = mapping[key]
    if kinds is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}.{key} must be a boolean")
        return value
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}.{key} must be an integer")
        return value
    if kinds is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}.{key} must be a number")
        return float(value)
    if kinds is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}.{key} must be a string")
        return value
    raise AssertionError(f"unsupported kind {kinds}")


def _build_protocol(data):
    allowed = ("variant", "encoding", "basis_bias", "test_fraction",
               "abort_qber", "pulse_count", "entanglement_source")
    _check_keys(data, allowed, "protocol")
    kwargs = {}
    for key, kind in (("variant", str), ("encoding", str), ("basis_bias", float),
                      ("test_fraction", float), ("abort_qber", float),
                      ("pulse_count", int), ("entanglement_source", str)):
        value = _get(data, key, "protocol", kind, default=None)
        if value is not None:
            kwargs[key] = value
    try:
        return ProtocolConfig(**kwargs)
    except ProtocolError as exc:
        raise ConfigError(f"protocol: {exc}") from exc


def _build_decoy(data):
    _check_keys(data, ("classes", "signal_label"), "decoy")
    classes = data.get("classes")
    if not isinstance(classes, list) or not classes:
        raise ConfigError("decoy.classes must be a non-empty list of "
                          "[label, mean, probability] triples")
    triples = []
    for i, entry in enumerate(classes):
        if not isinstance(entry, list) or len(entry) != 3:
            raise ConfigError(
                f"decoy.classes[{i}] must be a [label, mean, probability] triple")
        label, mean, prob = entry
        if not isinstance(label, str):
            raise ConfigError(f"decoy.classes[{i}] label must be a string")
        triples.append((label, float(mean), float(prob)))
    signal = _get(data, "signal_label", "decoy", str, default="signal")
    try:
        return DecoyConfig(tuple(triples), signal)
    except ProtocolError as exc:
        raise ConfigError(f"decoy: {exc}") from exc


def _build_source(data):
    _check_keys(data, ("kind", "mean_photon_number"), "source")
    kind = _get(data, "kind", "source", str, default="weak-coherent")
    mean = _get(data, "mean_photon_number", "source", float, default=0.5)
    try:
        return SourceConfig(kind=kind, mean_photon_number=mean)
    except OpticsError as exc:
        raise ConfigError(f"source: {exc}") from exc


def _build_channel(data):
    allowed = ("length_km", "loss_db_per_km", "excess_transmittance_override")
    _check_keys(data, allowed, "channel")
    kwargs = {
        "length_km": _get(data, "length_km", "channel", float, default=0.0),
        "loss_db_per_km": _get(data, "loss_db_per_km", "channel", float,
                               default=0.21),
    }
    override = _get(data, "excess_transmittance_override", "channel", float,
                    default=None)
    if override is not None:
        kwargs["excess_transmittance_override"] = override
    try:
        return ChannelConfig(**kwargs)
    except OpticsError as exc:
        raise ConfigError(f"channel: {exc}") from exc


def _build_detectors(data):
    allowed = ("base_efficiency", "dark_count_prob", "dead_time_gates",
               "gated", "mismatch", "mismatch_strong", "mismatch_weak")
    _check_keys(data, allowed, "detectors")
    base = {
        "base_efficiency": _get(data, "base_efficiency", "detectors", float,
                                default=0.1),
        "dark_count_prob": _get(data, "dark_count_prob", "detectors", float,
                                default=1e-5),
        "dead_time_gates": _get(data, "dead_time_gates", "detectors", int,
                                default=0),
        "gated": _get(data, "gated", "detectors", bool, default=True),
    }
    mismatch = _get(data, "mismatch", "detectors", bool, default=False)
    strong = _get(data, "mismatch_strong", "detectors", float, default=0.5)
    weak = _get(data, "mismatch_weak", "detectors", float, default=0.05)
    try:
        if mismatch:
            early, late = mismatched_curves(strong=strong, weak=weak)
            return (DetectorConfig(efficiency_curve=early, **base),
                    DetectorConfig(efficiency_curve=late, **base))
        pair = DetectorConfig(**base)
        return (pair, DetectorConfig(**base))
    except OpticsError as exc:
        raise ConfigError(f"detectors: {exc}") from exc


def _build_attack(data):
    if "kind" not in data:
        raise ConfigError("attack section needs a 'kind' key")
    kind = _get(data, "kind", "attack", str)
    parameters = {k: v for k, v in data.items() if k != "kind"}
    try:
        return make_attack(kind, **parameters)
    except (AttackError, TypeError) as exc:
        raise ConfigError(f"attack: {exc}") from exc


def _build_postprocess(data):
    allowed = ("mode", "error_correction_efficiency", "confidence_sigmas",
               "hash_family", "b_step", "noise_rate", "security_epsilon")
    _check_keys(data, allowed, "postprocess")
    return PostprocessConfig(
        mode=_get(data, "mode", "postprocess", str, default="auto"),
        error_correction_efficiency=_get(
            data, "error_correction_efficiency", "postprocess", float,
            default=1.2),
        confidence_sigmas=_get(data, "confidence_sigmas", "postprocess", float,
                               default=5.0),
        hash_family=_get(data, "hash_family", "postprocess", str,
                         default="toeplitz"),
        b_step=_get(data, "b_step", "postprocess", bool, default=False),
        noise_rate=_get(data, "noise_rate", "postprocess", float, default=0.0),
        security_epsilon=_get(data, "security_epsilon", "postprocess", float,
                              default=1e-6),
    )


def _build_sweep(data):
    _check_keys(data, ("axis", "values", "adapt_signal_mean"), "sweep")
    axis = _get(data, "axis", "sweep", str)
    values = data.get("values")
    if not isinstance(values, list):
        raise ConfigError("sweep.values must be a list of numbers")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("sweep.values must be a list of numbers")
    adapt = _get(data, "adapt_signal_mean", "sweep", bool, default=False)
    return SweepConfig(axis=axis, values=tuple(values), adapt_signal_mean=adapt)


def build_config(data):
    """Construct an :class:`ExperimentConfig` from a parsed mapping.

    Raises
    ------
    ConfigError
        On unknown keys, type mismatches, or combinations the simulator
        cannot run, with the offending dotted path in the message.
    """
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a table")
    top = ("seed", "repetitions", "protocol", "decoy", "source", "channel",
           "detectors", "attack", "postprocess", "sweep")
    _check_keys(data, top, "")
    for section in top[2:]:
        if section in data and not isinstance(data[section], dict):
            raise ConfigError(f"{section} must be a table")
    if "protocol" not in data:
        raise ConfigError("missing required section [protocol]")

    seed = _get(data, "seed", "", int)
    repetitions = _get(data, "repetitions", "", int, default=1)
    protocol = _build_protocol(data["protocol"])
    decoy = _build_decoy(data["decoy"]) if "decoy" in data else None
    source = _build_source(data.get("source", {}))
    channel = _build_channel(data.get("channel", {}))
    detectors = _build_detectors(data.get("detectors", {}))
    attack = _build_attack(data["attack"]) if "attack" in data else None
    postprocess = _build_postprocess(data.get("postprocess", {}))
    sweep = _build_sweep(data["sweep"]) if "sweep" in data else None

    if postprocess.mode == "decoy" and decoy is None:
        raise ConfigError(
            "postprocess.mode = 'decoy' needs a [decoy] section")
    if sweep is not None and sweep.adapt_signal_mean and decoy is not None:
        raise ConfigError(
            "sweep.adapt_signal_mean cannot retune the mean under decoy "
            "classes; drop the [decoy] section or the flag")
    if decoy is not None and abs(
            decoy.signal.mean_photon_number - source.mean_photon_number) > 1e-9:
        raise ConfigError(
            f"decoy signal mean {decoy.signal.mean_photon_number} disagrees "
            f"with source.mean_photon_number {source.mean_photon_number}")

    config = ExperimentConfig(
        protocol=protocol,
        source=source,
        channel=channel,
        detectors=detectors,
        seed=seed,
        repetitions=repetitions,
        decoy=decoy,
        attack=attack,
        postprocess=postprocess,
        sweep=sweep,
    )
    logger.debug("configuration built: %s, %d pulses, seed %d",
                 protocol.variant, protocol.pulse_count, seed)
    return config


def load_config(path):
    """Parse a TOML file into an :class:`ExperimentConfig`."""
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build_config(data)
