"""One-time-pad encryption backed by distilled key material.

A :class:`PadLedger` wraps a block of shared secret bits and enforces
the discipline that makes the pad information-theoretically secure:
every bit is consumed at most once, consumption only moves forward, and
a segment can never be handed out twice.  :func:`otp_apply` performs
the XOR itself; because XOR is an involution the same call encrypts on
one side and decrypts on the other, as long as both ledgers consume in
the same order.

:func:`reuse_leakage` shows what breaks when the discipline is ignored:
two ciphertexts produced from one pad segment leak the XOR of the two
plaintexts, exactly and deterministically.

:func:`monobit_test` and :func:`runs_test` are frequency and runs
checks for pad material, mirroring the first two tests of the usual
statistical batteries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .postprocess import KeyMaterial, read_key_file, write_key_file

__all__ = [
    "OtpError",
    "PadExhaustedError",
    "PadLedger",
    "monobit_test",
    "otp_apply",
    "randomness_report",
    "reuse_leakage",
    "runs_test",
]

logger = logging.getLogger(__name__)


class OtpError(ValueError):
    """Raised for invalid pad operations, including reuse attempts."""


class PadExhaustedError(RuntimeError):
    """Raised when a request does not fit in the unconsumed pad."""


def _as_bits(values, name):
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim != 1:
        raise OtpError(f"{name} must be a one-dimensional bit array")
    if arr.size and arr.max() > 1:
        raise OtpError(f"{name} must contain only bits")
    return arr


@dataclass
class PadLedger:
    """Shared pad bits plus the consumption bookkeeping.

    Parameters
    ----------
    bits : numpy.ndarray
        The pad material (0/1 values).
    consumed_offset : int
        Index of the first unconsumed bit.  Only ever increases.
    auth_reserved_bits : int
        Bits held back at the end of the pad for message
        authentication; they are excluded from the spendable budget.
    """

    bits: np.ndarray
    consumed_offset: int = 0
    auth_reserved_bits: int = 0
    _history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.bits = _as_bits(self.bits, "pad bits")
        self.bits.setflags(write=False)
        if not 0 <= self.auth_reserved_bits <= self.bits.size:
            raise OtpError("auth_reserved_bits must fit inside the pad")
        if not 0 <= self.consumed_offset <= self.bits.size - self.auth_reserved_bits:
            raise OtpError("consumed_offset must lie inside the spendable pad")

    @classmethod
    def from_key_material(cls, key, auth_reserved_bits=0):
        """Open a ledger over a finished key.

        Only final-stage key material qualifies as pad: earlier stages
        still carry correlations with the eavesdropper or with
        disclosed parities.
        """
        if not isinstance(key, KeyMaterial):
            raise OtpError("from_key_material needs a KeyMaterial")
        if key.stage != "final":
            raise OtpError(
                f"pad material must be final-stage key, not {key.stage!r}"
            )
        return cls(key.alice_bits.copy(), auth_reserved_bits=auth_reserved_bits)

    @property
    def length(self):
        return int(self.bits.size)

    @property
    def remaining(self):
        """Spendable bits left (reserve excluded)."""
        return self.length - self.auth_reserved_bits - self.consumed_offset

    def consume(self, count):
        """Hand out the next ``count`` pad bits and advance the offset.

        Returns
        -------
        (numpy.ndarray, int)
            The segment and the offset it starts at.

        Raises
        ------
        PadExhaustedError
            If fewer than ``count`` spendable bits remain.
        """
        count = int(count)
        if count <= 0:
            raise OtpError("count must be positive")
        if count > self.remaining:
            raise PadExhaustedError(
                f"pad exhausted: {count} bits requested, {self.remaining} remain"
            )
        start = self.consumed_offset
        segment = self.bits[start:start + count]
        self.consumed_offset = start + count
        self._history.append((start, count))
        logger.debug("pad consume: offset %d, %d bits", start, count)
        return segment, start

    def save(self, path):
        """Persist pad bits and bookkeeping next to a key file."""
        return write_key_file(path, self.bits, metadata={
            "consumed_offset": str(self.consumed_offset),
            "auth_reserved_bits": str(self.auth_reserved_bits),
        })

    @classmethod
    def load(cls, path):
        """Restore a ledger saved by :meth:`save`."""
        bits, metadata = read_key_file(path)
        return cls(
            bits,
            consumed_offset=int(metadata.get("consumed_offset", "0")),
            auth_reserved_bits=int(metadata.get("auth_reserved_bits", "0")),
        )


def otp_apply(ledger, message_bits, offset=None):
    """XOR a message with the next pad segment.

    The same function encrypts and decrypts: applying it twice with two
    ledgers that consume in the same order returns the original
    message.  When ``offset`` is given it must equal the ledger's
    current position; anything else is either an attempt to reuse
    spent pad or a desynchronization, and both are refused.

    Parameters
    ----------
    ledger : PadLedger
    message_bits : array_like
        Bits to transform.
    offset : int, optional
        Expected pad position, for callers tracking it externally.

    Returns
    -------
    (numpy.ndarray, int)
        The transformed bits and the pad offset that was used.
    """
    message = _as_bits(message_bits, "message_bits")
    if message.size == 0:
        raise OtpError("message_bits must not be empty")
    if offset is not None and int(offset) != ledger.consumed_offset:
        raise OtpError(
            f"pad offset {int(offset)} is not the ledger position "
            f"{ledger.consumed_offset}; refusing to reuse or skip pad"
        )
    segment, start = ledger.consume(message.size)
    return message ^ segment, start


def reuse_leakage(cipher_one, cipher_two):
    """What an eavesdropper learns from two ciphertexts sharing a pad.

    XORing the ciphertexts cancels the pad and returns the XOR of the
    two plaintexts, bit for bit.  This is the whole case against pad
    reuse: no cryptanalysis is involved, the leak is an identity.
    """
    c1 = _as_bits(cipher_one, "cipher_one")
    c2 = _as_bits(cipher_two, "cipher_two")
    if c1.size != c2.size:
        raise OtpError("ciphertexts must have equal length")
    return c1 ^ c2


def monobit_test(bits):
    """Frequency test p-value: are ones and zeros balanced?

    Under the null hypothesis of independent fair bits the normalized
    excess of ones is standard normal; the p-value is two-sided.
    """
    arr = _as_bits(bits, "bits")
    if arr.size == 0:
        raise OtpError("bits must not be empty")
    excess = 2.0 * float(np.count_nonzero(arr)) - arr.size
    statistic = abs(excess) / math.sqrt(arr.size)
    return math.erfc(statistic / math.sqrt(2.0))


def runs_test(bits):
    """Runs test p-value: does the sequence alternate plausibly?

    Counts maximal runs of equal bits and compares with the expectation
    for independent bits at the observed ones-fraction.  Returns 0.0
    when the ones-fraction is already too far from 1/2 for the run
    count to be meaningful.
    """
    arr = _as_bits(bits, "bits")
    if arr.size < 2:
        raise OtpError("runs_test needs at least two bits")
    n = arr.size
    pi = float(np.mean(arr))
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    runs = 1 + int(np.count_nonzero(arr[1:] != arr[:-1]))
    expected = 2.0 * n * pi * (1.0 - pi)
    statistic = abs(runs - expected) / (2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi))
    return math.erfc(statistic / math.sqrt(2.0))


def randomness_report(bits, significance=0.001):
    """Run both pad-quality checks and report the verdict.

    Returns
    -------
    dict
        ``monobit_p``, ``runs_p``, ``significance``, and ``passed``
        (true when both p-values clear the significance level).
    """
    if not 0.0 < significance < 1.0:
        raise OtpError("significance must lie in (0, 1)")
    monobit_p = monobit_test(bits)
    runs_p = runs_test(bits)
    return {
        "monobit_p": monobit_p,
        "runs_p": runs_p,
        "significance": significance,
        "passed": bool(monobit_p >= significance and runs_p >= significance),
    }
