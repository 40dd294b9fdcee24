"""Two-universal hash families used for privacy amplification.

Three families are provided, each addressed by a :class:`HashSeed` that
pins the family name, the input/output lengths, and the raw seed bits:

``toeplitz``
    The seed's ``n + s - 1`` bits fill the diagonals of an ``s x n``
    Toeplitz matrix ``T[i, j] = bits[i - j + n - 1]``.  Hashing is the
    matrix product over GF(2), evaluated here as an integer convolution.
``affine``
    The seed's ``s * n + s`` bits are a row-major ``s x n`` matrix ``M``
    followed by an offset vector ``c``; hashing computes ``M x + c``
    over GF(2).  Distinct inputs collide with probability exactly
    ``2**-s``, and the output is exactly uniform over the full family.
``balanced``
    The seed's ``n`` bits form one nonzero linear functional; the output
    is a single bit, so ``output_length`` must be 1.  The family has
    ``2**n - 1`` members and its collision probability is strictly
    below one half.

All bit vectors are numpy ``uint8`` arrays with values in {0, 1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

__all__ = [
    "FAMILIES",
    "HashingError",
    "HashSeed",
    "apply_seed",
    "enumerate_family",
    "family_size",
    "random_hash_seed",
    "seed_length",
    "toeplitz_matrix",
]

FAMILIES = ("toeplitz", "affine", "balanced")

ENUMERATION_CAP = 2**22


class HashingError(ValueError):
    """Raised for invalid seeds, lengths, or oversized enumerations."""


def seed_length(family, input_length, output_length):
    """Number of seed bits the family needs for the given dimensions.

    Parameters
    ----------
    family : str
        One of ``"toeplitz"``, ``"affine"``, ``"balanced"``.
    input_length : int
        Number of key bits hashed, ``n >= 1``.
    output_length : int
        Number of output bits, ``1 <= s <= n`` (``s == 1`` for the
        balanced family).

    Returns
    -------
    int
        Required length of the seed bit vector.
    """
    _check_dimensions(family, input_length, output_length)
    if family == "toeplitz":
        return input_length + output_length - 1
    if family == "affine":
        return output_length * input_length + output_length
    return input_length


def _check_dimensions(family, input_length, output_length):
    if family not in FAMILIES:
        raise HashingError(f"unknown hash family {family!r}")
    if input_length < 1:
        raise HashingError("input_length must be at least 1")
    if output_length < 1:
        raise HashingError("output_length must be at least 1")
    if output_length > input_length:
        raise HashingError("output_length cannot exceed input_length")
    if family == "balanced" and output_length != 1:
        raise HashingError("balanced family only supports output_length 1")


def _as_bits(values, name):
    bits = np.asarray(values, dtype=np.uint8)
    if bits.ndim != 1:
        raise HashingError(f"{name} must be a one-dimensional bit vector")
    if bits.size and bits.max() > 1:
        raise HashingError(f"{name} must contain only 0s and 1s")
    return bits


@dataclass(frozen=True)
class HashSeed:
    """One member of a two-universal family, fixed by its seed bits.

    Parameters
    ----------
    family : str
        Family name, one of :data:`FAMILIES`.
    input_length : int
        Number of input bits ``n``.
    output_length : int
        Number of output bits ``s``.
    bits : numpy.ndarray
        Seed bits of length :func:`seed_length`; stored read-only.
    """

    family: str
    input_length: int
    output_length: int
    bits: np.ndarray

    def __post_init__(self):
        expected = seed_length(self.family, self.input_length, self.output_length)
        bits = _as_bits(self.bits, "seed bits")
        if bits.size != expected:
            raise HashingError(
                f"{self.family} seed for n={self.input_length}, "
                f"s={self.output_length} needs {expected} bits, got {bits.size}"
            )
        if self.family == "balanced" and not bits.any():
            raise HashingError("balanced family excludes the zero functional")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)


def random_hash_seed(family, input_length, output_length, rng):
    """Draw a uniformly random member of the family.

    Parameters
    ----------
    family : str
        Family name.
    input_length, output_length : int
        Hash dimensions.
    rng : numpy.random.Generator
        Source of randomness.

    Returns
    -------
    HashSeed
    """
    length = seed_length(family, input_length, output_length)
    bits = rng.integers(0, 2, size=length, dtype=np.uint8)
    if family == "balanced":
        while not bits.any():
            bits = rng.integers(0, 2, size=length, dtype=np.uint8)
    return HashSeed(family, input_length, output_length, bits)


def toeplitz_matrix(seed):
    """Materialize the Toeplitz matrix addressed by a seed.

    Intended for small sizes and cross-checks; :func:`apply_seed` never
    builds this matrix.

    Returns
    -------
    numpy.ndarray
        The ``s x n`` binary matrix ``T[i, j] = bits[i - j + n - 1]``.
    """
    if seed.family != "toeplitz":
        raise HashingError("toeplitz_matrix requires a toeplitz seed")
    n = seed.input_length
    s = seed.output_length
    rows = np.arange(s)[:, None]
    cols = np.arange(n)[None, :]
    return seed.bits[rows - cols + n - 1]


def _toeplitz_apply(seed, bits):
    # T x over GF(2) is a slice of the integer convolution of the seed
    # with the input, because T[i, j] = seed[i - j + n - 1].
    n = seed.input_length
    s = seed.output_length
    full = convolve(
        seed.bits.astype(np.float64), bits.astype(np.float64), method="auto"
    )
    counts = np.rint(full)
    if np.max(np.abs(full - counts)) > 1e-6:
        full = convolve(
            seed.bits.astype(np.float64), bits.astype(np.float64), method="direct"
        )
        counts = np.rint(full)
    return (counts[n - 1 : n - 1 + s].astype(np.int64) & 1).astype(np.uint8)


def apply_seed(seed, key_bits):
    """Hash a bit vector with one family member.

    Parameters
    ----------
    seed : HashSeed
        The family member to apply.
    key_bits : array_like
        Input bits of length ``seed.input_length``.

    Returns
    -------
    numpy.ndarray
        Output bits of length ``seed.output_length``.
    """
    bits = _as_bits(key_bits, "key bits")
    if bits.size != seed.input_length:
        raise HashingError(
            f"seed expects {seed.input_length} input bits, got {bits.size}"
        )
    if seed.family == "toeplitz":
        return _toeplitz_apply(seed, bits)
    if seed.family == "affine":
        n = seed.input_length
        s = seed.output_length
        matrix = seed.bits[: s * n].reshape(s, n)
        offset = seed.bits[s * n :]
        return ((matrix.astype(np.int64) @ bits.astype(np.int64) + offset) & 1).astype(
            np.uint8
        )
    parity = int(seed.bits.astype(np.int64) @ bits.astype(np.int64)) & 1
    return np.array([parity], dtype=np.uint8)


def family_size(family, input_length, output_length):
    """Number of members in the family at the given dimensions."""
    length = seed_length(family, input_length, output_length)
    if family == "balanced":
        return 2**length - 1
    return 2**length


def enumerate_family(family, input_length, output_length):
    """List every member of a small family.

    Raises
    ------
    HashingError
        If the family holds more than ``2**22`` members.

    Returns
    -------
    list of HashSeed
    """
    size = family_size(family, input_length, output_length)
    if size > ENUMERATION_CAP:
        raise HashingError(
            f"family of {size} members exceeds the enumeration cap {ENUMERATION_CAP}"
        )
    length = seed_length(family, input_length, output_length)
    start = 1 if family == "balanced" else 0
    indices = np.arange(start, (2**length), dtype=np.uint64)
    shifts = np.arange(length - 1, -1, -1, dtype=np.uint64)
    table = ((indices[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return [
        HashSeed(family, input_length, output_length, row)
        for row in table
    ]
