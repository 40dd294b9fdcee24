"""Classical post-processing for sifted keys.

The pipeline stages covered here take a pair of correlated bit strings
from sifting to a final secret key:

1. advantage distillation (:func:`b_step`) halves the key and squares
   the error rate by keeping one bit of each parity-agreeing pair,
2. interactive reconciliation (:func:`reconcile`) removes remaining
   disagreements with a Cascade-style parity exchange over a
   :class:`ParityChannel` that counts every bit Alice discloses,
3. privacy amplification (:func:`privacy_amplify`) compresses the
   reconciled key with a two-universal hash.

Security-analysis tools live alongside the pipeline stages: the
leftover-hash distance bound (:func:`rk_bound`), an exact brute-force
evaluation of the hashed cq-state distance (:func:`pa_distance_bruteforce`),
and twisted maximally entangled key states
(:func:`make_private_state` / :func:`check_private_state`).
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hashing import HashSeed, apply_seed, enumerate_family
from .qsim import CqState, QuantumState, mixed_state, pure_state

__all__ = [
    "KeyMaterial",
    "ParityChannel",
    "PostprocessError",
    "ReconciliationError",
    "STAGES",
    "add_noise",
    "b_step",
    "check_private_state",
    "finalize_key",
    "make_private_state",
    "pa_distance_bruteforce",
    "privacy_amplify",
    "read_key_file",
    "reconcile",
    "rk_bound",
    "write_key_file",
]

logger = logging.getLogger(__name__)

STAGES = ("raw", "preprocessed", "reconciled", "final")

VERIFICATION_ROUNDS = 64
BASE_PASSES = 4
MAX_CONFIRM_CORRECTIONS = 1024
RECONCILE_MAX_ERROR_RATE = 0.15


class PostprocessError(ValueError):
    """Raised for invalid post-processing inputs."""


class ReconciliationError(RuntimeError):
    """Raised when reconciliation cannot complete: the input error rate
    is out of range or verification still fails at the pass limit."""


def _as_bits(values, name):
    bits = np.asarray(values, dtype=np.uint8)
    if bits.ndim != 1:
        raise PostprocessError(f"{name} must be a one-dimensional bit vector")
    if bits.size and bits.max() > 1:
        raise PostprocessError(f"{name} must contain only 0s and 1s")
    return bits


@dataclass(frozen=True)
class KeyMaterial:
    """A correlated key pair at one stage of post-processing.

    Parameters
    ----------
    alice_bits, bob_bits : numpy.ndarray
        The two sides of the key; stored read-only.
    stage : str
        One of ``"raw"``, ``"preprocessed"``, ``"reconciled"``,
        ``"final"``.  The two sides must have equal length at the
        reconciled and final stages.
    leakage_bits : float
        Total number of key-dependent bits disclosed publicly so far.
        Pipeline stages only ever increase it.
    eve_known_fraction : float
        Fraction of sifted positions where an attack left Eve with
        certain knowledge of Alice's bit.
    """

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    stage: str = "raw"
    leakage_bits: float = 0.0
    eve_known_fraction: float = 0.0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise PostprocessError(f"unknown stage {self.stage!r}")
        alice = _as_bits(self.alice_bits, "alice_bits").copy()
        bob = _as_bits(self.bob_bits, "bob_bits").copy()
        if self.stage in ("reconciled", "final") and alice.size != bob.size:
            raise PostprocessError(
                f"stage {self.stage!r} requires equal key lengths, "
                f"got {alice.size} and {bob.size}"
            )
        if self.leakage_bits < 0:
            raise PostprocessError("leakage_bits cannot be negative")
        if not 0.0 <= self.eve_known_fraction <= 1.0:
            raise PostprocessError("eve_known_fraction must lie in [0, 1]")
        alice.setflags(write=False)
        bob.setflags(write=False)
        object.__setattr__(self, "alice_bits", alice)
        object.__setattr__(self, "bob_bits", bob)

    @property
    def length(self):
        """Length of Alice's side of the key."""
        return int(self.alice_bits.size)

    @property
    def error_rate(self):
        """Fraction of positions where the two sides disagree.

        Requires equal lengths; an empty key has error rate 0.
        """
        if self.alice_bits.size != self.bob_bits.size:
            raise PostprocessError("error rate requires equal key lengths")
        if self.alice_bits.size == 0:
            return 0.0
        return float(np.mean(self.alice_bits != self.bob_bits))

    def drop(self, indices):
        """Return a copy with the given positions removed from both sides.

        Used to discard disclosed test bits.  Both sides must have equal
        length; stage and accounting fields are carried over.
        """
        if self.alice_bits.size != self.bob_bits.size:
            raise PostprocessError("drop requires equal key lengths")
        idx = np.asarray(indices, dtype=np.int64)
        keep = np.ones(self.alice_bits.size, dtype=bool)
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.alice_bits.size:
                raise PostprocessError("drop indices out of range")
            keep[idx] = False
        return KeyMaterial(
            self.alice_bits[keep],
            self.bob_bits[keep],
            self.stage,
            self.leakage_bits,
            self.eve_known_fraction,
        )


def add_noise(alice, noise_rate, rng):
    """Pair a reference key with an independently flipped copy.

    Each bit of the copy is flipped with probability ``noise_rate``,
    which must satisfy ``0 <= noise_rate < 0.5``.  Useful for driving
    the error-correction stages with a known error rate.

    Parameters
    ----------
    alice : array_like or KeyMaterial
        Reference bits; for :class:`KeyMaterial` input the alice side is
        used.
    noise_rate : float
        Per-bit flip probability of the returned bob side.
    rng : numpy.random.Generator

    Returns
    -------
    KeyMaterial
        A raw-stage pair whose bob side is the noisy copy.
    """
    if not 0.0 <= noise_rate < 0.5:
        raise PostprocessError(f"noise_rate must lie in [0, 0.5), got {noise_rate!r}")
    bits = alice.alice_bits if isinstance(alice, KeyMaterial) else _as_bits(alice, "alice")
    flips = (rng.random(bits.size) < noise_rate).astype(np.uint8)
    return KeyMaterial(bits, bits ^ flips, "raw")


def b_step(alice, bob=None, permutation=None):
    """One advantage-distillation round over announced pair parities.

    Both strings are reordered by ``permutation``, grouped into
    consecutive pairs, and the pair parities are compared over the
    public channel (one disclosed bit per pair).  Pairs with matching
    parities keep their first bit; the rest are discarded, as is a
    trailing unpaired bit when the length is odd.  An input error rate
    ``p`` leaves the kept bits with error rate ``p^2 / (p^2 + (1-p)^2)``
    at roughly half the length.

    Parameters
    ----------
    alice : array_like or KeyMaterial
        Alice's bits, or a key pair (then ``bob`` must be omitted and
        leakage accounting carries over).
    bob : array_like, optional
        Bob's bits when ``alice`` is an array.
    permutation : array_like, optional
        A permutation of ``range(n)`` applied to both strings before
        pairing; defaults to the identity.

    Returns
    -------
    (KeyMaterial, float)
        The preprocessed-stage pair and the kept fraction
        ``output_length / input_length``.
    """
    if isinstance(alice, KeyMaterial):
        if bob is not None:
            raise PostprocessError("pass either a KeyMaterial or two bit arrays")
        a = alice.alice_bits
        b = alice.bob_bits
        base_leakage = alice.leakage_bits
        known = alice.eve_known_fraction
    else:
        a = _as_bits(alice, "alice")
        b = _as_bits(bob, "bob")
        base_leakage = 0.0
        known = 0.0
    if a.size != b.size:
        raise PostprocessError("b_step requires equal key lengths")
    n = a.size
    if n < 2:
        raise PostprocessError("b_step needs at least two bits")
    if permutation is None:
        perm = np.arange(n)
    else:
        perm = np.asarray(permutation, dtype=np.int64)
        if perm.size != n or not np.array_equal(np.sort(perm), np.arange(n)):
            raise PostprocessError("permutation must reorder range(n) exactly")
    pairs = n // 2
    ap = a[perm][: 2 * pairs].reshape(pairs, 2)
    bp = b[perm][: 2 * pairs].reshape(pairs, 2)
    agree = (ap[:, 0] ^ ap[:, 1]) == (bp[:, 0] ^ bp[:, 1])
    kept = KeyMaterial(
        ap[agree, 0],
        bp[agree, 0],
        "preprocessed",
        base_leakage + pairs,
        known,
    )
    return kept, kept.length / n


class ParityChannel:
    """Authenticated public channel used during reconciliation.

    The channel draws all public randomness (block permutations and
    verification masks) from its generator and counts every parity bit
    Alice discloses.  A parity that was already announced for the same
    block is public knowledge, so asking again is free; the counter
    only grows for fresh announcements.
    """

    def __init__(self, rng):
        self.rng = rng
        self.disclosed_bits = 0
        self._answers = {}
        self._mask_counter = 0

    def permutation(self, n):
        """Public random reordering for one Cascade pass."""
        return self.rng.permutation(n)

    def verification_mask(self, n):
        """Fresh random subset (each index with probability 1/2)."""
        self._mask_counter += 1
        return self.rng.integers(0, 2, size=n, dtype=np.uint8).astype(bool)

    @property
    def mask_counter(self):
        return self._mask_counter

    def alice_parity(self, key, value):
        """Record Alice's announcement of ``value`` for block ``key``.

        Returns the announced bit; repeated keys return the cached
        announcement without growing the disclosure count.
        """
        cached = self._answers.get(key)
        if cached is not None:
            return cached
        value = int(value) & 1
        self._answers[key] = value
        self.disclosed_bits += 1
        return value


def _parity(bits, idx):
    if len(idx) == 0:
        return 0
    return int(np.bitwise_xor.reduce(bits[idx]))


def _verify(a, b, channel, n):
    """Compare random-subset parities; True when 64 rounds all match."""
    for _ in range(VERIFICATION_ROUNDS):
        mask = channel.verification_mask(n)
        pa = channel.alice_parity(
            ("verify", channel.mask_counter),
            int(np.bitwise_xor.reduce(a[mask])) if mask.any() else 0,
        )
        pb = int(np.bitwise_xor.reduce(b[mask])) if mask.any() else 0
        if pa != pb:
            return False
    return True


def reconcile(alice, bob=None, channel=None):
    """Correct Bob's key onto Alice's with a Cascade parity exchange.

    The protocol first runs 64 random-subset verification parities; if
    they all match the keys are accepted as identical.  Otherwise it
    runs Cascade: four passes of block parities with doubling block
    size (the first block size is ``ceil(0.73 / error_rate)``, and
    every pass keeps at least two blocks so an even number of shared
    errors cannot hide inside a single whole-key block), binary search
    inside every mismatching block, and back-tracking re-checks of
    every earlier block that contained a corrected bit.  A corrective
    confirmation stage follows: random-subset parities are exchanged,
    and a mismatching subset is bisected exactly like a block, flipping
    the located bit and back-tracking through all four passes.  The
    keys are accepted once 64 consecutive subsets match, so a surviving
    undetected error slips through with probability ``2**-64``.

    Parameters
    ----------
    alice : array_like or KeyMaterial
        Alice's bits, or a key pair (``bob`` omitted).
    bob : array_like, optional
        Bob's bits when ``alice`` is an array.
    channel : ParityChannel
        Supplies public randomness and counts Alice's disclosures.

    Returns
    -------
    KeyMaterial
        Reconciled-stage pair with ``leakage_bits`` grown by the number
        of parity bits Alice disclosed during this exchange.

    Raises
    ------
    ReconciliationError
        If the measured error rate is 0.15 or more, or the confirmation
        stage exceeds its correction budget without converging.
    """
    if isinstance(bob, ParityChannel) and channel is None:
        channel, bob = bob, None
    if isinstance(alice, KeyMaterial):
        if bob is not None:
            raise PostprocessError("pass either a KeyMaterial or two bit arrays")
        a = alice.alice_bits.copy()
        b = alice.bob_bits.copy()
        base_leakage = alice.leakage_bits
        known = alice.eve_known_fraction
    else:
        a = _as_bits(alice, "alice").copy()
        b = _as_bits(bob, "bob").copy()
        base_leakage = 0.0
        known = 0.0
    if channel is None:
        raise PostprocessError("reconcile requires a ParityChannel")
    n = a.size
    if n == 0 or b.size != n:
        raise PostprocessError("reconcile requires two equal nonempty keys")

    qber = float(np.mean(a != b))
    if qber >= RECONCILE_MAX_ERROR_RATE:
        raise ReconciliationError(
            f"error rate {qber:.4f} is at or above {RECONCILE_MAX_ERROR_RATE}"
        )
    start = channel.disclosed_bits

    def result():
        leaked = channel.disclosed_bits - start
        logger.debug("reconcile done: n=%d qber=%.5f leaked=%d", n, qber, leaked)
        return KeyMaterial(a, b, "reconciled", base_leakage + leaked, known)

    if _verify(a, b, channel, n):
        return result()

    half = max(1, n // 2)
    passes = []
    queue = deque()

    def flip(target, origin):
        b[target] ^= 1
        for other, info in enumerate(passes):
            if other != origin:
                queue.append((other, int(info["inv"][target]) // info["k"]))

    def check_block(pass_idx, block_idx):
        info = passes[pass_idx]
        lo = block_idx * info["k"]
        hi = min(lo + info["k"], n)
        seg = info["perm"][lo:hi]
        pa = channel.alice_parity(("block", pass_idx, lo, hi), _parity(a, seg))
        if pa != _parity(b, seg):
            bisect(pass_idx, lo, hi)

    def bisect(pass_idx, lo, hi):
        perm = passes[pass_idx]["perm"]
        while hi - lo > 1:
            mid = (lo + hi) // 2
            seg = perm[lo:mid]
            pa = channel.alice_parity(("block", pass_idx, lo, mid), _parity(a, seg))
            if pa != _parity(b, seg):
                hi = mid
            else:
                lo = mid
        flip(int(perm[lo]), pass_idx)

    def drain():
        while queue:
            check_block(*queue.popleft())

    k = min(half, max(1, math.ceil(0.73 / qber)))
    for pass_idx in range(BASE_PASSES):
        perm = np.arange(n) if pass_idx == 0 else channel.permutation(n)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        passes.append({"perm": perm, "inv": inv, "k": k})
        for block_idx in range(math.ceil(n / k)):
            check_block(pass_idx, block_idx)
            drain()
        k = min(half, 2 * k)

    clean = 0
    corrections = 0
    while clean < VERIFICATION_ROUNDS:
        mask = channel.verification_mask(n)
        mask_id = channel.mask_counter
        idx = np.flatnonzero(mask)
        pa = channel.alice_parity(("confirm", mask_id, 0, int(idx.size)), _parity(a, idx))
        if pa == _parity(b, idx):
            clean += 1
            continue
        lo, hi = 0, int(idx.size)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            seg = idx[lo:mid]
            pa = channel.alice_parity(("confirm", mask_id, lo, mid), _parity(a, seg))
            if pa != _parity(b, seg):
                hi = mid
            else:
                lo = mid
        flip(int(idx[lo]), None)
        drain()
        corrections += 1
        clean = 0
        if corrections >= MAX_CONFIRM_CORRECTIONS:
            raise ReconciliationError(
                f"confirmation stage exceeded {MAX_CONFIRM_CORRECTIONS} corrections"
            )
    return result()


def privacy_amplify(key, hash_seed):
    """Compress a key with one member of a two-universal family.

    Parameters
    ----------
    key : array_like or KeyMaterial
        Bits to hash; for :class:`KeyMaterial` input the alice side is
        hashed (call once per side, or use :func:`finalize_key`).
    hash_seed : HashSeed
        The family member; its input length must match the key length.

    Returns
    -------
    numpy.ndarray
        The hashed bits, length ``hash_seed.output_length``.
    """
    if not isinstance(hash_seed, HashSeed):
        raise PostprocessError("hash_seed must be a HashSeed")
    bits = key.alice_bits if isinstance(key, KeyMaterial) else _as_bits(key, "key")
    return apply_seed(hash_seed, bits)


def finalize_key(key, hash_seed):
    """Hash both sides of a reconciled pair into a final-stage key."""
    if not isinstance(key, KeyMaterial):
        raise PostprocessError("finalize_key requires a KeyMaterial")
    if key.stage != "reconciled":
        raise PostprocessError("finalize_key requires a reconciled key")
    return KeyMaterial(
        apply_seed(hash_seed, key.alice_bits),
        apply_seed(hash_seed, key.bob_bits),
        "final",
        key.leakage_bits,
        key.eve_known_fraction,
    )


def rk_bound(s2_joint, s0_eve, s):
    """Leftover-hash bound on the hashed key's distance from ideal.

    For a cq-state with joint collision entropy ``s2_joint`` and Eve
    support size ``2**s0_eve``, hashing the classical register to ``s``
    bits with a two-universal family leaves an expected trace distance
    from uniform-and-independent of at most

        (1/2) * 2**(-(s2_joint - s0_eve - s) / 2).

    The bound is returned as stated, without clamping; it is vacuous
    (above 1) when the exponent turns positive.  Every two bits of
    entropy slack halve it.
    """
    if s < 0:
        raise PostprocessError("output length s cannot be negative")
    return 0.5 * 2.0 ** (-(float(s2_joint) - float(s0_eve) - float(s)) / 2.0)


def pa_distance_bruteforce(cq, family, s):
    """Exact family-averaged distance of a hashed cq-state from ideal.

    For every member of the hash family, the classical register of
    ``cq`` is hashed to ``s`` bits and the trace distance of the result
    from (uniform s bits) x (Eve marginal) is evaluated exactly from
    the spectrum; the mean over the family is returned.  This is the
    quantity :func:`rk_bound` upper-bounds.

    Only small systems are feasible: all ``2**s`` output blocks are
    diagonalized for each family member, and the family itself is
    enumerated (members are capped at ``2**22``).

    Parameters
    ----------
    cq : CqState
        Ensemble whose labels are fixed-length bit strings.
    family : str
        Hash family name.
    s : int
        Output length in bits.

    Returns
    -------
    float
    """
    if not isinstance(cq, CqState):
        raise PostprocessError("cq must be a CqState")
    labels = [z for z, _, _ in cq.outcomes]
    n = len(labels[0])
    if any(len(z) != n or set(z) - {"0", "1"} for z in labels):
        raise PostprocessError("cq labels must be fixed-length bit strings")
    members = enumerate_family(family, n, int(s))
    d = cq.eve_dim
    probs = np.array([p for _, p, _ in cq.outcomes])
    rhos = np.stack([rho.density() for _, _, rho in cq.outcomes])
    eve = np.tensordot(probs, rhos, axes=1)
    inputs = np.array([[int(c) for c in z] for z in labels], dtype=np.uint8)

    out_dim = 2**int(s)
    weights = 2.0 ** np.arange(int(s) - 1, -1, -1)
    diffs = np.empty((len(members), out_dim, d, d), dtype=np.complex128)
    for mi, member in enumerate(members):
        blocks = np.broadcast_to(-eve / out_dim, (out_dim, d, d)).copy()
        for x in range(len(labels)):
            z = int(apply_seed(member, inputs[x]) @ weights)
            blocks[z] += probs[x] * rhos[x]
        diffs[mi] = blocks
    eigs = np.linalg.eigvalsh(diffs.reshape(-1, d, d))
    per_member = 0.5 * np.abs(eigs).sum(axis=1).reshape(len(members), out_dim).sum(axis=1)
    return float(per_member.mean())


def _shield_state(shield):
    if shield is None:
        return np.ones((1, 1), dtype=np.complex128), (1,)
    if isinstance(shield, QuantumState):
        return shield.density(), tuple(shield.dims)
    arr = np.asarray(shield, dtype=np.complex128)
    if arr.ndim == 1:
        return pure_state(arr).density(), (arr.size,)
    return mixed_state(arr).density(), (arr.shape[0],)


def make_private_state(m, twist, shield):
    """Twist a maximally entangled key state with shield unitaries.

    Builds ``U (psi+ (x) shield) U^dagger`` where ``psi+`` is the
    ``2**m``-dimensional maximally entangled state on the two key
    registers and ``U = sum_ij |ij><ij| (x) U_ij`` applies a shield
    unitary controlled on the key registers.  Only the diagonal
    controls ``U_ii`` touch the state, since ``psi+`` is supported on
    matching key values.

    Parameters
    ----------
    m : int
        Key qubits per side; each key register has dimension ``2**m``.
    twist : mapping or None
        Maps key-value pairs ``(i, j)`` to unitary matrices on the
        shield space; missing pairs default to the identity.
    shield : QuantumState, array_like, or None
        Shield state; a vector is treated as pure, a matrix as a
        density matrix, ``None`` as a trivial one-dimensional shield.

    Returns
    -------
    QuantumState
        Density matrix with dims ``(2**m, 2**m, *shield_dims)``.
    """
    if m < 1:
        raise PostprocessError("m must be at least 1")
    d = 2**int(m)
    rho_shield, shield_dims = _shield_state(shield)
    ds = rho_shield.shape[0]
    controls = {}
    for pair, matrix in (twist or {}).items():
        i, j = int(pair[0]), int(pair[1])
        if not (0 <= i < d and 0 <= j < d):
            raise PostprocessError(f"twist key {pair!r} outside the key range")
        u = np.asarray(matrix, dtype=np.complex128)
        if u.shape != (ds, ds):
            raise PostprocessError(
                f"twist unitary for {pair!r} must be {ds}x{ds}, got {u.shape}"
            )
        if not np.allclose(u @ u.conj().T, np.eye(ds), atol=1e-9):
            raise PostprocessError(f"twist entry for {pair!r} is not unitary")
        controls[(i, j)] = u
    diag = [controls.get((i, i), np.eye(ds, dtype=np.complex128)) for i in range(d)]

    total = d * d * ds
    gamma = np.zeros((total, total), dtype=np.complex128)
    twisted = [u @ rho_shield for u in diag]
    for i in range(d):
        row = (i * d + i) * ds
        for j in range(d):
            col = (j * d + j) * ds
            gamma[row : row + ds, col : col + ds] = (
                twisted[i] @ diag[j].conj().T
            ) / d
    return mixed_state(gamma, (d, d) + tuple(shield_dims))


def _reorder_density(rho, dims, order):
    k = len(dims)
    perm = list(order) + [k + i for i in order]
    moved = rho.reshape(dims + dims).transpose(perm)
    side = int(np.prod([dims[i] for i in order]))
    return moved.reshape(side, side)


def check_private_state(state, key_subsystems, shield_subsystems, tolerance=1e-9):
    """Test whether a state is private on its key registers.

    Two properties are checked.  First, measuring the two key registers
    in the computational basis must give perfectly correlated, uniform
    outcomes: every matched pair ``(i, i)`` has probability ``2**-m``
    and mismatched pairs carry no probability.  Second, no purifying
    system may learn the outcome: in any purification, Eve's
    conditional states given the matched outcomes must coincide.  Both
    checks are evaluated from the spectrum within ``tolerance``.

    Parameters
    ----------
    state : QuantumState
        The candidate state.
    key_subsystems : sequence of int
        Exactly two subsystem indices (Alice's and Bob's key registers)
        with equal dimensions.
    shield_subsystems : sequence of int
        The remaining subsystem indices; together with the key
        registers they must account for every subsystem.
    tolerance : float
        Numerical slack for all three diagnostics.

    Returns
    -------
    (bool, dict)
        The verdict and diagnostics: the key-outcome distribution, its
        maximum deviation from uniform, the mismatched-outcome mass,
        and the largest trace distance between Eve's conditionals.
    """
    if not isinstance(state, QuantumState):
        raise PostprocessError("state must be a QuantumState")
    keys = [int(i) for i in key_subsystems]
    shields = [int(i) for i in shield_subsystems]
    dims = tuple(state.dims)
    if len(keys) != 2:
        raise PostprocessError("key_subsystems must name exactly two registers")
    if sorted(keys + shields) != list(range(len(dims))):
        raise PostprocessError(
            "key and shield subsystems must partition the state's subsystems"
        )
    da, db = dims[keys[0]], dims[keys[1]]
    if da != db:
        raise PostprocessError("key registers must have equal dimensions")

    order = keys + shields
    ds = int(np.prod([dims[i] for i in shields])) if shields else 1
    rho = _reorder_density(state.density(), dims, order)

    blocks = rho.reshape(da, db, ds, da, db, ds)
    key_dist = np.einsum("ijsijs->ij", blocks).real
    uniform_dev = float(np.max(np.abs(np.diagonal(key_dist) - 1.0 / da)))
    off_mass = float(key_dist.sum() - np.trace(key_dist))

    eigvals, eigvecs = np.linalg.eigh(rho)
    support = eigvals > 1e-12
    amps = eigvecs[:, support] * np.sqrt(eigvals[support])
    # Columns of amps are sqrt(lambda_k) v_k; the column index is the
    # purifying register.  Project the key registers on |ii> and trace
    # out the shield to get Eve's conditional state.
    amps = amps.reshape(da, db, ds, -1)
    eve_states = []
    for i in range(da):
        block = amps[i, i]
        weight = key_dist[i, i]
        if weight <= tolerance:
            eve_states.append(None)
            continue
        eve_states.append(block.conj().T @ block / weight)
    max_eve_distance = 0.0
    for i in range(da):
        for j in range(i + 1, da):
            if eve_states[i] is None or eve_states[j] is None:
                max_eve_distance = 1.0
                continue
            gap = np.linalg.eigvalsh(eve_states[i] - eve_states[j])
            max_eve_distance = max(max_eve_distance, 0.5 * float(np.abs(gap).sum()))

    passed = (
        uniform_dev <= tolerance
        and off_mass <= tolerance
        and max_eve_distance <= tolerance
    )
    diagnostics = {
        "key_distribution": key_dist,
        "max_uniform_deviation": uniform_dev,
        "off_diagonal_mass": off_mass,
        "max_eve_distance": max_eve_distance,
        "tolerance": tolerance,
    }
    return passed, diagnostics


def write_key_file(path, bits, metadata=None):
    """Write key bits as packed binary plus a text sidecar.

    The binary file holds an 8-byte little-endian bit count followed by
    the bits packed 8 per byte.  The sidecar at ``<path>.txt`` lists
    ``bit_count`` and every metadata entry as ``name: value`` lines.

    Returns
    -------
    pathlib.Path
        The sidecar path.
    """
    target = Path(path)
    data = _as_bits(bits, "key bits")
    payload = data.size.to_bytes(8, "little") + np.packbits(data).tobytes()
    target.write_bytes(payload)
    sidecar = target.with_name(target.name + ".txt")
    lines = [f"bit_count: {data.size}"]
    for name, value in (metadata or {}).items():
        lines.append(f"{name}: {value}")
    sidecar.write_text("\n".join(lines) + "\n")
    return sidecar


def read_key_file(path):
    """Read a key file written by :func:`write_key_file`.

    Returns
    -------
    (numpy.ndarray, dict)
        The key bits and the sidecar fields as strings (an empty dict
        when no sidecar exists).
    """
    target = Path(path)
    payload = target.read_bytes()
    if len(payload) < 8:
        raise PostprocessError(f"{target} is too short to be a key file")
    count = int.from_bytes(payload[:8], "little")
    packed = np.frombuffer(payload[8:], dtype=np.uint8)
    if packed.size * 8 < count:
        raise PostprocessError(f"{target} is truncated: {count} bits declared")
    bits = np.unpackbits(packed)[:count]
    metadata = {}
    sidecar = target.with_name(target.name + ".txt")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            if ":" in line:
                name, _, value = line.partition(":")
                metadata[name.strip()] = value.strip()
    return bits, metadata
