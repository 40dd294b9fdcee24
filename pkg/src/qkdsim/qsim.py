"""Exact finite-dimensional quantum layer.

Every protocol-level claim in this package reduces to linear algebra on
small state vectors and density matrices (dimension <= 64).  This module
holds that layer: state containers, the three BB84 measurement bases,
Born-rule measurement, partial traces, trace distance, Renyi entropies,
classical-quantum ensembles, and the two textbook witnesses used by the
security tests (the no-cloning linearity witness and the
information-disturbance interaction probe).

Conventions
-----------
Computational basis |0>, |1>.  Polarization encoding: rectilinear bit 0 is
|0> (vertical), bit 1 is |1>; diagonal bit 0/1 are (|0> +- |1>)/sqrt(2);
circular bit 0/1 are (|0> +- i|1>)/sqrt(2).  Phase encoding uses the pulse
pair (reference, signal) as an abstract qubit and stores the key in the
relative phase: rectilinear bits map to phases {0, pi}, diagonal bits to
{pi/2, 3pi/2}.  The two encodings differ only by the fixed change of frame
returned by :func:`encoding_change_unitary`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "QsimError",
    "QuantumState",
    "Basis",
    "CqState",
    "BASES",
    "BASIS_LABELS",
    "RANK_EIGENVALUE_CUTOFF",
    "pure_state",
    "mixed_state",
    "bb84_state",
    "born_probability_table",
    "encoding_change_unitary",
    "entangled_pair",
    "tensor",
    "apply_unitary",
    "measure",
    "partial_trace",
    "trace_distance",
    "entropy",
    "build_cq_state",
    "clone_linearity_overlap",
    "disturbance_tradeoff",
    "random_unitary",
    "random_pure_state",
    "random_density_state",
]

#: Eigenvalues at or below this are treated as zero when counting rank
#: (Renyi order 0) and when normalizing spectra.
RANK_EIGENVALUE_CUTOFF = 1e-10

_NORM_ATOL = 1e-9      # state normalization tolerance on construction
_HERM_ATOL = 1e-9      # hermiticity / positivity tolerance
_UNITARY_ATOL = 1e-10  # unitarity tolerance for supplied interactions
_OVERLAP_ATOL = 1e-12  # "strictly between orthogonal and identical"


class QsimError(ValueError):
    """Raised for malformed states, bases, or operator inputs."""


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantumState:
    """A pure state vector or density matrix over a tensor product.

    Parameters
    ----------
    dims : tuple of int
        Local dimension of each subsystem, in tensor order.
    data : numpy.ndarray
        Complex amplitudes: a vector of length prod(dims) when ``pure``,
        otherwise a square density matrix of that size.
    pure : bool
        Whether ``data`` is a state vector (True) or a density matrix.

    Instances are immutable; construct them through :func:`pure_state` and
    :func:`mixed_state`, which validate normalization, hermiticity, and
    positivity.
    """

    dims: tuple[int, ...]
    data: np.ndarray
    pure: bool

    @property
    def dim(self) -> int:
        """Total Hilbert-space dimension."""
        return int(np.prod(self.dims))

    def density(self) -> np.ndarray:
        """Return the density matrix (|psi><psi| for pure states)."""
        if self.pure:
            return np.outer(self.data, self.data.conj())
        return self.data.copy()

    def overlap(self, other: "QuantumState") -> float:
        """|<self|other>| for two pure states of equal total dimension."""
        if not (self.pure and other.pure):
            raise QsimError("overlap is defined between pure states")
        if self.dim != other.dim:
            raise QsimError("overlap requires equal dimensions")
        return float(abs(np.vdot(self.data, other.data)))


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.complex128, copy=True)
    out.setflags(write=False)
    return out


def _resolve_dims(size: int, dims: Sequence[int] | None) -> tuple[int, ...]:
    if dims is None:
        return (size,)
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims) or int(np.prod(dims)) != size:
        raise QsimError(f"dims {dims} do not factor dimension {size}")
    return dims


def pure_state(vector: Iterable[complex], dims: Sequence[int] | None = None) -> QuantumState:
    """Build a pure :class:`QuantumState` from an amplitude vector.

    The vector must be normalized within 1e-9; ``dims`` defaults to a
    single subsystem of the full dimension.
    """
    vec = np.asarray(list(vector) if not isinstance(vector, np.ndarray) else vector,
                     dtype=np.complex128).reshape(-1)
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > _NORM_ATOL:
        raise QsimError(f"state vector norm {norm!r} is not 1 within {_NORM_ATOL}")
    return QuantumState(_resolve_dims(vec.size, dims), _freeze(vec / norm), True)


def mixed_state(matrix: np.ndarray, dims: Sequence[int] | None = None) -> QuantumState:
    """Build a density-matrix :class:`QuantumState`.

    Validates hermiticity, unit trace, and positivity (eigenvalues above
    -1e-9).
    """
    rho = np.asarray(matrix, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise QsimError("density matrix must be square")
    if not np.allclose(rho, rho.conj().T, atol=_HERM_ATOL):
        raise QsimError("density matrix is not hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > _NORM_ATOL:
        raise QsimError(f"density matrix trace {tr!r} is not 1 within {_NORM_ATOL}")
    if np.linalg.eigvalsh(rho).min() < -_HERM_ATOL:
        raise QsimError("density matrix has a negative eigenvalue")
    return QuantumState(_resolve_dims(rho.shape[0], dims), _freeze(rho / tr), False)


# ---------------------------------------------------------------------------
# bases and BB84 signal states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Basis:
    """An orthonormal single-qubit measurement basis.

    ``states[k]`` is the eigenvector assigned to bit value ``k``.
    """

    label: str
    states: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        mat = np.asarray(self.states, dtype=np.complex128)
        if mat.shape != (2, 2):
            raise QsimError("basis needs exactly two qubit states")
        if not np.allclose(mat @ mat.conj().T, np.eye(2), atol=_HERM_ATOL):
            raise QsimError(f"basis {self.label!r} states are not orthonormal")
        object.__setattr__(self, "states", _freeze(mat))

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.outer(v, v.conj()) for v in self.states)  # type: ignore[return-value]

    def state(self, bit: int) -> QuantumState:
        return pure_state(self.states[int(bit)], (2,))


_SQ2 = 1.0 / math.sqrt(2.0)

BASES: dict[str, Basis] = {
    "rectilinear": Basis("rectilinear", np.array([[1, 0], [0, 1]], dtype=complex)),
    "diagonal": Basis("diagonal", np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex)),
    "circular": Basis("circular", np.array([[_SQ2, 1j * _SQ2], [_SQ2, -1j * _SQ2]], dtype=complex)),
}

#: Stable basis order used for integer codes in transcripts.
BASIS_LABELS: tuple[str, ...] = ("rectilinear", "diagonal", "circular")

#: Relative phase carried by each (basis, bit) pair in the phase encoding.
PHASE_MAP: dict[tuple[str, int], float] = {
    ("rectilinear", 0): 0.0,
    ("rectilinear", 1): math.pi,
    ("diagonal", 0): math.pi / 2.0,
    ("diagonal", 1): 3.0 * math.pi / 2.0,
}


def _basis_label(basis: "str | int | Basis") -> str:
    if isinstance(basis, Basis):
        return basis.label
    if isinstance(basis, (int, np.integer)):
        if not 0 <= int(basis) < len(BASIS_LABELS):
            raise QsimError(f"basis code {basis} out of range")
        return BASIS_LABELS[int(basis)]
    if basis in BASES:
        return str(basis)
    raise QsimError(f"unknown basis {basis!r}")


def phase_encoded_state(phase: float) -> QuantumState:
    """Pulse-pair qubit (|ref> + e^{i phase}|sig>)/sqrt(2)."""
    return pure_state(np.array([_SQ2, _SQ2 * np.exp(1j * phase)]), (2,))


def bb84_state(encoding: str, basis: "str | int | Basis", bit: int) -> QuantumState:
    """Signal state Alice emits for a (basis, bit) choice.

    Parameters
    ----------
    encoding : {"polarization", "phase"}
    basis : basis label, integer code, or :class:`Basis`
        The circular basis is only defined for polarization (the six-state
        variant measures polarization qubits).
    bit : {0, 1}
    """
    label = _basis_label(basis)
    if bit not in (0, 1):
        raise QsimError(f"bit must be 0 or 1, got {bit!r}")
    if encoding == "polarization":
        return BASES[label].state(bit)
    if encoding == "phase":
        key = (label, int(bit))
        if key not in PHASE_MAP:
            raise QsimError(f"phase encoding does not cover basis {label!r}")
        return phase_encoded_state(PHASE_MAP[key])
    raise QsimError(f"unknown encoding {encoding!r}")


_BORN_TABLE: np.ndarray | None = None


def born_probability_table() -> np.ndarray:
    """Measurement probabilities for every signal/measurement pairing.

    Returns a read-only array ``p`` of shape (3, 2, 3, 2) where
    ``p[sb, sbit, mb, k]`` is the Born probability of outcome ``k`` when a
    qubit prepared in basis code ``sb`` with bit ``sbit`` is measured in
    basis code ``mb`` (codes follow :data:`BASIS_LABELS`).  The table is the
    single source of routing probabilities for the vectorized session
    engine; a test pins it against :func:`measure` frequencies.
    """
    global _BORN_TABLE
    if _BORN_TABLE is None:
        table = np.zeros((3, 2, 3, 2))
        for sb, slabel in enumerate(BASIS_LABELS):
            for sbit in (0, 1):
                signal = BASES[slabel].state(sbit)
                for mb, mlabel in enumerate(BASIS_LABELS):
                    for k in (0, 1):
                        amp = BASES[mlabel].state(k).overlap(signal)
                        table[sb, sbit, mb, k] = amp * amp
        table /= table.sum(axis=3, keepdims=True)
        table.setflags(write=False)
        _BORN_TABLE = table
    return _BORN_TABLE


def encoding_change_unitary() -> np.ndarray:
    """The fixed frame change taking polarization states to phase states.

    Maps the rectilinear eigenstates |0>, |1> onto the phase-encoded pair
    for phases 0 and pi; the diagonal pair then lands on the phase states
    for pi/2 and 3pi/2 automatically (up to global phase).  Columns are the
    images of |0> and |1>.
    """
    u = np.empty((2, 2), dtype=np.complex128)
    u[:, 0] = phase_encoded_state(0.0).data
    u[:, 1] = -1j * phase_encoded_state(math.pi).data
    return u


def entangled_pair() -> QuantumState:
    """(|00> + |11>)/sqrt(2): equal bits in the rectilinear and diagonal bases."""
    vec = np.zeros(4, dtype=np.complex128)
    vec[0] = _SQ2
    vec[3] = _SQ2
    return pure_state(vec, (2, 2))


def tensor(*states: QuantumState) -> QuantumState:
    """Tensor product of states; mixes up to a density matrix if any input is mixed."""
    if not states:
        raise QsimError("tensor needs at least one state")
    dims: tuple[int, ...] = ()
    for s in states:
        dims = dims + s.dims
    if all(s.pure for s in states):
        vec = states[0].data
        for s in states[1:]:
            vec = np.kron(vec, s.data)
        return QuantumState(dims, _freeze(vec), True)
    rho = states[0].density()
    for s in states[1:]:
        rho = np.kron(rho, s.density())
    return QuantumState(dims, _freeze(rho), False)


def apply_unitary(state: QuantumState, u: np.ndarray) -> QuantumState:
    """Apply a unitary acting on the full space of ``state``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (state.dim, state.dim):
        raise QsimError(f"unitary shape {u.shape} does not match dimension {state.dim}")
    if not np.allclose(u @ u.conj().T, np.eye(state.dim), atol=_UNITARY_ATOL):
        raise QsimError("operator is not unitary within 1e-10")
    if state.pure:
        return QuantumState(state.dims, _freeze(u @ state.data), True)
    return QuantumState(state.dims, _freeze(u @ state.data @ u.conj().T), False)


# ---------------------------------------------------------------------------
# measurement and reductions
# ---------------------------------------------------------------------------

def measure(state: QuantumState, basis: Basis, rng: np.random.Generator) -> tuple[int, QuantumState]:
    """Born-rule measurement of a single qubit in ``basis``.

    Draws exactly one uniform variate from ``rng`` and compares it against
    the cumulative outcome distribution, so a fixed generator state yields
    a fixed outcome.  Returns ``(bit, post_measurement_state)``; the
    post-measurement state is the basis eigenstate that fired.
    """
    if state.dim != 2:
        raise QsimError("measure expects a single qubit")
    if state.pure:
        amps = basis.states.conj() @ state.data
        probs = np.abs(amps) ** 2
    else:
        probs = np.einsum("ki,ij,kj->k", basis.states.conj(), state.data, basis.states).real
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if not math.isclose(total, 1.0, abs_tol=1e-6):
        raise QsimError(f"outcome probabilities sum to {total}, state or basis invalid")
    bit = 0 if rng.random() < probs[0] / total else 1
    return bit, basis.state(bit)


def partial_trace(state: QuantumState, keep: Iterable[int]) -> QuantumState:
    """Trace out every subsystem not listed in ``keep``.

    ``keep`` holds subsystem indices into ``state.dims``; the reduced state
    keeps them in ascending index order and is returned as a density
    matrix.
    """
    keep_sorted = sorted(set(int(k) for k in keep))
    n = len(state.dims)
    if not keep_sorted:
        raise QsimError("must keep at least one subsystem")
    if keep_sorted[0] < 0 or keep_sorted[-1] >= n:
        raise QsimError(f"keep indices {keep_sorted} out of range for {n} subsystems")
    if len(keep_sorted) == n:
        return mixed_state(state.density(), state.dims)

    rho = state.density().reshape(state.dims + state.dims)
    # Contract each traced-out subsystem with its primed copy.
    traced = [i for i in range(n) if i not in keep_sorted]
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in traced:
        col[i] = row[i]
    out = "".join(row[i] for i in keep_sorted) + "".join(col[i] for i in keep_sorted)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, rho)
    kept_dims = tuple(state.dims[i] for i in keep_sorted)
    size = int(np.prod(kept_dims))
    return mixed_state(reduced.reshape(size, size), kept_dims)


def trace_distance(a: QuantumState, b: QuantumState) -> float:
    """Trace distance (1/2)||a - b||_1 via the spectrum of the difference."""
    if a.dim != b.dim:
        raise QsimError("trace distance requires equal dimensions")
    eigs = np.linalg.eigvalsh(a.density() - b.density())
    return float(0.5 * np.abs(eigs).sum())


def entropy(state: QuantumState, order: int = 1) -> float:
    """Renyi entropy of the spectrum, base 2.

    order 0: log2(rank), eigenvalues above ``RANK_EIGENVALUE_CUTOFF``
    count toward the rank.  order 1: von Neumann entropy.  order 2:
    -log2(tr rho^2).
    """
    if order not in (0, 1, 2):
        raise QsimError(f"entropy order must be 0, 1, or 2, got {order!r}")
    eigs = np.linalg.eigvalsh(state.density()).real
    eigs = np.clip(eigs, 0.0, None)
    if order == 0:
        rank = int(np.count_nonzero(eigs > RANK_EIGENVALUE_CUTOFF))
        return float(np.log2(max(rank, 1)))
    if order == 1:
        support = eigs[eigs > RANK_EIGENVALUE_CUTOFF]
        return float(-(support * np.log2(support)).sum())
    return float(-np.log2((eigs ** 2).sum()))


# ---------------------------------------------------------------------------
# classical-quantum ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CqState:
    """Classical-quantum ensemble {(z, p(z), rho_z)}.

    Outcomes are stored sorted by label.  When every label is a bit string
    of one common length n, the classical register embeds into a
    2^n-dimensional space at index int(z, 2); otherwise labels are
    enumerated in sorted order.
    """

    outcomes: tuple[tuple[str, float, QuantumState], ...]

    @property
    def eve_dim(self) -> int:
        return self.outcomes[0][2].dim

    def _register_index(self) -> tuple[int, dict[str, int]]:
        labels = [z for z, _, _ in self.outcomes]
        if all(len(z) == len(labels[0]) and set(z) <= {"0", "1"} for z in labels):
            return 2 ** len(labels[0]), {z: int(z, 2) for z in labels}
        return len(labels), {z: i for i, z in enumerate(labels)}

    def export_density(self) -> QuantumState:
        """Joint state sum_z p(z) |z><z| (x) rho_z on register (x) Eve."""
        reg_dim, index = self._register_index()
        d = self.eve_dim
        joint = np.zeros((reg_dim * d, reg_dim * d), dtype=np.complex128)
        for z, p, rho in self.outcomes:
            k = index[z]
            joint[k * d:(k + 1) * d, k * d:(k + 1) * d] += p * rho.density()
        return mixed_state(joint, (reg_dim, d))

    def eve_marginal(self) -> QuantumState:
        acc = np.zeros((self.eve_dim, self.eve_dim), dtype=np.complex128)
        for _, p, rho in self.outcomes:
            acc += p * rho.density()
        return mixed_state(acc, (self.eve_dim,))


def build_cq_state(z_dist: Mapping[str, float], eve_states: Mapping[str, QuantumState]) -> CqState:
    """Assemble a :class:`CqState` from a distribution and Eve's conditionals.

    Keys of the two mappings must coincide; probabilities must be
    non-negative and sum to 1 within 1e-9; all conditional states must
    share one dimension.
    """
    if set(z_dist) != set(eve_states):
        raise QsimError("z_dist and eve_states must share the same outcome labels")
    if not z_dist:
        raise QsimError("ensemble must contain at least one outcome")
    total = float(sum(z_dist.values()))
    if any(p < -1e-12 for p in z_dist.values()) or abs(total - 1.0) > _NORM_ATOL:
        raise QsimError(f"outcome probabilities must be >= 0 and sum to 1 (got {total})")
    dims = {eve_states[z].dim for z in z_dist}
    if len(dims) != 1:
        raise QsimError(f"conditional Eve states have mixed dimensions {sorted(dims)}")
    outcomes = tuple(
        (z, float(max(z_dist[z], 0.0)), eve_states[z]) for z in sorted(z_dist)
    )
    return CqState(outcomes)


# ---------------------------------------------------------------------------
# security witnesses
# ---------------------------------------------------------------------------

def clone_linearity_overlap(a: complex, b: complex) -> float:
    """Overlap between the linear copier output and a true clone.

    A hypothetical copier that acts as |0> -> |00>, |1> -> |11| extends
    linearly to a|00> + b|11> on psi = a|0> + b|1>.  The true clone is
    psi (x) psi.  Returns |<psi psi|(a|00> + b|11>)| computed from the
    actual vectors; the value is |a^3 + b^3| for real amplitudes and
    equals 1 exactly when a*b = 0.
    """
    vec = np.array([a, b], dtype=np.complex128)
    if abs(np.linalg.norm(vec) - 1.0) > _NORM_ATOL:
        raise QsimError("amplitudes must be normalized within 1e-9")
    psi = pure_state(vec, (2,))
    linear = np.zeros(4, dtype=np.complex128)
    linear[0] = vec[0]
    linear[3] = vec[1]
    ideal = tensor(psi, psi)
    return float(abs(np.vdot(ideal.data, linear)))


def disturbance_tradeoff(
    u: QuantumState, v: QuantumState, interaction: np.ndarray
) -> tuple[float, float, float]:
    """Probe how much an eavesdropping interaction can learn without trace.

    ``u`` and ``v`` are pure system states that are neither identical nor
    orthogonal (|<u|v>| strictly inside (0, 1)); ``interaction`` is a
    unitary on system (x) ancilla with the ancilla starting in |0...0>.
    Returns ``(fid_u, fid_v, eve_distance)``: the fidelity of the system
    marginal with the respective input, and the trace distance between the
    two ancilla marginals.  If both fidelities are 1 the ancilla marginals
    must coincide; the security tests probe exactly that cliff.
    """
    if not (u.pure and v.pure) or u.dim != v.dim:
        raise QsimError("u and v must be pure states of equal dimension")
    t = float(abs(np.vdot(u.data, v.data)))
    if t <= _OVERLAP_ATOL or t >= 1.0 - _OVERLAP_ATOL:
        raise QsimError(f"inputs must be neither identical nor orthogonal (overlap {t})")
    w = np.asarray(interaction, dtype=np.complex128)
    d = u.dim
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % d != 0 or w.shape[0] // d < 1:
        raise QsimError("interaction must be square with dimension a multiple of the system's")
    m = w.shape[0] // d
    if not np.allclose(w @ w.conj().T, np.eye(d * m), atol=_UNITARY_ATOL):
        raise QsimError("interaction is not unitary within 1e-10")

    anc = np.zeros(m, dtype=np.complex128)
    anc[0] = 1.0
    fids: list[float] = []
    eves: list[QuantumState] = []
    for s in (u, v):
        out = pure_state(w @ np.kron(s.data, anc), (d, m))
        sys = partial_trace(out, keep=[0])
        fids.append(float(np.real(s.data.conj() @ sys.data @ s.data)))
        eves.append(partial_trace(out, keep=[1]))
    return fids[0], fids[1], trace_distance(eves[0], eves[1])


# ---------------------------------------------------------------------------
# random inputs for tests and brute-force checks
# ---------------------------------------------------------------------------

def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre sample."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def random_pure_state(dim: int, rng: np.random.Generator) -> QuantumState:
    g = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return pure_state(g / np.linalg.norm(g), (dim,))


def random_density_state(dim: int, rng: np.random.Generator, rank: int | None = None) -> QuantumState:
    """Density matrix G G^dagger / tr from a dim x rank Ginibre block."""
    r = dim if rank is None else max(1, min(int(rank), dim * 4))
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    rho = g @ g.conj().T
    return mixed_state(rho / np.trace(rho).real, (dim,))
