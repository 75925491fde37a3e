"""Dense state-vector simulation restricted to RY and CZ gates.

Basis convention: qubit 0 is the least-significant bit of the basis index, so
basis state ``j`` has qubit ``q`` equal to ``(j >> q) & 1``.

Public operations take and return immutable :class:`StateVector` values. The
``*_batch`` kernels operate in place on 2-D amplitude arrays of shape
``(batch, 2**n)`` and are what the generators use on hot paths; they accept
real or complex arrays (RY and CZ are real matrices).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 24
NORM_TOL = 1e-10
DEGENERATE_PROB = 1e-12


class ResourceLimitError(ValueError):
    """Requested register exceeds the configured qubit cap."""


class DegenerateProjectionError(RuntimeError):
    """Post-selection outcome has (numerically) zero probability."""

    def __init__(self, message: str, probability: float = 0.0, **context):
        super().__init__(message)
        self.probability = probability
        self.context = context


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        if self.n_qubits < 1:
            raise ValueError("a state needs at least one qubit")
        if amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, "
                f"got {amps.shape[0]}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm() - 1.0) < tol


def _check_qubits(n_qubits: int, cap: int = MAX_QUBITS) -> None:
    if not 1 <= n_qubits <= cap:
        raise ResourceLimitError(f"n_qubits={n_qubits} outside supported range [1, {cap}]")


def _check_index(n_qubits: int, qubit: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {n_qubits} qubits")


def init_zero(n_qubits: int, max_qubits: int = MAX_QUBITS) -> StateVector:
    _check_qubits(n_qubits, max_qubits)
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def from_amplitudes(amplitudes: Sequence[complex], normalize: bool = False) -> StateVector:
    amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    n = int(round(np.log2(amps.shape[0]))) if amps.shape[0] > 0 else 0
    if n < 1 or 2**n != amps.shape[0]:
        raise ValueError("amplitude count must be a power of two >= 2")
    if normalize:
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        amps = amps / norm
    state = StateVector(n, amps)
    if not state.is_normalized():
        raise ValueError(f"amplitudes have squared norm {state.norm():.12g}, expected 1")
    return state


# ---------------------------------------------------------------------------
# batched in-place kernels

def ry_batch(amps: np.ndarray, n_qubits: int, qubit: int, angles) -> np.ndarray:
    """Apply RY(angle) on ``qubit`` to every row of ``amps`` (in place)."""
    batch = amps.shape[0]
    view = amps.reshape(batch, 2 ** (n_qubits - 1 - qubit), 2, 2**qubit)
    half = 0.5 * np.asarray(angles, dtype=np.float64)
    c = np.cos(half)
    s = np.sin(half)
    if c.ndim:
        c = c.reshape(-1, 1, 1)
        s = s.reshape(-1, 1, 1)
    a0 = view[:, :, 0, :].copy()
    a1 = view[:, :, 1, :]
    view[:, :, 0, :] = c * a0 - s * a1
    view[:, :, 1, :] = s * a0 + c * a1
    return amps


@lru_cache(maxsize=256)
def cz_signs(n_qubits: int, pairs: tuple[tuple[int, int], ...]) -> np.ndarray:
    """Diagonal of the product of CZ gates over ``pairs`` as a +-1 vector."""
    idx = np.arange(2**n_qubits)
    parity = np.zeros(2**n_qubits, dtype=np.int64)
    for a, b in pairs:
        parity ^= ((idx >> a) & 1) & ((idx >> b) & 1)
    signs = 1.0 - 2.0 * parity
    signs.setflags(write=False)
    return signs


def cz_batch(amps: np.ndarray, n_qubits: int, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    if pairs:
        amps *= cz_signs(n_qubits, pairs)
    return amps


def product_state_batch(angles: np.ndarray) -> np.ndarray:
    """Rows of RY(angles[b, q]) applied qubit-wise to |0...0>, as real arrays.

    ``angles`` has shape ``(batch, n)``; ``NaN`` entries mean "identity".
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    batch, n = angles.shape
    out = np.ones((batch, 1))
    # build MSB first so qubit 0 ends up least significant
    for q in reversed(range(n)):
        a = angles[:, q]
        ident = np.isnan(a)
        half = np.where(ident, 0.0, 0.5 * a)
        local = np.stack([np.cos(half), np.sin(half)], axis=1)
        out = (out[:, :, None] * local[:, None, :]).reshape(batch, -1)
    return out


# ---------------------------------------------------------------------------
# public value-level operations

def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_index(state.n_qubits, qubit)
    amps = state.amplitudes.copy().reshape(1, -1)
    ry_batch(amps, state.n_qubits, qubit, float(angle))
    return StateVector(state.n_qubits, amps[0])


def apply_cz(state: StateVector, control: int, target: int) -> StateVector:
    _check_index(state.n_qubits, control)
    _check_index(state.n_qubits, target)
    if control == target:
        raise ValueError("CZ needs two distinct qubits")
    amps = state.amplitudes.copy().reshape(1, -1)
    cz_batch(amps, state.n_qubits, [(control, target)])
    return StateVector(state.n_qubits, amps[0])


def probabilities(state: StateVector) -> np.ndarray:
    amps = state.amplitudes
    return amps.real**2 + amps.imag**2


def sample_counts(probs, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial shot histogram; entry ``j`` counts outcomes of basis index ``j``.

    ``probs`` may be 2-D, in which case each row is sampled independently.
    """
    p = np.asarray(probs, dtype=np.float64)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if np.any(p < -1e-12):
        raise ValueError("negative probability in sampling distribution")
    totals = p.sum(axis=-1)
    if np.any(np.abs(totals - 1.0) > 1e-8):
        raise ValueError("probabilities must sum to 1 within 1e-8")
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=-1, keepdims=True)
    return rng.multinomial(int(shots), p)


def _postselect_array(amps: np.ndarray, n_qubits: int, qubits: Sequence[int],
                      outcome: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of ``amps`` onto ``qubits == outcome`` and drop those qubits.

    Returns the unnormalised projected rows (over the remaining qubits, in
    their original relative order) and the per-row success probabilities.
    """
    batch = amps.shape[0]
    tensor = amps.reshape((batch,) + (2,) * n_qubits)
    index = [slice(None)] * (n_qubits + 1)
    for q, bit in zip(qubits, outcome):
        # axis 1 is the most significant qubit
        index[n_qubits - q] = int(bit)
    projected = tensor[tuple(index)].reshape(batch, -1)
    probs = np.sum(np.abs(projected) ** 2, axis=1)
    return projected, probs


def postselect(state: StateVector, qubits: Sequence[int], outcome) -> tuple[StateVector, float]:
    """Condition ``state`` on measuring ``outcome`` on ``qubits``.

    ``outcome`` is a bit string or bit sequence aligned with ``qubits``. The
    measured qubits are removed; remaining qubits keep their relative order.
    """
    qubits = [int(q) for q in qubits]
    bits = [int(b) for b in outcome]
    if len(set(qubits)) != len(qubits):
        raise ValueError("post-selected qubits must be distinct")
    if len(bits) != len(qubits):
        raise ValueError("outcome length does not match qubit count")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("outcome must be a bit pattern")
    for q in qubits:
        _check_index(state.n_qubits, q)
    if len(qubits) >= state.n_qubits:
        raise ValueError("at least one qubit must remain after post-selection")
    projected, probs = _postselect_array(
        state.amplitudes.reshape(1, -1), state.n_qubits, qubits, bits
    )
    p = float(probs[0])
    if p < DEGENERATE_PROB:
        raise DegenerateProjectionError(
            f"post-selection success probability {p:.3g} below {DEGENERATE_PROB}", p
        )
    return StateVector(state.n_qubits - len(qubits), projected[0] / np.sqrt(p)), p
