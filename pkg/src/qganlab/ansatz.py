"""Multilayer parameterized circuits (RY rotations + fixed CZ entanglers).

A layer is every RY rotation of that layer followed by the CZ pairs of the
entangler; ``theta[i, l]`` is the angle on qubit ``i`` in layer ``l``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import qsim
from .qsim import StateVector

SHIFT = np.pi / 2


def chain_entangler(n_qubits: int) -> tuple[tuple[int, int], ...]:
    """Nearest-neighbour CZ chain: pairs (0,1),(2,3),... then (1,2),(3,4),..."""
    first = [(i, i + 1) for i in range(0, n_qubits - 1, 2)]
    second = [(i, i + 1) for i in range(1, n_qubits - 1, 2)]
    return tuple(first + second)


@dataclass(frozen=True)
class MpqcSpec:
    n_qubits: int
    n_layers: int
    entangler: Optional[tuple[tuple[int, int], ...]] = None
    rotation_axis: str = "Y"

    def __post_init__(self):
        if self.n_qubits < 1 or self.n_layers < 1:
            raise ValueError("MPQC needs at least one qubit and one layer")
        if self.rotation_axis != "Y":
            raise ValueError("only RY rotations are supported")
        pairs = chain_entangler(self.n_qubits) if self.entangler is None else self.entangler
        pairs = tuple((int(a), int(b)) for a, b in pairs)
        for a, b in pairs:
            if a == b or not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise ValueError(f"invalid entangler pair ({a}, {b})")
        object.__setattr__(self, "entangler", pairs)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_qubits, self.n_layers)

    @property
    def n_params(self) -> int:
        return self.n_qubits * self.n_layers

    def check_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-2:] != self.shape:
            raise ValueError(f"parameter shape {theta.shape} does not match MPQC {self.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        return theta

    def init_params(self, rng: np.random.Generator, low: float = 0.0,
                    high: float = np.pi) -> np.ndarray:
        return rng.uniform(low, high, size=self.shape)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_layers": self.n_layers,
            "entangler": [list(p) for p in self.entangler],
            "rotation_axis": self.rotation_axis,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MpqcSpec":
        ent = doc.get("entangler")
        return cls(
            n_qubits=int(doc["n_qubits"]),
            n_layers=int(doc["n_layers"]),
            entangler=None if ent is None else tuple(tuple(p) for p in ent),
            rotation_axis=doc.get("rotation_axis", "Y"),
        )


@dataclass(frozen=True)
class LatentSpec:
    n_qubits: int
    active: Optional[tuple[int, ...]] = None
    low: float = 0.0
    high: float = np.pi

    def __post_init__(self):
        active = tuple(range(self.n_qubits)) if self.active is None else tuple(int(i) for i in self.active)
        if any(not 0 <= i < self.n_qubits for i in active) or len(set(active)) != len(active):
            raise ValueError("latent active set must be distinct qubits in range")
        if not self.low < self.high:
            raise ValueError("latent distribution needs low < high")
        object.__setattr__(self, "active", active)

    def sample_angles(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        """Angles of shape ``(count, len(active))``."""
        return rng.uniform(self.low, self.high, size=(count, len(self.active)))

    def full_angles(self, alpha: np.ndarray) -> np.ndarray:
        """Scatter active-set angles into an ``(count, n_qubits)`` array, NaN = identity."""
        alpha = np.atleast_2d(alpha)
        full = np.full((alpha.shape[0], self.n_qubits), np.nan)
        if self.active:
            full[:, list(self.active)] = alpha
        return full

    def states(self, alpha: np.ndarray) -> np.ndarray:
        return qsim.product_state_batch(self.full_angles(alpha))

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "active": list(self.active),
                "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentSpec":
        return cls(int(doc["n_qubits"]), tuple(doc.get("active", range(int(doc["n_qubits"])))),
                   float(doc.get("low", 0.0)), float(doc.get("high", np.pi)))


def mpqc_to_json(spec: MpqcSpec, latent: Optional[LatentSpec] = None) -> str:
    doc = spec.to_dict()
    if latent is not None:
        doc["latent"] = latent.to_dict()
    return json.dumps(doc, indent=2)


def mpqc_from_json(text: str) -> tuple[MpqcSpec, Optional[LatentSpec]]:
    doc = json.loads(text)
    latent = LatentSpec.from_dict(doc["latent"]) if "latent" in doc else None
    return MpqcSpec.from_dict(doc), latent


def prepare_latent(spec: LatentSpec, rng: np.random.Generator) -> tuple[StateVector, np.ndarray]:
    alpha = spec.sample_angles(rng, 1)
    return StateVector(spec.n_qubits, spec.states(alpha)[0]), alpha[0]


def mpqc_batch(amps: np.ndarray, spec: MpqcSpec, theta: np.ndarray,
               qubits: Optional[Sequence[int]] = None,
               n_total: Optional[int] = None) -> np.ndarray:
    """Apply the circuit in place to rows of ``amps``.

    ``theta`` is ``(n, L)`` (shared) or ``(batch, n, L)`` (one set per row).
    ``qubits`` maps local circuit qubits onto a larger register of
    ``n_total`` qubits; by default the circuit spans the whole register.
    """
    n_total = spec.n_qubits if n_total is None else n_total
    qubits = list(range(spec.n_qubits)) if qubits is None else [int(q) for q in qubits]
    if len(qubits) != spec.n_qubits:
        raise ValueError("qubit map length does not match MPQC width")
    pairs = tuple((qubits[a], qubits[b]) for a, b in spec.entangler)
    per_row = theta.ndim == 3
    for layer in range(spec.n_layers):
        for i, q in enumerate(qubits):
            angle = theta[:, i, layer] if per_row else theta[i, layer]
            qsim.ry_batch(amps, n_total, q, angle)
        qsim.cz_batch(amps, n_total, pairs)
    return amps


def apply_mpqc(state: StateVector, spec: MpqcSpec, params) -> StateVector:
    if state.n_qubits != spec.n_qubits:
        raise ValueError(f"state has {state.n_qubits} qubits, MPQC expects {spec.n_qubits}")
    theta = spec.check_params(params)
    if theta.ndim != 2:
        raise ValueError("apply_mpqc takes a single parameter matrix")
    amps = state.amplitudes.copy().reshape(1, -1)
    mpqc_batch(amps, spec, theta)
    return StateVector(state.n_qubits, amps[0])


def expectation(readout: Callable[[np.ndarray], float],
                circuit: Callable[[], "StateVector | np.ndarray"],
                shots: Optional[int] = None,
                rng: Optional[np.random.Generator] = None) -> float:
    """Evaluate ``readout`` on the circuit's outcome distribution.

    ``shots=None`` uses exact probabilities; otherwise the readout sees the
    empirical frequencies of ``shots`` samples drawn with ``rng``.
    """
    out = circuit()
    probs = qsim.probabilities(out) if isinstance(out, StateVector) else np.asarray(out, float)
    if shots is None:
        return float(readout(probs))
    if rng is None:
        raise ValueError("finite-shot expectation needs an rng")
    counts = qsim.sample_counts(probs, shots, rng)
    return float(readout(counts / shots))


def _shifted(params: np.ndarray, shift: float) -> np.ndarray:
    """Stack of 2*P parameter copies: entry k shifted by +shift, then by -shift."""
    flat = params.reshape(-1)
    p = flat.shape[0]
    eye = np.eye(p) * shift
    stack = np.concatenate([flat + eye, flat - eye], axis=0)
    return stack.reshape((2 * p,) + params.shape)


def parameter_shift_grad(loss: Callable, params, shift: float = SHIFT,
                         vectorized: bool = False) -> np.ndarray:
    """Shift-rule gradient ``[loss(theta + s e_k) - loss(theta - s e_k)] / 2``.

    With ``vectorized=True`` the loss is called once on a stacked array of all
    ``2 * params.size`` shifted parameter sets and must return their values in
    order; otherwise it is called per shifted set.
    """
    params = np.asarray(params, dtype=np.float64)
    stack = _shifted(params, shift)
    if vectorized:
        values = np.asarray(loss(stack), dtype=np.float64).reshape(-1)
    else:
        values = np.array([float(loss(p)) for p in stack])
    p = params.size
    return ((values[:p] - values[p:]) / 2.0).reshape(params.shape)


def finite_difference_grad(loss: Callable, params, h: float = 1e-5) -> np.ndarray:
    """Central finite differences, the validation route for nonlinear read-outs."""
    params = np.asarray(params, dtype=np.float64)
    stack = _shifted(params, h)
    values = np.array([float(loss(p)) for p in stack])
    p = params.size
    return ((values[:p] - values[p:]) / (2.0 * h)).reshape(params.shape)
