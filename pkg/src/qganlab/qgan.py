"""Quantum patch generator, quantum batch GAN circuits, and image read-out.

Patch generator register (per sub-generator, qubit 0 = LSB): data qubits
``[0, N - N_A)`` and ancillas ``[N - N_A, N)``. Post-selecting the ancillas on
``|0...0>`` therefore keeps the first ``2**(N - N_A)`` amplitudes.

Batch GAN register: data ``[0, N_D)``, generator ancillas ``[N_D, N_D + N_AG)``,
discriminator ancillas ``[N_D + N_AG, N_F)``, index register ``[N_F, N)``. The
index register is most significant, so reshaping amplitudes to
``(2**N_I, 2**N_F)`` splits them into batch branches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import qsim
from .ansatz import LatentSpec, MpqcSpec, mpqc_batch
from .qsim import DEGENERATE_PROB, DegenerateProjectionError, StateVector
from .rng import RNG_ALGORITHM

SHOT_RETRY_CAP = 10


# ---------------------------------------------------------------------------
# patch generator

@dataclass
class PatchGeneratorConfig:
    n_patches: int
    n_qubits: int
    n_ancilla: int
    n_layers: int
    params: np.ndarray = None  # (T, N, L)
    latent_low: float = 0.0
    latent_high: float = np.pi
    entangler: Optional[tuple] = None
    latent_active: Optional[tuple] = None  # None = every qubit carries a latent angle

    def __post_init__(self):
        if not 0 <= self.n_ancilla < self.n_qubits:
            raise ValueError("need 0 <= n_ancilla < n_qubits")
        if self.n_patches < 1:
            raise ValueError("need at least one sub-generator")
        self.mpqc = MpqcSpec(self.n_qubits, self.n_layers, self.entangler)
        self.latent = LatentSpec(self.n_qubits, self.latent_active, self.latent_low, self.latent_high)
        if self.params is None:
            self.params = np.zeros((self.n_patches,) + self.mpqc.shape)
        self.params = np.array(self.params, dtype=np.float64)
        if self.params.shape != (self.n_patches,) + self.mpqc.shape:
            raise ValueError(f"params shape {self.params.shape} != "
                             f"{(self.n_patches,) + self.mpqc.shape}")

    @property
    def patch_len(self) -> int:
        return 2 ** (self.n_qubits - self.n_ancilla)

    @property
    def image_dim(self) -> int:
        return self.n_patches * self.patch_len

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def init_params(self, rng: np.random.Generator) -> None:
        self.params = rng.uniform(0.0, np.pi, size=self.params.shape)

    def to_dict(self) -> dict:
        return {
            "kind": "patch",
            "n_patches": self.n_patches,
            "n_qubits": self.n_qubits,
            "n_ancilla": self.n_ancilla,
            "n_layers": self.n_layers,
            "latent_low": self.latent_low,
            "latent_high": self.latent_high,
            "entangler": [list(p) for p in self.mpqc.entangler],
            "latent_active": list(self.latent.active),
        }


def patch_amplitudes(config: PatchGeneratorConfig, theta: np.ndarray,
                     latent_amps: np.ndarray) -> np.ndarray:
    """Generator output amplitudes for rows of latent states (not post-selected)."""
    amps = np.array(latent_amps, dtype=np.float64, copy=True)
    mpqc_batch(amps, config.mpqc, theta)
    return amps


def patches_from_amplitudes(config: PatchGeneratorConfig, amps: np.ndarray,
                            t: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    kept = amps[:, : config.patch_len]
    weights = kept**2
    success = weights.sum(axis=1)
    low = success < DEGENERATE_PROB
    if np.any(low):
        raise DegenerateProjectionError(
            f"sub-generator {t}: ancilla post-selection probability "
            f"{success.min():.3g} below {DEGENERATE_PROB}",
            float(success.min()), subgenerator=t,
        )
    return weights / success[:, None], success


def patches_from_counts(config: PatchGeneratorConfig, probs: np.ndarray, shots: int,
                        rng: np.random.Generator, t: Optional[int] = None):
    """Shot-estimated patches: keep only shots whose ancillas read all zeros."""
    estimates = np.empty((probs.shape[0], config.patch_len))
    success = np.empty(probs.shape[0])
    todo = np.arange(probs.shape[0])
    for _ in range(SHOT_RETRY_CAP):
        counts = qsim.sample_counts(probs[todo], shots, rng)[:, : config.patch_len]
        kept = counts.sum(axis=1)
        ok = kept > 0
        estimates[todo[ok]] = counts[ok] / kept[ok, None]
        success[todo[ok]] = kept[ok] / shots
        todo = todo[~ok]
        if todo.size == 0:
            return estimates, success
    raise DegenerateProjectionError(
        f"sub-generator {t}: no shot passed ancilla post-selection after "
        f"{SHOT_RETRY_CAP} attempts", 0.0, subgenerator=t,
    )


def subgen_forward(config: PatchGeneratorConfig, t: int, latent_state: StateVector):
    """Run sub-generator ``t`` on ``latent_state``.

    Returns ``(patch, post_state, success_probability)``; ``post_state`` lives
    on the ``N - N_A`` data qubits.
    """
    if latent_state.n_qubits != config.n_qubits:
        raise ValueError("latent state width does not match the sub-generator")
    amps = latent_state.amplitudes.reshape(1, -1).copy()
    mpqc_batch(amps, config.mpqc, config.params[t])
    if config.n_ancilla == 0:
        out = StateVector(config.n_qubits, amps[0])
        return qsim.probabilities(out), out, 1.0
    ancillas = list(range(config.n_qubits - config.n_ancilla, config.n_qubits))
    try:
        post, p = qsim.postselect(StateVector(config.n_qubits, amps[0]),
                                  ancillas, [0] * config.n_ancilla)
    except DegenerateProjectionError as err:
        err.context["subgenerator"] = t
        raise
    return qsim.probabilities(post), post, p


def assemble_image(patches: Sequence[np.ndarray]) -> np.ndarray:
    patches = [np.asarray(p, dtype=np.float64) for p in patches]
    if not patches:
        raise ValueError("no patches to assemble")
    if len({p.shape[-1] for p in patches}) != 1:
        raise ValueError("patches must share one length")
    return np.concatenate(patches, axis=-1)


def split_image(image: np.ndarray, n_patches: int) -> list[np.ndarray]:
    image = np.asarray(image)
    if image.shape[-1] % n_patches:
        raise ValueError("image length is not a multiple of the patch count")
    return np.split(image, n_patches, axis=-1)


def patch_images(config: PatchGeneratorConfig, alpha: np.ndarray,
                 params: Optional[np.ndarray] = None, shots: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
    """Generated images for latent angles ``alpha`` of shape ``(count, N)``.

    Returns ``(images, min_success)`` where images have shape ``(count, M)``.
    """
    params = config.params if params is None else params
    latent_amps = config.latent.states(alpha)
    patches = []
    min_success = 1.0
    for t in range(config.n_patches):
        amps = patch_amplitudes(config, params[t], latent_amps)
        if shots is None:
            patch, success = patches_from_amplitudes(config, amps, t)
        else:
            patch, success = patches_from_counts(config, amps**2, shots, rng, t)
        patches.append(patch)
        min_success = min(min_success, float(success.min()))
    return assemble_image(patches), min_success


# ---------------------------------------------------------------------------
# batch GAN

@dataclass
class BatchGanConfig:
    n_index: int
    n_data: int
    n_gen_ancilla: int
    n_disc_ancilla: int
    gen_layers: int
    disc_layers: int
    gen_params: np.ndarray = None
    disc_params: np.ndarray = None
    latent_low: float = 0.0
    latent_high: float = np.pi
    # "branch": renormalise every index branch by its own success probability;
    # "global": one normalisation for the whole register.
    normalization: str = "branch"
    latent_active: Optional[tuple] = None

    def __post_init__(self):
        if min(self.n_index, self.n_gen_ancilla, self.n_disc_ancilla) < 0 or self.n_data < 1:
            raise ValueError("invalid register sizes")
        if self.normalization not in ("branch", "global"):
            raise ValueError("normalization must be 'branch' or 'global'")
        self.gen_mpqc = MpqcSpec(self.n_data + self.n_gen_ancilla, self.gen_layers)
        self.disc_mpqc = MpqcSpec(self.n_data + self.n_disc_ancilla, self.disc_layers)
        self.latent = LatentSpec(self.gen_mpqc.n_qubits, self.latent_active, self.latent_low,
                                 self.latent_high)
        if self.gen_params is None:
            self.gen_params = np.zeros(self.gen_mpqc.shape)
        if self.disc_params is None:
            self.disc_params = np.zeros(self.disc_mpqc.shape)
        self.gen_params = self.gen_mpqc.check_params(self.gen_params).copy()
        self.disc_params = self.disc_mpqc.check_params(self.disc_params).copy()

    @property
    def n_feature(self) -> int:
        return self.n_data + self.n_gen_ancilla + self.n_disc_ancilla

    @property
    def n_qubits(self) -> int:
        return self.n_index + self.n_feature

    @property
    def batch_size(self) -> int:
        return 2**self.n_index

    @property
    def image_dim(self) -> int:
        return 2**self.n_data

    @property
    def gen_qubits(self) -> list[int]:
        return list(range(self.n_data + self.n_gen_ancilla))

    @property
    def gen_ancilla_qubits(self) -> list[int]:
        return list(range(self.n_data, self.n_data + self.n_gen_ancilla))

    @property
    def disc_ancilla_qubits(self) -> list[int]:
        start = self.n_data + self.n_gen_ancilla
        return list(range(start, start + self.n_disc_ancilla))

    @property
    def disc_qubits(self) -> list[int]:
        return list(range(self.n_data)) + self.disc_ancilla_qubits

    @property
    def output_qubit(self) -> int:
        return self.n_data - 1

    def init_params(self, rng: np.random.Generator) -> None:
        self.gen_params = rng.uniform(0.0, np.pi, size=self.gen_mpqc.shape)
        self.disc_params = rng.uniform(0.0, np.pi, size=self.disc_mpqc.shape)

    def to_dict(self) -> dict:
        return {
            "kind": "batch",
            "n_index": self.n_index,
            "n_data": self.n_data,
            "n_gen_ancilla": self.n_gen_ancilla,
            "n_disc_ancilla": self.n_disc_ancilla,
            "gen_layers": self.gen_layers,
            "disc_layers": self.disc_layers,
            "latent_low": self.latent_low,
            "latent_high": self.latent_high,
            "normalization": self.normalization,
            "latent_active": list(self.latent.active),
        }


def _feature_mask(config: BatchGanConfig, qubits: Sequence[int]) -> np.ndarray:
    """Boolean mask over feature-register basis states with ``qubits`` all zero."""
    idx = np.arange(2**config.n_feature)
    mask = np.ones_like(idx, dtype=bool)
    for q in qubits:
        mask &= ((idx >> q) & 1) == 0
    return mask


def batch_latent_amplitudes(config: BatchGanConfig, alpha: np.ndarray) -> np.ndarray:
    """Feature-register rows (one per branch) for latent angles ``(B, n_gen)``."""
    gen = config.latent.states(alpha)  # (B, 2**n_gen)
    rows = np.zeros((gen.shape[0], 2**config.n_feature))
    # discriminator ancillas are the most significant feature qubits, left at |0>
    rows[:, : gen.shape[1]] = gen
    return rows


def _branches_to_state(config: BatchGanConfig, rows: np.ndarray) -> StateVector:
    amps = rows.reshape(-1) / np.sqrt(config.batch_size)
    return StateVector(config.n_qubits, amps)


def _state_branches(config: BatchGanConfig, state: StateVector) -> np.ndarray:
    if state.n_qubits != config.n_qubits:
        raise ValueError("state width does not match the batch GAN register")
    amps = state.amplitudes
    if np.any(np.abs(amps.imag) > 1e-12):
        raise ValueError("batch GAN circuits are real; state has imaginary amplitudes")
    return amps.real.reshape(config.batch_size, 2**config.n_feature)


def batch_latent_prepare(config: BatchGanConfig, rng: np.random.Generator,
                         alpha: Optional[np.ndarray] = None) -> StateVector:
    """Uniform superposition over index branches, each holding its own latent."""
    if alpha is None:
        alpha = config.latent.sample_angles(rng, config.batch_size)
    return _branches_to_state(config, batch_latent_amplitudes(config, alpha))


def _postselect_rows(config: BatchGanConfig, rows: np.ndarray, qubits, what: str):
    """Project branch rows onto ``qubits == 0`` and renormalise.

    Branch mode keeps every branch at its input weight; global mode applies
    one normalisation to the whole register. Returns the new rows and the
    per-branch conditional success probabilities.
    """
    mask = _feature_mask(config, qubits)
    projected = np.where(mask, rows, 0.0)
    weight = (projected**2).sum(axis=-1)
    branch_norm = (rows**2).sum(axis=-1)
    success = weight / branch_norm
    if config.normalization == "branch":
        if np.any(success < DEGENERATE_PROB):
            raise DegenerateProjectionError(
                f"{what} ancilla post-selection probability {success.min():.3g} "
                f"below {DEGENERATE_PROB}", float(success.min()))
        scale = np.sqrt(branch_norm / weight)
    else:
        total = weight.sum(axis=-1, keepdims=True)
        if np.any(total < DEGENERATE_PROB):
            raise DegenerateProjectionError(
                f"{what} ancilla post-selection probability {total.min():.3g} "
                f"below {DEGENERATE_PROB}", float(total.min()))
        scale = np.broadcast_to(1.0 / np.sqrt(total), weight.shape)
    return projected * scale[..., None], success


def generator_rows(config: BatchGanConfig, rows: np.ndarray,
                   theta: Optional[np.ndarray] = None):
    """Apply generator + ancilla post-selection to branch rows.

    ``rows`` has shape ``(S, B, 2**N_F)``: ``S`` independent evaluations of a
    ``B``-branch register. ``theta`` is shared ``(n, L)`` or per-evaluation
    ``(S, n, L)``.
    """
    theta = config.gen_params if theta is None else theta
    s, b, d = rows.shape
    flat = rows.reshape(s * b, d).copy()
    th = np.repeat(theta, b, axis=0) if theta.ndim == 3 else theta
    mpqc_batch(flat, config.gen_mpqc, th, config.gen_qubits, config.n_feature)
    flat = flat.reshape(s, b, d)
    if config.n_gen_ancilla == 0:
        return flat, np.ones((s, b))
    return _postselect_rows(config, flat, config.gen_ancilla_qubits, "generator")


def discriminator_rows(config: BatchGanConfig, rows: np.ndarray,
                       gamma: Optional[np.ndarray] = None):
    """Probability of reading |0> on the output qubit, over the whole register.

    With branch normalisation this is the plain mean of the per-branch
    discriminator outputs. Returns ``(d_bar, success)``, ``d_bar`` shaped ``(S,)``.
    """
    gamma = config.disc_params if gamma is None else gamma
    s, b, d = rows.shape
    flat = rows.reshape(s * b, d).copy()
    g = np.repeat(gamma, b, axis=0) if gamma.ndim == 3 else gamma
    mpqc_batch(flat, config.disc_mpqc, g, config.disc_qubits, config.n_feature)
    flat = flat.reshape(s, b, d)
    if config.n_disc_ancilla:
        flat, success = _postselect_rows(config, flat, config.disc_ancilla_qubits,
                                         "discriminator")
    else:
        success = np.ones((s, b))
    out0 = _feature_mask(config, [config.output_qubit])
    d_bar = (flat[..., out0] ** 2).sum(axis=(-1, -2))
    return d_bar, success


def batch_generator_forward(config: BatchGanConfig, input_state: StateVector) -> StateVector:
    rows = _state_branches(config, input_state)[None]
    out, _ = generator_rows(config, rows)
    return StateVector(config.n_qubits, out.reshape(-1))


def generator_success(config: BatchGanConfig, input_state: StateVector) -> np.ndarray:
    rows = _state_branches(config, input_state)[None]
    return generator_rows(config, rows)[1][0]


def quantum_discriminator_forward(config: BatchGanConfig, state: StateVector) -> float:
    """Batch-averaged discriminator output for a state holding 2**N_I examples."""
    rows = _state_branches(config, state)[None]
    d_bar, _ = discriminator_rows(config, rows)
    return float(d_bar[0])


def batch_conditional_images(config: BatchGanConfig, rows: np.ndarray) -> np.ndarray:
    """Per-branch pixel distributions P(J=j | I=i) from generated rows (B, 2**N_F)."""
    data = rows.reshape(rows.shape[0], -1, config.image_dim)
    # higher feature qubits are post-selected/ancilla zeros; fold any residue in
    probs = (data**2).sum(axis=1)
    return probs / probs.sum(axis=1, keepdims=True)


def batch_images(config: BatchGanConfig, alpha: np.ndarray, theta=None,
                 shots: Optional[int] = None, rng: Optional[np.random.Generator] = None):
    """Images for latent angles ``(count, n_gen)``; each row runs as one branch."""
    theta = config.gen_params if theta is None else theta
    count = alpha.shape[0]
    amps = config.latent.states(alpha)
    mpqc_batch(amps, config.gen_mpqc, theta)
    if shots is None:
        keep = amps[:, : config.image_dim]
        success = (keep**2).sum(axis=1)
        if np.any(success < DEGENERATE_PROB):
            raise DegenerateProjectionError("generator ancilla post-selection degenerate",
                                            float(success.min()))
        return keep**2 / success[:, None], float(success.min())
    probs = amps**2
    out = np.empty((count, config.image_dim))
    success = np.empty(count)
    todo = np.arange(count)
    for _ in range(SHOT_RETRY_CAP):
        counts = qsim.sample_counts(probs[todo], shots, rng)[:, : config.image_dim]
        kept = counts.sum(axis=1)
        ok = kept > 0
        out[todo[ok]] = counts[ok] / kept[ok, None]
        success[todo[ok]] = kept[ok] / shots
        todo = todo[~ok]
        if todo.size == 0:
            return out, float(success.min())
    raise DegenerateProjectionError(
        f"index branch received no post-selected shots after {SHOT_RETRY_CAP} attempts", 0.0)


def generate_images(config, count: int, rng: np.random.Generator,
                    shots: Optional[int] = None) -> np.ndarray:
    """``count`` generated images (rows) from fresh latent samples."""
    alpha = config.latent.sample_angles(rng, count)
    if isinstance(config, PatchGeneratorConfig):
        return patch_images(config, alpha, shots=shots, rng=rng)[0]
    return batch_images(config, alpha, shots=shots, rng=rng)[0]


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, config, iteration: int, seed: int, extra: Optional[dict] = None) -> None:
    doc = {
        "config": config.to_dict(),
        "iteration": int(iteration),
        "master_seed": int(seed),
        "rng_algorithm": RNG_ALGORITHM,
    }
    if isinstance(config, PatchGeneratorConfig):
        doc["theta"] = config.params.tolist()
    else:
        doc["theta"] = config.gen_params.tolist()
        doc["gamma"] = config.disc_params.tolist()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    cfg = dict(doc["config"])
    kind = cfg.pop("kind")
    if cfg.get("latent_active") is not None:
        cfg["latent_active"] = tuple(cfg["latent_active"])
    if kind == "patch":
        ent = cfg.pop("entangler", None)
        config = PatchGeneratorConfig(**cfg, entangler=None if ent is None else tuple(map(tuple, ent)),
                                      params=np.array(doc["theta"]))
    else:
        config = BatchGanConfig(**cfg, gen_params=np.array(doc["theta"]),
                                disc_params=np.array(doc["gamma"]))
    return config, doc
