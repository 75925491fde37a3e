"""Adversarial training loops, GAN losses, the MMD Born-machine experiment, and
the optimal-discriminator oracle.

All loops are deterministic given ``TrainConfig.seed`` in exact mode: every
random draw comes from a stream keyed by ``(seed, iteration, purpose)``.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import classical, qgan
from .ansatz import MpqcSpec, mpqc_batch, parameter_shift_grad
from .classical import MlpNetwork
from .metrics import fd_score, tv_distance
from .qsim import DegenerateProjectionError, sample_counts
from .rng import StreamFactory

CLAMP = 1e-7

# stream purposes
_DATA, _LATENT, _DSHOTS, _GSHOTS, _EVAL, _INIT = 1, 2, 3, 4, 5, 6


class TrainingAborted(RuntimeError):
    """Training stopped early; ``partial`` holds everything produced so far."""

    def __init__(self, message: str, partial: "TrainResult", iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.partial = partial
        self.iteration = iteration


@dataclass
class TrainConfig:
    iterations: int = 350
    lr_g: float = 0.05
    lr_d: float = 0.001
    shots: Optional[int] = None  # None = exact probabilities
    disc_steps: int = 1
    minibatch: int = 1
    seed: int = 0
    eval_every: int = 50
    fd_samples: int = 1000
    gen_optimizer: str = "sgd"
    disc_optimizer: str = "sgd"
    momentum: float = 0.0
    nesterov: bool = False
    generator_objective: str = "minimax"
    postselect_floor: float = 1e-6
    record_timing: bool = False
    # "shift": shift rule applied to the whole loss; "chain": shift rule on the
    # circuit probabilities, chained through post-selection and the discriminator
    gen_gradient: str = "shift"

    def __post_init__(self):
        if self.iterations < 0 or self.disc_steps < 1 or self.minibatch < 1:
            raise ValueError("iterations >= 0, disc_steps >= 1 and minibatch >= 1 required")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")
        if self.generator_objective not in ("minimax", "non_saturating"):
            raise ValueError("generator_objective must be 'minimax' or 'non_saturating'")
        if self.gen_gradient not in ("shift", "chain"):
            raise ValueError("gen_gradient must be 'shift' or 'chain'")

    def to_dict(self) -> dict:
        return asdict(self)


RECORD_COLUMNS = ("iteration", "disc_loss", "gen_loss", "d_real", "d_fake", "fd",
                  "postselect_min_prob", "elapsed_ms", "seed")


@dataclass
class TrainRecord:
    iteration: int
    disc_loss: Optional[float]
    gen_loss: Optional[float]
    d_real: Optional[float]
    d_fake: Optional[float]
    fd: Optional[float]
    postselect_min_prob: Optional[float]
    elapsed_ms: Optional[float]
    seed: int

    def row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return repr(float(v))
        return [fmt(getattr(self, c)) for c in RECORD_COLUMNS]


@dataclass
class TrainResult:
    records: list = field(default_factory=list)
    evaluations: dict = field(default_factory=dict)  # iteration -> FD
    generator: object = None
    discriminator: object = None
    samples: Optional[np.ndarray] = None  # final generated images, evaluation scale
    extra: dict = field(default_factory=dict)

    def csv_rows(self) -> list[list[str]]:
        rows = []
        if 0 in self.evaluations:
            seed = self.records[0].seed if self.records else self.extra.get("seed", 0)
            rows.append(TrainRecord(0, None, None, None, None, self.evaluations[0],
                                    None, None, seed).row())
        rows += [r.row() for r in self.records]
        return rows


def write_records_csv(path, result: TrainResult) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        writer.writerows(result.csv_rows())


# ---------------------------------------------------------------------------
# losses

def _clamp(d):
    return np.clip(np.asarray(d, dtype=np.float64), CLAMP, 1.0 - CLAMP)


def minimax_value(d_real, d_fake) -> float:
    """E[log D(x)] + E[log(1 - D(G(z)))], the quantity D maximises."""
    dr, df = _clamp(d_real), _clamp(d_fake)
    return float(np.mean(np.log(dr)) + np.mean(np.log(1.0 - df)))


def gan_loss(d_real, d_fake, objective: str = "minimax") -> tuple[float, float]:
    """``(disc_loss, gen_loss)``, both minimised by their player."""
    dr, df = _clamp(d_real), _clamp(d_fake)
    disc = -(np.mean(np.log(dr)) + np.mean(np.log(1.0 - df)))
    if objective == "minimax":
        gen = np.mean(np.log(1.0 - df))
    elif objective == "non_saturating":
        gen = -np.mean(np.log(df))
    else:
        raise ValueError(f"unknown generator objective {objective}")
    if not (np.isfinite(disc) and np.isfinite(gen)):
        raise FloatingPointError("non-finite GAN loss")
    return float(disc), float(gen)


def gen_loss_grad_wrt_dfake(d_fake, objective: str) -> np.ndarray:
    """d(gen_loss)/d(D(G(z_i))) for each sample."""
    df = _clamp(d_fake)
    n = df.size
    if objective == "minimax":
        return -1.0 / ((1.0 - df) * n)
    return -1.0 / (df * n)


def _gen_loss_rows(d_fake: np.ndarray, objective: str) -> np.ndarray:
    """Generator loss per row of a ``(S, M')`` array of discriminator outputs."""
    df = _clamp(d_fake)
    if objective == "minimax":
        return np.log(1.0 - df).mean(axis=-1)
    return -np.log(df).mean(axis=-1)


def _disc_loss_rows(d_real: np.ndarray, d_fake: np.ndarray) -> np.ndarray:
    dr, df = _clamp(d_real), _clamp(d_fake)
    return -(np.log(dr) + np.log(1.0 - df))


def optimal_discriminator_oracle(p_data, p_g) -> np.ndarray:
    """D* = P_data / (P_g + P_data); NaN where both vanish (outside the support)."""
    p_data = np.asarray(p_data, dtype=np.float64)
    p_g = np.asarray(p_g, dtype=np.float64)
    total = p_data + p_g
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, p_data / np.where(total > 0, total, 1.0), np.nan)


def discrete_minimax_value(p_data, p_g, d) -> float:
    """sum_x P_data(x) log D(x) + P_g(x) log(1 - D(x)) over the common support."""
    p_data, p_g, d = (np.asarray(a, dtype=np.float64) for a in (p_data, p_g, d))
    keep = (p_data + p_g) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p_data > 0, p_data * np.log(d), 0.0) + np.where(p_g > 0, p_g * np.log1p(-d), 0.0)
    return float(terms[keep].sum())


def grid_optimal_discriminator(p_data, p_g, step: float = 0.001) -> np.ndarray:
    """Brute-force maximiser of the discrete minimax value, point by point."""
    grid = np.arange(step, 1.0, step)
    p_data = np.asarray(p_data, dtype=np.float64)
    p_g = np.asarray(p_g, dtype=np.float64)
    vals = p_data[:, None] * np.log(grid)[None, :] + p_g[:, None] * np.log1p(-grid)[None, :]
    best = grid[np.argmax(vals, axis=1)]
    return np.where((p_data + p_g) > 0, best, np.nan)


# ---------------------------------------------------------------------------
# shared loop scaffolding

@dataclass
class Task:
    """Training data in model space plus the map to evaluation (pixel) space."""

    model_images: np.ndarray
    eval_images: np.ndarray
    to_eval: Callable[[np.ndarray], np.ndarray] = lambda x: x
    name: str = "task"


def _optimizer(kind: str, lr: float, cfg: TrainConfig):
    return classical.make_optimizer(kind, lr, cfg.momentum, cfg.nesterov)


def _check_floor(prob: float, cfg: TrainConfig, what: str) -> None:
    if prob < cfg.postselect_floor:
        raise DegenerateProjectionError(
            f"{what} post-selection probability {prob:.3g} fell below floor "
            f"{cfg.postselect_floor}", prob)


def _sample_batch(task: Task, streams: StreamFactory, k: int, n: int) -> np.ndarray:
    idx = streams.stream(k, _DATA).integers(0, task.model_images.shape[0], size=n)
    return task.model_images[idx]


def _run_loop(cfg: TrainConfig, step: Callable[[int], dict], evaluate: Callable[[int], float],
              result: TrainResult, on_eval: Optional[Callable] = None) -> TrainResult:
    """Drive ``step`` for every iteration, evaluating FD on the configured cadence.

    ``on_eval(iteration, fd, result)`` runs after every evaluation.
    """
    start = time.perf_counter()
    it = 0
    try:
        if cfg.eval_every > 0:
            result.evaluations[0] = evaluate(0)
            if on_eval is not None:
                on_eval(0, result.evaluations[0], result)
        for it in range(1, cfg.iterations + 1):
            stats = step(it)
            fd = None
            if cfg.eval_every > 0 and it % cfg.eval_every == 0:
                fd = evaluate(it)
                result.evaluations[it] = fd
                if on_eval is not None:
                    on_eval(it, fd, result)
            for key in ("disc_loss", "gen_loss"):
                if not np.isfinite(stats[key]):
                    raise FloatingPointError(f"non-finite {key}")
            elapsed = (time.perf_counter() - start) * 1e3 if cfg.record_timing else None
            result.records.append(TrainRecord(
                it, stats["disc_loss"], stats["gen_loss"], stats["d_real"], stats["d_fake"],
                fd, stats.get("postselect_min_prob"), elapsed, cfg.seed))
    except (DegenerateProjectionError, FloatingPointError) as err:
        raise TrainingAborted(str(err), result, it) from err
    return result


# ---------------------------------------------------------------------------
# quantum patch GAN

def _patch_fake(gen: qgan.PatchGeneratorConfig, alpha, cfg, streams, k, purpose):
    rng = streams.stream(k, purpose) if cfg.shots is not None else None
    return qgan.patch_images(gen, alpha, shots=cfg.shots, rng=rng)


def patch_generator_loss_fn(gen: qgan.PatchGeneratorConfig, disc: MlpNetwork, t: int,
                            alpha: np.ndarray, objective: str = "minimax",
                            shots: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None):
    """Vectorised generator loss over stacks of sub-generator ``t`` parameters.

    The returned callable maps ``(S, N, L)`` parameter sets to ``S`` loss values
    with every other sub-generator held at its current parameters.
    """
    base, _ = qgan.patch_images(gen, alpha)
    latent_amps = gen.latent.states(alpha)
    nb = latent_amps.shape[0]
    lo, hi = t * gen.patch_len, (t + 1) * gen.patch_len

    def loss(stack: np.ndarray) -> np.ndarray:
        s = stack.shape[0]
        amps = np.tile(latent_amps, (s, 1))
        mpqc_batch(amps, gen.mpqc, np.repeat(stack, nb, axis=0))
        if shots is None:
            patch, _ = qgan.patches_from_amplitudes(gen, amps, t)
        else:
            patch, _ = qgan.patches_from_counts(gen, amps**2, shots, rng, t)
        images = np.tile(base, (s, 1))
        images[:, lo:hi] = patch
        d = classical.mlp_forward(disc, images).reshape(s, nb)
        return _gen_loss_rows(d, objective)

    return loss


def patch_generator_grad(gen: qgan.PatchGeneratorConfig, disc: MlpNetwork, alpha: np.ndarray,
                         objective: str = "minimax", shots: Optional[int] = None,
                         rng_for: Optional[Callable[[int], np.random.Generator]] = None) -> np.ndarray:
    """Shift-rule gradient of the generator loss for every sub-generator: ``(T, N, L)``."""
    grads = np.empty_like(gen.params)
    for t in range(gen.n_patches):
        rng = rng_for(t) if rng_for is not None else None
        fn = patch_generator_loss_fn(gen, disc, t, alpha, objective, shots, rng)
        grads[t] = parameter_shift_grad(fn, gen.params[t], vectorized=True)
    return grads


def patch_generator_chain_grad(gen: qgan.PatchGeneratorConfig, disc: MlpNetwork,
                               alpha: np.ndarray, objective: str = "minimax",
                               shots: Optional[int] = None,
                               rng_for: Optional[Callable[[int], np.random.Generator]] = None) -> np.ndarray:
    """Exact generator gradient: shift rule on raw probabilities plus the chain rule.

    Raw outcome probabilities are expectation-linear, so their shift-rule
    derivatives are exact; the post-selection ratio and the discriminator are
    differentiated analytically. With ``shots`` the probabilities are estimated.
    """
    from .ansatz import _shifted

    images, _ = qgan.patch_images(gen, alpha)
    d_out, cache = classical.mlp_forward_cached(disc, images)
    up = gen_loss_grad_wrt_dfake(d_out[:, 0], objective)
    _, dl_dx = classical.mlp_backward(disc, cache, up[:, None])  # (B, M)
    latent_amps = gen.latent.states(alpha)
    nb, plen = latent_amps.shape[0], gen.patch_len
    grads = np.empty_like(gen.params)
    for t in range(gen.n_patches):
        theta = gen.params[t]
        stack = np.concatenate([theta[None], _shifted(theta, np.pi / 2)], axis=0)
        s = stack.shape[0]
        amps = np.tile(latent_amps, (s, 1))
        mpqc_batch(amps, gen.mpqc, np.repeat(stack, nb, axis=0))
        probs = amps**2
        if shots is not None:
            probs = sample_counts(probs, shots, rng_for(t)) / shots
        raw = probs[:, :plen].reshape(s, nb, plen)
        norm = raw[0].sum(axis=1)
        if np.any(norm < 1e-12):
            raise DegenerateProjectionError("post-selection degenerate in gradient", float(norm.min()))
        x = raw[0] / norm[:, None]
        n = theta.size
        d_raw = (raw[1 : n + 1] - raw[n + 1 :]) / 2.0  # (n, B, P)
        d_x = (d_raw - x[None] * d_raw.sum(axis=2, keepdims=True)) / norm[None, :, None]
        g = dl_dx[:, t * plen : (t + 1) * plen]
        grads[t] = np.einsum("kbp,bp->k", d_x, g).reshape(theta.shape)
    return grads


def _disc_mlp_update(disc: MlpNetwork, opt, real: np.ndarray, fake: np.ndarray):
    d_real, c_real = classical.mlp_forward_cached(disc, real)
    d_fake, c_fake = classical.mlp_forward_cached(disc, fake)
    d_real, d_fake = d_real[:, 0], d_fake[:, 0]
    disc_loss, _ = gan_loss(d_real, d_fake)
    n = d_real.size
    g_real, _ = classical.mlp_backward(disc, c_real, (-1.0 / (_clamp(d_real) * n))[:, None])
    g_fake, _ = classical.mlp_backward(disc, c_fake, (1.0 / ((1.0 - _clamp(d_fake)) * n))[:, None])
    grads = [a + b for a, b in zip(g_real, g_fake)]
    disc.set_parameters(opt.step(disc.parameters(), grads))
    return disc_loss, float(d_real.mean()), float(d_fake.mean())


def train_patch_gan(gen: qgan.PatchGeneratorConfig, disc: MlpNetwork, cfg: TrainConfig,
                    task: Task, on_eval=None) -> TrainResult:
    """Quantum patch generator vs classical MLP discriminator.

    Per iteration: ``disc_steps`` backprop updates of D, then one shift-rule
    update of every sub-generator on the same latent batch, with D frozen.
    """
    if task.model_images.shape[1] != gen.image_dim:
        raise ValueError(f"dataset dimension {task.model_images.shape[1]} != generator {gen.image_dim}")
    streams = StreamFactory(cfg.seed)
    g_opt = _optimizer(cfg.gen_optimizer, cfg.lr_g, cfg)
    d_opt = _optimizer(cfg.disc_optimizer, cfg.lr_d, cfg)
    result = TrainResult(generator=gen, discriminator=disc, extra={"seed": cfg.seed})

    def step(k: int) -> dict:
        alpha = gen.latent.sample_angles(streams.stream(k, _LATENT), cfg.minibatch)
        min_p = 1.0
        for j in range(cfg.disc_steps):
            real = _sample_batch(task, streams, k * 16 + j, cfg.minibatch)
            fake, p = _patch_fake(gen, alpha, cfg, streams, k * 16 + j, _DSHOTS)
            min_p = min(min_p, p)
            _check_floor(p, cfg, "generator")
            disc_loss, d_real, d_fake = _disc_mlp_update(disc, d_opt, real, fake)
        shots_rng = None
        if cfg.shots is not None:
            shots_rng = lambda t: streams.stream(k, _GSHOTS, t)  # noqa: E731
        grad_fn = patch_generator_grad if cfg.gen_gradient == "shift" else patch_generator_chain_grad
        grads = grad_fn(gen, disc, alpha, cfg.generator_objective, cfg.shots, shots_rng)
        fake, _ = qgan.patch_images(gen, alpha)
        _, gen_loss = gan_loss([0.5], classical.mlp_forward(disc, fake)[:, 0], cfg.generator_objective)
        gen.params = g_opt.step([gen.params], [grads])[0]
        return {"disc_loss": disc_loss, "gen_loss": gen_loss, "d_real": d_real,
                "d_fake": d_fake, "postselect_min_prob": min_p}

    def evaluate(k: int) -> float:
        rng = streams.stream(k, _EVAL)
        alpha = gen.latent.sample_angles(rng, cfg.fd_samples)
        images, _ = qgan.patch_images(gen, alpha, shots=cfg.shots, rng=rng)
        images = task.to_eval(images)
        result.samples = images
        return fd_score(task.eval_images, images)

    return _run_loop(cfg, step, evaluate, result, on_eval)


# ---------------------------------------------------------------------------
# quantum batch GAN

def _batch_rows(config: qgan.BatchGanConfig, real: np.ndarray, alpha: np.ndarray):
    """Real and latent register rows shaped ``(1, B, 2**N_F)`` (normalised state)."""
    from .data import batch_feature_rows

    scale = 1.0 / np.sqrt(config.batch_size)
    real_rows = batch_feature_rows(real, config)[None] * scale
    fake_rows = qgan.batch_latent_amplitudes(config, alpha)[None] * scale
    return real_rows, fake_rows


def batch_readouts(config: qgan.BatchGanConfig, real_rows, latent_rows,
                   theta: Optional[np.ndarray] = None, gamma: Optional[np.ndarray] = None):
    """Batch-averaged discriminator outputs ``(d_real, d_fake, min_success)``.

    ``theta``/``gamma`` may be stacks ``(S, n, L)`` so that ``S`` shifted
    evaluations run in one pass; inputs are broadcast to match.
    """
    theta = config.gen_params if theta is None else theta
    gamma = config.disc_params if gamma is None else gamma
    s = max(theta.shape[0] if theta.ndim == 3 else 1, gamma.shape[0] if gamma.ndim == 3 else 1)
    gen_rows, g_success = qgan.generator_rows(config, np.repeat(latent_rows, s, axis=0)
                                              if theta.ndim == 3 else latent_rows, theta)
    if gen_rows.shape[0] != s:
        gen_rows = np.repeat(gen_rows, s, axis=0)
    d_fake, f_success = qgan.discriminator_rows(config, gen_rows, gamma)
    real = np.repeat(real_rows, s, axis=0) if gamma.ndim == 3 else real_rows
    d_real, r_success = qgan.discriminator_rows(config, real, gamma)
    if d_real.shape[0] != s:
        d_real = np.repeat(d_real, s)
    min_success = float(min(g_success.min(), f_success.min(), r_success.min()))
    return d_real, d_fake, min_success


def _shot_estimate(p: np.ndarray, shots: Optional[int], rng) -> np.ndarray:
    """Binomial shot estimate of single-qubit |0> probabilities."""
    if shots is None:
        return p
    return rng.binomial(shots, np.clip(p, 0.0, 1.0)) / shots


def batch_disc_loss_fn(config, real_rows, latent_rows, shots=None, rng=None):
    def loss(stack):
        dr, df, _ = batch_readouts(config, real_rows, latent_rows, gamma=stack)
        return _disc_loss_rows(_shot_estimate(dr, shots, rng), _shot_estimate(df, shots, rng))
    return loss


def batch_gen_loss_fn(config, real_rows, latent_rows, objective="minimax", shots=None, rng=None):
    def loss(stack):
        _, df, _ = batch_readouts(config, real_rows, latent_rows, theta=stack)
        return _gen_loss_rows(_shot_estimate(df, shots, rng)[:, None], objective)
    return loss


def batch_readout_grads(config: qgan.BatchGanConfig, real_rows, latent_rows) -> dict:
    """Shift-rule gradients of the batch-averaged read-outs themselves.

    Keys: ``d_real/gamma``, ``d_fake/gamma``, ``d_fake/theta``.
    """
    def fake_theta(stack):
        return batch_readouts(config, real_rows, latent_rows, theta=stack)[1]

    def fake_gamma(stack):
        return batch_readouts(config, real_rows, latent_rows, gamma=stack)[1]

    def real_gamma(stack):
        return batch_readouts(config, real_rows, latent_rows, gamma=stack)[0]

    return {
        "d_real/gamma": parameter_shift_grad(real_gamma, config.disc_params, vectorized=True),
        "d_fake/gamma": parameter_shift_grad(fake_gamma, config.disc_params, vectorized=True),
        "d_fake/theta": parameter_shift_grad(fake_theta, config.gen_params, vectorized=True),
    }


def train_batch_gan(config: qgan.BatchGanConfig, cfg: TrainConfig, task: Task, on_eval=None) -> TrainResult:
    """Quantum generator vs quantum discriminator, both updated by the shift rule.

    Each iteration processes one index-register batch of ``2**N_I`` real
    images and latents (``cfg.minibatch`` is ignored).
    """
    if task.model_images.shape[1] != config.image_dim:
        raise ValueError("dataset dimension does not match the data register")
    streams = StreamFactory(cfg.seed)
    g_opt = _optimizer(cfg.gen_optimizer, cfg.lr_g, cfg)
    d_opt = _optimizer(cfg.disc_optimizer, cfg.lr_d, cfg)
    result = TrainResult(generator=config, extra={"seed": cfg.seed})
    b = config.batch_size

    def step(k: int) -> dict:
        alpha = config.latent.sample_angles(streams.stream(k, _LATENT), b)
        min_p = 1.0
        for j in range(cfg.disc_steps):
            real = _sample_batch(task, streams, k * 16 + j, b)
            real_rows, latent_rows = _batch_rows(config, real, alpha)
            d_real, d_fake, p = batch_readouts(config, real_rows, latent_rows)
            min_p = min(min_p, p)
            _check_floor(p, cfg, "batch GAN")
            rng = streams.stream(k * 16 + j, _DSHOTS) if cfg.shots is not None else None
            fn = batch_disc_loss_fn(config, real_rows, latent_rows, cfg.shots, rng)
            grad = parameter_shift_grad(fn, config.disc_params, vectorized=True)
            disc_loss, _ = gan_loss([d_real[0]], [d_fake[0]])
            config.disc_params = d_opt.step([config.disc_params], [grad])[0]
        rng = streams.stream(k, _GSHOTS) if cfg.shots is not None else None
        fn = batch_gen_loss_fn(config, real_rows, latent_rows, cfg.generator_objective, cfg.shots, rng)
        grad = parameter_shift_grad(fn, config.gen_params, vectorized=True)
        _, df_now, _ = batch_readouts(config, real_rows, latent_rows)
        _, gen_loss = gan_loss([0.5], df_now, cfg.generator_objective)
        config.gen_params = g_opt.step([config.gen_params], [grad])[0]
        return {"disc_loss": disc_loss, "gen_loss": gen_loss, "d_real": float(d_real[0]),
                "d_fake": float(d_fake[0]), "postselect_min_prob": min_p}

    def evaluate(k: int) -> float:
        rng = streams.stream(k, _EVAL)
        alpha = config.latent.sample_angles(rng, cfg.fd_samples)
        images, _ = qgan.batch_images(config, alpha, shots=cfg.shots, rng=rng)
        images = task.to_eval(images)
        result.samples = images
        return fd_score(task.eval_images, images)

    return _run_loop(cfg, step, evaluate, result, on_eval)


# ---------------------------------------------------------------------------
# classical baselines

def _classical_forward(gen, noise):
    if isinstance(gen, MlpNetwork):
        return classical.mlp_forward_cached(gen, noise)
    return classical.cnn_forward_cached(gen, noise)


def _classical_backward(gen, cache, upstream):
    if isinstance(gen, MlpNetwork):
        return classical.mlp_backward(gen, cache, upstream)
    return classical.cnn_backward(gen, cache, upstream)


def _noise_dim(gen) -> int:
    return gen.layer_sizes[0] if isinstance(gen, MlpNetwork) else gen.noise_dim


def train_classical_gan(gen, disc: MlpNetwork, cfg: TrainConfig, task: Task, on_eval=None) -> TrainResult:
    """MLP or CNN generator vs MLP discriminator, alternating SGD steps.

    Noise is standard normal; the generator objective defaults to whatever
    ``cfg.generator_objective`` says (the presets use non-saturating).
    """
    streams = StreamFactory(cfg.seed)
    g_opt = _optimizer(cfg.gen_optimizer, cfg.lr_g, cfg)
    d_opt = _optimizer(cfg.disc_optimizer, cfg.lr_d, cfg)
    result = TrainResult(generator=gen, discriminator=disc, extra={"seed": cfg.seed})
    nd = _noise_dim(gen)

    def step(k: int) -> dict:
        noise = streams.stream(k, _LATENT).standard_normal((cfg.minibatch, nd))
        for j in range(cfg.disc_steps):
            real = _sample_batch(task, streams, k * 16 + j, cfg.minibatch)
            fake, _ = _classical_forward(gen, noise)
            disc_loss, d_real, d_fake = _disc_mlp_update(disc, d_opt, real, fake)
        fake, g_cache = _classical_forward(gen, noise)
        d_out, d_cache = classical.mlp_forward_cached(disc, fake)
        up = gen_loss_grad_wrt_dfake(d_out[:, 0], cfg.generator_objective)
        _, grad_images = classical.mlp_backward(disc, d_cache, up[:, None])
        grads, _ = _classical_backward(gen, g_cache, grad_images)
        _, gen_loss = gan_loss([0.5], d_out[:, 0], cfg.generator_objective)
        gen.set_parameters(g_opt.step(gen.parameters(), grads))
        return {"disc_loss": disc_loss, "gen_loss": gen_loss, "d_real": d_real,
                "d_fake": d_fake, "postselect_min_prob": None}

    def evaluate(k: int) -> float:
        noise = streams.stream(k, _EVAL).standard_normal((cfg.fd_samples, nd))
        images = task.to_eval(_classical_forward(gen, noise)[0])
        result.samples = images
        return fd_score(task.eval_images, images)

    return _run_loop(cfg, step, evaluate, result, on_eval)


# ---------------------------------------------------------------------------
# MMD experiment

@dataclass
class MmdConfig:
    mu: float = 15.5
    sigma: float = 4.0
    support: int = 32
    bandwidths: tuple = (0.5, 1.0, 2.0, 4.0)
    iterations: int = 800
    lr: float = 0.01
    n_layers: int = 5
    shots: Optional[int] = 3000
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if any(s <= 0 for s in self.bandwidths) or not self.bandwidths:
            raise ValueError("bandwidths must be positive")
        n = int(round(np.log2(self.support)))
        if 2**n != self.support:
            raise ValueError("support size must be a power of two")

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.support)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bandwidths"] = list(self.bandwidths)
        return d


def discrete_gaussian(mu: float, sigma: float, support: int = 32) -> np.ndarray:
    x = np.arange(support)
    p = np.exp(-((x - mu) ** 2) / (2 * sigma**2))
    return p / p.sum()


def mixture_kernel(support: int, bandwidths: Sequence[float]) -> np.ndarray:
    """K(x, y) = mean_i exp(-|x - y|^2 / (2 sigma_i^2)) on the integer support."""
    x = np.arange(support, dtype=np.float64)
    d2 = (x[:, None] - x[None, :]) ** 2
    return np.mean([np.exp(-d2 / (2 * s**2)) for s in bandwidths], axis=0)


def mmd_loss(q, p, kernel: np.ndarray) -> float:
    diff = np.asarray(q, dtype=np.float64) - np.asarray(p, dtype=np.float64)
    return float(diff @ kernel @ diff)


def _born_probs(spec: MpqcSpec, stack: np.ndarray) -> np.ndarray:
    """Outcome distributions of the circuit on |0...0> for a parameter stack."""
    s = stack.shape[0]
    amps = np.zeros((s, 2**spec.n_qubits))
    amps[:, 0] = 1.0
    mpqc_batch(amps, spec, stack)
    return amps**2


def mmd_grad(spec: MpqcSpec, theta: np.ndarray, target: np.ndarray, kernel: np.ndarray,
             shots: Optional[int] = None, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the MMD loss; returns ``(grad, q)`` with ``q`` the current estimate.

    ``dL/dq = 2 K (q - p)`` is combined with exact shift-rule derivatives of
    every outcome probability (the outcome probabilities are expectation-linear).
    """
    from .ansatz import _shifted

    stack = np.concatenate([theta[None], _shifted(theta, np.pi / 2)], axis=0)
    probs = _born_probs(spec, stack)
    if shots is not None:
        probs = sample_counts(probs, shots, rng) / shots
    q = probs[0]
    n = theta.size
    dq = (probs[1 : n + 1] - probs[n + 1 :]) / 2.0  # (n, support)
    dl_dq = 2.0 * kernel @ (q - target)
    return (dq @ dl_dq).reshape(theta.shape), q


@dataclass
class MmdResult:
    losses: list
    tv: list
    q: np.ndarray
    target: np.ndarray
    theta: np.ndarray


def train_mmd_gaussian(cfg: MmdConfig) -> MmdResult:
    """Fit a 5-qubit Born machine to a discrete Gaussian by MMD descent."""
    spec = MpqcSpec(cfg.n_qubits, cfg.n_layers)
    streams = StreamFactory(cfg.seed)
    theta = spec.init_params(streams.stream(0, _INIT))
    target = discrete_gaussian(cfg.mu, cfg.sigma, cfg.support)
    kernel = mixture_kernel(cfg.support, cfg.bandwidths)
    opt = classical.make_optimizer(cfg.optimizer, cfg.lr)
    losses, tvs = [], []
    for k in range(1, cfg.iterations + 1):
        rng = streams.stream(k, _GSHOTS) if cfg.shots is not None else None
        grad, q_est = mmd_grad(spec, theta, target, kernel, cfg.shots, rng)
        q_exact = _born_probs(spec, theta[None])[0]
        losses.append(mmd_loss(q_exact, target, kernel))
        tvs.append(tv_distance(q_exact, target))
        theta = opt.step([theta], [grad])[0]
    q_final = _born_probs(spec, theta[None])[0]
    return MmdResult(losses, tvs, q_final, target, theta)
