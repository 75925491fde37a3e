"""Command-line entry point: ``qganlab {gen-data,train,eval-fd,sweep}``.

Every ``train`` run writes a resolved config document (``config.json``) that
reproduces the run exactly when passed back via ``--config``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import heapq
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from . import classical, data, qgan, training
from .metrics import box_stats, fd_score
from .rng import RNG_ALGORITHM, StreamFactory

SCHEMA_VERSION = 1
PRESETS = ("bar-patch", "bar-batch", "digits-patch", "bar-mlp", "bar-cnn", "gaussian-mmd")
N_PGM = 16

# classical generator shapes per nominal parameter count
MLP_SHAPES = {10: (1, 1, 4), 18: (2, 2, 4), 60: (2, 8, 4)}
CNN_SHAPES = {10: (1, 2), 18: (1, 3), 57: (2, 8)}  # (noise_dim, channels)

SWEEP_LRS = (1e-4, 5e-3)
SWEEP_MOMENTA = (0.5, 0.9)
SWEEP_FULL_LRS = (1e-4, 5e-4, 1e-3, 5e-3)
SWEEP_FULL_MOMENTA = (0.5, 0.7, 0.9, 0.99)
TOP_K = 5


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# presets and config documents

def preset_config(name: str, seed: int = 0) -> dict:
    """The full config document for a preset, before flag overrides."""
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    doc = {"schema_version": SCHEMA_VERSION, "preset": name, "seed": seed,
           "rng_algorithm": RNG_ALGORITHM, "n_samples": 1000}
    bar_data = {"task": "bar", "m": 2, "n_examples": 1000, "data_seed": 0, "path": None}
    if name == "gaussian-mmd":
        doc["mmd"] = training.MmdConfig(seed=seed).to_dict()
        return doc
    train = training.TrainConfig(seed=seed)
    if name == "bar-patch":
        doc["data"] = bar_data
        doc["model"] = qgan.PatchGeneratorConfig(1, 3, 1, 3).to_dict()
        doc["discriminator"] = {"hidden": list(classical.BAR_DISCRIMINATOR[1:-1])}
    elif name == "bar-batch":
        doc["data"] = bar_data
        doc["model"] = qgan.BatchGanConfig(0, 2, 1, 1, 3, 4).to_dict()
    elif name == "digits-patch":
        doc["data"] = {"task": "digits", "path": None, "classes": [0, 1]}
        doc["model"] = qgan.PatchGeneratorConfig(4, 5, 1, 5).to_dict()
        doc["discriminator"] = {"hidden": list(classical.DIGITS_DISCRIMINATOR[1:-1])}
    else:  # classical baselines
        doc["data"] = bar_data
        kind = "mlp" if name == "bar-mlp" else "cnn"
        doc["model"] = {"kind": kind, "gen_params": 18}
        doc["discriminator"] = {"hidden": list(classical.BAR_DISCRIMINATOR[1:-1])}
        train = training.TrainConfig(seed=seed, lr_g=5e-3, lr_d=5e-3, momentum=0.9,
                                     generator_objective="non_saturating", shots=None)
    if name in ("bar-patch", "bar-batch", "digits-patch"):
        train.shots = 3000
    doc["train"] = train.to_dict()
    return doc


def apply_override(doc: dict, assignment: str) -> None:
    """``section.key=value`` with ``value`` parsed as JSON when possible."""
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"unknown config section {p!r}")
        node = node[p]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def _train_config(doc: dict) -> training.TrainConfig:
    try:
        return training.TrainConfig(**doc["train"])
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid train section: {err}") from None


def _model_from_doc(doc: dict):
    m = dict(doc["model"])
    kind = m.pop("kind")
    if kind == "patch":
        if m.get("entangler") is not None:
            m["entangler"] = tuple(tuple(p) for p in m["entangler"])
        if m.get("latent_active") is not None:
            m["latent_active"] = tuple(m["latent_active"])
        return qgan.PatchGeneratorConfig(**m)
    if kind == "batch":
        if m.get("latent_active") is not None:
            m["latent_active"] = tuple(m["latent_active"])
        return qgan.BatchGanConfig(**m)
    raise UsageError(f"unknown model kind {kind!r}")


def load_task(doc: dict) -> training.Task:
    spec = doc["data"]
    if spec["task"] == "bar":
        m = int(spec["m"])
        if spec.get("path"):
            images = data.read_images_csv(spec["path"])
        else:
            images = data.generate_bar_dataset(
                data.BarDatasetConfig(m, int(spec["n_examples"]), int(spec["data_seed"])))
        return training.Task(data.bar_to_distribution(images, m), images,
                             lambda x, m=m: data.bar_from_distribution(x, m), "bar")
    if spec["task"] == "digits":
        ds = data.load_optdigits(spec.get("path"), tuple(spec.get("classes", (0, 1))))
        n_patches = int(doc["model"].get("n_patches", 1))
        model = data.to_patch_distribution(ds.images, n_patches)
        return training.Task(model, model, lambda x: x, "digits")
    raise UsageError(f"unknown data task {spec['task']!r}")


def _classical_generator(doc: dict, rng):
    m = doc["model"]
    size = int(m["gen_params"])
    if m["kind"] == "mlp":
        if size not in MLP_SHAPES:
            raise UsageError(f"MLP generator size must be one of {sorted(MLP_SHAPES)}")
        return classical.MlpNetwork.init(MLP_SHAPES[size], rng, "softmax")
    if size not in CNN_SHAPES:
        raise UsageError(f"CNN generator size must be one of {sorted(CNN_SHAPES)}")
    return classical.CnnGenerator.init(*CNN_SHAPES[size], rng)


def run_config(doc: dict, on_eval=None):
    """Build everything a config document describes and train it.

    Returns ``(result, model)``; raises :class:`training.TrainingAborted`.
    """
    seed = int(doc["seed"])
    if "mmd" in doc:
        cfg = training.MmdConfig(**{**doc["mmd"], "bandwidths": tuple(doc["mmd"]["bandwidths"]),
                                    "seed": seed})
        return training.train_mmd_gaussian(cfg), None
    streams = StreamFactory(seed)
    task = load_task(doc)
    cfg = _train_config(doc)
    if cfg.seed != seed:
        cfg.seed = seed
    kind = doc["model"]["kind"]
    if kind in ("mlp", "cnn"):
        gen = _classical_generator(doc, streams.stream(0, 6, 1))
        disc = classical.MlpNetwork.init((task.model_images.shape[1], *doc["discriminator"]["hidden"], 1),
                                         streams.stream(0, 6, 2))
        return training.train_classical_gan(gen, disc, cfg, task, on_eval), gen
    model = _model_from_doc(doc)
    model.init_params(streams.stream(0, 6, 1))
    if kind == "batch":
        return training.train_batch_gan(model, cfg, task, on_eval), model
    disc = classical.build_patch_discriminator(model.image_dim, streams.stream(0, 6, 2),
                                               doc["discriminator"]["hidden"])
    return training.train_patch_gan(model, disc, cfg, task, on_eval), model


# ---------------------------------------------------------------------------
# outputs

def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint(path, doc: dict, result, model, iteration: int) -> None:
    seed = int(doc["seed"])
    if isinstance(model, (qgan.PatchGeneratorConfig, qgan.BatchGanConfig)):
        extra = {}
        if result is not None and result.discriminator is not None:
            extra["discriminator"] = result.discriminator.to_dict()
        qgan.save_checkpoint(path, model, iteration, seed, extra)
    elif model is not None:
        _write_json(path, {"generator": model.to_dict(),
                           "discriminator": result.discriminator.to_dict(),
                           "iteration": iteration, "master_seed": seed,
                           "rng_algorithm": RNG_ALGORITHM})


def write_mmd_outputs(out: str, result: training.MmdResult, seed: int) -> None:
    with open(os.path.join(out, "records.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "mmd_loss", "tv", "seed"))
        for k, (loss, tv) in enumerate(zip(result.losses, result.tv), start=1):
            w.writerow((k, repr(loss), repr(tv), seed))
    with open(os.path.join(out, "samples", "distribution.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "q", "target"))
        for x, (q, p) in enumerate(zip(result.q, result.target)):
            w.writerow((x, repr(float(q)), repr(float(p))))
    _write_json(os.path.join(out, "checkpoints", "final.json"),
                {"theta": result.theta.tolist(), "iteration": len(result.losses),
                 "master_seed": seed, "rng_algorithm": RNG_ALGORITHM})


def write_samples(out: str, doc: dict, result, model) -> None:
    if result.samples is None:
        # evaluations disabled; draw the sample set once from a dedicated stream
        rng = StreamFactory(int(doc["seed"])).stream(0, 7)
        n = int(doc.get("n_samples", 1000))
        if isinstance(model, (qgan.PatchGeneratorConfig, qgan.BatchGanConfig)):
            images = qgan.generate_images(model, n, rng)
        else:
            noise_dim = model.layer_sizes[0] if isinstance(model, classical.MlpNetwork) else model.noise_dim
            images = (classical.mlp_forward(model, rng.standard_normal((n, noise_dim)))
                      if isinstance(model, classical.MlpNetwork)
                      else classical.cnn_generator_forward(model, rng.standard_normal((n, noise_dim))))
        images = load_task(doc).to_eval(images)
    else:
        images = result.samples
    samples = os.path.join(out, "samples")
    data.write_images_csv(os.path.join(samples, "samples.csv"), images)
    side = int(round(np.sqrt(images.shape[1])))
    scale = 1.0
    if doc["data"]["task"] == "digits":
        scale = 1.0 / max(float(images.max()), 1e-12)  # stretch patch distributions for viewing
    for i, img in enumerate(images[:N_PGM]):
        data.write_pgm(os.path.join(samples, f"sample_{i:03d}.pgm"), img, side, scale)


def train_to_dir(doc: dict, out: str) -> int:
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(out, "samples"), exist_ok=True)
    _write_json(os.path.join(out, "config.json"), doc)
    try:
        result, model = run_config(doc)
    except training.TrainingAborted as err:
        partial = err.partial
        training.write_records_csv(os.path.join(out, "records.csv"), partial)
        if partial.generator is not None:
            _checkpoint(os.path.join(out, "checkpoints", "abort.json"), doc, partial,
                        partial.generator, err.iteration)
        print(f"training aborted: {err}", file=sys.stderr)
        return 3
    if "mmd" in doc:
        write_mmd_outputs(out, result, int(doc["seed"]))
        print(json.dumps({"final_tv": result.tv[-1], "final_mmd": result.losses[-1]}))
        return 0
    training.write_records_csv(os.path.join(out, "records.csv"), result)
    _checkpoint(os.path.join(out, "checkpoints", "final.json"), doc, result, model,
                len(result.records))
    write_samples(out, doc, result, model)
    summary = {"iterations": len(result.records),
               "fd": {str(k): v for k, v in sorted(result.evaluations.items())}}
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    if args.task == "bar":
        if args.m is None or args.m < 2:
            raise UsageError("--m must be at least 2 for bar images")
        if args.n < 1:
            raise UsageError("--n must be positive")
        images = data.generate_bar_dataset(data.BarDatasetConfig(args.m, args.n, args.seed))
        snapshot = {"task": "bar", "m": args.m, "n_examples": args.n, "data_seed": args.seed}
    else:
        ds = data.load_optdigits(args.source)
        images = ds.images
        snapshot = {"task": "digits", "source": args.source or data.FIXTURE_NAME,
                    "classes": [0, 1], "n_examples": len(ds)}
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    data.write_images_csv(args.out, images)
    _write_json(args.out + ".config.json", {"schema_version": SCHEMA_VERSION, **snapshot})
    return 0


def _resolve_train_doc(args) -> dict:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise UsageError(f"config schema_version must be {SCHEMA_VERSION}")
        if args.preset and args.preset != doc.get("preset"):
            raise UsageError("--preset disagrees with the preset recorded in --config")
    elif args.preset:
        doc = preset_config(args.preset, 0)
    else:
        raise UsageError("train needs --preset or --config")
    doc = copy.deepcopy(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    section = "mmd" if "mmd" in doc else "train"
    doc[section]["seed"] = doc["seed"]
    if args.iterations is not None:
        doc[section]["iterations"] = args.iterations
    if args.exact and args.shots is not None:
        raise UsageError("--exact and --shots are mutually exclusive")
    if args.exact:
        doc[section]["shots"] = None
    if args.shots is not None:
        doc[section]["shots"] = args.shots
    if args.timing and section == "train":
        doc["train"]["record_timing"] = True
    if args.data:
        doc.setdefault("data", {})["path"] = args.data
    if args.gen_params is not None:
        if doc["model"].get("kind") not in ("mlp", "cnn"):
            raise UsageError("--gen-params applies to the classical presets only")
        doc["model"]["gen_params"] = args.gen_params
    for assignment in args.set or ():
        apply_override(doc, assignment)
    return doc


def cmd_train(args) -> int:
    doc = _resolve_train_doc(args)
    return train_to_dir(doc, args.out)


def cmd_eval_fd(args) -> int:
    real = data.read_images_csv(args.real)
    gen = data.read_images_csv(args.generated)
    if real.shape[1] != gen.shape[1]:
        raise UsageError(f"dimension mismatch: {real.shape[1]} vs {gen.shape[1]}")
    report = {"fd": fd_score(real, gen), "n_real": len(real), "n_generated": len(gen)}
    if args.chunks:
        chunks = np.array_split(gen, args.chunks)
        if min(len(c) for c in chunks) < 2:
            raise UsageError("too many chunks for the generated sample count")
        values = [fd_score(real, c) for c in chunks]
        report["chunk_fd"] = values
        report["box"] = box_stats(values).to_dict()
    print(json.dumps(report, indent=2))
    return 0


def _sweep_cell(job):
    """One grid cell: train, keep the TOP_K lowest-FD snapshots."""
    doc, out = job
    kept: list = []

    def on_eval(it, fd, result):
        snap = {"iteration": it, "fd": fd, "generator": result.generator.to_dict(),
                "discriminator": result.discriminator.to_dict()}
        item = (-fd, it, json.dumps(snap))
        if len(kept) < TOP_K:
            heapq.heappush(kept, item)
        else:
            heapq.heappushpop(kept, item)

    result, _ = run_config(doc, on_eval)
    os.makedirs(out, exist_ok=True)
    best = sorted(kept, key=lambda t: (-t[0], t[1]))
    for rank, (_, it, snap) in enumerate(best):
        with open(os.path.join(out, f"top{rank + 1}_iter{it:04d}.json"), "w") as fh:
            fh.write(snap)
    fds = result.evaluations
    return {"best_fd": min(fds.values()), "final_fd": fds[max(fds)]}


def sweep_grid(full: bool, lrs=None, momenta=None):
    lrs = lrs or (SWEEP_FULL_LRS if full else SWEEP_LRS)
    momenta = momenta or (SWEEP_FULL_MOMENTA if full else SWEEP_MOMENTA)
    return [(lr, mom) for lr in lrs for mom in momenta]


def cmd_sweep(args) -> int:
    if args.preset not in ("bar-mlp", "bar-cnn"):
        raise UsageError("sweep covers the classical presets bar-mlp and bar-cnn")
    sizes = args.gen_params or [preset_config(args.preset)["model"]["gen_params"]]
    jobs, cells = [], []
    for size in sizes:
        for lr, mom in sweep_grid(args.full, args.lr, args.momentum):
            doc = preset_config(args.preset, args.seed)
            doc["model"]["gen_params"] = size
            doc["train"].update(lr_g=lr, lr_d=lr, momentum=mom, seed=args.seed)
            if args.iterations is not None:
                doc["train"]["iterations"] = args.iterations
            name = f"p{size}_lr{lr:g}_m{mom:g}"
            jobs.append((doc, os.path.join(args.out, name)))
            cells.append((size, lr, mom))
    os.makedirs(args.out, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("preset", "gen_params", "lr", "momentum", "best_fd", "final_fd", "seed"))
        for (size, lr, mom), res in zip(cells, results):
            w.writerow((args.preset, size, repr(lr), repr(mom), repr(res["best_fd"]),
                        repr(res["final_fd"]), args.seed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qganlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a dataset CSV")
    g.add_argument("--task", choices=("bar", "digits"), required=True)
    g.add_argument("--m", type=int, default=2)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--source", help="optdigits file (digits task; default: bundled subset)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a training preset")
    t.add_argument("--preset", choices=PRESETS)
    t.add_argument("--config", help="resolved config.json from an earlier run")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--shots", type=int)
    t.add_argument("--exact", action="store_true", help="exact probabilities (no shot noise)")
    t.add_argument("--data", help="dataset CSV instead of the preset's generated data")
    t.add_argument("--gen-params", type=int, help="classical generator size")
    t.add_argument("--timing", action="store_true", help="fill the elapsed_ms column")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config field (JSON value)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-fd", help="FD between two sample CSVs")
    e.add_argument("real")
    e.add_argument("generated")
    e.add_argument("--chunks", type=int, default=0)
    e.set_defaults(func=cmd_eval_fd)

    s = sub.add_parser("sweep", help="learning-rate/momentum grid for the classical baselines")
    s.add_argument("--preset", choices=("bar-mlp", "bar-cnn"), required=True)
    s.add_argument("--gen-params", type=int, action="append")
    s.add_argument("--lr", type=float, action="append")
    s.add_argument("--momentum", type=float, action="append")
    s.add_argument("--full", action="store_true", help="the full grid instead of the reduced one")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"qganlab: error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"qganlab: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
