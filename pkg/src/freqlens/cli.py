"""Command-line driver for the desk-scale experiments.

Subcommands::

    train      train a standard or adversarially trained network
    attack     attack a batch, save the adversarial batch and a report
    rct        relative DCT change map between two batches
    ammd       average MMD between two batches
    attribute  Occluded Frequency profiles, per image or per class
    robustify  robust / non-robust counterparts and their spectral difference
    verify     transform, bound and file-format self checks

Every run writes ``manifest.json`` into ``--out`` with the package and library
versions, the seed, the full argument set and SHA-256 hashes of every input
file. Exit codes: 0 success, 1 an internal check failed, 2 usage error,
3 training diverged, 4 unreadable or missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiment as ex
from .attacks import KINDS, AttackConfig, run_attack
from .attribution import (
    attribution_profile,
    band_share,
    class_average_profiles,
    grouped_profiles_to_csv,
    low_band_cutoff,
    profile_to_csv,
)
from .datasets import FormatError, LabeledDataset, load_batch, load_cifar10, save_batch
from .metrics import MmdConfig, ammd, band_mass_fraction, band_means, level_means, map_to_csv, map_to_pgm, rct, write_rows
from .model import ConvNet, TrainConfig, TrainingDivergedError, evaluate, load_model, save_model, train
from .robustgen import RobustGenConfig, counterpart_spectrum_diff, generate_counterparts
from .spectral import (
    dct2_forward,
    dct2_inverse,
    dft_forward,
    dft_inverse,
    fourier_basis_sum,
    l1_lower_bound_check,
)

log = logging.getLogger("freqlens")

ROBUSTIFY_CHUNK = 16

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED, EXIT_INPUT = 0, 1, 2, 3, 4


class InputError(Exception):
    """A referenced input file is missing or unreadable."""


class CheckFailed(Exception):
    """An internal invariant did not hold; artifacts were still written."""


# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects inputs, outputs and settings for the manifest of one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.results: dict = {}

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise InputError(f"no such file or directory: {p}")
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            self.inputs[str(f)] = _sha256(f)
        return p

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def manifest(self, status: str) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": self.args.command,
            "status": status,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "arguments": config,
            "versions": {
                "freqlens": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "inputs": self.inputs,
            "outputs": self.outputs,
            "results": self.results,
        }


def _load_data(run: Run, source: str, split: str, args) -> LabeledDataset:
    if source == "synthetic":
        return ex.train_set() if split == "train" else ex.test_set()
    path = run.input(source)
    try:
        if path.is_file() and path.read_bytes()[:4] == b"FQL1":
            return load_batch(path)
        classes = [int(c) for c in args.classes.split(",")] if getattr(args, "classes", None) else None
        return load_cifar10(path, classes=classes, limit=getattr(args, "limit", None), grayscale=getattr(args, "grayscale", False))
    except FormatError as exc:
        raise InputError(str(exc)) from exc


def _load_net(run: Run, path: str) -> ConvNet:
    p = run.input(path)
    try:
        return load_model(p)
    except ValueError as exc:
        raise InputError(f"{p}: {exc}") from exc


def _load_batch(run: Run, path: str) -> LabeledDataset:
    p = run.input(path)
    try:
        return load_batch(p)
    except FormatError as exc:
        raise InputError(str(exc)) from exc


def _head(ds: LabeledDataset, n: int | None) -> LabeledDataset:
    return ds if n is None else ds.head(min(n, len(ds)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))


# subcommands


def cmd_train(run: Run, args) -> None:
    data = _load_data(run, args.data, "train", args)
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
        adversarial=args.adv, adv_norm=args.norm, adv_epsilon=args.eps, adv_steps=args.adv_steps,
    )
    net0 = ConvNet.initialize(data.image_shape, data.num_classes, seed=args.seed)
    net, history = train(net0, data, cfg)
    save_model(net, run.path(args.model_name))
    write_rows(
        run.path("metrics.csv"), ["epoch", "loss", "train_accuracy", "batch_accuracy"],
        [[m.epoch, repr(m.loss), repr(m.train_accuracy), repr(m.batch_accuracy)] for m in history],
    )
    run.results.update(
        train_config=asdict(cfg),
        train_accuracy=evaluate(net, data),
        fingerprint=net.fingerprint(),
    )


def _attack_config(args) -> AttackConfig:
    defaults = AttackConfig()
    return AttackConfig(
        kind=args.kind,
        norm=args.norm or defaults.norm,
        epsilon=defaults.epsilon if args.eps is None else args.eps,
        steps=defaults.steps if args.steps is None else args.steps,
        step_size=defaults.step_size if args.step_size is None else args.step_size,
        cw_c=args.cw_c,
        cw_kappa=args.cw_kappa,
        simba_basis=args.basis,
        seed=args.seed,
    )


def cmd_attack(run: Run, args) -> None:
    net = _load_net(run, args.model)
    data = _head(_load_data(run, args.data, "test", args), args.n)
    cfg = _attack_config(args)
    report = run_attack(net, data.images, data.labels, cfg, threads=args.threads)
    adv = LabeledDataset(report.adversarial, data.labels, data.class_names)
    save_batch(adv, run.path("adversarial.fql"), provenance={"attack": asdict(cfg), "model": net.fingerprint()})
    run.outputs.append("adversarial.fql.json")
    save_batch(data, run.path("original.fql"), provenance={"source": args.data})
    run.outputs.append("original.fql.json")
    report.to_json(run.path("report.json"))
    run.results.update(report.summary())
    if cfg.kind != "cw":
        dist = {"linf": report.linf, "l2": report.l2}[cfg.norm]
        if len(dist) and dist.max() > cfg.epsilon + 1e-9:
            raise CheckFailed(f"distortion {dist.max()} exceeds budget {cfg.epsilon}")
    if report.adversarial.size and (report.adversarial.min() < 0 or report.adversarial.max() > 1):
        raise CheckFailed("adversarial pixels left [0, 1]")


def _pair(run: Run, args) -> tuple[np.ndarray, np.ndarray]:
    a = _load_batch(run, args.original).images
    b = _load_batch(run, args.perturbed).images
    if a.shape != b.shape:
        raise InputError(f"batches differ in shape: {a.shape} vs {b.shape}")
    return a, b


def cmd_rct(run: Run, args) -> None:
    a, b = _pair(run, args)
    m = rct(a, b, tau=args.tau)
    map_to_csv(m.values, run.path("rct.csv"))
    map_to_pgm(m.values, run.path("rct.pgm"))
    run.outputs.append("rct.pgm.json")
    write_rows(run.path("rct_levels.csv"), ["level", "mean_rct"], [[i, repr(float(v))] for i, v in enumerate(level_means(m.values))])
    h, w = m.values.shape[-2:]
    low, high = band_means(m.values, (h + w - 2) // 4, -(-(h + w - 2) // 2))
    run.results.update(n_pairs=m.n_samples, tau=m.tau, low_band_mean=low, high_band_mean=high, excluded_entries=int(m.n_samples * m.counts.size - m.counts.sum()))


def cmd_ammd(run: Run, args) -> None:
    a, b = _pair(run, args)
    cfg = MmdConfig(sigma=args.sigma, sample_space=args.sample_space)
    value = ammd(a, b, cfg)
    run.results.update(ammd=value, n_pairs=len(a), mmd_config=asdict(cfg), kernel="gaussian", estimator="biased V-statistic", dct="orthonormal DCT-II")
    _write_json(run.path("ammd.json"), run.results)


def cmd_attribute(run: Run, args) -> None:
    data = _head(_load_data(run, args.data, "test", args), args.n)
    nets = {}
    for spec in args.model:
        name, _, path = spec.rpartition("=")
        nets[name or Path(path).stem] = _load_net(run, path)
    h, w = data.image_shape[1:]
    cutoff = low_band_cutoff(h, w)
    meta = {"baseline": args.baseline, "unit": "anti-diagonal level u+v", "occluded_images_clamped": False, "low_band_cutoff": cutoff}
    if args.per_class:
        grouped = {
            name: class_average_profiles(net, data.images, data.labels, args.baseline, seed=args.seed, threads=args.threads)
            for name, net in nets.items()
        }
        grouped_profiles_to_csv(grouped, run.path("attribution_per_class.csv"), data.class_names)
        shares = {
            name: {data.class_names[c]: band_share(p.scores, cutoff) for c, p in profs.items()}
            for name, profs in grouped.items()
        }
        meta["low_band_share"] = shares
        meta["mean_low_band_share"] = {name: float(np.mean(list(s.values()))) for name, s in shares.items()}
    else:
        img, label = data.images[args.image], int(data.labels[args.image])
        c = label if args.target is None else args.target
        for name, net in nets.items():
            prof = attribution_profile(net, img, c, args.baseline, seed=args.seed)
            profile_to_csv(prof, run.path(f"attribution_{name}.csv"))
            meta.setdefault("low_band_share", {})[name] = band_share(prof.scores, cutoff)
        meta.update(image=args.image, class_index=c)
    run.results.update(meta)


def cmd_robustify(run: Run, args) -> None:
    net = _load_net(run, args.model)
    data = _head(_load_data(run, args.data, "test", args), args.n)
    pool = _load_data(run, args.pool, "train", args).images if args.pool else data.images
    cfg = RobustGenConfig(iterations=args.iterations, step_size=args.step_size, seed=args.seed)
    # fixed piece size, so that the output does not depend on --threads
    n, threads, size = len(data), max(1, args.threads), ROBUSTIFY_CHUNK
    pieces = [(s, data.images[s : s + size]) for s in range(0, n, size)]

    def work(piece):
        s, x = piece
        return generate_counterparts(net.representation, x, pool, cfg, first_index=s)

    if len(pieces) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex_pool:
            parts = list(ex_pool.map(work, pieces))
    else:
        parts = [work(p) for p in pieces]
    x_r = np.concatenate([p[0] for p in parts])
    obj = np.concatenate([p[1] for p in parts])
    starts = np.concatenate([p[2] for p in parts])
    diff = counterpart_spectrum_diff(data.images, x_r)
    save_batch(
        LabeledDataset(x_r, data.labels, data.class_names), run.path("counterparts.fql"),
        provenance={"model": net.fingerprint(), "config": asdict(cfg), "pool_indices": starts.tolist()},
    )
    run.outputs.append("counterparts.fql.json")
    map_to_csv(diff, run.path("spectrum_diff.csv"))
    map_to_pgm(diff, run.path("spectrum_diff.pgm"))
    run.outputs.append("spectrum_diff.pgm.json")
    h, w = data.image_shape[1:]
    run.results.update(
        n_pairs=n, transform="orthonormal DCT-II, mean absolute difference",
        low_band_mass_fraction=band_mass_fraction(diff, low_band_cutoff(h, w)),
        objective_mean=float(obj.mean()) if n else 0.0, objective_max=float(obj.max()) if n else 0.0,
    )


def verify_suite(seed: int = 0, pairs: int = 1000) -> dict:
    """Transform round trips, the basis-sum identity, the l1 bound and file round trips."""
    rng = np.random.default_rng(seed)
    checks = {}
    err = 0.0
    for d in (1, 2, 7, 16, 33):
        x = rng.normal(size=d)
        err = max(err, float(np.max(np.abs(dft_inverse(dft_forward(x)).real - x))))
    checks["dft_round_trip"] = {"max_abs_error": err, "holds": err < 1e-10}
    err = par = 0.0
    for shape in ((1, 8, 8), (3, 16, 16), (3, 32, 32)):
        x = rng.random((20, *shape))
        spec = dct2_forward(x)
        err = max(err, float(np.max(np.abs(dct2_inverse(spec) - x))))
        e_pix, e_spec = np.sum(x**2, axis=(1, 2, 3)), np.sum(spec**2, axis=(1, 2, 3))
        par = max(par, float(np.max(np.abs(e_spec - e_pix) / e_pix)))
    checks["dct_round_trip"] = {"max_abs_error": err, "holds": err < 1e-10}
    checks["parseval"] = {"max_rel_error": par, "holds": par < 1e-8}
    worst = 0.0
    ok = True
    for d in range(1, 65):
        ok &= abs(fourier_basis_sum(d, 0) - d) < 1e-10 * d
        for k in range(1, d):
            v = abs(fourier_basis_sum(d, k))
            worst = max(worst, v / d)
            ok &= v < 1e-10 * d
    checks["basis_sum"] = {"max_relative_magnitude": worst, "holds": bool(ok)}
    margin = np.inf
    for _ in range(pairs):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 33)), int(rng.integers(1, 33)))
        r = l1_lower_bound_check(rng.random(shape), rng.random(shape))
        margin = min(margin, r.lhs - r.rhs)
    checks["l1_lower_bound"] = {"pairs": pairs, "min_margin": float(margin), "holds": bool(margin >= -1e-9)}
    gap = 0.0
    for _ in range(50):
        x = rng.random((3, 8, 8))
        r = l1_lower_bound_check(x, x + rng.random(x.shape) * 0.1)
        gap = max(gap, r.lhs - r.rhs)
    checks["l1_bound_tight_same_sign"] = {"max_gap": gap, "holds": gap < 1e-9}
    with tempfile.TemporaryDirectory() as tmp:
        ds = LabeledDataset(rng.random((3, 1, 8, 8)), [0, 1, 1], ("a", "b"))
        save_batch(ds, Path(tmp) / "b.fql")
        back = load_batch(Path(tmp) / "b.fql")
        checks["fql1_round_trip"] = {"holds": back.images.tobytes() == ds.images.tobytes() and np.array_equal(back.labels, ds.labels)}
        net = ConvNet.initialize((1, 8, 8), 2, seed=seed)
        save_model(net, Path(tmp) / "m.fqlm")
        checks["model_round_trip"] = {"holds": load_model(Path(tmp) / "m.fqlm").fingerprint() == net.fingerprint()}
    for v in checks.values():
        v["holds"] = bool(v["holds"])
    return checks


def cmd_verify(run: Run, args) -> None:
    checks = verify_suite(args.seed, args.pairs)
    _write_json(run.path("verify.json"), checks)
    run.results["all_hold"] = all(c["holds"] for c in checks.values())
    if not run.results["all_hold"]:
        failed = [k for k, c in checks.items() if not c["holds"]]
        raise CheckFailed(f"checks failed: {', '.join(failed)}")


# argument parsing


def _threads_default() -> int:
    raw = os.environ.get("FREQLENS_THREADS")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _data_options(p: argparse.ArgumentParser, n: bool = True) -> None:
    p.add_argument("--data", default="synthetic", help="'synthetic', an FQL1 batch, or a CIFAR-10 .bin file or directory")
    p.add_argument("--classes", help="comma-separated CIFAR-10 class indices to keep")
    p.add_argument("--limit", type=int, help="read at most this many CIFAR-10 records")
    p.add_argument("--grayscale", action="store_true", help="convert CIFAR-10 images to luma")
    if n:
        p.add_argument("--n", type=int, help="use only the first N images")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand. The copy
    # attached to subcommands has no defaults, so it never overwrites a value
    # given earlier on the command line.
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(0), help="root seed for every random substream")
    common.add_argument("--threads", type=int, default=d(_threads_default()), help="worker threads (default: $FREQLENS_THREADS or 1)")
    common.add_argument("--out", default=d("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqlens", description="Frequency-domain robustness experiments.", parents=[_common(False)])
    common = _common(True)
    parser.add_argument("--version", action="version", version=f"freqlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a network")
    _data_options(p, n=False)
    p.add_argument("--epochs", type=int, default=ex.STANDARD.epochs)
    p.add_argument("--batch-size", type=int, default=ex.STANDARD.batch_size)
    p.add_argument("--lr", type=float, default=ex.STANDARD.learning_rate)
    p.add_argument("--adv", action="store_true", help="PGD adversarial training")
    p.add_argument("--norm", choices=("linf", "l2"), default="l2")
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--adv-steps", type=int, default=7)
    p.add_argument("--model-name", default="model.fqlm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", parents=[common], help="attack a batch")
    _data_options(p)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--norm", choices=("linf", "l2"))
    p.add_argument("--eps", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--cw-c", type=float, default=1.0)
    p.add_argument("--cw-kappa", type=float, default=0.0)
    p.add_argument("--basis", choices=("pixel", "dct"), default="dct")
    p.set_defaults(func=cmd_attack)

    for name, func, help_ in (("rct", cmd_rct, "relative DCT change map"), ("ammd", cmd_ammd, "average MMD")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--original", required=True, help="FQL1 batch of original images")
        p.add_argument("--perturbed", required=True, help="FQL1 batch of perturbed images, same order")
        if name == "rct":
            p.add_argument("--tau", type=float, default=1e-8)
        else:
            p.add_argument("--sigma", type=float, help="kernel bandwidth (default: median heuristic)")
            p.add_argument("--sample-space", choices=("pooled", "vectors"), default="pooled")
        p.set_defaults(func=func)

    p = sub.add_parser("attribute", parents=[common], help="Occluded Frequency attribution")
    _data_options(p)
    p.add_argument("--model", action="append", required=True, help="model file, optionally NAME=PATH; repeatable")
    p.add_argument("--baseline", choices=("zero", "random"), default="zero")
    p.add_argument("--per-class", action="store_true", help="class-averaged profiles in one grouped CSV")
    p.add_argument("--image", type=int, default=0, help="image index for a single profile")
    p.add_argument("--target", type=int, help="class of interest (default: the image's label)")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("robustify", parents=[common], help="generate counterparts")
    _data_options(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pool", help="images to start from (default: the targets themselves)")
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--step-size", type=float, default=1.0)
    p.set_defaults(func=cmd_robustify, n=50)

    p = sub.add_parser("verify", parents=[common], help="self checks")
    p.add_argument("--pairs", type=int, default=1000, help="random image pairs for the l1 bound")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    run = Run(args)
    status, code = "ok", EXIT_OK
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        args.func(run, args)
    except CheckFailed as exc:
        print(f"freqlens {args.command}: check failed: {exc}", file=sys.stderr)
        status, code = "check-failed", EXIT_CHECK
    except TrainingDivergedError as exc:
        print(f"freqlens {args.command}: training diverged: {exc}", file=sys.stderr)
        status, code = "diverged", EXIT_DIVERGED
    except (InputError, OSError) as exc:
        print(f"freqlens {args.command}: {exc}", file=sys.stderr)
        status, code = "input-error", EXIT_INPUT
    except ValueError as exc:
        print(f"freqlens {args.command}: invalid argument: {exc}", file=sys.stderr)
        status, code = "usage-error", EXIT_USAGE
    try:
        _write_json(run.out / "manifest.json", run.manifest(status))
    except OSError as exc:
        print(f"freqlens: could not write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
