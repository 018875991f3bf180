"""Acceptance criteria.

One test per criterion. Each prints a single PASS/FAIL line (also collected
into the terminal summary) and then asserts, so the outcome is visible even
when output capture is on. Models are trained from scratch into a fresh
cache directory for every session.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from freqlens import experiment as ex
from freqlens import tensor as T
from freqlens.attacks import run_attack
from freqlens.attribution import band_share, class_average_profiles, low_band_cutoff
from freqlens.datasets import load_batch, load_cifar10, save_batch
from freqlens.metrics import ammd, band_mass_fraction, band_means, mmd, rct
from freqlens.model import PARAM_NAMES, ConvNet, evaluate, load_model, save_model
from freqlens.robustgen import RobustGenConfig, counterpart_spectrum_diff, generate_counterparts
from freqlens.spectral import dct2_forward, dct2_inverse, dft_forward, dft_inverse, fourier_basis_sum, l1_lower_bound_check

from gradcheck import check, readout

RESULTS: dict[int, str] = {}


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


@pytest.fixture(scope="session")
def attacked(standard, test_data):
    net = standard[0]
    reports, seconds = {}, {}
    for name, cfg in ex.ATTACKS.items():
        with Clock() as c:
            reports[name] = run_attack(net, test_data.images, test_data.labels, cfg)
        seconds[name] = c.seconds
    return reports, seconds


# 1-4: numerical foundations


def test_criterion_01_transform_round_trips():
    rng = np.random.default_rng(1)
    dct_err = dft_err = parseval = 0.0
    with Clock() as c:
        for shape in ((1, 8, 8), (3, 16, 16), (3, 32, 32)):
            x = rng.random((100, *shape))
            spec = dct2_forward(x)
            dct_err = max(dct_err, float(np.abs(dct2_inverse(spec) - x).max()))
            e_pix = np.sum(x**2, axis=(1, 2, 3))
            e_spec = np.sum(spec**2, axis=(1, 2, 3))
            parseval = max(parseval, float(np.max(np.abs(e_spec - e_pix) / e_pix)))
            # 1-D DFT round trip on every row of every image
            for row in x.reshape(-1, shape[-1]):
                back = dft_inverse(dft_forward(row))
                dft_err = max(dft_err, float(np.abs(back - row).max()))
    ok = dct_err < 1e-10 and dft_err < 1e-10 and parseval < 1e-8 and c.seconds < 10
    verdict(1, "transform correctness", ok, f"DCT err {dct_err:.2e}, DFT err {dft_err:.2e}, Parseval rel {parseval:.2e}, {c.seconds:.1f}s")


def test_criterion_02_basis_sum():
    worst = 0.0
    dc_ok = True
    with Clock() as c:
        for d in range(1, 65):
            dc_ok &= abs(fourier_basis_sum(d, 0) - d) < 1e-10 * d
            for k in range(1, d):
                worst = max(worst, abs(fourier_basis_sum(d, k)) / d)
    ok = dc_ok and worst < 1e-10 and c.seconds < 5
    verdict(2, "Fourier basis sum", ok, f"max |sum|/d for k != 0: {worst:.2e}, k=0 gives d: {dc_ok}, {c.seconds:.2f}s")


def test_criterion_03_l1_lower_bound():
    rng = np.random.default_rng(3)
    margin = np.inf
    gap = 0.0
    with Clock() as c:
        for _ in range(10_000):
            shape = (int(rng.integers(1, 4)), int(rng.integers(1, 33)), int(rng.integers(1, 33)))
            r = l1_lower_bound_check(rng.random(shape), rng.random(shape))
            margin = min(margin, r.lhs - r.rhs)
        for i in range(100):
            x = rng.random((3, 32, 32))
            delta = rng.random(x.shape) * 0.1 * (1 if i % 2 else -1)
            r = l1_lower_bound_check(x, x + delta)
            gap = max(gap, r.lhs - r.rhs)
    ok = margin >= -1e-9 and gap < 1e-9 and c.seconds < 30
    verdict(3, "l1 lower bound", ok, f"min margin {margin:.3e} over 1e4 pairs, max gap {gap:.2e} on same-sign shifts, {c.seconds:.1f}s")


PRIMITIVES = {
    "conv2d": (lambda x, w, b: readout(T.conv2d(x, w, b)), [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
    "relu": (lambda x: readout(T.relu(x)), [(4, 8)]),
    "avgpool2d": (lambda x: readout(T.avgpool2d(x)), [(2, 2, 6, 6)]),
    "dense": (lambda x, w, b: readout(T.dense(x, w, b)), [(4, 6), (6, 3), (3,)]),
    "softmax_cross_entropy": (lambda z: T.softmax_cross_entropy(z, [0, 2, 1, 2, 0, 1]), [(6, 3)]),
    "add": (lambda a, b: readout(T.add(a, b)), [(4, 5), (4, 5)]),
    "scale": (lambda a: readout(T.scale(a, 0.7)), [(24,)]),
    "clamp": (lambda a: readout(T.clamp(a, -0.5, 0.5)), [(30,)]),
    "reshape": (lambda a: readout(T.reshape(a, (6, 4))), [(2, 3, 4)]),
    "flatten": (lambda a: readout(T.flatten(a)), [(2, 3, 4)]),
    "weighted_sum": (lambda a: T.weighted_sum(a, np.linspace(-1, 1, 24).reshape(4, 6)), [(4, 6)]),
    "l2_norms": (lambda a: readout(T.l2_norms(a)), [(4, 6)]),
}


def test_criterion_04_gradient_fidelity():
    rng = np.random.default_rng(4)
    errors = {}
    with Clock() as c:
        for name, (fn, shapes) in PRIMITIVES.items():
            errors[name] = check(fn, *[rng.normal(size=s) for s in shapes], n_coords=20, seed=4)
        net = ConvNet.initialize((1, 12, 12), 4, seed=4)
        x = rng.random((2, 1, 12, 12))

        def loss(xt, *params):
            return T.softmax_cross_entropy(net.logits_graph(xt, dict(zip(PARAM_NAMES, params))), [1, 3])

        errors["network"] = check(loss, x, *[net.params[k] for k in PARAM_NAMES], n_coords=20, seed=4)
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and c.seconds < 60
    verdict(4, "gradient fidelity", ok, f"{len(errors)} checks, worst rel err {errors[worst]:.2e} ({worst}), {c.seconds:.1f}s")


# 5-9: behaviour of the shipped desk-scale models


def test_criterion_05_attack_budgets(standard, test_data):
    net = standard[0]
    x, y = test_data.images[:50], test_data.labels[:50]
    problems = []
    with Clock() as c:
        for name, cfg in ex.ATTACKS.items():
            rep = run_attack(net, x, y, cfg)
            adv = rep.adversarial
            if adv.min() < 0 or adv.max() > 1:
                problems.append(f"{name} range")
            if name != "cw":
                dist = rep.linf if cfg.norm == "linf" else rep.l2
                if dist.max() > cfg.epsilon + 1e-9:
                    problems.append(f"{name} budget {dist.max():.6f} > {cfg.epsilon}")
    ok = not problems and c.seconds < 600
    verdict(5, "attack budget invariants", ok, f"4 attacks x 50 images, violations: {problems or 'none'}, {c.seconds:.1f}s")


def test_criterion_06_table_ordering(standard, test_data, attacked):
    net, _, train_seconds = standard
    reports, seconds = attacked
    x = test_data.images
    clean = evaluate(net, test_data)
    pgd, fgsm = reports["pgd"].accuracy_after, reports["fgsm"].accuracy_after
    ammd_cw = ammd(x, reports["cw"].adversarial)
    ammd_pgd = ammd(x, reports["pgd"].adversarial)
    total = train_seconds + sum(seconds.values())
    ok = clean > 0.70 and pgd < 0.05 and pgd < fgsm < clean and ammd_cw < ammd_pgd and total < 1800
    verdict(
        6, "accuracy and AMMD ordering", ok,
        f"clean {clean:.3f}, PGD {pgd:.3f}, FGSM {fgsm:.3f}, AMMD CW {ammd_cw:.4f} < PGD {ammd_pgd:.4f}, {total:.0f}s",
    )


def test_criterion_07_rct_high_frequency(test_data, attacked):
    reports, _ = attacked
    h, w = test_data.image_shape[1:]
    low_max, high_min = (h + w - 2) // 4, math.ceil((h + w - 2) / 2)
    parts, ok = [], True
    with Clock() as c:
        for name in ("pgd", "fgsm", "simba"):
            low, high = band_means(rct(test_data.images, reports[name].adversarial).values, low_max, high_min)
            ok &= high > low
            parts.append(f"{name} high {high:.2f} vs low {low:.2f}")
    ok = ok and c.seconds < 300
    verdict(7, "RCT concentrates at high frequency", ok, ", ".join(parts) + f", {c.seconds:.1f}s")


def _mean_share(net, data):
    cut = low_band_cutoff(*data.image_shape[1:])
    profiles = class_average_profiles(net, data.images, data.labels)
    return float(np.mean([band_share(p.scores, cut) for p in profiles.values()]))


def test_criterion_08_attribution_shift(standard, robust, test_data):
    with Clock() as c:
        base = _mean_share(standard[0], test_data)
        shares = {eps: _mean_share(net, test_data) for eps, (net, _) in robust.items()}
    seconds = c.seconds + sum(s for _, s in robust.values()) + standard[2]
    ok = all(s > base for s in shares.values()) and seconds < 1800
    detail = ", ".join(f"robust eps {e} {s:.4f}" for e, s in shares.items())
    verdict(8, "low-band attribution shift", ok, f"standard {base:.4f}, {detail}, {seconds:.0f}s")


def test_criterion_09_counterparts(standard, robust, test_data):
    pool = ex.train_set().images
    targets = test_data.images[:50]
    cut = low_band_cutoff(*test_data.image_shape[1:])
    cfg = RobustGenConfig(iterations=ex.COUNTERPART_ITERATIONS, seed=0)

    def fraction(net):
        x_r, _, _ = generate_counterparts(net.representation, targets, pool, cfg)
        return band_mass_fraction(counterpart_spectrum_diff(targets, x_r), cut)

    with Clock() as c:
        base = fraction(standard[0])
        fracs = {eps: fraction(net) for eps, (net, _) in robust.items()}
    ok = all(f > base for f in fracs.values()) and c.seconds < 900
    detail = ", ".join(f"robust eps {e} {f:.4f}" for e, f in fracs.items())
    verdict(9, "counterpart low-band mass", ok, f"{len(targets)} pairs, standard {base:.4f}, {detail}, {c.seconds:.0f}s")


# 10-11: metric axioms and file formats


def test_criterion_10_mmd_axioms():
    rng = np.random.default_rng(10)
    with Clock() as c:
        axioms = True
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(1, 20)), 2))
            b = rng.normal(1.0, 2.0, size=(int(rng.integers(1, 20)), 2))
            sigma = float(rng.uniform(0.2, 3.0))
            v = mmd(a, b, sigma)
            axioms &= mmd(a, a, sigma) == 0.0 and abs(v - mmd(b, a, sigma)) < 1e-12 and 0.0 <= v <= math.sqrt(2)
        # two single points: k(a,a) = k(b,b) = 1 and k(a,b) = exp(-1/2)
        oracle = math.sqrt(1.0 + 1.0 - 2.0 * math.exp(-0.5))
        value = mmd([0.0], [1.0], sigma=1.0)
    ok = axioms and abs(value - oracle) < 1e-6 and c.seconds < 5
    verdict(10, "MMD axioms", ok, f"identity/symmetry/range hold: {axioms}, two-point {value:.7f} vs {oracle:.7f}, {c.seconds:.2f}s")


def test_criterion_11_format_round_trips():
    with Clock() as c, tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = ex.test_set()
        save_batch(data, tmp / "b.fql")
        back = load_batch(tmp / "b.fql")
        fql_ok = back.images.tobytes() == data.images.tobytes() and np.array_equal(back.labels, data.labels)

        net = ConvNet.initialize((3, 16, 16), 10, seed=11)
        save_model(net, tmp / "m.fqlm")
        loaded = load_model(tmp / "m.fqlm")
        model_ok = all(loaded.params[k].tobytes() == net.params[k].tobytes() for k in PARAM_NAMES)

        record = bytes([7]) + np.random.default_rng(11).integers(0, 256, 3072, dtype=np.uint8).tobytes()
        (tmp / "r.bin").write_bytes(record)
        img = load_cifar10(tmp / "r.bin")
        rebuilt = bytes([int(img.labels[0])]) + np.round(img.images[0] * 255).astype(np.uint8).tobytes()
        cifar_ok = rebuilt == record
    ok = fql_ok and model_ok and cifar_ok and c.seconds < 5
    verdict(11, "format round trips", ok, f"FQL1 {fql_ok}, model {model_ok}, CIFAR-10 record {cifar_ok}, {c.seconds:.2f}s")
