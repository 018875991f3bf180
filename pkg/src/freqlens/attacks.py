"""Untargeted evasion attacks: FGSM, PGD, Carlini-Wagner (L2) and SimBA.

All attacks take one image (C, H, W) or a batch (N, C, H, W) with matching
labels and return adversarial images of the same shape, always inside
[0, 1]. FGSM, PGD and SimBA also stay inside the declared epsilon ball.

White-box attacks need ``net.input_gradient`` / ``net.logit_gradient``;
SimBA only ever calls ``net.forward_logits``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .spectral import dct2_inverse
from .rng import substream

__all__ = [
    "AttackConfig",
    "AttackReport",
    "project",
    "fgsm",
    "pgd",
    "pgd_step",
    "cw",
    "simba",
    "run_attack",
    "KINDS",
]

KINDS = ("fgsm", "pgd", "cw", "simba")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    norm: str = "linf"
    epsilon: float = 0.15
    steps: int = 20
    step_size: float = 0.01
    cw_c: float = 1.0
    cw_kappa: float = 0.0
    simba_basis: str = "dct"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; choose from {KINDS}")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < (0 if self.kind == "simba" else 1):
            raise ValueError(f"steps must be >= 1 for {self.kind}")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.cw_c <= 0:
            raise ValueError("cw_c must be > 0")
        if self.simba_basis not in ("pixel", "dct"):
            raise ValueError(f"simba_basis must be 'pixel' or 'dct', got {self.simba_basis!r}")


def _batch(images, labels) -> tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    y = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(x),)).copy()
    return x, y, single


def _check_finite(g: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite {what}")
    return g


def _flat_norms(d: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(d.reshape(len(d), -1) ** 2, axis=1))


def project(x_adv: np.ndarray, x: np.ndarray, norm: str, epsilon: float) -> np.ndarray:
    """Project a batch onto the epsilon ball around ``x`` and then onto [0, 1].

    Clipping to [0, 1] moves every coordinate toward ``x`` (which lies in the
    box), so it never leaves the ball.
    """
    delta = x_adv - x
    if norm == "linf":
        delta = np.clip(delta, -epsilon, epsilon)
    else:
        norms = _flat_norms(delta)
        factor = np.where(norms > epsilon, epsilon / np.where(norms > 0, norms, 1.0), 1.0)
        delta = delta * factor.reshape(-1, *([1] * (delta.ndim - 1)))
    return np.clip(x + delta, 0.0, 1.0)


def _ascent_direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    norms = _flat_norms(g)
    return g / np.where(norms > 0, norms, 1.0).reshape(-1, *([1] * (g.ndim - 1)))


def fgsm(net, images, labels, cfg: AttackConfig) -> np.ndarray:
    """One step of size epsilon along the loss-gradient sign (L-inf).

    With ``norm="l2"`` the step follows the normalized gradient instead.
    ``sign(0) == 0``, so pixels with zero gradient do not move.
    """
    x, y, single = _batch(images, labels)
    g = _check_finite(net.input_gradient(x, y, wrt="loss"), "gradient")
    out = project(x + cfg.epsilon * _ascent_direction(g, cfg.norm), x, cfg.norm, cfg.epsilon)
    return out[0] if single else out


def pgd_step(net, x_adv: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    g = _check_finite(net.input_gradient(x_adv, y, wrt="loss"), "gradient")
    return project(x_adv + cfg.step_size * _ascent_direction(g, cfg.norm), x, cfg.norm, cfg.epsilon)


def pgd(net, images, labels, cfg: AttackConfig) -> np.ndarray:
    """Projected gradient ascent on the cross-entropy loss, starting at the clean image."""
    x, y, single = _batch(images, labels)
    x_adv = x.copy()
    for _ in range(cfg.steps):
        x_adv = pgd_step(net, x_adv, x, y, cfg)
    return x_adv[0] if single else x_adv


def _margins(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``logit_true - max_other`` and the index of that best other class."""
    others = logits.copy()
    others[np.arange(len(y)), y] = -np.inf
    best_other = np.argmax(others, axis=1)
    return logits[np.arange(len(y)), y] - logits[np.arange(len(y)), best_other], best_other


def cw(net, images, labels, cfg: AttackConfig, return_success: bool = False):
    """Carlini-Wagner L2 attack with a fixed trade-off constant.

    Minimizes ``||x' - x||_2^2 + c * max(margin(x'), -kappa)`` over
    ``x' = (tanh(w) + 1) / 2`` with Adam on ``w`` (learning rate
    ``cfg.step_size``, ``cfg.steps`` iterations). Returns the successful
    iterate with the smallest distortion, or the final iterate when no
    iterate succeeded. Images that are already misclassified come back
    unchanged.
    """
    x, y, single = _batch(images, labels)
    n = len(x)
    k = cfg.cw_kappa
    logits0 = net.forward_logits(x)
    margin0, _ = _margins(logits0, y)
    already = (np.argmax(logits0, axis=1) != y) & (margin0 <= -k)

    w = np.arctanh(2.0 * np.clip(x, 1e-6, 1.0 - 1e-6) - 1.0)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    best = x.copy()
    best_dist = np.where(already, 0.0, np.inf)
    final = x.copy()
    for t in range(1, cfg.steps + 1):
        tw = np.tanh(w)
        x_adv = (tw + 1.0) / 2.0
        final = x_adv
        weights = np.zeros((n, net.num_classes))
        logits = net.forward_logits(x_adv)
        margin, other = _margins(logits, y)
        active = margin > -k
        weights[np.arange(n), y] = cfg.cw_c * active
        weights[np.arange(n), other] -= cfg.cw_c * active
        _, g_margin = net.logit_gradient(x_adv, weights)
        grad_x = 2.0 * (x_adv - x) + g_margin
        grad_w = _check_finite(grad_x * (1.0 - tw**2) / 2.0, "CW gradient")

        dist = np.sum((x_adv - x).reshape(n, -1) ** 2, axis=1)
        success = (np.argmax(logits, axis=1) != y) & ~active
        improve = success & (dist < best_dist) & ~already
        best[improve] = x_adv[improve]
        best_dist[improve] = dist[improve]

        m = beta1 * m + (1 - beta1) * grad_w
        v = beta2 * v + (1 - beta2) * grad_w**2
        w = w - cfg.step_size * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + adam_eps)

    found = np.isfinite(best_dist)
    out = np.where(found.reshape(-1, 1, 1, 1), best, final)
    out[already] = x[already]
    if single:
        return (out[0], bool(found[0])) if return_success else out[0]
    return (out, found) if return_success else out


def _softmax_true(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p[np.arange(len(y)), y]


def simba(net, images, labels, cfg: AttackConfig, return_history: bool = False, first_index: int = 0):
    """Simple black-box attack (Guo et al.) in the pixel or DCT basis.

    Each iteration draws an unused orthonormal basis direction ``q`` per
    image, tries ``x - step*q`` and then ``x + step*q``, and keeps the first
    candidate that lowers the softmax probability of the true label.
    Candidates are projected onto the epsilon ball and [0, 1]. An image stops
    once it is misclassified or its directions run out. Only
    ``net.forward_logits`` is queried.

    Image ``i`` draws its direction order from its own substream, keyed by
    ``first_index + i``, so splitting a batch does not change the result.

    With ``return_history`` the per-iteration true-label probabilities,
    shape (N, iterations + 1), are returned as well.
    """
    x, y, single = _batch(images, labels)
    n = len(x)
    shape = x.shape[1:]
    dim = int(np.prod(shape))
    perms = np.stack(
        [substream(cfg.seed, f"attack/simba/{first_index + i}").permutation(dim) for i in range(n)]
    ) if n else np.zeros((0, dim), np.int64)

    x_adv = x.copy()
    logits = net.forward_logits(x_adv) if n else np.zeros((0, 1))
    prob = _softmax_true(logits, y) if n else np.zeros(0)
    active = np.argmax(logits, axis=1) == y if n else np.zeros(0, bool)
    history = [prob.copy()]
    for t in range(min(cfg.steps, dim)):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        q = np.zeros((idx.size, dim))
        q[np.arange(idx.size), perms[idx, t]] = 1.0
        q = q.reshape(idx.size, *shape)
        if cfg.simba_basis == "dct":
            q = dct2_inverse(q)
        base = x_adv[idx]
        accepted = np.zeros(idx.size, dtype=bool)
        for sign in (-1.0, 1.0):
            cand = project(base + sign * cfg.step_size * q, x[idx], cfg.norm, cfg.epsilon)
            cand_logits = net.forward_logits(cand)
            p = _softmax_true(cand_logits, y[idx])
            take = ~accepted & (p < prob[idx])
            sel = idx[take]
            x_adv[sel] = cand[take]
            prob[sel] = p[take]
            active[sel] = np.argmax(cand_logits[take], axis=1) == y[sel]
            accepted |= take
        history.append(prob.copy())
    out = x_adv[0] if single else x_adv
    if return_history:
        hist = np.stack(history, axis=1)
        return out, (hist[0] if single else hist)
    return out


@dataclass
class AttackReport:
    config: AttackConfig
    adversarial: np.ndarray
    labels: np.ndarray
    success: np.ndarray
    linf: np.ndarray
    l2: np.ndarray
    l1: np.ndarray
    accuracy_before: float
    accuracy_after: float

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_images": int(len(self.labels)),
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "success_rate": float(np.mean(self.success)) if len(self.success) else 0.0,
            "mean_linf": float(np.mean(self.linf)) if len(self.linf) else 0.0,
            "max_linf": float(np.max(self.linf)) if len(self.linf) else 0.0,
            "mean_l2": float(np.mean(self.l2)) if len(self.l2) else 0.0,
            "max_l2": float(np.max(self.l2)) if len(self.l2) else 0.0,
            "mean_l1": float(np.mean(self.l1)) if len(self.l1) else 0.0,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


_ATTACKS = {"fgsm": fgsm, "pgd": pgd, "cw": cw, "simba": simba}


def _attack_chunks(net, x, y, cfg: AttackConfig, threads: int, chunk: int) -> np.ndarray:
    starts = list(range(0, len(x), chunk))

    def work(s):
        kw = {"first_index": s} if cfg.kind == "simba" else {}
        return _ATTACKS[cfg.kind](net, x[s : s + chunk], y[s : s + chunk], cfg, **kw)

    if len(starts) <= 1:
        return _ATTACKS[cfg.kind](net, x, y, cfg)
    if threads <= 1:
        return np.concatenate([work(s) for s in starts])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(work, starts)))


def run_attack(net, images, labels, cfg: AttackConfig, threads: int = 1, chunk: int = 64) -> AttackReport:
    """Attack a batch and collect distortion norms and accuracies.

    The batch is attacked in pieces of ``chunk`` images, up to ``threads``
    pieces at a time. The piece size is fixed independently of ``threads``
    because matrix products can round differently for different batch shapes;
    this keeps results bit-identical for any thread count.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    x, y, _ = _batch(images, labels)
    x_adv = _attack_chunks(net, x, y, cfg, threads, chunk)
    before = net.forward_logits(x).argmax(axis=1) if len(x) else np.zeros(0, np.int64)
    after = net.forward_logits(x_adv).argmax(axis=1) if len(x) else np.zeros(0, np.int64)
    d = (x_adv - x).reshape(len(x), -1)
    return AttackReport(
        config=cfg,
        adversarial=x_adv,
        labels=y,
        success=after != y,
        linf=np.abs(d).max(axis=1) if d.size else np.zeros(len(x)),
        l2=np.sqrt(np.sum(d**2, axis=1)),
        l1=np.sum(np.abs(d), axis=1),
        accuracy_before=float(np.mean(before == y)) if len(x) else 0.0,
        accuracy_after=float(np.mean(after == y)) if len(x) else 0.0,
    )
