import sys
import time

import numpy as np
import pytest

from freqlens import experiment as ex
from freqlens.model import ConvNet


class LogisticStub:
    """Two-class model on a single pixel: logits ``(0, w * x + b)``.

    Gradients are analytic, which makes it an independent oracle for the
    attack update rules.
    """

    num_classes = 2
    input_shape = (1, 1, 1)

    def __init__(self, w=1.0, b=0.0):
        self.w = w
        self.b = b

    def forward_logits(self, images):
        x = np.asarray(images, dtype=np.float64)
        single = x.ndim == 3
        x = x.reshape(-1, 1)
        out = np.concatenate([np.zeros_like(x), self.w * x + self.b], axis=1)
        return out[0] if single else out

    def input_gradient(self, images, c, wrt="loss"):
        x = np.asarray(images, dtype=np.float64)
        logits = self.forward_logits(x.reshape(-1, 1, 1, 1))
        p = np.exp(logits - logits.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        c = np.broadcast_to(np.asarray(c), (len(logits),))
        # d CE / d logit_1 = p_1 - [c == 1]; d logit_1 / dx = w
        g = (p[:, 1] - (c == 1)) * self.w
        return g.reshape(x.shape)

    def logit_gradient(self, images, weights):
        x = np.asarray(images, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1, 2)
        return self.forward_logits(x), (weights[:, 1] * self.w).reshape(x.shape)


class ForwardOnly:
    """Exposes nothing but logits; any gradient access fails loudly."""

    def __init__(self, net):
        self._net = net
        self.num_classes = net.num_classes
        self.calls = 0

    def forward_logits(self, images):
        self.calls += 1
        return self._net.forward_logits(images)


@pytest.fixture
def small_net():
    return ConvNet.initialize((1, 8, 8), 3, seed=5)


@pytest.fixture
def small_images():
    return np.random.default_rng(9).random((6, 1, 8, 8))


# shipped desk-scale models, trained from scratch once per session


@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    return tmp_path_factory.mktemp("models")


@pytest.fixture(scope="session")
def standard(cache):
    start = time.perf_counter()
    net, history = ex.load_or_train(ex.STANDARD, cache=cache)
    return net, history, time.perf_counter() - start


@pytest.fixture(scope="session")
def robust(cache):
    out = {}
    for eps in ex.ROBUST_EPSILONS:
        start = time.perf_counter()
        net, _ = ex.load_or_train(ex.robust_config(eps), cache=cache)
        out[eps] = (net, time.perf_counter() - start)
    return out


@pytest.fixture(scope="session")
def test_data():
    return ex.test_set()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
