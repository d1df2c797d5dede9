import numpy as np
import pytest


def central_diff(fun, x, step=1e-6):
    """Central finite-difference gradient (or Jacobian, rows = outputs) of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def _smooth_network_point(rng, spec, margin=1e-3, batch=16):
    """Random net, batch and frozen gate draw at least ``margin`` away from every ReLU and clamp kink."""
    from scipy.special import expit

    from lagrangekit.smallnet import BETA, GAMMA, ZETA, DenseNet, forward

    while True:
        net = DenseNet.init(spec, rng)
        net.biases = [rng.normal(0.0, 0.5, b.shape) for b in net.biases]
        net.log_alpha = [rng.normal(1.0, 1.0, a.shape) for a in net.log_alpha]
        X = rng.normal(size=(batch, spec.layer_widths[0]))
        y = rng.integers(0, spec.layer_widths[-1], batch)
        u = [rng.uniform(0.05, 0.95, len(a)) for a in net.log_alpha]
        raw = [expit((np.log(ui) - np.log1p(-ui) + a) / BETA) * (ZETA - GAMMA) + GAMMA for a, ui in zip(net.log_alpha, u)]
        _, _, pres = forward(net, X, [np.clip(r, 0.0, 1.0) for r in raw])
        near_relu = any(np.abs(p).min() < margin for p in pres[:-1])
        near_clamp = any(np.minimum(np.abs(r), np.abs(r - 1.0)).min() < margin for r in raw)
        if not (near_relu or near_clamp):
            return net, X, y, u


def network_fd_error(rng, spec, points, coords=None, h=1e-4):
    """Worst relative error of all network parameter gradients against central differences.

    ``coords`` limits the check to that many random entries per parameter array.
    """
    from lagrangekit.smallnet import forward_backward

    worst = 0.0
    for _ in range(points):
        net, X, y, u = _smooth_network_point(rng, spec)
        res = forward_backward(net, X, y, u=u)
        arrays = net.weights + net.biases + net.log_alpha
        grads = res.grad_w + res.grad_b + res.grad_log_alpha
        for a, g in zip(arrays, grads):
            idxs = list(np.ndindex(a.shape))
            if coords is not None:
                idxs = [idxs[i] for i in rng.choice(len(idxs), min(coords, len(idxs)), replace=False)]
            fd, an = [], []
            for idx in idxs:
                old = a[idx]
                a[idx] = old + h
                up = forward_backward(net, X, y, u=u).loss
                a[idx] = old - h
                down = forward_backward(net, X, y, u=u).loss
                a[idx] = old
                fd.append((up - down) / (2 * h))
                an.append(g[idx])
            worst = max(worst, rel_err(an, fd))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
