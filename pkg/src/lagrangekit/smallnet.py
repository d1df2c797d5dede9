"""Dense ReLU network with Hard Concrete L0 gates and hand-written backprop.

One gate per input feature and per hidden unit. A gated unit is switched off
by multiplying its activation with a gate value ``z in [0, 1]``.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import ContractError, EvaluationError
from .optimizers import AdamState, PrimalOptConfig, adam_step

BETA = 2.0 / 3.0
GAMMA = -0.1
ZETA = 1.1
DROPRATE_INIT = 0.01


def droprate_to_log_alpha(droprate: float = DROPRATE_INIT) -> float:
    return math.log((1.0 - droprate) / droprate)


def hard_concrete_sample(log_alpha, u, beta: float = BETA, gamma: float = GAMMA, zeta: float = ZETA):
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ContractError("uniform draw must lie strictly inside (0, 1)")
    s = expit((np.log(u) - np.log1p(-u) + log_alpha) / beta)
    return np.clip(s * (zeta - gamma) + gamma, 0.0, 1.0)


def _sample_with_grad(log_alpha, u, beta, gamma, zeta):
    s = expit((np.log(u) - np.log1p(-u) + log_alpha) / beta)
    raw = s * (zeta - gamma) + gamma
    dz = np.where((raw > 0) & (raw < 1), (zeta - gamma) * s * (1 - s) / beta, 0.0)
    return np.clip(raw, 0.0, 1.0), dz


def active_probability(log_alpha, beta: float = BETA, gamma: float = GAMMA, zeta: float = ZETA):
    """P(z > 0) for each gate."""
    return expit(np.asarray(log_alpha, dtype=float) - beta * math.log(-gamma / zeta))


@dataclass(frozen=True)
class GateParams:
    log_alpha: np.ndarray
    beta: float = BETA
    gamma: float = GAMMA
    zeta: float = ZETA

    def __post_init__(self):
        if not self.gamma < 0 < self.zeta or self.beta <= 0:
            raise ContractError("need gamma < 0 < zeta and beta > 0")


def expected_l0(gates: GateParams) -> float:
    return float(np.sum(active_probability(gates.log_alpha, gates.beta, gates.gamma, gates.zeta)))


def expected_l0_grad(gates: GateParams) -> np.ndarray:
    p = active_probability(gates.log_alpha, gates.beta, gates.gamma, gates.zeta)
    return p * (1.0 - p)


def deterministic_gates(log_alpha, gamma: float = GAMMA, zeta: float = ZETA):
    """Test-time gate values."""
    return np.clip(expit(log_alpha) * (zeta - gamma) + gamma, 0.0, 1.0)


@dataclass(frozen=True)
class DenseNetSpec:
    layer_widths: tuple = (784, 64, 32, 10)
    activation: str = "relu"
    loss: str = "softmax-ce"

    def __post_init__(self):
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ContractError("need at least two positive layer widths")
        if self.activation != "relu" or self.loss != "softmax-ce":
            raise ContractError("only relu activations with softmax cross-entropy are supported")

    @property
    def gated_widths(self) -> tuple:
        return tuple(self.layer_widths[:-1])


@dataclass
class DenseNet:
    spec: DenseNetSpec
    weights: list
    biases: list
    log_alpha: list  # one array per gated layer (inputs, then each hidden layer)

    @classmethod
    def init(cls, spec: DenseNetSpec, rng: np.random.Generator, droprate: float = DROPRATE_INIT) -> "DenseNet":
        w = spec.layer_widths
        weights = [rng.normal(0.0, math.sqrt(2.0 / a), (a, b)) for a, b in zip(w[:-1], w[1:])]
        biases = [np.zeros(b) for b in w[1:]]
        la = droprate_to_log_alpha(droprate)
        return cls(spec, weights, biases, [np.full(a, la) for a in spec.gated_widths])

    @property
    def num_gates(self) -> int:
        return sum(len(a) for a in self.log_alpha)

    def params(self) -> list:
        return self.weights + self.biases + self.log_alpha

    def copy(self) -> "DenseNet":
        return DenseNet(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        [a.copy() for a in self.log_alpha])

    def all_log_alpha(self) -> np.ndarray:
        return np.concatenate(self.log_alpha)


@dataclass
class SparsityProblem:
    net: DenseNet
    X: np.ndarray
    y: np.ndarray
    density_target: float = 0.5
    gates: GateParams = field(default=None)

    def __post_init__(self):
        if not 0 < self.density_target <= 1:
            raise ContractError("density_target must lie in (0, 1]")
        if self.gates is None:
            self.gates = GateParams(self.net.all_log_alpha())


def density(net: DenseNet) -> float:
    return float(np.sum([active_probability(a).sum() for a in net.log_alpha]) / net.num_gates)


@dataclass
class ForwardResult:
    loss: float
    density: float
    grad_w: list
    grad_b: list
    grad_log_alpha: list  # cross-entropy part only
    density_grad: list  # d density / d log_alpha
    logits: np.ndarray


def _softmax_ce(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = len(y)
    loss = -float(np.mean(logp[np.arange(n), y]))
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def forward(net: DenseNet, X: np.ndarray, gate_values: list) -> tuple[np.ndarray, list, list]:
    acts = [X * gate_values[0]]
    pres = []
    L = len(net.weights)
    for layer in range(L):
        pre = acts[-1] @ net.weights[layer] + net.biases[layer]
        pres.append(pre)
        if layer < L - 1:
            acts.append(np.maximum(pre, 0.0) * gate_values[layer + 1])
    return pres[-1], acts, pres


def forward_backward(net: DenseNet, X: np.ndarray, y: np.ndarray, rng: Optional[np.random.Generator] = None,
                     u: Optional[list] = None) -> ForwardResult:
    """Single gate sample per pass; pass ``u`` to freeze the sample."""
    if len(y) == 0:
        raise ContractError("batch must be nonempty")
    if u is None:
        if rng is None:
            raise ContractError("need an rng or a frozen uniform sample")
        tiny = np.finfo(float).tiny
        u = [rng.uniform(tiny, 1.0, len(a)) for a in net.log_alpha]
    zs, dzs = zip(*(_sample_with_grad(a, ui, BETA, GAMMA, ZETA) for a, ui in zip(net.log_alpha, u)))
    logits, acts, pres = forward(net, X, list(zs))
    loss, d = _softmax_ce(logits, y)
    if not np.isfinite(loss):
        raise EvaluationError("non-finite loss in forward pass")
    L = len(net.weights)
    gw, gb, gla = [None] * L, [None] * L, [None] * L
    for layer in range(L - 1, -1, -1):
        gw[layer] = acts[layer].T @ d
        gb[layer] = d.sum(axis=0)
        da = d @ net.weights[layer].T
        if layer > 0:
            r = np.maximum(pres[layer - 1], 0.0)
            gla[layer] = (da * r).sum(axis=0) * dzs[layer]
            d = da * zs[layer] * (pres[layer - 1] > 0)
        else:
            gla[0] = (da * X).sum(axis=0) * dzs[0]
    n_g = net.num_gates
    dens_grad = []
    for a in net.log_alpha:
        p = active_probability(a)
        dens_grad.append(p * (1 - p) / n_g)
    return ForwardResult(loss, density(net), gw, gb, gla, dens_grad, logits)


def predict(net: DenseNet, X: np.ndarray) -> np.ndarray:
    logits, _, _ = forward(net, X, [deterministic_gates(a) for a in net.log_alpha])
    return logits.argmax(axis=1)


def accuracy(net: DenseNet, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(net, X) == y))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class SparsityTrainConfig:
    mode: str = "penalized"  # penalized | lagrangian
    coefficient: float = 0.0  # penalty c on model density (penalized mode)
    density_target: float = 0.5  # constraint level (lagrangian mode)
    dual_step_size: float = 1.0
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    gate_lr: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("penalized", "lagrangian"):
            raise ContractError("mode must be 'penalized' or 'lagrangian'")
        if self.coefficient < 0:
            raise ContractError("penalty coefficient must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    net: DenseNet
    density: float
    accuracy: float
    multiplier: float
    history: list  # per-epoch (epoch, mean loss, density, multiplier)


def train_sparsity(X: np.ndarray, y: np.ndarray, cfg: SparsityTrainConfig,
                   spec: DenseNetSpec = DenseNetSpec(), net: Optional[DenseNet] = None,
                   freeze_gates: bool = False) -> TrainResult:
    """Adam on weights and gate logits; penalty or multiplier on model density.

    ``freeze_gates`` pins every gate at 1 (no sampling, no gate updates),
    which reproduces the ungated network exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = DenseNet.init(spec, rng)
    w_cfg = PrimalOptConfig("adam", cfg.lr)
    g_cfg = PrimalOptConfig("adam", cfg.gate_lr)
    states = [AdamState.zeros(p.shape) for p in net.params()]
    n_wb = len(net.weights) + len(net.biases)
    lam = 0.0
    ones = [np.ones_like(a) for a in net.log_alpha]
    history = []
    n = len(y)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if freeze_gates:
                res = _frozen_forward_backward(net, X[idx], y[idx], ones)
            else:
                res = forward_backward(net, X[idx], y[idx], rng)
            losses.append(res.loss)
            if cfg.mode == "lagrangian":
                lam = max(0.0, lam + cfg.dual_step_size * (res.density - cfg.density_target))
                weight = lam
            else:
                weight = cfg.coefficient
            params = net.params()
            for i, g in enumerate(res.grad_w + res.grad_b):
                states[i], step = adam_step(states[i], g, w_cfg)
                params[i] += step
            if not freeze_gates:
                for j, (gce, gd) in enumerate(zip(res.grad_log_alpha, res.density_grad)):
                    k = n_wb + j
                    states[k], step = adam_step(states[k], gce + weight * gd, g_cfg)
                    net.log_alpha[j] += step
        history.append((epoch, float(np.mean(losses)), density(net), lam))
    acc = _frozen_accuracy(net, X, y) if freeze_gates else accuracy(net, X, y)
    return TrainResult(net, density(net), acc, lam, history)


def _frozen_forward_backward(net, X, y, ones) -> ForwardResult:
    logits, acts, pres = forward(net, X, ones)
    loss, d = _softmax_ce(logits, y)
    L = len(net.weights)
    gw, gb = [None] * L, [None] * L
    for layer in range(L - 1, -1, -1):
        gw[layer] = acts[layer].T @ d
        gb[layer] = d.sum(axis=0)
        if layer > 0:
            d = (d @ net.weights[layer].T) * (pres[layer - 1] > 0)
    return ForwardResult(loss, 1.0, gw, gb, [], [], logits)


def _frozen_accuracy(net, X, y) -> float:
    logits, _, _ = forward(net, X, [np.ones_like(a) for a in net.log_alpha])
    return float(np.mean(logits.argmax(axis=1) == y))


# ---------------------------------------------------------------------------
# data


def _read_idx(path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ContractError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise ContractError(f"{path}: not an unsigned-byte IDX file")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise ContractError(f"{path}: payload size does not match header dims {dims}")
    return body.reshape(dims)


def load_idx_dataset(images_path, labels_path, limit: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Load digit images (scaled to [0, 1], flattened) and labels from IDX files."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path).astype(int)
    if len(images) != len(labels):
        raise ContractError("image and label counts differ")
    X = images.reshape(len(images), -1).astype(float) / 255.0
    if limit is not None:
        X, labels = X[:limit], labels[:limit]
    return X, labels


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.tobytes())


def synthetic_digits(n: int = 4000, seed: int = 0, side: int = 28, num_classes: int = 10,
                     decades: float = 4.0, signal: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Stand-in for the digit dataset when the IDX files are unavailable.

    Each class has a fixed random pattern. Pixel intensity (signal and noise
    alike) decays log-linearly from the image center over ``decades`` orders
    of magnitude, so input features span a wide range of usefulness.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    r = np.hypot(yy - c, xx - c).ravel()
    saliency = 10.0 ** (-decades * r / r.max())
    patterns = np.random.default_rng(9973).standard_normal((num_classes, side * side))
    y = rng.integers(0, num_classes, n)
    X = saliency * (signal * patterns[y] + rng.standard_normal((n, side * side)))
    return X, y


# ---------------------------------------------------------------------------
# checkpoints: magic, version, array count, then (ndim, shape, float64 data) per array

CHECKPOINT_MAGIC = b"LGKT"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: DenseNet, path) -> None:
    arrays = net.params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            fh.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path, spec: DenseNetSpec = DenseNetSpec()) -> DenseNet:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, count = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos, arrays = 12, []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", raw[pos:pos + 4])
        shape = struct.unpack(f"<{ndim}I", raw[pos + 4:pos + 4 + 4 * ndim])
        pos += 4 + 4 * ndim
        size = int(np.prod(shape)) * 8
        if pos + size > len(raw):
            raise ContractError(f"{path}: truncated checkpoint")
        arrays.append(np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(shape).copy())
        pos += size
    L = len(spec.layer_widths) - 1
    if count != 3 * L:
        raise ContractError(f"{path}: array count {count} does not match the network spec")
    return DenseNet(spec, arrays[:L], arrays[L:2 * L], arrays[2 * L:])
