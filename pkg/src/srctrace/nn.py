"""Small deterministic dense-network engine.

Everything runs in float64 on numpy arrays. A network is an ordered list of
affine layers with ``relu`` or ``identity`` activations; losses return their
value together with the gradient w.r.t. their inputs so that the training
loops in :mod:`srctrace.backends` can chain them through
:meth:`DenseNet.backward`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")
COS_CLAMP = 1e-7
MODEL_FORMAT = "srctrace.model"
MODEL_VERSION = 1


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class DegenerateInputError(ValueError):
    """Input has no direction (zero vector) or otherwise undefined geometry."""


class OracleError(ArithmeticError):
    """The finite-difference oracle evaluated a non-finite loss."""


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ContractError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )


class DenseNet:
    """Chain of affine layers.

    ``forward`` is pure. ``forward_train`` records the activations needed by
    ``backward``; calling ``backward`` without it raises ``ContractError``.
    """

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ContractError("DenseNet needs at least one layer")
        self.layers = list(layers)
        for k in range(1, len(self.layers)):
            prev, cur = self.layers[k - 1], self.layers[k]
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise ContractError(
                    f"layer {k} expects {cur.weight.shape[1]} inputs, "
                    f"layer {k - 1} produces {prev.weight.shape[0]}"
                )
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise ContractError("DenseNet parameters must be finite")
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [l.weight.shape[0] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend((l.weight, l.bias))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DenseNet":
        if len(params) != 2 * len(self.layers):
            raise ContractError("parameter list does not match layer count")
        layers = [
            Layer(params[2 * k].copy(), params[2 * k + 1].copy(), l.activation)
            for k, l in enumerate(self.layers)
        ]
        return DenseNet(layers)

    def copy(self) -> "DenseNet":
        return self.with_parameters(self.parameters())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ContractError(
                f"input has shape {x.shape}, network expects last dim {self.input_dim}"
            )
        if not np.all(np.isfinite(x)):
            raise ContractError("input contains non-finite values")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        for l in self.layers:
            h = h @ l.weight.T + l.bias
            if l.activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def forward_train(self, x) -> np.ndarray:
        """Batch forward pass that keeps what ``backward`` needs."""
        h = np.atleast_2d(self._check_input(x))
        inputs, pre = [], []
        for l in self.layers:
            inputs.append(h)
            z = h @ l.weight.T + l.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if l.activation == "relu" else z
        self._cache = (inputs, pre)
        return h

    def backward(self, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given ``dloss/doutput`` of the last ``forward_train``.

        Returns the parameter gradients (ordered like ``parameters()``) and the
        gradient w.r.t. the network input. The cache is consumed.
        """
        if self._cache is None:
            raise ContractError("backward called without a recorded forward_train")
        inputs, pre = self._cache
        self._cache = None
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != pre[-1].shape:
            raise ContractError(f"grad_out shape {g.shape} != output shape {pre[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        for k in range(len(self.layers) - 1, -1, -1):
            l = self.layers[k]
            if l.activation == "relu":
                g = g * (pre[k] > 0.0)
            grads[2 * k] = g.T @ inputs[k]
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ l.weight
        return grads, g


def forward(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("forward expects a single vector; use DenseNet.forward for batches")
    return net.forward(x)


def init_params(dims: Sequence[int], seed: int, activations: Sequence[str] | None = None) -> DenseNet:
    """Xavier-uniform weights, zero biases. Hidden layers relu, last identity by default."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ContractError(f"invalid layer dims {dims}")
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ContractError("one activation per layer required")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(n_layers):
        fan_in, fan_out = dims[k], dims[k + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), activations[k]))
    return DenseNet(layers)


# ---------------------------------------------------------------- losses


def _logsumexp(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    return (zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True)))[..., 0]


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise IndexError(f"label {label} out of range for {z.shape[-1]} classes")
    return float(_logsumexp(z) - z[label])


def softmax_ce_grad(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over a batch and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = z.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(_logsumexp(z) - z[rows, labels]))
    g = softmax(z)
    g[rows, labels] -= 1.0
    return loss, g / n


def binary_ce(logit: float, positive: bool) -> float:
    # -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    x = -float(logit) if positive else float(logit)
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def binary_ce_grad(logits, positive) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over a batch of logits and its gradient."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(positive, dtype=np.float64).reshape(-1)
    x = np.where(y > 0, -z, z)
    loss = float(np.mean(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))))
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
    return loss, (sig - y) / z.size


def contrastive_loss(d: float, same: bool, margin: float = 1.0) -> float:
    if d < 0:
        raise ContractError(f"distance must be non-negative, got {d}")
    if margin <= 0:
        raise ContractError("margin must be positive")
    return d * d if same else max(0.0, margin - d) ** 2


def contrastive_grad(a, b, same, margin: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean pairwise contrastive loss over rows of ``a``/``b`` with Euclidean distance.

    Returns the loss and gradients w.r.t. ``a`` and ``b``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    same = np.asarray(same, dtype=bool).reshape(-1)
    n = a.shape[0]
    diff = a - b
    d = np.sqrt(np.sum(diff * diff, axis=1))
    hinge = np.maximum(0.0, margin - d)
    loss = float(np.mean(np.where(same, d * d, hinge * hinge)))
    # d(d^2)/d(diff) = 2 diff; d(hinge^2)/d(diff) = -2 hinge diff / d
    safe_d = np.where(d > 0, d, 1.0)
    coef = np.where(same, 2.0, -2.0 * hinge / safe_d)
    coef = np.where(~same & (d == 0), 0.0, coef)
    ga = coef[:, None] * diff / n
    return loss, ga, -ga


@dataclass
class AamHead:
    """Class-weight matrix with unit-norm rows plus the AAM scale and margin."""

    class_weights: np.ndarray
    scale: float = 30.0
    margin: float = 0.5

    def __post_init__(self):
        self.class_weights = np.array(self.class_weights, dtype=np.float64, ndmin=2)
        if self.scale <= 0:
            raise ContractError("AAM scale must be positive")
        if not 0 <= self.margin < math.pi / 2:
            raise ContractError("AAM margin must lie in [0, pi/2)")
        self.normalize_()

    @classmethod
    def init(cls, n_classes: int, dim: int, seed: int, scale: float = 30.0, margin: float = 0.5):
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_classes, dim)), scale, margin)

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[0]

    def normalize_(self) -> None:
        """Scale rows to unit norm; rows already unit within 1e-12 are left bit-identical."""
        norms = np.linalg.norm(self.class_weights, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateInputError("class weight row has zero norm")
        if np.any(np.abs(norms - 1.0) > 1e-12):
            self.class_weights = self.class_weights / norms


def _aam_core(emb, weights, labels, scale, margin, need_grad):
    e = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = e.shape[0]
    if np.any(labels < 0) or np.any(labels >= w.shape[0]):
        raise ContractError("AAM label out of range")
    en = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(en == 0):
        raise DegenerateInputError("AAM loss is undefined for a zero embedding")
    wn = np.linalg.norm(w, axis=1, keepdims=True)
    e_hat = e / en
    w_hat = w / wn
    raw_cos = e_hat @ w_hat.T
    cos = np.clip(raw_cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    rows = np.arange(n)
    theta = np.arccos(cos[rows, labels])
    logits = scale * cos
    logits[rows, labels] = scale * np.cos(theta + margin)
    losses = _logsumexp(logits) - logits[rows, labels]
    if not need_grad:
        return losses, logits, None, None
    dz = softmax(logits)
    dz[rows, labels] -= 1.0
    dz /= n
    # d cos(theta+m)/d cos = sin(theta+m)/sin(theta)
    dcos = scale * dz
    dcos[rows, labels] *= np.sin(theta + margin) / np.sin(theta)
    dcos = dcos * ((raw_cos > -1.0 + COS_CLAMP) & (raw_cos < 1.0 - COS_CLAMP))
    d_ehat = dcos @ w_hat
    d_what = dcos.T @ e_hat
    # project through x / ||x||
    d_e = (d_ehat - e_hat * np.sum(d_ehat * e_hat, axis=1, keepdims=True)) / en
    d_w = (d_what - w_hat * np.sum(d_what * w_hat, axis=1, keepdims=True)) / wn
    return losses, logits, d_e, d_w


def aam_loss(embedding, head: AamHead, label: int) -> tuple[float, np.ndarray]:
    """Additive angular margin softmax loss for one embedding; returns (loss, logits)."""
    e = np.asarray(embedding, dtype=np.float64)
    if e.ndim != 1:
        raise ContractError("aam_loss takes a single embedding vector")
    losses, logits, _, _ = _aam_core(e, head.class_weights, [label], head.scale, head.margin, False)
    return float(losses[0]), logits[0]


def aam_loss_grad(embeddings, head: AamHead, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean AAM loss over a batch, with gradients w.r.t. embeddings and class weights."""
    losses, _, d_e, d_w = _aam_core(
        embeddings, head.class_weights, labels, head.scale, head.margin, True
    )
    return float(np.mean(losses)), d_e, d_w


def cosine_rows_grad(a, b):
    """Row-wise cosine of ``a`` and ``b`` plus a closure mapping dL/dcos to (dL/da, dL/db)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("cosine of a zero vector")
    ah = a / na[:, None]
    bh = b / nb[:, None]
    cos = np.sum(ah * bh, axis=1)

    def back(gcos):
        gcos = np.asarray(gcos).reshape(-1, 1)
        ga = gcos * (bh - ah * cos[:, None]) / na[:, None]
        gb = gcos * (ah - bh * cos[:, None]) / nb[:, None]
        return ga, gb

    return cos, back


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays; ``state`` is advanced in place."""
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    if state.step < 0:
        raise ContractError("Adam step counter must be non-negative")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != m.shape:
            raise ContractError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# ---------------------------------------------------------------- oracle


def finite_difference_grad(f: Callable[[list[np.ndarray]], float], params, h: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradient of scalar ``f`` at ``params`` (array or list of arrays)."""
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    single = isinstance(params, np.ndarray) or np.isscalar(params)
    plist = [np.array(params, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in params]

    def call():
        value = f(plist[0] if single else plist)
        if not np.isfinite(value):
            raise OracleError(f"objective is not finite ({value})")
        return float(value)

    grads = []
    for p in plist:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = call()
            flat[i] = orig - h
            down = call()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads[0] if single else grads


# ---------------------------------------------------------------- serialization


def net_to_dict(net: DenseNet) -> dict:
    return {
        "dims": net.dims,
        "activations": net.activations,
        "layers": [
            {"weight": l.weight.reshape(-1).tolist(), "bias": l.bias.tolist()} for l in net.layers
        ],
    }


def net_from_dict(doc: dict) -> DenseNet:
    dims = doc["dims"]
    layers = []
    for k, (ld, act) in enumerate(zip(doc["layers"], doc["activations"])):
        w = np.array(ld["weight"], dtype=np.float64).reshape(dims[k + 1], dims[k])
        layers.append(Layer(w, np.array(ld["bias"], dtype=np.float64), act))
    return DenseNet(layers)


def dumps_model(kind: str, body: dict) -> str:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": kind, **body}
    return json.dumps(doc, sort_keys=True, allow_nan=False)


def loads_model(text: str, kind: str | None = None) -> dict:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a srctrace model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"expected a {kind} model, found {doc.get('kind')}")
    return doc
