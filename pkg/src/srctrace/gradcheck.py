"""Analytic-vs-finite-difference gradient checks for every loss and network path."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .nn import (
    AamHead,
    aam_loss_grad,
    binary_ce_grad,
    contrastive_grad,
    cosine_rows_grad,
    finite_difference_grad,
    init_params,
    softmax_ce_grad,
)

TOLERANCE = 1e-4
FD_STEP = 1e-5
KINK_MARGIN = 1e-3  # central differences are invalid across a relu kink


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||) over the full concatenated gradient."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if denom == 0.0 else float(np.linalg.norm(a - n) / denom)


def _smooth_net(rng, dims, x):
    """Perturbed random net whose relu pre-activations on ``x`` all clear KINK_MARGIN."""
    while True:
        net = init_params(dims, int(rng.integers(2**31)))
        net = net.with_parameters([p + 0.1 * rng.standard_normal(p.shape) for p in net.parameters()])
        h = x
        ok = True
        for layer in net.layers:
            z = h @ layer.weight.T + layer.bias
            if layer.activation == "relu":
                ok = ok and bool(np.min(np.abs(z)) > KINK_MARGIN)
                z = np.maximum(z, 0.0)
            h = z
        if ok:
            return net


@dataclass
class CheckResult:
    name: str
    points: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _aam(rng):
    dim, c = 8, 5
    e = rng.standard_normal((1, dim))
    w = rng.standard_normal((c, dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    y = [int(rng.integers(c))]

    def f(p):
        return aam_loss_grad(p[0], AamHead(p[1], 30.0, 0.5), y)[0]

    _, de, dw = aam_loss_grad(e, AamHead(w, 30.0, 0.5), y)
    return f, [e, w], [de, dw]


def _contrastive(rng):
    a = 0.3 * rng.standard_normal((1, 6))
    b = 0.3 * rng.standard_normal((1, 6))
    same = [bool(rng.integers(2))]

    def f(p):
        return contrastive_grad(p[0], p[1], same, 1.0)[0]

    _, ga, gb = contrastive_grad(a, b, same, 1.0)
    return f, [a, b], [ga, gb]


def _softmax_ce(rng):
    z = 2.0 * rng.standard_normal((1, 6))
    y = [int(rng.integers(6))]
    return (lambda p: softmax_ce_grad(p[0], y)[0]), [z], [softmax_ce_grad(z, y)[1]]


def _binary_ce(rng):
    z = 3.0 * rng.standard_normal(1)
    y = [bool(rng.integers(2))]
    return (lambda p: binary_ce_grad(p[0], y)[0]), [z], [binary_ce_grad(z, y)[1]]


def _mlp_ce(rng):
    x = rng.standard_normal((3, 6))
    net = _smooth_net(rng, [6, 7, 4], x)
    y = rng.integers(4, size=3)

    def f(p):
        return softmax_ce_grad(net.with_parameters(p).forward(x), y)[0]

    out = net.forward_train(x)
    grads, _ = net.backward(softmax_ce_grad(out, y)[1])
    return f, net.parameters(), grads


def _siamese(rng, mode):
    a = rng.standard_normal((2, 6))
    b = rng.standard_normal((2, 6))
    trunk = _smooth_net(rng, [6, 5, 4, 3], np.concatenate([a, b]))
    same = np.array([True, False])
    n = len(trunk.parameters())

    def loss(p, want_grad=False):
        net = trunk.with_parameters(p[:n])
        proj = net.forward_train(np.concatenate([a, b]))
        pa, pb = proj[:2], proj[2:]
        if mode == "contrastive":
            val, ga, gb = contrastive_grad(pa, pb, same, 1.0)
            extra = []
        else:
            s = p[n][0]
            cos, back = cosine_rows_grad(pa, pb)
            val, dz = binary_ce_grad(s * cos, same)
            ga, gb = back(dz * s)
            extra = [np.array([np.sum(dz * cos)])]
        if not want_grad:
            return val
        return net.backward(np.concatenate([ga, gb]))[0] + extra

    params = trunk.parameters() + ([np.array([3.0])] if mode == "ce" else [])
    return loss, params, loss(params, True)


def _projector_aam(rng):
    x = rng.standard_normal((3, 6))
    y = rng.integers(3, size=3)
    net = _smooth_net(rng, [6, 5, 4], x)
    w = rng.standard_normal((3, 4))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    n = len(net.parameters())

    def f(p):
        return aam_loss_grad(net.with_parameters(p[:n]).forward(x), AamHead(p[n], 30.0, 0.5), y)[0]

    emb = net.forward_train(x)
    _, de, dw = aam_loss_grad(emb, AamHead(w, 30.0, 0.5), y)
    grads, _ = net.backward(de)
    return f, net.parameters() + [w], grads + [dw]


CASES = {
    "aam_loss(s=30,m=0.5)": _aam,
    "contrastive_loss": _contrastive,
    "softmax_ce": _softmax_ce,
    "binary_ce": _binary_ce,
    "mlp+softmax_ce": _mlp_ce,
    "siamese+contrastive": lambda rng: _siamese(rng, "contrastive"),
    "siamese+cosine+binary_ce": lambda rng: _siamese(rng, "ce"),
    "projector+aam_loss": _projector_aam,
}


def run_case(name: str, points: int = 100, seed: int = 0, h: float = FD_STEP) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    build = CASES[name]
    for k in range(points):
        rng = np.random.default_rng([seed, k, len(name)])
        f, params, analytic = build(rng)
        numeric = finite_difference_grad(f, [np.array(p) for p in params], h)
        worst = max(worst, relative_error(analytic, numeric))
    return CheckResult(name, points, worst, time.perf_counter() - t0)


def run_suite(points: int = 100, seed: int = 0) -> list[CheckResult]:
    return [run_case(name, points, seed) for name in CASES]
