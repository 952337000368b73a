"""Backend scorers (cosine, Siamese, MLP), the AAM projector, and decision rules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .nn import (
    AamHead,
    AdamState,
    ContractError,
    DegenerateInputError,
    DenseNet,
    aam_loss_grad,
    adam_step,
    binary_ce_grad,
    contrastive_grad,
    cosine_rows_grad,
    dumps_model,
    init_params,
    loads_model,
    net_from_dict,
    net_to_dict,
    softmax,
    softmax_ce_grad,
)

REJECT = "REJECT"
SIAMESE_DIMS = (128, 64, 32)
MLP_HIDDEN = 128
FULL_BATCH_LIMIT = 4096
MINIBATCH = 256


class AamUndefinedError(ContractError):
    pass


# ---------------------------------------------------------------- scoring rules


def cosine_score(e_t, e_f) -> float:
    a = np.asarray(e_t, dtype=np.float64).reshape(-1)
    b = np.asarray(e_f, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractError("cosine_score: vectors differ in length")
    na, nb = float(a @ a), float(b @ b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_score of a zero vector")
    return float(min(1.0, max(-1.0, (a @ b) / math.sqrt(na * nb))))


def identify(scores: Mapping[str, float], tau: float) -> str:
    """Arg-max attack, or ``REJECT`` when the best score falls below ``tau``.

    Ties go to the lexicographically smallest attack id.
    """
    if not scores:
        raise ContractError("identify needs at least one score")
    best = min(scores, key=lambda a: (-scores[a], a))
    return best if scores[best] >= tau else REJECT


def verify(score: float, tau: float) -> str:
    return "accept" if score >= tau else "reject"


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    params: list
    best_epoch: int
    history: list  # (epoch, train_loss, val_loss)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split; with no validation share, validation reuses the training rows."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    if n_val == 0 or n_val >= n:
        return perm, perm
    return perm[n_val:], perm[:n_val]


def fit(params: list, loss_grad: Callable, n: int, epochs: int, lr: float, seed: int,
        val_fraction: float = 0.2, post_step: Callable | None = None) -> TrainResult:
    """Adam training with selection of the epoch at minimum validation loss.

    ``loss_grad(params, idx, need_grad)`` returns ``(loss, grads)`` on rows
    ``idx``. Sets of at most 4096 training rows go full-batch, larger ones in
    seeded shuffled mini-batches of 256.
    """
    train_idx, val_idx = split_indices(n, val_fraction, seed)
    rng = np.random.default_rng([seed, 1])
    state = AdamState(lr=lr)
    best = [p.copy() for p in params]
    best_loss, best_epoch = math.inf, 0
    history = []
    for epoch in range(1, epochs + 1):
        if len(train_idx) <= FULL_BATCH_LIMIT:
            batches = [train_idx]
        else:
            order = rng.permutation(train_idx)
            batches = [order[i:i + MINIBATCH] for i in range(0, len(order), MINIBATCH)]
        total = 0.0
        for b in batches:
            loss, grads = loss_grad(params, b, True)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training loss diverged at epoch {epoch}")
            params = adam_step(params, grads, state)
            if post_step is not None:
                params = post_step(params)
            total += loss * len(b)
        val_loss, _ = loss_grad(params, val_idx, False)
        history.append((epoch, total / len(train_idx), val_loss))
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best = [p.copy() for p in params]
    return TrainResult(best, best_epoch, history)


# ---------------------------------------------------------------- projector


@dataclass
class ProjectorModel:
    net: DenseNet
    head: AamHead
    class_ids: tuple[str, ...]

    def embed(self, features) -> np.ndarray:
        return self.net.forward(features)

    def to_json(self) -> str:
        return dumps_model("projector", {
            "net": net_to_dict(self.net),
            "head": {"weights": self.head.class_weights.reshape(-1).tolist(),
                     "n_classes": self.head.n_classes, "scale": self.head.scale, "margin": self.head.margin},
            "class_ids": list(self.class_ids),
        })

    @classmethod
    def from_json(cls, text: str) -> "ProjectorModel":
        doc = loads_model(text, "projector")
        h = doc["head"]
        w = np.array(h["weights"], dtype=np.float64).reshape(h["n_classes"], -1)
        head = AamHead(w, h["scale"], h["margin"])
        return cls(net_from_dict(doc["net"]), head, tuple(doc["class_ids"]))


def train_projector(features, labels: Sequence[str], *, dims: Sequence[int] = (128, 64), scale: float = 30.0,
                    margin: float = 0.5, epochs: int = 100, lr: float = 1e-4, seed: int = 0,
                    val_fraction: float = 0.2) -> ProjectorModel:
    """Train a dense projector with an AAM-softmax head over the training attacks."""
    x = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("features must be finite")
    class_ids = tuple(sorted(set(labels)))
    if len(class_ids) < 2:
        raise AamUndefinedError("AAM training needs at least two attack classes")
    y = np.array([class_ids.index(l) for l in labels])
    net = init_params([x.shape[1], *dims], seed)
    head = AamHead.init(len(class_ids), net.output_dim, seed + 1, scale, margin)
    n_net = len(net.parameters())

    def unpack(params):
        return net.with_parameters(params[:n_net]), AamHead(params[n_net], scale, margin)

    def loss_grad(params, idx, need_grad):
        model, hd = unpack(params)
        emb = model.forward_train(x[idx])
        loss, d_emb, d_w = aam_loss_grad(emb, hd, y[idx])
        if not need_grad:
            return loss, None
        g, _ = model.backward(d_emb)
        return loss, g + [d_w]

    def renormalize(params):
        w = params[n_net]
        return params[:n_net] + [w / np.linalg.norm(w, axis=1, keepdims=True)]

    res = fit(net.parameters() + [head.class_weights], loss_grad, len(y), epochs, lr, seed,
              val_fraction, renormalize)
    model, hd = unpack(res.params)
    return ProjectorModel(model, hd, class_ids)


def projector_accuracy(model: ProjectorModel, features, labels) -> float:
    """Share of rows whose embedding is closest (by cosine) to its own class weight."""
    emb = model.embed(features)
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    pred = np.argmax(emb @ model.head.class_weights.T, axis=1)
    y = np.array([model.class_ids.index(l) for l in labels])
    return float(np.mean(pred == y))


# ---------------------------------------------------------------- siamese


@dataclass
class SiameseModel:
    trunk: DenseNet
    loss_mode: str = "contrastive"
    scale: float = 1.0  # cosine-logit scale, only trained in ce mode

    def project(self, x) -> np.ndarray:
        return self.trunk.forward(x)

    def to_json(self) -> str:
        return dumps_model("siamese", {"trunk": net_to_dict(self.trunk), "loss_mode": self.loss_mode,
                                       "scale": self.scale})

    @classmethod
    def from_json(cls, text: str) -> "SiameseModel":
        doc = loads_model(text, "siamese")
        return cls(net_from_dict(doc["trunk"]), doc["loss_mode"], doc["scale"])


def siamese_trunk(input_dim: int, seed: int) -> DenseNet:
    return init_params([input_dim, *SIAMESE_DIMS], seed)


def train_siamese(left, right, same, loss_mode: str = "contrastive", *, epochs: int = 100, lr: float = 1e-3,
                  margin: float = 1.0, init_scale: float = 5.0, seed: int = 0,
                  val_fraction: float = 0.2) -> SiameseModel:
    """Shared-trunk Siamese network on embedding pairs.

    ``contrastive`` uses the pairwise hinge loss on Euclidean distance of the
    projections; ``ce`` feeds ``scale * cos`` of the projections to a binary
    cross-entropy with a learnable scale.
    """
    a = np.asarray(left, dtype=np.float64)
    b = np.asarray(right, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if a.shape != b.shape or a.shape[0] != same.size:
        raise ContractError("pair arrays are misaligned")
    if 2 * int(same.sum()) != same.size:
        raise ContractError(f"pairs are unbalanced: {int(same.sum())} positive of {same.size}")
    if loss_mode not in ("contrastive", "ce"):
        raise ContractError(f"unknown Siamese loss mode {loss_mode!r}")
    trunk = siamese_trunk(a.shape[1], seed)
    n_trunk = len(trunk.parameters())
    m = len(same)

    def loss_grad(params, idx, need_grad):
        net = trunk.with_parameters(params[:n_trunk])
        k = len(idx)
        proj = net.forward_train(np.concatenate([a[idx], b[idx]]))
        pa, pb = proj[:k], proj[k:]
        if loss_mode == "contrastive":
            loss, ga, gb = contrastive_grad(pa, pb, same[idx], margin)
            extra = []
        else:
            s = params[n_trunk][0]
            cos, back = cosine_rows_grad(pa, pb)
            loss, dz = binary_ce_grad(s * cos, same[idx])
            ga, gb = back(dz * s)
            extra = [np.array([np.sum(dz * cos)])]
        if not need_grad:
            return loss, None
        g, _ = net.backward(np.concatenate([ga, gb]))
        return loss, g + extra

    params = trunk.parameters() + ([np.array([init_scale])] if loss_mode == "ce" else [])
    res = fit(params, loss_grad, m, epochs, lr, seed, val_fraction)
    scale = float(res.params[n_trunk][0]) if loss_mode == "ce" else 1.0
    return SiameseModel(trunk.with_parameters(res.params[:n_trunk]), loss_mode, scale)


def siamese_score(model: SiameseModel, e_t, e_f) -> float:
    p = model.project(np.vstack([np.ravel(e_t), np.ravel(e_f)]))
    if not np.any(p[0]) or not np.any(p[1]):
        raise DegenerateInputError("Siamese projection collapsed to the zero vector")
    return cosine_score(p[0], p[1])


# ---------------------------------------------------------------- mlp


@dataclass
class MlpModel:
    net: DenseNet
    class_ids: tuple[str, ...]

    def probabilities(self, x) -> np.ndarray:
        return softmax(self.net.forward(x))

    def to_json(self) -> str:
        return dumps_model("mlp", {"net": net_to_dict(self.net), "class_ids": list(self.class_ids)})

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        doc = loads_model(text, "mlp")
        return cls(net_from_dict(doc["net"]), tuple(doc["class_ids"]))


def train_mlp(features, labels: Sequence[str], class_ids: Sequence[str] | None = None, *, hidden: int = MLP_HIDDEN,
              epochs: int = 100, lr: float = 1e-3, seed: int = 0, val_fraction: float = 0.2) -> MlpModel:
    x = np.asarray(features, dtype=np.float64)
    classes = tuple(sorted(set(labels))) if class_ids is None else tuple(sorted(class_ids))
    pos = {c: i for i, c in enumerate(classes)}
    bad = sorted(set(labels) - set(classes))
    if bad:
        raise ContractError(f"labels outside the enrolled attack set: {bad}")
    y = np.array([pos[l] for l in labels])
    net = init_params([x.shape[1], hidden, len(classes)], seed)

    def loss_grad(params, idx, need_grad):
        model = net.with_parameters(params)
        loss, dz = softmax_ce_grad(model.forward_train(x[idx]), y[idx])
        if not need_grad:
            return loss, None
        return loss, model.backward(dz)[0]

    res = fit(net.parameters(), loss_grad, len(y), epochs, lr, seed, val_fraction)
    return MlpModel(net.with_parameters(res.params), classes)


def mlp_score(model: MlpModel, e_t, claimed_attack: str) -> float:
    if claimed_attack not in model.class_ids:
        raise ContractError(f"attack {claimed_attack} is not an MLP class")
    p = model.probabilities(np.ravel(e_t))
    return float(p[model.class_ids.index(claimed_attack)])


# ---------------------------------------------------------------- batch scoring


def score_pairs(backend, trial_vectors: np.ndarray, trial_rows, claims: Sequence[str],
                bank: Mapping[str, np.ndarray]) -> np.ndarray:
    """Score many (trial row, claimed attack) pairs at once.

    ``backend`` is ``"cosine"``, a :class:`SiameseModel` or an :class:`MlpModel`.
    """
    trial_rows = np.asarray(trial_rows, dtype=np.int64)
    if isinstance(backend, MlpModel):
        probs = backend.probabilities(trial_vectors)
        col = {c: i for i, c in enumerate(backend.class_ids)}
        unknown = sorted(set(claims) - set(col))
        if unknown:
            raise ContractError(f"attacks {unknown} are not MLP classes")
        return probs[trial_rows, [col[c] for c in claims]]
    names = sorted(bank)
    fp_rows = {a: i for i, a in enumerate(names)}
    fp = np.array([bank[a] for a in names])
    if isinstance(backend, SiameseModel):
        trial_vectors = backend.project(trial_vectors)
        fp = backend.project(fp)
    elif backend != "cosine":
        raise ContractError(f"unknown backend {backend!r}")
    try:
        return kernels.paired_cosine(trial_vectors, trial_rows, fp, [fp_rows[c] for c in claims])
    except ZeroDivisionError as exc:
        raise DegenerateInputError(str(exc)) from exc
