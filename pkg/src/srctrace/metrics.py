"""Equal error rate, DET operating points and per-level pooling of trial scores."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .nn import ContractError
from .protocol import ID, OOD, ProtocolError, Trial
from .store import LEVELS, ValidationError

CONDITIONS = (ID, OOD)


class EmptyPoolError(ProtocolError):
    """A pooling key selected no trials, or only one class."""


@dataclass(frozen=True)
class ScoredTrialSet:
    scores: np.ndarray
    is_target: np.ndarray
    key: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "is_target", np.asarray(self.is_target, dtype=bool).reshape(-1))
        if self.scores.shape != self.is_target.shape:
            raise ContractError("scores and labels differ in length")

    @property
    def n_target(self) -> int:
        return int(self.is_target.sum())

    @property
    def n_nontarget(self) -> int:
        return int(self.is_target.size - self.is_target.sum())


def _sweep(scores, is_target):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    is_target = np.asarray(is_target, dtype=bool).reshape(-1)
    if scores.shape != is_target.shape:
        raise ContractError("scores and labels differ in length")
    n_tar = int(is_target.sum())
    if n_tar == 0 or n_tar == is_target.size:
        raise ContractError("EER needs at least one target and one nontarget trial")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    thr, far, frr = kernels.operating_points(scores[order], is_target[order])
    # sentinel above the top score: nothing accepted
    return np.r_[np.inf, thr], np.r_[0.0, far], np.r_[1.0, frr]


def compute_eer(scores, is_target) -> tuple[float, float]:
    """EER and the threshold where FAR and FRR cross.

    Accept iff score >= threshold. Operating points sit at each distinct score
    (ties move together); the crossing is interpolated linearly between the
    two points bracketing the sign change of FAR - FRR.
    """
    thr, far, frr = _sweep(scores, is_target)
    diff = far - frr
    k = int(np.argmax(diff >= 0))  # diff[0] = -1, diff[-1] = +1
    if diff[k] == 0:
        return float(far[k]), float(thr[k])
    lam = -diff[k - 1] / (diff[k] - diff[k - 1])
    eer = far[k - 1] + lam * (far[k] - far[k - 1])
    if k - 1 == 0:
        threshold = thr[k]
    else:
        threshold = thr[k - 1] + lam * (thr[k] - thr[k - 1])
    return float(eer), float(threshold)


def det_points(scores, is_target) -> list[tuple[float, float, float]]:
    """(far, frr, threshold) with threshold rising: far non-increasing, frr non-decreasing."""
    thr, far, frr = _sweep(scores, is_target)
    return [(float(a), float(b), float(t)) for a, b, t in zip(far[::-1], frr[::-1], thr[::-1])]


def eer_from_det(points: Sequence[tuple[float, float, float]]) -> float:
    """EER recovered from a DET list by the same crossing rule as :func:`compute_eer`."""
    far = np.array([p[0] for p in points])[::-1]
    frr = np.array([p[1] for p in points])[::-1]
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(far[k])
    lam = -diff[k - 1] / (diff[k] - diff[k - 1])
    return float(far[k - 1] + lam * (far[k] - far[k - 1]))


def pool_by_level(trials: Sequence[Trial], scores: Mapping[tuple[str, str], float], level: str,
                  condition: str) -> ScoredTrialSet:
    """Collect (score, label) at ``level`` for the ID or OOD condition.

    ID: every ID trial. OOD: the ID trials that are targets at ``level`` plus
    every OOD trial, labels taken from metadata, so an OOD utterance sharing a
    vocoder with the claimed attack is a vm-level target.
    """
    if level not in LEVELS:
        raise ContractError(f"unknown level {level!r}")
    if condition not in CONDITIONS:
        raise ContractError(f"unknown condition {condition!r}")
    vals, labs = [], []
    missing = []
    for t in trials:
        tgt = t.is_target(level)
        if condition == ID:
            if t.dist_flag != ID:
                continue
        elif t.dist_flag == ID and not tgt:
            continue
        key = (t.trial_utt_id, t.claimed_attack_id)
        if key not in scores:
            missing.append(f"{key[0]}/{key[1]}")
            continue
        vals.append(scores[key])
        labs.append(tgt)
    if missing:
        raise ValidationError("trials without a score", missing)
    pool = ScoredTrialSet(np.array(vals), np.array(labs, dtype=bool), (level, condition))
    if pool.n_target == 0 or pool.n_nontarget == 0:
        raise EmptyPoolError(
            f"{condition} pool at {level} level has {pool.n_target} targets and "
            f"{pool.n_nontarget} nontargets"
        )
    return pool


@dataclass(frozen=True)
class EerEntry:
    backend: str
    level: str
    condition: str
    eer: float
    threshold: float
    n_target: int
    n_nontarget: int


def evaluate(trials: Sequence[Trial], scores_by_backend: Mapping[str, Mapping[tuple[str, str], float]],
             levels: Iterable[str] = LEVELS, conditions: Iterable[str] = CONDITIONS) -> list[EerEntry]:
    entries = []
    for backend in sorted(scores_by_backend):
        for level in levels:
            for cond in conditions:
                pool = pool_by_level(trials, scores_by_backend[backend], level, cond)
                eer, thr = compute_eer(pool.scores, pool.is_target)
                entries.append(EerEntry(backend, level, cond, eer, thr, pool.n_target, pool.n_nontarget))
    return entries


def report_to_json(entries: Sequence[EerEntry], meta: Mapping | None = None) -> str:
    doc = {
        "format": "srctrace.eer-report",
        "version": 1,
        "meta": dict(meta or {}),
        "entries": [
            {
                "backend": e.backend, "level": e.level, "condition": e.condition,
                "eer": e.eer, "eer_percent": f"{100 * e.eer:.2f}", "threshold": e.threshold,
                "n_target": e.n_target, "n_nontarget": e.n_nontarget,
            }
            for e in entries
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def report_from_json(text: str) -> tuple[list[EerEntry], dict]:
    doc = json.loads(text)
    if doc.get("format") != "srctrace.eer-report":
        raise ValidationError("not an EER report")
    entries = [
        EerEntry(d["backend"], d["level"], d["condition"], d["eer"], d["threshold"], d["n_target"], d["n_nontarget"])
        for d in doc["entries"]
    ]
    return entries, doc.get("meta", {})


def report_to_tsv(entries: Sequence[EerEntry]) -> str:
    lines = ["backend\tlevel\tcondition\teer_percent\tthreshold\tn_target\tn_nontarget"]
    for e in entries:
        lines.append(
            f"{e.backend}\t{e.level}\t{e.condition}\t{100 * e.eer:.2f}\t{e.threshold!r}\t{e.n_target}\t{e.n_nontarget}"
        )
    return "\n".join(lines) + "\n"
