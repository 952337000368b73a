"""Partition plan, enrollment selection, trial lists and training pairs."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .store import LEVELS, ManifestRecord, ValidationError

ALL = "all"
TARGET, NONTARGET = "target", "nontarget"
ID, OOD = "ID", "OOD"


class ProtocolError(ValueError):
    pass


class DisjointnessError(ProtocolError):
    pass


class SubsetError(ProtocolError):
    pass


class SpeakerLeakError(ProtocolError):
    pass


class UnknownAttackError(ProtocolError):
    pass


class InsufficientDataError(ProtocolError):
    pass


@dataclass(frozen=True)
class PartitionPlan:
    train_attacks: frozenset[str]
    fingerprint_attacks: frozenset[str]
    trial_attacks: frozenset[str]
    speakers: dict[str, frozenset[str]]

    @property
    def ood_attacks(self) -> frozenset[str]:
        return self.trial_attacks - self.fingerprint_attacks

    def to_dict(self) -> dict:
        return {
            "train_attacks": sorted(self.train_attacks),
            "fingerprint_attacks": sorted(self.fingerprint_attacks),
            "trial_attacks": sorted(self.trial_attacks),
            "speakers": {k: sorted(v) for k, v in sorted(self.speakers.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionPlan":
        return cls(
            frozenset(d["train_attacks"]),
            frozenset(d["fingerprint_attacks"]),
            frozenset(d["trial_attacks"]),
            {k: frozenset(v) for k, v in d["speakers"].items()},
        )

    def records(self, manifest: Iterable[ManifestRecord], partition: str) -> list[ManifestRecord]:
        """Manifest records of ``partition`` whose attack belongs to that partition's attack set."""
        allowed = {
            "train": self.train_attacks,
            "fingerprint": self.fingerprint_attacks,
            "trial": self.trial_attacks,
        }[partition]
        return [r for r in manifest if r.partition == partition and r.attack_id in allowed]


def partition_attacks(manifest: Sequence[ManifestRecord], train_attacks, fingerprint_attacks,
                      trial_attacks) -> PartitionPlan:
    a_train = frozenset(train_attacks)
    a_fp = frozenset(fingerprint_attacks)
    a_trial = frozenset(trial_attacks)

    overlap = a_train & (a_fp | a_trial)
    if overlap:
        raise DisjointnessError(f"training attacks reused for enrollment/trials: {sorted(overlap)}")
    if not a_fp < a_trial:
        missing = a_fp - a_trial
        if missing:
            raise SubsetError(f"fingerprint attacks missing from trial set: {sorted(missing)}")
        raise SubsetError("fingerprint attacks must be a strict subset of trial attacks (no OOD attacks)")

    present = defaultdict(set)
    for r in manifest:
        present[r.partition].add(r.attack_id)
    for part, attacks in (("train", a_train), ("fingerprint", a_fp), ("trial", a_trial)):
        absent = attacks - present[part]
        if absent:
            raise UnknownAttackError(f"no {part}-partition utterances for attacks {sorted(absent)}")

    plan = PartitionPlan(a_train, a_fp, a_trial, {})
    speakers = {p: frozenset(r.speaker_id for r in plan.records(manifest, p))
                for p in ("train", "fingerprint", "trial")}
    parts = sorted(speakers)
    for i, p in enumerate(parts):
        for q in parts[i + 1:]:
            shared = speakers[p] & speakers[q]
            if shared:
                raise SpeakerLeakError(f"speakers shared by {p} and {q}: {sorted(shared)}")
    return PartitionPlan(a_train, a_fp, a_trial, speakers)


def select_fingerprint_utts(manifest: Sequence[ManifestRecord], attack: str, r, content: str,
                            seed: int) -> list[str]:
    """Draw ``r`` enrollment utterances (or all with ``r == ALL``) of one attack and content flag."""
    pool = sorted(
        rec.utt_id for rec in manifest
        if rec.partition == "fingerprint" and rec.attack_id == attack and rec.content == content
    )
    if not pool:
        raise InsufficientDataError(f"no {content} fingerprint utterances for attack {attack}")
    if r == ALL:
        return pool
    r = int(r)
    if r < 1:
        raise ProtocolError(f"enrollment size must be >= 1, got {r}")
    if r > len(pool):
        raise InsufficientDataError(
            f"attack {attack} has {len(pool)} {content} fingerprint utterances, {r} requested"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=r, replace=False)
    return [pool[i] for i in picked]


@dataclass(frozen=True)
class Trial:
    trial_utt_id: str
    claimed_attack_id: str
    level_labels: dict[str, str]
    dist_flag: str

    def is_target(self, level: str) -> bool:
        return self.level_labels[level] == TARGET


def attack_metadata(manifest: Iterable[ManifestRecord]) -> dict[str, ManifestRecord]:
    """One representative record per attack; rejects attacks with inconsistent am/vm tags."""
    meta: dict[str, ManifestRecord] = {}
    for r in manifest:
        ref = meta.setdefault(r.attack_id, r)
        if any(ref.level_id(lv) != r.level_id(lv) for lv in LEVELS):
            raise ValidationError(f"attack {r.attack_id} has inconsistent AM/VM metadata", [r.utt_id])
    return meta


def generate_trials(plan: PartitionPlan, manifest: Sequence[ManifestRecord], trial_source: str = "both",
                    exclude: Iterable[str] = ()) -> list[Trial]:
    """Every trial-partition utterance against every enrolled attack, sorted by (utt, claim)."""
    if not plan.fingerprint_attacks:
        raise ProtocolError("no enrolled (fingerprint) attacks")
    if trial_source not in (ID, OOD, "both"):
        raise ProtocolError(f"trial_source must be ID, OOD or both, got {trial_source!r}")
    meta = attack_metadata(manifest)
    excluded = set(exclude)
    claims = sorted(plan.fingerprint_attacks)
    trials = []
    for rec in sorted(plan.records(manifest, "trial"), key=lambda r: r.utt_id):
        if rec.utt_id in excluded:
            continue
        flag = ID if rec.attack_id in plan.fingerprint_attacks else OOD
        if trial_source != "both" and flag != trial_source:
            continue
        for claim in claims:
            c = meta[claim]
            labels = {lv: TARGET if rec.level_id(lv) == c.level_id(lv) else NONTARGET for lv in LEVELS}
            trials.append(Trial(rec.utt_id, claim, labels, flag))
    return trials


TRIAL_COLUMNS = ("trial_utt_id", "claimed_attack_id") + tuple(f"{lv}_label" for lv in LEVELS) + ("dist_flag",)


def format_trials(trials: Iterable[Trial]) -> str:
    lines = ["\t".join(TRIAL_COLUMNS)]
    for t in trials:
        lines.append("\t".join([t.trial_utt_id, t.claimed_attack_id, *(t.level_labels[lv] for lv in LEVELS), t.dist_flag]))
    return "\n".join(lines) + "\n"


def parse_trials(text: str) -> list[Trial]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != TRIAL_COLUMNS:
        raise ValidationError("trial list header mismatch")
    trials = []
    for n, line in enumerate(lines[1:], 2):
        cols = line.split("\t")
        if len(cols) != len(TRIAL_COLUMNS):
            raise ValidationError(f"trial list line {n}: expected {len(TRIAL_COLUMNS)} columns")
        labels = dict(zip(LEVELS, cols[2:7]))
        if any(v not in (TARGET, NONTARGET) for v in labels.values()) or cols[7] not in (ID, OOD):
            raise ValidationError(f"trial list line {n}: bad label")
        trials.append(Trial(cols[0], cols[1], labels, cols[7]))
    return trials


@dataclass(frozen=True)
class PairSet:
    left: tuple[str, ...]
    right: tuple[str, ...]
    same: np.ndarray  # bool, attack-level

    def __len__(self):
        return len(self.left)

    @property
    def n_positive(self) -> int:
        return int(self.same.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive

    def is_balanced(self) -> bool:
        return self.n_positive == self.n_negative


def generate_pairs(records: Sequence[ManifestRecord], n_pairs: int, seed: int) -> PairSet:
    """Balanced same/different-attack pairs drawn uniformly under ``seed``.

    Positives pick an attack uniformly then two distinct utterances of it;
    negatives pick two distinct attacks uniformly then one utterance each.
    """
    if n_pairs <= 0 or n_pairs % 2:
        raise ProtocolError(f"n_pairs must be a positive even number, got {n_pairs}")
    groups = defaultdict(list)
    for r in records:
        groups[r.attack_id].append(r.utt_id)
    attacks = sorted(groups)
    if len(attacks) < 2:
        raise InsufficientDataError("need at least two attacks to form negative pairs")
    small = [a for a in attacks if len(groups[a]) < 2]
    if small:
        raise InsufficientDataError(f"attacks with fewer than two utterances: {small}")
    members = [sorted(groups[a]) for a in attacks]
    sizes = np.array([len(m) for m in members])
    rng = np.random.default_rng(seed)
    half = n_pairs // 2

    pa = rng.integers(len(attacks), size=half)
    i = (rng.random(half) * sizes[pa]).astype(np.int64)
    j = (rng.random(half) * (sizes[pa] - 1)).astype(np.int64)
    j += j >= i

    na = rng.integers(len(attacks), size=half)
    nb = (rng.random(half) * (len(attacks) - 1)).astype(np.int64)
    nb += nb >= na
    ni = (rng.random(half) * sizes[na]).astype(np.int64)
    nj = (rng.random(half) * sizes[nb]).astype(np.int64)

    left = [members[a][x] for a, x in zip(pa, i)] + [members[a][x] for a, x in zip(na, ni)]
    right = [members[a][x] for a, x in zip(pa, j)] + [members[a][x] for a, x in zip(nb, nj)]
    same = np.r_[np.ones(half, dtype=bool), np.zeros(half, dtype=bool)]
    order = rng.permutation(n_pairs)
    return PairSet(tuple(left[k] for k in order), tuple(right[k] for k in order), same[order])
