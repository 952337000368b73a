"""Synthetic attack embeddings with shared acoustic-model / vocoder structure.

Each attack prototype mixes a direction for its acoustic model, one for its
vocoder and an attack-specific residual; utterances are noisy copies on the
unit sphere. ``noise_sigma`` is the single separability knob.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .store import EmbeddingSet, ManifestRecord


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackTags:
    attack_id: str
    am_id: str
    vm_id: str
    am_arch: str
    vm_arch: str


@dataclass(frozen=True)
class SynthConfig:
    attacks: tuple[AttackTags, ...]
    train_attacks: tuple[str, ...]
    fingerprint_attacks: tuple[str, ...]
    dim: int = 64
    utts_per_attack: int = 400
    fingerprint_fraction: float = 0.5
    speakers_per_partition: Mapping[str, int] = field(
        default_factory=lambda: {"train": 20, "fingerprint": 10, "trial": 48}
    )
    noise_sigma: float = 0.8
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    co_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attacks", tuple(
            a if isinstance(a, AttackTags) else AttackTags(**a) for a in self.attacks
        ))
        object.__setattr__(self, "train_attacks", tuple(self.train_attacks))
        object.__setattr__(self, "fingerprint_attacks", tuple(self.fingerprint_attacks))

    @property
    def n_am(self) -> int:
        return len({a.am_id for a in self.attacks})

    @property
    def n_vm(self) -> int:
        return len({a.vm_id for a in self.attacks})

    @property
    def trial_attacks(self) -> tuple[str, ...]:
        train = set(self.train_attacks)
        return tuple(a.attack_id for a in self.attacks if a.attack_id not in train)

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise SynthConfigError("mix weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise SynthConfigError("alpha + beta + gamma must be positive")
        if self.dim < 2:
            raise SynthConfigError("dim must be at least 2")
        if self.noise_sigma < 0:
            raise SynthConfigError("noise_sigma must be non-negative")
        if not 0 <= self.co_fraction <= 1 or not 0 < self.fingerprint_fraction < 1:
            raise SynthConfigError("fractions out of range")
        if self.utts_per_attack < 2:
            raise SynthConfigError("need at least two utterances per attack")
        ids = [a.attack_id for a in self.attacks]
        if len(set(ids)) != len(ids):
            raise SynthConfigError("attack ids must be unique")
        unknown = (set(self.train_attacks) | set(self.fingerprint_attacks)) - set(ids)
        if unknown:
            raise SynthConfigError(f"unknown attacks {sorted(unknown)}")
        for p in ("train", "fingerprint", "trial"):
            if self.speakers_per_partition.get(p, 0) < 1:
                raise SynthConfigError(f"partition {p} needs at least one speaker")

    def to_dict(self) -> dict:
        return {
            "attacks": [a.__dict__ for a in self.attacks],
            "train_attacks": list(self.train_attacks),
            "fingerprint_attacks": list(self.fingerprint_attacks),
            "dim": self.dim,
            "utts_per_attack": self.utts_per_attack,
            "fingerprint_fraction": self.fingerprint_fraction,
            "speakers_per_partition": dict(self.speakers_per_partition),
            "noise_sigma": self.noise_sigma,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "co_fraction": self.co_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        d["attacks"] = tuple(AttackTags(**a) for a in d["attacks"])
        return cls(**d)


def _unit_rows(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def prototypes(config: SynthConfig) -> tuple[dict[str, np.ndarray], np.random.Generator]:
    """Unit prototype per attack, and the generator positioned for the noise draws."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    ams = sorted({a.am_id for a in config.attacks})
    vms = sorted({a.vm_id for a in config.attacks})
    u_am = dict(zip(ams, _unit_rows(rng, len(ams), config.dim)))
    u_vm = dict(zip(vms, _unit_rows(rng, len(vms), config.dim)))
    w = _unit_rows(rng, len(config.attacks), config.dim)
    out = {}
    for a, wk in zip(config.attacks, w):
        p = config.alpha * u_am[a.am_id] + config.beta * u_vm[a.vm_id] + config.gamma * wk
        n = np.linalg.norm(p)
        if n == 0:
            raise SynthConfigError(f"prototype of {a.attack_id} cancels to zero")
        out[a.attack_id] = p / n
    return out, rng


def generate(config: SynthConfig) -> tuple[EmbeddingSet, list[ManifestRecord]]:
    protos, rng = prototypes(config)
    train = set(config.train_attacks)
    enrolled = set(config.fingerprint_attacks)
    n = config.utts_per_attack
    n_fp = int(round(config.fingerprint_fraction * n))
    speaker_next = {"train": 0, "fingerprint": 0, "trial": 0}
    rows, records = [], []
    for a in config.attacks:
        proto = protos[a.attack_id]
        if config.noise_sigma == 0:
            utts = np.tile(proto, (n, 1))
        else:
            noisy = proto + config.noise_sigma * rng.standard_normal((n, config.dim))
            utts = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
        if a.attack_id in train:
            parts = ["train"] * n
        elif a.attack_id in enrolled:
            parts = ["fingerprint"] * n_fp + ["trial"] * (n - n_fp)
        else:
            parts = ["trial"] * n
        counts = {p: parts.count(p) for p in set(parts)}
        seen = {p: 0 for p in counts}
        for j, (vec, part) in enumerate(zip(utts, parts)):
            n_spk = config.speakers_per_partition[part]
            spk = f"{part}-spk{speaker_next[part] % n_spk:03d}"
            speaker_next[part] += 1
            content = "co" if seen[part] < round(config.co_fraction * counts[part]) else "nc"
            seen[part] += 1
            records.append(ManifestRecord(
                utt_id=f"{a.attack_id}_{j:05d}", attack_id=a.attack_id, am_id=a.am_id, vm_id=a.vm_id,
                am_arch=a.am_arch, vm_arch=a.vm_arch, speaker_id=spk, partition=part, content=content,
            ))
            rows.append(vec)
    emb = EmbeddingSet(config.dim, np.array(rows), tuple(r.utt_id for r in records))
    return emb, records


AM_ARCH = {"am1": "ar", "am2": "ar", "am3": "fs", "am4": "fs", "am5": "vits", "am6": "vits",
           "am7": "glow", "am8": "glow"}
VM_ARCH = {"vm1": "gan", "vm2": "gan", "vm3": "flow", "vm4": "flow", "vm5": "diff", "vm6": "diff"}
_REFERENCE_ATTACKS = [
    ("A01", "am1", "vm1"), ("A02", "am2", "vm2"), ("A03", "am3", "vm3"),
    ("A04", "am4", "vm4"), ("A05", "am5", "vm5"), ("A06", "am6", "vm4"),
    ("A07", "am4", "vm6"), ("A08", "am7", "vm5"),
    ("A09", "am8", "vm4"), ("A10", "am5", "vm6"), ("A11", "am6", "vm5"),
    ("A12", "am7", "vm6"), ("A13", "am8", "vm5"),
]


def reference_config(seed: int = 0, **overrides) -> SynthConfig:
    """Reference layout: 13 attacks over 8 AMs and 6 VMs; 3 train, 5 enrolled, 5 OOD."""
    attacks = tuple(AttackTags(a, am, vm, AM_ARCH[am], VM_ARCH[vm]) for a, am, vm in _REFERENCE_ATTACKS)
    cfg = SynthConfig(
        attacks=attacks,
        train_attacks=("A01", "A02", "A03"),
        fingerprint_attacks=("A04", "A05", "A06", "A07", "A08"),
        seed=seed,
    )
    return replace(cfg, **overrides)


def flat_config(n_attacks: int = 8, n_train: int = 2, n_enrolled: int = 3, seed: int = 0, **overrides) -> SynthConfig:
    """Every attack with its own AM, VM and architecture tags (all levels coincide)."""
    attacks = tuple(
        AttackTags(f"B{k:02d}", f"bam{k}", f"bvm{k}", f"bamf{k}", f"bvmf{k}") for k in range(n_attacks)
    )
    cfg = SynthConfig(
        attacks=attacks,
        train_attacks=tuple(a.attack_id for a in attacks[:n_train]),
        fingerprint_attacks=tuple(a.attack_id for a in attacks[n_train:n_train + n_enrolled]),
        utts_per_attack=40,
        speakers_per_partition={"train": 4, "fingerprint": 3, "trial": 5},
        seed=seed,
    )
    return replace(cfg, **overrides)


def lift_features(rows: np.ndarray, raw_dim: int, noise: float, seed: int) -> np.ndarray:
    """Higher-dimensional noisy "raw feature" views of embeddings, for projector training."""
    rng = np.random.default_rng(seed)
    rows = np.asarray(rows, dtype=np.float64)
    mix = rng.standard_normal((rows.shape[1], raw_dim)) / np.sqrt(rows.shape[1])
    return rows @ mix + noise * rng.standard_normal((rows.shape[0], raw_dim))
