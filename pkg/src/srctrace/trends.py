"""In-memory synthetic experiments: enrollment-size and backend comparisons without disk artifacts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends as bk
from .fingerprint import mean_embedding
from .metrics import compute_eer, pool_by_level
from .pipeline import derive_seed
from .protocol import generate_trials, partition_attacks, select_fingerprint_utts
from .store import validate_manifest
from .synth import SynthConfig, generate


@dataclass
class SyntheticRun:
    config: SynthConfig
    data: object
    plan: object
    trials: list
    rows: list[int]
    claims: list[str]

    @classmethod
    def build(cls, config: SynthConfig) -> "SyntheticRun":
        emb, records = generate(config)
        data = validate_manifest(records, emb)
        plan = partition_attacks(records, config.train_attacks, config.fingerprint_attacks, config.trial_attacks)
        trials = generate_trials(plan, records)
        by_id = data.by_id()
        return cls(config, data, plan, trials, [by_id[t.trial_utt_id] for t in trials],
                   [t.claimed_attack_id for t in trials])

    def bank(self, r, content: str = "nc") -> dict[str, np.ndarray]:
        return {
            a: mean_embedding(self.data.vectors(select_fingerprint_utts(
                self.data.records, a, r, content, derive_seed(self.config.seed, "enroll", str(r), a))))
            for a in sorted(self.plan.fingerprint_attacks)
        }

    def eer(self, backend, bank, level: str = "attack", condition: str = "ID") -> float:
        scores = bk.score_pairs(backend, self.data.embeddings.rows, self.rows, self.claims, bank)
        keyed = {(t.trial_utt_id, t.claimed_attack_id): float(s) for t, s in zip(self.trials, scores)}
        pool = pool_by_level(self.trials, keyed, level, condition)
        return compute_eer(pool.scores, pool.is_target)[0]

    def train_mlp(self, **kwargs) -> bk.MlpModel:
        recs = self.plan.records(self.data.records, "fingerprint")
        return bk.train_mlp(self.data.vectors([r.utt_id for r in recs]), [r.attack_id for r in recs],
                            sorted(self.plan.fingerprint_attacks),
                            seed=derive_seed(self.config.seed, "train", "fs-mlp"), **kwargs)


def enrollment_trend(configs, r_values=(1, 10, 100), condition: str = "ID") -> dict:
    """Per r, the zero-shot cosine attack EER of every config."""
    out = {r: [] for r in r_values}
    for cfg in configs:
        run = SyntheticRun.build(cfg)
        for r in r_values:
            out[r].append(run.eer("cosine", run.bank(r), "attack", condition))
    return out


def backend_comparison(configs, r="all") -> dict:
    """Attack EER per (backend, condition) for zero-shot cosine and the few-shot MLP."""
    out: dict[tuple[str, str], list[float]] = {}
    for cfg in configs:
        run = SyntheticRun.build(cfg)
        bank = run.bank(r)
        mlp = run.train_mlp()
        for name, backend in (("zs-cosine", "cosine"), ("fs-mlp", mlp)):
            for cond in ("ID", "OOD"):
                out.setdefault((name, cond), []).append(run.eer(backend, bank, "attack", cond))
    return out
