"""Experiment configuration and the pipeline stages run by the CLI.

Each stage reads the artifacts of the previous ones from ``output_dir`` and
writes its own; identical config and seeds give byte-identical files.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import backends as bk
from .fingerprint import build_fingerprint, mean_embedding, read_bank, write_bank
from .metrics import CONDITIONS, evaluate, report_from_json, report_to_json, report_to_tsv
from .protocol import (
    ALL,
    PartitionPlan,
    format_trials,
    generate_pairs,
    generate_trials,
    parse_trials,
    partition_attacks,
    select_fingerprint_utts,
)
from .store import (
    LEVELS,
    EmbeddingSet,
    ValidatedDataset,
    ValidationError,
    load_dataset,
    read_manifest,
    write_embeddings,
    write_manifest,
)
from .synth import SynthConfig, flat_config, generate as synth_generate, reference_config

log = logging.getLogger(__name__)

BACKENDS = ("zs-cosine", "zs-siamese-cl", "fs-siamese-cl", "fs-siamese-ce", "fs-mlp")
TRAINED = {
    "zs-siamese-cl": ("train", "contrastive"),
    "fs-siamese-cl": ("fingerprint", "contrastive"),
    "fs-siamese-ce": ("fingerprint", "ce"),
    "fs-mlp": ("fingerprint", None),
}
SIAMESE_DEFAULTS = {"epochs": 100, "lr": 1e-3, "n_pairs": 50000, "margin": 1.0}
MLP_DEFAULTS = {"epochs": 100, "lr": 1e-3}
PROJECTOR_DEFAULTS = {"enabled": False, "epochs": 100, "lr": 1e-4, "scale": 30.0, "margin": 0.5,
                      "dims": [128, 64]}


class ConfigError(ValueError):
    pass


def derive_seed(base: int, *tags) -> int:
    """Independent stream seed for a (purpose, index, ...) tag tuple."""
    words = [int(base)] + [t if isinstance(t, int) else int.from_bytes(str(t).encode(), "little") % 2**32
                           for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    embeddings: Path
    manifest: Path
    output_dir: Path
    seed: int = 0
    synth: SynthConfig | None = None
    partition: dict[str, list[str]] | None = None
    r_values: list = field(default_factory=lambda: [1, 10, 100, ALL])
    content: str = "nc"
    trial_source: str = "both"
    backends: dict[str, dict] = field(default_factory=lambda: {b: {} for b in BACKENDS})
    projector: dict[str, Any] = field(default_factory=lambda: dict(PROJECTOR_DEFAULTS))

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: Path = Path(".")) -> "ExperimentConfig":
        try:
            paths = doc["paths"]
            resolve = lambda p: (base_dir / p) if not Path(p).is_absolute() else Path(p)  # noqa: E731
            synth = None
            if "synth" in doc:
                s = dict(doc["synth"])
                preset = s.pop("preset", None)
                if preset == "reference":
                    synth = reference_config(**s)
                elif preset == "flat":
                    synth = flat_config(**s)
                elif preset is None:
                    synth = SynthConfig.from_dict(s)
                else:
                    raise ConfigError(f"unknown synth preset {preset!r}")
            r_values = [ALL if r == ALL else int(r) for r in doc.get("r_values", [1, 10, 100, ALL])]
            if any(r != ALL and r < 1 for r in r_values):
                raise ConfigError("r values must be positive or 'all'")
            chosen = doc.get("backends", {b: {} for b in BACKENDS})
            if isinstance(chosen, list):
                chosen = {b: {} for b in chosen}
            unknown = set(chosen) - set(BACKENDS)
            if unknown:
                raise ConfigError(f"unknown backends {sorted(unknown)}")
            projector = {**PROJECTOR_DEFAULTS, **doc.get("projector", {})}
            content = doc.get("content", "nc")
            if content not in ("co", "nc"):
                raise ConfigError("content must be 'co' or 'nc'")
            cfg = cls(
                embeddings=resolve(paths["embeddings"]),
                manifest=resolve(paths["manifest"]),
                output_dir=resolve(paths["output_dir"]),
                seed=int(doc.get("seed", 0)),
                synth=synth,
                partition=doc.get("partition"),
                r_values=r_values,
                content=content,
                trial_source=doc.get("trial_source", "both"),
                backends={b: dict(v) for b, v in chosen.items()},
                projector=projector,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc
        if cfg.partition is None and cfg.synth is None:
            raise ConfigError("config needs a 'partition' section (or a 'synth' section to derive it)")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def partition_split(self) -> dict[str, list[str]]:
        if self.partition is not None:
            return self.partition
        if self.synth is None:
            raise ConfigError("config needs a 'partition' section when there is no 'synth' section")
        return {
            "train_attacks": list(self.synth.train_attacks),
            "fingerprint_attacks": list(self.synth.fingerprint_attacks),
            "trial_attacks": list(self.synth.trial_attacks),
        }

    def out(self, *parts) -> Path:
        p = self.output_dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _r_tag(r) -> str:
    return "all" if r == ALL else str(r)


# ---------------------------------------------------------------- stages


def run_synth(cfg: ExperimentConfig) -> None:
    if cfg.synth is None:
        raise ConfigError("synth stage needs a 'synth' config section")
    emb, records = synth_generate(cfg.synth)
    cfg.embeddings.parent.mkdir(parents=True, exist_ok=True)
    cfg.manifest.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(emb, cfg.embeddings)
    write_manifest(records, cfg.manifest)
    log.info("wrote %d synthetic embeddings (dim %d)", len(emb), emb.dim)


def _plan(cfg: ExperimentConfig, manifest) -> PartitionPlan:
    split = cfg.partition_split()
    return partition_attacks(manifest, split["train_attacks"], split["fingerprint_attacks"], split["trial_attacks"])


def run_protocol(cfg: ExperimentConfig) -> None:
    manifest = read_manifest(cfg.manifest)
    plan = _plan(cfg, manifest)
    trials = generate_trials(plan, manifest, cfg.trial_source)
    _write(cfg.out("plan.json"), json.dumps(plan.to_dict(), indent=1, sort_keys=True) + "\n")
    _write(cfg.out("trials.tsv"), format_trials(trials))
    log.info("%d trials over %d enrolled attacks", len(trials), len(plan.fingerprint_attacks))


def _load_plan(cfg: ExperimentConfig) -> PartitionPlan:
    return PartitionPlan.from_dict(json.loads((cfg.output_dir / "plan.json").read_text(encoding="utf-8")))


def _enrollment(cfg: ExperimentConfig, plan: PartitionPlan, manifest) -> dict:
    out = {}
    for r in cfg.r_values:
        out[r] = {
            a: select_fingerprint_utts(manifest, a, r, cfg.content, derive_seed(cfg.seed, "enroll", _r_tag(r), a))
            for a in sorted(plan.fingerprint_attacks)
        }
    return out


def run_fingerprint(cfg: ExperimentConfig) -> None:
    data = load_dataset(cfg.embeddings, cfg.manifest)
    plan = _load_plan(cfg)
    for r, chosen in _enrollment(cfg, plan, data.records).items():
        fps = [build_fingerprint(data.vectors(utts), a, cfg.content) for a, utts in chosen.items()]
        write_bank(fps, cfg.out("fingerprints", f"r{_r_tag(r)}.atke"))
        lines = [f"{a}\t{u}" for a, utts in chosen.items() for u in utts]
        _write(cfg.out("fingerprints", f"r{_r_tag(r)}.enroll.tsv"), "\n".join(lines) + "\n")


def _projected(cfg: ExperimentConfig, data: ValidatedDataset) -> ValidatedDataset:
    """Dataset in the space the backends score in (projector output when enabled)."""
    if not cfg.projector.get("enabled"):
        return data
    model = bk.ProjectorModel.from_json((cfg.output_dir / "models" / "projector.json").read_text(encoding="utf-8"))
    rows = model.embed(data.embeddings.rows)
    return ValidatedDataset(EmbeddingSet(rows.shape[1], rows, data.embeddings.ids), data.records)


def run_train(cfg: ExperimentConfig) -> None:
    data = load_dataset(cfg.embeddings, cfg.manifest)
    plan = _load_plan(cfg)
    if cfg.projector.get("enabled"):
        p = cfg.projector
        recs = plan.records(data.records, "train")
        model = bk.train_projector(
            data.vectors([r.utt_id for r in recs]), [r.attack_id for r in recs], dims=p["dims"],
            scale=p["scale"], margin=p["margin"], epochs=p["epochs"], lr=p["lr"],
            seed=derive_seed(cfg.seed, "projector"),
        )
        _write(cfg.out("models", "projector.json"), model.to_json())
    data = _projected(cfg, data)
    for name in sorted(cfg.backends):
        if name not in TRAINED:
            continue
        partition, mode = TRAINED[name]
        recs = plan.records(data.records, partition)
        seed = derive_seed(cfg.seed, "train", name)
        if mode is None:
            hp = {**MLP_DEFAULTS, **cfg.backends[name]}
            model = bk.train_mlp(data.vectors([r.utt_id for r in recs]), [r.attack_id for r in recs],
                                 sorted(plan.fingerprint_attacks), epochs=hp["epochs"], lr=hp["lr"], seed=seed)
        else:
            hp = {**SIAMESE_DEFAULTS, **cfg.backends[name]}
            pairs = generate_pairs(recs, int(hp["n_pairs"]), derive_seed(cfg.seed, "pairs", name))
            model = bk.train_siamese(data.vectors(pairs.left), data.vectors(pairs.right), pairs.same, mode,
                                     epochs=hp["epochs"], lr=hp["lr"], margin=hp["margin"], seed=seed)
        _write(cfg.out("models", f"{name}.json"), model.to_json())
        log.info("trained %s on %d %s utterances", name, len(recs), partition)


def _load_backend(cfg: ExperimentConfig, name: str):
    if name == "zs-cosine":
        return "cosine"
    text = (cfg.output_dir / "models" / f"{name}.json").read_text(encoding="utf-8")
    return bk.MlpModel.from_json(text) if name == "fs-mlp" else bk.SiameseModel.from_json(text)


def _bank_vectors(cfg: ExperimentConfig, r, data: ValidatedDataset) -> dict[str, np.ndarray]:
    if not cfg.projector.get("enabled"):
        return {a: fp.vector for a, fp in read_bank(cfg.output_dir / "fingerprints" / f"r{_r_tag(r)}.atke").items()}
    chosen: dict[str, list[str]] = {}
    for line in (cfg.output_dir / "fingerprints" / f"r{_r_tag(r)}.enroll.tsv").read_text(encoding="utf-8").splitlines():
        a, u = line.split("\t")
        chosen.setdefault(a, []).append(u)
    return {a: mean_embedding(data.vectors(u)) for a, u in chosen.items()}


def format_scores(rows) -> str:
    return "".join(f"{u}\t{c}\t{b}\t{s!r}\n" for u, c, b, s in rows)


def parse_scores(text: str) -> dict[str, dict[tuple[str, str], float]]:
    out: dict[str, dict[tuple[str, str], float]] = {}
    for n, line in enumerate(text.splitlines(), 1):
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValidationError(f"score file line {n}: expected 4 columns")
        out.setdefault(cols[2], {})[(cols[0], cols[1])] = float(cols[3])
    return out


def run_score(cfg: ExperimentConfig) -> None:
    data = _projected(cfg, load_dataset(cfg.embeddings, cfg.manifest))
    trials = parse_trials((cfg.output_dir / "trials.tsv").read_text(encoding="utf-8"))
    by_id = data.by_id()
    rows_idx = [by_id[t.trial_utt_id] for t in trials]
    claims = [t.claimed_attack_id for t in trials]
    models = {name: _load_backend(cfg, name) for name in sorted(cfg.backends)}
    for r in cfg.r_values:
        bank = _bank_vectors(cfg, r, data)
        lines = []
        for name, model in models.items():
            scores = bk.score_pairs(model, data.embeddings.rows, rows_idx, claims, bank)
            lines.extend((t.trial_utt_id, t.claimed_attack_id, name, float(s)) for t, s in zip(trials, scores))
        _write(cfg.out("scores", f"r{_r_tag(r)}.tsv"), format_scores(lines))


def run_eval(cfg: ExperimentConfig) -> None:
    trials = parse_trials((cfg.output_dir / "trials.tsv").read_text(encoding="utf-8"))
    for r in cfg.r_values:
        scores = parse_scores((cfg.output_dir / "scores" / f"r{_r_tag(r)}.tsv").read_text(encoding="utf-8"))
        entries = evaluate(trials, scores, LEVELS, CONDITIONS)
        meta = {"r": _r_tag(r), "content": cfg.content, "n_trials": len(trials)}
        _write(cfg.out("reports", f"r{_r_tag(r)}.json"), report_to_json(entries, meta))
        _write(cfg.out("reports", f"r{_r_tag(r)}.tsv"), report_to_tsv(entries))


def run_report(cfg: ExperimentConfig) -> str:
    """Trend table: one row per (backend, level, condition), one EER column per enrollment size."""
    tags = [_r_tag(r) for r in cfg.r_values]
    table: dict[tuple, dict[str, float]] = {}
    for tag in tags:
        entries, _ = report_from_json((cfg.output_dir / "reports" / f"r{tag}.json").read_text(encoding="utf-8"))
        for e in entries:
            table.setdefault((e.backend, e.level, e.condition), {})[tag] = e.eer
    header = "backend\tlevel\tcondition\t" + "\t".join(f"r={t}" for t in tags)
    lines = [header]
    for key in sorted(table):
        row = table[key]
        lines.append("\t".join(key) + "\t" + "\t".join(f"{100 * row[t]:.2f}" if t in row else "-" for t in tags))
    text = "\n".join(lines) + "\n"
    _write(cfg.out("reports", "trend.tsv"), text)
    return text


STAGES = {
    "synth": run_synth,
    "protocol": run_protocol,
    "fingerprint": run_fingerprint,
    "train": run_train,
    "score": run_score,
    "eval": run_eval,
    "report": run_report,
}
