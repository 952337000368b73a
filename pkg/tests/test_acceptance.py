"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances."""
import json
import time

import numpy as np
import pytest

from factories import plan_is_sound, random_layout, random_manifest
from eer_oracle import midpoint_eer
from srctrace import backends as bk
from srctrace.cli import EXIT_OK, main
from srctrace.gradcheck import TOLERANCE, run_case
from srctrace.metrics import compute_eer
from srctrace.nn import AamHead, aam_loss, init_params, softmax_ce
from srctrace.protocol import DisjointnessError, PartitionPlan, SpeakerLeakError, SubsetError, partition_attacks
from srctrace.store import LEVELS, EmbeddingSet, read_embeddings, write_embeddings
from srctrace.synth import flat_config, reference_config
from srctrace.trends import SyntheticRun, backend_comparison, enrollment_trend


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradients(verdict):
    names = ["aam_loss(s=30,m=0.5)", "contrastive_loss", "softmax_ce", "binary_ce"]
    t0 = time.perf_counter()
    results = [run_case(n, points=100, seed=0) for n in names]
    seconds = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in results)
    detail = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in results) + f"; {seconds:.2f}s"
    verdict(1, "analytic vs central-difference gradients", worst < TOLERANCE and seconds < 10.0, detail)


def test_criterion_2_aam_reduction(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        c, dim = int(rng.integers(2, 12)), int(rng.integers(2, 40))
        scale = float(rng.uniform(0.5, 64.0))
        head = AamHead(rng.standard_normal((c, dim)), scale, 0.0)
        e = rng.standard_normal(dim) * rng.uniform(0.01, 100)
        y = int(rng.integers(c))
        cos = head.class_weights @ (e / np.linalg.norm(e))
        loss, _ = aam_loss(e, head, y)
        worst = max(worst, abs(loss - softmax_ce(scale * cos, y)))
    verdict(2, "AAM with m=0 equals softmax CE over s*cos", worst <= 1e-12,
            f"max |diff| {worst:.2e} over 1000 inputs")


def test_criterion_3_eer_oracle(verdict):
    rng = np.random.default_rng(3)
    worst, invariant = 0.0, True
    for k in range(1000):
        n = int(rng.integers(2, 501))
        scores = rng.normal(size=n) if k % 3 else rng.integers(0, 1 + k % 17, size=n).astype(float)
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[rng.permutation(n)[:2]] = (True, False)
        eer, _ = compute_eer(scores, labels)
        worst = max(worst, abs(eer - midpoint_eer(scores, labels)))
        distinct = np.unique(scores)
        image = np.cumsum(rng.uniform(0.001, 5.0, distinct.size))
        invariant &= compute_eer(image[np.searchsorted(distinct, scores)], labels)[0] == eer
    verdict(3, "EER equals midpoint oracle; monotone invariance exact", worst <= 1e-12 and invariant,
            f"max |diff| {worst:.2e} over 1000 instances, invariance {'exact' if invariant else 'BROKEN'}")


def test_criterion_4_protocol_soundness(verdict):
    rng = np.random.default_rng(4)
    agreed = 0
    for _ in range(100):
        attacks, train, fp, trial = random_layout(rng)
        kind = rng.integers(4)
        if kind == 1:  # reuse a training attack
            fp = fp + [train[0]]
            trial = trial + [train[0]]
        elif kind == 2:  # enrolled set equals the trial set
            trial = list(fp)
        manifest = random_manifest(rng, sorted(set(attacks)), train, fp, leak_speaker=kind == 3)
        claimed = PartitionPlan(frozenset(train), frozenset(fp), frozenset(trial), {})
        sound = plan_is_sound(claimed, manifest)
        try:
            plan = partition_attacks(manifest, train, fp, trial)
            ok = sound and plan_is_sound(plan, manifest)
        except (DisjointnessError, SubsetError, SpeakerLeakError):
            ok = not sound
        agreed += ok
    verdict(4, "partition plans re-verified by set algebra", agreed == 100,
            f"{agreed}/100 random manifests agree with the independent check")


def test_criterion_5_noiseless_separability(verdict):
    results = {}
    for seed in range(3):
        run = SyntheticRun.build(flat_config(seed=seed, noise_sigma=0.0))
        for r in (1, "all"):
            bank = run.bank(r)
            for lv in LEVELS:
                for cond in ("ID", "OOD"):
                    results[("flat", seed, r, lv, cond)] = run.eer("cosine", bank, lv, cond)
    ref = SyntheticRun.build(reference_config(seed=0, noise_sigma=0.0))
    bank = ref.bank("all")
    for cond in ("ID", "OOD"):
        results[("reference", 0, "all", "attack", cond)] = ref.eer("cosine", bank, "attack", cond)
    shared = {f"{lv}/{c}": round(ref.eer("cosine", bank, lv, c), 4)
              for lv in LEVELS[1:] for c in ("ID", "OOD")}
    worst = max(results.values())
    verdict(5, "sigma=0 gives zero-shot cosine EER exactly 0", worst == 0.0,
            f"max EER {worst} over {len(results)} (dataset, level, condition) pools; "
            f"reference config with shared AM/VM, levels above attack (reported only): {shared}")


def test_criterion_6_enrollment_trend(verdict):
    t0 = time.perf_counter()
    configs = [reference_config(seed=s, dim=64, noise_sigma=0.8) for s in range(5)]
    trend = enrollment_trend(configs, (1, 10, 100))
    seconds = time.perf_counter() - t0
    medians = [float(np.median(trend[r])) for r in (1, 10, 100)]
    ok = medians[0] >= medians[1] >= medians[2] and seconds < 120
    verdict(6, "median cosine attack-EER non-increasing in r", ok,
            "r=1/10/100 medians " + " / ".join(f"{100 * m:.2f}%" for m in medians) + f"; {seconds:.1f}s")


def test_criterion_7_backend_trend(verdict):
    configs = [reference_config(seed=s, dim=64, noise_sigma=0.8) for s in range(5)]
    res = backend_comparison(configs)
    med = {k: float(np.median(v)) for k, v in res.items()}
    ok = med[("fs-mlp", "ID")] <= med[("zs-cosine", "ID")]
    verdict(7, "few-shot MLP ID attack-EER <= zero-shot cosine", ok,
            f"ID: mlp {100 * med[('fs-mlp', 'ID')]:.2f}% vs cosine {100 * med[('zs-cosine', 'ID')]:.2f}%; "
            f"OOD (reported only): mlp {100 * med[('fs-mlp', 'OOD')]:.2f}% vs "
            f"cosine {100 * med[('zs-cosine', 'OOD')]:.2f}%")


def test_criterion_8_cli_determinism(tmp_path, verdict):
    artifacts = {}
    for name in ("first", "second"):
        doc = {
            "seed": 11,
            "paths": {"embeddings": f"{name}/emb.atke", "manifest": f"{name}/manifest.jsonl",
                      "output_dir": f"{name}/out"},
            "synth": {"preset": "reference", "utts_per_attack": 80, "seed": 11},
            "r_values": [1, 10, "all"],
            "backends": {
                "zs-cosine": {}, "fs-mlp": {"epochs": 30},
                "zs-siamese-cl": {"epochs": 5, "n_pairs": 2000},
                "fs-siamese-cl": {"epochs": 5, "n_pairs": 2000},
                "fs-siamese-ce": {"epochs": 5, "n_pairs": 2000},
            },
        }
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(doc))
        codes = [main([cmd, str(cfg)]) for cmd in ("synth", "protocol", "fingerprint", "train", "score", "eval",
                                                  "report")]
        assert codes == [EXIT_OK] * 7
        out = tmp_path / name / "out"
        artifacts[name] = {str(p.relative_to(out)): p.read_bytes()
                           for sub in ("scores", "reports") for p in sorted((out / sub).iterdir())}
    same = artifacts["first"] == artifacts["second"]
    verdict(8, "identical seeds give byte-identical scores and reports", same,
            f"{len(artifacts['first'])} score/report files compared")


def _net(model):
    return model.trunk if isinstance(model, bk.SiameseModel) else model.net


def test_criterion_9_round_trips(tmp_path, verdict):
    rng = np.random.default_rng(9)
    failures = 0
    for k in range(100):
        n, dim = int(rng.integers(0, 40)), int(rng.integers(1, 30))
        rows = (rng.standard_normal((n, dim)) * 10.0 ** rng.uniform(-3, 3)).astype(np.float32).astype(np.float64)
        emb = EmbeddingSet(dim, rows, tuple(f"utt{k}_{i}" for i in range(n)))
        write_embeddings(emb, tmp_path / "e.atke")
        failures += read_embeddings(tmp_path / "e.atke") != emb

        net = init_params([dim, int(rng.integers(1, 20)), int(rng.integers(2, 6))], k)
        net = net.with_parameters([p + rng.standard_normal(p.shape) for p in net.parameters()])
        ids = tuple(f"A{j}" for j in range(net.output_dim))
        models = [
            (bk.MlpModel, bk.MlpModel(net, ids)),
            (bk.SiameseModel, bk.SiameseModel(net, "ce", float(rng.uniform(0.1, 20)))),
            (bk.ProjectorModel, bk.ProjectorModel(net, AamHead(rng.standard_normal((3, net.output_dim))),
                                                  ("T0", "T1", "T2"))),
        ]
        for cls, model in models:
            back = cls.from_json(model.to_json())
            failures += not all(np.array_equal(p, q) for p, q in zip(_net(model).parameters(),
                                                                      _net(back).parameters()))
            failures += back.to_json() != model.to_json()
            if cls is bk.ProjectorModel:
                failures += not np.array_equal(back.head.class_weights, model.head.class_weights)
    verdict(9, "embedding and model serialization value-exact", failures == 0,
            f"{failures} mismatches over 100 embedding sets and 300 models")
