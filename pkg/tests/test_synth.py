from dataclasses import replace

import numpy as np
import pytest

from srctrace.synth import (
    AttackTags,
    SynthConfig,
    SynthConfigError,
    flat_config,
    generate,
    prototypes,
    reference_config,
)


def test_noiseless_utterances_equal_prototypes():
    cfg = reference_config(seed=2, noise_sigma=0.0, utts_per_attack=20)
    emb, records = generate(cfg)
    protos, _ = prototypes(cfg)
    for row, r in zip(emb.rows, records):
        assert np.array_equal(row, protos[r.attack_id])


def test_same_seed_is_bit_identical():
    a = generate(reference_config(seed=9, utts_per_attack=30))
    b = generate(reference_config(seed=9, utts_per_attack=30))
    assert a[0] == b[0] and a[1] == b[1]
    assert generate(reference_config(seed=10, utts_per_attack=30))[0] != a[0]


def test_embeddings_are_unit_norm(reference_dataset):
    emb, _ = reference_dataset
    assert np.max(np.abs(np.linalg.norm(emb.rows, axis=1) - 1.0)) <= 1e-9


def test_manifest_structure(reference_dataset):
    emb, records = reference_dataset
    assert [r.utt_id for r in records] == list(emb.ids)
    cfg = reference_config()
    by_part = {}
    for r in records:
        by_part.setdefault(r.partition, set()).add(r.attack_id)
    assert by_part["train"] == set(cfg.train_attacks)
    assert by_part["fingerprint"] == set(cfg.fingerprint_attacks)
    assert by_part["trial"] == set(cfg.trial_attacks)
    speakers = {p: {r.speaker_id for r in records if r.partition == p} for p in by_part}
    assert not (speakers["train"] & speakers["trial"])
    assert len(speakers["trial"]) == 48
    co = [r for r in records if r.attack_id == "A04" and r.partition == "fingerprint"]
    assert sum(r.content == "co" for r in co) == round(0.25 * len(co))


def test_reference_layout_shares_models():
    cfg = reference_config()
    assert len(cfg.attacks) == 13 and cfg.n_am == 8 and cfg.n_vm == 6
    assert len(cfg.trial_attacks) == 10


def _cos(a, b):
    return np.sum(a * b, axis=1)


def test_shared_vocoder_raises_cross_attack_similarity():
    wins = 0
    for seed in range(10):
        cfg = reference_config(seed=seed, beta=3.0, gamma=0.3, noise_sigma=0.1, utts_per_attack=40)
        emb, records = generate(cfg)
        rows = {a.attack_id: emb.rows[[i for i, r in enumerate(records) if r.attack_id == a.attack_id]]
                for a in cfg.attacks}
        same_vm, different = [], []
        for i, a in enumerate(cfg.attacks):
            for b in cfg.attacks[i + 1:]:
                c = float(np.mean(_cos(rows[a.attack_id], rows[b.attack_id])))
                if a.vm_id == b.vm_id and a.am_id != b.am_id:
                    same_vm.append(c)
                elif a.vm_id != b.vm_id and a.am_id != b.am_id:
                    different.append(c)
        wins += np.mean(same_vm) > np.mean(different)
    assert wins == 10


def test_noise_does_not_tighten_clusters():
    for seed in range(10):
        spreads = []
        for sigma in (0.1, 0.4, 0.8, 1.6):
            cfg = flat_config(seed=seed, noise_sigma=sigma)
            emb, records = generate(cfg)
            protos, _ = prototypes(cfg)
            p = np.array([protos[r.attack_id] for r in records])
            spreads.append(float(np.mean(1.0 - _cos(emb.rows, p))))
        assert spreads == sorted(spreads)


@pytest.mark.parametrize("override", [
    {"alpha": 0.0, "beta": 0.0, "gamma": 0.0},
    {"alpha": -1.0},
    {"dim": 1},
    {"noise_sigma": -0.1},
    {"co_fraction": 1.5},
    {"utts_per_attack": 1},
    {"speakers_per_partition": {"train": 1, "fingerprint": 0, "trial": 1}},
])
def test_invalid_configs(override):
    with pytest.raises(SynthConfigError):
        generate(replace(flat_config(), **override))


def test_duplicate_and_unknown_attacks():
    tags = AttackTags("X", "a", "v", "aa", "va")
    with pytest.raises(SynthConfigError):
        SynthConfig((tags, tags), ("X",), ()).validate()
    with pytest.raises(SynthConfigError):
        SynthConfig((tags,), ("Y",), ()).validate()


def test_config_dict_round_trip():
    cfg = reference_config(seed=4, dim=16)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
