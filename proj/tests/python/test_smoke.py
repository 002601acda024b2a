"""End-to-end smoke tests for the Python bindings."""

import numpy as np
import pytest

import biasaudit as ba


def small_lexicon():
    return ba.Lexicon.from_parts(
        [("she", "he"), ("woman", "man"), ("mother", "father")],
        ["nurse", "dancer"],
        ["engineer", "lawyer"],
        [("mary", "john")],
    )


def small_corpus(lex):
    lines = []
    for female, male in lex.attribute_pairs():
        for word in (female, male):
            lines.append(f"{word} works at the office today")
            lines.append(f"yesterday {word} stayed at home")
            lines.append(f"{word} said hello to everyone")
    for word in lex.stereotype_words():
        lines.append(f"the {word} works at night")
        lines.append(f"every {word} takes the early train")
    return lines


FILLERS = [
    "works", "at", "the", "office", "today", "yesterday", "stayed", "home",
    "said", "hello", "to", "everyone", "every", "takes", "early", "train",
    "night", "a", "is",
]


def planted_model(lex, seed=3):
    config = ba.PlantedModelConfig()
    config.hidden_size = 8
    config.seed = seed
    return ba.make_planted_model(lex, FILLERS, config)


def test_version_and_default_lexicon():
    assert isinstance(ba.__version__, str) and ba.__version__
    lex = ba.Lexicon.default()
    assert len(lex.attribute_pairs()) >= 50
    assert len(lex.name_pairs()) >= 10
    assert len(lex.stereotype_words()) == len(lex.stereotypes_female()) + len(
        lex.stereotypes_male()
    )
    assert lex.counterfactual("she") == "he"
    assert lex.counterfactual("table") is None


def test_swap_and_scrub():
    lex = ba.Lexicon.default()
    swapped, count = ba.swap_gender_terms("She met John at the office.", lex)
    assert swapped == "He met Mary at the office."
    assert count == 2
    unchanged, count = ba.swap_gender_terms("The office is busy.", lex)
    assert unchanged == "The office is busy."
    assert count == 0
    scrubbed = ba.scrub_text("she works as a nurse", lex)
    assert "she" not in scrubbed.split()
    assert "nurse" in scrubbed.split()


def test_subspace_projection():
    pairs = [
        (np.array([1.0, 0.2, 0.0]), np.array([-1.0, 0.1, 0.0])),
        (np.array([0.8, -0.1, 0.1]), np.array([-0.9, 0.0, 0.1])),
    ]
    subspace = ba.compute_bias_subspace(pairs, 1)
    assert subspace.k() == 1
    assert subspace.hidden_size() == 3
    v = np.array([0.3, 0.4, 0.5])
    debiased = ba.sent_debias(v, subspace)
    assert abs(float(subspace.basis[:, 0] @ debiased)) < 1e-9
    again = ba.sent_debias(debiased, subspace)
    assert np.allclose(again, debiased, atol=1e-12)


def test_banks_and_intrinsic_metrics():
    lex = small_lexicon()
    model = planted_model(lex)
    assert model.identifier == "planted"
    corpus = small_corpus(lex)

    attr_bank = ba.build_bank(model, corpus, lex.attribute_words(), cap=10, seed=1)
    stereo_bank = ba.build_bank(
        model, corpus, lex.stereotype_words(), exclusion=lex.attribute_words(), cap=10, seed=1
    )
    assert attr_bank.has("she") and stereo_bank.has("nurse")
    merged = ba.EmbeddingBank.merge(attr_bank, stereo_bank)

    seat = ba.seat_test(merged, lex, ["she", "woman"], ["he", "man"])
    assert set(seat) >= {"test_statistic", "effect_size", "associations"}
    assert len(seat["associations"]) == 4

    lpbs = ba.attribute_lpbs(
        model, list(ba.default_templates()), ["nurse", "engineer"], [("she", "he")]
    )
    assert np.isfinite(lpbs["score"])
    assert len(lpbs["per_template"]) == len(ba.default_templates())
    tgt = ba.target_lpbs(model, ["{attribute} is a {target}."], ["nurse"], [("she", "he")])
    assert np.isfinite(tgt["score"])


def test_probe_detects_planted_geometry():
    lex = small_lexicon()
    model = planted_model(lex)
    corpus = small_corpus(lex)
    attr_bank = ba.build_bank(model, corpus, lex.attribute_words(), cap=10, seed=1)
    stereo_bank = ba.build_bank(
        model, corpus, lex.stereotype_words(), exclusion=lex.attribute_words(), cap=10, seed=1
    )
    probe = ba.run_probe(
        attr_bank,
        stereo_bank,
        lex,
        train_fraction=0.8,
        epochs=80,
        randomization_iterations=20,
        seed=5,
    )
    assert probe["train_pair_count"] == 2
    assert probe["test_pair_count"] == 1
    assert 0.0 <= probe["p_value"] <= 1.0
    assert probe["bias_accuracy"] >= 0.75
    assert len(probe["stereotype_word_scores"]) == 4


def test_downstream_eval_and_ingest(tmp_path):
    lex = small_lexicon()
    model = planted_model(lex)
    csv = tmp_path / "data.csv"
    rows = ["text,label,gender"]
    for _ in range(4):
        rows.append("she is a nurse at the office,nurse,f")
        rows.append("he is a nurse at the office,nurse,m")
        rows.append("she is an engineer at home,engineer,f")
        rows.append("he is an engineer at home,engineer,m")
    csv.write_text("\n".join(rows) + "\n")

    examples = ba.ingest_generic(csv)
    assert len(examples) == 16
    assert {e.group for e in examples} == {"f", "m"}

    result = ba.run_downstream_eval(
        model,
        examples,
        lex,
        folds=2,
        intervention="original",
        epochs=1,
        learning_rate=0.1,
        batch_size=4,
        sequence_length=12,
        seed=2,
    )
    assert result["folds"] == 2
    assert result["num_classes"] == 2
    assert result["intervention"] == "original"
    assert len(result["cf"]["per_fold"]) == 2
    assert np.isfinite(result["cf"]["mean"])


def test_run_audit_provenance_only(tmp_path):
    lex = small_lexicon()
    model = planted_model(lex)
    model_path = tmp_path / "model.json"
    model.save(model_path)

    config = {
        "model": f"file:{model_path}",
        "output_dir": str(tmp_path / "out"),
        "metrics": {
            "seat": False,
            "attribute_lpbs": False,
            "target_lpbs": False,
            "probe": False,
            "extrinsic": False,
        },
    }
    outcome = ba.run_audit(config)
    assert outcome["failed"] is False
    assert outcome["files"] == []
    assert len(outcome["reports"]) == 1
    report = outcome["reports"][0]
    assert report["mitigation"] == "none"
    assert report["provenance"]["config_hash"]
    assert report["provenance"]["model_identifier"] == "planted"

    bad = dict(config, jobs=0)
    with pytest.raises(ba.ValidationError):
        ba.run_audit(bad)
