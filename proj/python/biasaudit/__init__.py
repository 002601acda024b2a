"""Gender bias auditing toolkit for contextualized language models."""

import json

from ._core import (
    BiasSubspace,
    CapabilityError,
    CoverageError,
    EmbeddingBank,
    FormatError,
    IoError,
    LabeledExample,
    Lexicon,
    Model,
    PlantedModelConfig,
    TrainingError,
    ValidationError,
    __version__,
    apply_sent_debias,
    build_bank,
    cda_pretrain,
    compute_bias_subspace,
    default_templates,
    equalize_pair,
    estimate_gender_subspace,
    generate_cda_corpus,
    ingest_generic,
    make_planted_model,
    resolve_model,
    run_context_debias,
    scrub_text,
    sent_debias,
    swap_gender_terms,
)
from ._core import attribute_lpbs_json as _attribute_lpbs_json
from ._core import run_audit_json as _run_audit_json
from ._core import run_downstream_eval_json as _run_downstream_eval_json
from ._core import run_probe_json as _run_probe_json
from ._core import seat_test_json as _seat_test_json
from ._core import target_lpbs_json as _target_lpbs_json


def seat_test(bank, lexicon, female_attributes, male_attributes):
    return json.loads(_seat_test_json(bank, lexicon, female_attributes, male_attributes))


def attribute_lpbs(model, templates, targets, attribute_pairs):
    return json.loads(_attribute_lpbs_json(model, templates, targets, attribute_pairs))


def target_lpbs(model, templates, targets, attribute_pairs):
    return json.loads(_target_lpbs_json(model, templates, targets, attribute_pairs))


def run_probe(attribute_bank, stereotype_bank, lexicon, **kwargs):
    return json.loads(_run_probe_json(attribute_bank, stereotype_bank, lexicon, **kwargs))


def run_downstream_eval(model, examples, lexicon, **kwargs):
    return json.loads(_run_downstream_eval_json(model, examples, lexicon, **kwargs))


def run_audit(config, formats=()):
    """Run the audit pipeline from a config dict; returns the outcome as a dict."""
    return json.loads(_run_audit_json(json.dumps(config), list(formats)))


__all__ = [
    "BiasSubspace",
    "CapabilityError",
    "CoverageError",
    "EmbeddingBank",
    "FormatError",
    "IoError",
    "LabeledExample",
    "Lexicon",
    "Model",
    "PlantedModelConfig",
    "TrainingError",
    "ValidationError",
    "__version__",
    "apply_sent_debias",
    "attribute_lpbs",
    "build_bank",
    "cda_pretrain",
    "compute_bias_subspace",
    "default_templates",
    "equalize_pair",
    "estimate_gender_subspace",
    "generate_cda_corpus",
    "ingest_generic",
    "make_planted_model",
    "resolve_model",
    "run_audit",
    "run_context_debias",
    "run_downstream_eval",
    "run_probe",
    "scrub_text",
    "seat_test",
    "sent_debias",
    "swap_gender_terms",
    "target_lpbs",
]
