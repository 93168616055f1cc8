import dataclasses
import json

import pytest

from src.coefficients import CoefficientSource, accumulate
from src.errors import ConfigurationError, ConstructionError, CorruptFileError
from src.kvw import compute_fka
from src.model import ModelConfig
from src.synth import (
    FactRole,
    FactSpec,
    SynthSuite,
    build_synth_model,
    evaluate_recall,
    validate_facts,
    verify_suite,
)


def fact(fact_id="F000", slot=0, **changes) -> FactSpec:
    base = FactSpec(fact_id=fact_id, subject_token=1, relation_token=2, answer_token=3,
                    layer=0, slot=slot, strength=1.0)
    return dataclasses.replace(base, **changes)


# =============================================================================
# Facts
# =============================================================================

def test_query_marks_only_the_answer():
    example = fact().query()
    assert example.tokens == (1, 2, 3)
    assert example.answer_span == (2, 3)
    assert example.selected_positions().tolist() == [1]


@pytest.mark.parametrize("facts", [
    [fact(), fact(slot=1)],
    [fact(), fact(fact_id="F001")],
    [fact(answer_token=1)],
    [fact(strength=0.0)],
    [fact(split=3)],
])
def test_invalid_fact_tables(facts):
    with pytest.raises(ConfigurationError):
        validate_facts(facts)


def test_fact_dict_round_trip():
    original = fact(role=FactRole.FORGET, split=2, neighbor_of=None)
    assert FactSpec.from_dict(original.to_dict()) == original


# =============================================================================
# Builder
# =============================================================================

def test_suite_layout(suite):
    assert len(suite.forget_facts) == 5
    assert len(suite.retain_facts) == 20
    assert suite.planted_layer == 2
    assert len(suite.shared_slots) == 1
    neighbors = [f for f in suite.retain_facts if f.neighbor_of]
    assert len(neighbors) == 5
    subjects = {f.fact_id: f.subject_token for f in suite.forget_facts}
    for neighbor in neighbors:
        assert neighbor.subject_token == subjects[neighbor.neighbor_of]
    assert {f.split for f in suite.forget_facts} == {1, 2}
    assert {f.split for f in suite.retain_facts} == {1, 2}


def test_suite_recalls_every_fact(suite):
    recall = evaluate_recall(suite.weights, suite.facts, suite.config)
    assert recall.accuracy == 1.0
    assert recall.total == 25
    split_one = evaluate_recall(suite.weights, suite.facts, suite.config, split=1)
    assert 0 < split_one.total < 25


def test_builder_is_deterministic(suite):
    again = build_synth_model(5, 20, ModelConfig(), seed=0)
    assert again.weights.fingerprint() == suite.weights.fingerprint()
    assert again.to_manifest() == suite.to_manifest()
    other = build_synth_model(5, 20, ModelConfig(), seed=1)
    assert other.weights.fingerprint() != suite.weights.fingerprint()


def test_capacity_exceeded():
    with pytest.raises(ConfigurationError):
        build_synth_model(30, 20, ModelConfig(), seed=0)
    with pytest.raises(ConfigurationError):
        build_synth_model(5, 20, ModelConfig(), planted_layer=4)


def test_only_plain_relu_can_be_planted():
    with pytest.raises(ConfigurationError):
        build_synth_model(2, 2, ModelConfig(ffn_variant="gated"))


def test_verify_names_failing_facts(suite):
    broken = suite.weights.copy()
    target = suite.forget_facts[0]
    broken.layers[target.layer].ffn_value[target.slot] = 0.0
    with pytest.raises(ConstructionError) as info:
        verify_suite(dataclasses.replace(suite, weights=broken))
    assert target.fact_id in info.value.fact_ids


def test_suite_save_and_load(suite, suite_dir):
    loaded = SynthSuite.load(suite_dir / "suite.json")
    assert loaded.weights.fingerprint() == suite.weights.fingerprint()
    assert loaded.facts == suite.facts
    assert loaded.seed == 0
    assert (suite_dir / "forget.jsonl").read_text().count("\n") == 5


def test_single_fact_accessor_separates_forget_from_neighbor(suite):
    """With one forget fact per batch its own slot dominates and its neighbor's slot is mildly hit."""
    target = suite.forget_facts[0]
    neighbor = next(f for f in suite.retain_facts if f.neighbor_of == target.fact_id)
    retain = accumulate(suite.retain_dataset, suite.weights, suite.config, source=CoefficientSource.RETAIN)
    forget = accumulate([target.query()], suite.weights, suite.config, source=CoefficientSource.FORGET)
    a = compute_fka(forget, retain).per_layer[suite.planted_layer]

    assert a[target.slot] > 4.0
    assert 0.3 < a[neighbor.slot] < 1.0


@pytest.mark.parametrize("key", ["seed", "model", "forget_facts"])
def test_manifest_missing_a_field(suite_dir, tmp_path, key):
    manifest = json.loads((suite_dir / "suite.json").read_text())
    del manifest[key]
    broken = tmp_path / "suite.json"
    broken.write_text(json.dumps(manifest))
    with pytest.raises(CorruptFileError, match="malformed suite manifest"):
        SynthSuite.load(broken)


def test_manifest_is_not_json(tmp_path):
    broken = tmp_path / "suite.json"
    broken.write_text("{not json")
    with pytest.raises(CorruptFileError):
        SynthSuite.load(broken)


def test_shared_slot_is_never_weakened_by_a_single_forget_fact(suite):
    (shared,) = suite.shared_slots
    retain = accumulate(suite.retain_dataset, suite.weights, suite.config, source=CoefficientSource.RETAIN)
    for target in suite.forget_facts:
        forget = accumulate([target.query()], suite.weights, suite.config, source=CoefficientSource.FORGET)
        assert compute_fka(forget, retain).per_layer[suite.planted_layer, shared] == 0.0
