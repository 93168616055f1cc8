import numpy as np
import pytest

from src.coefficients import (
    CoefficientAccumulator,
    CoefficientMode,
    CoefficientSource,
    KnowledgeCoefficients,
    TokenExample,
    accumulate,
    dataset_hash,
    extract_coefficients,
    load_coeffs,
    load_dataset,
    save_coeffs,
    save_dataset,
)
from src.errors import CompatibilityError, CorruptFileError, EmptySelectionError, InputError, VersionError
from src.model import ModelConfig, forward_with_trace


@pytest.fixture
def examples():
    return [
        TokenExample.from_span([3, 4, 5, 6], 2, 4),
        TokenExample.from_span([7, 8, 9], 2, 3),
        TokenExample.from_span([10, 11, 12, 13, 14], 4, 5),
    ]


# =============================================================================
# Examples and datasets
# =============================================================================

def test_answer_positions_are_shifted_by_one():
    example = TokenExample.from_span([3, 4, 5, 6], 2, 4)
    assert example.selected_positions(ans_only=True).tolist() == [1, 2]
    assert example.selected_positions(ans_only=False).tolist() == [0, 1, 2, 3]


def test_answer_at_position_zero_is_rejected():
    example = TokenExample.from_span([3, 4], 0, 1)
    with pytest.raises(InputError):
        example.selected_positions(ans_only=True)


def test_no_answer_tokens_is_an_empty_selection():
    example = TokenExample.from_span([3, 4, 5], 3, 3)
    with pytest.raises(EmptySelectionError):
        example.selected_positions(ans_only=True)
    assert len(example.selected_positions(ans_only=False)) == 3


def test_span_outside_sequence():
    with pytest.raises(InputError):
        TokenExample.from_span([1, 2], 1, 5)


def test_gapped_answer_mask_is_rejected():
    with pytest.raises(InputError, match="contiguous"):
        TokenExample(tokens=(3, 4, 5, 6), answer_mask=(False, True, False, True))
    example = TokenExample(tokens=(3, 4, 5, 6), answer_mask=(False, True, True, False))
    assert TokenExample.from_dict(example.to_dict()) == example


def test_dataset_file_round_trip(tmp_path, examples):
    path = save_dataset(examples, tmp_path / "d.jsonl")
    assert load_dataset(path) == examples
    assert dataset_hash(load_dataset(path)) == dataset_hash(examples)


def test_dataset_hash_depends_on_order(examples):
    assert dataset_hash(examples) != dataset_hash(list(reversed(examples)))


def test_malformed_dataset_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"tokens": [1, 2], "answer_start": 1}\n')
    with pytest.raises(InputError):
        load_dataset(path)
    path.write_text("not json\n")
    with pytest.raises(InputError):
        load_dataset(path)
    with pytest.raises(InputError):
        load_dataset(tmp_path / "missing.jsonl")


# =============================================================================
# Extraction
# =============================================================================

def test_single_example_matches_trace(small_config, small_weights):
    example = TokenExample.from_span([3, 4, 5, 6], 2, 4)
    coeffs = extract_coefficients(example, small_weights, small_config)
    trace = forward_with_trace(example, small_weights, small_config)
    expected = np.stack([np.abs(c[[1, 2]].astype(np.float64)).mean(axis=0) for c in trace.coefficients])
    assert coeffs.token_count == 2
    assert coeffs.source is CoefficientSource.FORGET
    np.testing.assert_allclose(coeffs.per_layer, expected, rtol=1e-6)


def test_pooled_mean_weights_every_position_equally(small_config, small_weights, examples):
    pooled = accumulate(examples, small_weights, small_config)
    rows = []
    for example in examples:
        trace = forward_with_trace(example, small_weights, small_config)
        positions = example.selected_positions()
        rows.append(np.stack([np.abs(c[positions].astype(np.float64)) for c in trace.coefficients], axis=1))
    all_rows = np.concatenate(rows, axis=0)
    assert pooled.token_count == all_rows.shape[0] == 4
    np.testing.assert_allclose(pooled.per_layer, all_rows.mean(axis=0), rtol=1e-6)


def test_worker_count_does_not_change_result(small_config, small_weights, examples):
    serial = accumulate(examples * 3, small_weights, small_config, workers=1)
    threaded = accumulate(examples * 3, small_weights, small_config, workers=4)
    assert np.array_equal(serial.per_layer, threaded.per_layer)


def test_accumulate_ignores_dataset_order(small_config, small_weights, examples):
    forward = accumulate(examples, small_weights, small_config)
    backward = accumulate(examples[::-1], small_weights, small_config)
    assert forward.token_count == backward.token_count
    np.testing.assert_allclose(forward.per_layer, backward.per_layer, rtol=1e-6)


def test_answer_selection_ignores_prompt_tokens(small_config, small_weights):
    base = TokenExample.from_span([3, 4, 5, 6, 7], 2, 3)
    reworded = TokenExample.from_span([9, 12, 5, 30, 31], 2, 3)
    assert base.selected_positions().tolist() == reworded.selected_positions().tolist() == [1]

    # tokens after the selected position cannot reach it through causal attention
    trailing = TokenExample.from_span([3, 4, 5, 30, 31], 2, 3)
    a = extract_coefficients(base, small_weights, small_config)
    b = extract_coefficients(trailing, small_weights, small_config)
    np.testing.assert_allclose(a.per_layer, b.per_layer, rtol=1e-6, atol=1e-7)


def test_accumulate_records_dataset_hash_and_seed(small_config, small_weights, examples):
    coeffs = accumulate(examples, small_weights, small_config, seed=7)
    assert coeffs.dataset_hash == dataset_hash(examples)
    assert coeffs.seed == 7
    assert coeffs.source is CoefficientSource.RETAIN


def test_empty_dataset(small_config, small_weights):
    with pytest.raises(InputError):
        accumulate([], small_weights, small_config)


def test_clamp_mode_floors_at_eps():
    acc = CoefficientAccumulator(sums=np.array([[-2.0, 0.0, 3.0]]), count=1, mode=CoefficientMode.CLAMP)
    coeffs = acc.finalize(CoefficientSource.FORGET, ans_only=True, eps=1e-8)
    np.testing.assert_allclose(coeffs.per_layer, [[1e-8, 1e-8, 3.0]], rtol=1e-6)


def test_abs_mode_uses_magnitudes(gated_config):
    acc = CoefficientAccumulator.empty(gated_config, CoefficientMode.ABS)
    rows = [np.array([[-1.0] * gated_config.ffn_dim, [3.0] * gated_config.ffn_dim])] * gated_config.num_layers
    acc.add_rows(rows)
    coeffs = acc.finalize(CoefficientSource.RETAIN, ans_only=False)
    assert np.all(coeffs.per_layer == 2.0)


def test_coefficients_reject_negative_values():
    with pytest.raises(InputError):
        KnowledgeCoefficients(per_layer=np.array([[-1.0]]), token_count=1, source="retain")


def test_unknown_source_tag():
    with pytest.raises(VersionError):
        KnowledgeCoefficients(per_layer=np.zeros((1, 1)), token_count=1, source="both")


# =============================================================================
# Cache
# =============================================================================

def test_cache_round_trip(tmp_path, small_config, small_weights, examples):
    coeffs = accumulate(examples, small_weights, small_config, mode="clamp", ans_only=False, seed=5)
    path = save_coeffs(coeffs, tmp_path / "r.kvwc")
    loaded = load_coeffs(path, small_config)
    assert np.array_equal(loaded.per_layer, coeffs.per_layer)
    assert loaded.to_dict() == coeffs.to_dict()


def test_cache_dimension_mismatch(tmp_path, small_config, small_weights, examples):
    path = save_coeffs(accumulate(examples, small_weights, small_config), tmp_path / "r.kvwc")
    other = ModelConfig(num_layers=3, d_model=16, ffn_dim=32, num_heads=2, vocab_size=40, max_seq_len=8)
    with pytest.raises(CompatibilityError):
        load_coeffs(path, other)


def test_cache_corruption(tmp_path, small_config, small_weights, examples):
    path = save_coeffs(accumulate(examples, small_weights, small_config), tmp_path / "r.kvwc")
    data = bytearray(path.read_bytes())
    data[-8] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFileError, match="checksum"):
        load_coeffs(path)
    path.write_bytes(bytes(data[:20]))
    with pytest.raises(CorruptFileError):
        load_coeffs(path)
