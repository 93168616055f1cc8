import json

import numpy as np
import pytest

from src.errors import ConfigurationError, CorruptFileError, InputError, NumericError, VersionError
from src.model import (
    MacCounter,
    ModelConfig,
    ModelWeights,
    ffn_forward,
    forward_with_trace,
    load_model,
    predict_next,
    read_header,
    save_model,
)


def expected_macs(config: ModelConfig, seq_len: int) -> int:
    d, m = config.d_model, config.ffn_dim
    k = 3 if config.gated else 2
    per_layer = 4 * seq_len * d * d + 2 * seq_len * seq_len * d + k * seq_len * d * m
    return config.num_layers * per_layer + seq_len * d * config.vocab_size


# =============================================================================
# Configuration
# =============================================================================

def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigurationError):
        ModelConfig(d_model=30, num_heads=4)


def test_config_unknown_tags_raise_version_error():
    with pytest.raises(VersionError):
        ModelConfig(activation="swish2")
    with pytest.raises(VersionError):
        ModelConfig.from_dict({**ModelConfig().to_dict(), "rotary": True})


def test_config_dict_round_trip_keeps_enums(gated_config):
    restored = ModelConfig.from_dict(gated_config.to_dict())
    assert restored == gated_config
    assert restored.gated


# =============================================================================
# FFN decomposition
# =============================================================================

@pytest.mark.parametrize("config_name", ["small_config", "gated_config"])
def test_ffn_output_is_sum_of_weighted_value_rows(config_name, request):
    config = request.getfixturevalue(config_name)
    weights = ModelWeights.random(config, seed=11, scale=0.5)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, config.d_model)).astype(np.float32)

    output, coeffs = ffn_forward(x, weights.layers[0], config)
    manual = coeffs.astype(np.float64) @ weights.layers[0].ffn_value.astype(np.float64)
    assert coeffs.shape == (5, config.ffn_dim)
    np.testing.assert_allclose(output, manual, rtol=1e-5, atol=1e-6)


def test_ffn_accepts_a_single_vector(small_config, small_weights):
    x = np.ones(small_config.d_model, dtype=np.float32)
    output, coeffs = ffn_forward(x, small_weights.layers[1], small_config)
    assert output.shape == (small_config.d_model,)
    assert coeffs.shape == (small_config.ffn_dim,)


def test_ffn_shape_mismatch(small_config, small_weights):
    with pytest.raises(ConfigurationError):
        ffn_forward(np.ones(small_config.d_model + 1), small_weights.layers[0], small_config)


def test_relu_coefficients_are_nonnegative(small_config, small_weights):
    trace = forward_with_trace([1, 2, 3, 4], small_weights, small_config)
    assert all(np.all(c >= 0) for c in trace.coefficients)


# =============================================================================
# Full forward
# =============================================================================

def test_forward_shapes(small_config, small_weights):
    trace = forward_with_trace([5, 6, 7], small_weights, small_config, capture_hidden=True)
    assert trace.logits.shape == (3, small_config.vocab_size)
    assert len(trace.coefficients) == small_config.num_layers
    assert len(trace.ffn_inputs) == small_config.num_layers
    assert trace.final_hidden.shape == (3, small_config.d_model)


def test_forward_is_causal(small_config, small_weights):
    short = forward_with_trace([5, 6], small_weights, small_config)
    long = forward_with_trace([5, 6, 9, 1], small_weights, small_config)
    np.testing.assert_allclose(short.logits, long.logits[:2], rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("tokens", [[], [0, 40], [-1], list(range(9))])
def test_forward_rejects_bad_tokens(small_config, small_weights, tokens):
    with pytest.raises(InputError):
        forward_with_trace(tokens, small_weights, small_config)


def test_forward_names_the_layer_on_nan(small_config, small_weights):
    broken = small_weights.copy()
    broken.layers[1].ffn_value[0, 0] = np.nan
    broken.layers[1].ffn_key[0] = 1.0
    with pytest.raises(NumericError) as info:
        forward_with_trace([1, 2, 3], broken, small_config)
    assert info.value.layer == 1


@pytest.mark.parametrize("config_name", ["small_config", "gated_config"])
def test_mac_counter_matches_formula(config_name, request):
    config = request.getfixturevalue(config_name)
    weights = ModelWeights.random(config, seed=1)
    for seq_len in (1, 3, config.max_seq_len):
        counter = MacCounter()
        forward_with_trace(list(range(1, seq_len + 1)), weights, config, counter=counter)
        assert counter.macs == expected_macs(config, seq_len)
        assert counter.flops == 2 * counter.macs


def test_predict_next_ties_to_lowest_id():
    assert predict_next(np.array([0.1, 0.7, 0.7, -1.0])) == 1


# =============================================================================
# Weights
# =============================================================================

def test_copy_is_deep(small_weights):
    clone = small_weights.copy()
    clone.layers[0].ffn_value[0, 0] += 1.0
    assert clone.fingerprint() != small_weights.fingerprint()


def test_random_is_deterministic(small_config):
    a = ModelWeights.random(small_config, seed=4)
    b = ModelWeights.random(small_config, seed=4)
    assert a.fingerprint() == b.fingerprint()


def test_validate_reports_bad_shape(small_config, small_weights):
    broken = small_weights.copy()
    broken.layers[0].ffn_value = broken.layers[0].ffn_value[:-1]
    with pytest.raises(ConfigurationError, match="layers.0.ffn_value"):
        broken.validate(small_config)


# =============================================================================
# Container
# =============================================================================

def test_save_load_preserves_bits(tmp_path, gated_config):
    weights = ModelWeights.random(gated_config, seed=2)
    path = save_model(weights, gated_config, tmp_path / "m.kvw", metadata={"seed": 2})
    loaded, config = load_model(path)
    assert config == gated_config
    assert loaded.fingerprint() == weights.fingerprint()
    header, _ = read_header(path)
    assert header["metadata"] == {"seed": 2}


def test_save_is_byte_deterministic(tmp_path, small_config, small_weights):
    a = save_model(small_weights, small_config, tmp_path / "a.kvw")
    b = save_model(small_weights.copy(), small_config, tmp_path / "b.kvw")
    assert a.read_bytes() == b.read_bytes()


def test_truncated_container(tmp_path, small_config, small_weights):
    path = save_model(small_weights, small_config, tmp_path / "m.kvw")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CorruptFileError, match="truncated"):
        load_model(path)


def test_flipped_byte_names_the_tensor(tmp_path, small_config, small_weights):
    path = save_model(small_weights, small_config, tmp_path / "m.kvw")
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFileError) as info:
        load_model(path)
    assert info.value.tensor == "unembedding"


def test_unknown_version(tmp_path, small_config, small_weights):
    path = save_model(small_weights, small_config, tmp_path / "m.kvw")
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline])
    header["version"] = 99
    path.write_bytes(json.dumps(header).encode("utf-8") + raw[newline:])
    with pytest.raises(VersionError):
        load_model(path)


def rewrite_header(path, edit) -> None:
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline])
    edit(header)
    path.write_bytes(json.dumps(header).encode("utf-8") + raw[newline:])


@pytest.mark.parametrize("edit", [
    lambda h: h.pop("config"),
    lambda h: h.update(config=[1, 2]),
    lambda h: h["tensors"][0].pop("shape"),
    lambda h: h["tensors"][1].update(offset="start"),
    lambda h: h.update(tensors=h["tensors"][1:]),
])
def test_malformed_header_is_a_corrupt_file(tmp_path, small_config, small_weights, edit):
    path = save_model(small_weights, small_config, tmp_path / "m.kvw")
    rewrite_header(path, edit)
    with pytest.raises(CorruptFileError):
        load_model(path)
