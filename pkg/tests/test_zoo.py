import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aresbench import records
from aresbench.errors import BadMagicError, FormatError, ShapeError, TruncatedFileError, VersionMismatchError
from aresbench.zoo import (
    ModelSpec,
    ModelWeights,
    build_model,
    load_weights,
    predict_batch,
    save_weights,
    weights_from_bytes,
)


def test_small_cnn_parameter_count_by_hand():
    # conv1 8*3*9+8, conv2 16*8*9+16, fc 16*8*8*8+8
    assert build_model(ModelSpec()).param_count() == 224 + 1168 + 8200


def test_patch_mlp_parameter_count_by_hand():
    # embed 48*16+16, fc1 (64*16)*64+64, fc2 64*8+8
    assert build_model(ModelSpec("PatchMLP")).param_count() == 784 + 65600 + 520


def test_build_is_deterministic_per_seed():
    a = build_model(ModelSpec(seed=3))
    b = build_model(ModelSpec(seed=3))
    c = build_model(ModelSpec(seed=4))
    assert a.to_bytes() == b.to_bytes()
    assert a.digest() != c.digest()


def test_biases_start_at_zero():
    m = build_model(ModelSpec(seed=1))
    for name, t in m.tensors.items():
        if name.endswith(".bias"):
            assert not t.any()


def test_baseline_is_pinned():
    assert ModelSpec.baseline() == ModelSpec("BaselineRef", (3, 32, 32), 8, 1, 0)
    with pytest.raises(ValueError):
        ModelSpec("BaselineRef", seed=1)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("ResNet")
    with pytest.raises(ShapeError):
        ModelSpec(input_shape=(3, 30, 30))


def test_weights_round_trip(tmp_path):
    m = build_model(ModelSpec("PatchMLP", seed=2)).copy(training_tag="AT")
    path = tmp_path / "w.ares"
    save_weights(m, path)
    back = load_weights(path)
    assert back.spec == m.spec and back.training_tag == "AT"
    for k in m.tensors:
        np.testing.assert_array_equal(back.tensors[k], m.tensors[k])
    assert back.digest() == m.digest()


def test_wrong_tensor_shape_rejected():
    m = build_model(ModelSpec())
    tensors = dict(m.tensors)
    tensors["fc.bias"] = np.zeros(3)
    with pytest.raises(ShapeError):
        ModelWeights(m.spec, tensors)


def test_bad_magic():
    data = build_model(ModelSpec()).to_bytes()
    with pytest.raises(BadMagicError):
        weights_from_bytes(b"XXXX1" + data[5:])


def test_version_mismatch():
    data = bytearray(build_model(ModelSpec()).to_bytes())
    data[5:7] = struct.pack("<H", 2)
    with pytest.raises(VersionMismatchError):
        weights_from_bytes(bytes(data))


@pytest.mark.parametrize("cut", [3, 9, 40, -1])
def test_truncated_file(cut):
    data = build_model(ModelSpec("SmallCNN", (3, 8, 8), 3)).to_bytes()
    with pytest.raises(TruncatedFileError):
        weights_from_bytes(data[:cut])


def test_trailing_bytes_rejected():
    data = build_model(ModelSpec("SmallCNN", (3, 8, 8), 3)).to_bytes()
    with pytest.raises(FormatError):
        weights_from_bytes(data + b"\0")


def test_dataset_file_is_not_a_weights_file():
    with pytest.raises(FormatError, match="weights"):
        weights_from_bytes(records.encode({"kind": "dataset"}, {}))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=0, max_size=3), st.integers(0, 2 ** 31))
def test_records_round_trip_any_shape(shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape)
    header, tensors = records.decode(records.encode({"k": seed}, {"a": arr}))
    assert header == {"k": seed}
    np.testing.assert_array_equal(tensors["a"], arr)


def test_ties_resolve_to_lowest_index():
    m = build_model(ModelSpec("SmallCNN", (3, 8, 8), 3))
    zero = {k: np.zeros_like(v) for k, v in m.tensors.items()}
    flat = ModelWeights(m.spec, zero)
    assert predict_batch(flat, np.zeros((2, 3, 8, 8))).tolist() == [0, 0]
