from __future__ import annotations

import json
import random

import numpy as np
import pytest

from clustersim.errors import AccumulatorOverflowError, FormatError, RangeError, ShapeError
from clustersim.quant import (
    CONV1X1,
    CONV3X3,
    NormParams,
    PackedActivations,
    QTensor,
    bit_decompose,
    load_qtensor,
    load_words,
    naive_conv,
    pack_activations,
    pack_weights,
    random_qtensor,
    reference_conv,
    save_qtensor,
    save_words,
    unpack_activations,
    unpack_weights,
)


def test_bit_decompose_examples() -> None:
    assert bit_decompose(6, 3) == [0, 1, 1]
    assert bit_decompose(0, 2) == [0, 0]


def test_bit_decompose_recomposes_random_values() -> None:
    rnd = random.Random(1)
    for _ in range(1000):
        bits = rnd.randint(1, 16)
        value = rnd.randrange(1 << bits)
        assert sum(b << i for i, b in enumerate(bit_decompose(value, bits))) == value


def test_bit_decompose_rejects_out_of_range() -> None:
    with pytest.raises(RangeError):
        bit_decompose(4, 2)
    with pytest.raises(RangeError):
        bit_decompose(-1, 4)


def test_binary_reconstruction_over_full_precision_grid() -> None:
    for w in range(2, 9):
        for i in range(2, 9):
            a = np.arange(1 << w)[:, None]
            b = np.arange(1 << i)[None, :]
            total = np.zeros((1 << w, 1 << i), dtype=np.int64)
            for p in range(w):
                for q in range(i):
                    total += ((a >> p) & 1) * ((b >> q) & 1) << (p + q)
            assert np.array_equal(total, a * b)


def test_qtensor_rejects_out_of_range_values() -> None:
    with pytest.raises(RangeError):
        QTensor.from_array([0, 4], bitwidth=2)
    with pytest.raises(RangeError):
        QTensor.from_array([-3], bitwidth=2, signed=True)
    with pytest.raises(ShapeError):
        QTensor(shape=(2, 2), data=np.zeros(3), bitwidth=8)


def test_pack_activations_all_ones() -> None:
    t = QTensor.from_array(np.ones((1, 1, 32), dtype=np.int64), bitwidth=2)
    packed = pack_activations(t, 2)
    assert [int(w) for w in packed.buffer] == [0xFFFFFFFF, 0x00000000]


def test_pack_activations_zero_tensor() -> None:
    t = QTensor.from_array(np.zeros((2, 3, 40), dtype=np.int64), bitwidth=4)
    packed = pack_activations(t, 4)
    assert packed.buffer.size == 2 * 3 * 2 * 4
    assert not packed.buffer.any()


def test_pack_activations_places_channel_in_lane() -> None:
    values = np.zeros((1, 1, 64), dtype=np.int64)
    values[0, 0, 33] = 2
    packed = pack_activations(QTensor.from_array(values, bitwidth=2), 2)
    # (c32=1, plane=1) carries lane 1
    assert [int(w) for w in packed.buffer] == [0, 0, 0, 1 << 1]


def test_activation_round_trip_random() -> None:
    rng = np.random.default_rng(3)
    t = random_qtensor(rng, (4, 4, 64), 5)
    assert np.array_equal(unpack_activations(pack_activations(t, 5)).data, t.data)
    odd = random_qtensor(rng, (3, 2, 45), 3)
    assert np.array_equal(unpack_activations(pack_activations(odd, 3)).data, odd.data)


def test_pack_activations_rejects_wide_element() -> None:
    t = QTensor.from_array(np.full((1, 1, 4), 9), bitwidth=4)
    with pytest.raises(RangeError):
        pack_activations(t, 3)


def test_unpack_activations_length_mismatch() -> None:
    bad = PackedActivations(buffer=np.zeros(3, dtype=np.uint32), dims=(1, 1, 32), bitwidth=2)
    with pytest.raises(FormatError):
        unpack_activations(bad)


def test_pack_weights_1x1_all_ones() -> None:
    t = QTensor.from_array(np.ones((1, 32, 1, 1), dtype=np.int64), bitwidth=2)
    packed = pack_weights(t, 2, CONV1X1)
    assert [int(w) for w in packed.buffer] == [0xFFFFFFFF, 0x00000000]


def test_pack_weights_zero_and_geometry_checks() -> None:
    zeros = QTensor.from_array(np.zeros((2, 8, 3, 3), dtype=np.int64), bitwidth=4)
    assert not pack_weights(zeros, 4, CONV3X3).buffer.any()
    with pytest.raises(ShapeError):
        pack_weights(zeros, 4, CONV1X1)


def test_pack_weights_tap_order_is_row_major() -> None:
    values = np.zeros((1, 32, 3, 3), dtype=np.int64)
    values[0, 0, 1, 2] = 1
    packed = pack_weights(QTensor.from_array(values, bitwidth=2), 2, CONV3X3)
    words = packed.buffer.reshape(1, 1, 2, 9)
    assert int(words[0, 0, 0, 5]) == 1
    assert int(words.sum()) == 1


def test_weight_round_trip_random_both_modes() -> None:
    rng = np.random.default_rng(4)
    t = random_qtensor(rng, (64, 64, 3, 3), 3)
    assert np.array_equal(unpack_weights(pack_weights(t, 3, CONV3X3)).data, t.data)
    t1 = random_qtensor(rng, (5, 70, 1, 1), 7)
    assert np.array_equal(unpack_weights(pack_weights(t1, 7, CONV1X1)).data, t1.data)


def test_reference_conv_trivial_cases() -> None:
    acts = QTensor.from_array(np.array([[[2]]]), bitwidth=8)
    wgts = QTensor.from_array(np.array([[[[3]]]]), bitwidth=8)
    out = reference_conv(acts, wgts, NormParams.identity(1), CONV1X1, 8)
    assert out.data.tolist() == [[[6]]]

    acts = QTensor.from_array(np.array([[[5]]]), bitwidth=8)
    wgts = QTensor.from_array(np.array([[[[2]]]]), bitwidth=8)
    norm = NormParams(scale=[2], bias=[4], shift=3)
    assert reference_conv(acts, wgts, norm, CONV1X1, 2).data.tolist() == [[[3]]]


def test_reference_conv_zero_weights_gives_bias_term() -> None:
    rng = np.random.default_rng(5)
    acts = random_qtensor(rng, (5, 5, 16), 4)
    wgts = QTensor.from_array(np.zeros((3, 16, 3, 3), dtype=np.int64), bitwidth=4)
    norm = NormParams(scale=[1, 1, 1], bias=[-40, 40, 4000], shift=2)
    out = reference_conv(acts, wgts, norm, CONV3X3, 6)
    assert np.all(out.data[..., 0] == 0)
    assert np.all(out.data[..., 1] == 10)
    assert np.all(out.data[..., 2] == 63)


def test_reference_conv_matches_naive_loop() -> None:
    rng = np.random.default_rng(6)
    acts = random_qtensor(rng, (8, 8, 64), 4)
    wgts = random_qtensor(rng, (8, 64, 3, 3), 3)
    norm = NormParams(scale=rng.integers(1, 8, 8), bias=rng.integers(-500, 500, 8), shift=6)
    for padding in ("same", "valid"):
        ref = reference_conv(acts, wgts, norm, CONV3X3, 5, padding=padding)
        naive = naive_conv(acts, wgts, norm, CONV3X3, 5, padding=padding)
        assert np.array_equal(ref.data, naive.data)
    assert reference_conv(acts, wgts, norm, CONV3X3, 5, padding="valid").shape == (6, 6, 8)


def test_reference_conv_channel_padding_is_neutral() -> None:
    rng = np.random.default_rng(7)
    acts = random_qtensor(rng, (4, 4, 60), 8)
    wgts = random_qtensor(rng, (4, 60, 3, 3), 8)
    norm = NormParams(scale=[1] * 4, bias=[0] * 4, shift=10)
    padded_acts = QTensor.from_array(np.pad(acts.data, ((0, 0), (0, 0), (0, 4))), bitwidth=8)
    padded_wgts = QTensor.from_array(np.pad(wgts.data, ((0, 0), (0, 4), (0, 0), (0, 0))), bitwidth=8)
    a = reference_conv(acts, wgts, norm, CONV3X3, 8)
    b = reference_conv(padded_acts, padded_wgts, norm, CONV3X3, 8)
    assert np.array_equal(a.data, b.data)


def test_reference_conv_overflow_trap_and_wrap() -> None:
    acts = QTensor.from_array(np.full((1, 1, 32), 255), bitwidth=8)
    wgts = QTensor.from_array(np.full((1, 32, 1, 1), 255), bitwidth=8)
    norm = NormParams(scale=[1 << 14], bias=[0], shift=0)
    # scale*acc fits int64; only acc is checked against 32 bits
    reference_conv(acts, wgts, norm, CONV1X1, 8)
    big = QTensor.from_array(np.full((1, 1, 40000), 255), bitwidth=8)
    big_w = QTensor.from_array(np.full((1, 40000, 1, 1), 255), bitwidth=8)
    with pytest.raises(AccumulatorOverflowError):
        reference_conv(big, big_w, NormParams.identity(1), CONV1X1, 8)
    wrapped = reference_conv(big, big_w, NormParams.identity(1), CONV1X1, 8, overflow="wrap")
    assert wrapped.shape == (1, 1, 1)


def test_qtensor_file_round_trip(tmp_path) -> None:
    rng = np.random.default_rng(8)
    t = random_qtensor(rng, (3, 4, 5), 6)
    header = save_qtensor(t, tmp_path / "acts.json")
    loaded = load_qtensor(header)
    assert loaded.shape == t.shape
    assert loaded.bitwidth == 6
    assert np.array_equal(loaded.data, t.data)


def test_qtensor_header_named_bin_keeps_its_payload_apart(tmp_path) -> None:
    t = random_qtensor(np.random.default_rng(9), (2, 3, 4), 5)
    header = save_qtensor(t, tmp_path / "t.bin")
    meta = json.loads(header.read_text(encoding="utf-8"))
    assert meta["payload"] == "t.payload.bin"
    assert (tmp_path / "t.payload.bin").exists()
    assert np.array_equal(load_qtensor(header).data, t.data)


def test_word_dump_round_trip_and_bad_length(tmp_path) -> None:
    words = np.array([1, 0xDEADBEEF, 7], dtype=np.uint32)
    path = save_words(words, tmp_path / "w.bin")
    assert path.read_bytes()[:4] == b"\x01\x00\x00\x00"
    assert np.array_equal(load_words(path), words)
    (tmp_path / "bad.bin").write_bytes(b"\x00\x01\x02")
    with pytest.raises(FormatError):
        load_words(tmp_path / "bad.bin")
