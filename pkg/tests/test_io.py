"""Dataset generation, IDX parsing, and container round-trip tests."""

import struct

import numpy as np
import pytest

from relex import io, nn


# -- synthetic generator ----------------------------------------------------------


def test_empty_dataset():
    ds = io.generate_synthetic(4, 0, 8, seed=0)
    assert len(ds) == 0


def test_synthetic_determinism():
    a = io.generate_synthetic(4, 10, 8, margin=0.4, seed=3)
    b = io.generate_synthetic(4, 10, 8, margin=0.4, seed=3)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_synthetic_values_and_bands():
    ds = io.generate_synthetic(4, 8, 8, margin=0.5, seed=1)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    for i in range(len(ds)):
        band = io.class_band(4, 8, int(ds.labels[i]))
        assert ds.images[i, band, :].min() >= 0.5  # stripe pixels sit above the margin


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ValueError):
        io.generate_synthetic(1, 5, 8)
    with pytest.raises(ValueError):
        io.generate_synthetic(4, 5, 2)
    with pytest.raises(ValueError):
        io.generate_synthetic(9, 5, 8)  # more classes than rows
    with pytest.raises(ValueError):
        io.generate_synthetic(4, 5, 8, margin=1.5)


def test_synthetic_trains_well(desk_model, desk_eval_dataset):
    from relex import train

    assert train.accuracy(desk_model, desk_eval_dataset.images, desk_eval_dataset.labels) > 0.95


def test_composites_carry_multiple_bands():
    images, evidence = io.generate_composites(4, 6, 8, margin=0.5, seed=2)
    assert images.shape == (6, 8, 8)
    for i, present in enumerate(evidence):
        assert len(present) == 2
        for c in present:
            assert images[i, io.class_band(4, 8, c), :].min() >= 0.5


# -- IDX ---------------------------------------------------------------------------


def idx_image_bytes(images):
    n, rows, cols = images.shape
    return struct.pack(">iiii", io.IDX_IMAGE_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels):
    return struct.pack(">ii", io.IDX_LABEL_MAGIC, len(labels)) + bytes(labels)


def test_idx_round_value_fixture(tmp_path):
    images = np.zeros((1, 3, 3), dtype=np.uint8)
    images[0, 1, 2] = 255
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(idx_image_bytes(images))
    lp.write_bytes(idx_label_bytes([5]))
    ds = io.load_idx(ip, lp)
    assert ds.images.shape == (1, 3, 3)
    assert ds.images[0, 1, 2] == 1.0
    assert ds.images[0, 0, 0] == 0.0
    assert ds.labels[0] == 5


def test_idx_count_mismatch(tmp_path):
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(idx_image_bytes(np.zeros((2, 2, 2), dtype=np.uint8)))
    lp.write_bytes(idx_label_bytes([1, 2, 3]))
    with pytest.raises(io.CountMismatchError):
        io.load_idx(ip, lp)


def test_idx_bad_magic(tmp_path):
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">iiii", 0xDEAD, 1, 2, 2) + bytes(4))
    lp.write_bytes(idx_label_bytes([1]))
    with pytest.raises(io.BadMagicError):
        io.load_idx(ip, lp)


def test_idx_truncated_payload(tmp_path):
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(idx_image_bytes(np.zeros((2, 2, 2), dtype=np.uint8))[:-3])
    lp.write_bytes(idx_label_bytes([1, 2]))
    with pytest.raises(io.TruncatedPayloadError):
        io.load_idx(ip, lp)


# -- containers ---------------------------------------------------------------------


def test_model_round_trip_bit_exact(tmp_path, desk_model, desk_eval_dataset):
    p1 = tmp_path / "m1.relex"
    p2 = tmp_path / "m2.relex"
    io.save_model(desk_model, p1)
    loaded = io.load_model(p1)
    io.save_model(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    x = desk_eval_dataset.images[:4]
    assert np.array_equal(nn.forward(desk_model, x), nn.forward(loaded, x))


def test_model_round_trip_with_conv_and_softplus(tmp_path):
    rng = np.random.default_rng(0)
    layers = [
        nn.Conv2d(rng.normal(0, 0.5, (2, 1, 3, 3)), rng.normal(0, 0.1, 2)),
        nn.Softplus(2.5),
        nn.MaxPool2x2(),
        nn.Flatten(),
        nn.Dense(rng.normal(0, 0.5, (3, 18)), rng.normal(0, 0.1, 3)),
        nn.Softmax(),
    ]
    model = nn.Model(layers, 3, (1, 8, 8))
    path = tmp_path / "conv.relex"
    io.save_model(model, path)
    loaded = io.load_model(path)
    assert loaded.layers[1].beta == 2.5
    x = rng.uniform(0, 1, (1, 8, 8))
    assert np.array_equal(nn.forward(model, x), nn.forward(loaded, x))


def test_corrupted_payload_raises_digest_error(tmp_path, desk_model):
    path = tmp_path / "m.relex"
    io.save_model(desk_model, path)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(io.DigestMismatchError):
        io.load_model(path)


def test_version_mismatch(tmp_path, desk_model):
    path = tmp_path / "m.relex"
    io.save_model(desk_model, path)
    blob = path.read_bytes().replace(b"relex-container v1", b"relex-container v9", 1)
    path.write_bytes(blob)
    with pytest.raises(io.VersionMismatchError):
        io.load_model(path)


def test_truncated_container(tmp_path, desk_model):
    path = tmp_path / "m.relex"
    io.save_model(desk_model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 20])
    with pytest.raises((io.TruncatedPayloadError, io.DigestMismatchError)):
        io.load_model(path)


def test_saliency_round_trip_and_pgm(tmp_path):
    mask = np.random.default_rng(1).uniform(0, 1, (5, 7))
    path = tmp_path / "s.relex"
    io.save_saliency(mask, path, method="relex", config_digest="deadbeef")
    loaded, meta = io.load_saliency(path)
    assert np.array_equal(loaded, mask)
    assert meta["method"] == "relex"
    assert meta["config_digest"] == "deadbeef"

    pgm = tmp_path / "s.pgm"
    io.write_pgm(np.array([[0.0, 0.5], [1.0, 0.25]]), pgm)
    blob = pgm.read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n")
    # round-half-up scaling: 0.5*255 + 0.5 = 128.0 -> 128
    assert list(blob[-4:]) == [0, 128, 255, 64]


def test_adv_set_round_trip(tmp_path):
    adv = np.random.default_rng(2).uniform(0, 1, (3, 4, 4))
    manifest = {"attack": "pgd-untargeted", "eps": "0.1", "seed": "7"}
    path = tmp_path / "a.relex"
    io.save_adv_set(path, adv, manifest)
    loaded, got = io.load_adv_set(path)
    assert np.array_equal(loaded, adv)
    assert got == manifest


def test_dataset_round_trip_idempotent(tmp_path):
    ds = io.generate_synthetic(3, 5, 6, margin=0.4, seed=9)
    p1 = tmp_path / "d1.relex"
    p2 = tmp_path / "d2.relex"
    io.save_dataset(ds, p1)
    loaded = io.load_dataset(p1)
    io.save_dataset(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(loaded.images, ds.images)
    assert np.array_equal(loaded.labels, ds.labels)
    assert loaded.value_range == ds.value_range
    assert loaded.provenance == ds.provenance
