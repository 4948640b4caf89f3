"""Dataset directory round trips and format validation."""

import json

import pytest

from counts.dataio import dataset_tensors, read_dataset, write_dataset
from counts.errors import DatasetFormatError
from counts.synthgen import PairConfig, SpikeConfig, ToyConfig, gen_pairs, gen_spike, gen_toy


@pytest.fixture
def toy_ds():
    return gen_toy(ToyConfig(n=10, seed=42))


def test_toy_round_trip_equality(tmp_path, toy_ds):
    write_dataset(toy_ds, tmp_path / "d")
    assert read_dataset(tmp_path / "d") == toy_ds


def test_spike_round_trip_equality(tmp_path):
    ds = gen_spike(SpikeConfig(n=6, seed=1))
    write_dataset(ds, tmp_path / "d")
    assert read_dataset(tmp_path / "d") == ds


def test_pairs_round_trip_equality(tmp_path):
    ds = gen_pairs(PairConfig(n=6, seed=1))
    write_dataset(ds, tmp_path / "d")
    assert read_dataset(tmp_path / "d") == ds


def test_double_round_trip_bit_exact_files(tmp_path, toy_ds):
    write_dataset(toy_ds, tmp_path / "a")
    write_dataset(read_dataset(tmp_path / "a"), tmp_path / "b")
    for name in ("manifest.json", "data.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_keys_exact(tmp_path, toy_ds):
    write_dataset(toy_ds, tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert list(manifest) == ["kind", "n", "D", "T", "seed", "config", "version"]


def test_shape_mismatch_detected(tmp_path, toy_ds):
    write_dataset(toy_ds, tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    manifest["n"] = 11
    manifest["config"]["n"] = 11
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match="n=11"):
        read_dataset(tmp_path / "d")


def test_unknown_version_rejected(tmp_path, toy_ds):
    write_dataset(toy_ds, tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match="version"):
        read_dataset(tmp_path / "d")


def test_missing_files(tmp_path, toy_ds):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope")
    write_dataset(toy_ds, tmp_path / "d")
    (tmp_path / "d" / "data.csv").unlink()
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "d")


def test_dataset_tensors_shapes(toy_ds):
    x, y = dataset_tensors(toy_ds)
    assert x.shape == (10, 12, 1)
    assert y.shape == (10,)
    sp = gen_spike(SpikeConfig(n=4, seed=1))
    xs, ys = dataset_tensors(sp)
    assert xs.shape == (4, 3, 80)
    assert ys.shape == (4, 80)
