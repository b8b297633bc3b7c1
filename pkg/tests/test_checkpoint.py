"""Checkpoint container format."""
import json

import numpy as np
import pytest

from zslada.errors import DataError
from zslada.nn.checkpoint import (
    FORMAT_VERSION,
    load_container,
    load_mlp,
    save_container,
    save_mlp,
)
from zslada.nn.mlp import MlpSpec, init_network, mlp_forward


def test_container_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(3)
    arrays = {
        "a": rng.standard_normal(17),
        "b": rng.standard_normal((4, 5)),
        "empty": np.zeros(0),
    }
    meta = {"kind": "test", "note": "x"}
    path = tmp_path / "c.ckpt"
    save_container(path, meta, arrays)
    meta2, arrays2 = load_container(path)
    assert meta2 == meta
    assert set(arrays2) == set(arrays)
    for name in arrays:
        assert arrays2[name].tobytes() == np.asarray(
            arrays[name], dtype=np.float64).ravel().tobytes()


def test_save_is_deterministic(tmp_path):
    arrays = {"w": np.arange(6, dtype=np.float64)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_container(p1, {"kind": "t"}, arrays)
    save_container(p2, {"kind": "t"}, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_file(tmp_path):
    with pytest.raises(DataError) as err:
        load_container(tmp_path / "nope.ckpt")
    assert err.value.code == "MISSING_FILE"


def test_bad_version(tmp_path):
    path = tmp_path / "c.ckpt"
    header = {"format_version": FORMAT_VERSION + 1, "meta": {}, "arrays": []}
    path.write_bytes(json.dumps(header).encode() + b"\n")
    with pytest.raises(DataError) as err:
        load_container(path)
    assert err.value.code == "BAD_CHECKPOINT"
    assert "format_version" in str(err.value)


def test_unreadable_header(tmp_path):
    path = tmp_path / "c.ckpt"
    path.write_bytes(b"\xff\xfe not json\n")
    with pytest.raises(DataError) as err:
        load_container(path)
    assert err.value.code == "BAD_CHECKPOINT"


def test_truncated_array(tmp_path):
    path = tmp_path / "c.ckpt"
    save_container(path, {"kind": "t"}, {"w": np.arange(8, dtype=np.float64)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DataError) as err:
        load_container(path)
    assert err.value.code == "BAD_CHECKPOINT"
    assert "truncated" in str(err.value)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "c.ckpt"
    save_container(path, {"kind": "t"}, {"w": np.arange(8, dtype=np.float64)})
    path.write_bytes(path.read_bytes() + b"\x00" * 4)
    with pytest.raises(DataError) as err:
        load_container(path)
    assert err.value.code == "BAD_CHECKPOINT"
    assert "trailing" in str(err.value)


def test_mlp_round_trip_preserves_behavior(tmp_path):
    spec = MlpSpec.dense((3, 5, 2), activation="leaky_relu:0.2", batchnorm=True)
    net = init_network(spec, seed=41)
    net.set_mode("eval")
    path = tmp_path / "net.ckpt"
    save_mlp(path, net, extra_meta={"role": "g_t"})
    loaded = load_mlp(path)

    assert loaded.spec == spec
    assert loaded.mode == "eval"
    assert loaded.seed == 41
    assert np.array_equal(loaded.params, net.params)
    assert np.array_equal(loaded.stats, net.stats)

    X = np.random.default_rng(2).standard_normal((6, 3))
    out_a, _ = mlp_forward(net, X, update_stats=False)
    out_b, _ = mlp_forward(loaded, X, update_stats=False)
    assert np.array_equal(out_a, out_b)


def test_mlp_loader_rejects_other_kinds(tmp_path):
    path = tmp_path / "c.ckpt"
    save_container(path, {"kind": "ada_state"}, {"w": np.zeros(1)})
    with pytest.raises(DataError) as err:
        load_mlp(path)
    assert err.value.code == "BAD_CHECKPOINT"
