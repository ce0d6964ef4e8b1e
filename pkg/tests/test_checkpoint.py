"""Checkpoint blob + manifest round trips and validation."""

import json

import numpy as np
import pytest

from fusetrack.checkpoint import (FORMAT_VERSION, MAGIC, checkpoint_sha256,
                                  load_checkpoint, read_manifest,
                                  save_checkpoint)
from fusetrack.errors import CheckpointError
from fusetrack.model import SimilarityModel


def _model(seed=0, **kw):
    return SimilarityModel("desk", rng=np.random.default_rng(seed), **kw)


def test_round_trip_restores_params_and_state(tmp_path):
    model = _model(1)
    # make running stats nontrivial before saving
    rng = np.random.default_rng(3)
    model.backbone.forward(rng.random((63, 63, 1)), training=True)
    path = str(tmp_path / "m.ckpt")
    manifest = save_checkpoint(model, path, epoch=4, train_loss=0.25, seed=7)
    assert manifest["preset"] == "desk"
    assert manifest["epoch"] == 4

    saved_params = {k: v.copy() for k, v in model.params().items()}
    saved_state = {k: v.copy() for k, v in model.state().items()}
    for v in model.params().values():
        v += 0.5
    for v in model.state().values():
        v *= 2.0

    loaded = load_checkpoint(model, path)
    assert loaded["sha256"] == manifest["sha256"]
    for k, v in model.params().items():
        assert np.array_equal(v, saved_params[k]), k
    for k, v in model.state().items():
        assert np.array_equal(v, saved_state[k]), k
    # in-place restore keeps the Siamese lanes aliased
    assert model.backbone.layers["conv1"].w is \
        model.backbone_z.layers["conv1"].w


def test_blob_layout(tmp_path):
    model = _model(1)
    path = str(tmp_path / "m.ckpt")
    manifest = save_checkpoint(model, path)
    blob = open(path, "rb").read()
    assert blob.startswith(MAGIC)
    version = np.frombuffer(blob, dtype="<u4", count=1, offset=len(MAGIC))[0]
    assert version == FORMAT_VERSION
    n_values = sum(int(np.prod(e["shape"])) for e in manifest["tensors"])
    assert len(blob) == len(MAGIC) + 4 + 8 * n_values
    # first tensor in table order starts right after the header
    first = manifest["tensors"][0]
    live = dict(model.params(), **model.state())
    arr = live[first["name"]]
    got = np.frombuffer(blob, dtype="<f8", count=arr.size,
                        offset=len(MAGIC) + 4).reshape(arr.shape)
    assert np.array_equal(got, arr)


def test_checksum_mismatch_refused(tmp_path):
    model = _model(1)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path)
    blob = bytearray(open(path, "rb").read())
    blob[len(MAGIC) + 10] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(model, path)


def test_preset_mismatch_refused(tmp_path):
    model = _model(1)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path)
    manifest = json.load(open(path + ".json"))
    manifest["preset"] = "paper"
    json.dump(manifest, open(path + ".json", "w"))
    with pytest.raises(CheckpointError, match="preset"):
        load_checkpoint(model, path)


def test_shape_mismatch_refused(tmp_path):
    donor = _model(1)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(donor, path)
    # same preset, different exemplar size -> different head shapes
    target = _model(1, exemplar_size=71)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(target, path)


def test_missing_manifest(tmp_path):
    model = _model(1)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path)
    (tmp_path / "m.ckpt.json").unlink()
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(model, path)


def test_sha_helper_matches_manifest(tmp_path):
    model = _model(1)
    path = str(tmp_path / "m.ckpt")
    manifest = save_checkpoint(model, path)
    assert checkpoint_sha256(path) == manifest["sha256"]
    assert read_manifest(path)["sha256"] == manifest["sha256"]
