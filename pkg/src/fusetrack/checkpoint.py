"""Checkpoint persistence.

A checkpoint is two files: `<path>` holds a binary blob (magic string,
little-endian uint32 format version, then every tensor as raw
little-endian float64 in manifest table order), and `<path>.json`
holds the manifest: format version, preset, the tensor table with
shapes, training metadata, and the sha256 of the blob.  Loading
verifies the checksum, the preset, and every shape before touching the
model, and copies in place so Siamese weight sharing survives a load.
"""

from __future__ import annotations

import hashlib
import json
import time

import numpy as np

from .errors import CheckpointError

MAGIC = b"FUSETRACKCKPT\n"
FORMAT_VERSION = 1


def _tensor_table(model):
    """(name, kind, array) triples in the canonical serialization order."""
    out = []
    for kind, mapping in (("param", model.params()), ("state", model.state())):
        for name in sorted(mapping):
            out.append((name, kind, mapping[name]))
    return out


def save_checkpoint(model, path, epoch=None, train_loss=None, seed=None):
    table = _tensor_table(model)
    chunks = [MAGIC, np.uint32(FORMAT_VERSION).tobytes()]
    entries = []
    for name, kind, arr in table:
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "preset": model.preset,
        "tensors": entries,
        "epoch": epoch,
        "train_loss": train_loss,
        "seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def read_manifest(path):
    try:
        with open(path + ".json") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"missing manifest {path}.json")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest {path}.json: {e}")


def load_checkpoint(model, path):
    """Restore params and running stats in place; returns the manifest."""
    manifest = read_manifest(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"format version {manifest.get('format_version')} unsupported")
    if manifest.get("preset") != model.preset:
        raise CheckpointError(
            f"checkpoint preset {manifest.get('preset')!r} does not match "
            f"model preset {model.preset!r}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise CheckpointError(f"checksum mismatch for {path}")
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint blob")
    offset = len(MAGIC)
    version = int(np.frombuffer(blob, dtype="<u4", count=1, offset=offset)[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"blob format version {version} unsupported")
    offset += 4

    live = {("param", k): v for k, v in model.params().items()}
    live.update({("state", k): v for k, v in model.state().items()})
    seen = set()
    for entry in manifest["tensors"]:
        key = (entry["kind"], entry["name"])
        if key not in live:
            raise CheckpointError(f"unknown tensor {entry['name']}")
        arr = live[key]
        shape = tuple(entry["shape"])
        if arr.shape != shape:
            raise CheckpointError(
                f"shape mismatch for {entry['name']}: "
                f"checkpoint {shape}, model {arr.shape}")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * n
        if end > len(blob):
            raise CheckpointError(f"blob truncated at tensor {entry['name']}")
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
        arr[...] = data.reshape(shape)
        offset += 8 * n
        seen.add(key)
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes in blob")
    missing = set(live) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    return manifest


def checkpoint_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
