"""Versioned binary checkpoints: parameters, optimizer state, scenario hash.

Layout: 8-byte magic, u32 format version, u64 manifest length, JSON manifest
(fingerprint, counters, config echo, block shape table), then the raw block
payloads as little-endian float64 in manifest order. Round-trips are
byte-exact; the manifest carries no timestamps so saves are reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import ParamSet, RmsPropState

MAGIC = b"SKYROAD\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt file, unsupported version, or scenario mismatch."""


@dataclass
class Checkpoint:
    fingerprint: str
    algo: str
    update_count: int
    actor: ParamSet
    critic: ParamSet
    actor_opt: RmsPropState | None
    critic_opt: RmsPropState | None
    config: dict


def _params_manifest(params: ParamSet) -> dict:
    return {
        "role": params.role,
        "layer_sizes": list(params.layer_sizes),
        "version": params.version,
        "shapes": [list(b.shape) for b in params.blocks],
    }


def _opt_manifest(opt: RmsPropState | None) -> dict | None:
    if opt is None:
        return None
    return {"lr": opt.lr, "decay": opt.decay, "eps": opt.eps,
            "shapes": [list(m.shape) for m in opt.mu]}


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    manifest = {
        "fingerprint": ckpt.fingerprint,
        "algo": ckpt.algo,
        "update_count": ckpt.update_count,
        "config": ckpt.config,
        "actor": _params_manifest(ckpt.actor),
        "critic": _params_manifest(ckpt.critic),
        "actor_opt": _opt_manifest(ckpt.actor_opt),
        "critic_opt": _opt_manifest(ckpt.critic_opt),
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    payload = bytearray()
    for arr in _payload_arrays(ckpt):
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    return path


def _payload_arrays(ckpt: Checkpoint):
    yield from ckpt.actor.blocks
    yield from ckpt.critic.blocks
    if ckpt.actor_opt is not None:
        yield from ckpt.actor_opt.mu
    if ckpt.critic_opt is not None:
        yield from ckpt.critic_opt.mu


def load_checkpoint(path, expect_fingerprint: str | None = None) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"unsupported checkpoint version: {path} is not a checkpoint")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    try:
        manifest = json.loads(data[offset:offset + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    offset += blob_len

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointError("truncated checkpoint payload")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += nbytes
        return arr.reshape(shape).astype(float)

    def read_params(entry: dict) -> ParamSet:
        blocks = [take(shape) for shape in entry["shapes"]]
        return ParamSet(blocks=blocks, layer_sizes=tuple(entry["layer_sizes"]),
                        role=entry["role"], version=int(entry["version"]))

    def read_opt(entry: dict | None) -> RmsPropState | None:
        if entry is None:
            return None
        mu = [take(shape) for shape in entry["shapes"]]
        return RmsPropState(mu=mu, lr=entry["lr"], decay=entry["decay"], eps=entry["eps"])

    actor = read_params(manifest["actor"])
    critic = read_params(manifest["critic"])
    actor_opt = read_opt(manifest.get("actor_opt"))
    critic_opt = read_opt(manifest.get("critic_opt"))
    ckpt = Checkpoint(
        fingerprint=manifest["fingerprint"],
        algo=manifest.get("algo", "a3c"),
        update_count=int(manifest.get("update_count", 0)),
        actor=actor,
        critic=critic,
        actor_opt=actor_opt,
        critic_opt=critic_opt,
        config=manifest.get("config", {}),
    )
    if expect_fingerprint is not None and ckpt.fingerprint != expect_fingerprint:
        raise CheckpointError(
            "scenario fingerprint mismatch: checkpoint was trained on a different scenario"
        )
    return ckpt
