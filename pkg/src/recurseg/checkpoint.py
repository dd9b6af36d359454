"""Checkpoint archive: dotted leaf paths -> float32 arrays, plus a config
fingerprint for exact-match restore and subtree-selective restore for
transfer."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .blocks import NetworkConfig
from .data import DataError
from .network import ModelVariant, RecurrenceNet

CHECKPOINT_VERSION = 1
ENCODER_SUBTREES = ("encoder_flair", "encoder_t1c")


class CheckpointError(DataError):
    """Checkpoint unreadable or incompatible with the target model."""


def config_fingerprint(config: NetworkConfig, variant: ModelVariant) -> str:
    payload = json.dumps(
        {"config": asdict(config), "variant": asdict(variant)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class Checkpoint:
    config: NetworkConfig
    variant: ModelVariant
    fingerprint: str
    arrays: dict[str, np.ndarray]
    extra: dict


def save_checkpoint(path, model: RecurrenceNet, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }
    meta = {
        "format": "recurseg-checkpoint",
        "version": CHECKPOINT_VERSION,
        "fingerprint": config_fingerprint(model.config, model.variant),
        "config": asdict(model.config),
        "variant": asdict(model.variant),
        "extra": extra or {},
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)
    # np.savez appends .npz when missing; report the real location
    return path if path.exists() else path.with_suffix(path.suffix + ".npz")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as npz:
        if "__meta__" not in npz:
            raise CheckpointError(f"{path}: not a recurseg checkpoint (missing metadata)")
        meta = json.loads(str(npz["__meta__"]))
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    if meta.get("format") != "recurseg-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    config = NetworkConfig(**{**meta["config"], "dilation_rates": tuple(meta["config"]["dilation_rates"])})
    variant = ModelVariant(**meta["variant"])
    return Checkpoint(
        config=config,
        variant=variant,
        fingerprint=meta["fingerprint"],
        arrays=arrays,
        extra=meta.get("extra", {}),
    )


def restore(model: RecurrenceNet, ckpt: Checkpoint) -> None:
    """Exact-match restore; the config fingerprint must agree."""
    expected = config_fingerprint(model.config, model.variant)
    if ckpt.fingerprint != expected:
        raise CheckpointError(
            "checkpoint fingerprint mismatch: saved model has a different config/variant"
        )
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.arrays.items()}
    model.load_state_dict(state)


def restore_subtrees(model: RecurrenceNet, ckpt: Checkpoint, prefixes: tuple[str, ...]) -> list[str]:
    """Copy all leaves whose dotted path starts with one of the prefixes.

    Returns the copied leaf names; raises with the full list of offending
    leaves on any shape mismatch or missing leaf.
    """
    state = model.state_dict()
    copied = []
    mismatched = []
    missing = []
    for name, target in state.items():
        if not any(name == p or name.startswith(p + ".") for p in prefixes):
            continue
        source = ckpt.arrays.get(name)
        if source is None:
            missing.append(name)
            continue
        if tuple(source.shape) != tuple(target.shape):
            mismatched.append(f"{name}: checkpoint {tuple(source.shape)} vs model {tuple(target.shape)}")
            continue
        state[name] = torch.from_numpy(source.copy())
        copied.append(name)
    if mismatched or missing:
        raise CheckpointError(
            "transfer restore failed; "
            + (f"shape mismatches: {mismatched}; " if mismatched else "")
            + (f"missing leaves: {missing}" if missing else "")
        )
    if not copied:
        raise CheckpointError(f"no leaves matched prefixes {prefixes}")
    model.load_state_dict(state)
    return copied
