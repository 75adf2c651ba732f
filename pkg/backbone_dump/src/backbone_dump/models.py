"""Backbone construction and staged feature extraction.

The supported backbones are torchvision residual networks; their four
residual stages (``layer1`` .. ``layer4``) are the dumpable levels 1..4.
Without a checkpoint the network is built with deterministically seeded
random weights, which keeps the tool usable for format and integration
work when no trained weights are on disk; the manifest records which of
the two cases produced a dump.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

import torch
from torch import nn
from torchvision import models as tv_models

STAGE_CHANNELS: dict[str, dict[int, int]] = {
    "resnet18": {1: 64, 2: 128, 3: 256, 4: 512},
    "resnet50": {1: 256, 2: 512, 3: 1024, 4: 2048},
}

_BUILDERS = {
    "resnet18": tv_models.resnet18,
    "resnet50": tv_models.resnet50,
}

# Wrapper prefixes commonly found in self-supervised training dumps.
_PREFIXES = ("module.", "backbone.", "encoder.")


def supported_models() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def build_backbone(
    model_id: str,
    seed: int = 0,
    checkpoint: str | Path | None = None,
) -> nn.Module:
    """Build ``model_id`` in eval mode, from a checkpoint or seeded random init.

    The seeded path forks the global RNG, so calling this never perturbs
    unrelated random state.
    """
    try:
        builder = _BUILDERS[model_id]
    except KeyError:
        known = ", ".join(sorted(_BUILDERS))
        raise ValueError(f"unknown model {model_id!r}; supported: {known}") from None
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = builder(weights=None)
    if checkpoint is not None:
        _apply_state(model, _load_state_dict(checkpoint), checkpoint)
    model.eval()
    return model


def stage_features(
    model: nn.Module,
    batch: torch.Tensor,
    levels: Iterable[int],
) -> dict[int, torch.Tensor]:
    """Run the stem then the residual stages, capturing the requested ones.

    ``batch`` is (B, 3, H, W); the forward pass stops after the deepest
    requested stage. Returns {level: (B, C_level, H_level, W_level)}.
    """
    wanted = set(levels)
    deepest = max(wanted)
    captured: dict[int, torch.Tensor] = {}
    x = model.conv1(batch)
    x = model.bn1(x)
    x = model.relu(x)
    x = model.maxpool(x)
    for level in (1, 2, 3, 4):
        x = getattr(model, f"layer{level}")(x)
        if level in wanted:
            captured[level] = x
        if level == deepest:
            break
    return captured


def expected_shape(model_id: str, size: int, level: int) -> tuple[int, int, int]:
    """Declared (channels, height, width) of a stage for square inputs.

    Every downsampling step in these networks maps an extent h to
    ceil(h / 2): the stem applies two such steps before the first stage
    and each later stage adds one more.
    """
    channels = STAGE_CHANNELS[model_id][level]
    extent = size
    for _ in range(1 + level):
        extent = (extent + 1) // 2
    return channels, extent, extent


def _strip_prefixes(key: str) -> str:
    changed = True
    while changed:
        changed = False
        for prefix in _PREFIXES:
            if key.startswith(prefix):
                key = key[len(prefix) :]
                changed = True
    return key


def _load_state_dict(path: str | Path) -> dict[str, torch.Tensor]:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, Mapping) and isinstance(state.get("state_dict"), Mapping):
        state = state["state_dict"]
    if not isinstance(state, Mapping) or not state:
        raise ValueError(f"checkpoint {path} does not contain a state dict")
    return {_strip_prefixes(str(k)): v for k, v in state.items()}


def _apply_state(model: nn.Module, state: dict[str, torch.Tensor], source: str | Path) -> None:
    own = model.state_dict()
    usable = {
        key: tensor
        for key, tensor in state.items()
        if key in own and tuple(tensor.shape) == tuple(own[key].shape)
    }
    if not usable:
        raise ValueError(f"checkpoint {source} shares no tensors with the model")
    model.load_state_dict(usable, strict=False)
