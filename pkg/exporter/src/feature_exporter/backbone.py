"""Truncated convolutional backbones for feature export.

The extractor keeps the network up to its penultimate stage: the final
stage, global pooling, and classifier head are discarded, and the last
residual block of the kept stage runs without its trailing ReLU so the
exported features keep their negative lobes. Matching consumers work on
cosine similarity, where one-sided clipping throws away half the signal.
"""

import numpy as np
import torch
from torch import nn
from torchvision import models

from .errors import BackboneError

FEATURE_STAGE = "penultimate_no_relu"

_FACTORIES = {
    "resnet18": models.resnet18,
    "resnet34": models.resnet34,
    "resnet50": models.resnet50,
    "resnet101": models.resnet101,
}

WEIGHTS_RANDOM = "none"
WEIGHTS_AUTO = "auto"


def available_backbones():
    return sorted(_FACTORIES)


def _block_without_final_relu(block, x):
    # Bottleneck (conv3) and BasicBlock (conv2) both end in
    # relu(out + identity); recompute the block, skipping that relu.
    identity = x
    out = block.relu(block.bn1(block.conv1(x)))
    if hasattr(block, "conv3"):
        out = block.relu(block.bn2(block.conv2(out)))
        out = block.bn3(block.conv3(out))
    else:
        out = block.bn2(block.conv2(out))
    if block.downsample is not None:
        identity = block.downsample(x)
    return out + identity


class FeatureBackbone:
    """Frozen feature extractor over a named torchvision classifier."""

    def __init__(self, name: str, weights: str = WEIGHTS_RANDOM, seed: int = 0):
        if name not in _FACTORIES:
            raise BackboneError(f"unknown backbone {name!r}; "
                                f"choose from {available_backbones()}")
        self.name = name
        self.weights = weights
        self.seed = seed
        torch.manual_seed(seed)
        try:
            if weights == WEIGHTS_RANDOM:
                net = _FACTORIES[name](weights=None)
            elif weights == WEIGHTS_AUTO:
                net = _FACTORIES[name](weights="DEFAULT")
            else:
                net = _FACTORIES[name](weights=None)
                state = torch.load(weights, map_location="cpu",
                                   weights_only=True)
                net.load_state_dict(state)
        except BackboneError:
            raise
        except Exception as exc:
            raise BackboneError(f"cannot build {name} with weights "
                                f"{weights!r}: {exc}") from None
        net.eval()
        self._stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool,
                                   net.layer1, net.layer2)
        self._tail = net.layer3
        for p in self._stem.parameters():
            p.requires_grad_(False)
        for p in self._tail.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def extract(self, image_chw: np.ndarray) -> np.ndarray:
        """3xHxW normalized image -> CxH'xW' float32 feature map."""
        x = torch.from_numpy(np.ascontiguousarray(image_chw, dtype=np.float32))
        if x.ndim != 3 or x.shape[0] != 3:
            raise BackboneError(f"expected a 3xHxW image, got {tuple(x.shape)}")
        x = x.unsqueeze(0)
        x = self._stem(x)
        for block in self._tail[:-1]:
            x = block(x)
        x = _block_without_final_relu(self._tail[-1], x)
        return x.squeeze(0).numpy().astype(np.float32)

    def describe(self) -> dict:
        return {"backbone": self.name, "weights": self.weights,
                "seed": self.seed, "feature_stage": FEATURE_STAGE}
