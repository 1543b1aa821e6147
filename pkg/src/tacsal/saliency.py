"""Deployed saliency pipeline: marker image -> contact depth -> edge saliency."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .imagery import DepthMap, SaliencyMap, TactileImage
from .neural import TrainedModel, forward


def condepnet_apply(m: TrainedModel, image: TactileImage) -> DepthMap:
    """Contact depth estimate of one tactile image (or a stack of them)."""
    return forward(m, image)


def tacsalnet_apply(m: TrainedModel, depth: DepthMap) -> SaliencyMap:
    """Edge saliency of one depth map (or a stack of them)."""
    return forward(m, depth)


@dataclass
class SaliencyPipeline:
    condepnet: TrainedModel
    tacsalnet: TrainedModel
    feature: str = "edge"

    def __post_init__(self):
        a, b = self.condepnet.spec, self.tacsalnet.spec
        if a.input_shape != b.input_shape:
            raise ValueError(f"model shapes disagree: {a.input_shape} vs {b.input_shape}")
        if self.feature != "edge":
            raise ValueError("only the edge feature is supported")

    @property
    def res(self) -> int:
        return self.condepnet.spec.res

    def depth(self, image: TactileImage) -> DepthMap:
        return condepnet_apply(self.condepnet, image)

    def __call__(self, image: TactileImage) -> SaliencyMap:
        return tacsalnet_apply(self.tacsalnet, self.depth(image))


def saliency_pipeline_apply(p: SaliencyPipeline, image: TactileImage) -> SaliencyMap:
    return p(image)


def identity_observation(s: SaliencyMap) -> DepthMap:
    return s


def masked_observation(depth: DepthMap, threshold: float = 0.5) -> Callable[[SaliencyMap], DepthMap]:
    """Alternative seam: keep ``depth`` only where saliency reaches ``threshold``."""
    def observe(s: SaliencyMap) -> DepthMap:
        return np.where(np.asarray(s) >= threshold, depth, 0.0)
    return observe


def salient_observation(s: SaliencyMap) -> DepthMap:
    """What the controllers see when saliency is on: the saliency map itself."""
    return identity_observation(s)
