import numpy as np
import pytest
import torch

from tacsal.neural import NetSpec, TrainedModel, forward
from tacsal.saliency import (SaliencyPipeline, condepnet_apply, identity_observation,
                             masked_observation, saliency_pipeline_apply, salient_observation,
                             tacsalnet_apply)


def tiny(kind="unet", seed=0, res=64):
    torch.manual_seed(seed)
    spec = NetSpec(kind, base=4, res=res)
    return TrainedModel.from_module(spec, spec.build(), {})


def test_pipeline_is_the_composition(rng):
    a, b = tiny(seed=0), tiny(seed=1)
    p = SaliencyPipeline(a, b)
    img = rng.uniform(size=(3, 64, 64))
    expected = forward(b, forward(a, img))
    assert np.array_equal(p(img), expected)
    assert np.array_equal(saliency_pipeline_apply(p, img[0]), expected[0])
    assert np.array_equal(p.depth(img), condepnet_apply(a, img))
    assert np.array_equal(tacsalnet_apply(b, p.depth(img)), expected)
    assert p.res == 64


def test_pipeline_rejects_mismatched_models():
    with pytest.raises(ValueError):
        SaliencyPipeline(tiny(res=64), tiny(res=32))
    with pytest.raises(ValueError):
        SaliencyPipeline(tiny(), tiny(), feature="corner")


def test_observation_seams(rng):
    s = rng.uniform(size=(64, 64))
    assert salient_observation(s) is identity_observation(s)
    depth = rng.uniform(size=(64, 64))
    masked = masked_observation(depth, 0.5)(s)
    assert np.array_equal(masked, np.where(s >= 0.5, depth, 0.0))
