import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from tacsal.datagen import build_condepnet_dataset, sample_cone_pool
from tacsal.neural import (CheckpointError, GanConfig, NetSpec, PoseConfig, TrainedModel,
                           TrainingDiverged, VaeConfig, forward, from_bytes, kl_divergence,
                           load_checkpoint, poses_from_prediction, predict_pose, sample_tacngen,
                           save_checkpoint, to_bytes, train_cgan, train_posenet, train_vae)
from tacsal.neural.train import _check, _lr_scale


def tiny(kind: str, seed: int = 0, **kw) -> TrainedModel:
    torch.manual_seed(seed)
    spec = NetSpec(kind, base=4, **kw)
    return TrainedModel.from_module(spec, spec.build(), {"note": "tiny"})


# -- KL term -----------------------------------------------------------------------------

@given(st.floats(-3, 3), st.floats(-3, 2))
def test_kl_matches_numerical_integral(mu, logvar):
    sd = math.exp(0.5 * logvar)
    p = stats.norm(mu, sd)

    def integrand(x):
        return p.pdf(x) * (p.logpdf(x) - stats.norm.logpdf(x))
    ref, _ = integrate.quad(integrand, mu - 12 * sd, mu + 12 * sd, limit=200)
    assert kl_divergence(np.array([mu]), np.array([logvar])) == pytest.approx(ref, abs=1e-6)


def test_kl_torch_and_numpy_agree_and_vanish_at_prior(rng):
    mu, lv = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    t = kl_divergence(torch.from_numpy(mu), torch.from_numpy(lv)).numpy()
    assert np.allclose(t, kl_divergence(mu, lv))
    assert np.all(kl_divergence(np.zeros((3, 8)), np.zeros((3, 8))) == 0)
    assert np.all(kl_divergence(mu, lv) >= 0)


def test_kl_gradcheck():
    mu = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    lv = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(kl_divergence, (mu, lv))


# -- schedule and divergence guard --------------------------------------------------------

def test_lr_schedule():
    scales = [_lr_scale(e, 10, 0.5) for e in range(10)]
    assert scales[:5] == [1.0] * 5
    assert scales[5:] == pytest.approx([1.0, 0.8, 0.6, 0.4, 0.2])
    assert all(a >= b for a, b in zip(scales, scales[1:]))


def test_non_finite_loss_raises():
    _check({"a": 1.0}, 0, 0)
    with pytest.raises(TrainingDiverged):
        _check({"a": float("nan")}, 0, 0)
    with pytest.raises(TrainingDiverged):
        _check({"a": float("inf")}, 0, 0)


# -- networks and checkpoints -------------------------------------------------------------

@pytest.mark.parametrize("kind", ["unet", "patchgan", "vae", "posenet"])
def test_spec_shapes(kind):
    spec = NetSpec(kind, base=4)
    net = spec.build()
    x = torch.zeros(2, *spec.input_shape)
    out = net(x[:, :1], x[:, 1:]) if kind == "patchgan" else net(x)
    assert tuple(out.shape[1:]) == spec.output_shape
    assert NetSpec.from_dict(spec.to_dict()) == spec


def test_spec_rejects_unknown_kind():
    with pytest.raises(ValueError):
        NetSpec("resnet").build()


def test_translator_outputs_unit_range(rng):
    m = tiny("unet")
    out = forward(m, rng.uniform(size=(3, 64, 64)))
    assert out.shape == (3, 64, 64)
    assert out.min() >= 0 and out.max() <= 1
    assert forward(m, np.zeros((64, 64))).shape == (64, 64)
    with pytest.raises(ValueError):
        forward(m, np.zeros((32, 32)))


@pytest.mark.parametrize("kind", ["unet", "vae", "posenet"])
def test_checkpoint_round_trip(kind, tmp_path, rng):
    m = tiny(kind)
    back = from_bytes(to_bytes(m))
    assert back.spec == m.spec
    assert back.digest() == m.digest()
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k])
    x = rng.uniform(size=(2, 64, 64))
    assert np.array_equal(forward(back, x), forward(m, x))
    path = save_checkpoint(tmp_path / "m.ckpt", m)
    loaded = load_checkpoint(path)
    assert loaded.manifest == {"note": "tiny"}
    assert loaded.digest() == m.digest()


def test_checkpoint_rejects_corruption():
    data = to_bytes(tiny("posenet"))
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError):
        from_bytes(data[:-100])
    with pytest.raises(CheckpointError):
        from_bytes(data[:12])
    bad = bytearray(data)
    bad[15:17] = b"\xff\xfe"
    with pytest.raises(CheckpointError):
        from_bytes(bytes(bad))


def test_non_finite_parameters_rejected():
    m = tiny("posenet")
    params = dict(m.params)
    k = next(iter(params))
    params[k] = params[k].copy()
    params[k].flat[0] = np.nan
    with pytest.raises(ValueError):
        TrainedModel(m.spec, params)


def test_predict_pose_normalises_angle_pair(rng):
    m = tiny("posenet")
    m.manifest["y_scale"] = 6.0
    x = rng.uniform(size=(4, 64, 64))
    raw = forward(m, x)
    pred = predict_pose(m, x)
    assert np.allclose(np.hypot(pred[:, 1], pred[:, 2]), 1.0)
    assert np.allclose(pred[:, 0], 6.0 * raw[:, 0])
    y, rz = poses_from_prediction(np.array([[1.0, 1.0, 0.0]]))
    assert y[0] == 1.0 and rz[0] == pytest.approx(90.0)


# -- training ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pairs():
    data = build_condepnet_dataset(48, seed=0)
    x = np.stack([s.target for s in data])
    return x, x.copy()


def test_cgan_training_is_deterministic(pairs):
    cfg = GanConfig(epochs=1, base=4, seed=5, batch_size=16)
    a, b = train_cgan(pairs, cfg), train_cgan(pairs, cfg)
    assert a.digest() == b.digest()
    c = train_cgan(pairs, GanConfig(epochs=1, base=4, seed=6, batch_size=16))
    assert c.digest() != a.digest()
    assert set(a.manifest["curves"]) == {"g_adv", "g_l1", "d", "holdout_l1"}


def test_cgan_learns_identity(pairs):
    cfg = GanConfig(epochs=6, base=8, seed=0, batch_size=8, adversarial=False, lr_g=2e-3)
    m = train_cgan(pairs, cfg, holdout=(pairs[0][:8], pairs[1][:8]))
    curve = m.manifest["curves"]["holdout_l1"]
    assert curve[-1] < 0.5 * curve[0]
    assert m.manifest["curves"]["g_adv"] == [0.0] * 6


def test_cgan_epoch_data(pairs):
    seen = []

    def epoch_data(e):
        seen.append(e)
        return pairs
    train_cgan(None, GanConfig(epochs=2, base=4), epoch_data=epoch_data)
    assert seen == [0, 1]
    with pytest.raises(ValueError):
        train_cgan(None, GanConfig(epochs=1, base=4))
    with pytest.raises(ValueError):
        train_cgan((pairs[0][:10], pairs[1][:10]), GanConfig(epochs=1, base=4))


def test_vae_training_and_sampling():
    maps = np.stack(sample_cone_pool(64, seed=1))
    cfg = VaeConfig(epochs=2, base=4, seed=3)
    m = train_vae(maps, cfg)
    assert m.digest() == train_vae(maps, cfg).digest()
    assert m.manifest["curves"]["recon"][-1] < m.manifest["curves"]["recon"][0]
    s = sample_tacngen(m, seed=0, n=5)
    assert s.shape == (5, 64, 64)
    assert s.min() >= 0 and s.max() <= 1
    assert np.array_equal(s, sample_tacngen(m, seed=0, n=5))
    assert sample_tacngen(m, z=np.zeros(8)).shape == (64, 64)
    with pytest.raises(ValueError):
        sample_tacngen(m)
    with pytest.raises(ValueError):
        sample_tacngen(m, z=np.zeros(3))
    with pytest.raises(ValueError):
        train_vae(maps[:10], cfg)


def test_posenet_training_records_scale():
    data = build_condepnet_dataset(256, seed=2)
    x = np.stack([s.target for s in data])
    poses = np.array([s.meta["pose"] for s in data])
    labels = np.stack([poses[:, 0], np.sin(np.radians(poses[:, 1])), np.cos(np.radians(poses[:, 1]))], 1)
    cfg = PoseConfig(epochs=1, base=4, seed=0, y_scale=4.0)
    m = train_posenet(x, labels, cfg)
    assert m.manifest["y_scale"] == 4.0
    assert m.digest() == train_posenet(x, labels, cfg).digest()
    with pytest.raises(ValueError):
        train_posenet(x[:100], labels[:100], cfg)
