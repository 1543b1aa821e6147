import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from tacsal.control import (MAX_STEP_MM, MAX_TURN_DEG, FollowConfig, ImageConfig, ImageState,
                            Observer, PidConfig, PidState, image_moments, image_step,
                            reference_offset, run_edge_follow, run_pose_eval, pid_step)
from tacsal.neural import NetSpec, TrainedModel
from tacsal.saliency import SaliencyPipeline
from tacsal.simworld import ContactPose, SensorFrame, make_scene, render_edge_depth, render_scene_contact


def tiny(kind, seed=0):
    torch.manual_seed(seed)
    spec = NetSpec(kind, base=4)
    return TrainedModel.from_module(spec, spec.build(), {"y_scale": 6.0})


# -- PID ---------------------------------------------------------------------------------

def test_pid_on_edge_goes_straight():
    (dx, dy, dth), st_ = pid_step((0.0, 0.0), PidState())
    assert (dx, dy, dth) == (2.0, 0.0, 0.0)
    assert st_.prev_y == 0.0 and st_.prev_rz == 0.0


def test_pid_first_step_values():
    (dx, dy, dth), _ = pid_step((1.0, 0.0), PidState())
    assert dx == pytest.approx(2.0)
    assert dy == pytest.approx(-(0.5 * 1 + 0.05 * 1))
    (_, _, dth), _ = pid_step((0.0, 10.0), PidState())
    assert dth == pytest.approx(-(0.3 * 10 + 0.02 * 10))


def test_pid_derivative_and_state_immutability():
    s0 = PidState()
    _, s1 = pid_step((1.0, 0.0), s0)
    assert s0 == PidState()
    (_, dy, _), _ = pid_step((2.0, 0.0), s1)
    assert dy == pytest.approx(-(0.5 * 2 + 0.05 * 3 + 0.1 * 1))


def test_pid_integral_clamp():
    s = PidState()
    for _ in range(50):
        _, s = pid_step((5.0, 40.0), s)
    assert s.integral_y == 10.0 and s.integral_rz == 60.0


@given(st.floats(-20, 20), st.floats(-180, 180), st.floats(-50, 50), st.floats(-100, 100))
def test_pid_commands_are_bounded(y, rz, iy, irz):
    (dx, dy, dth), _ = pid_step((y, rz), PidState(iy, irz, 0.0, 0.0))
    assert abs(dx) <= MAX_STEP_MM and abs(dy) <= MAX_STEP_MM and abs(dth) <= MAX_TURN_DEG


def test_pid_rejects_bad_input():
    with pytest.raises(ValueError):
        pid_step((math.nan, 0.0), PidState())
    with pytest.raises(ValueError):
        PidConfig(step=0)
    with pytest.raises(ValueError):
        PidConfig(max_steps=10)


# -- image controller -----------------------------------------------------------------------

def test_moments_of_centred_edge():
    mass, c, axis = image_moments(render_edge_depth(ContactPose(0.0, 0.0, 4.5)))
    assert mass > 0
    assert c[0] < -2 and abs(c[1]) < 1e-9
    assert abs(axis[0]) < 1e-9
    assert reference_offset() == pytest.approx(-c[0])


def test_image_step_on_reference_goes_straight():
    (dx, dy), s = image_step(render_edge_depth(ContactPose(0.0, 0.0, 4.5)))
    assert dx == pytest.approx(2.0) and dy == pytest.approx(0.0, abs=1e-9)
    assert s.direction == pytest.approx((0.0, 1.0))


def test_image_step_picks_contact_on_left():
    # contact on the right half: rotated half-turn, the advance reverses
    (dx, _), s = image_step(render_edge_depth(ContactPose(0.0, 180.0, 4.5)))
    assert dx == pytest.approx(-2.0)
    # direction memory overrides the left-contact rule
    (dx, _), _ = image_step(render_edge_depth(ContactPose(0.0, 180.0, 4.5)), ImageState((0.0, 1.0)))
    assert dx == pytest.approx(2.0)


def test_image_step_corrects_towards_reference():
    (_, dy_deep), _ = image_step(render_edge_depth(ContactPose(2.0, 0.0, 4.5)))
    (_, dy_shallow), _ = image_step(render_edge_depth(ContactPose(-2.0, 0.0, 4.5)))
    assert dy_deep < 0 < dy_shallow


def test_image_step_without_contact_stops():
    cmd, s = image_step(np.zeros((64, 64)), ImageState((1.0, 0.0)))
    assert cmd == (0.0, 0.0) and s.direction == (1.0, 0.0)


# -- observer and episodes -----------------------------------------------------------------

def test_observer_depth_mode_is_rendered_contact():
    scene = make_scene("square", 0)
    frame = scene.contour.frame_at(3.0, z=4.5)
    obs = Observer(scene, "depth")(frame, 0)
    assert np.array_equal(obs, render_scene_contact(scene, frame))
    with pytest.raises(ValueError):
        Observer(scene, "raw")
    with pytest.raises(ValueError):
        Observer(scene, "magic")


def test_observer_network_modes_are_seeded():
    scene = make_scene("square", 0)
    pipe = SaliencyPipeline(tiny("unet", 0), tiny("unet", 1))
    frame = scene.contour.frame_at(3.0, z=4.5)
    obs = Observer(scene, "saliency", pipe, seed=3)
    assert np.array_equal(obs(frame, 2), obs(frame, 2))
    assert obs(frame, 2).shape == (64, 64)


@pytest.fixture(scope="module")
def oracle_circle():
    scene = make_scene("circle", 0, with_distractors=False)
    return scene, run_edge_follow(scene, FollowConfig(controller="pid", oracle=True))


def test_oracle_pid_traces_circle(oracle_circle):
    scene, res = oracle_circle
    assert res.classification == "success"
    assert res.trajectory_mae <= 0.3
    assert res.progress >= scene.contour.length - 2.0


def test_distance_bookkeeping(oracle_circle):
    _, res = oracle_circle
    steps = np.linalg.norm(np.diff(res.positions, axis=0), axis=1)
    assert res.distance == pytest.approx(steps.sum())
    assert res.steps == len(res.log) == len(res.frames) - 1
    for entry in res.log:
        assert {"step", "frame", "pose", "command"} <= set(entry)


def test_oracle_image_controller_without_distractors():
    scene = make_scene("circle", 0, with_distractors=False)
    res = run_edge_follow(scene, FollowConfig(controller="image", oracle=True))
    assert res.classification == "success"


def test_follow_needs_posenet_for_pid():
    scene = make_scene("circle", 0, with_distractors=False)
    pipe = SaliencyPipeline(tiny("unet", 0), tiny("unet", 1))
    with pytest.raises(ValueError):
        run_edge_follow(scene, FollowConfig(controller="pid"), pipe, None)
    with pytest.raises(ValueError):
        FollowConfig(controller="joystick")


def test_pose_eval_structure():
    pipe = SaliencyPipeline(tiny("unet", 0), tiny("unet", 1))
    rep = run_pose_eval("cones", tiny("posenet"), pipe, n=12, seed=1)
    assert {r["model"] for r in rep.rows()} == {"posenet_raw", "posenet_saliency"}
    assert rep.errors["raw"].shape == (12, 2)
    assert np.all((rep.offsets >= 7) & (rep.offsets <= 14))
    curve = rep.offset_curve(np.arange(7.0, 15.0))
    assert curve["raw"].shape == (7, 2)
    clean = run_pose_eval("clean", tiny("posenet"), pipe, n=4, seed=1)
    assert np.all(np.isnan(clean.offsets))
    with pytest.raises(ValueError):
        run_pose_eval("fog", tiny("posenet"), pipe, n=4)
