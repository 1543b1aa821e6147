"""Synthetic tactile world: edge and cone depth rendering, marker images, contours, scenes."""
from .contours import (KINDS, Contour, NoContact, SensorFrame, contour_sdf,
                       ground_truth_pose)
from .render import (APERTURE_MM, RES, Z_MAX, Z_MIN, ConeDistractor, ContactPose,
                     count_marker_peaks, depth_amplitude, px_per_mm, render_cone_depth,
                     render_edge_depth, sensor_grid, tactile_forward_model, wrap_deg)
from .scene import (PlacedCone, Scene, load_scene, make_scene, place_distractors,
                    random_cone_shape, render_distractor_component, render_edge_component,
                    render_scene_contact, save_scene)

__all__ = [
    "APERTURE_MM", "KINDS", "RES", "Z_MAX", "Z_MIN", "ConeDistractor", "ContactPose", "Contour",
    "NoContact", "PlacedCone", "Scene", "SensorFrame", "contour_sdf", "count_marker_peaks",
    "depth_amplitude", "ground_truth_pose", "load_scene", "make_scene", "place_distractors",
    "px_per_mm", "random_cone_shape", "render_cone_depth", "render_distractor_component",
    "render_edge_component", "render_edge_depth", "render_scene_contact", "save_scene",
    "sensor_grid", "tactile_forward_model", "wrap_deg",
]
