"""Synthetic multi-view scenes: a moving Gaussian blob under an orbit camera.

A blob travels in straight-line steps through world space while a pinhole
camera orbits the scene center. Frames are the blob's perspective projection
splatted as an isotropic Gaussian over a constant background; the projection
shares the camera model of the renderer (same orbit pose, same field of
view), so pixel (i, j) of a frame corresponds to the ray the renderer casts
through cell (i, j).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .renderer import DEFAULT_CAMERA_RADIUS, DEFAULT_FOV_DEGREES, pose_from_angle

_TRUNCATE_SIGMAS = 6.0


@dataclass(frozen=True)
class SceneSpec:
    """Everything that determines a scene up to the viewing angle."""

    blob_start: tuple[float, float, float] = (-0.5, 0.1, 0.0)
    blob_velocity: tuple[float, float, float] = (0.25, 0.0, 0.0)
    blob_radius: float = 0.25
    frame_count: int = 4
    height: int = 8
    width: int = 8
    camera_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    camera_radius: float = DEFAULT_CAMERA_RADIUS
    background: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("blob_start", "blob_velocity", "camera_center"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3 or not all(np.isfinite(x) for x in v):
                raise ValidationError(f"{name} must be three finite floats")
            object.__setattr__(self, name, v)
        if not (np.isfinite(self.blob_radius) and self.blob_radius > 0):
            raise ValidationError("blob_radius must be positive")
        if self.frame_count < 1 or self.height < 1 or self.width < 1:
            raise ValidationError("frame_count, height, width must be >= 1")
        if not (np.isfinite(self.camera_radius) and self.camera_radius > 0):
            raise ValidationError("camera_radius must be positive")
        if not np.isfinite(self.background):
            raise ValidationError("background must be finite")

    def to_dict(self) -> dict:
        return {
            "blob_start": list(self.blob_start),
            "blob_velocity": list(self.blob_velocity),
            "blob_radius": self.blob_radius,
            "frame_count": self.frame_count,
            "height": self.height,
            "width": self.width,
            "camera_center": list(self.camera_center),
            "camera_radius": self.camera_radius,
            "background": self.background,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scene key {sorted(unknown)[0]!r}")
        kwargs = dict(data)
        for name in ("blob_start", "blob_velocity", "camera_center"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_scene() -> SceneSpec:
    return SceneSpec()


def synth_scene(spec: SceneSpec, beta_degrees: float) -> tuple[np.ndarray, bool]:
    """Render the scene from orbit angle beta.

    Returns the (frame_count, height, width, 3) video and a visibility flag:
    false when the blob center never projects inside the frame, the cue that
    a downstream report is built on background only.
    """
    pose = pose_from_angle(beta_degrees, spec.camera_center, spec.camera_radius)
    R = pose.rotation
    eye = pose.position
    rng = np.random.default_rng(spec.seed)
    rgb = 0.5 + 0.5 * rng.uniform(size=3)

    h, w = spec.height, spec.width
    # Match the renderer's pixel grid: square cells, endpoint-inclusive
    # columns spanning the horizontal field of view.
    tan_half = np.tan(np.radians(DEFAULT_FOV_DEGREES) / 2.0)
    focal = max(w - 1, 1) / (2.0 * tan_half)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    cols, rows = np.meshgrid(np.arange(w, dtype=float),
                             np.arange(h, dtype=float))

    video = np.full((spec.frame_count, h, w, 3), spec.background)
    visible = False
    start = np.asarray(spec.blob_start)
    velocity = np.asarray(spec.blob_velocity)
    for frame in range(spec.frame_count):
        world = start + frame * velocity
        cam = R.T @ (world - eye)
        depth = -cam[2]
        if depth <= 1e-6:
            continue  # behind the camera
        u = cx + focal * cam[0] / depth
        v = cy - focal * cam[1] / depth
        if 0.0 <= u <= w - 1 and 0.0 <= v <= h - 1:
            visible = True
        r_pix = spec.blob_radius * focal / depth
        dist2 = (cols - u) ** 2 + (rows - v) ** 2
        splat = np.exp(-dist2 / (2.0 * r_pix ** 2))
        splat[dist2 > (_TRUNCATE_SIGMAS * r_pix) ** 2] = 0.0
        video[frame] += splat[:, :, None] * rgb
    return video, visible
