"""Volumetric feature rendering along camera rays.

A small MLP field maps 3-D points to a view-independent density and, given a
ray direction, a feature vector. Features integrate along each ray with the
standard discrete quadrature

    w_i = T_i (1 - exp(-sigma_i delta_i)),   T_i = exp(-sum_{j<i} sigma_j delta_j)

so the weights telescope to ``1 - exp(-sum sigma delta) <= 1``. Cameras orbit
a center in the y = 0 plane; the angle beta is measured from the +z axis, and
beta = 0 gives the identity rotation.

Per-frame conditioning follows weight modulation: a learned linear map turns
a pooled feature vector into per-layer styles, trunk weight columns are
scaled by (1 + style), and each row is rescaled back to its original l2 norm
so modulation redirects weights without changing their magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ValidationError
from .tensors import as_float_array

DEFAULT_FOV_DEGREES = 60.0
DEFAULT_CAMERA_RADIUS = 2.0
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world extrinsics [R | t] with an optional orbit angle tag."""

    extrinsics: np.ndarray  # (3, 4)
    beta_degrees: float | None = None

    def __post_init__(self):
        ext = as_float_array(self.extrinsics, "extrinsics")
        if ext.shape != (3, 4):
            raise ValidationError(f"extrinsics must be (3, 4), got {ext.shape}")
        R = ext[:, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ValidationError("rotation block must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValidationError("rotation block must have determinant +1")
        out = ext.copy()
        out.flags.writeable = False
        object.__setattr__(self, "extrinsics", out)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def position(self) -> np.ndarray:
        return self.extrinsics[:, 3]


def pose_from_angle(beta_degrees: float, center=(0.0, 0.0, 0.0),
                    radius: float = DEFAULT_CAMERA_RADIUS) -> CameraPose:
    """Orbit pose at angle beta from +z, looking at the center, +y up.

    The eye sits at center + radius (sin b, 0, cos b); beta = 0 therefore
    yields the identity rotation with the camera looking down -z.
    """
    if not np.isfinite(beta_degrees):
        raise ValidationError("beta must be finite")
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius!r}")
    center = as_float_array(center, "center")
    b = np.radians(beta_degrees)
    eye = center + radius * np.array([np.sin(b), 0.0, np.cos(b)])
    forward = center - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, forward)
    R = np.column_stack([right, true_up, -forward])
    return CameraPose(np.column_stack([R, eye]), float(beta_degrees))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit norm
    near: float
    far: float

    def __post_init__(self):
        origin = as_float_array(self.origin, "ray origin")
        direction = as_float_array(self.direction, "ray direction")
        if origin.shape != (3,) or direction.shape != (3,):
            raise ValidationError("ray origin and direction must be 3-vectors")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValidationError("ray direction must be unit norm")
        if not (0.0 < self.near < self.far):
            raise ValidationError(
                f"need 0 < near < far, got near={self.near!r} far={self.far!r}"
            )
        for name, arr in (("origin", origin), ("direction", direction)):
            frozen = arr.copy()
            frozen.flags.writeable = False
            object.__setattr__(self, name, frozen)


@dataclass(frozen=True)
class RenderConfig:
    """Ray sampling and output grid parameters."""

    grid_extents: tuple[int, int, int, int] = (4, 4, 4, 32)
    samples_per_ray: int = 64
    near: float = 0.2
    far: float = 4.0
    fov_degrees: float = DEFAULT_FOV_DEGREES
    stratified: bool = False

    def __post_init__(self):
        if len(self.grid_extents) != 4 or any(int(e) <= 0 for e in self.grid_extents):
            raise ConfigurationError(
                f"grid extents must be four positive ints, got {self.grid_extents}"
            )
        if self.samples_per_ray < 2:
            raise ConfigurationError("samples_per_ray must be at least 2")
        if not (0.0 < self.near < self.far):
            raise ConfigurationError(
                f"need 0 < near < far, got near={self.near!r} far={self.far!r}"
            )
        if not (0.0 < self.fov_degrees < 180.0):
            raise ConfigurationError("fov must lie in (0, 180) degrees")
        object.__setattr__(self, "grid_extents",
                           tuple(int(e) for e in self.grid_extents))


def _pixel_offsets(h: int, w: int, fov_degrees: float) -> tuple[np.ndarray, np.ndarray]:
    # Square pixels on an endpoint-inclusive grid: column extremes sit exactly
    # at +-tan(fov/2), so the corner ray's horizontal angle equals fov/2. A
    # single row or column degenerates to the optical axis.
    tan_half = np.tan(np.radians(fov_degrees) / 2.0)
    spacing = 2.0 * tan_half / max(w - 1, 1)
    xs = spacing * (np.arange(w) - (w - 1) / 2.0) if w > 1 else np.zeros(1)
    ys = spacing * ((h - 1) / 2.0 - np.arange(h)) if h > 1 else np.zeros(1)
    return xs, ys


def generate_rays(pose: CameraPose, frame_grid: tuple[int, int],
                  cfg: RenderConfig) -> list[Ray]:
    """One ray per cell of an (h, w) frame, row-major, through cell centers."""
    h, w = (int(e) for e in frame_grid)
    if h < 1 or w < 1:
        raise ValidationError(f"frame grid must be positive, got {frame_grid}")
    xs, ys = _pixel_offsets(h, w, cfg.fov_degrees)
    R = pose.rotation
    origin = pose.position
    rays = []
    for y in ys:
        for x in xs:
            d_cam = np.array([x, y, -1.0])
            d = R @ d_cam
            d = d / np.linalg.norm(d)
            rays.append(Ray(origin, d, cfg.near, cfg.far))
    return rays


# ---------------------------------------------------------------------------
# the feature field


@dataclass(frozen=True)
class FieldMLP:
    """Point -> (density, feature) field.

    The trunk sees only the 3-D point, and density reads off the trunk, so
    density is view independent; the feature head sees the trunk output
    concatenated with the ray direction. ``styles`` records the modulation
    vectors currently baked into the trunk, if any.
    """

    layers: tuple  # ((W, b), ...) trunk, leaky ReLU between
    density_weight: np.ndarray  # (trunk_width,)
    density_bias: float
    feature_weight: np.ndarray  # (feature_dim, trunk_width + 3)
    feature_bias: np.ndarray
    negative_slope: float = 0.01
    styles: tuple | None = None

    @property
    def trunk_width(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feature_weight.shape[0]

    @classmethod
    def seeded(cls, seed: int, *, feature_dim: int, width: int = 64,
               depth: int = 8, point_dim: int = 3) -> "FieldMLP":
        """Uniform per-layer init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        if depth < 1 or width < 1 or feature_dim < 1:
            raise ConfigurationError("depth, width, feature_dim must be >= 1")
        rng = np.random.default_rng(seed)

        def draw(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, (rows, cols))

        layers = []
        fan = point_dim
        for _ in range(depth):
            layers.append((draw(width, fan), np.zeros(width)))
            fan = width
        density_weight = draw(1, width)[0]
        feature_weight = draw(feature_dim, width + point_dim)
        return cls(
            layers=tuple(layers),
            density_weight=density_weight,
            density_bias=0.0,
            feature_weight=feature_weight,
            feature_bias=np.zeros(feature_dim),
        )


def _softplus(x):
    return np.logaddexp(0.0, x)


def _leaky_relu(x, slope):
    return np.where(x >= 0.0, x, slope * x)


def _eval_batch(mlp: FieldMLP, points: np.ndarray, directions: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    hidden = points
    for W, b in mlp.layers:
        hidden = _leaky_relu(hidden @ W.T + b, mlp.negative_slope)
    sigma = _softplus(hidden @ mlp.density_weight + mlp.density_bias)
    features = np.concatenate([hidden, directions], axis=-1) @ mlp.feature_weight.T \
        + mlp.feature_bias
    return features, sigma


def field_eval(mlp: FieldMLP, point, direction) -> tuple[np.ndarray, float]:
    """Evaluate the field at one point: (feature vector, density >= 0)."""
    point = as_float_array(point, "point").reshape(1, 3)
    direction = as_float_array(direction, "direction").reshape(1, 3)
    features, sigma = _eval_batch(mlp, point, direction)
    return features[0], float(sigma[0])


# ---------------------------------------------------------------------------
# style modulation


@dataclass(frozen=True)
class StyleMapper:
    """Per-trunk-layer linear maps from a pooled feature to style vectors."""

    maps: tuple  # ((M, b), ...) with M of shape (fan_in_l, pooled_dim)

    @classmethod
    def seeded(cls, seed: int, mlp: FieldMLP, pooled_dim: int) -> "StyleMapper":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(pooled_dim)
        maps = []
        for W, _ in mlp.layers:
            fan_in = W.shape[1]
            maps.append((rng.uniform(-bound, bound, (fan_in, pooled_dim)),
                         rng.uniform(-0.1, 0.1, fan_in)))
        return cls(maps=tuple(maps))


def style_map(feature_volume, mapper: StyleMapper) -> tuple[np.ndarray, ...]:
    """Pool a (..., d) feature volume and map it to per-layer styles."""
    vol = as_float_array(feature_volume, "feature volume")
    if vol.ndim < 1:
        raise ValidationError("feature volume must have a channel axis")
    pooled = vol.reshape(-1, vol.shape[-1]).mean(axis=0)
    styles = []
    for M, b in mapper.maps:
        if M.shape[1] != pooled.size:
            raise ConfigurationError(
                f"style map expects pooled dim {M.shape[1]}, got {pooled.size}"
            )
        styles.append(M @ pooled + b)
    return tuple(styles)


def modulate_weights(mlp: FieldMLP, styles) -> FieldMLP:
    """Scale trunk weight columns by (1 + style), then restore row norms.

    Rows keep their original l2 norm (floored at 1e-12), so modulation is a
    pure redirection; a zero style is the identity, and modulating by s then
    by -s/(1+s) composes back to the original weights.
    """
    styles = tuple(np.asarray(s, dtype=np.float64) for s in styles)
    if len(styles) != len(mlp.layers):
        raise ConfigurationError(
            f"expected {len(mlp.layers)} style vectors, got {len(styles)}"
        )
    layers = []
    for (W, b), s in zip(mlp.layers, styles):
        if s.shape != (W.shape[1],):
            raise ConfigurationError(
                f"style length {s.shape} does not match fan-in {W.shape[1]}"
            )
        scaled = W * (1.0 + s)[None, :]
        old = np.linalg.norm(W, axis=1)
        new = np.linalg.norm(scaled, axis=1)
        scaled *= (old / np.maximum(new, _NORM_FLOOR))[:, None]
        layers.append((scaled, b))
    return replace(mlp, layers=tuple(layers), styles=styles)


# ---------------------------------------------------------------------------
# quadrature


def sample_positions(ray: Ray, cfg: RenderConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Depths along the ray: evenly spaced, optionally jittered within bins."""
    u = np.linspace(ray.near, ray.far, cfg.samples_per_ray)
    if cfg.stratified and rng is not None:
        mids = 0.5 * (u[1:] + u[:-1])
        lower = np.concatenate([[u[0]], mids])
        upper = np.concatenate([mids, [u[-1]]])
        u = lower + (upper - lower) * rng.uniform(size=u.size)
    return u


def render_weights(sigmas: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Quadrature weights w_i = T_i (1 - exp(-sigma_i delta_i))."""
    sigmas = as_float_array(sigmas, "densities")
    deltas = as_float_array(deltas, "deltas")
    tau = sigmas * deltas
    accum = np.cumsum(tau, axis=-1)
    transmittance = np.exp(-(accum - tau))
    return transmittance * (1.0 - np.exp(-tau))


def _deltas(u: np.ndarray) -> np.ndarray:
    d = np.diff(u, axis=-1)
    return np.concatenate([d, d[..., -1:]], axis=-1)


def render_ray(mlp: FieldMLP, ray: Ray, cfg: RenderConfig,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Integrate the field's features along one ray."""
    u = sample_positions(ray, cfg, rng)
    points = ray.origin + u[:, None] * ray.direction
    directions = np.broadcast_to(ray.direction, points.shape)
    features, sigmas = _eval_batch(mlp, points, directions)
    w = render_weights(sigmas, _deltas(u))
    return w @ features


def render_feature_volume(feature_volume, pose: CameraPose, mlp: FieldMLP,
                          cfg: RenderConfig, mapper: StyleMapper,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Render a (t, h, w, d) feature volume from a camera pose.

    Each input frame conditions the field through style modulation of the
    trunk, then one ray per output cell integrates the modulated field. The
    output grid matches ``cfg.grid_extents``.
    """
    vol = as_float_array(feature_volume, "feature volume")
    t, h, w, d = cfg.grid_extents
    if vol.shape != (t, h, w, d):
        raise ValidationError(
            f"feature volume shape {vol.shape} does not match {(t, h, w, d)}"
        )
    if mlp.feature_dim != d:
        raise ConfigurationError(
            f"field feature dim {mlp.feature_dim} does not match grid depth {d}"
        )
    out = np.empty((t, h, w, d))
    for frame in range(t):
        styles = style_map(vol[frame], mapper)
        frame_mlp = modulate_weights(mlp, styles)
        rays = generate_rays(pose, (h, w), cfg)
        origins = np.stack([r.origin for r in rays])
        dirs = np.stack([r.direction for r in rays])
        depths = np.stack([sample_positions(r, cfg, rng) for r in rays])
        points = origins[:, None, :] + depths[..., None] * dirs[:, None, :]
        ray_dirs = np.broadcast_to(dirs[:, None, :], points.shape)
        n = h * w * cfg.samples_per_ray
        features, sigmas = _eval_batch(frame_mlp, points.reshape(n, 3),
                                       ray_dirs.reshape(n, 3))
        features = features.reshape(h * w, cfg.samples_per_ray, d)
        sigmas = sigmas.reshape(h * w, cfg.samples_per_ray)
        weights = render_weights(sigmas, _deltas(depths))
        out[frame] = np.einsum("rs,rsd->rd", weights, features).reshape(h, w, d)
    return out
