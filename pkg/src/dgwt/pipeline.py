"""End-to-end path: video -> transformer -> rendered features -> attention
consistency across viewing angles, with a deterministic report.

``forward`` runs the encoder on a single video but reroutes the tokens of the
final block through the volumetric renderer at a chosen orbit angle, so two
calls with different angles expose the same content from two synthetic
viewpoints. ``pairwise_consistency`` compares the resulting per-head
attention volumes with the directed GW discrepancy.

Reports serialize to JSON with a fixed key order and floats printed at 17
significant digits, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .attention import (BlockWeights, ModelWeights, TransformerConfig,
                        classify, encoder_block, extract_attention_volumes,
                        patch_embed)
from .errors import ConfigurationError, ValidationError
from .gw import SolverConfig, dgw_consistency
from .renderer import (DEFAULT_CAMERA_RADIUS, FieldMLP, RenderConfig,
                       StyleMapper, pose_from_angle, render_feature_volume)
from .scene import SceneSpec, synth_scene
from .tensor_io import read_tensor, write_tensor
from .tensors import AttentionVolume, as_float_array

DEFAULT_ANGLE_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_dgw: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_dgw"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be non-negative, got {v!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """All sub-configs plus the shared camera geometry."""

    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    camera_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    camera_radius: float = DEFAULT_CAMERA_RADIUS
    angle_range: tuple[float, float] = DEFAULT_ANGLE_RANGE

    def __post_init__(self):
        grid = self.transformer.patch_grid + (self.transformer.width,)
        if self.render.grid_extents != grid:
            raise ConfigurationError(
                f"render grid {self.render.grid_extents} does not match the "
                f"transformer patch grid {grid}"
            )
        lo, hi = self.angle_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ConfigurationError(f"bad angle range {self.angle_range!r}")
        if self.camera_radius <= 0:
            raise ConfigurationError("camera_radius must be positive")


@dataclass(frozen=True)
class PipelineWeights:
    """Transformer, field, and style-map parameters as one bundle."""

    model: ModelWeights
    field_mlp: FieldMLP
    style_mapper: StyleMapper

    @classmethod
    def seeded(cls, seed: int, cfg: PipelineConfig) -> "PipelineWeights":
        s_model, s_field, s_style = np.random.SeedSequence(seed).generate_state(3)
        model = ModelWeights.seeded(cfg.transformer, int(s_model))
        field_mlp = FieldMLP.seeded(int(s_field),
                                    feature_dim=cfg.transformer.width)
        mapper = StyleMapper.seeded(int(s_style), field_mlp,
                                    cfg.transformer.width)
        return cls(model, field_mlp, mapper)


def forward(video, beta_degrees: float, weights: PipelineWeights,
            cfg: PipelineConfig) -> tuple[np.ndarray, list[AttentionVolume]]:
    """Class logits and final-block attention volumes at one orbit angle."""
    tcfg = cfg.transformer
    z = patch_embed(video, tcfg, weights.model)
    for block in weights.model.blocks[:-1]:
        z, _ = encoder_block(z, block, tcfg)
    t, h, w = tcfg.patch_grid
    feature_volume = z.reshape(t, h, w, tcfg.width)
    pose = pose_from_angle(beta_degrees, cfg.camera_center, cfg.camera_radius)
    rendered = render_feature_volume(feature_volume, pose, weights.field_mlp,
                                     cfg.render, weights.style_mapper)
    z = rendered.reshape(tcfg.patch_count, tcfg.width)
    z, attn = encoder_block(z, weights.model.blocks[-1], tcfg)
    logits = classify(z, weights.model)
    volumes = extract_attention_volumes(attn, (t, h, w))
    return logits, volumes


@dataclass(frozen=True)
class PairwiseResult:
    mean_dgw: float
    per_head_dgw: tuple[float, ...]
    per_head_converged: tuple[bool, ...]
    logits_view1: np.ndarray
    logits_view2: np.ndarray
    volumes_view1: tuple[AttentionVolume, ...]
    volumes_view2: tuple[AttentionVolume, ...]


def pairwise_consistency(video, beta1: float, beta2: float,
                         weights: PipelineWeights, cfg: PipelineConfig,
                         threads: int = 1) -> PairwiseResult:
    """Mean directed GW over index-aligned head pairs of two view angles."""
    lo, hi = cfg.angle_range
    for beta in (beta1, beta2):
        if not (lo <= beta <= hi):
            raise ValidationError(
                f"angle {beta!r} outside the configured range [{lo}, {hi}]"
            )
    logits1, volumes1 = forward(video, beta1, weights, cfg)
    logits2, volumes2 = forward(video, beta2, weights, cfg)

    def solve(pair):
        return dgw_consistency(pair[0], pair[1], cfg.solver)

    pairs = list(zip(volumes1, volumes2))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, pairs))
    else:
        results = [solve(pair) for pair in pairs]
    values = tuple(r.value for r in results)
    return PairwiseResult(
        mean_dgw=float(np.mean(values)),
        per_head_dgw=values,
        per_head_converged=tuple(r.converged for r in results),
        logits_view1=logits1,
        logits_view2=logits2,
        volumes_view1=tuple(volumes1),
        volumes_view2=tuple(volumes2),
    )


def total_loss(logits, label: int, mean_dgw: float,
               weights: LossWeights) -> dict:
    """Cross entropy of the logits plus the weighted consistency term."""
    logits = as_float_array(logits, "logits")
    label = int(label)
    if not 0 <= label < logits.size:
        raise ValidationError(f"label {label} outside [0, {logits.size})")
    log_probs = logits - logsumexp(logits)
    ce = float(-log_probs[label])
    total = weights.lambda_cls * ce + weights.lambda_dgw * float(mean_dgw)
    return {"cross_entropy": ce, "mean_dgw": float(mean_dgw), "total": total}


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RunReport:
    beta1: float
    beta2: float
    label: int
    seed: int
    lambda_cls: float
    lambda_dgw: float
    logits_view1: tuple
    logits_view2: tuple
    per_head_dgw: tuple
    per_head_converged: tuple
    mean_dgw: float
    cross_entropy: float
    total_loss: float
    blob_visible: bool
    timings: dict | None = None

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "label": self.label,
            "seed": self.seed,
            "lambda_cls": self.lambda_cls,
            "lambda_dgw": self.lambda_dgw,
            "logits_view1": list(self.logits_view1),
            "logits_view2": list(self.logits_view2),
            "per_head_dgw": list(self.per_head_dgw),
            "per_head_converged": list(self.per_head_converged),
            "mean_dgw": self.mean_dgw,
            "cross_entropy": self.cross_entropy,
            "total_loss": self.total_loss,
            "blob_visible": self.blob_visible,
            "timings": self.timings,
        }


def _format_scalar(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if not np.isfinite(f):
            raise ValidationError("report floats must be finite")
        return format(f, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    raise ValidationError(f"unsupported report value {value!r}")


def _dump(value, indent: int) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{inner}{json.dumps(str(k))}: {_dump(v, indent + 1)}'
                 for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not len(value):
            return "[]"
        items = [f"{inner}{_dump(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _format_scalar(value)


def report_to_json(report: RunReport) -> str:
    """Deterministic JSON: fixed key order, floats at 17 significant digits."""
    return _dump(report.to_dict(), 0) + "\n"


def write_report(report: RunReport, path) -> None:
    Path(path).write_text(report_to_json(report))


@dataclass(frozen=True)
class PipelineRun:
    """A report plus the intermediate artifacts that figures are drawn from."""

    report: RunReport
    video: np.ndarray
    result: PairwiseResult


def run_pipeline(spec: SceneSpec, beta1: float, beta2: float, label: int,
                 *, seed: int = 0, cfg: PipelineConfig | None = None,
                 threads: int = 1, with_timings: bool = False) -> PipelineRun:
    """Synthesize the canonical view, compare two render angles, report.

    The scene is synthesized at angle zero; beta1 and beta2 steer only the
    feature renderer, which is what makes the two views comparable on the
    same video. Timings are recorded only on request so that default reports
    are byte-identical across runs.
    """
    cfg = cfg or PipelineConfig()
    timings: dict | None = {} if with_timings else None
    t0 = time.perf_counter()
    video, visible = synth_scene(spec, 0.0)
    t1 = time.perf_counter()
    weights = PipelineWeights.seeded(seed, cfg)
    result = pairwise_consistency(video, beta1, beta2, weights, cfg, threads)
    t2 = time.perf_counter()
    mean_logits = 0.5 * (result.logits_view1 + result.logits_view2)
    losses = total_loss(mean_logits, label, result.mean_dgw, cfg.loss_weights)
    if timings is not None:
        timings["synth_seconds"] = t1 - t0
        timings["consistency_seconds"] = t2 - t1
    report = RunReport(
        beta1=float(beta1),
        beta2=float(beta2),
        label=int(label),
        seed=int(seed),
        lambda_cls=cfg.loss_weights.lambda_cls,
        lambda_dgw=cfg.loss_weights.lambda_dgw,
        logits_view1=tuple(float(x) for x in result.logits_view1),
        logits_view2=tuple(float(x) for x in result.logits_view2),
        per_head_dgw=tuple(float(x) for x in result.per_head_dgw),
        per_head_converged=tuple(bool(b) for b in result.per_head_converged),
        mean_dgw=losses["mean_dgw"],
        cross_entropy=losses["cross_entropy"],
        total_loss=losses["total"],
        blob_visible=bool(visible),
        timings=timings,
    )
    return PipelineRun(report=report, video=video, result=result)


# ---------------------------------------------------------------------------
# weight bundles on disk


_MANIFEST = "manifest.json"


def _config_to_dict(cfg: PipelineConfig) -> dict:
    t = cfg.transformer
    r = cfg.render
    s = cfg.solver
    return {
        "transformer": {
            "video_extents": list(t.video_extents),
            "patch_extents": list(t.patch_extents),
            "blocks": t.blocks,
            "heads": t.heads,
            "width": t.width,
            "class_count": t.class_count,
            "mlp_ratio": t.mlp_ratio,
        },
        "render": {
            "grid_extents": list(r.grid_extents),
            "samples_per_ray": r.samples_per_ray,
            "near": r.near,
            "far": r.far,
            "fov_degrees": r.fov_degrees,
            "stratified": r.stratified,
        },
        "solver": {
            "epsilon": s.epsilon,
            "sinkhorn_tol": s.sinkhorn_tol,
            "sinkhorn_max_iters": s.sinkhorn_max_iters,
            "outer_tol": s.outer_tol,
            "outer_max_iters": s.outer_max_iters,
            "log_domain": s.log_domain,
        },
        "loss_weights": {
            "lambda_cls": cfg.loss_weights.lambda_cls,
            "lambda_dgw": cfg.loss_weights.lambda_dgw,
        },
        "camera_center": list(cfg.camera_center),
        "camera_radius": cfg.camera_radius,
        "angle_range": list(cfg.angle_range),
    }


def _config_from_dict(data: dict) -> PipelineConfig:
    t = data["transformer"]
    r = data["render"]
    s = data["solver"]
    return PipelineConfig(
        transformer=TransformerConfig(
            video_extents=tuple(t["video_extents"]),
            patch_extents=tuple(t["patch_extents"]),
            blocks=t["blocks"], heads=t["heads"], width=t["width"],
            class_count=t["class_count"], mlp_ratio=t["mlp_ratio"],
        ),
        render=RenderConfig(
            grid_extents=tuple(r["grid_extents"]),
            samples_per_ray=r["samples_per_ray"], near=r["near"],
            far=r["far"], fov_degrees=r["fov_degrees"],
            stratified=r["stratified"],
        ),
        solver=SolverConfig(
            epsilon=s["epsilon"], sinkhorn_tol=s["sinkhorn_tol"],
            sinkhorn_max_iters=s["sinkhorn_max_iters"],
            outer_tol=s["outer_tol"], outer_max_iters=s["outer_max_iters"],
            log_domain=s["log_domain"],
        ),
        loss_weights=LossWeights(**data["loss_weights"]),
        camera_center=tuple(data["camera_center"]),
        camera_radius=data["camera_radius"],
        angle_range=tuple(data["angle_range"]),
    )


def _named_tensors(weights: PipelineWeights) -> dict:
    out = {
        "patch_proj": weights.model.patch_proj,
        "patch_bias": weights.model.patch_bias,
        "positions": weights.model.positions,
        "classifier": weights.model.classifier,
        "classifier_bias": weights.model.classifier_bias,
    }
    for i, b in enumerate(weights.model.blocks):
        for name in ("w_q", "w_k", "w_v", "w_o", "ln1_gain", "ln1_bias",
                     "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
                     "ln2_gain", "ln2_bias"):
            out[f"block{i}.{name}"] = getattr(b, name)
    for i, (W, b) in enumerate(weights.field_mlp.layers):
        out[f"field.layer{i}.weight"] = W
        out[f"field.layer{i}.bias"] = b
    out["field.density_weight"] = weights.field_mlp.density_weight
    out["field.density_bias"] = np.asarray(weights.field_mlp.density_bias)
    out["field.feature_weight"] = weights.field_mlp.feature_weight
    out["field.feature_bias"] = weights.field_mlp.feature_bias
    for i, (M, b) in enumerate(weights.style_mapper.maps):
        out[f"style.layer{i}.map"] = M
        out[f"style.layer{i}.bias"] = b
    return out


def save_pipeline_weights(dirpath, weights: PipelineWeights,
                          cfg: PipelineConfig) -> None:
    """Write every parameter tensor plus a manifest to a directory."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    tensors = _named_tensors(weights)
    index = {}
    for name, arr in tensors.items():
        fname = name.replace(".", "_") + ".dgwt"
        write_tensor(root / fname, np.asarray(arr, dtype=np.float64))
        index[name] = fname
    manifest = {
        "format": "dgwt-weights",
        "version": 1,
        "config": _config_to_dict(cfg),
        "tensors": index,
        "field_depth": len(weights.field_mlp.layers),
        "negative_slope": weights.field_mlp.negative_slope,
    }
    (root / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_pipeline_weights(dirpath) -> tuple[PipelineWeights, PipelineConfig]:
    root = Path(dirpath)
    manifest = json.loads((root / _MANIFEST).read_text())
    if manifest.get("format") != "dgwt-weights" or manifest.get("version") != 1:
        raise ValidationError(f"unrecognized weight bundle at {root}")
    cfg = _config_from_dict(manifest["config"])
    index = manifest["tensors"]

    def load(name):
        return read_tensor(root / index[name]).as_array()

    tcfg = cfg.transformer
    blocks = []
    for i in range(tcfg.blocks):
        blocks.append(BlockWeights(**{
            name: load(f"block{i}.{name}")
            for name in ("w_q", "w_k", "w_v", "w_o", "ln1_gain", "ln1_bias",
                         "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
                         "ln2_gain", "ln2_bias")
        }))
    model = ModelWeights(
        patch_proj=load("patch_proj"),
        patch_bias=load("patch_bias"),
        positions=load("positions"),
        blocks=tuple(blocks),
        classifier=load("classifier"),
        classifier_bias=load("classifier_bias"),
    )
    depth = manifest["field_depth"]
    layers = tuple((load(f"field.layer{i}.weight"), load(f"field.layer{i}.bias"))
                   for i in range(depth))
    field_mlp = FieldMLP(
        layers=layers,
        density_weight=load("field.density_weight"),
        density_bias=float(load("field.density_bias")),
        feature_weight=load("field.feature_weight"),
        feature_bias=load("field.feature_bias"),
        negative_slope=manifest["negative_slope"],
    )
    mapper = StyleMapper(maps=tuple(
        (load(f"style.layer{i}.map"), load(f"style.layer{i}.bias"))
        for i in range(depth)))
    return PipelineWeights(model, field_mlp, mapper), cfg
