"""Command line interface.

Subcommands cover the full path: ``synth`` renders a scene spec to a video
tensor, ``attend`` runs the encoder and writes attention volumes, ``dgw``
compares two volumes, ``render`` integrates a feature volume from an orbit
pose, ``pipeline`` produces an end-to-end report (optionally with figures),
and ``init-weights`` materializes a seeded weight bundle for ``attend``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .errors import (ConfigurationError, FormatError, NumericalError,
                     ValidationError)
from .gw import (SolverConfig, dgw_consistency, intra_distance_matrix,
                 solve_gw)
from .renderer import FieldMLP, RenderConfig, StyleMapper, pose_from_angle, \
    render_feature_volume
from .scene import SceneSpec, synth_scene
from .tensor_io import read_tensor, write_tensor
from .tensors import (AttentionVolume, GridCoordinates, Tensor,
                      normalize_attention)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for every stochastic choice (default 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-head solves (default 1)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgwt",
        description="attention-consistency toolkit: synthetic scenes, a toy "
                    "video transformer, volumetric rendering, and directed "
                    "Gromov-Wasserstein discrepancies")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="render a scene spec to a video tensor")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--beta", type=float, required=True,
                   help="orbit angle in degrees")
    p.add_argument("--out", required=True, help="output video tensor")

    p = sub.add_parser("attend", parents=[common],
                       help="run the encoder and extract attention volumes")
    p.add_argument("--video", required=True, help="input video tensor")
    p.add_argument("--weights", required=True, help="weight bundle directory")
    p.add_argument("--beta", type=float, required=True,
                   help="render angle in degrees")
    p.add_argument("--out-attn", required=True,
                   help="directory for per-head volumes")
    p.add_argument("--out-logits", required=True, help="output logits tensor")

    p = sub.add_parser("dgw", parents=[common],
                       help="discrepancy between two attention volumes")
    p.add_argument("--a", required=True, help="first rank-3 volume tensor")
    p.add_argument("--b", required=True, help="second rank-3 volume tensor")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--loss", choices=("cosine", "l2"), default="cosine")
    p.add_argument("--scale-t", type=float, default=1.0)
    p.add_argument("--scale-h", type=float, default=1.0)
    p.add_argument("--scale-w", type=float, default=1.0)
    p.add_argument("--log-domain", choices=("auto", "on", "off"),
                   default="auto")
    p.add_argument("--out-coupling", default=None,
                   help="optional output coupling tensor")

    p = sub.add_parser("render", parents=[common],
                       help="render a feature volume from an orbit pose")
    p.add_argument("--feature", required=True,
                   help="input rank-4 (t, h, w, d) tensor")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", required=True, help="output feature tensor")

    p = sub.add_parser("pipeline", parents=[common],
                       help="end-to-end run with a deterministic report")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--beta1", type=float, required=True)
    p.add_argument("--beta2", type=float, required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--figures", default=None,
                   help="optional directory for figures and CSV")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock timings in the report")

    p = sub.add_parser("init-weights", parents=[common],
                       help="write a seeded weight bundle")
    p.add_argument("--out", required=True, help="bundle directory")

    return parser


def _cmd_synth(args) -> int:
    spec = SceneSpec.from_json_file(args.spec)
    video, visible = synth_scene(spec, args.beta)
    write_tensor(args.out, video)
    if not visible:
        print("warning: blob never enters the frame", file=sys.stderr)
    print(f"wrote {args.out} shape {video.shape}")
    return 0


def _cmd_attend(args) -> int:
    video = read_tensor(args.video).as_array()
    weights, cfg = pl.load_pipeline_weights(args.weights)
    logits, volumes = pl.forward(video, args.beta, weights, cfg)
    outdir = Path(args.out_attn)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, vol in enumerate(volumes):
        write_tensor(outdir / f"head{i:02d}.dgwt", vol.mass)
    write_tensor(args.out_logits, logits)
    print(f"wrote {len(volumes)} attention volumes to {outdir}")
    print(f"wrote logits to {args.out_logits}")
    return 0


def _solver_config(args) -> SolverConfig:
    log_domain = {"auto": None, "on": True, "off": False}[args.log_domain]
    return SolverConfig(epsilon=args.epsilon, log_domain=log_domain)


def _cmd_dgw(args) -> int:
    a = AttentionVolume(read_tensor(args.a))
    b = AttentionVolume(read_tensor(args.b))
    cfg = _solver_config(args)
    scales = (args.scale_t, args.scale_h, args.scale_w)
    if args.loss == "cosine":
        result = dgw_consistency(a, b, cfg, scales)
    else:
        da = intra_distance_matrix(GridCoordinates(a.grid, scales))
        db = intra_distance_matrix(GridCoordinates(b.grid, scales))
        result = solve_gw(da, db, normalize_attention(a),
                          normalize_attention(b), cfg)
    print(f"value {result.value:.17g}")
    print(f"regularized {result.regularized_value:.17g}")
    print(f"outer_iterations {result.outer_iterations}")
    print(f"converged {str(result.converged).lower()}")
    if args.out_coupling:
        write_tensor(args.out_coupling, result.coupling.matrix)
        print(f"wrote coupling to {args.out_coupling}")
    return 0


def _cmd_render(args) -> int:
    features = read_tensor(args.feature)
    if features.rank != 4:
        raise ValidationError(
            f"features must be rank 4 (t, h, w, d), got rank {features.rank}"
        )
    t, h, w, d = features.shape
    cfg = RenderConfig(grid_extents=(t, h, w, d), samples_per_ray=args.samples)
    s_field, s_style = np.random.SeedSequence(args.seed).generate_state(2)
    mlp = FieldMLP.seeded(int(s_field), feature_dim=d)
    mapper = StyleMapper.seeded(int(s_style), mlp, d)
    pose = pose_from_angle(args.beta)
    out = render_feature_volume(features.as_array(), pose, mlp, cfg, mapper)
    write_tensor(args.out, out)
    print(f"wrote {args.out} shape {out.shape}")
    return 0


def _cmd_pipeline(args) -> int:
    spec = SceneSpec.from_json_file(args.spec)
    run = pl.run_pipeline(spec, args.beta1, args.beta2, args.label,
                          seed=args.seed, threads=args.threads,
                          with_timings=args.timings)
    pl.write_report(run.report, args.report)
    if not run.report.blob_visible:
        print("warning: blob never enters the frame", file=sys.stderr)
    print(f"mean_dgw {run.report.mean_dgw:.17g}")
    print(f"cross_entropy {run.report.cross_entropy:.17g}")
    print(f"total_loss {run.report.total_loss:.17g}")
    print(f"wrote report to {args.report}")
    if args.figures:
        from .figures import save_report_outputs
        paths = save_report_outputs(run, args.figures)
        for path in paths:
            print(f"wrote {path}")
    return 0


def _cmd_init_weights(args) -> int:
    cfg = pl.PipelineConfig()
    weights = pl.PipelineWeights.seeded(args.seed, cfg)
    pl.save_pipeline_weights(args.out, weights, cfg)
    print(f"wrote weight bundle to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "attend": _cmd_attend,
    "dgw": _cmd_dgw,
    "render": _cmd_render,
    "pipeline": _cmd_pipeline,
    "init-weights": _cmd_init_weights,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ConfigurationError, FormatError,
            NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
