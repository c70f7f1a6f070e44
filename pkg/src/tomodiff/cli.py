"""Command-line surface: a thin shell over the library.

Every subcommand maps 1:1 onto library calls and produces byte-identical
artifacts for identical ``--seed`` values. Exit codes: 0 success, 1
validation failure (bad flags, bad inputs, wrong file type), 2 runtime
failure (divergence, non-finite states), 3 wire-protocol failure with an
external denoiser. Progress goes to stderr as ``step=<k> residual=<r>``
lines.

A ``--config`` file holds ``key=value`` lines (keys are the long flag
names); explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from . import io as tdio
from .core import AngleSpec, Volume
from .denoiser import (
    ExternalDenoiser,
    OracleDenoiser,
    SmoothingDenoiser,
    ZeroDenoiser,
    open_external_session,
)
from .errors import (
    DenoiserError,
    DivergenceError,
    ProtocolError,
    SamplingError,
    ValidationError,
)
from .metrics import evaluate
from .projector import ProjectorConfig, sart
from .radon import FILTERS, fbp
from .sampler import GuidanceConfig, guided_sample, make_schedule
from .simulator import ContrastParams, PhantomSpec, generate_phantom, synthesize_haadf
from .uncertainty import compute_uncertainty


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as validation failures (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _parse_dims(text: str) -> tuple[int, int, int]:
    """HxWxD (in-plane height x width x depth slices) -> (depth, height, width)."""
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be HxWxD, got {text!r}")
    try:
        h, w, d = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be three integers, got {text!r}")
    if min(d, h, w) < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return (d, h, w)


def _parse_range_pair(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return lo, hi


def _parse_uncertainty(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--uncertainty must be 'auto' or a constant in [0,1], got {text!r}"
        )


def _load_config(argv: list[str]) -> dict[str, str]:
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return {}
    cfg: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


class _ArgHelper:
    """add_argument wrapper that lets a config file supply defaults."""

    def __init__(self, parser: argparse.ArgumentParser, config: dict[str, str]):
        self.parser = parser
        self.config = config

    def add(self, *flags, **kwargs):
        long = next(f for f in flags if f.startswith("--"))
        key = long.lstrip("-").replace("-", "_")
        if key in self.config:
            raw = self.config[key]
            typ = kwargs.get("type", str)
            try:
                kwargs["default"] = typ(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ValidationError(f"config value {key}={raw!r}: {exc}") from exc
            kwargs.pop("required", None)
        self.parser.add_argument(*flags, **kwargs)


def _resolve_depth(args, tilt_path: Path) -> int | None:
    if getattr(args, "depth", None) is not None:
        return args.depth
    meta = tdio.read_meta(tilt_path)
    if "source_depth" in meta:
        try:
            return int(meta["source_depth"])
        except ValueError as exc:
            raise ValidationError(
                f"tilt file carries a non-integer source_depth {meta['source_depth']!r}"
            ) from exc
    return None


def _require_depth(depth: int | None) -> int:
    if depth is None:
        raise ValidationError(
            "reconstruction depth unknown: pass --depth (the tilt file carries no source_depth)"
        )
    return depth


def _progress(k: int, residual: float, _elapsed: float | None = None) -> None:
    print(f"step={k} residual={residual:.8e}", file=sys.stderr)


def _make_denoiser(args, depth: int | None, det_shape: tuple[int, int]):
    text = args.denoiser
    if text == "zero":
        return ZeroDenoiser(), None
    if text == "smoothing":
        return SmoothingDenoiser(args.smoothing_sigma), None
    if text.startswith("smoothing:"):
        return SmoothingDenoiser(float(text.split(":", 1)[1])), None
    if text.startswith("oracle:"):
        return OracleDenoiser(tdio.load_volume(text.split(":", 1)[1])), None
    if text.startswith("external:"):
        command = shlex.split(text.split(":", 1)[1])
        shape = (_require_depth(depth), det_shape[0], det_shape[1])
        session = open_external_session(command, shape, timeout_s=args.timeout)
        return ExternalDenoiser(session), session
    raise ValidationError(
        f"unknown denoiser {text!r}; expected zero, smoothing[:sigma], "
        "oracle:<path>, or external:<command>"
    )


# --------------------------------------------------------------------------
# subcommand implementations


def _cmd_phantom(args) -> int:
    spec = PhantomSpec(
        dims=args.dims,
        n_shells=args.shells,
        n_blobs=args.blobs,
        seed=args.seed,
    )
    vol = generate_phantom(spec)
    tdio.save_volume(vol, args.out, meta={"seed": str(args.seed)})
    return 0


def _cmd_simulate(args) -> int:
    vol = tdio.load_volume(args.input)
    spec = AngleSpec(range_deg=args.range, step_deg=args.step, center_deg=args.center)
    params = ContrastParams(
        c=args.contrast_c, gamma=args.gamma, k=args.k, noise_sigma=args.noise_sigma
    )
    tilts = synthesize_haadf(vol, spec, params, seed=args.seed)
    tdio.save_tilts(
        tilts, args.out, meta={"source_depth": str(vol.depth), "seed": str(args.seed)}
    )
    return 0


def _cmd_reconstruct(args) -> int:
    tilts = tdio.load_tilts(args.input)
    depth = _resolve_depth(args, args.input)
    session = None
    try:
        if args.method == "fbp":
            out = fbp(tilts, _require_depth(depth), filter=args.filter)
        elif args.method == "sart":
            out = sart(
                tilts,
                _require_depth(depth),
                iters=args.iters,
                lam=args.lam,
                on_step=lambda k, r: _progress(k, r),
            )
        else:
            if args.denoiser is None:
                raise ValidationError("--method diffusion requires --denoiser")
            denoiser, session = _make_denoiser(
                args, depth, (tilts.det_height, tilts.det_width)
            )
            cfg = GuidanceConfig(
                cfg_scale=args.cfg_scale,
                projector=ProjectorConfig(n_steps=args.proj_steps, lam=args.lam),
                schedule=make_schedule(args.steps, args.schedule),
                seed=args.seed,
            )
            u = None if args.uncertainty == "auto" else args.uncertainty
            out = guided_sample(
                tilts, denoiser, cfg, depth=depth, u=u, on_step=_progress
            )
    finally:
        if session is not None:
            session.close()
    tdio.save_volume(out, args.out, meta={"method": args.method, "seed": str(args.seed)})
    return 0


def _cmd_uncertainty(args) -> int:
    tilts = tdio.load_tilts(args.input)
    depth = _require_depth(_resolve_depth(args, args.input))
    umap = compute_uncertainty(tilts, depth)
    tdio.save_volume(Volume(umap.data), args.out, meta={"kind": "uncertainty"})
    return 0


def _cmd_evaluate(args) -> int:
    recon = tdio.load_volume(args.recon)
    reference = tdio.load_volume(args.reference)
    report = evaluate(recon, reference, align=not args.no_align)
    sys.stdout.write(report.to_text())
    if args.record is not None:
        with Path(args.record).open("a", encoding="utf-8") as f:
            f.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
    return 0


def _cmd_export(args) -> int:
    vol = tdio.load_volume(args.input)
    paths = tdio.export_slices(vol, args.axis, args.prefix, normalize=args.normalize)
    print(f"wrote {len(paths)} slices", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# parser assembly


def _build_parser(config: dict[str, str]) -> _Parser:
    parser = _Parser(prog="tomodiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> _ArgHelper:
        helper = _ArgHelper(p, config)
        helper.add("--config", type=str, default=None, help="key=value defaults file")
        helper.add("--threads", type=int, default=1, help="parallelism cap (kernels are single-threaded)")
        return helper

    p = sub.add_parser("phantom", help="generate a seeded synthetic volume")
    h = common(p)
    h.add("--dims", type=_parse_dims, required=True, help="HxWxD, e.g. 128x128x40")
    h.add("--seed", type=int, default=0)
    h.add("--shells", type=_parse_range_pair, default=(1, 2), help="shell count range lo,hi")
    h.add("--blobs", type=_parse_range_pair, default=(2, 6), help="blob count range lo,hi")
    h.add("-o", "--out", type=Path, required=True)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("simulate", help="project a volume to a synthetic tilt series")
    h = common(p)
    h.add("-i", "--input", type=Path, required=True, help="TDVOL1 density volume")
    h.add("--range", type=float, required=True, help="total angular span, degrees")
    h.add("--step", type=float, required=True, help="angular increment, degrees")
    h.add("--center", type=float, default=0.0)
    h.add("--contrast-c", type=float, default=0.02, help="attenuation constant")
    h.add("--gamma", type=float, default=0.8, help="density exponent")
    h.add("--k", type=float, default=1.0, help="intensity scale")
    h.add("--noise-sigma", type=float, default=0.0)
    h.add("--seed", type=int, default=0)
    h.add("-o", "--out", type=Path, required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct a volume from a tilt series")
    h = common(p)
    h.add("-i", "--input", type=Path, required=True, help="TDTLT1 tilt series")
    h.add("--method", choices=("fbp", "sart", "diffusion"), required=True)
    h.add("--depth", type=int, default=None, help="slices in the output (defaults to the tilt file's source_depth)")
    h.add("--filter", choices=FILTERS, default="ramp", help="fbp filter")
    h.add("--iters", type=int, default=50, help="sart iterations")
    h.add("--lambda", dest="lam", type=float, default=None, help="gradient step size (default 1/L)")
    h.add("--denoiser", type=str, default=None,
          help="zero | smoothing[:sigma] | oracle:<path> | external:<command> "
               "(required for --method diffusion)")
    h.add("--smoothing-sigma", type=float, default=1.0)
    h.add("--steps", type=int, default=50, help="denoising updates")
    h.add("--cfg-scale", type=float, default=1.5, help="guidance scale")
    h.add("--proj-steps", type=int, default=5, help="projector iterations per update")
    h.add("--schedule", choices=("cosine", "linear"), default="cosine")
    h.add("--uncertainty", type=_parse_uncertainty, default="auto",
          help="'auto' or a constant weight in [0,1]")
    h.add("--timeout", type=float, default=60.0, help="external denoiser timeout, seconds")
    h.add("--seed", type=int, default=0)
    h.add("-o", "--out", type=Path, required=True)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("uncertainty", help="cross-tilt disagreement map")
    h = common(p)
    h.add("-i", "--input", type=Path, required=True)
    h.add("--depth", type=int, default=None)
    h.add("-o", "--out", type=Path, required=True)
    p.set_defaults(func=_cmd_uncertainty)

    p = sub.add_parser("evaluate", help="compare a reconstruction against a reference")
    h = common(p)
    p.add_argument("recon", type=Path)
    p.add_argument("reference", type=Path)
    h.add("--no-align", action="store_true", help="skip quartile alignment")
    h.add("--record", type=Path, default=None, help="append a JSON record here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export", help="write slices as 8-bit PNGs")
    h = common(p)
    h.add("-i", "--input", type=Path, required=True)
    h.add("--axis", type=int, required=True, help="0=depth, 1=height, 2=width")
    h.add("--prefix", type=Path, required=True)
    h.add("--normalize", choices=("global", "per_slice"), default="global")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _load_config(argv)
        parser = _build_parser(config)
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ValidationError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except DenoiserError as exc:
        if isinstance(exc.__cause__, ProtocolError):
            print(f"protocol error: {exc}", file=sys.stderr)
            return 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, SamplingError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
