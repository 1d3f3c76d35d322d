"""Command-line interface: fit, render, stylize, flow, serve.

Exit codes: 0 on success, 2 on configuration or usage errors, 1 on
runtime failures. Every command accepts --seed; fixed seeds make runs
bit-reproducible end to end.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from brushfit import io, losses, optim, renderer
from brushfit.errors import ConfigError


def _load_config(args) -> optim.FitConfig:
    if getattr(args, "config", None):
        cfg, _ = io.load_config(args.config)
    else:
        cfg = optim.FitConfig()
    return io.config_with_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        stroke_steps=getattr(args, "steps", None),
        n_strokes=getattr(args, "strokes", None),
        init_method=getattr(args, "init", None),
    )


def _config_declares_loss(args) -> bool:
    if not getattr(args, "config", None):
        return False
    _, doc = io.load_config(args.config)
    return "loss" in doc


def _make_sink(args):
    preview_dir = getattr(args, "preview_dir", None)
    if preview_dir is None:
        return None
    out = Path(preview_dir)
    out.mkdir(parents=True, exist_ok=True)

    def sink(event):
        if event.preview is not None:
            io.save_image(event.preview,
                          out / f"{event.phase}_{event.step:05d}.png")

    return sink


def _write_outputs(args, job, strokes, canvas):
    if getattr(args, "out", None):
        path = Path(args.out)
        if path.suffix == ".json":
            io.save_strokes(strokes, path)
        else:
            io.save_image(canvas, path)
    if getattr(args, "strokes_out", None):
        io.save_strokes(strokes, args.strokes_out)
    if getattr(args, "preview", None):
        io.save_image(canvas, args.preview)
    if getattr(args, "history", None):
        Path(args.history).write_text(
            json.dumps(job.loss_history, indent=1) + "\n")


def _control_paths(args):
    """Load --paths into ControlPath objects; honors --L consistency."""
    paths_file = getattr(args, "paths", None)
    l_flag = getattr(args, "l_range", None)
    if paths_file is None:
        if l_flag is not None:
            raise ConfigError("--L given but no --paths file")
        return None, None
    polylines, l_doc = io.load_paths(paths_file)
    paths = tuple(losses.ControlPath(p) for p in polylines)
    return paths, (l_flag if l_flag is not None else l_doc)


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    content = io.load_image(args.content)
    job = optim.prepare_job(content, None, cfg)
    strokes, canvas = optim.fit_image(content, None, cfg,
                                      progress_sink=_make_sink(args), job=job)
    _write_outputs(args, job, strokes, canvas)
    return 0


def cmd_render(args) -> int:
    strokes = io.load_strokes(args.strokes)
    params = renderer.RenderParams()
    if getattr(args, "config", None):
        cfg, _ = io.load_config(args.config)
        params = cfg.render
    canvas = renderer.render(strokes, params)
    io.save_image(canvas, args.out)
    return 0


def cmd_stylize(args) -> int:
    cfg = _load_config(args)
    if not _config_declares_loss(args):
        cfg = dataclasses.replace(
            cfg, loss=losses.LossSpec(style=1.0, content=1.0, tv=1e-4))
    paths, l_value = _control_paths(args)
    if paths is not None:
        cfg = dataclasses.replace(cfg, loss=cfg.loss.with_paths(paths, l_value))
    content = io.load_image(args.content)
    style = io.load_image(args.style)
    job = optim.prepare_job(content, style, cfg)
    strokes, canvas = optim.fit_image(content, style, cfg,
                                      progress_sink=_make_sink(args), job=job)
    _write_outputs(args, job, strokes, canvas)
    return 0


def cmd_flow(args) -> int:
    cfg = _load_config(args)
    paths, l_value = _control_paths(args)
    if paths is None:
        raise ConfigError("flow requires --paths")
    if not _config_declares_loss(args):
        cfg = dataclasses.replace(cfg, loss=losses.LossSpec(mse=1.0))
    cfg = dataclasses.replace(cfg, loss=cfg.loss.with_paths(paths, l_value))
    content = io.load_image(args.content)
    job = optim.prepare_job(content, None, cfg)
    strokes, canvas = optim.fit_image(content, None, cfg,
                                      progress_sink=_make_sink(args), job=job)
    _write_outputs(args, job, strokes, canvas)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from brushfit import service

    ui_dir = args.ui if args.ui else None
    app = service.create_app(max_jobs=args.max_jobs,
                             artifacts_dir=args.artifacts_dir, ui_dir=ui_dir,
                             default_seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brushfit",
        description="Fit parameterized brushstrokes to images by gradient descent")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the RNG seed (reproducible runs)")
        p.add_argument("--config", help="JSON run configuration")

    p = sub.add_parser("fit", help="reconstruct an image with brushstrokes")
    common(p)
    p.add_argument("--content", required=True, help="target image (PNG/PPM)")
    p.add_argument("--out", help="output strokes.json")
    p.add_argument("--preview", help="final rendering PNG")
    p.add_argument("--history", help="per-step loss history JSON")
    p.add_argument("--preview-dir", help="directory for cadence previews")
    p.add_argument("--steps", type=int, help="stroke optimization steps")
    p.add_argument("--strokes", type=int, help="number of brushstrokes")
    p.add_argument("--init", choices=("slic", "random"), help="initializer")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="rasterize a saved stroke set")
    common(p)
    p.add_argument("--strokes", required=True, help="strokes.json document")
    p.add_argument("--out", required=True, help="output image (PNG/PPM)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stylize", help="two-stage stylization of an image")
    common(p)
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--out", required=True, help="stylized PNG")
    p.add_argument("--strokes-out", dest="strokes_out", help="save strokes.json")
    p.add_argument("--history", help="per-step loss history JSON")
    p.add_argument("--preview-dir", help="directory for cadence previews")
    p.add_argument("--paths", help="control-path polylines JSON")
    p.add_argument("--L", dest="l_range", type=int,
                   help="strokes steered per tangent point")
    p.add_argument("--steps", type=int, help="stroke optimization steps")
    p.add_argument("--strokes", type=int, help="number of brushstrokes")
    p.add_argument("--init", choices=("slic", "random"), help="initializer")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("flow", help="fit with user-drawn flow control")
    common(p)
    p.add_argument("--content", required=True)
    p.add_argument("--paths", required=True, help="polylines JSON")
    p.add_argument("--L", dest="l_range", type=int,
                   help="strokes steered per tangent point")
    p.add_argument("--out", help="output strokes.json")
    p.add_argument("--preview", help="final rendering PNG")
    p.add_argument("--history", help="per-step loss history JSON")
    p.add_argument("--preview-dir", help="directory for cadence previews")
    p.add_argument("--steps", type=int, help="stroke optimization steps")
    p.add_argument("--strokes", type=int, help="number of brushstrokes")
    p.add_argument("--init", choices=("slic", "random"), help="initializer")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("serve", help="run the HTTP job service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--max-jobs", type=int, default=2,
                   help="maximum concurrently running jobs")
    p.add_argument("--artifacts-dir", help="persist finished jobs here")
    p.add_argument("--ui", help="static directory with the web UI")
    p.add_argument("--seed", type=int, default=None,
                   help="default seed for job configs that omit one")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"brushfit: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"brushfit: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
