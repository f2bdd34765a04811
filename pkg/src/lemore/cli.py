"""Command-line entry point: analyze, train, infer, gradcheck, ablate.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 verification
failure (gradcheck or ablate found a violation). Diagnostics go to stderr as
a single line.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .analysis import ablation_ladder, count_costs, render_ladder
from .errors import ConfigError, LemoreError
from .gradcheck import sweep_registry
from .io_formats import (default_palette, load_weights, read_ppm, save_weights,
                         write_color_ppm, write_label_pgm)
from .model import ModelConfig, build
from .tensor import Tensor, _interp_matrix
from .training import TrainState, make_dataset, train_loop

GRAD_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _parse_override(text: str) -> Tuple[str, object]:
    if "=" not in text:
        raise _UsageError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    if key not in ModelConfig.FIELDS:
        raise _UsageError(f"override references unknown config field {key!r}")
    if "x" in raw and key in ("input_size", "token_grid"):
        parts = raw.split("x")
        if len(parts) == 2 and all(p.isdigit() for p in parts):
            return key, [int(parts[0]), int(parts[1])]
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        items = raw.split(",")
        if all(i.lstrip("-").isdigit() for i in items):
            return key, [int(i) for i in items]
        return key, items
    if raw in ("true", "false"):
        return key, raw == "true"
    if raw.lstrip("-").isdigit():
        return key, int(raw)
    return key, raw


def _load_config(path: Optional[str], overrides: Sequence[str]) -> ModelConfig:
    if path is None:
        cfg = ModelConfig()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = ModelConfig.from_json(fh.read())
    pairs = dict(_parse_override(o) for o in overrides)
    if pairs:
        cfg = cfg.with_overrides(**pairs)
    return cfg


def _parse_resolution(text: str) -> Tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise _UsageError(f"resolution must look like 512x512, got {text!r}")
    return int(parts[0]), int(parts[1])


def _resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # bilinear in both directions; only the CLI resizes, never the core
    _, h, w = img.shape
    my = _interp_matrix(h, out_h)
    mx = _interp_matrix(w, out_w)
    t1 = np.tensordot(my, img, axes=(1, 1))
    return np.tensordot(t1, mx, axes=(2, 1)).transpose(1, 0, 2)


def _resize_labels_nearest(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = labels.shape
    yi = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    xi = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return labels[yi][:, xi]


# ---------------------------------------------------------------------------
# subcommands

def _cmd_analyze(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    if args.resolution:
        res = _parse_resolution(args.resolution)
        if res != tuple(cfg.input_size):
            cfg = cfg.with_overrides(input_size=list(res))
    report = count_costs(build(cfg))
    print(report.render_text())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    seed = args.seed if args.seed is not None else cfg.seed
    model = build(cfg)
    scenes = make_dataset(args.scenes, cfg.input_size[0], seed=seed)
    state = TrainState(model, base_lr=args.lr, weight_decay=args.weight_decay,
                       max_steps=args.steps)
    metrics_fh = open(args.metrics, "w", encoding="utf-8") if args.metrics else None
    try:
        final = train_loop(state, scenes, steps=args.steps,
                           batch_size=args.batch_size, seed=seed,
                           eval_every=args.eval_every, eval_mode=args.eval_mode,
                           metrics_out=metrics_fh, verbose=not args.quiet)
    finally:
        if metrics_fh:
            metrics_fh.close()
    save_weights(model, args.weights)
    print(f"finished {state.step} steps, final miou {final:.4f}, "
          f"weights -> {args.weights}")
    return 0


def _cmd_infer(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    model = build(cfg)
    load_weights(model, args.weights)
    img = read_ppm(args.input)
    orig_h, orig_w = img.shape[1], img.shape[2]
    h, w = cfg.input_size
    data = img.data
    if (orig_h, orig_w) != (h, w):
        data = _resize_image(data, h, w)
    logits = model.forward(Tensor(data), "eval")
    labels = logits.data.argmax(axis=0)
    if (orig_h, orig_w) != (h, w):
        labels = _resize_labels_nearest(labels, orig_h, orig_w)
    write_label_pgm(labels, args.output_pgm)
    if args.output_ppm:
        write_color_ppm(labels, default_palette(cfg.num_classes), args.output_ppm)
    print(f"wrote {args.output_pgm}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = sweep_registry(seed=args.seed)
    worst_name, worst = max(results, key=lambda r: r[1])
    for name, err in results:
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        print(f"{name:<24} {err:12.3e}  {status}")
    print(f"worst: {worst_name} {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    if worst >= GRAD_TOLERANCE:
        print("gradient check failed", file=sys.stderr)
        return 3
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    rows = ablation_ladder(cfg)
    print(render_ladder(rows))
    params = [r.params for r in rows]
    if all(b > a for a, b in zip(params, params[1:])):
        print("parameter ladder strictly increasing")
        return 0
    print("parameter ladder is not strictly increasing", file=sys.stderr)
    return 3


def _build_parser() -> _Parser:
    parser = _Parser(prog="lemore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="model config JSON (defaults built in)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides, e.g. token_grid=8x8")

    p = sub.add_parser("analyze", help="parameter and MAC/FLOP report")
    common(p)
    p.add_argument("--resolution", help="probe resolution, e.g. 512x512")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("train", help="train on synthetic scenes")
    common(p)
    p.add_argument("--weights", required=True, help="output checkpoint path")
    p.add_argument("--metrics", help="output JSON-lines metrics path")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--scenes", type=int, default=64)
    p.add_argument("--lr", type=float, default=1.2e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--eval-mode", choices=("train", "eval"), default="train",
                   help="statistics used for the train-set mIoU metric")
    p.add_argument("--seed", type=int, default=None,
                   help="defaults to the config seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="segment a PPM image")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True, help="P6 image")
    p.add_argument("--output-pgm", required=True, help="label map output")
    p.add_argument("--output-ppm", help="colorized overlay output")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference sweep of all ops")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="toggle ladder of the eight variants")
    common(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (LemoreError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
