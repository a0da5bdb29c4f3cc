# Copyright 2023 The pattern-attention Authors - All Rights Reserved
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


import sys
import json
import time
import logging
import argparse
import numpy as np
import pandas as pd
from pattern_attention import __version__
from pattern_attention.errors import (
    PatternAttentionError, LayoutValidationError, CheckpointError)
from pattern_attention.pattern import (
    plan_octagon_pattern, plan_square_pattern, write_layout, read_layout, render_layout,
    layout_summary)
from pattern_attention.tensorcore import Tensor
from pattern_attention.attention import (
    AttentionLayerParams, BIAS_MODES, pattern_attention_forward, gather_plan, flop_count,
    flop_breakdown, check_qkva, dump_bias, bias_csv)
from pattern_attention.model import Network, preset, load_config, count_params, PRESETS
from pattern_attention.training import gradcheck, train, load_checkpoint

logger = logging.getLogger("pattern_attention")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3

QKVA_TOL = 1e-12

def _phase(value):
    try:
        row, col = (int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("phase must look like ROW,COL, got {0!r}".format(value))
    return (row, col)

def _positive(value):
    try:
        number = int(value)
    except ValueError:
        number = 0
    if number < 1:
        raise argparse.ArgumentTypeError("expected a positive integer, got {0!r}".format(value))
    return number

def _on_off(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off, got {0!r}".format(value))
    return value == "on"

def _emit(args, report, text=None):
    """
    Prints a report: one JSON document with --json, otherwise `text`.
    """
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True, default=_jsonable))
    elif text is not None:
        print(text)

def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError("not JSON serializable: {0!r}".format(value))

def _resolve_config(args):
    if args.preset:
        return preset(args.preset)
    return load_config(args.config)

# ----- pattern -----

def pattern_gen(args):
    if args.kernel == "octagon":
        layout = plan_octagon_pattern(args.height, args.width, args.phase)
    else:
        layout = plan_square_pattern(args.height, args.width, args.core_side, args.sensor_radius)
    write_layout(layout, args.out)
    summary = layout_summary(layout)
    summary["out"] = args.out
    _emit(args, summary, "wrote {0}: {1}x{2}, {3} instances, {4} shape classes".format(
        args.out, layout.height, layout.width, summary["instances"], summary["shape_classes"]))
    return EXIT_OK

def pattern_validate(args):
    layout = read_layout(args.input)
    summary = layout_summary(layout)
    summary["ok"] = True
    _emit(args, summary, "{0}: ok ({1} instances, {2} shape classes, {3} cells)".format(
        args.input, summary["instances"], summary["shape_classes"], summary["core_cells"]))
    return EXIT_OK

def pattern_render(args):
    layout = read_layout(args.input)
    data = render_layout(layout, args.cell_px)
    with open(args.out, "wb") as f:
        f.write(data)
    report = {"out": args.out, "width_px": layout.width * args.cell_px,
              "height_px": layout.height * args.cell_px, "bytes": len(data)}
    _emit(args, report, "wrote {0} ({1}x{2} pixels)".format(
        args.out, report["width_px"], report["height_px"]))
    return EXIT_OK

# ----- checks -----

def oracle_qkva(args):
    report = check_qkva(args.h, args.w, args.trials, seed=args.seed)
    report["tol"] = args.tol
    report["passed"] = report["max_relative_error"] <= args.tol
    _emit(args, report, "qkva {0}x{1}, {2} trials: max relative error {3:.3e} ({4})".format(
        args.h, args.w, args.trials, report["max_relative_error"],
        "ok" if report["passed"] else "FAILED"))
    return EXIT_OK if report["passed"] else EXIT_FAILURE

def run_gradcheck(args):
    config = _resolve_config(args)
    frozen = tuple(args.freeze.split(",")) if args.freeze else ()
    report = gradcheck(config, seed=args.seed, tol=args.tol, coords=args.coords, frozen=frozen)
    _emit(args, report.to_dict(), "{0}\n{1}: max relative error {2:.3e} (tol {3})".format(
        report.to_frame().to_string(), "passed" if report.passed else "FAILED",
        report.max_rel_error, args.tol))
    return EXIT_OK if report.passed else EXIT_FAILURE

def bench(args):
    layout = read_layout(args.layout)
    rng = np.random.default_rng(args.seed)
    bias_mode = None if args.bias_mode == "none" else args.bias_mode
    params = AttentionLayerParams.create(
        args.channels, args.heads, rng, shapes=layout.shapes.values(), bias_mode=bias_mode,
        num_instances=len(layout.instances), precision=32)
    x = Tensor(rng.standard_normal((args.batch, layout.num_cells, args.channels)), precision=32)
    plans = gather_plan(layout)

    times = []
    for _ in range(args.iters):
        started = time.perf_counter()
        pattern_attention_forward(x, layout, params, winnow=args.winnow, threads=args.threads,
                                  plans=plans)
        times.append(time.perf_counter() - started)

    flops = flop_count(layout, args.channels, args.heads, winnow=args.winnow)
    breakdown = flop_breakdown(layout, args.channels, args.heads)
    dominant = layout.dominant_shape_id()
    report = {
        "layout": args.layout,
        "channels": args.channels,
        "heads": args.heads,
        "winnow": args.winnow,
        "batch": args.batch,
        "threads": args.threads,
        "iters": args.iters,
        "madds": dict(flops),
        "dominant_p_stage_ratio": float(breakdown.loc[dominant, "p_stage_ratio"]),
        "classes": breakdown.reset_index().to_dict(orient="records"),
        "wall_time_s": {"mean": float(np.mean(times)) if times else 0.0,
                        "min": float(np.min(times)) if times else 0.0},
    }
    text = "{0}\n\n{1}\ndominant class P-stage ratio winnow/full: {2}\nwall time per forward: {3:.4f}s".format(
        pd.Series(flops).to_string(), breakdown.to_string(), report["dominant_p_stage_ratio"],
        report["wall_time_s"]["mean"])
    _emit(args, report, text)
    return EXIT_OK

def run_count_params(args):
    config = _resolve_config(args)
    counts = count_params(config)
    table = pd.Series(dict(counts["by_group"], total=counts["total"]))
    _emit(args, counts, "{0}\n({1:.2f}M parameters)".format(table.to_string(), counts["total"] / 1e6))
    return EXIT_OK

def run_train(args):
    config = _resolve_config(args)
    result = train(config, args.steps, seed=args.seed, out_dir=args.out, resume=args.resume,
                   threads=args.threads)
    last = result.metrics.iloc[-1] if len(result.metrics) else None
    report = {
        "out": args.out,
        "steps": args.steps,
        "final_loss": float(last["loss"]) if last is not None else None,
        "final_batch_accuracy": float(last["accuracy"]) if last is not None else None,
        "evaluation": result.evaluation,
    }
    _emit(args, report, "trained {0} steps: eval accuracy {1:.3f}, eval loss {2:.4f}; outputs in {3}".format(
        args.steps, result.evaluation["accuracy"], result.evaluation["loss"], args.out))
    return EXIT_OK

def run_dump_bias(args):
    checkpoint = load_checkpoint(args.checkpoint)
    network = Network(checkpoint.config)
    stage, params = network.layer(checkpoint.params, args.layer)
    layout = stage.layout if stage.kind == "pattern" else None
    frame = dump_bias(params, args.head, shape_id=args.shape, layout=layout)
    if args.out:
        bias_csv(frame, args.out)
    report = {"layer": args.layer, "head": args.head, "stage": stage.index,
              "rows": frame.shape[0], "columns": frame.shape[1], "out": args.out}
    if args.json:
        if not args.out:
            report["values"] = frame.values.tolist()
        _emit(args, report)
    elif args.out:
        print("wrote {0} ({1}x{2})".format(args.out, frame.shape[0], frame.shape[1]))
    else:
        sys.stdout.write(bias_csv(frame))
    return EXIT_OK

# ----- parser -----

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the report as one JSON document")
    common.add_argument("-v", "--verbose", action="store_true", help="log debug messages to stderr")

    def config_args(parser):
        group = parser.add_mutually_exclusive_group(required=True)
        group.add_argument("--config", metavar="FILE", help="model config JSON file")
        group.add_argument("--preset", choices=list(PRESETS), help="built-in model config")

    parser = argparse.ArgumentParser(
        prog="pattern-attention",
        description="Pattern attention with doughnut kernels: layouts, checks, counting and training.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    pattern = commands.add_parser("pattern", help="plan, validate and render kernel layouts")
    pattern_commands = pattern.add_subparsers(dest="pattern_command", metavar="ACTION")
    pattern_commands.required = True

    gen = pattern_commands.add_parser("gen", parents=[common], help="plan a layout and write it as JSON")
    gen.add_argument("--height", type=int, required=True, help="grid rows")
    gen.add_argument("--width", type=int, required=True, help="grid columns")
    gen.add_argument("--kernel", choices=["octagon", "square"], default="octagon",
                     help="kernel shape (default octagon)")
    gen.add_argument("--core-side", type=int, default=4, help="square core side (default 4)")
    gen.add_argument("--sensor-radius", type=int, default=1,
                     help="square sensor ring width (default 1)")
    gen.add_argument("--phase", type=_phase, default=(0, 0), metavar="ROW,COL",
                     help="octagon lattice offset (default 0,0)")
    gen.add_argument("--out", metavar="FILE", required=True, help="layout JSON to write")
    gen.set_defaults(func=pattern_gen)

    validate = pattern_commands.add_parser("validate", parents=[common], help="validate a layout file")
    validate.add_argument("--in", dest="input", metavar="FILE", required=True, help="layout JSON")
    validate.set_defaults(func=pattern_validate)

    render = pattern_commands.add_parser("render", parents=[common], help="render a layout as PPM")
    render.add_argument("--in", dest="input", metavar="FILE", required=True, help="layout JSON")
    render.add_argument("--cell-px", type=_positive, default=8, help="pixels per cell (default 8)")
    render.add_argument("--out", metavar="FILE", required=True, help="PPM file to write")
    render.set_defaults(func=pattern_render)

    oracle = commands.add_parser("oracle", help="brute-force oracles")
    oracle_commands = oracle.add_subparsers(dest="oracle_command", metavar="ORACLE")
    oracle_commands.required = True
    qkva = oracle_commands.add_parser(
        "qkva", parents=[common], help="compare the four-index QKV sum with (QK^T)V")
    qkva.add_argument("--h", type=_positive, required=True, help="rows")
    qkva.add_argument("--w", type=_positive, required=True, help="columns")
    qkva.add_argument("--trials", type=_positive, default=100, help="random trials (default 100)")
    qkva.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    qkva.add_argument("--tol", type=float, default=QKVA_TOL, help="max relative error (default 1e-12)")
    qkva.set_defaults(func=oracle_qkva)

    check = commands.add_parser("gradcheck", parents=[common],
                                help="finite-difference audit of model gradients")
    config_args(check)
    check.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")
    check.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    check.add_argument("--coords", type=_positive, default=200, help="coordinates to check (default 200)")
    check.add_argument("--freeze", metavar="GROUPS", help="comma-separated parameter groups to skip")
    check.set_defaults(func=run_gradcheck)

    bench_parser = commands.add_parser("bench", parents=[common],
                                       help="multiply-adds and wall time of one attention layer")
    bench_parser.add_argument("--layout", metavar="FILE", required=True, help="layout JSON")
    bench_parser.add_argument("--channels", type=_positive, default=96, help="channels C (default 96)")
    bench_parser.add_argument("--heads", type=_positive, default=3, help="attention heads (default 3)")
    bench_parser.add_argument("--winnow", type=_on_off, default=True, metavar="on|off",
                              help="compute only core query rows (default on)")
    bench_parser.add_argument("--iters", type=_positive, default=3, help="timed forwards (default 3)")
    bench_parser.add_argument("--batch", type=_positive, default=1, help="batch size (default 1)")
    bench_parser.add_argument("--bias-mode", choices=list(BIAS_MODES) + ["none"], default="absolute",
                              help="kernel bias mode (default absolute)")
    bench_parser.add_argument("--threads", type=_positive, default=1, help="worker threads (default 1)")
    bench_parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    bench_parser.set_defaults(func=bench)

    count = commands.add_parser("count-params", parents=[common], help="count model parameters")
    config_args(count)
    count.set_defaults(func=run_count_params)

    train_parser = commands.add_parser("train", parents=[common], help="train on synthetic data")
    config_args(train_parser)
    train_parser.add_argument("--steps", type=_positive, required=True, help="optimizer steps")
    train_parser.add_argument("--seed", type=int, default=None, help="random seed (default: config seed)")
    train_parser.add_argument("--out", metavar="DIR", required=True,
                              help="directory for metrics.csv, checkpoint.patc and config.json")
    train_parser.add_argument("--resume", metavar="FILE", help="checkpoint to continue from")
    train_parser.add_argument("--threads", type=_positive, default=1, help="worker threads (default 1)")
    train_parser.set_defaults(func=run_train)

    dump = commands.add_parser("dump-bias", parents=[common], help="write one head's kernel bias as CSV")
    dump.add_argument("--checkpoint", metavar="FILE", required=True, help="checkpoint file")
    dump.add_argument("--layer", type=int, required=True, help="0-based attention layer index")
    dump.add_argument("--head", type=int, required=True, help="0-based head index")
    dump.add_argument("--shape", metavar="ID", help="shape class (default: the most common one)")
    dump.add_argument("--out", metavar="FILE", help="CSV file to write (default: stdout)")
    dump.set_defaults(func=run_dump_bias)

    return parser

def _configure_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.handlers = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False

def main(argv=None):
    """
    Runs the command line and returns the exit code: 0 ok, 1 validation or
    check failure, 2 usage error, 3 I/O error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    _configure_logging(getattr(args, "verbose", False))
    try:
        return args.func(args)
    except LayoutValidationError as e:
        if args.json:
            _emit(args, {"ok": False, "error": str(e), "report": e.report.to_dict()})
        else:
            sys.stderr.write("validation failed: {0}\n".format(e.report.summary()))
            for v in e.report.violations[:50]:
                sys.stderr.write("  {0} cell={1} instance={2}: {3}\n".format(
                    v.kind, v.cell, v.instance, v.detail))
        return EXIT_FAILURE
    except (OSError, CheckpointError) as e:
        sys.stderr.write("error: {0}\n".format(e))
        return EXIT_IO
    except PatternAttentionError as e:
        sys.stderr.write("error: {0}\n".format(e))
        return EXIT_FAILURE
