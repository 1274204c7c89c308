"""Command-line front end: build/calibrate models, run inference, report costs.

Every command is a pure function of its flags and seeds and writes diffable
key=value reports (plus a JSON twin) atomically. Exit codes: 0 success,
2 usage error, 3 unreadable or ill-formed manifest/blob, 4 shape mismatch,
5 unknown policy source, 6 bound violation in verify, 1 anything else.

Seed precedence: an explicit --seed flag wins; otherwise the NESTQ_SEED
environment variable; otherwise the command's built-in default.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import blobio
from .analysis import empirical_verify
from .blobio import ManifestError
from .calibration import DEFAULT_EMA_MOMENTUM, _tensor_params, calibrate
from .controller import (
    ControllerSpec,
    controller_forward,
    range_heuristic_policy,
    select_argmax,
)
from .cost import cost_report
from .layers import BitPolicy, ShapeMismatchError, forward
from .models import build_toy_cnn, build_toy_mlp, make_blob_dataset
from .quantize import NestedTensor, quantize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MANIFEST = 3
EXIT_SHAPE = 4
EXIT_POLICY_SOURCE = 5
EXIT_BOUND_VIOLATION = 6

SEED_ENV_VAR = "NESTQ_SEED"
VERIFY_SUITES = ("bounds", "add", "mul", "dot", "shift")


class PolicySourceError(ValueError):
    """The --policy string names no known policy source."""


class BoundViolationError(RuntimeError):
    """A verification suite observed an error above its analytic bound."""


def resolve_seed(flag_value: int | None, default: int) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(
                f"{SEED_ENV_VAR}={env!r} is not an integer") from exc
    return default


def parse_policy(text: str, model, x=None, seed: int = 0):
    """Turn a policy-source string into a BitPolicy.

    Forms: ``static:N`` (uniform), ``fixed:8,4,8`` (explicit list),
    ``heuristic:4,5,6`` (range heuristic over a candidate set),
    ``controller:4,5,6`` (seeded controller, argmax per input),
    ``controller-file:PATH`` (stored controller weights).
    """
    kind, _, arg = text.partition(":")
    length = model.num_policy_layers
    if kind == "static":
        try:
            b = int(arg)
        except ValueError as exc:
            raise PolicySourceError(f"static policy needs an integer, got {arg!r}") from exc
        return BitPolicy.uniform(b, length)
    if kind == "fixed":
        try:
            bits = tuple(int(v) for v in arg.split(","))
        except ValueError as exc:
            raise PolicySourceError(f"bad fixed policy {arg!r}") from exc
        if len(bits) != length:
            raise ShapeMismatchError(
                f"fixed policy has {len(bits)} entries, model has {length} MAC layers")
        return BitPolicy(bits=bits, candidates=tuple(sorted(set(bits))))
    if kind == "heuristic":
        cands = _parse_candidates(arg)
        return range_heuristic_policy(model, cands)
    if kind == "controller":
        cands = _parse_candidates(arg)
        spec = ControllerSpec(num_layers=length, candidates=cands, seed=seed)
        logits = controller_forward(spec, np.zeros(model.input_shape) if x is None else x)
        return select_argmax(logits, cands)
    if kind == "controller-file":
        spec = blobio.load_controller(Path(arg))
        if spec.num_layers != length:
            raise ShapeMismatchError(
                f"controller covers {spec.num_layers} layers, model has {length}")
        logits = controller_forward(spec, np.zeros(model.input_shape) if x is None else x)
        return select_argmax(logits, spec.candidates)
    raise PolicySourceError(f"unknown policy source {kind!r}")


def _parse_candidates(arg: str) -> tuple[int, ...]:
    if not arg:
        return (4, 5, 6)
    try:
        return tuple(sorted({int(v) for v in arg.split(",")}))
    except ValueError as exc:
        raise PolicySourceError(f"bad candidate set {arg!r}") from exc


def _build_toy(arch: str, n: int, seed: int):
    if arch == "mlp":
        return build_toy_mlp(seed=seed, n=n)
    if arch == "cnn":
        return build_toy_cnn(seed=seed, n=n)
    raise PolicySourceError(f"unknown toy architecture {arch!r}")


def cmd_quantize(args) -> int:
    seed = resolve_seed(args.seed, 7)
    model = _build_toy(args.arch, args.bits, seed)
    n = model.master_bitwidth
    for layer in model.layers:
        if layer.has_weights:
            layer.weight_params, _ = _tensor_params(layer.weight, n)
            layer.weight_q = NestedTensor(
                data=quantize(layer.weight, layer.weight_params),
                params=layer.weight_params)
            if layer.bias is not None:
                layer.bias_params, _ = _tensor_params(layer.bias, n)
                layer.bias_q = NestedTensor(
                    data=quantize(layer.bias, layer.bias_params),
                    params=layer.bias_params)
    path = blobio.save_model(model, Path(args.out), provenance={
        "seed": seed, "command": f"quantize --arch {args.arch} --bits {args.bits}"})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    model = blobio.load_model(Path(args.model))
    data = blobio.read_blob(Path(args.data)).astype(np.float64)
    if data.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"data samples shaped {data.shape[1:]}, model expects {model.input_shape}")
    batches = [data[i:i + args.batch_size] for i in range(0, len(data), args.batch_size)]
    calibrate(model, batches, momentum=args.momentum, passes=args.passes)
    out = Path(args.out) if args.out else Path(args.model)
    path = blobio.save_model(model, out, provenance={
        "command": f"calibrate --momentum {args.momentum} --passes {args.passes}"})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    seed = resolve_seed(args.seed, 0)
    model = blobio.load_model(Path(args.model))
    if not model.is_calibrated:
        raise ManifestError("model manifest has no calibrated grids; run calibrate first")
    data = blobio.read_blob(Path(args.input)).astype(np.float64)
    if data.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"input samples shaped {data.shape[1:]}, model expects {model.input_shape}")
    limit = len(data) if args.limit is None else min(args.limit, len(data))
    samples = {}
    for i in range(limit):
        policy = parse_policy(args.policy, model, x=data[i], seed=seed)
        y, trace = forward(model, data[i], policy)
        samples[f"sample{i:04d}"] = {
            "policy": list(policy.bits),
            "argmax": int(np.argmax(y)),
            "output": [repr(float(v)) for v in np.asarray(y).reshape(-1)],
            "shifted_elements": trace.shifted_elements,
            "transition_ops": trace.transition_ops,
            "fp_tensor_ops": trace.fp_tensor_ops,
            "mults": trace.counters.mults,
            "adds": trace.counters.adds,
            "shifts": trace.counters.shifts,
        }
    report = {
        "command": "infer",
        "policy_source": args.policy,
        "seed": seed,
        "samples_run": limit,
        "master_bitwidth": model.master_bitwidth,
        **samples,
    }
    blobio.write_report(Path(args.out), report)
    print(f"wrote {args.out} ({limit} samples)")
    return EXIT_OK


def cmd_cost(args) -> int:
    model = blobio.load_model(Path(args.model))
    policy = parse_policy(args.policy, model, seed=resolve_seed(args.seed, 0))
    rep = cost_report(model, policy, mode=args.mode)
    report = {
        "command": "cost",
        "mode": rep.mode,
        "policy": list(policy.bits),
        "bitops": rep.bitops,
        "macs_per_layer": rep.macs_per_layer,
        "transition_elements": rep.transition_elements,
        "transition_shift_ops": rep.transition_shift_ops,
        "transition_fp_primitives": rep.transition_fp_primitives,
        "inloop_mults": rep.inloop_mults,
        "inloop_adds": rep.inloop_adds,
        "cycle_low": rep.cycle_low,
        "cycle_high": rep.cycle_high,
    }
    blobio.write_report(Path(args.out), report)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = resolve_seed(args.seed, 0)
    ops = ("add", "mul", "dot", "shift") if args.suite == "bounds" else (args.suite,)
    report = {"command": "verify", "suite": args.suite, "seed": seed}
    total_violations = 0
    for op in ops:
        r = empirical_verify(op, samples=args.samples, seed=seed,
                             frac_bits=args.frac_bits)
        total_violations += len(r.violations)
        report[op] = {
            "cases": r.cases,
            "violations": len(r.violations),
            "max_observed": repr(r.max_observed),
            "max_bound": repr(r.max_bound),
            "mean_signed_error": repr(r.mean_signed_error),
        }
    report["total_violations"] = total_violations
    blobio.write_report(Path(args.out), report)
    print(f"wrote {args.out} ({total_violations} violations)")
    if total_violations:
        raise BoundViolationError(f"{total_violations} bound violations")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    seed = resolve_seed(args.seed, 0)
    x, labels, means = make_blob_dataset(
        seed, classes=args.classes, samples=args.samples, dims=args.dims)
    if args.image_shape:
        try:
            shape = tuple(int(v) for v in args.image_shape.split(","))
            x = x.reshape((len(x),) + shape)
        except ValueError as exc:
            raise ShapeMismatchError(
                f"cannot reshape dim-{args.dims} samples to {args.image_shape}") from exc
    out = Path(args.out)
    blobio.write_blob(out / "x.nqtb", x.astype(np.float32))
    blobio.write_blob(out / "labels.nqtb", labels.astype(np.int64))
    blobio.write_blob(out / "means.nqtb", means.astype(np.float32))
    print(f"wrote {out}/(x,labels,means).nqtb: {args.samples} samples, seed {seed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestq",
        description="Integer-only nested-quantization inference toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="build a toy model and quantize its weights")
    p.add_argument("--arch", choices=("mlp", "cnn"), default="mlp")
    p.add_argument("--bits", type=int, default=8, help="master bit-width n")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("calibrate", help="freeze grids from data and quantize weights")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="input blob, samples on axis 0")
    p.add_argument("--momentum", type=float, default=DEFAULT_EMA_MOMENTUM)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", default=None, help="defaults to updating --model in place")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("infer", help="integer inference under a bit-width policy")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="input blob, samples on axis 0")
    p.add_argument("--policy", default="static:8",
                   help="static:N | fixed:8,4,8 | heuristic:4,5,6 | "
                        "controller:4,5,6 | controller-file:PATH")
    p.add_argument("--limit", type=int, default=None, help="max samples to run")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("cost", help="cost accounting for one policy")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", default="static:8")
    p.add_argument("--mode", choices=("dqt", "standard"), default="dqt")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("verify", help="check integer operators against their bounds")
    p.add_argument("--suite", choices=VERIFY_SUITES, default="bounds")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--frac-bits", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("make-dataset", help="deterministic Gaussian-blob dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--image-shape", default=None, help="e.g. 1,8,8 to emit images")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except PolicySourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_POLICY_SOURCE
    except BoundViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUND_VIOLATION
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
