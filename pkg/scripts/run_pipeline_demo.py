#!/usr/bin/env python3
"""End-to-end demo: build a toy model, calibrate it, and compare the
integer pipeline's predictions against the float fake-quantization oracle
under several bit-width policies."""

import argparse

import numpy as np

from nestq.calibration import calibrate
from nestq.controller import ControllerSpec, controller_forward, select_argmax
from nestq.layers import BitPolicy, forward
from nestq.models import build_toy_mlp, make_blob_dataset
from nestq.reference import fake_quant_forward


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--candidates", default="2,4,6,8")
    args = ap.parse_args()

    cands = tuple(int(b) for b in args.candidates.split(","))
    x, labels, means = make_blob_dataset(args.seed, samples=args.samples)
    model = build_toy_mlp(seed=7, means=means)
    calibrate(model, [x[i:i + 100] for i in range(0, min(400, len(x)), 100)])
    num_layers = model.num_policy_layers

    policies = {
        "master (8,8,8)": lambda xi: BitPolicy.uniform(8, num_layers),
        "mixed (8,4,8)": lambda xi: BitPolicy(bits=(8, 4, 8), candidates=(4, 8)),
        "all-4": lambda xi: BitPolicy.uniform(4, num_layers),
    }
    ctrl = ControllerSpec(num_layers=num_layers, candidates=cands, seed=args.seed)
    policies["controller"] = lambda xi: select_argmax(
        controller_forward(ctrl, xi), cands)

    print(f"{args.samples} samples, {num_layers} policy layers")
    for name, pick in policies.items():
        agree = correct = shifted = 0
        for xi, label in zip(x, labels):
            policy = pick(xi)
            y, trace = forward(model, xi, policy)
            oracle = fake_quant_forward(model, xi[None, :], policy)[0]
            agree += int(np.argmax(y) == np.argmax(oracle))
            correct += int(np.argmax(y) == label)
            shifted += trace.shifted_elements
        print(f"{name:>16}: oracle agreement {agree / len(x):6.1%}  "
              f"accuracy {correct / len(x):6.1%}  "
              f"shifts/sample {shifted / len(x):8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
