"""Independent oracles: exact-rational requantization and fake-quant forward.

Nothing here shares code with the integer execution path; these routines exist
so the integer kernels can be checked against an implementation that computes
the "right answer" a different way.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .calibration import float_layer
from .layers import BitPolicy, ModelGraph, POLICY_KINDS
from .quantize import QuantParams, derive_params, round_half_away, round_half_away_int


def exact_requantize(q: int, from_params: QuantParams, to_params: QuantParams) -> int:
    """Grid change in exact rational arithmetic: dequantize, requantize, clip."""
    x = Fraction(int(q)) * Fraction(from_params.scale) + Fraction(from_params.offset)
    idx = (x - Fraction(to_params.offset)) / Fraction(to_params.scale)
    return min(max(round_half_away_int(idx), 0), to_params.qmax)


def exact_nested_shift(q_n: int, n: int, b: int) -> int:
    """clip(round(q / 2^(n-b))) computed with exact rationals."""
    v = round_half_away_int(Fraction(int(q_n), 1 << (n - b)))
    return min(max(v, 0), (1 << b) - 1)


def fake_quantize(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Quantize-dequantize round trip in float: the QAT precision simulation."""
    q = np.clip(round_half_away((x - params.offset) / params.scale), 0, params.qmax)
    return q * params.scale + params.offset


def fake_quant_forward(model: ModelGraph, x: np.ndarray,
                       policy: BitPolicy) -> np.ndarray:
    """Float forward with per-tensor fake quantization at the policy bit-widths.

    Mirrors the integer pipeline's structure (weights and activations at the
    policy width, outputs on the calibrated master grid) while computing
    everything in float. Batch on the leading axis.
    """
    if len(policy) != model.num_policy_layers:
        raise ValueError("policy length mismatch")
    t = fake_quantize(np.asarray(x, dtype=np.float64), model.input_params)
    outputs = []
    pidx = 0
    for layer in model.layers:
        if layer.kind in POLICY_KINDS:
            b = policy.bits[pidx]
            pidx += 1
        else:
            b = model.master_bitwidth
        if layer.kind in ("fc", "conv2d"):
            shadow = layer.__class__(**{**layer.__dict__})
            w_master = np.asarray(layer.weight_q.data, dtype=np.float64) \
                * layer.weight_params.scale + layer.weight_params.offset
            shadow.weight = fake_quantize(w_master, derive_params(layer.weight_params, b))
            if layer.bias_q is not None:
                shadow.bias = np.asarray(layer.bias_q.data, dtype=np.float64) \
                    * layer.bias_params.scale + layer.bias_params.offset
            t_in = fake_quantize(t, derive_params(layer.input_params, b))
            y = float_layer(shadow, t_in)
            t = fake_quantize(y, layer.output_params)
        elif layer.kind == "residual_add":
            aux = outputs[layer.source]
            a = fake_quantize(t, derive_params(layer.input_params, b))
            bb = fake_quantize(aux, derive_params(model.layers[layer.source].output_params, b))
            t = fake_quantize(a + bb, layer.output_params)
        else:
            t = float_layer(layer, t)
        outputs.append(t)
    return t


def enumerate_macs(model: ModelGraph) -> list[int]:
    """Brute-force MAC enumeration: walk every output element of every layer.

    Deliberately structured as an element walk rather than a closed-form
    product so it can serve as the oracle for the cost model.
    """
    counts = []
    for idx in model.policy_indices:
        layer = model.layers[idx]
        total = 0
        if layer.kind == "fc":
            for _ in range(layer.out_features):
                total += layer.in_features
        elif layer.kind == "conv2d":
            _, oh, ow = layer.output_shape
            for _ in range(layer.out_channels):
                for _ in range(oh):
                    for _ in range(ow):
                        total += layer.kernel * layer.kernel * layer.in_channels
        counts.append(total)
    return counts
