"""Range calibration: weight min/max, activation clamp bounds, EMA output ranges.

Calibration runs the float model over a dataset, tracks every layer's output
range with an exponential moving average, picks each activation clamp from a
high percentile of observed values, and then freezes all master grids and
quantizes the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import LayerSpec, ModelGraph
from .quantize import NestedTensor, QuantParams, make_master_params, quantize

DEFAULT_EMA_MOMENTUM = 0.9
ALPHA_PERCENTILE = 99.9

# Widening applied to a zero-width range: relative to the larger bound, floored.
DEGENERATE_REL_EPS = 2.0 ** -10
DEGENERATE_ABS_EPS = 1e-6


@dataclass(frozen=True)
class RangeState:
    """Running min/max of one layer's output under EMA tracking."""

    y_min: float = 0.0
    y_max: float = 0.0
    momentum: float = DEFAULT_EMA_MOMENTUM
    steps: int = 0


def ema_update(state: RangeState, batch_min: float, batch_max: float) -> RangeState:
    """Blend a batch's extrema into the running range; first batch initializes."""
    if batch_min > batch_max:
        raise ValueError(f"batch_min {batch_min} > batch_max {batch_max}")
    if state.steps == 0:
        return replace(state, y_min=batch_min, y_max=batch_max, steps=1)
    g = state.momentum
    return replace(
        state,
        y_min=g * state.y_min + (1 - g) * batch_min,
        y_max=g * state.y_max + (1 - g) * batch_max,
        steps=state.steps + 1,
    )


def _widened(lo: float, hi: float) -> tuple[float, float, bool]:
    if hi > lo:
        return lo, hi, False
    eps = max(DEGENERATE_REL_EPS * max(abs(lo), abs(hi)), DEGENERATE_ABS_EPS)
    return lo - eps, hi + eps, True


def _tensor_params(t: np.ndarray, n: int) -> tuple[QuantParams, bool]:
    lo, hi, flagged = _widened(float(t.min()), float(t.max()))
    return make_master_params(lo, hi, n), flagged


def float_layer(layer: LayerSpec, x: np.ndarray,
                aux: np.ndarray | None = None) -> np.ndarray:
    """Reference float evaluation of one layer on a batch (leading batch axis)."""
    if layer.kind == "fc":
        w = layer.weight.reshape(layer.out_features, layer.in_features)
        y = x.reshape(x.shape[0], -1) @ w.T
        if layer.bias is not None:
            y = y + layer.bias
        return y
    if layer.kind == "conv2d":
        k, s, p = layer.kernel, layer.stride, layer.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        _, c, h, w_ = x.shape
        oh = (h - k) // s + 1
        ow = (w_ - k) // s + 1
        out = np.empty((x.shape[0], layer.out_channels, oh, ow))
        wmat = layer.weight.reshape(layer.out_channels, -1)
        for i in range(oh):
            for j in range(ow):
                patch = x[:, :, i * s:i * s + k, j * s:j * s + k].reshape(x.shape[0], -1)
                out[:, :, i, j] = patch @ wmat.T
        if layer.bias is not None:
            out += layer.bias.reshape(1, -1, 1, 1)
        return out
    if layer.kind == "relu_pact":
        y = np.maximum(x, 0.0)
        return np.minimum(y, layer.alpha) if layer.alpha is not None else y
    if layer.kind == "residual_add":
        return x + aux
    if layer.kind == "avgpool":
        p = layer.pool
        b, c, h, w_ = x.shape
        return x[:, :, :h - h % p, :w_ - w_ % p] \
            .reshape(b, c, h // p, p, w_ // p, p).mean(axis=(3, 5))
    return x.reshape(x.shape[0], -1)  # flatten


def float_forward(model: ModelGraph, x: np.ndarray) -> list[np.ndarray]:
    """Per-layer float outputs for a batch; used by calibration and oracles."""
    outputs = []
    t = x
    for layer in model.layers:
        aux = outputs[layer.source] if layer.kind == "residual_add" else None
        t = float_layer(layer, t, aux)
        outputs.append(t)
    return outputs


def calibrate(model: ModelGraph, batches: list[np.ndarray],
              momentum: float = DEFAULT_EMA_MOMENTUM, passes: int = 1) -> ModelGraph:
    """Freeze all master grids from data and quantize the weights.

    Weight and bias grids come from exact tensor min/max. Activation clamps are
    set to the observed high percentile of pre-clamp values, giving each
    activation a zero-offset [0, alpha] grid. Output grids come from the final
    EMA range; a MAC layer feeding a clamp adopts the clamp's grid so its own
    clipping realizes the clamp.
    """
    if passes < 1:
        raise ValueError("need at least one calibration pass")
    n = model.master_bitwidth
    states = [RangeState(momentum=momentum) for _ in model.layers]
    prebias_states = [RangeState(momentum=momentum) for _ in model.layers]
    act_values: list[list[np.ndarray]] = [[] for _ in model.layers]
    data_min, data_max = np.inf, -np.inf

    for _ in range(passes):
        for batch in batches:
            data_min = min(data_min, float(batch.min()))
            data_max = max(data_max, float(batch.max()))
            outputs = float_forward(model, batch)
            t = batch
            for i, layer in enumerate(model.layers):
                if layer.kind == "relu_pact":
                    act_values[i].append(np.maximum(t, 0.0).reshape(-1))
                y = outputs[i]
                states[i] = ema_update(states[i], float(y.min()), float(y.max()))
                if layer.has_weights and layer.bias is not None:
                    shape = (1, -1) + (1,) * (y.ndim - 2)
                    pre = y - layer.bias.reshape(shape)
                    prebias_states[i] = ema_update(
                        prebias_states[i], float(pre.min()), float(pre.max()))
                t = y

    # Clamp bounds first: they define the grids of the layers that feed them.
    for i, layer in enumerate(model.layers):
        if layer.kind == "relu_pact" and layer.alpha is None:
            vals = np.concatenate(act_values[i])
            alpha = float(np.percentile(vals, ALPHA_PERCENTILE))
            layer.alpha = alpha if alpha > 0 else DEGENERATE_ABS_EPS

    # Non-negative data gets a zero-offset input grid; the factored MAC loop
    # needs m = 0 on activations.
    in_lo = 0.0 if data_min >= 0.0 else data_min
    lo, hi, _ = _widened(in_lo, data_max)
    model.input_params = make_master_params(lo, hi, n)

    prev_params = model.input_params
    for i, layer in enumerate(model.layers):
        layer.input_params = prev_params
        if layer.has_weights:
            layer.weight_params, wf = _tensor_params(layer.weight, n)
            layer.range_flagged |= wf
            layer.weight_q = NestedTensor(
                data=quantize(layer.weight, layer.weight_params),
                params=layer.weight_params,
            )
            if layer.bias is not None:
                layer.bias_params, bf = _tensor_params(layer.bias, n)
                layer.range_flagged |= bf
                layer.bias_q = NestedTensor(
                    data=quantize(layer.bias, layer.bias_params),
                    params=layer.bias_params,
                )
                # The MAC result before the bias add lives on its own grid;
                # the output range rarely contains it.
                lo, hi, f = _widened(prebias_states[i].y_min, prebias_states[i].y_max)
                layer.range_flagged |= f
                layer.prebias_params = make_master_params(lo, hi, n)
            nxt = model.layers[i + 1] if i + 1 < len(model.layers) else None
            if nxt is not None and nxt.kind == "relu_pact":
                layer.output_params = make_master_params(0.0, nxt.alpha, n)
            else:
                lo, hi, f = _widened(states[i].y_min, states[i].y_max)
                layer.range_flagged |= f
                layer.output_params = make_master_params(lo, hi, n)
        elif layer.kind in ("relu_pact", "flatten", "avgpool"):
            layer.output_params = prev_params
        else:  # residual_add
            lo, hi, f = _widened(states[i].y_min, states[i].y_max)
            layer.range_flagged |= f
            layer.output_params = make_master_params(lo, hi, n)
        prev_params = layer.output_params
    return model
