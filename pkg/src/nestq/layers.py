"""Integer-only execution of layer graphs under a per-layer bit-width policy.

A ModelGraph starts life with float weights, gets its grids fixed by
calibration, and then runs as a pure integer pipeline: the input is quantized
once at the master width, every MAC layer shifts its weights and activations
down to its assigned bit-width, and only the final output is dequantized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .intops import (
    AccumulatorPolicy,
    DEFAULT_FRAC_BITS,
    OpCounters,
    add_constants,
    dot_constants,
    int_add,
    int_dot,
    int_dot_pact,
)
from .quantize import (
    NestedTensor,
    QuantParams,
    derive_params,
    dequantize,
    quantize,
    shift_down,
)

# Layer kinds that consume a policy bit-width (they move tensors below n).
POLICY_KINDS = ("fc", "conv2d", "residual_add")
LAYER_KINDS = POLICY_KINDS + ("relu_pact", "avgpool", "flatten")


class ShapeMismatchError(ValueError):
    pass


@dataclass
class LayerSpec:
    """One layer: kind, shape metadata, float parameters, calibrated grids.

    Float ``weight``/``bias`` are the source of truth until calibration
    quantizes them into ``weight_q``/``bias_q`` at the master width.
    """

    kind: str
    name: str = ""
    # fc
    in_features: int = 0
    out_features: int = 0
    # conv2d
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    # avgpool
    pool: int = 0
    # residual_add: index of the earlier layer whose output joins here
    source: int = -1
    # activation clamp bound
    alpha: float | None = None

    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    weight_q: NestedTensor | None = None
    bias_q: NestedTensor | None = None

    input_params: QuantParams | None = None
    weight_params: QuantParams | None = None
    bias_params: QuantParams | None = None
    # Grid of the MAC result before the bias add; the bias-biased output range
    # generally does not contain the pre-bias values, so they get their own.
    prebias_params: QuantParams | None = None
    output_params: QuantParams | None = None

    input_shape: tuple[int, ...] = ()
    output_shape: tuple[int, ...] = ()
    range_flagged: bool = False  # degenerate calibrated range was widened

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_weights(self) -> bool:
        return self.kind in ("fc", "conv2d")

    def weight_elements(self) -> int:
        if self.kind == "fc":
            return self.in_features * self.out_features
        if self.kind == "conv2d":
            return self.out_channels * self.in_channels * self.kernel * self.kernel
        return 0

    def input_elements(self) -> int:
        n = int(np.prod(self.input_shape)) if self.input_shape else 0
        if self.kind == "residual_add":
            return 2 * n  # both operands enter at the policy bit-width
        return n

    def mac_count(self) -> int:
        if self.kind == "fc":
            return self.in_features * self.out_features
        if self.kind == "conv2d":
            out_elems = int(np.prod(self.output_shape))
            return out_elems * self.kernel * self.kernel * self.in_channels
        return 0


@dataclass
class ModelGraph:
    """Ordered layers with explicit residual edges and the model input grid."""

    layers: list[LayerSpec]
    input_shape: tuple[int, ...]
    input_params: QuantParams | None = None
    master_bitwidth: int = 8
    frac_bits: int = DEFAULT_FRAC_BITS
    acc_policy: AccumulatorPolicy = field(default_factory=AccumulatorPolicy)

    def __post_init__(self):
        self._infer_shapes()
        for i, layer in enumerate(self.layers):
            if layer.kind == "residual_add":
                if not 0 <= layer.source < i:
                    raise ValueError(f"residual edge at layer {i} must point backwards")
                if self.layers[layer.source].output_shape != layer.input_shape:
                    raise ShapeMismatchError(
                        f"residual edge {layer.source}->{i} joins different shapes"
                    )

    def _infer_shapes(self):
        shape = tuple(self.input_shape)
        for layer in self.layers:
            layer.input_shape = shape
            if layer.kind == "fc":
                if int(np.prod(shape)) != layer.in_features:
                    raise ShapeMismatchError(
                        f"fc {layer.name!r} expects {layer.in_features} inputs, got {shape}"
                    )
                shape = (layer.out_features,)
            elif layer.kind == "conv2d":
                c, h, w = shape
                if c != layer.in_channels:
                    raise ShapeMismatchError(
                        f"conv {layer.name!r} expects {layer.in_channels} channels, got {c}"
                    )
                oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                shape = (layer.out_channels, oh, ow)
            elif layer.kind == "avgpool":
                c, h, w = shape
                shape = (c, h // layer.pool, w // layer.pool)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            layer.output_shape = shape
        self.output_shape = shape

    @property
    def policy_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind in POLICY_KINDS]

    @property
    def num_policy_layers(self) -> int:
        return len(self.policy_indices)

    @property
    def is_calibrated(self) -> bool:
        return self.input_params is not None and all(
            l.output_params is not None for l in self.layers
        )


@dataclass(frozen=True)
class BitPolicy:
    """Per-MAC-layer bit-width assignment drawn from a candidate set."""

    bits: tuple[int, ...]
    candidates: tuple[int, ...]

    def __post_init__(self):
        bad = [b for b in self.bits if b not in self.candidates]
        if bad:
            raise ValueError(f"bit-widths {bad} outside candidate set {self.candidates}")

    def __len__(self):
        return len(self.bits)

    @classmethod
    def uniform(cls, b: int, length: int, candidates=None) -> "BitPolicy":
        cands = tuple(candidates) if candidates is not None else (b,)
        return cls(bits=(b,) * length, candidates=cands)


@dataclass
class LayerRecord:
    index: int
    kind: str
    bitwidth: int
    shifted_elements: int
    counters: OpCounters


@dataclass
class ExecutionTrace:
    """What one inference did: per-layer precisions, shift counts, op tallies."""

    records: list[LayerRecord] = field(default_factory=list)
    counters: OpCounters = field(default_factory=OpCounters)
    fp_tensor_ops: int = 0  # float tensor ops between entry quantize and exit dequantize

    @property
    def shifted_elements(self) -> int:
        return sum(r.shifted_elements for r in self.records)

    @property
    def transition_ops(self) -> int:
        # one shift per element moved below the master width
        return self.shifted_elements

    def bitwidths(self) -> list[int]:
        return [r.bitwidth for r in self.records]


def pact_clamp(t: NestedTensor, alpha: float) -> NestedTensor:
    """Clamp stored integers at the grid index of alpha.

    On a zero-offset grid this doubles as ReLU, since every stored integer is
    already non-negative.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    q_alpha = int(quantize(np.float64(alpha), t.params))
    return NestedTensor(data=np.minimum(t.data, q_alpha), params=t.params)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5


def fold_batchnorm(conv: LayerSpec, bn: BatchNormParams) -> LayerSpec:
    """Fold frozen batch-norm statistics into the preceding conv's float weights."""
    denom_sq = bn.var + bn.eps
    if np.any(denom_sq <= 0):
        raise ValueError("non-positive variance + eps in batch-norm fold")
    factor = bn.gamma / np.sqrt(denom_sq)
    if conv.weight is None:
        raise ValueError("fold_batchnorm needs float weights")
    new_weight = conv.weight * factor.reshape(-1, *([1] * (conv.weight.ndim - 1)))
    bias = conv.bias if conv.bias is not None else np.zeros(len(bn.mean))
    new_bias = (bias - bn.mean) * factor + bn.beta
    folded = LayerSpec(**{**conv.__dict__})
    folded.weight = new_weight
    folded.bias = new_bias
    return folded


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int,
            pad_value: int) -> tuple[np.ndarray, int, int]:
    """Unfold (C, H, W) into rows of receptive fields, one per output pixel."""
    c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    cols = np.empty((oh * ow, c * kernel * kernel), dtype=np.int64)
    idx = 0
    for i in range(oh):
        for j in range(ow):
            patch = x[:, i * stride:i * stride + kernel, j * stride:j * stride + kernel]
            cols[idx] = patch.reshape(-1)
            idx += 1
    return cols, oh, ow


def _mac_layer_output(layer: LayerSpec, rows: np.ndarray, weights_b: np.ndarray,
                      px_b: QuantParams, pw_b: QuantParams,
                      acc_policy: AccumulatorPolicy, frac_bits: int,
                      counters: OpCounters) -> np.ndarray:
    """Dot every input row against every weight row, then add the bias.

    The dot lands on the layer's pre-bias grid; the bias add maps onto the
    calibrated output grid, whose clipping realizes any following clamp.
    """
    py = layer.output_params
    p_acc = layer.prebias_params or py
    length = rows.shape[1]
    c_dot = dot_constants(px_b, pw_b, p_acc, length, frac_bits)
    pact = c_dot.exact[2] == 0  # zero-offset activations enable the factored loop
    if layer.bias_q is not None:
        c_add = add_constants(p_acc, layer.bias_params, py, frac_bits)
    out = np.empty((rows.shape[0], weights_b.shape[0]), dtype=np.int64)
    for o, wrow in enumerate(weights_b):
        for r, xrow in enumerate(rows):
            if pact:
                y, dot_counters = int_dot_pact(xrow, wrow, c_dot, p_acc, acc_policy)
                counters.merge(dot_counters)
            else:
                y = int_dot(xrow, wrow, c_dot, p_acc, acc_policy)
                counters.mults += 3 * length
                counters.adds += 2 * length
            if layer.bias_q is not None:
                y = int_add(y, int(layer.bias_q.data[o]), c_add, py)
                counters.mults += 2
                counters.adds += 2
            out[r, o] = y
    return out


def run_layer(layer: LayerSpec, x: NestedTensor, b: int,
              acc_policy: AccumulatorPolicy | None = None,
              frac_bits: int = DEFAULT_FRAC_BITS,
              aux: NestedTensor | None = None) -> tuple[NestedTensor, LayerRecord]:
    """Execute one layer at bit-width b, returning a master-width output.

    Weights and the incoming activation are reduced to b bits by shifting; the
    result is produced directly on the layer's calibrated master output grid,
    so the next layer again sees a master-width tensor. ``aux`` carries the
    second operand for residual adds.
    """
    if layer.output_params is None:
        raise ValueError(f"layer {layer.name!r} is not calibrated")
    n = x.params.master_bitwidth
    if b > n:
        raise ValueError(f"policy bit-width {b} above master width {n}")
    if tuple(x.shape) != tuple(layer.input_shape):
        raise ShapeMismatchError(
            f"layer {layer.name!r} expects input {layer.input_shape}, got {x.shape}"
        )
    acc_policy = acc_policy or AccumulatorPolicy()
    counters = OpCounters()
    shifted = 0

    if layer.kind in ("fc", "conv2d"):
        if layer.weight_q is None:
            raise ValueError(f"layer {layer.name!r} has no quantized weights")
        px_b = derive_params(x.params, b)
        pw_b = derive_params(layer.weight_q.params, b)
        wq = shift_down(layer.weight_q.data, n, b)
        xq = shift_down(x.data, n, b)
        if b < n:
            shifted = layer.weight_elements() + layer.input_elements()
            counters.shifts += shifted
        if layer.kind == "fc":
            rows = xq.reshape(1, -1)
            weights_b = wq.reshape(layer.out_features, layer.in_features)
            out = _mac_layer_output(layer, rows, weights_b, px_b, pw_b,
                                    acc_policy, frac_bits, counters)
            data = out.reshape(layer.output_shape)
        else:
            pad_q = int(quantize(np.float64(0.0), px_b))
            rows, oh, ow = _im2col(xq, layer.kernel, layer.stride, layer.padding, pad_q)
            weights_b = wq.reshape(layer.out_channels, -1)
            out = _mac_layer_output(layer, rows, weights_b, px_b, pw_b,
                                    acc_policy, frac_bits, counters)
            data = out.T.reshape(layer.out_channels, oh, ow)
        result = NestedTensor(data=data, params=layer.output_params)

    elif layer.kind == "residual_add":
        if aux is None:
            raise ValueError("residual_add needs the stored branch output")
        p1_b = derive_params(x.params, b)
        p2_b = derive_params(aux.params, b)
        q1 = shift_down(x.data, n, b)
        q2 = shift_down(aux.data, n, b)
        if b < n:
            shifted = layer.input_elements()
            counters.shifts += shifted
        c = add_constants(p1_b, p2_b, layer.output_params, frac_bits)
        flat = np.array(
            [int_add(int(a), int(bb), c, layer.output_params)
             for a, bb in zip(q1.reshape(-1), q2.reshape(-1))],
            dtype=np.int64,
        )
        counters.mults += 2 * flat.size
        counters.adds += 2 * flat.size
        result = NestedTensor(data=flat.reshape(layer.output_shape),
                              params=layer.output_params)

    elif layer.kind == "relu_pact":
        result = pact_clamp(x, layer.alpha)

    elif layer.kind == "avgpool":
        # Same-grid integer mean per window; exact under a shared affine grid.
        c, h, w = x.shape
        p = layer.pool
        view = x.data[:, :h - h % p, :w - w % p].reshape(c, h // p, p, w // p, p)
        sums = view.sum(axis=(2, 4), dtype=np.int64)
        area = p * p
        data = (sums + area // 2) // area
        counters.adds += int(np.prod(x.shape))
        result = NestedTensor(data=data, params=layer.output_params)

    else:  # flatten
        result = NestedTensor(data=x.data.reshape(layer.output_shape), params=x.params)

    record = LayerRecord(index=-1, kind=layer.kind, bitwidth=b,
                         shifted_elements=shifted, counters=counters)
    return result, record


def forward(model: ModelGraph, x: np.ndarray,
            policy: BitPolicy) -> tuple[np.ndarray, ExecutionTrace]:
    """Full inference: quantize once, run every layer, dequantize once.

    MAC layers run at their policy bit-width; element-wise layers stay at the
    master width. The trace records per-layer bit-widths, shifted element
    counts, and primitive-op tallies.
    """
    if not model.is_calibrated:
        raise ValueError("model is not calibrated")
    if len(policy) != model.num_policy_layers:
        raise ValueError(
            f"policy length {len(policy)} != {model.num_policy_layers} MAC layers"
        )
    n = model.master_bitwidth
    trace = ExecutionTrace()
    t = NestedTensor(data=quantize(x, model.input_params), params=model.input_params)
    outputs: list[NestedTensor] = []
    pidx = 0
    for i, layer in enumerate(model.layers):
        if layer.kind in POLICY_KINDS:
            b = policy.bits[pidx]
            pidx += 1
        else:
            b = n
        aux = outputs[layer.source] if layer.kind == "residual_add" else None
        t, record = run_layer(layer, t, b, model.acc_policy, model.frac_bits, aux=aux)
        record.index = i
        trace.records.append(record)
        trace.counters.merge(record.counters)
        outputs.append(t)
    y = dequantize(t.data, t.params)
    return y, trace
