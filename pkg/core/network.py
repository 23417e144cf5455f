"""Model specifications, parameter storage and forward/backward passes.

Convolutional models are chains of multi-resolution layers: every filter set of
a layer correlates the full input channel stack, the sets' feature maps are
concatenated in listed order, then the activation is applied. A single-set
layer is the plain FCNN case. Decoder layers are stride-1 "same" convolutions,
the same function family as stride-1 transposed convolutions.

MLP models act frame by frame on the last axis of their input, so the same
segment batches feed both model families.
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

from .errors import ShapeError, StaleCacheError
from .schemas import (
    Activation,
    ConvNetworkSpec,
    FilterSetSpec,
    LayerSpec,
    MlpSpec,
    Precision,
)
from .tensor_ops import (
    concat_channels,
    conv2d_same,
    conv2d_same_backward,
    relu,
    relu_backward,
    resolve_dtype,
    split_channels,
)

logger = logging.getLogger(__name__)

AnySpec = Union[ConvNetworkSpec, MlpSpec]

# (count, height, width) per set, largest kernels first
_MR_FCNN_LAYERS = [
    [(12, 13, 21), (3, 7, 9), (3, 3, 3)],
    [(3, 13, 21), (16, 7, 9), (3, 3, 3)],
    [(3, 13, 21), (12, 7, 9), (7, 3, 3)],
    [(3, 13, 21), (3, 7, 9), (32, 3, 3)],
    [(3, 13, 21), (12, 7, 9), (7, 3, 3)],
    [(3, 13, 21), (16, 7, 9), (3, 3, 3)],
    [(12, 13, 21), (3, 7, 9), (3, 3, 3)],
]

_FCNN_LAYERS = [
    [(13, 13, 21)],
    [(18, 9, 13)],
    [(24, 7, 9)],
    [(42, 3, 3)],
    [(24, 7, 9)],
    [(18, 9, 13)],
    [(13, 13, 21)],
]

_TOY_LAYERS = [
    [(2, 3, 3), (1, 1, 5)],
    [(2, 2, 3), (2, 3, 1)],
    [(1, 4, 6)],
]


def _conv_spec(table, frames: int, bins: int) -> ConvNetworkSpec:
    layers = [
        LayerSpec(sets=[FilterSetSpec(count=k, height=a, width=b) for (k, a, b) in row])
        for row in table
    ]
    # the output layer spans the whole segment
    layers.append(LayerSpec(sets=[FilterSetSpec(count=1, height=frames, width=bins)]))
    return ConvNetworkSpec(input_frames=frames, input_bins=bins, layers=layers)


def builtin_specs(frames: int = 15, bins: int = 1025) -> Dict[str, AnySpec]:
    return {
        'mr-fcnn': _conv_spec(_MR_FCNN_LAYERS, frames, bins),
        'fcnn': _conv_spec(_FCNN_LAYERS, frames, bins),
        'dnn': MlpSpec(layer_widths=[bins] * 5),
    }


def toy_spec() -> ConvNetworkSpec:
    """Three-layer multi-resolution net on 4×6 segments, used for gradient checks."""
    layers = [
        LayerSpec(sets=[FilterSetSpec(count=k, height=a, width=b) for (k, a, b) in row])
        for row in _TOY_LAYERS
    ]
    return ConvNetworkSpec(input_frames=4, input_bins=6, layers=layers)


def get_builtin(name: str, frames: int = 15, bins: int = 1025) -> AnySpec:
    if name == 'toy':
        return toy_spec()
    specs = builtin_specs(frames, bins)
    if name not in specs:
        raise KeyError(f"unknown builtin model '{name}' (choose from {', '.join(sorted(specs))}, toy)")
    return specs[name]


def scale_spec(spec: AnySpec, frames: int, bins: int) -> AnySpec:
    """Resize a spec to another segment geometry, keeping its set structure.

    Only the whole-segment output kernel follows the new geometry; every other
    filter set keeps its size, padding absorbs kernels larger than the input.
    """
    if isinstance(spec, MlpSpec):
        return spec.model_copy(update={'layer_widths': [bins] * len(spec.layer_widths)})
    layers = [layer.model_copy(deep=True) for layer in spec.layers]
    final = layers[-1]
    layers[-1] = final.model_copy(update={
        'sets': [FilterSetSpec(count=1, height=frames, width=bins)],
    })
    return ConvNetworkSpec(input_frames=frames, input_bins=bins, layers=layers)


def _conv_param_shapes(spec: ConvNetworkSpec) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    c_in = 1
    for layer in spec.layers:
        for s in layer.sets:
            yield (s.count, c_in, s.height, s.width), (s.count,)
        c_in = layer.out_channels


def _mlp_param_shapes(spec: MlpSpec) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    widths = spec.layer_widths
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        yield (n_out, n_in), (n_out,)


def param_shapes(spec: AnySpec) -> List[List[Tuple[Tuple[int, ...], Tuple[int, ...]]]]:
    """(weight shape, bias shape) per layer, per set."""
    if isinstance(spec, MlpSpec):
        return [[shapes] for shapes in _mlp_param_shapes(spec)]
    flat = iter(list(_conv_param_shapes(spec)))
    return [[next(flat) for _ in layer.sets] for layer in spec.layers]


def count_parameters(spec: AnySpec) -> int:
    total = 0
    for layer in param_shapes(spec):
        for w_shape, b_shape in layer:
            total += int(np.prod(w_shape)) + int(np.prod(b_shape))
    return total


@dataclass
class ParamSet:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class Model:
    spec: AnySpec
    params: List[List[ParamSet]]
    rng_seed: int
    precision: Precision = Precision.f64
    # bumped whenever parameters are replaced; guards against stale caches
    version: int = 0

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.precision)

    def parameters(self) -> List[np.ndarray]:
        """Flat parameter list: layer by layer, set by set, weight before bias."""
        out: List[np.ndarray] = []
        for layer in self.params:
            for ps in layer:
                out.extend((ps.weight, ps.bias))
        return out

    def set_parameters(self, arrays: List[np.ndarray]) -> None:
        it = iter(arrays)
        for layer in self.params:
            for ps in layer:
                weight, bias = next(it), next(it)
                if weight.shape != ps.weight.shape or bias.shape != ps.bias.shape:
                    raise ShapeError('parameter shapes do not match the model spec')
                ps.weight = np.asarray(weight, dtype=self.dtype)
                ps.bias = np.asarray(bias, dtype=self.dtype)
        self.version += 1

    def copy(self) -> 'Model':
        return Model(
            spec=self.spec,
            params=copy.deepcopy(self.params),
            rng_seed=self.rng_seed,
            precision=self.precision,
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def init_model(spec: AnySpec, seed: int, precision: Union[Precision, str] = Precision.f64) -> Model:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``.

    Draws happen in float64 so both precision modes start from the same values.
    """
    precision = Precision(precision)
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    params: List[List[ParamSet]] = []
    for layer in param_shapes(spec):
        row = []
        for w_shape, b_shape in layer:
            if len(w_shape) == 4:
                k, c_in, a, b = w_shape
                fan_in, fan_out = a * b * c_in, a * b * k
            else:
                fan_out, fan_in = w_shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=w_shape).astype(dtype)
            row.append(ParamSet(weight=weight, bias=np.zeros(b_shape, dtype=dtype)))
        params.append(row)
    logger.debug('Initialized %s model with %d parameters (seed=%d)', spec.kind, count_parameters(spec), seed)
    return Model(spec=spec, params=params, rng_seed=seed, precision=precision)


@dataclass
class ForwardCache:
    model_id: int
    version: int
    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)
    in_shape: Tuple[int, ...] = ()
    out_shape: Tuple[int, ...] = ()


@dataclass
class Gradients:
    params: List[List[ParamSet]]
    input: np.ndarray

    def flat(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for layer in self.params:
            for ps in layer:
                out.extend((ps.weight, ps.bias))
        return out


def _activations(spec: AnySpec) -> List[Activation]:
    if isinstance(spec, MlpSpec):
        n = len(spec.layer_widths) - 1
        return [spec.hidden_activation] * (n - 1) + [spec.output_activation]
    return [layer.activation for layer in spec.layers]


def _check_input(spec: AnySpec, x: np.ndarray) -> None:
    if isinstance(spec, MlpSpec):
        if x.ndim < 2 or x.shape[-1] != spec.layer_widths[0]:
            raise ShapeError(f'expected items with {spec.layer_widths[0]} bins, got shape {x.shape}')
        return
    expected = (1, spec.input_frames, spec.input_bins)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f'expected batch of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}')


def forward(model: Model, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    _check_input(model.spec, batch)
    x = np.asarray(batch, dtype=model.dtype)
    cache = ForwardCache(model_id=id(model), version=model.version, in_shape=x.shape)
    acts = _activations(model.spec)

    if isinstance(model.spec, MlpSpec):
        h = x.reshape(-1, x.shape[-1])
        for layer, act in zip(model.params, acts):
            ps = layer[0]
            cache.inputs.append(h)
            z = h @ ps.weight.T + ps.bias
            cache.preacts.append(z)
            h = relu(z) if act == Activation.relu else z
        cache.out_shape = x.shape[:-1] + (h.shape[-1],)
        return h.reshape(cache.out_shape), cache

    h = x
    for layer, act in zip(model.params, acts):
        cache.inputs.append(h)
        z = concat_channels([conv2d_same(h, ps.weight, ps.bias) for ps in layer])
        cache.preacts.append(z)
        h = relu(z) if act == Activation.relu else z
    cache.out_shape = h.shape
    return h, cache


def predict(model: Model, items: np.ndarray, batch_size: int = 100) -> np.ndarray:
    """Forward in chunks of ``batch_size``, discarding the caches."""
    if len(items) == 0:
        return np.asarray(items, dtype=model.dtype)
    outputs = [forward(model, items[start:start + batch_size])[0] for start in range(0, len(items), batch_size)]
    return np.concatenate(outputs, axis=0)


def backward(model: Model, cache: ForwardCache, grad_output: np.ndarray) -> Gradients:
    """Exact gradients of sum(output * grad_output) for the cached forward pass."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError('forward cache does not belong to the current model parameters')
    if grad_output.shape != cache.out_shape:
        raise ShapeError(f'grad_output shape {grad_output.shape} does not match output shape {cache.out_shape}')
    acts = _activations(model.spec)
    grads: List[List[ParamSet]] = [[] for _ in model.params]
    g = np.asarray(grad_output, dtype=model.dtype)

    if isinstance(model.spec, MlpSpec):
        g = g.reshape(-1, g.shape[-1])
        for i in reversed(range(len(model.params))):
            ps = model.params[i][0]
            z, h = cache.preacts[i], cache.inputs[i]
            gz = relu_backward(z, g) if acts[i] == Activation.relu else g
            grads[i] = [ParamSet(weight=gz.T @ h, bias=gz.sum(axis=0))]
            g = gz @ ps.weight
        return Gradients(params=grads, input=g.reshape(cache.in_shape))

    for i in reversed(range(len(model.params))):
        layer = model.params[i]
        z, h = cache.preacts[i], cache.inputs[i]
        gz = relu_backward(z, g) if acts[i] == Activation.relu else g
        parts = split_channels(gz, [ps.weight.shape[0] for ps in layer])
        g_in = None
        row = []
        # fixed set order keeps the reduction deterministic
        for ps, g_part in zip(layer, parts):
            gi, gw, gb = conv2d_same_backward(h, ps.weight, np.ascontiguousarray(g_part))
            row.append(ParamSet(weight=gw, bias=gb))
            g_in = gi if g_in is None else g_in + gi
        grads[i] = row
        g = g_in
    return Gradients(params=grads, input=g)
