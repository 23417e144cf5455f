"""Finite-difference check of the full network gradient, cost included."""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .network import AnySpec, forward, backward, init_model, scale_spec
from .schemas import ConvNetworkSpec, MlpSpec
from .training import mse_cost

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-4
# larger inputs are shrunk to this geometry before checking
MAX_FRAMES = 8
MAX_BINS = 16
# central differences at DEFAULT_STEP carry roundoff near 1e-10, so gradients
# smaller than this are compared by scaled absolute error
ERROR_FLOOR = 1e-3


@dataclass
class LayerCheck:
    layer: int
    worst: float
    entries: int


@dataclass
class GradcheckReport:
    spec: AnySpec
    layers: List[LayerCheck] = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_error(self) -> float:
        return max((l.worst for l in self.layers), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= self.tolerance

    def lines(self) -> List[str]:
        out = [f'layer {l.layer}: worst relative error {l.worst:.3e} over {l.entries} entries' for l in self.layers]
        status = 'PASS' if self.passed else 'FAIL'
        out.append(f'max relative error {self.max_error:.3e} (tolerance {self.tolerance:g}): {status}')
        return out


def relative_error(analytic: float, numeric: float) -> float:
    """``|a - n| / max(|a|, |n|)``, divided by ``ERROR_FLOOR`` instead when both are smaller."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def shrink_spec(spec: AnySpec) -> AnySpec:
    if isinstance(spec, MlpSpec):
        width = spec.layer_widths[0]
        return spec if width <= MAX_BINS else scale_spec(spec, MAX_FRAMES, MAX_BINS)
    frames = min(spec.input_frames, MAX_FRAMES)
    bins = min(spec.input_bins, MAX_BINS)
    if (frames, bins) == (spec.input_frames, spec.input_bins):
        return spec
    logger.info('Shrinking %dx%d segments to %dx%d for the gradient check',
                spec.input_frames, spec.input_bins, frames, bins)
    return scale_spec(spec, frames, bins)


def gradcheck(
    spec: AnySpec,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_entries: int = 24,
    batch: int = 2,
    corrupt: bool = False,
) -> GradcheckReport:
    """Compare backprop against central differences at 64-bit.

    Up to ``max_entries`` entries of every parameter array are checked; the
    first entry of each is always among them. ``corrupt`` perturbs one analytic
    gradient entry so callers can see the check fail.
    """
    spec = shrink_spec(spec)
    rng = np.random.default_rng(seed)
    model = init_model(spec, seed=seed, precision='f64')
    # small positive biases keep ReLUs away from their kink at zero
    params = [p if i % 2 == 0 else rng.uniform(0.01, 0.1, size=p.shape) for i, p in enumerate(model.parameters())]
    model.set_parameters(params)

    if isinstance(spec, ConvNetworkSpec):
        frames, bins = spec.input_frames, spec.input_bins
    else:
        frames, bins = MAX_FRAMES, spec.layer_widths[0]
    X = rng.uniform(0.0, 1.0, size=(batch, 1, frames, bins))
    out, cache = forward(model, X)
    S = rng.uniform(0.0, 1.0, size=out.shape)
    _, grad_out = mse_cost(out, S)
    analytic = backward(model, cache, grad_out).flat()
    if corrupt:
        analytic[0] = analytic[0].copy()
        analytic[0].flat[0] += 1.0

    def cost() -> float:
        return mse_cost(forward(model, X)[0], S)[0]

    report = GradcheckReport(spec=spec, tolerance=tolerance)
    flat_params = model.parameters()
    sets_per_layer = [len(layer) for layer in model.params]
    pos = 0
    for layer_idx, n_sets in enumerate(sets_per_layer):
        worst, entries = 0.0, 0
        for k in range(pos, pos + 2 * n_sets):
            arr, grad = flat_params[k], analytic[k]
            picks = rng.choice(arr.size, size=min(arr.size, max_entries), replace=False)
            for j in np.unique(np.r_[0, picks]):
                original = arr.flat[j]
                arr.flat[j] = original + step
                up = cost()
                arr.flat[j] = original - step
                down = cost()
                arr.flat[j] = original
                numeric = (up - down) / (2 * step)
                worst = max(worst, relative_error(float(grad.flat[j]), numeric))
                entries += 1
        pos += 2 * n_sets
        report.layers.append(LayerCheck(layer=layer_idx, worst=worst, entries=entries))
    logger.debug('Gradient check: max relative error %.3e', report.max_error)
    return report
