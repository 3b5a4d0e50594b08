"""
Forward evaluation and reverse-mode differentiation over a ComputationGraph.

All functions are pure: parameter substitutions are passed per call and never stored
on the graph, so one graph can serve many concurrent callers.
"""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.autodiff.graph import ComputationGraph, Node
from latent_forensics.autodiff.primitives import PRIMITIVES, ShapeRuleError
from latent_forensics.autodiff.tensor import Tensor, as_tensor
from latent_forensics.errors import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

Bindings = Mapping[str, ArrayLike]


def _source_value(node: Node, graph: ComputationGraph, inputs: Bindings, parameters: Bindings) -> Tensor:
    if node.op == "input":
        if node.name not in inputs:
            raise ValueError(f"Graph input '{node.name}' is not bound")
        return as_tensor(inputs[node.name])
    if node.op == "param":
        if node.name in parameters:
            value = as_tensor(parameters[node.name])
            expected = graph.parameters[node.name].shape
            if value.shape != expected:
                raise ShapeMismatchError(f"parameter override has shape {value.shape}, expected {expected}", node.name)
            return value
        return graph.parameters[node.name]
    return node.attrs["value"]


def _forward(
    graph: ComputationGraph,
    inputs: Bindings,
    needed: set[str] | None,
    parameters: Bindings,
) -> dict[str, Tensor]:
    values: dict[str, Tensor] = {}
    for node in graph.nodes:
        if needed is not None and node.name not in needed:
            continue
        if node.op in ("input", "param", "const"):
            values[node.name] = _source_value(node, graph, inputs, parameters)
            continue

        primitive = PRIMITIVES[node.op]
        operands = [values[name] for name in node.inputs]
        try:
            expected = primitive.infer_shape([x.shape for x in operands], node.attrs)
        except ShapeRuleError as e:
            raise ShapeMismatchError(str(e), node.name) from e

        with np.errstate(all="ignore"):
            out = np.asarray(primitive.forward(operands, node.attrs), dtype=np.float64)
        if out.shape != expected:
            raise ShapeMismatchError(f"'{node.op}' produced {out.shape}, expected {expected}", node.name)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(node.name)
        values[node.name] = out
    return values


def evaluate(
    graph: ComputationGraph,
    inputs: Bindings,
    outputs: Iterable[str] | None = None,
    parameters: Bindings | None = None,
) -> dict[str, Tensor]:
    """
    Run the graph forward and return the requested node values.

    Only ancestors of `outputs` are computed; with `outputs=None` every node is
    evaluated and returned. `parameters` overrides stored parameter values for this
    call only.
    """
    if outputs is None:
        return _forward(graph, inputs, None, parameters or {})
    names = list(outputs)
    values = _forward(graph, inputs, graph.ancestors(names), parameters or {})
    return {name: values[name] for name in names}


def value_and_gradient(
    graph: ComputationGraph,
    inputs: Bindings,
    scalar_output: str,
    wrt: Iterable[str],
    parameters: Bindings | None = None,
) -> tuple[float, dict[str, Tensor]]:
    """
    Value of a scalar node together with its gradient w.r.t. the named inputs/parameters.

    Targets the output does not depend on receive a zero gradient of their own shape.
    """
    values, grads = forward_backward(graph, inputs, scalar_output, wrt, (), parameters)
    return float(values[scalar_output]), grads


def forward_backward(
    graph: ComputationGraph,
    inputs: Bindings,
    scalar_output: str,
    wrt: Iterable[str],
    outputs: Iterable[str] = (),
    parameters: Bindings | None = None,
) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """
    One forward pass and one backward pass; returns the values of `scalar_output` and
    `outputs` plus the gradients of `scalar_output`
    """
    targets = list(wrt)
    for name in targets:
        if graph.node(name).op not in ("input", "param"):
            raise ValueError(f"Can only differentiate w.r.t. inputs and parameters, not '{name}'")

    extra = list(outputs)
    needed = graph.ancestors([scalar_output, *extra])
    values = _forward(graph, inputs, needed, parameters or {})
    out = values[scalar_output]
    if out.shape != ():
        raise ShapeMismatchError(f"gradient requires a scalar output, got shape {out.shape}", scalar_output)

    # Nodes on some path from a target to the output
    relevant = set(targets)
    for node in graph.nodes:
        if node.name in needed and any(name in relevant for name in node.inputs):
            relevant.add(node.name)

    grads: dict[str, Tensor] = {scalar_output: np.ones(())}
    for node in reversed(graph.nodes):
        if node.name not in grads or node.name not in relevant or node.op in ("input", "param", "const"):
            continue
        upstream = grads.pop(node.name)
        primitive = PRIMITIVES[node.op]
        operands = [values[name] for name in node.inputs]
        partials = primitive.backward(upstream, operands, values[node.name], node.attrs)
        for name, partial in zip(node.inputs, partials, strict=True):
            if partial is None or name not in relevant:
                continue
            partial = np.asarray(partial, dtype=np.float64)
            grads[name] = grads[name] + partial if name in grads else partial

    result: dict[str, Tensor] = {}
    for name in targets:
        if name in grads:
            result[name] = np.array(grads[name], dtype=np.float64)
        else:
            shape = values[name].shape if name in values else _target_shape(graph, name, inputs, parameters or {})
            result[name] = np.zeros(shape)
    return {name: values[name] for name in (scalar_output, *extra)}, result


def _target_shape(graph: ComputationGraph, name: str, inputs: Bindings, parameters: Bindings) -> tuple[int, ...]:
    return _source_value(graph.node(name), graph, inputs, parameters).shape


def gradient(
    graph: ComputationGraph,
    inputs: Bindings,
    scalar_output: str,
    wrt: Iterable[str],
    parameters: Bindings | None = None,
) -> dict[str, Tensor]:
    return value_and_gradient(graph, inputs, scalar_output, wrt, parameters)[1]


@dataclass(frozen=True)
class GradientCheckReport:
    """
    Per-target max relative error between reverse-mode and central finite differences.

    The error of a target is max_i |analytic_i - numeric_i| over the sampled
    coordinates, divided by the larger of the two gradients' max magnitudes; it is
    exactly 0 when both gradients vanish.
    """

    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [name for name, error in self.errors.items() if not error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def check_gradients(
    graph: ComputationGraph,
    inputs: Bindings,
    tolerance: float,
    scalar_output: str,
    wrt: Iterable[str] | None = None,
    step: float = 1e-5,
    max_coords: int = 32,
    seed: int = 0,
) -> GradientCheckReport:
    """
    Compare reverse-mode gradients against central differences.

    `wrt` defaults to every graph parameter. Targets larger than `max_coords`
    entries are checked on a seeded random subset of coordinates.
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")

    targets = list(graph.parameters) if wrt is None else list(wrt)
    _, analytic = value_and_gradient(graph, inputs, scalar_output, targets)
    rng = np.random.default_rng(seed)

    def loss_at(name: str, value: Tensor) -> float:
        if graph.node(name).op == "input":
            bound = {**inputs, name: value}
            return float(evaluate(graph, bound, [scalar_output])[scalar_output])
        return float(evaluate(graph, inputs, [scalar_output], {name: value})[scalar_output])

    errors: dict[str, float] = {}
    for name in targets:
        base = (
            as_tensor(inputs[name]).copy()
            if graph.node(name).op == "input"
            else graph.parameters[name].copy()
        )
        flat = base.reshape(-1)
        coords = np.arange(flat.size) if flat.size <= max_coords else rng.choice(flat.size, max_coords, replace=False)

        a = analytic[name].reshape(-1)[coords]
        n = np.empty(len(coords))
        for k, i in enumerate(coords):
            original = flat[i]
            flat[i] = original + step
            plus = loss_at(name, base)
            flat[i] = original - step
            minus = loss_at(name, base)
            flat[i] = original
            n[k] = (plus - minus) / (2.0 * step)

        scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
        errors[name] = 0.0 if scale == 0.0 else float(np.max(np.abs(a - n)) / scale)
        logger.debug(f"Gradient check {name}: max relative error {errors[name]:.3e}")

    return GradientCheckReport(tolerance=tolerance, errors=errors)
