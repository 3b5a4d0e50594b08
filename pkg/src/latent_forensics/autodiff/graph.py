from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.autodiff.primitives import PRIMITIVES
from latent_forensics.autodiff.tensor import Tensor, frozen

SOURCE_OPS = frozenset({"input", "param", "const"})


@dataclass(frozen=True, eq=False)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "attrs", MappingProxyType(dict(self.attrs)))

    def __reduce__(self):
        # mappingproxy does not pickle; rebuild from a plain dict
        return (Node, (self.name, self.op, self.inputs, dict(self.attrs)))


class ComputationGraph:
    """
    Immutable, topologically ordered graph of primitive applications.

    Source nodes are `input` (bound at evaluation), `param` (a named Tensor owned by the
    graph) and `const` (a Tensor stored on the node). Parameter values can be
    substituted per call without touching the graph, which keeps graphs shareable
    across threads and processes.
    """

    def __init__(self, nodes: Sequence[Node], parameters: Mapping[str, ArrayLike]):
        seen: set[str] = set()
        for node in nodes:
            if node.name in seen:
                raise ValueError(f"Duplicate node name: {node.name}")
            if node.op not in SOURCE_OPS and node.op not in PRIMITIVES:
                raise ValueError(f"Unknown primitive '{node.op}' on node {node.name}")
            missing = [name for name in node.inputs if name not in seen]
            if missing:
                raise ValueError(f"Node {node.name} consumes undefined or later nodes: {missing}")
            if node.op in PRIMITIVES and len(node.inputs) != PRIMITIVES[node.op].arity:
                raise ValueError(f"Node {node.name}: '{node.op}' takes {PRIMITIVES[node.op].arity} inputs")
            if node.op == "param" and node.name not in parameters:
                raise ValueError(f"Parameter node {node.name} has no value")
            seen.add(node.name)

        self._nodes: tuple[Node, ...] = tuple(nodes)
        self._index: dict[str, Node] = {node.name: node for node in self._nodes}
        self._parameters: Mapping[str, Tensor] = MappingProxyType(
            {name: frozen(value) for name, value in parameters.items()}
        )

    def __reduce__(self):
        return (ComputationGraph, (self._nodes, dict(self._parameters)))

    @property
    def nodes(self) -> tuple[Node, ...]:
        return self._nodes

    @property
    def parameters(self) -> Mapping[str, Tensor]:
        return self._parameters

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(node.name for node in self._nodes if node.op == "input")

    def node(self, name: str) -> Node:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"Graph has no node named '{name}'") from None

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def ancestors(self, targets: Iterable[str]) -> set[str]:
        """
        Names of every node the targets depend on, targets included
        """
        pending = [self.node(name).name for name in targets]
        found: set[str] = set()
        while pending:
            name = pending.pop()
            if name in found:
                continue
            found.add(name)
            pending.extend(self._index[name].inputs)
        return found

    def with_parameters(self, parameters: Mapping[str, ArrayLike]) -> "ComputationGraph":
        """
        Same structure, new parameter values (missing names keep their current value)
        """
        merged: dict[str, ArrayLike] = dict(self._parameters)
        for name, value in parameters.items():
            if name not in self._parameters:
                raise KeyError(f"Unknown parameter '{name}'")
            if np.shape(value) != self._parameters[name].shape:
                raise ValueError(
                    f"Parameter {name} expects shape {self._parameters[name].shape}, got {np.shape(value)}"
                )
            merged[name] = value
        return ComputationGraph(self._nodes, merged)


class GraphBuilder:
    """
    Incremental constructor for ComputationGraph; every method returns the new node name
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._names: set[str] = set()
        self._parameters: dict[str, Tensor] = {}
        self._counter: int = 0

    def __contains__(self, name: object) -> bool:
        return name in self._names

    def _add(self, op: str, inputs: Sequence[str] = (), name: str | None = None, **attrs: Any) -> str:
        if name is None:
            self._counter += 1
            name = f"{op}_{self._counter}"
        if name in self._names:
            raise ValueError(f"Duplicate node name: {name}")
        self._names.add(name)
        self._nodes.append(Node(name, op, tuple(inputs), attrs))
        return name

    # ---- sources ----

    def input(self, name: str) -> str:
        return self._add("input", name=name)

    def param(self, name: str, value: ArrayLike) -> str:
        self._parameters[name] = np.asarray(value, dtype=np.float64)
        return self._add("param", name=name)

    def const(self, value: ArrayLike, name: str | None = None) -> str:
        return self._add("const", name=name, value=frozen(value))

    # ---- primitives ----

    def add(self, a: str, b: str, name: str | None = None) -> str:
        return self._add("add", (a, b), name)

    def sub(self, a: str, b: str, name: str | None = None) -> str:
        return self._add("sub", (a, b), name)

    def mul(self, a: str, b: str, name: str | None = None) -> str:
        return self._add("mul", (a, b), name)

    def scale(self, x: str, factor: float, name: str | None = None) -> str:
        return self._add("scale", (x,), name, factor=float(factor))

    def relu(self, x: str, name: str | None = None) -> str:
        return self._add("relu", (x,), name)

    def sigmoid(self, x: str, name: str | None = None) -> str:
        return self._add("sigmoid", (x,), name)

    def matmul(self, a: str, b: str, name: str | None = None) -> str:
        return self._add("matmul", (a, b), name)

    def conv2d(self, x: str, kernel: str, name: str | None = None) -> str:
        return self._add("conv2d", (x, kernel), name)

    def upsample2(self, x: str, name: str | None = None) -> str:
        return self._add("upsample2", (x,), name)

    def avg_pool2(self, x: str, name: str | None = None) -> str:
        return self._add("avg_pool2", (x,), name)

    def sum(self, x: str, per_sample: bool = False, name: str | None = None) -> str:
        return self._add("sum", (x,), name, per_sample=per_sample)

    def mean(self, x: str, per_sample: bool = False, name: str | None = None) -> str:
        return self._add("mean", (x,), name, per_sample=per_sample)

    def sum_squares(self, x: str, per_sample: bool = False, name: str | None = None) -> str:
        return self._add("sum_squares", (x,), name, per_sample=per_sample)

    def channel_normalize(self, x: str, name: str | None = None) -> str:
        return self._add("channel_normalize", (x,), name)

    def reshape(self, x: str, shape: Sequence[int], name: str | None = None) -> str:
        return self._add("reshape", (x,), name, shape=tuple(int(e) for e in shape))

    def select(self, x: str, axis: int, index: int, name: str | None = None) -> str:
        return self._add("select", (x,), name, axis=int(axis), index=int(index))

    def bce_with_logits(self, logits: str, targets: str, name: str | None = None) -> str:
        return self._add("bce_with_logits", (logits, targets), name)

    def straight_through(self, continuous: str, quantized: str, name: str | None = None) -> str:
        return self._add("straight_through", (continuous, quantized), name)

    # ---- composites ----

    def dense(self, x: str, weight: str, bias: str | None = None, name: str | None = None) -> str:
        out = self.matmul(x, weight, name=None if bias else name)
        return self.add(out, bias, name=name) if bias else out

    def conv_bias(self, x: str, kernel: str, bias: str, name: str | None = None) -> str:
        """
        Convolution followed by a per-channel bias; `bias` must have shape (C_out, 1, 1)
        """
        return self.add(self.conv2d(x, kernel), bias, name=name)

    def build(self) -> ComputationGraph:
        return ComputationGraph(self._nodes, self._parameters)
