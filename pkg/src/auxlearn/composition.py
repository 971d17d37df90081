"""Compose trained classifiers into hierarchies and fusion chains.

A *successor* edge sends an input predicted as class ``c`` on to a specialist
classifier (``cat`` -> cat-breed classifier). A classifier's auxiliary class
never has a successor; instead, a :class:`FusionChain` hands inputs that land
in one root's auxiliary class to the next root in line. Every node sees the
same raw feature vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from auxlearn import model as M
from auxlearn.errors import DomainError, ParseError, RoutingError

DEFAULT_FALLBACK = "Others"
DESCRIPTION_VERSION = 1


@dataclass(frozen=True, eq=False)
class ClassifierNode:
    name: str
    model: M.MlpModel
    class_names: tuple
    auxiliary_class: Optional[int] = None
    successors: Mapping[int, "ClassifierNode"] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "successors", dict(self.successors))
        k = len(self.class_names)
        if k != self.model.num_classes:
            raise DomainError(f"{self.name}: {k} class names for a {self.model.num_classes}-way model")
        if self.auxiliary_class is not None and not 0 <= self.auxiliary_class < k:
            raise DomainError(f"{self.name}: auxiliary class {self.auxiliary_class} out of range")
        for c in self.successors:
            if not 0 <= c < k:
                raise DomainError(f"{self.name}: successor key {c} out of range")
            if c == self.auxiliary_class:
                raise DomainError(f"{self.name}: the auxiliary class cannot have a successor")
        _check_acyclic(self)

    @property
    def auxiliary_name(self) -> Optional[str]:
        return None if self.auxiliary_class is None else self.class_names[self.auxiliary_class]


def _check_acyclic(root: ClassifierNode):
    on_path = set()

    def visit(node):
        if id(node) in on_path:
            raise DomainError(f"successor graph has a cycle through {node.name!r}")
        on_path.add(id(node))
        for child in node.successors.values():
            visit(child)
        on_path.discard(id(node))

    visit(root)


@dataclass(frozen=True)
class FusionChain:
    nodes: tuple
    fallback_label: str = DEFAULT_FALLBACK

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise DomainError("a fusion chain needs at least one node")
        for node in self.nodes[:-1]:
            if node.auxiliary_class is None:
                raise DomainError(f"{node.name}: every node but the last needs an auxiliary class")


@dataclass(frozen=True)
class RoutingTrace:
    """``steps`` holds ``(node name, predicted class name)`` per hop; ``roots``
    the chain roots that were consulted, in order."""

    steps: tuple
    final_label: str
    roots: tuple = ()


def _predict_name(node: ClassifierNode, x: np.ndarray) -> int:
    if x.ndim != 1 or x.shape[0] != node.model.input_dim:
        raise RoutingError(node.name, f"expected {node.model.input_dim} features, got shape {x.shape}")
    return M.predict(node.model, x)


def route_hierarchy(node: ClassifierNode, features) -> RoutingTrace:
    x = np.asarray(features, dtype=np.float64)
    steps = []
    while True:
        c = _predict_name(node, x)
        steps.append((node.name, node.class_names[c]))
        nxt = node.successors.get(c)
        if nxt is None:
            return RoutingTrace(tuple(steps), node.class_names[c], (steps[0][0],))
        node = nxt


def route_chain(chain: FusionChain, features) -> RoutingTrace:
    steps, roots = [], []
    for root in chain.nodes:
        trace = route_hierarchy(root, features)
        steps.extend(trace.steps)
        roots.append(root.name)
        if root.auxiliary_class is None or trace.final_label != root.auxiliary_name:
            return RoutingTrace(tuple(steps), trace.final_label, tuple(roots))
    return RoutingTrace(tuple(steps), chain.fallback_label, tuple(roots))


def reachable_labels(chain: FusionChain) -> set:
    """Labels ``route_chain`` can return, assuming every class is predictable."""
    labels = set()

    def collect(node, is_root):
        for c, name in enumerate(node.class_names):
            if c in node.successors:
                collect(node.successors[c], False)
            elif not (is_root and c == node.auxiliary_class):
                labels.add(name)

    for node in chain.nodes:
        collect(node, True)
    if chain.nodes[-1].auxiliary_class is not None:
        labels.add(chain.fallback_label)
    return labels


def load_description(path) -> FusionChain:
    """Load a chain from a JSON description file.

    Format::

        {
          "version": 1,
          "fallback_label": "Others",
          "chain": ["animals", "vehicles"],
          "nodes": {
            "animals": {"checkpoint": "animals.ckpt",
                        "class_names": ["cat", "dog", "others"],
                        "auxiliary_class": 2,
                        "successors": {"cat": "cat_breeds"}},
            ...
          }
        }

    Checkpoint paths are relative to the description file. Successor keys are
    class names or indices.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    return build_from_description(doc, base_dir=path.parent)


def build_from_description(doc, base_dir=".", models=None) -> FusionChain:
    """Build a chain from a parsed description.

    ``models`` may map node names to already-loaded models; otherwise each
    node's ``checkpoint`` is read relative to ``base_dir``.
    """
    if not isinstance(doc, dict) or doc.get("version", DESCRIPTION_VERSION) != DESCRIPTION_VERSION:
        raise ParseError("description must be an object with version 1")
    specs = doc.get("nodes")
    chain_names = doc.get("chain")
    if not isinstance(specs, dict) or not isinstance(chain_names, list) or not chain_names:
        raise ParseError("description needs 'nodes' (object) and 'chain' (non-empty list)")
    models = dict(models or {})
    built = {}
    visiting = set()

    def build(name):
        if name in built:
            return built[name]
        if name in visiting:
            raise DomainError(f"successor graph has a cycle through {name!r}")
        if name not in specs:
            raise ParseError(f"unknown node {name!r}")
        visiting.add(name)
        spec = specs[name]
        class_names = list(spec.get("class_names") or [])
        if name not in models:
            if "checkpoint" not in spec:
                raise ParseError(f"node {name!r} has no checkpoint")
            models[name] = M.load_checkpoint(Path(base_dir) / spec["checkpoint"])
        successors = {}
        for key, child in (spec.get("successors") or {}).items():
            idx = class_names.index(key) if key in class_names else _as_index(key, name)
            successors[idx] = build(child)
        visiting.discard(name)
        node = ClassifierNode(name, models[name], class_names, spec.get("auxiliary_class"), successors)
        built[name] = node
        return node

    roots = [build(n) for n in chain_names]
    return FusionChain(roots, doc.get("fallback_label", DEFAULT_FALLBACK))


def _as_index(key, node_name):
    try:
        return int(key)
    except (TypeError, ValueError):
        raise ParseError(f"node {node_name!r}: successor key {key!r} is not a class") from None
