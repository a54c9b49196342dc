"""Skeleton topology loaded from JSON config files."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .exceptions import ConfigInvalid


@dataclass(frozen=True)
class Skeleton:
    """Joint names, root joint and a parent->child edge tree.

    Instances are immutable and hashable, so they can be compared cheaply
    when checking that two poses share a topology.
    """

    joint_names: tuple
    root_index: int
    edges: tuple
    name: str = "custom"

    def __post_init__(self):
        names = tuple(str(n) for n in self.joint_names)
        edges = tuple((int(p), int(c)) for p, c in self.edges)
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "root_index", int(self.root_index))
        n = len(names)
        if n == 0:
            raise ConfigInvalid("skeleton needs at least one joint")
        if len(set(names)) != n:
            raise ConfigInvalid("joint names must be unique")
        if not 0 <= self.root_index < n:
            raise ConfigInvalid(f"root index {self.root_index} out of range")
        if len(edges) != n - 1:
            raise ConfigInvalid(f"a tree over {n} joints needs {n - 1} edges, got {len(edges)}")
        parent = {}
        for p, c in edges:
            if not (0 <= p < n and 0 <= c < n) or p == c:
                raise ConfigInvalid(f"bad edge ({p}, {c})")
            if c in parent or c == self.root_index:
                raise ConfigInvalid(f"joint {c} has more than one parent")
            parent[c] = p
        # every joint must reach the root without cycles
        for j in range(n):
            seen = set()
            while j != self.root_index:
                if j in seen or j not in parent:
                    raise ConfigInvalid("edges do not form a tree rooted at the root joint")
                seen.add(j)
                j = parent[j]

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def parents(self) -> list:
        """Parent index per joint, -1 for the root."""
        out = [-1] * self.joint_count
        for p, c in self.edges:
            out[c] = p
        return out

    def topological_edges(self) -> list:
        """Edges ordered so every parent is placed before its children."""
        children = {}
        for p, c in self.edges:
            children.setdefault(p, []).append(c)
        order, stack = [], [self.root_index]
        while stack:
            j = stack.pop()
            for c in reversed(children.get(j, [])):
                order.append((j, c))
                stack.append(c)
        return order

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "root": self.joint_names[self.root_index],
            "edges": [[self.joint_names[p], self.joint_names[c]] for p, c in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            names = list(d["joint_names"])
            lookup = {n: i for i, n in enumerate(names)}
            root = d["root"]
            root_index = lookup[root] if isinstance(root, str) else int(root)
            edges = [
                (lookup[p] if isinstance(p, str) else int(p), lookup[c] if isinstance(c, str) else int(c))
                for p, c in d["edges"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"malformed skeleton config: {exc}") from exc
        return cls(tuple(names), root_index, tuple(edges), str(d.get("name", "custom")))


def load_skeleton(path) -> Skeleton:
    with open(path, encoding="utf-8") as fh:
        return Skeleton.from_dict(json.load(fh))


@lru_cache(maxsize=None)
def default_skeleton() -> Skeleton:
    """The 17-joint Human3.6M-style layout shipped in ``data/h36m17.json``."""
    text = resources.files("poselift").joinpath("data/h36m17.json").read_text(encoding="utf-8")
    return Skeleton.from_dict(json.loads(text))


def resolve_skeleton(spec=None) -> Skeleton:
    if spec is None:
        return default_skeleton()
    if isinstance(spec, Skeleton):
        return spec
    if isinstance(spec, dict):
        return Skeleton.from_dict(spec)
    return load_skeleton(Path(spec))
