"""Discrete factor graphs and Bayesian networks.

Models are immutable after construction and safe to share across chains.
Factor tables are dense numpy arrays, row-major in declared scope order;
that order is the canonical identity used by the input encoders downstream.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from typing import Mapping, Union

import numpy as np

# Log of zero probability. Plain IEEE -inf: it propagates through sums and
# through the guarded log-sum-exp helpers without ever producing NaN.
LOG_ZERO = float("-inf")

# Variables are dense indices 0..V-1 within a model.
VariableId = int

# A full assignment is an integer state vector over all variables; a partial
# assignment (evidence) maps variable index -> state.
Assignment = Union[np.ndarray, Mapping[int, int]]


class ModelError(ValueError):
    """Raised for structurally invalid models or out-of-domain queries."""


@dataclasses.dataclass(frozen=True)
class FactorTable:
    """A dense non-negative table over an ordered scope of variables.

    ``values`` has one axis per scope variable, in scope order, so the
    flattened (C-order) layout enumerates joint assignments row-major.
    """

    scope: tuple[VariableId, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if len(self.scope) != values.ndim:
            raise ModelError(
                f"scope has {len(self.scope)} variables but table has "
                f"{values.ndim} axes"
            )
        if len(set(self.scope)) != len(self.scope):
            raise ModelError(f"repeated variable in scope {self.scope}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ModelError("factor entries must be finite and >= 0")
        object.__setattr__(self, "scope", tuple(int(v) for v in self.scope))
        object.__setattr__(self, "values", values)

    @cached_property
    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values)


@dataclasses.dataclass(frozen=True)
class DiscreteModel:
    """A discrete graphical model: variables, cardinalities, factors.

    ``kind`` is ``"directed"`` (Bayesian network: one CPT per variable with
    scope ``(*parents, child)``, rows summing to 1) or ``"undirected"``
    (arbitrary non-negative factors, no normalization requirement).
    """

    cards: tuple[int, ...]
    factors: tuple[FactorTable, ...]
    kind: str
    parents: tuple[tuple[VariableId, ...], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "cards", tuple(int(c) for c in self.cards))
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.kind not in ("directed", "undirected"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if any(c < 2 for c in self.cards):
            raise ModelError("variable cardinalities must be >= 2")
        n = self.num_vars
        for f in self.factors:
            for v in f.scope:
                if not 0 <= v < n:
                    raise ModelError(f"factor scope names unknown variable {v}")
            if f.values.shape != tuple(self.cards[v] for v in f.scope):
                raise ModelError(
                    f"table shape {f.values.shape} does not match scope "
                    f"cardinalities for scope {f.scope}"
                )
        if self.kind == "directed":
            if self.parents is None:
                object.__setattr__(
                    self,
                    "parents",
                    tuple(f.scope[:-1] for f in sorted(self.factors, key=lambda f: f.scope[-1])),
                )
            object.__setattr__(
                self, "parents", tuple(tuple(p) for p in self.parents)
            )
            if len(self.parents) != n or len(self.factors) != n:
                raise ModelError("directed model needs one CPT per variable")
            children = [f.scope[-1] for f in self.factors]
            if sorted(children) != list(range(n)):
                raise ModelError("directed model needs exactly one CPT per variable")
            for f in self.factors:
                child = f.scope[-1]
                if f.scope[:-1] != self.parents[child]:
                    raise ModelError(
                        f"CPT scope {f.scope} disagrees with parent list "
                        f"{self.parents[child]} for variable {child}"
                    )
                row_sums = f.values.sum(axis=-1)
                if np.any(np.abs(row_sums - 1.0) > 1e-9):
                    raise ModelError(f"CPT rows for variable {child} do not sum to 1")
            self.topo_order  # raises on cycles

    @property
    def num_vars(self) -> int:
        return len(self.cards)

    @cached_property
    def cpt_of(self) -> tuple[FactorTable, ...]:
        """CPT per variable, indexed by child (directed models only)."""
        if self.kind != "directed":
            raise ModelError("cpt_of is only defined for directed models")
        by_child = {f.scope[-1]: f for f in self.factors}
        return tuple(by_child[v] for v in range(self.num_vars))

    @cached_property
    def topo_order(self) -> tuple[VariableId, ...]:
        """Topological order of a directed model (Kahn's algorithm)."""
        if self.kind != "directed":
            raise ModelError("topo_order is only defined for directed models")
        n = self.num_vars
        children: list[list[int]] = [[] for _ in range(n)]
        in_deg = [0] * n
        for v in range(n):
            for p in self.parents[v]:
                children[p].append(v)
                in_deg[v] += 1
        frontier = [v for v in range(n) if in_deg[v] == 0]
        order: list[int] = []
        while frontier:
            v = frontier.pop()
            order.append(v)
            for c in children[v]:
                in_deg[c] -= 1
                if in_deg[c] == 0:
                    frontier.append(c)
        if len(order) != n:
            raise ModelError("directed model has a cycle")
        return tuple(order)

    @cached_property
    def factors_of_var(self) -> tuple[tuple[int, ...], ...]:
        """For each variable, indices of the factors whose scope contains it."""
        touch: list[list[int]] = [[] for _ in range(self.num_vars)]
        for i, f in enumerate(self.factors):
            for v in f.scope:
                touch[v].append(i)
        return tuple(tuple(t) for t in touch)


def markov_blanket(model: DiscreteModel, block: set[VariableId]) -> set[VariableId]:
    """Minimal separating set for ``block``: union of co-scoped variables.

    For directed models the factor scopes are ``(*parents, child)``, so this
    yields parents, children, and co-parents of the block.
    """
    block = set(block)
    for v in block:
        if not 0 <= v < model.num_vars:
            raise ModelError(f"unknown variable {v}")
    out: set[int] = set()
    for v in block:
        for fi in model.factors_of_var[v]:
            out.update(model.factors[fi].scope)
    return out - block


def _require_full(model: DiscreteModel, a: Assignment) -> np.ndarray:
    if isinstance(a, Mapping):
        if len(a) != model.num_vars:
            raise ModelError(
                f"full assignment required: got {len(a)} of {model.num_vars} variables"
            )
        arr = np.empty(model.num_vars, dtype=np.int64)
        for v, s in a.items():
            arr[v] = s
    else:
        arr = np.asarray(a, dtype=np.int64)
        if arr.shape != (model.num_vars,):
            raise ModelError(
                f"full assignment required: shape {arr.shape} vs {model.num_vars} variables"
            )
    for v in range(model.num_vars):
        if not 0 <= arr[v] < model.cards[v]:
            raise ModelError(f"state {arr[v]} out of range for variable {v}")
    return arr


def log_joint(model: DiscreteModel, a: Assignment) -> float:
    """Sum of log factor entries at a full assignment; LOG_ZERO on any 0."""
    arr = _require_full(model, a)
    total = 0.0
    for f in model.factors:
        total += f.log_values[tuple(arr[list(f.scope)])]
    return float(total)


def log_joint_many(model: DiscreteModel, arrs: np.ndarray) -> np.ndarray:
    """Vectorized ``log_joint`` over rows of an (n, V) state matrix."""
    arrs = np.asarray(arrs, dtype=np.int64)
    total = np.zeros(arrs.shape[0])
    for f in model.factors:
        idx = tuple(arrs[:, list(f.scope)].T)
        total += f.log_values[idx]
    return total


def sample_prior(model: DiscreteModel, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sample from a directed model's prior."""
    if model.kind != "directed":
        raise ModelError("prior sampling requires a directed model")
    state = np.zeros(model.num_vars, dtype=np.int64)
    for v in model.topo_order:
        cpt = model.cpt_of[v]
        row = cpt.values[tuple(state[list(cpt.scope[:-1])])]
        state[v] = rng.choice(len(row), p=row)
    return state


def sample_prior_many(
    model: DiscreteModel, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n ancestral samples, vectorized across draws; returns (n, V)."""
    if model.kind != "directed":
        raise ModelError("prior sampling requires a directed model")
    states = np.zeros((n, model.num_vars), dtype=np.int64)
    u = rng.random((n, model.num_vars))
    for v in model.topo_order:
        cpt = model.cpt_of[v]
        parents = list(cpt.scope[:-1])
        if parents:
            rows = cpt.values[tuple(states[:, parents].T)]
        else:
            rows = np.broadcast_to(cpt.values, (n, model.cards[v]))
        states[:, v] = (rows.cumsum(axis=1) < u[:, v, None]).sum(axis=1)
    return states
