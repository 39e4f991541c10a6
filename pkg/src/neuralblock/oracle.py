"""Ground-truth inference at desk scale.

Two independent routes to exact posterior marginals -- brute-force
enumeration over the joint table and variable elimination -- plus exact
renormalized block conditionals. Everything runs in log space so that
deterministic table entries (zeros) stay exact instead of underflowing.
"""

from __future__ import annotations

import dataclasses
import io
import math

import numpy as np

from .models import Assignment, DiscreteModel, ModelError, VariableId, markov_blanket
from .numerics import logsumexp

# Enumeration refuses joints above this many binary-equivalent dimensions.
ENUM_GUARD_BITS = 24.0
# Variable elimination refuses intermediate tables above this many entries.
DEFAULT_VE_SIZE_CAP = 2**22


class OracleSizeError(RuntimeError):
    """Model or intermediate table too large for exact computation."""


class InconsistentEvidenceError(RuntimeError):
    """The conditioning event has zero probability under the model."""


@dataclasses.dataclass(frozen=True)
class MarginalTable:
    """Per-variable posterior vectors, each summing to 1."""

    probs: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        probs = tuple(np.asarray(p, dtype=np.float64) for p in self.probs)
        for i, p in enumerate(probs):
            if p.ndim != 1 or abs(p.sum() - 1.0) > 1e-9 or np.any(p < -1e-12):
                raise ValueError(f"marginal vector {i} is not a distribution: {p}")
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)


@dataclasses.dataclass(frozen=True)
class BlockConditional:
    """Exact joint conditional over an ordered block of variables."""

    block: tuple[VariableId, ...]
    table: np.ndarray  # one axis per block variable, sums to 1

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=np.float64)
        if abs(table.sum() - 1.0) > 1e-9:
            raise ValueError("block conditional does not sum to 1")
        object.__setattr__(self, "block", tuple(int(v) for v in self.block))
        object.__setattr__(self, "table", table)


def _binary_equivalent_dims(model: DiscreteModel, free: list[int]) -> float:
    return sum(math.log2(model.cards[v]) for v in free)


def _check_evidence(model: DiscreteModel, evidence: dict[int, int]) -> None:
    for v, s in evidence.items():
        if not (0 <= v < model.num_vars and 0 <= s < model.cards[v]):
            raise ModelError(f"evidence {v}={s} out of range")


def enumerate_marginals(
    model: DiscreteModel, evidence: Assignment | None = None
) -> MarginalTable:
    """Exact posterior marginals by summing the joint over free variables."""
    evidence = dict(evidence or {})
    _check_evidence(model, evidence)
    free = [v for v in range(model.num_vars) if v not in evidence]
    if _binary_equivalent_dims(model, free) > ENUM_GUARD_BITS:
        raise OracleSizeError(
            f"{len(free)} free variables exceed the {ENUM_GUARD_BITS}-bit enumeration guard"
        )
    pos = {v: i for i, v in enumerate(free)}
    lj = np.zeros([model.cards[v] for v in free])
    for f in _restrict_by_evidence(model, evidence):
        if not f.scope:
            lj = lj + float(f.table)
            continue
        order = np.argsort([pos[v] for v in f.scope])
        view = np.transpose(f.table, order)
        in_scope = set(f.scope)
        shape = [model.cards[v] if v in in_scope else 1 for v in free]
        lj = lj + view.reshape(shape)
    log_z = logsumexp(lj)
    if np.isneginf(log_z):
        raise InconsistentEvidenceError("evidence has zero probability")
    probs: list[np.ndarray] = [None] * model.num_vars  # type: ignore[list-item]
    for axis, v in enumerate(free):
        other = tuple(i for i in range(len(free)) if i != axis)
        marg = np.exp(logsumexp(lj, axis=other) - log_z)
        probs[v] = marg / marg.sum()
    for v, s in evidence.items():
        delta = np.zeros(model.cards[v])
        delta[s] = 1.0
        probs[v] = delta
    return MarginalTable(probs=tuple(probs))


@dataclasses.dataclass(frozen=True)
class _LogFactor:
    scope: tuple[int, ...]
    table: np.ndarray

    def sum_out(self, var: int) -> "_LogFactor":
        axis = self.scope.index(var)
        return _LogFactor(
            scope=self.scope[:axis] + self.scope[axis + 1 :],
            table=logsumexp(self.table, axis=axis),
        )


def _multiply(factors: list[_LogFactor], cards: tuple[int, ...]) -> _LogFactor:
    scope = tuple(sorted({v for f in factors for v in f.scope}))
    pos = {v: i for i, v in enumerate(scope)}
    total = np.zeros([cards[v] for v in scope])
    for f in factors:
        order = np.argsort([pos[v] for v in f.scope])
        view = np.transpose(f.table, order)
        shape = [cards[v] if v in set(f.scope) else 1 for v in scope]
        total = total + view.reshape(shape)
    return _LogFactor(scope=scope, table=total)


def _restrict_by_evidence(
    model: DiscreteModel, evidence: dict[int, int]
) -> list["_LogFactor"]:
    out: list[_LogFactor] = []
    for f in model.factors:
        keep = [i for i, v in enumerate(f.scope) if v not in evidence]
        index = tuple(evidence[v] if v in evidence else slice(None) for v in f.scope)
        out.append(
            _LogFactor(scope=tuple(f.scope[i] for i in keep), table=f.log_values[index])
        )
    return out


def min_fill_order(scopes: list[tuple[int, ...]], elim: set[int]) -> list[int]:
    """Min-fill elimination order over `elim`, ties broken by lowest index."""
    adj: dict[int, set[int]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set()).update(u for u in scope if u != v)
    order = []
    remaining = set(elim)
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            nbrs = [u for u in adj.get(v, ()) if u in adj]
            fill = sum(
                1
                for i, a in enumerate(nbrs)
                for b in nbrs[i + 1 :]
                if b not in adj[a]
            )
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
        nbrs = [u for u in adj.get(best, ()) if u in adj]
        for i, a in enumerate(nbrs):
            for b in nbrs[i + 1 :]:
                adj[a].add(b)
                adj[b].add(a)
        for u in nbrs:
            adj[u].discard(best)
        adj.pop(best, None)
        order.append(best)
        remaining.discard(best)
    return order


def _eliminate(
    factors: list[_LogFactor],
    cards: tuple[int, ...],
    order: list[int],
    size_cap: int,
) -> list[_LogFactor]:
    live = list(factors)
    for var in order:
        touching = [f for f in live if var in f.scope]
        if not touching:
            continue
        live = [f for f in live if var not in f.scope]
        merged_scope = {v for f in touching for v in f.scope}
        size = np.prod([cards[v] for v in merged_scope], dtype=np.float64)
        if size > size_cap:
            raise OracleSizeError(
                f"eliminating variable {var} would build a table of {int(size)} entries"
            )
        live.append(_multiply(touching, cards).sum_out(var))
    return live


def variable_elimination_marginals(
    model: DiscreteModel,
    evidence: Assignment | None = None,
    order: list[VariableId] | None = None,
    size_cap: int = DEFAULT_VE_SIZE_CAP,
) -> MarginalTable:
    """Exact posterior marginals by per-query variable elimination.

    `order` optionally fixes the elimination order (query variables are
    skipped); by default a min-fill order is computed per query.
    """
    evidence = dict(evidence or {})
    _check_evidence(model, evidence)
    base = _restrict_by_evidence(model, evidence)
    free = [v for v in range(model.num_vars) if v not in evidence]
    scopes = [f.scope for f in base]
    probs: list[np.ndarray] = [None] * model.num_vars  # type: ignore[list-item]
    for q in free:
        if order is not None:
            elim = [v for v in order if v != q and v not in evidence]
            missing = set(free) - set(elim) - {q}
            if missing:
                raise ModelError(f"elimination order misses variables {sorted(missing)}")
        else:
            elim = min_fill_order(scopes, set(free) - {q})
        remaining = _eliminate(base, model.cards, elim, size_cap)
        result = _multiply(
            [f for f in remaining if f.scope] or [_LogFactor((q,), np.zeros(model.cards[q]))],
            model.cards,
        )
        const = sum(float(f.table) for f in remaining if not f.scope)
        log_marg = result.table + const
        if result.scope != (q,):
            raise ModelError(f"elimination left scope {result.scope}, expected ({q},)")
        log_z = logsumexp(log_marg)
        if np.isneginf(log_z):
            raise InconsistentEvidenceError("evidence has zero probability")
        p = np.exp(log_marg - log_z)
        probs[q] = p / p.sum()
    for v, s in evidence.items():
        delta = np.zeros(model.cards[v])
        delta[s] = 1.0
        probs[v] = delta
    return MarginalTable(probs=tuple(probs))


def exact_block_conditional(
    model: DiscreteModel,
    block: list[VariableId],
    conditioning: Assignment,
) -> BlockConditional:
    """Exact renormalized joint over `block` given its surroundings.

    Only factors touching the block enter, so the result depends on the
    conditioning assignment exclusively through the Markov blanket.
    """
    block = [int(v) for v in block]
    block_set = set(block)
    conditioning = dict(conditioning)
    mb = markov_blanket(model, block_set)
    missing = mb - set(conditioning)
    if missing:
        raise ModelError(f"conditioning misses Markov blanket variables {sorted(missing)}")
    bits = sum(math.log2(model.cards[v]) for v in block)
    if bits > 16.0:
        raise OracleSizeError("block exceeds 16 binary-equivalent dimensions")
    cards = [model.cards[v] for v in block]
    n_assign = int(np.prod(cards))
    grids = np.indices(cards).reshape(len(block), n_assign)
    col_of = {v: i for i, v in enumerate(block)}
    log_p = np.zeros(n_assign)
    seen: set[int] = set()
    for v in block:
        for fi in model.factors_of_var[v]:
            if fi in seen:
                continue
            seen.add(fi)
            f = model.factors[fi]
            idx = tuple(
                grids[col_of[u]] if u in block_set else np.full(n_assign, conditioning[u])
                for u in f.scope
            )
            log_p = log_p + f.log_values[idx]
    log_z = logsumexp(log_p)
    if np.isneginf(log_z):
        raise InconsistentEvidenceError("conditioning event has zero probability")
    table = np.exp(log_p - log_z).reshape(cards)
    return BlockConditional(block=tuple(block), table=table / table.sum())


def marginals_to_mar(marginals: MarginalTable) -> str:
    """UAI .MAR-style text: variable count, then cardinality + probabilities."""
    buf = io.StringIO()
    buf.write(f"{len(marginals)}\n")
    for p in marginals.probs:
        buf.write(" ".join([str(len(p))] + [f"{x:.17g}" for x in p]) + "\n")
    return buf.getvalue()


def parse_mar(text: str) -> MarginalTable:
    """Inverse of marginals_to_mar."""
    tokens = iter(text.split())
    try:
        n = int(next(tokens))
        probs = []
        for _ in range(n):
            card = int(next(tokens))
            probs.append(np.array([float(next(tokens)) for _ in range(card)]))
    except StopIteration:
        raise ValueError("marginal file ended before all entries were read") from None
    if next(tokens, None) is not None:
        raise ValueError("marginal file has trailing tokens")
    return MarginalTable(probs=tuple(probs))


def marginals_to_csv(marginals: MarginalTable) -> str:
    buf = io.StringIO()
    buf.write("variable,state,probability\n")
    for v, p in enumerate(marginals.probs):
        for s, x in enumerate(p):
            buf.write(f"{v},{s},{x:.17g}\n")
    return buf.getvalue()
