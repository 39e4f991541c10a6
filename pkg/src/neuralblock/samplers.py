"""Single-site Gibbs, exact block Gibbs, and the shared MH accept/reject step.

One chain owns one mutable ChainState and one counter-based RNG stream;
models and trained proposals are shared read-only across chains.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Callable, Iterable, Mapping, Sequence, TextIO

import numpy as np

from .models import Assignment, DiscreteModel, VariableId, log_joint
from .numerics import logsumexp
from .oracle import exact_block_conditional

LOG_ZERO = float("-inf")


class SamplerError(RuntimeError):
    pass


def chain_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based per-chain stream: equal (seed, stream) pairs replay
    bit-identically regardless of how many other chains run."""
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


@dataclasses.dataclass
class ChainState:
    """One chain's mutable position.

    `assignment` covers every variable (evidence included, clamped);
    `epoch` counts completed scheduled passes over the latent variables.
    """

    model: DiscreteModel
    assignment: np.ndarray
    evidence: Mapping[VariableId, int]
    rng: np.random.Generator
    epoch: int = 0

    def __post_init__(self) -> None:
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.shape != (self.model.num_vars,):
            raise SamplerError(f"assignment shape {self.assignment.shape}")
        self.evidence = dict(self.evidence)
        for v, s in self.evidence.items():
            if self.assignment[v] != s:
                raise SamplerError(f"assignment contradicts evidence at {v}")

    @property
    def latents(self) -> tuple[VariableId, ...]:
        return tuple(v for v in range(self.model.num_vars) if v not in self.evidence)

    def log_joint(self) -> float:
        return log_joint(self.model, self.assignment)


def _ancestral_given_evidence(
    model: DiscreteModel,
    evidence: Mapping[VariableId, int],
    rng: np.random.Generator,
) -> np.ndarray:
    out = np.zeros(model.num_vars, dtype=np.int64)
    for v in model.topo_order:
        if v in evidence:
            out[v] = evidence[v]
            continue
        cpt = model.cpt_of[v]
        row = cpt.values[tuple(out[list(cpt.scope[:-1])])]
        out[v] = _draw_categorical(row, rng)
    return out


def _draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    # clip guards fp cumsum falling a ulp short of the drawn uniform
    idx = np.searchsorted(np.cumsum(probs), rng.random(), side="right")
    return int(min(idx, len(probs) - 1))


def make_chain_state(
    model: DiscreteModel,
    evidence: Mapping[VariableId, int] | None = None,
    seed: int = 0,
    stream: int = 0,
    max_tries: int = 100,
) -> ChainState:
    """Initialize a chain whose assignment has positive joint probability.

    Directed hosts draw latents ancestrally with evidence clamped; undirected
    hosts draw uniformly. Zero-probability draws (deterministic factors
    contradicting the evidence path) are redrawn up to `max_tries` times.
    """
    evidence = dict(evidence or {})
    rng = chain_rng(seed, stream)
    for _ in range(max_tries):
        if model.kind == "directed":
            assignment = _ancestral_given_evidence(model, evidence, rng)
        else:
            assignment = np.array(
                [rng.integers(c) for c in model.cards], dtype=np.int64
            )
            for v, s in evidence.items():
                assignment[v] = s
        if log_joint(model, assignment) > LOG_ZERO:
            return ChainState(
                model=model, assignment=assignment, evidence=evidence, rng=rng
            )
    raise SamplerError(
        f"no positive-probability initialization found in {max_tries} tries"
    )


# ---------------------------------------------------------------------------
# Single-site Gibbs


def single_site_conditional(
    model: DiscreteModel, assignment: np.ndarray, var: VariableId
) -> np.ndarray:
    """Full conditional p(var | everything else) as a probability vector."""
    logp = np.zeros(model.cards[var])
    for fi in model.factors_of_var[var]:
        f = model.factors[fi]
        idx = tuple(
            slice(None) if u == var else int(assignment[u]) for u in f.scope
        )
        logp = logp + f.log_values[idx]
    z = logsumexp(logp)
    if z == LOG_ZERO:
        raise SamplerError(f"variable {var} has zero-support conditional")
    return np.exp(logp - z)


def gibbs_sweep(
    model: DiscreteModel,
    state: ChainState,
    schedule: Sequence[VariableId] | None = None,
) -> ChainState:
    """One pass of single-site resampling in ascending variable order.

    Every scheduled variable is drawn exactly from its full conditional;
    moves are always accepted. Advances the epoch counter by one.
    """
    if schedule is None:
        schedule = state.latents
    for var in schedule:
        if var in state.evidence:
            raise SamplerError(f"scheduled variable {var} is evidence")
        probs = single_site_conditional(model, state.assignment, var)
        state.assignment[var] = _draw_categorical(probs, state.rng)
    state.epoch += 1
    return state


# ---------------------------------------------------------------------------
# Metropolis-Hastings on a block

BlockValues = tuple[int, ...]
ProposalSampler = Callable[[np.ndarray, np.random.Generator], BlockValues]
ProposalDensity = Callable[[np.ndarray, BlockValues], float]


@dataclasses.dataclass(frozen=True)
class ProposalOutcome:
    """Bookkeeping for one proposed block move."""

    proposed: Mapping[VariableId, int]
    log_q_forward: float
    log_q_reverse: float
    accepted: bool
    log_alpha: float
    flagged: bool = False


def _touched_factors(model: DiscreteModel, block: Sequence[VariableId]) -> list[int]:
    seen: set[int] = set()
    out: list[int] = []
    for v in block:
        for fi in model.factors_of_var[v]:
            if fi not in seen:
                seen.add(fi)
                out.append(fi)
    return out


def _local_log_score(
    model: DiscreteModel, factor_ids: Iterable[int], assignment: np.ndarray
) -> float:
    total = 0.0
    for fi in factor_ids:
        f = model.factors[fi]
        total += float(f.log_values[tuple(assignment[list(f.scope)])])
        if total == LOG_ZERO:
            return LOG_ZERO
    return total


def mh_step(
    model: DiscreteModel,
    state: ChainState,
    block: Sequence[VariableId],
    proposal_sampler: ProposalSampler,
    proposal_density: ProposalDensity,
) -> tuple[ChainState, ProposalOutcome]:
    """One MH-corrected block move; only the block changes.

    `proposal_sampler(assignment, rng)` draws block values given the full
    current assignment; `proposal_density(assignment, values)` evaluates the
    log proposal density of `values` from that assignment, so the reverse
    density is the same callable evaluated at the proposed assignment. A
    non-finite forward density or NaN anywhere flags the step and counts it
    as rejected; the target score uses only factors touching the block.
    """
    block = [int(v) for v in block]
    for v in block:
        if v in state.evidence:
            raise SamplerError(f"block variable {v} is evidence")
    current: BlockValues = tuple(int(state.assignment[v]) for v in block)
    proposed = tuple(int(s) for s in proposal_sampler(state.assignment, state.rng))
    if len(proposed) != len(block):
        raise SamplerError("proposal length does not match block")

    log_q_fwd = float(proposal_density(state.assignment, proposed))
    new_assignment = state.assignment.copy()
    for v, s in zip(block, proposed):
        new_assignment[v] = s
    log_q_rev = float(proposal_density(new_assignment, current))

    outcome_base = dict(
        proposed=dict(zip(block, proposed)),
        log_q_forward=log_q_fwd,
        log_q_reverse=log_q_rev,
    )
    if (
        np.isnan(log_q_fwd)
        or np.isnan(log_q_rev)
        or log_q_fwd in (np.inf, LOG_ZERO)
        or log_q_rev == np.inf
    ):
        return state, ProposalOutcome(
            accepted=False, log_alpha=LOG_ZERO, flagged=True, **outcome_base
        )

    touched = _touched_factors(model, block)
    new_lp = _local_log_score(model, touched, new_assignment)
    old_lp = _local_log_score(model, touched, state.assignment)
    if new_lp == LOG_ZERO or log_q_rev == LOG_ZERO:
        log_alpha = LOG_ZERO
    elif old_lp == LOG_ZERO:
        log_alpha = 0.0  # escape a zero-probability state unconditionally
    else:
        log_alpha = min(0.0, (new_lp + log_q_rev) - (old_lp + log_q_fwd))

    with np.errstate(divide="ignore"):
        accepted = np.log(state.rng.random()) < log_alpha
    if accepted:
        state.assignment = new_assignment
    return state, ProposalOutcome(
        accepted=bool(accepted), log_alpha=float(log_alpha), **outcome_base
    )


def exact_block_gibbs_step(
    model: DiscreteModel, block: Sequence[VariableId], state: ChainState
) -> ChainState:
    """Resample `block` jointly from its exact conditional (always accepted)."""
    block = [int(v) for v in block]
    conditioning = {
        v: int(state.assignment[v])
        for v in range(model.num_vars)
        if v not in block
    }
    cond = exact_block_conditional(model, block, conditioning)
    flat = cond.table.reshape(-1)
    values = np.unravel_index(_draw_categorical(flat, state.rng), cond.table.shape)
    for v, s in zip(block, values):
        state.assignment[v] = int(s)
    return state


# ---------------------------------------------------------------------------
# Trace output


TRACE_HEADER = "epoch,wall_ns,kind,block,accepted,log_joint"


class TraceWriter:
    """Appends one CSV row per recorded step."""

    def __init__(self, fh: TextIO):
        self._fh = fh
        fh.write(TRACE_HEADER + "\n")

    def record(
        self,
        epoch: int,
        kind: str,
        block: Sequence[VariableId],
        accepted: bool,
        log_joint_value: float,
        wall_ns: int | None = None,
    ) -> None:
        wall = time.monotonic_ns() if wall_ns is None else wall_ns
        block_label = "|".join(map(str, block))
        self._fh.write(
            f"{epoch},{wall},{kind},{block_label},{int(accepted)},{log_joint_value:.17g}\n"
        )
