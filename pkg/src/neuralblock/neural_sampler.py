"""Neural block MCMC: trained proposals scheduled per latent variable.

A ProposalLibrary maps motif names to trained mixture networks. For every
latent variable the schedule either owns a motif instantiation whose proposed
block is centered at that variable, or falls back to single-site Gibbs, so
one epoch updates every latent variable exactly once. Block moves go through
the shared MH correction, which keeps the stationary distribution correct no
matter how good or bad the proposal is.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Mapping, Sequence

import numpy as np

from . import mdn
from .mdn import MdnConfig, MdnParams
from .models import DiscreteModel, VariableId
from .motifs import (
    Motif,
    MotifInstantiation,
    _c_value_features,
    detect_instantiations,
    encode_input,
    get_motif,
)
from .oracle import MarginalTable
from .samplers import (
    ChainState,
    ProposalOutcome,
    SamplerError,
    TraceWriter,
    _draw_categorical,
    exact_block_gibbs_step,
    make_chain_state,
    mh_step,
    single_site_conditional,
)


class ScheduleError(SamplerError):
    """A move plan references something the library or model cannot supply."""


class VersionError(SamplerError):
    """Stored parameters were trained under a different encoding layout."""


# ---------------------------------------------------------------------------
# Proposal library


@dataclasses.dataclass(frozen=True)
class LibraryEntry:
    motif: Motif
    config: MdnConfig
    params: MdnParams


class ProposalLibrary:
    """Trained proposals keyed by motif name, shared read-only across chains."""

    def __init__(self) -> None:
        self._entries: dict[str, LibraryEntry] = {}

    def add(
        self,
        motif: Motif,
        config: MdnConfig,
        params: MdnParams,
        encoding_tag: str | None = None,
    ) -> None:
        if encoding_tag is not None and encoding_tag != motif.encoding_tag:
            raise VersionError(
                f"params tagged {encoding_tag!r} but motif {motif.name!r} "
                f"encodes as {motif.encoding_tag!r}"
            )
        if config.input_dim != motif.input_dim or config.output_spec != motif.output_spec:
            raise VersionError(
                f"network dims do not match motif {motif.name!r}: "
                f"{config.input_dim} vs {motif.input_dim}"
            )
        self._entries[motif.name] = LibraryEntry(motif=motif, config=config, params=params)

    def add_from_file(self, path: str, motif: Motif | None = None) -> LibraryEntry:
        """Load saved parameters; the sidecar's motif name resolves the motif
        unless one is passed (needed for ad-hoc block motifs)."""
        config, params, tag, metadata = mdn.load_params(path)
        if motif is None:
            name = (metadata or {}).get("motif")
            if not isinstance(name, str):
                raise VersionError(f"{path} metadata names no motif")
            motif = get_motif(name)
        self.add(motif, config, params, encoding_tag=tag)
        return self._entries[motif.name]

    def get(self, name: str) -> LibraryEntry:
        if name not in self._entries:
            raise ScheduleError(f"no trained proposal for motif {name!r}")
        return self._entries[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# Schedules


@dataclasses.dataclass(frozen=True)
class VariablePlan:
    """How one latent variable gets updated each epoch."""

    var: VariableId
    kind: str  # "neural" | "single"
    inst: MotifInstantiation | None = None
    motif_name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("neural", "single"):
            raise ScheduleError(f"unknown move kind {self.kind!r}")
        if self.kind == "neural" and (self.inst is None or self.motif_name is None):
            raise ScheduleError("neural plan needs an instantiation and motif name")


@dataclasses.dataclass(frozen=True)
class SamplerSchedule:
    """One plan per latent variable plus the neural/single interleaving knob.

    mix_ratio is the per-epoch probability that a neural plan actually runs
    its block move instead of single-site Gibbs; the endpoints 0 and 1 put
    the chain's RNG stream in lockstep with the pure baselines.
    """

    plans: tuple[VariablePlan, ...]
    mix_ratio: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ScheduleError(f"mix_ratio {self.mix_ratio} outside [0, 1]")
        seen = [p.var for p in self.plans]
        if len(set(seen)) != len(seen):
            raise ScheduleError("schedule lists a variable twice")

    @property
    def n_neural(self) -> int:
        return sum(p.kind == "neural" for p in self.plans)


def build_schedule(
    model: DiscreteModel,
    evidence: Mapping[VariableId, int] | None,
    library: ProposalLibrary,
    motif_names: Sequence[str] | None = None,
    mix_ratio: float = 1.0,
) -> SamplerSchedule:
    """Per-latent plans: a block centered at the variable when some library
    motif instantiates there (first listed motif wins), else single-site.

    Detection already drops placements whose proposed block touches
    evidence, so variables near evidence fall back automatically; evidence
    inside the conditioning set just contributes its observed value.
    """
    evidence = dict(evidence or {})
    names = tuple(motif_names) if motif_names is not None else library.names()
    centered: dict[VariableId, tuple[str, MotifInstantiation]] = {}
    for name in names:
        entry = library.get(name)
        for inst in detect_instantiations(model, entry.motif, evidence):
            center = inst.b_vars[len(inst.b_vars) // 2]
            centered.setdefault(center, (name, inst))
    plans = []
    for v in range(model.num_vars):
        if v in evidence:
            continue
        if v in centered:
            name, inst = centered[v]
            plans.append(VariablePlan(var=v, kind="neural", inst=inst, motif_name=name))
        else:
            plans.append(VariablePlan(var=v, kind="single"))
    return SamplerSchedule(plans=tuple(plans), mix_ratio=mix_ratio)


def _validate_schedule(
    model: DiscreteModel,
    evidence: Mapping[VariableId, int],
    schedule: SamplerSchedule,
    library: ProposalLibrary,
) -> None:
    latents = {v for v in range(model.num_vars) if v not in evidence}
    planned = {p.var for p in schedule.plans}
    if planned != latents:
        missing = sorted(latents - planned)
        extra = sorted(planned - latents)
        raise ScheduleError(
            f"schedule must cover every latent variable exactly once "
            f"(missing {missing}, extraneous {extra})"
        )
    for plan in schedule.plans:
        if plan.kind != "neural":
            continue
        entry = library.get(plan.motif_name)
        if entry.motif.encoding_tag != plan.inst.motif.encoding_tag:
            raise VersionError(
                f"plan for variable {plan.var} encodes as "
                f"{plan.inst.motif.encoding_tag!r} but the library entry was "
                f"trained under {entry.motif.encoding_tag!r}"
            )
        if plan.var not in plan.inst.b_vars:
            raise ScheduleError(
                f"variable {plan.var} is not in its own planned block"
            )
        overlap = set(plan.inst.b_vars) & set(evidence)
        if overlap:
            raise ScheduleError(
                f"planned block {plan.inst.b_vars} proposes evidence {sorted(overlap)}"
            )


# ---------------------------------------------------------------------------
# One neural block move


class _CachedEncoder:
    """encode_input split into a per-step conditioning prefix and a constant
    parameter suffix: the instantiation's factor features never change during
    inference, so they are encoded once."""

    def __init__(self, inst: MotifInstantiation):
        self.inst = inst
        self._c_vars = list(inst.c_vars)
        self._cards = [inst.model.cards[v] for v in inst.c_vars]
        probe = np.zeros(inst.model.num_vars, dtype=np.int64)
        full = encode_input(inst, probe)
        prefix_len = sum(1 if c == 2 else c for c in self._cards)
        self._suffix = full[prefix_len:]

    def encode(self, assignment: np.ndarray) -> np.ndarray:
        values = [int(assignment[v]) for v in self._c_vars]
        feats = _c_value_features(self._cards, values)
        return np.concatenate(feats + [self._suffix])


def neural_block_step(
    model: DiscreteModel,
    state: ChainState,
    inst: MotifInstantiation,
    library: ProposalLibrary,
    encoder: _CachedEncoder | None = None,
) -> tuple[ChainState, ProposalOutcome]:
    """One MH-corrected block move from the trained proposal for `inst`.

    The move only changes B, so the conditioning encoding is the same before
    and after: one network call yields the distribution that both the forward
    and the reverse densities are read from.
    """
    entry = library.get(inst.motif.name)
    if entry.motif.encoding_tag != inst.motif.encoding_tag:
        raise VersionError(
            f"instantiation encodes as {inst.motif.encoding_tag!r} but the "
            f"library entry was trained under {entry.motif.encoding_tag!r}"
        )
    if encoder is None:
        x = encode_input(inst, state.assignment)
    else:
        x = encoder.encode(state.assignment)
    proposal = mdn.forward(entry.config, entry.params, x)

    def propose(assignment: np.ndarray, rng: np.random.Generator):
        return mdn.sample_values(proposal, rng)

    def density(assignment: np.ndarray, values) -> float:
        return mdn.log_density(proposal, values)

    return mh_step(model, state, inst.b_vars, propose, density)


# ---------------------------------------------------------------------------
# The epoch loop


@dataclasses.dataclass(frozen=True)
class Checkpoint:
    """Cumulative post-epoch state counts at one point along the chain."""

    epoch: int
    wall_ns: int
    counts: np.ndarray


@dataclasses.dataclass
class InferenceTrace:
    """What one chain recorded: marginal accumulators by default, full
    per-epoch samples only when asked for."""

    model: DiscreteModel
    evidence: dict[VariableId, int]
    epochs_run: int
    counts: np.ndarray  # (num_vars, max_card) post-epoch state tallies
    checkpoints: tuple[Checkpoint, ...]
    initial_assignment: np.ndarray
    final_assignment: np.ndarray
    wall_ns: int
    move_totals: dict[str, int]
    accept_totals: dict[str, int]
    flagged: int
    samples: np.ndarray | None = None  # (epochs_run, num_vars) if kept

    def acceptance_rate(self, kind: str) -> float:
        total = self.move_totals.get(kind, 0)
        return self.accept_totals.get(kind, 0) / total if total else float("nan")


def run_inference(
    model: DiscreteModel,
    evidence: Mapping[VariableId, int] | None,
    library: ProposalLibrary,
    schedule: SamplerSchedule | None = None,
    epochs: int = 0,
    seed: int = 0,
    stream: int = 0,
    checkpoint_every: int | None = None,
    keep_samples: bool = False,
    trace_writer: TraceWriter | None = None,
    wall_cap_s: float | None = None,
    block_mode: str = "neural",
) -> InferenceTrace:
    """Run one chain for `epochs` scheduled passes over the latent variables.

    Every epoch updates each latent exactly once: its planned neural block
    move (MH-corrected) or single-site Gibbs. With zero neural plans, or
    mix_ratio 0, the chain consumes randomness exactly like the single-site
    baseline and reproduces it bit for bit under the same (seed, stream).

    block_mode "exact" swaps every planned block move for a draw from the
    block's exact conditional (always accepted, kind "block-exact"); the
    library still decides which blocks exist, its parameters are unused.
    """
    if block_mode not in ("neural", "exact"):
        raise ValueError(f"unknown block_mode {block_mode!r}")
    evidence = dict(evidence or {})
    state = make_chain_state(model, evidence, seed=seed, stream=stream)
    if schedule is None:
        schedule = build_schedule(model, evidence, library)
    _validate_schedule(model, evidence, schedule, library)
    encoders = {
        plan.var: _CachedEncoder(plan.inst)
        for plan in schedule.plans
        if plan.kind == "neural" and block_mode == "neural"
    }

    n = model.num_vars
    counts = np.zeros((n, max(model.cards)), dtype=np.int64)
    arange = np.arange(n)
    block_kind = "neural" if block_mode == "neural" else "block-exact"
    move_totals = {block_kind: 0, "single": 0}
    accept_totals = {block_kind: 0, "single": 0}
    flagged = 0
    checkpoints: list[Checkpoint] = []
    samples = np.empty((epochs, n), dtype=np.int64) if keep_samples else None
    if checkpoint_every is None:
        checkpoint_every = max(1, epochs // 64)
    initial = state.assignment.copy()
    t0 = time.monotonic_ns()

    ran = 0
    for _ in range(epochs):
        if wall_cap_s is not None and time.monotonic_ns() - t0 > wall_cap_s * 1e9:
            break
        for plan in schedule.plans:
            neural = plan.kind == "neural"
            if neural and schedule.mix_ratio <= 0.0:
                neural = False
            elif neural and schedule.mix_ratio < 1.0:
                neural = state.rng.random() < schedule.mix_ratio
            if neural and block_mode == "exact":
                state = exact_block_gibbs_step(model, plan.inst.b_vars, state)
                kind, block, accepted = "block-exact", plan.inst.b_vars, True
            elif neural:
                state, outcome = neural_block_step(
                    model, state, plan.inst, library, encoder=encoders[plan.var]
                )
                kind, block, accepted = "neural", plan.inst.b_vars, outcome.accepted
                flagged += outcome.flagged
            else:
                probs = single_site_conditional(model, state.assignment, plan.var)
                state.assignment[plan.var] = _draw_categorical(probs, state.rng)
                kind, block, accepted = "single", (plan.var,), True
            move_totals[kind] += 1
            accept_totals[kind] += accepted
            if trace_writer is not None:
                trace_writer.record(
                    state.epoch + 1,
                    kind,
                    block,
                    accepted,
                    state.log_joint(),
                    wall_ns=time.monotonic_ns() - t0,
                )
        state.epoch += 1
        ran += 1
        counts[arange, state.assignment] += 1
        if keep_samples:
            samples[ran - 1] = state.assignment
        if ran % checkpoint_every == 0:
            checkpoints.append(
                Checkpoint(ran, time.monotonic_ns() - t0, counts.copy())
            )

    if ran and (not checkpoints or checkpoints[-1].epoch != ran):
        checkpoints.append(Checkpoint(ran, time.monotonic_ns() - t0, counts.copy()))
    return InferenceTrace(
        model=model,
        evidence=evidence,
        epochs_run=ran,
        counts=counts,
        checkpoints=tuple(checkpoints),
        initial_assignment=initial,
        final_assignment=state.assignment.copy(),
        wall_ns=time.monotonic_ns() - t0,
        move_totals=move_totals,
        accept_totals=accept_totals,
        flagged=flagged,
        samples=samples[:ran] if keep_samples else None,
    )


# ---------------------------------------------------------------------------
# Reading marginals back out


def estimate_marginals(trace: InferenceTrace, burn_in: float = 0.0) -> MarginalTable:
    """Empirical per-variable state frequencies after discarding the first
    `burn_in` fraction of epochs.

    Uses exact per-epoch samples when the trace kept them; otherwise the
    burn-in is rounded up to the first checkpoint at or past the cutoff and
    its counts are subtracted.
    """
    if not 0.0 <= burn_in <= 1.0:
        raise ValueError(f"burn_in {burn_in} outside [0, 1]")
    total = trace.epochs_run
    cutoff = math.floor(burn_in * total)
    if total == 0 or cutoff >= total:
        raise SamplerError(
            f"no samples left after burn-in ({cutoff} of {total} epochs burned)"
        )
    if cutoff == 0:
        counts, denom = trace.counts, total
    elif trace.samples is not None:
        kept = trace.samples[cutoff:]
        counts = np.zeros_like(trace.counts)
        np.add.at(counts, (np.arange(counts.shape[0])[None, :], kept), 1)
        denom = total - cutoff
    else:
        eligible = [
            cp for cp in trace.checkpoints if cutoff <= cp.epoch < total
        ]
        if not eligible:
            raise SamplerError(
                "no checkpoint between the burn-in cutoff and the end of the "
                "chain; rerun with a smaller checkpoint_every or keep_samples"
            )
        base = eligible[0]
        counts, denom = trace.counts - base.counts, total - base.epoch
    probs = tuple(
        counts[v, : trace.model.cards[v]] / denom
        for v in range(trace.model.num_vars)
    )
    return MarginalTable(probs=probs)
