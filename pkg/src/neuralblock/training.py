"""Meta-training of mixture proposals across motif instantiations.

Each minibatch element is one fresh draw from the instantiation
distribution: sample a host and placement, ancestral-sample the host, split
the draw into (proposed block b, conditioning c), and train the network to
maximize log q(b; encode(c, parameters)). Sample i always consumes RNG
stream (seed, i), so batches are reproducible regardless of how generation
is parallelized or batched.
"""

from __future__ import annotations

import dataclasses
import json
import time
from typing import Callable, Iterator

import numpy as np

from .mdn import (
    Batch,
    MdnConfig,
    MdnParams,
    OptimizerHyperparams,
    forward,
    init_params,
    log_density_many,
    optimize,
    save_params,
)
from .models import DiscreteModel, log_joint_many, sample_prior
from .motifs import (
    GRID_B_OFFSETS,
    GRID_C_OFFSETS,
    GRID_FRAGMENT_OFFSETS,
    InstantiationDistribution,
    Motif,
    MotifInstantiation,
    encode_input,
    detect_instantiations,
    sample_cpt_rows,
    sample_instantiation,
)
from .oracle import exact_block_conditional

_INIT_STREAM = 2**62  # parameter-init stream, outside the per-sample space


def sample_stream_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one global sample index."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


@dataclasses.dataclass(frozen=True)
class TrainJob:
    """Everything needed to reproduce one training run bit-exactly."""

    motif_name: str
    dist: InstantiationDistribution
    config: MdnConfig
    hyper: OptimizerHyperparams
    seed: int = 0
    steps: int = 1000
    eval_every: int = 0  # 0 disables mid-training KL checkpoints
    eval_instantiations: int = 200
    eval_seed: int | None = None  # default: seed + 1
    out_path: str | None = None

    def __post_init__(self) -> None:
        motif = self.dist.motif
        if self.motif_name != motif.name:
            raise ValueError(
                f"job names motif {self.motif_name!r} but distribution is over {motif.name!r}"
            )
        if self.config.input_dim != motif.input_dim:
            raise ValueError(
                f"config input dim {self.config.input_dim} != motif {motif.input_dim}"
            )
        if self.config.output_spec != motif.output_spec:
            raise ValueError("config output spec does not match the motif")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclasses.dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]]
    kl_checkpoints: list[tuple[int, float]]  # (step, median held-out KL)
    kl_summary: dict | None
    wall_clock_secs: float
    params_path: str | None
    sample_budget: int  # total prior draws consumed = steps * batch size


def motif_config(motif: Motif, hidden_dims: tuple[int, int] | None = None) -> MdnConfig:
    """Default network sizing: hidden width 4x the larger interface."""
    if hidden_dims is None:
        width = 4 * max(motif.input_dim, motif.n_mixtures * (
            1 + sum(h.raw_size for h in motif.output_spec)
        ))
        hidden_dims = (width, width)
    return MdnConfig(
        input_dim=motif.input_dim,
        hidden_dims=hidden_dims,
        n_mixtures=motif.n_mixtures,
        output_spec=motif.output_spec,
    )


# ---------------------------------------------------------------------------
# Grid batches (vectorized host generation; one RNG stream per sample)


class _GridLayout:
    """Precomputed index maps for one host shape."""

    def __init__(self, shape: tuple[int, int]):
        rows, cols = shape
        self.shape = shape
        self.n_vars = rows * cols
        n_parent_list = []
        for i in range(rows):
            for j in range(cols):
                n_parent_list.append((i > 0) + (j > 0))
        self.row_start = np.zeros(self.n_vars + 1, dtype=np.int64)
        self.row_start[1:] = np.cumsum([2**p for p in n_parent_list])
        self.n_parents = n_parent_list
        self.total_rows = int(self.row_start[-1])
        centers = [
            (ci, cj)
            for ci in range(2, rows - 2)
            for cj in range(2, cols - 2)
        ]
        if not centers:
            raise ValueError(f"host shape {shape} admits no placements (needs >= 5x5)")
        self.centers = centers

        def cells(offsets):
            return np.array(
                [
                    [(ci + dr) * cols + (cj + dc) for dr, dc in offsets]
                    for ci, cj in centers
                ],
                dtype=np.int64,
            )

        self.b_cells = cells(GRID_B_OFFSETS)
        self.c_cells = cells(GRID_C_OFFSETS)
        self.frag_cells = cells(GRID_FRAGMENT_OFFSETS)


def _grid_sample_raw(
    layout: _GridLayout, dist: InstantiationDistribution, rng: np.random.Generator
) -> tuple[np.ndarray, int, np.ndarray]:
    """One sample's random material, in the frozen stream order."""
    rows = sample_cpt_rows(layout.total_rows, rng, dist.p_determ, dist.dirichlet_alpha)
    placement = int(rng.integers(len(layout.centers)))
    u = rng.random(layout.n_vars)
    return rows, placement, u


def _grid_p1(layout: _GridLayout, rows_b: np.ndarray) -> np.ndarray:
    """(batch, n_vars, 2, 2) array of P(cell=1 | up, left), edge cells
    broadcast over their missing parent axes."""
    b = rows_b.shape[0]
    p1 = np.empty((b, layout.n_vars, 2, 2))
    for v in range(layout.n_vars):
        s = layout.row_start[v]
        n_par = layout.n_parents[v]
        block = rows_b[:, s : layout.row_start[v + 1], 1]
        rows_dim, cols_dim = layout.shape
        i, j = divmod(v, cols_dim)
        if n_par == 0:
            p1[:, v] = block[:, 0, None, None]
        elif n_par == 2:
            p1[:, v] = block.reshape(b, 2, 2)
        elif i > 0:  # up parent only
            p1[:, v] = block[:, :, None]
        else:  # left parent only
            p1[:, v] = block[:, None, :]
    return p1


def _grid_ancestral(layout: _GridLayout, p1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-major ancestral pass; cell becomes 1 iff u < P(cell=1 | parents)."""
    b = p1.shape[0]
    rows, cols = layout.shape
    states = np.zeros((b, layout.n_vars), dtype=np.int64)
    arange = np.arange(b)
    for v in range(layout.n_vars):
        i, j = divmod(v, cols)
        up = states[:, v - cols] if i > 0 else np.zeros(b, dtype=np.int64)
        left = states[:, v - 1] if j > 0 else np.zeros(b, dtype=np.int64)
        pv = p1[arange, v, up, left]
        states[:, v] = u[:, v] < pv
    return states


def grid_host_from_rows(
    shape: tuple[int, int], rows: np.ndarray
) -> DiscreteModel:
    """The host model a given CPT-row array denotes (test twin of the
    vectorized pipeline; row slices follow the same row-major layout)."""
    from .models import FactorTable

    layout = _GridLayout(shape)
    factors = []
    parents_of = []
    r, c = shape
    for i in range(r):
        for j in range(c):
            v = i * c + j
            parents: tuple[int, ...] = ()
            if i > 0 and j > 0:
                parents = (v - c, v - 1)
            elif i > 0:
                parents = (v - c,)
            elif j > 0:
                parents = (v - 1,)
            table = rows[layout.row_start[v] : layout.row_start[v + 1]]
            factors.append(
                FactorTable(
                    scope=parents + (v,),
                    values=table.reshape([2] * len(parents) + [2]),
                )
            )
            parents_of.append(parents)
    return DiscreteModel(
        cards=(2,) * layout.n_vars,
        factors=tuple(factors),
        kind="directed",
        parents=tuple(parents_of),
    )


def grid_batch(
    dist: InstantiationDistribution,
    seed: int,
    first_index: int,
    batch_size: int,
    layout: _GridLayout | None = None,
) -> Batch:
    """Batch of (encoded input, block targets) for samples
    first_index .. first_index + batch_size - 1."""
    layout = layout or _GridLayout(dist.host_shape)
    rows_b = np.empty((batch_size, layout.total_rows, 2))
    placements = np.empty(batch_size, dtype=np.int64)
    u_b = np.empty((batch_size, layout.n_vars))
    for i in range(batch_size):
        rng = sample_stream_rng(seed, first_index + i)
        rows_b[i], placements[i], u_b[i] = _grid_sample_raw(layout, dist, rng)
    p1 = _grid_p1(layout, rows_b)
    states = _grid_ancestral(layout, p1, u_b)

    arange = np.arange(batch_size)
    c_cells = layout.c_cells[placements]
    frag_cells = layout.frag_cells[placements]
    b_cells = layout.b_cells[placements]
    x = np.empty((batch_size, dist.motif.input_dim))
    x[:, : c_cells.shape[1]] = states[arange[:, None], c_cells]
    x[:, c_cells.shape[1] :] = p1[arange[:, None], frag_cells].reshape(batch_size, -1)
    targets = tuple(states[arange, b_cells[:, j]] for j in range(b_cells.shape[1]))
    return x, targets


def _grid_batches(job: TrainJob) -> Iterator[Batch]:
    layout = _GridLayout(job.dist.host_shape)
    index = 0
    while True:
        yield grid_batch(
            job.dist, job.seed, index, job.hyper.batch_size, layout=layout
        )
        index += job.hyper.batch_size


# ---------------------------------------------------------------------------
# Chain and fixed-block batches (host sizes are tiny; build real hosts)


def _joint_table(model: DiscreteModel) -> tuple[np.ndarray, np.ndarray]:
    """All joint states and their normalized probabilities."""
    if sum(np.log2(c) for c in model.cards) > 20:
        raise ValueError("joint enumeration over 20 binary-equivalent bits")
    states = np.indices(model.cards).reshape(model.num_vars, -1).T
    logp = log_joint_many(model, states)
    m = logp.max()
    probs = np.exp(logp - m)
    return states, probs / probs.sum()


def _draw_joint(
    states: np.ndarray, probs: np.ndarray, u: float
) -> np.ndarray:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return states[min(idx, len(probs) - 1)]


def _chain_batches(job: TrainJob) -> Iterator[Batch]:
    dist = job.dist
    index = 0
    while True:
        xs = []
        targets: list[list[int]] = [[] for _ in dist.motif.b_roles]
        for i in range(job.hyper.batch_size):
            rng = sample_stream_rng(job.seed, index + i)
            model, inst = sample_instantiation(dist, rng)
            states, probs = _joint_table(model)
            draw = _draw_joint(states, probs, rng.random())
            xs.append(encode_input(inst, draw))
            for j, v in enumerate(inst.b_vars):
                targets[j].append(int(draw[v]))
        index += job.hyper.batch_size
        yield np.stack(xs), tuple(np.array(t) for t in targets)


def _block_batches(job: TrainJob) -> Iterator[Batch]:
    dist = job.dist
    model = dist.host_model
    inst = detect_instantiations(model, dist.motif)[0]
    if model.kind == "directed":
        draw_one = sample_prior
    else:
        states, probs = _joint_table(model)

        def draw_one(_model, rng):
            return _draw_joint(states, probs, rng.random())

    index = 0
    while True:
        xs = []
        targets: list[list[int]] = [[] for _ in inst.b_vars]
        for i in range(job.hyper.batch_size):
            rng = sample_stream_rng(job.seed, index + i)
            draw = draw_one(model, rng)
            xs.append(encode_input(inst, draw))
            for j, v in enumerate(inst.b_vars):
                targets[j].append(int(draw[v]))
        index += job.hyper.batch_size
        yield np.stack(xs), tuple(np.array(t) for t in targets)


def _batches_for(job: TrainJob) -> Iterator[Batch]:
    kind = job.dist.motif.kind
    if kind == "grid":
        return _grid_batches(job)
    if kind == "chain":
        return _chain_batches(job)
    if kind == "block":
        return _block_batches(job)
    if kind == "gmm-pair":
        from .gmm import training_batches

        return training_batches(job)
    raise ValueError(f"no batch generator for motif kind {kind!r}")


# ---------------------------------------------------------------------------
# Held-out evaluation


ProposalLogDensity = Callable[[MotifInstantiation, np.ndarray, np.ndarray], np.ndarray]


def evaluate_kl(
    config: MdnConfig,
    params: MdnParams,
    dist: InstantiationDistribution,
    n_instantiations: int,
    seed: int = 0,
    proposal_log_density: ProposalLogDensity | None = None,
) -> np.ndarray:
    """KL(p(B | C=c) || q) on fresh instantiations with prior-sampled c.

    The truth side is the exact block conditional, summed over every block
    assignment. `proposal_log_density(inst, full_assignment, block_states)`
    can replace the network (e.g. to inject the oracle itself); block_states
    rows enumerate block assignments in C order.
    """
    if dist.motif.kind == "gmm-pair":
        raise ValueError("KL evaluation needs a discrete, enumerable block")
    kls = np.empty(n_instantiations)
    for i in range(n_instantiations):
        rng = sample_stream_rng(seed, i)
        model, inst = sample_instantiation(dist, rng)
        if model.kind == "directed":
            assignment = sample_prior(model, rng)
        else:
            states, probs = _joint_table(model)
            assignment = _draw_joint(states, probs, rng.random())
        conditioning = {
            v: int(assignment[v])
            for v in range(model.num_vars)
            if v not in inst.b_vars
        }
        cond = exact_block_conditional(model, list(inst.b_vars), conditioning)
        cards = [model.cards[v] for v in inst.b_vars]
        block_states = np.indices(cards).reshape(len(cards), -1).T
        if proposal_log_density is not None:
            log_q = np.asarray(proposal_log_density(inst, assignment, block_states))
        else:
            proposal = forward(config, params, encode_input(inst, assignment))
            log_q = log_density_many(
                proposal, tuple(block_states[:, j] for j in range(len(cards)))
            )
        p = cond.table.reshape(-1)
        mask = p > 0
        with np.errstate(divide="ignore"):
            kls[i] = float(np.sum(p[mask] * (np.log(p[mask]) - log_q[mask])))
    return kls


def kl_summary(kls: np.ndarray) -> dict:
    kls = np.asarray(kls, dtype=np.float64)
    return {
        "n": int(kls.size),
        "median": float(np.median(kls)),
        "mean": float(np.mean(kls)),
        "p90": float(np.quantile(kls, 0.9)),
        "max": float(np.max(kls)),
    }


# ---------------------------------------------------------------------------
# The training entry point


def train_proposal(job: TrainJob) -> tuple[MdnParams, TrainReport]:
    """Meta-train a proposal for the job's motif; deterministic under seed."""
    t0 = time.monotonic()
    motif = job.dist.motif
    params = init_params(job.config, sample_stream_rng(job.seed, _INIT_STREAM))
    loss_curve: list[tuple[int, float]] = []
    kl_checkpoints: list[tuple[int, float]] = []
    eval_seed = job.seed + 1 if job.eval_seed is None else job.eval_seed

    inspect = None
    if job.eval_every > 0 and motif.kind != "gmm-pair":

        def inspect(step: int, snapshot: MdnParams) -> None:
            kls = evaluate_kl(
                job.config,
                snapshot,
                job.dist,
                n_instantiations=min(32, job.eval_instantiations),
                seed=eval_seed,
            )
            kl_checkpoints.append((step, float(np.median(kls))))

    hyper = dataclasses.replace(job.hyper, steps=job.steps)
    params = optimize(
        job.config,
        params,
        _batches_for(job),
        hyper,
        record=lambda step, loss: loss_curve.append((step, loss)),
        inspect=inspect,
        inspect_every=job.eval_every,
    )

    summary = None
    if job.eval_instantiations > 0 and motif.kind != "gmm-pair":
        kls = evaluate_kl(
            job.config, params, job.dist, job.eval_instantiations, seed=eval_seed
        )
        summary = kl_summary(kls)

    report = TrainReport(
        loss_curve=loss_curve,
        kl_checkpoints=kl_checkpoints,
        kl_summary=summary,
        wall_clock_secs=time.monotonic() - t0,
        params_path=None,
        sample_budget=job.steps * job.hyper.batch_size,
    )
    if job.out_path is not None:
        save_params(
            job.out_path,
            job.config,
            params,
            motif.encoding_tag,
            metadata=report_metadata(job, report),
        )
        report.params_path = job.out_path
    return params, report


def report_metadata(job: TrainJob, report: TrainReport) -> dict:
    """JSON-safe provenance stored alongside saved parameters."""
    return {
        "motif": job.motif_name,
        "seed": job.seed,
        "steps": job.steps,
        "batch_size": job.hyper.batch_size,
        "lr": job.hyper.lr,
        "optimizer": job.hyper.optimizer,
        "p_determ": job.dist.p_determ,
        "dirichlet_alpha": list(job.dist.dirichlet_alpha),
        "host_shape": list(job.dist.host_shape),
        "chain_length": job.dist.chain_length,
        "sample_budget": report.sample_budget,
        "wall_clock_secs": report.wall_clock_secs,
        "final_loss": report.loss_curve[-1][1] if report.loss_curve else None,
        "kl_summary": report.kl_summary,
    }


def report_to_json(report: TrainReport) -> str:
    out = dataclasses.asdict(report)
    out["loss_curve"] = [[int(s), float(v)] for s, v in report.loss_curve]
    out["kl_checkpoints"] = [[int(s), float(v)] for s, v in report.kl_checkpoints]
    return json.dumps(out, indent=2)


def loss_curve_to_csv(report: TrainReport) -> str:
    lines = ["step,nll"]
    lines += [f"{step},{value:.17g}" for step, value in report.loss_curve]
    return "\n".join(lines) + "\n"
