"""Structural motifs: reusable (proposed, conditioning) subgraph shapes.

A motif names an ordered set of proposed roles B, conditioning roles C, and
parameter slots; an instantiation binds those roles to concrete variables
and factor tables of a host model. Detection is direct index arithmetic per
motif family (grids, chains), not generic subgraph isomorphism.

Canonical layouts (frozen; proposals trained under one layout are unusable
under another, so encoders carry a version tag that is stored in saved
params and checked at load/propose time):

grid9 -- a 3x3 block of a directed grid BN where (i,j) has parents (i-1,j)
and (i,j-1). Roles are (row, col) offsets from the block center, row-major.
B: the 9 block cells, offsets in [-1,1]^2. C: the 14-cell ring (the block's
Markov blanket: 6 parents, 6 children, 2 co-parents). Parameter slots: the
23 fragment cells (block + ring), each a 3-axis CPT (up, left, self); the
encoding keeps P(child=1 | up, left) for the 4 parent rows in lexicographic
(up, left) order, giving 14 + 23*4 = 106 input reals.

chain{k} -- k consecutive variables of a pairwise chain MRF (unary factor
per variable, pairwise factor per edge), conditioned on the two flanking
neighbors. Parameter slots: the k+1 pairwise tables covering B's edges,
then the k unary tables of B, each normalized to sum 1 before encoding
(the block conditional is invariant to per-table scale).

gmm-pair -- two mixture components of the open-universe GMM; encoding and
detection live in the gmm module, only the dimension contract is here.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Callable, Mapping

import numpy as np

from .mdn import CategoricalHead, GaussianHead, Head
from .models import (
    Assignment,
    DiscreteModel,
    FactorTable,
    ModelError,
    VariableId,
    markov_blanket,
)

GRID_ENCODING_TAG = "grid9/v1"
CHAIN_ENCODING_TAG = "chain{k}/v1"
GMM_ENCODING_TAG = "gmm-pair/v1/m8-n60-d2"
BLOCK_ENCODING_TAG = "block/v1"

# Offsets from the block center, row-major. The fragment is the 5x5 window
# minus the two corners that touch neither the block's parents nor children.
GRID_FRAGMENT_OFFSETS: tuple[tuple[int, int], ...] = tuple(
    (dr, dc)
    for dr in range(-2, 3)
    for dc in range(-2, 3)
    if (dr, dc) not in ((-2, -2), (2, 2))
)
GRID_B_OFFSETS: tuple[tuple[int, int], ...] = tuple(
    (dr, dc) for dr in range(-1, 2) for dc in range(-1, 2)
)
GRID_C_OFFSETS: tuple[tuple[int, int], ...] = tuple(
    o for o in GRID_FRAGMENT_OFFSETS if o not in GRID_B_OFFSETS
)


@dataclasses.dataclass(frozen=True)
class Motif:
    """An abstract (B, C) shape plus its encoding and proposal-head contract."""

    name: str
    kind: str  # "grid" | "chain" | "gmm-pair" | "block"
    b_roles: tuple
    c_roles: tuple
    param_slots: tuple
    input_dim: int
    n_mixtures: int
    output_spec: tuple[Head, ...]
    encoding_tag: str
    meta: Mapping = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.b_roles) & set(self.c_roles):
            raise ValueError(f"motif {self.name}: B and C roles overlap")


@dataclasses.dataclass(frozen=True)
class MotifInstantiation:
    """A motif bound to concrete variables and factors of a host model."""

    motif: Motif
    model: DiscreteModel
    b_vars: tuple[VariableId, ...]
    c_vars: tuple[VariableId, ...]
    psi: tuple[FactorTable, ...]

    def __post_init__(self) -> None:
        if len(self.b_vars) != len(self.motif.b_roles):
            raise ValueError("b_vars does not match motif roles")
        if len(self.c_vars) != len(self.motif.c_roles):
            raise ValueError("c_vars does not match motif roles")
        if set(self.b_vars) & set(self.c_vars):
            raise ValueError("B and C variables overlap")
        if len(self.psi) != len(self.motif.param_slots):
            raise ValueError("psi does not match motif parameter slots")


@dataclasses.dataclass(frozen=True)
class InstantiationDistribution:
    """A distribution over motif instantiations (math: the meta-training
    distribution the proposal is expected to generalize across).

    For grids: Eq.-style mixed CPT rows (deterministic with probability
    p_determ, split evenly between [0,1] and [1,0], else Dirichlet(alpha))
    on a host grid of `host_shape`. For chains: random factor tables from
    `table_sampler` on a host chain of `chain_length`. For the GMM pair
    motif, the generator spec lives in the gmm module.
    """

    motif: Motif
    p_determ: float = 0.05
    dirichlet_alpha: tuple[float, float] = (0.5, 0.5)
    host_shape: tuple[int, int] = (6, 6)
    chain_length: int | None = None
    table_sampler: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray] | None = None
    host_model: DiscreteModel | None = None  # degenerate case: one fixed host

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_determ <= 1.0:
            raise ValueError("p_determ must be in [0, 1]")
        if any(a <= 0 for a in self.dirichlet_alpha):
            raise ValueError("dirichlet alpha components must be positive")
        if self.motif.kind == "block" and self.host_model is None:
            raise ValueError("block motifs need the fixed host_model")


def grid_motif() -> Motif:
    return Motif(
        name="grid9",
        kind="grid",
        b_roles=GRID_B_OFFSETS,
        c_roles=GRID_C_OFFSETS,
        param_slots=tuple((o, (2, 2, 2)) for o in GRID_FRAGMENT_OFFSETS),
        input_dim=len(GRID_C_OFFSETS) + 4 * len(GRID_FRAGMENT_OFFSETS),
        n_mixtures=12,
        output_spec=(CategoricalHead(2),) * 9,
        encoding_tag=GRID_ENCODING_TAG,
    )


def chain_motif(k: int, cardinality: int = 2) -> Motif:
    if k not in (2, 3, 4):
        raise ValueError(f"chain motif supports k in 2..4, got {k}")
    q = int(cardinality)
    c_dim = 2 * (1 if q == 2 else q)
    pair_slots = tuple((("pair", i, i + 1), (q, q)) for i in range(-1, k))
    unary_slots = tuple((("unary", i), (q,)) for i in range(k))
    return Motif(
        name=f"chain{k}",
        kind="chain",
        b_roles=tuple(range(k)),
        c_roles=(-1, k),
        param_slots=pair_slots + unary_slots,
        input_dim=c_dim + (k + 1) * q * q + k * q,
        n_mixtures=4,
        output_spec=(CategoricalHead(q),) * k,
        encoding_tag=CHAIN_ENCODING_TAG.format(k=k),
        meta={"k": k, "cardinality": q},
    )


def gmm_pair_motif() -> Motif:
    # B: (mean, activity) for each of two components, ordered by encoded
    # position; C: everything else. Encoding/detection live in the gmm module.
    return Motif(
        name="gmm-pair",
        kind="gmm-pair",
        b_roles=("mu_a", "v_a", "mu_b", "v_b"),
        c_roles=("rest",),
        param_slots=(),
        input_dim=156,
        n_mixtures=4,
        output_spec=(
            GaussianHead(2),
            CategoricalHead(2),
            GaussianHead(2),
            CategoricalHead(2),
        ),
        encoding_tag=GMM_ENCODING_TAG,
        meta={"m": 8, "n": 60, "d": 2},
    )


def motif_from_block(model: DiscreteModel, block: tuple[VariableId, ...]) -> Motif:
    """Ad-hoc motif proposing an arbitrary block of one model.

    B is the block in the given order, C its Markov blanket ascending, and
    the parameter slots are the factors touching B in factor-index order
    (each normalized to sum 1 before encoding). Useful where no shipped
    motif fits; the resulting proposals are specific to models sharing the
    block's local factor shapes.
    """
    block = tuple(int(v) for v in block)
    mb = tuple(sorted(markov_blanket(model, set(block))))
    touched = sorted({fi for v in block for fi in model.factors_of_var[v]})
    slots = tuple(
        (("factor", fi), model.factors[fi].values.shape) for fi in touched
    )
    c_dim = sum(1 if model.cards[v] == 2 else model.cards[v] for v in mb)
    p_dim = sum(int(np.prod(shape)) for _, shape in slots)
    return Motif(
        name=f"block-{'-'.join(map(str, block))}",
        kind="block",
        b_roles=block,
        c_roles=mb,
        param_slots=slots,
        input_dim=c_dim + p_dim,
        n_mixtures=4,
        output_spec=tuple(CategoricalHead(model.cards[v]) for v in block),
        encoding_tag=BLOCK_ENCODING_TAG,
    )


def get_motif(name: str) -> Motif:
    """Registry lookup by the frozen public names."""
    if name == "grid9":
        return grid_motif()
    if name in ("chain2", "chain3", "chain4"):
        return chain_motif(int(name[-1]))
    if name == "gmm-pair":
        return gmm_pair_motif()
    raise KeyError(f"unknown motif {name!r}")


MOTIF_NAMES = ("grid9", "chain2", "chain3", "chain4", "gmm-pair")


# ---------------------------------------------------------------------------
# Grid hosts and detection


def sample_cpt_rows(
    n_rows: int,
    rng: np.random.Generator,
    p_determ: float,
    alpha: tuple[float, float],
) -> np.ndarray:
    """Binary CPT rows: deterministic w.p. p_determ (split evenly between
    [0,1] and [1,0]), otherwise Dirichlet(alpha). Returns (n_rows, 2)."""
    rows = rng.dirichlet(alpha, size=n_rows)
    determ = rng.random(n_rows) < p_determ
    one = rng.random(n_rows) < 0.5
    rows[determ & one] = (0.0, 1.0)
    rows[determ & ~one] = (1.0, 0.0)
    return rows


def sample_grid_model(
    rows: int,
    cols: int,
    rng: np.random.Generator,
    p_determ: float = 0.05,
    alpha: tuple[float, float] = (0.5, 0.5),
) -> DiscreteModel:
    """Directed binary grid; (i,j) has parents (i-1,j) and (i,j-1).

    CPT scope order is (up-parent, left-parent, self) where present.
    """
    factors = []
    parents_of = []
    for i in range(rows):
        for j in range(cols):
            v = i * cols + j
            parents = ()
            if i > 0 and j > 0:
                parents = (v - cols, v - 1)
            elif i > 0:
                parents = (v - cols,)
            elif j > 0:
                parents = (v - 1,)
            table = sample_cpt_rows(2 ** len(parents), rng, p_determ, alpha)
            table = table.reshape([2] * len(parents) + [2])
            factors.append(FactorTable(scope=parents + (v,), values=table))
            parents_of.append(parents)
    return DiscreteModel(
        cards=(2,) * rows * cols,
        factors=tuple(factors),
        kind="directed",
        parents=tuple(parents_of),
    )


def sample_chain_model(
    length: int,
    cardinality: int,
    rng: np.random.Generator,
    table_sampler: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray] | None = None,
) -> DiscreteModel:
    """Pairwise chain MRF: a unary factor per variable, pairwise per edge."""
    q = int(cardinality)
    if table_sampler is None:
        def table_sampler(r: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
            return r.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)

    factors = [
        FactorTable(scope=(v,), values=table_sampler(rng, (q,))) for v in range(length)
    ]
    factors += [
        FactorTable(scope=(v, v + 1), values=table_sampler(rng, (q, q)))
        for v in range(length - 1)
    ]
    return DiscreteModel(cards=(q,) * length, factors=tuple(factors), kind="undirected")


def infer_grid_shape(model: DiscreteModel) -> tuple[int, int] | None:
    """(rows, cols) if the model is exactly a directed grid BN, else None."""
    if model.kind != "directed" or any(c != 2 for c in model.cards):
        return None
    n = model.num_vars
    two_parent = [v for v in range(n) if len(model.parents[v]) == 2]
    if not two_parent:
        return None
    v0 = two_parent[0]
    cols = v0 - min(model.parents[v0])
    if cols < 2 or n % cols != 0:
        return None
    rows = n // cols
    if rows < 2:
        return None
    for i in range(rows):
        for j in range(cols):
            v = i * cols + j
            expected: tuple[int, ...] = ()
            if i > 0 and j > 0:
                expected = (v - cols, v - 1)
            elif i > 0:
                expected = (v - cols,)
            elif j > 0:
                expected = (v - 1,)
            if tuple(sorted(model.parents[v])) != expected:
                return None
    return rows, cols


def _chain_structure(model: DiscreteModel) -> int | None:
    """Length of the pairwise chain MRF the model is, else None."""
    if model.kind != "undirected":
        return None
    n = model.num_vars
    unary = sorted(f.scope[0] for f in model.factors if len(f.scope) == 1)
    pairs = sorted(tuple(sorted(f.scope)) for f in model.factors if len(f.scope) == 2)
    if any(len(f.scope) > 2 for f in model.factors):
        return None
    if unary != list(range(n)) or pairs != [(v, v + 1) for v in range(n - 1)]:
        return None
    return n


def detect_instantiations(
    model: DiscreteModel,
    motif: Motif,
    evidence: Assignment | None = None,
) -> list[MotifInstantiation]:
    """All placements of `motif` in `model`, in deterministic scan order.

    Placements whose proposed set touches an evidence variable are skipped.
    """
    evidence = set(dict(evidence or {}))
    out: list[MotifInstantiation] = []
    if motif.kind == "grid":
        shape = infer_grid_shape(model)
        if shape is None:
            return []
        rows, cols = shape
        cpts = model.cpt_of
        # a placement is legal when the full 23-cell fragment fits in the
        # grid; cells on the border rows/cols have reduced CPTs and are
        # encoded by broadcasting over the missing parent axes
        for ci in range(2, rows - 2):
            for cj in range(2, cols - 2):
                b_vars = tuple(
                    (ci + dr) * cols + (cj + dc) for dr, dc in GRID_B_OFFSETS
                )
                if evidence & set(b_vars):
                    continue
                c_vars = tuple(
                    (ci + dr) * cols + (cj + dc) for dr, dc in GRID_C_OFFSETS
                )
                psi = tuple(
                    cpts[(ci + dr) * cols + (cj + dc)]
                    for dr, dc in GRID_FRAGMENT_OFFSETS
                )
                out.append(
                    MotifInstantiation(
                        motif=motif, model=model, b_vars=b_vars, c_vars=c_vars, psi=psi
                    )
                )
        return out
    if motif.kind == "chain":
        n = _chain_structure(model)
        if n is None:
            return []
        k = motif.meta["k"]
        if any(c != motif.meta["cardinality"] for c in model.cards):
            return []
        unary = {f.scope[0]: f for f in model.factors if len(f.scope) == 1}
        pair = {tuple(sorted(f.scope)): f for f in model.factors if len(f.scope) == 2}
        for i in range(1, n - k):
            b_vars = tuple(range(i, i + k))
            if evidence & set(b_vars):
                continue
            psi = tuple(pair[(v, v + 1)] for v in range(i - 1, i + k)) + tuple(
                unary[v] for v in b_vars
            )
            out.append(
                MotifInstantiation(
                    motif=motif,
                    model=model,
                    b_vars=b_vars,
                    c_vars=(i - 1, i + k),
                    psi=psi,
                )
            )
        return out
    if motif.kind == "block":
        b_vars = motif.b_roles
        if evidence & set(b_vars):
            return []
        mb = tuple(sorted(markov_blanket(model, set(b_vars))))
        if mb != motif.c_roles:
            return []
        touched = sorted({fi for v in b_vars for fi in model.factors_of_var[v]})
        psi = tuple(model.factors[fi] for fi in touched)
        if tuple(f.values.shape for f in psi) != tuple(s for _, s in motif.param_slots):
            return []
        return [
            MotifInstantiation(
                motif=motif, model=model, b_vars=b_vars, c_vars=mb, psi=psi
            )
        ]
    raise ValueError(f"detection not defined for motif kind {motif.kind!r}")


def sample_instantiation(
    dist: InstantiationDistribution, rng: np.random.Generator
) -> tuple[DiscreteModel, MotifInstantiation]:
    """Draw a host model from `dist` plus one instantiation inside it."""
    if dist.motif.kind == "grid":
        model = sample_grid_model(
            *dist.host_shape, rng, p_determ=dist.p_determ, alpha=dist.dirichlet_alpha
        )
        insts = detect_instantiations(model, dist.motif)
        if not insts:
            raise ValueError(
                f"host shape {dist.host_shape} admits no grid placements (needs >= 5x5)"
            )
        return model, insts[int(rng.integers(len(insts)))]
    if dist.motif.kind == "chain":
        k = dist.motif.meta["k"]
        length = dist.chain_length if dist.chain_length is not None else k + 2
        model = sample_chain_model(
            length, dist.motif.meta["cardinality"], rng, dist.table_sampler
        )
        insts = detect_instantiations(model, dist.motif)
        if not insts:
            raise ValueError(f"chain length {length} admits no k={k} placements")
        return model, insts[int(rng.integers(len(insts)))]
    if dist.motif.kind == "block":
        insts = detect_instantiations(dist.host_model, dist.motif)
        if not insts:
            raise ValueError("block motif does not fit its own host model")
        return dist.host_model, insts[0]
    raise ValueError(
        f"sampling over {dist.motif.kind!r} instantiations is not defined here "
        "(the gmm module owns its own generator)"
    )


# ---------------------------------------------------------------------------
# Input encoding


def _one_hot(state: int, card: int) -> np.ndarray:
    out = np.zeros(card)
    out[state] = 1.0
    return out


def _c_value_features(cards: list[int], values: list[int]) -> list[np.ndarray]:
    feats = []
    for card, s in zip(cards, values):
        if card == 2:
            feats.append(np.array([float(s)]))
        else:
            feats.append(_one_hot(s, card))
    return feats


def encode_input(inst: MotifInstantiation, c_values: Assignment) -> np.ndarray:
    """Canonical network input for one instantiation and C assignment.

    A pure function of (role -> value, role -> parameters): conditioning
    values in role order (binary as 0/1 reals, one-hot above that), then the
    parameter slots' free entries in slot order. Bit-identical for equal
    role values and parameters, whatever the host model.
    """
    if isinstance(c_values, Mapping):
        values = []
        for v in inst.c_vars:
            if v not in c_values:
                raise ModelError(f"c_values misses conditioning variable {v}")
            values.append(int(c_values[v]))
    else:
        arr = np.asarray(c_values)
        values = [int(arr[v]) for v in inst.c_vars]
    cards = [inst.model.cards[v] for v in inst.c_vars]
    feats = _c_value_features(cards, values)

    motif = inst.motif
    if motif.kind == "grid":
        for cpt in inst.psi:
            # axes ordered (up, left, self) regardless of stored scope order;
            # the up parent is the smaller index (v - cols < v - 1). Border
            # cells broadcast P(cell=1 | .) over the missing parent axes.
            table = cpt.values
            if table.ndim == 3:
                if cpt.scope[0] != min(cpt.scope[:-1]):
                    table = np.transpose(table, (1, 0, 2))
                feats.append(table[:, :, 1].reshape(-1))
            elif table.ndim == 2:
                p1 = table[:, 1]
                if cpt.scope[0] == cpt.scope[-1] - 1:  # left parent only
                    feats.append(np.tile(p1, 2))
                else:  # up parent only
                    feats.append(np.repeat(p1, 2))
            else:
                feats.append(np.full(4, table[1]))
    elif motif.kind in ("chain", "block"):
        for f in inst.psi:
            flat = f.values.reshape(-1)
            feats.append(flat / flat.sum())
    else:
        raise ValueError(f"encoding not defined here for motif kind {motif.kind!r}")
    x = np.concatenate(feats)
    if x.shape != (motif.input_dim,):
        raise ValueError(
            f"encoding produced {x.shape[0]} dims, motif declares {motif.input_dim}"
        )
    return x


def instantiations_to_json(insts: list[MotifInstantiation]) -> str:
    """Inspection-friendly JSON description of detected placements."""
    return json.dumps(
        [
            {
                "motif": inst.motif.name,
                "b_vars": list(inst.b_vars),
                "c_vars": list(inst.c_vars),
                "psi_scopes": [list(f.scope) for f in inst.psi],
            }
            for inst in insts
        ],
        indent=2,
    )
