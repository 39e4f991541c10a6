"""Shared model builders for the test suite."""

from __future__ import annotations

import numpy as np

from neuralblock.models import DiscreteModel, FactorTable


def bernoulli_cpt(var: int, parents: tuple[int, ...], table: np.ndarray) -> FactorTable:
    return FactorTable(scope=parents + (var,), values=table)


def random_binary_bn(
    num_vars: int,
    rng: np.random.Generator,
    max_parents: int = 3,
    p_determ: float = 0.0,
    alpha: tuple[float, float] = (1.0, 1.0),
) -> DiscreteModel:
    """Random binary Bayesian network over a random topological order."""
    order = rng.permutation(num_vars)
    rank = {int(v): i for i, v in enumerate(order)}
    factors = []
    parents_of = []
    for v in range(num_vars):
        earlier = [u for u in range(num_vars) if rank[u] < rank[v]]
        k = int(rng.integers(0, min(max_parents, len(earlier)) + 1))
        parents = tuple(sorted(rng.choice(earlier, size=k, replace=False).tolist())) if k else ()
        rows = 2 ** len(parents)
        table = np.empty((rows, 2))
        for r in range(rows):
            if rng.random() < p_determ:
                one = int(rng.random() < 0.5)
                table[r] = [1.0 - one, one]
            else:
                table[r] = rng.dirichlet(alpha)
        table = table.reshape([2] * len(parents) + [2])
        factors.append(FactorTable(scope=parents + (v,), values=table))
        parents_of.append(parents)
    return DiscreteModel(
        cards=(2,) * num_vars,
        factors=tuple(factors),
        kind="directed",
        parents=tuple(parents_of),
    )


def grid_bn(
    rows: int,
    cols: int,
    rng: np.random.Generator,
    p_determ: float = 0.0,
    alpha: tuple[float, float] = (1.0, 1.0),
) -> DiscreteModel:
    """Binary grid Bayesian network; (i,j) has parents (i-1,j) and (i,j-1)."""
    from neuralblock.motifs import sample_grid_model

    return sample_grid_model(rows, cols, rng, p_determ=p_determ, alpha=alpha)
