"""Meta-trained neural block proposals for MCMC in discrete graphical models.

Submodules: models (factor graphs), uai (serialization), oracle (exact
inference), samplers (baseline chains and the MH correction), mdn (the
mixture density network), motifs (block structures and their encodings),
training (meta-training), neural_sampler (the scheduled block chain),
gmm (the open-universe mixture), metrics (error curves), cli (the harness).
"""

__all__ = [
    "cli",
    "gmm",
    "mdn",
    "metrics",
    "models",
    "motifs",
    "neural_sampler",
    "numerics",
    "oracle",
    "samplers",
    "training",
    "uai",
]
