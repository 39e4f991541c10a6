"""Open-universe Gaussian mixture in truncated form.

The latent state is (mu, v, z): m candidate component means, m activity
bits, and n point labels. The number of active components is always the
derived quantity M = sum(v), never stored. Pair proposals update two
(mu_j, v_j) slots at once and are accepted by MH on the model with z
collapsed out; z is then restored from its exact conditional. A truncated
single-site Gibbs baseline is included for comparison; its v moves are
blocked whenever a label points at the component, which is exactly the
near-deterministic coupling the pair proposal exists to break.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterator, Protocol

import numpy as np

from .mdn import (
    LOG_2PI,
    MdnConfig,
    MdnParams,
    forward,
    load_params,
    log_density,
)
from .mdn import sample as mdn_sample
from .motifs import GMM_ENCODING_TAG, gmm_pair_motif
from .numerics import logsumexp, sigmoid

LOG_ZERO = float("-inf")


class GmmError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class GmmSpec:
    """Model constants. n = 0 is allowed (prior-only, used by tests)."""

    m: int
    n: int
    d: int = 2
    sigma2_mu: float = 4.0
    sigma2: float = 0.1

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 0 or self.d < 1:
            raise GmmError("need m >= 1, n >= 0, d >= 1")
        if self.sigma2_mu <= 0 or self.sigma2 <= 0:
            raise GmmError("variances must be positive")


@dataclasses.dataclass
class GmmState:
    mu: np.ndarray  # (m, d)
    v: np.ndarray  # (m,) in {0, 1}
    z: np.ndarray | None = None  # (n,) labels, each pointing at an active slot

    @property
    def M(self) -> int:
        return int(self.v.sum())

    def copy(self) -> "GmmState":
        return GmmState(
            mu=self.mu.copy(),
            v=self.v.copy(),
            z=None if self.z is None else self.z.copy(),
        )


def validate_state(spec: GmmSpec, state: GmmState) -> None:
    if state.mu.shape != (spec.m, spec.d):
        raise GmmError(f"mu shape {state.mu.shape} != ({spec.m}, {spec.d})")
    if state.v.shape != (spec.m,) or not np.isin(state.v, (0, 1)).all():
        raise GmmError("v must be m activity bits")
    if state.M < 1:
        raise GmmError("at least one component must be active")
    if state.z is not None:
        if state.z.shape != (spec.n,):
            raise GmmError(f"z shape {state.z.shape} != ({spec.n},)")
        if spec.n and not state.v[state.z].all():
            raise GmmError("a label points at an inactive component")


def _log_comb(m: int, k: int) -> float:
    return math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1)


def _iso_logpdf(x: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    """log N(x; mean, var*I) summed over the last axis."""
    d = x.shape[-1]
    sq = ((x - mean) ** 2).sum(axis=-1)
    return -0.5 * d * (LOG_2PI + np.log(var)) - sq / (2.0 * var)


def collapsed_log_likelihood(
    spec: GmmSpec, mu: np.ndarray, v: np.ndarray, x: np.ndarray
) -> float:
    """log p(mu, v, x) with labels summed out; the MH target up to the
    constant normalizer p(x)."""
    M = int(v.sum())
    if M < 1:
        raise GmmError("no active components")
    lp = -math.log(spec.m) - _log_comb(spec.m, M)
    lp += float(_iso_logpdf(mu, np.zeros(spec.d), spec.sigma2_mu).sum())
    if spec.n:
        active = np.flatnonzero(v)
        comp = _iso_logpdf(x[:, None, :], mu[active][None, :, :], spec.sigma2)
        lp += float((logsumexp(comp, axis=1) - math.log(M)).sum())
    return lp


def sample_prior(
    spec: GmmSpec, rng: np.random.Generator
) -> tuple[GmmState, np.ndarray]:
    """One ancestral draw of (mu, v, z) and observations x.

    Draw order is frozen: M, active set, all m means, labels, noise.
    """
    M = int(rng.integers(1, spec.m + 1))
    active = rng.choice(spec.m, size=M, replace=False)
    v = np.zeros(spec.m, dtype=np.int64)
    v[active] = 1
    mu = math.sqrt(spec.sigma2_mu) * rng.standard_normal((spec.m, spec.d))
    z = active[rng.integers(0, M, size=spec.n)]
    x = mu[z] + math.sqrt(spec.sigma2) * rng.standard_normal((spec.n, spec.d))
    return GmmState(mu=mu, v=v, z=z), x


# ---------------------------------------------------------------------------
# Canonical encoding


def principal_direction(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(data mean, first principal component with its first nonzero
    coordinate forced positive)."""
    d = x.shape[1]
    if x.shape[0] == 0:
        center = np.zeros(d)
        cov = np.zeros((d, d))
    else:
        center = x.mean(axis=0)
        xc = x - center
        cov = xc.T @ xc / x.shape[0]
    pc = np.linalg.eigh(cov)[1][:, -1]
    nz = np.flatnonzero(pc)
    if pc[nz[0]] < 0:
        pc = -pc
    return center, pc


def encode_gmm_input(
    spec: GmmSpec,
    mu: np.ndarray,
    v: np.ndarray,
    x: np.ndarray,
    pair: tuple[int, int],
) -> np.ndarray:
    """Symmetry-broken network input for one pair proposal.

    Points and components are sorted by first-principal-component score;
    the proposed pair's (mu, v) values are zeroed before sorting, so the
    vector depends only on the conditioning context. Forward and reverse
    proposal directions therefore share one encoding. Layout: sorted x,
    zeroed-sorted mu, matching v, data mean, principal component, proposed
    indicators over sorted slots.
    """
    j, k = pair
    if j == k:
        raise GmmError("pair indices must differ")
    if not (0 <= j < spec.m and 0 <= k < spec.m):
        raise GmmError("pair index out of range")
    if mu.shape != (spec.m, spec.d) or x.shape != (spec.n, spec.d):
        raise GmmError("mu or x shape does not match the spec")
    # lexicographic pre-ordering fixes the float reduction order, making
    # the encoding bit-identical under any permutation of the points
    x = np.asarray(x, dtype=np.float64)
    x = x[np.lexsort(x.T[::-1])]
    center, pc = principal_direction(x)
    x_sorted = x[np.argsort((x - center) @ pc, kind="stable")]
    mu_z = mu.astype(np.float64).copy()
    mu_z[[j, k]] = 0.0
    v_z = v.astype(np.float64).copy()
    v_z[[j, k]] = 0.0
    order = np.argsort(mu_z @ pc, kind="stable")
    indicators = np.zeros(spec.m)
    indicators[[j, k]] = 1.0
    return np.concatenate(
        [
            x_sorted.reshape(-1),
            mu_z[order].reshape(-1),
            v_z[order],
            center,
            pc,
            indicators[order],
        ]
    )


def encoded_dim(spec: GmmSpec) -> int:
    return (spec.n + spec.m) * spec.d + 2 * spec.m + 2 * spec.d


# ---------------------------------------------------------------------------
# Pair proposals


PairValues = tuple[np.ndarray, int, np.ndarray, int]  # (mu_j, v_j, mu_k, v_k)


class PairProposal(Protocol):
    def propose(
        self,
        spec: GmmSpec,
        mu: np.ndarray,
        v: np.ndarray,
        x: np.ndarray,
        pair: tuple[int, int],
        rng: np.random.Generator,
    ) -> tuple[PairValues, float, float]:
        """Returns (new pair values, log q(new), log q(current))."""
        ...


@dataclasses.dataclass
class NeuralPairProposal:
    """Trained pair proposal; on models larger than the trained motif it
    conditions on a fresh uniform subset of components and points each step
    (a symmetric choice, so it cancels from the MH ratio)."""

    config: MdnConfig
    params: MdnParams
    motif_m: int = 8
    motif_n: int = 60

    @classmethod
    def from_file(cls, path: str) -> "NeuralPairProposal":
        config, params, tag, _ = load_params(path)
        if tag != GMM_ENCODING_TAG:
            raise GmmError(f"parameter file has encoding tag {tag!r}, "
                           f"expected {GMM_ENCODING_TAG!r}")
        meta = gmm_pair_motif().meta
        return cls(config=config, params=params, motif_m=meta["m"], motif_n=meta["n"])

    def propose(self, spec, mu, v, x, pair, rng):
        j, k = pair
        if spec.m < self.motif_m or spec.n < self.motif_n:
            raise GmmError(
                f"model ({spec.m}, {spec.n}) smaller than the trained "
                f"motif ({self.motif_m}, {self.motif_n})"
            )
        others = np.array([c for c in range(spec.m) if c not in (j, k)])
        sel = np.concatenate(
            [[j, k], rng.choice(others, size=self.motif_m - 2, replace=False)]
        )
        pts = rng.choice(spec.n, size=self.motif_n, replace=False)
        sub = GmmSpec(
            m=self.motif_m, n=self.motif_n, d=spec.d,
            sigma2_mu=spec.sigma2_mu, sigma2=spec.sigma2,
        )
        enc = encode_gmm_input(sub, mu[sel], v[sel], x[pts], (0, 1))
        proposal = forward(self.config, self.params, enc)
        drawn, log_q_fwd = mdn_sample(proposal, rng)
        mu_j, v_j, mu_k, v_k = drawn
        log_q_rev = log_density(
            proposal, (mu[j], int(v[j]), mu[k], int(v[k]))
        )
        return (mu_j, int(v_j), mu_k, int(v_k)), float(log_q_fwd), float(log_q_rev)


@dataclasses.dataclass(frozen=True)
class GmmPairOutcome:
    pair: tuple[int, int]
    proposed: PairValues
    log_q_forward: float
    log_q_reverse: float
    log_alpha: float
    accepted: bool
    flagged: bool = False


def label_log_weights(
    spec: GmmSpec, mu: np.ndarray, v: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(active indices, (n, M) unnormalized log p(z_i = active_j | ...))."""
    active = np.flatnonzero(v)
    if active.size == 0:
        raise GmmError("no active components")
    return active, _iso_logpdf(x[:, None, :], mu[active][None, :, :], spec.sigma2)


def resample_labels(
    spec: GmmSpec,
    mu: np.ndarray,
    v: np.ndarray,
    x: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact draw from p(z | mu, v, x): per point, categorical over active
    components with weight N(x_i; mu_j, sigma2*I)."""
    active, logw = label_log_weights(spec, mu, v, x)
    if spec.n == 0:
        return np.zeros(0, dtype=np.int64)
    logw = logw - logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    cum = np.cumsum(w, axis=1)
    u = rng.random(spec.n) * cum[:, -1]
    idx = (u[:, None] >= cum).sum(axis=1)
    idx = np.minimum(idx, active.size - 1)
    return active[idx]


def neural_pair_step(
    spec: GmmSpec,
    state: GmmState,
    proposal: PairProposal,
    x: np.ndarray,
    rng: np.random.Generator,
) -> tuple[GmmState, GmmPairOutcome]:
    """One pair move: uniform pair, proposal, MH on the collapsed model,
    then z restored from its exact conditional.

    Proposals that would deactivate everything are rejected (the collapsed
    model gives them zero support). Non-finite proposal densities flag the
    outcome and leave the state untouched, z included.
    """
    validate_state(spec, state)
    pair = tuple(int(c) for c in sorted(rng.choice(spec.m, size=2, replace=False)))
    drawn, log_q_fwd, log_q_rev = proposal.propose(
        spec, state.mu, state.v, x, pair, rng
    )
    base = dict(
        pair=pair, proposed=drawn,
        log_q_forward=log_q_fwd, log_q_reverse=log_q_rev,
    )
    mu_values = np.concatenate([np.asarray(drawn[0]), np.asarray(drawn[2])])
    if (
        not np.isfinite(mu_values).all()
        or np.isnan(log_q_fwd) or log_q_fwd in (np.inf, LOG_ZERO)
        or np.isnan(log_q_rev) or log_q_rev == np.inf
    ):
        return state, GmmPairOutcome(
            log_alpha=LOG_ZERO, accepted=False, flagged=True, **base
        )

    j, k = pair
    new_mu = state.mu.copy()
    new_v = state.v.copy()
    new_mu[j], new_v[j] = drawn[0], drawn[1]
    new_mu[k], new_v[k] = drawn[2], drawn[3]
    if new_v.sum() == 0 or log_q_rev == LOG_ZERO:
        log_alpha = LOG_ZERO
    else:
        new_lp = collapsed_log_likelihood(spec, new_mu, new_v, x)
        old_lp = collapsed_log_likelihood(spec, state.mu, state.v, x)
        log_alpha = min(0.0, (new_lp + log_q_rev) - (old_lp + log_q_fwd))
    with np.errstate(divide="ignore"):
        accepted = bool(np.log(rng.random()) < log_alpha)
    mu, v = (new_mu, new_v) if accepted else (state.mu.copy(), state.v.copy())
    z = None if state.z is None else resample_labels(spec, mu, v, x, rng)
    return GmmState(mu=mu, v=v, z=z), GmmPairOutcome(
        log_alpha=log_alpha, accepted=accepted, **base
    )


# ---------------------------------------------------------------------------
# Truncated single-site Gibbs baseline


def gibbs_truncated_baseline(
    spec: GmmSpec,
    state: GmmState,
    x: np.ndarray,
    rng: np.random.Generator,
) -> GmmState:
    """One sweep: every z_i from its exact conditional, every mu_j from its
    conjugate Gaussian conditional, every v_j from its exact conditional.

    A v_j with any label pointing at it is forced active (its conditional
    is deterministic), which is why this sampler gets stuck at one M.
    """
    validate_state(spec, state)
    if state.z is None:
        raise GmmError("the baseline needs the uncollapsed z labels")
    mu = state.mu.copy()
    v = state.v.copy()
    z = resample_labels(spec, mu, v, x, rng)

    tau0 = 1.0 / spec.sigma2_mu
    tau = 1.0 / spec.sigma2
    for j in range(spec.m):
        assigned = x[z == j] if spec.n else x[:0]
        prec = tau0 + tau * len(assigned)
        mean = tau * assigned.sum(axis=0) / prec if len(assigned) else np.zeros(spec.d)
        mu[j] = mean + rng.standard_normal(spec.d) / math.sqrt(prec)

    for j in range(spec.m):
        if spec.n and np.any(z == j):
            v[j] = 1  # deterministic conditional: labels pin the component
            continue
        m0 = int(v.sum()) - int(v[j])
        if m0 == 0:
            v[j] = 1  # sole candidate: M >= 1 has no support otherwise
            continue
        log_ratio = (
            _log_comb(spec.m, m0) - _log_comb(spec.m, m0 + 1)
            + spec.n * (math.log(m0) - math.log(m0 + 1))
        )
        v[j] = int(rng.random() < sigmoid(np.array(log_ratio)))
    return GmmState(mu=mu, v=v, z=z)


# ---------------------------------------------------------------------------
# Synthetic data, runs, and I/O


def circle_clusters(
    n: int,
    k: int,
    radius: float,
    rng: np.random.Generator,
    noise_var: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """2-d points around k cluster centers evenly spaced on a circle.

    Counts are balanced (first n % k clusters get the extra point).
    Returns (x, true labels)."""
    if k < 1 or n < 1:
        raise GmmError("need n >= 1 points and k >= 1 clusters")
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.repeat(np.arange(k), np.bincount(np.arange(n) % k, minlength=k))
    x = centers[labels] + math.sqrt(noise_var) * rng.standard_normal((n, 2))
    return x, labels


def init_state(
    spec: GmmSpec,
    x: np.ndarray,
    rng: np.random.Generator,
    m_active: int | None = None,
) -> GmmState:
    """Random initial state: prior means, a uniform activity pattern with
    the requested (or prior-drawn) M, labels from their exact conditional."""
    M = int(rng.integers(1, spec.m + 1)) if m_active is None else int(m_active)
    if not 1 <= M <= spec.m:
        raise GmmError(f"m_active must be in [1, {spec.m}]")
    active = rng.choice(spec.m, size=M, replace=False)
    v = np.zeros(spec.m, dtype=np.int64)
    v[active] = 1
    mu = math.sqrt(spec.sigma2_mu) * rng.standard_normal((spec.m, spec.d))
    z = resample_labels(spec, mu, v, x, rng)
    return GmmState(mu=mu, v=v, z=z)


TraceRow = tuple[int, int, float]  # (step, active count, collapsed log joint)


def run_neural(
    spec: GmmSpec,
    state: GmmState,
    proposal: PairProposal,
    x: np.ndarray,
    rng: np.random.Generator,
    steps: int,
) -> tuple[GmmState, list[TraceRow], int]:
    rows: list[TraceRow] = []
    accepts = 0
    for step in range(steps):
        state, outcome = neural_pair_step(spec, state, proposal, x, rng)
        accepts += outcome.accepted
        rows.append(
            (step + 1, state.M, collapsed_log_likelihood(spec, state.mu, state.v, x))
        )
    return state, rows, accepts


def run_baseline(
    spec: GmmSpec,
    state: GmmState,
    x: np.ndarray,
    rng: np.random.Generator,
    steps: int,
) -> tuple[GmmState, list[TraceRow]]:
    rows: list[TraceRow] = []
    for step in range(steps):
        state = gibbs_truncated_baseline(spec, state, x, rng)
        rows.append(
            (step + 1, state.M, collapsed_log_likelihood(spec, state.mu, state.v, x))
        )
    return state, rows


def trace_to_csv(rows: list[TraceRow]) -> str:
    lines = ["step,m_active,log_joint"]
    lines += [f"{s},{m},{lj:.17g}" for s, m, lj in rows]
    return "\n".join(lines) + "\n"


def save_observations(path: str, x: np.ndarray) -> None:
    np.savetxt(path, x, delimiter=",", fmt="%.17g")


def load_observations(path: str, d: int = 2) -> np.ndarray:
    x = np.loadtxt(path, delimiter=",", ndmin=2)
    if x.shape[1] != d:
        raise GmmError(f"observations have {x.shape[1]} columns, expected {d}")
    return x


# ---------------------------------------------------------------------------
# Meta-training stream (consumed by the trainer)


def training_batches(job) -> Iterator:
    """Prior draws of the (m=8, n=60) motif: encode the context with a
    uniform pair zeroed, target that pair's (mu, v) values. Sample i uses
    RNG stream (seed, i) like every other motif."""
    from .training import sample_stream_rng

    meta = job.dist.motif.meta
    spec = GmmSpec(m=meta["m"], n=meta["n"], d=meta["d"])
    input_dim = job.dist.motif.input_dim
    batch = job.hyper.batch_size
    index = 0
    while True:
        xs = np.empty((batch, input_dim))
        mu_a = np.empty((batch, spec.d))
        v_a = np.empty(batch, dtype=np.int64)
        mu_b = np.empty((batch, spec.d))
        v_b = np.empty(batch, dtype=np.int64)
        for i in range(batch):
            rng = sample_stream_rng(job.seed, index + i)
            state, x = sample_prior(spec, rng)
            j, k = sorted(int(c) for c in rng.choice(spec.m, size=2, replace=False))
            xs[i] = encode_gmm_input(spec, state.mu, state.v, x, (j, k))
            mu_a[i], v_a[i] = state.mu[j], state.v[j]
            mu_b[i], v_b[i] = state.mu[k], state.v[k]
        index += batch
        yield xs, (mu_a, v_a, mu_b, v_b)
