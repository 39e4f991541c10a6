"""Mixture density network, from scratch on numpy.

The network is a two-hidden-layer MLP with elu activations whose output
vector parametrizes a mixture distribution over heterogeneous heads: the
first n_mixtures raw outputs are mixture-weight logits, followed by one
block per head laid out mixture-major as (n_mixtures, head_raw_size).

Raw-to-parameter transforms (fixed here; anything trained under them must
be evaluated under them, hence the versioned save format):
  mixture weights   softmax over the first n_mixtures raws
  categorical(2)    one raw logit l; probabilities (sigmoid(-l), sigmoid(l))
  categorical(q>2)  q raw logits, softmax
  gaussian(d)       d mean raws + 1 variance raw s; variance =
                    max(softplus(s), variance_floor), zero gradient through
                    the variance while the floor is active

Everything is float64; gradients are exact analytic expressions, checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import struct
import weakref
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .numerics import log_softmax, logsumexp, sigmoid, softmax, softplus

LOG_2PI = float(np.log(2.0 * np.pi))


class MdnSpecError(ValueError):
    """Configuration or dimension mismatch."""


class TrainingError(RuntimeError):
    """Non-finite loss; carries the offending batch sample index."""

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index


class OptimizeDiverged(RuntimeError):
    """Loss exceeded the divergence guard during optimize()."""


@dataclasses.dataclass(frozen=True)
class CategoricalHead:
    cardinality: int

    @property
    def raw_size(self) -> int:
        return 1 if self.cardinality == 2 else self.cardinality


@dataclasses.dataclass(frozen=True)
class GaussianHead:
    dim: int  # isotropic: one shared variance across dim coordinates

    @property
    def raw_size(self) -> int:
        return self.dim + 1


Head = CategoricalHead | GaussianHead


@dataclasses.dataclass(frozen=True)
class MdnConfig:
    input_dim: int
    hidden_dims: tuple[int, int]
    n_mixtures: int
    output_spec: tuple[Head, ...]
    variance_floor: float = 1e-5
    activation: str = "elu"

    def __post_init__(self) -> None:
        if len(self.hidden_dims) != 2:
            raise MdnSpecError("exactly two hidden layers")
        if not 4 <= self.n_mixtures <= 16:
            raise MdnSpecError("n_mixtures must be in [4, 16]")
        if self.activation != "elu":
            raise MdnSpecError("only elu is supported")
        if self.variance_floor <= 0:
            raise MdnSpecError("variance floor must be positive")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "output_spec", tuple(self.output_spec))

    @property
    def raw_per_mixture(self) -> int:
        return sum(h.raw_size for h in self.output_spec)

    @property
    def output_dim(self) -> int:
        return self.n_mixtures * (1 + self.raw_per_mixture)


def sizing_lambda(config: MdnConfig) -> float:
    """Hidden width as a multiple of max(input, output) size."""
    return config.hidden_dims[0] / max(config.input_dim, config.output_dim)


@dataclasses.dataclass(frozen=True)
class MdnParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "MdnParams":
        return MdnParams(*(fn(a) for a in self.arrays()))


def init_params(config: MdnConfig, rng: np.random.Generator) -> MdnParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    dims = (config.input_dim, *config.hidden_dims, config.output_dim)

    def layer(fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return MdnParams(
        w1=layer(dims[0], dims[1]),
        b1=np.zeros(dims[1]),
        w2=layer(dims[1], dims[2]),
        b2=np.zeros(dims[2]),
        w3=layer(dims[2], dims[3]),
        b3=np.zeros(dims[3]),
    )


# params wrappers whose finiteness sweep already ran; keyed by id with the
# wrapper itself as the weak value so a dead id can never alias a new object
_finite_checked: "weakref.WeakValueDictionary[int, MdnParams]" = (
    weakref.WeakValueDictionary()
)


def _check_param_shapes(config: MdnConfig, params: MdnParams) -> None:
    dims = (config.input_dim, *config.hidden_dims, config.output_dim)
    expect = [
        (dims[0], dims[1]), (dims[1],),
        (dims[1], dims[2]), (dims[2],),
        (dims[2], dims[3]), (dims[3],),
    ]
    got = [a.shape for a in params.arrays()]
    if got != expect:
        raise MdnSpecError(f"param shapes {got} do not match config {expect}")
    if _finite_checked.get(id(params)) is params:
        return
    if not all(np.all(np.isfinite(a)) for a in params.arrays()):
        raise MdnSpecError("non-finite parameter values")
    _finite_checked[id(params)] = params


@dataclasses.dataclass(frozen=True)
class CategoricalParams:
    log_probs: np.ndarray  # (n_mixtures, cardinality)


@dataclasses.dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray  # (n_mixtures, dim)
    var: np.ndarray   # (n_mixtures,)


@dataclasses.dataclass(frozen=True)
class MixtureProposal:
    """A fully normalized mixture over the config's heads."""

    log_weights: np.ndarray
    heads: tuple[CategoricalParams | GaussianParams, ...]

    def __post_init__(self) -> None:
        with np.errstate(over="ignore"):
            if abs(float(np.exp(self.log_weights).sum()) - 1.0) > 1e-9:
                raise ValueError("mixture weights do not sum to 1")
            by_shape: dict[tuple, list[np.ndarray]] = {}
            gauss_vars: list[np.ndarray] = []
            for h in self.heads:
                if isinstance(h, CategoricalParams):
                    by_shape.setdefault(h.log_probs.shape, []).append(h.log_probs)
                else:
                    gauss_vars.append(h.var)
            for mats in by_shape.values():
                sums = np.exp(np.stack(mats)).sum(axis=2)
                if np.any(np.abs(sums - 1.0) > 1e-9):
                    raise ValueError("categorical head does not sum to 1")
            if gauss_vars and np.any(np.concatenate(gauss_vars) < 1e-5 - 1e-18):
                raise ValueError("gaussian variance below the floor")


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _forward_raw(params: MdnParams, x: np.ndarray) -> tuple[np.ndarray, ...]:
    z1 = x @ params.w1 + params.b1
    h1 = _elu(z1)
    z2 = h1 @ params.w2 + params.b2
    h2 = _elu(z2)
    o = h2 @ params.w3 + params.b3
    return z1, h1, z2, h2, o


@functools.lru_cache(maxsize=None)
def _all_binary_heads(config: MdnConfig) -> bool:
    return all(
        isinstance(h, CategoricalHead) and h.cardinality == 2
        for h in config.output_spec
    )


def _head_blocks(config: MdnConfig, o: np.ndarray) -> list[np.ndarray]:
    """Slice a raw output batch (n, output_dim) into per-head blocks of
    shape (n, n_mixtures, raw_size), after the leading weight logits."""
    k = config.n_mixtures
    blocks = []
    start = k
    for head in config.output_spec:
        size = head.raw_size
        blocks.append(o[:, start : start + k * size].reshape(o.shape[0], k, size))
        start += k * size
    return blocks


def forward(config: MdnConfig, params: MdnParams, x: np.ndarray) -> MixtureProposal:
    """Map one input vector to its mixture proposal."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (config.input_dim,):
        raise MdnSpecError(f"input shape {x.shape} != ({config.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise MdnSpecError("non-finite network input")
    _check_param_shapes(config, params)
    o = _forward_raw(params, x[None, :])[-1]
    k = config.n_mixtures
    log_w = log_softmax(o[0, :k])
    if _all_binary_heads(config):
        # all-binary configs: one fused softplus over every head, using
        # softplus(-l) = softplus(l) - l (equal to within one ulp)
        logits = o[0, k:].reshape(len(config.output_spec), k)
        sp = softplus(logits)
        lp = np.empty(logits.shape + (2,))
        lp[:, :, 0] = -sp
        lp[:, :, 1] = logits - sp
        return MixtureProposal(
            log_weights=log_w,
            heads=tuple(CategoricalParams(log_probs=lp[i]) for i in range(lp.shape[0])),
        )
    heads: list[CategoricalParams | GaussianParams] = []
    for head, block in zip(config.output_spec, _head_blocks(config, o)):
        raw = block[0]
        if isinstance(head, CategoricalHead):
            if head.cardinality == 2:
                l = raw[:, 0]
                log_probs = np.stack([-softplus(l), -softplus(-l)], axis=1)
            else:
                log_probs = log_softmax(raw, axis=1)
            heads.append(CategoricalParams(log_probs=log_probs))
        else:
            mean = raw[:, : head.dim]
            var = np.maximum(softplus(raw[:, head.dim]), config.variance_floor)
            heads.append(GaussianParams(mean=mean, var=var))
    return MixtureProposal(log_weights=log_w, heads=tuple(heads))


def _component_log_density(
    proposal: MixtureProposal, target: Sequence
) -> np.ndarray:
    """Per-mixture log density of one heterogeneous target."""
    if len(target) != len(proposal.heads):
        raise MdnSpecError(
            f"target has {len(target)} entries, proposal has {len(proposal.heads)} heads"
        )
    acc = proposal.log_weights.astype(np.float64).copy()
    for h, t in zip(proposal.heads, target):
        if isinstance(h, CategoricalParams):
            acc += h.log_probs[:, int(t)]
        else:
            t = np.asarray(t, dtype=np.float64)
            d = h.mean.shape[1]
            if t.shape != (d,):
                raise MdnSpecError(f"gaussian target shape {t.shape} != ({d},)")
            sq = ((t[None, :] - h.mean) ** 2).sum(axis=1)
            acc += -0.5 * d * (LOG_2PI + np.log(h.var)) - sq / (2.0 * h.var)
    return acc


def log_density(proposal: MixtureProposal, target: Sequence) -> float:
    """log q(target) under the full mixture."""
    return float(logsumexp(_component_log_density(proposal, target)))


def log_density_many(proposal: MixtureProposal, targets: Sequence) -> np.ndarray:
    """Vectorized log_density: targets is a per-head tuple of arrays
    ((n,) ints for categorical heads, (n, d) floats for gaussian)."""
    n = len(np.asarray(targets[0]))
    k = len(proposal.log_weights)
    acc = np.broadcast_to(proposal.log_weights, (n, k)).copy()
    for h, t in zip(proposal.heads, targets):
        if isinstance(h, CategoricalParams):
            acc += h.log_probs[:, np.asarray(t, dtype=np.int64)].T
        else:
            t = np.asarray(t, dtype=np.float64)
            sq = ((t[:, None, :] - h.mean[None, :, :]) ** 2).sum(axis=2)
            d = h.mean.shape[1]
            acc += -0.5 * d * (LOG_2PI + np.log(h.var))[None, :] - sq / (2.0 * h.var)[None, :]
    return logsumexp(acc, axis=1)


def _inverse_cdf_draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw by inverse CDF; tolerates sums a hair off 1."""
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def sample_values(proposal: MixtureProposal, rng: np.random.Generator) -> tuple:
    """Ancestral draw (mixture index, then independent heads) without the
    density evaluation; use `sample` when the log density is also needed."""
    k = _inverse_cdf_draw(np.exp(proposal.log_weights), rng)
    if all(
        isinstance(h, CategoricalParams) and h.log_probs.shape[1] == 2
        for h in proposal.heads
    ):
        # all-binary heads: one uniform batch against the stacked p(head = 0)
        p0 = np.exp(np.array([h.log_probs[k, 0] for h in proposal.heads]))
        draws = rng.random(len(p0)) >= p0
        return tuple(int(d) for d in draws)
    target: list = []
    for h in proposal.heads:
        if isinstance(h, CategoricalParams):
            target.append(_inverse_cdf_draw(np.exp(h.log_probs[k]), rng))
        else:
            d = h.mean.shape[1]
            target.append(h.mean[k] + np.sqrt(h.var[k]) * rng.standard_normal(d))
    return tuple(target)


def sample(
    proposal: MixtureProposal, rng: np.random.Generator
) -> tuple[tuple, float]:
    """Ancestral draw (mixture index, then independent heads).

    Returns the drawn assignment and its log density under the full
    mixture, not the chosen component.
    """
    out = sample_values(proposal, rng)
    return out, log_density(proposal, out)


# ---------------------------------------------------------------------------
# Loss and analytic gradient

Batch = tuple[np.ndarray, tuple]  # (inputs (n, input_dim), per-head targets)


def _batch_targets(config: MdnConfig, targets: tuple) -> tuple:
    if len(targets) != len(config.output_spec):
        raise MdnSpecError("target tuple does not match output spec")
    out = []
    for head, t in zip(config.output_spec, targets):
        if isinstance(head, CategoricalHead):
            out.append(np.asarray(t, dtype=np.int64))
        else:
            out.append(np.asarray(t, dtype=np.float64))
    return tuple(out)


def _nll_and_grad(
    config: MdnConfig, params: MdnParams, batch: Batch, want_grad: bool = True
) -> tuple[float, MdnParams | None]:
    x, targets = batch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise MdnSpecError(f"batch input shape {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise MdnSpecError("empty batch")
    targets = _batch_targets(config, targets)
    # overflow to inf is fine: the caller's divergence guard handles it
    with np.errstate(over="ignore"):
        return _nll_and_grad_inner(config, params, x, targets, want_grad)


def _nll_and_grad_inner(
    config: MdnConfig,
    params: MdnParams,
    x: np.ndarray,
    targets: tuple,
    want_grad: bool,
) -> tuple[float, MdnParams | None]:
    n = x.shape[0]
    z1, h1, z2, h2, o = _forward_raw(params, x)
    k = config.n_mixtures

    o_w = o[:, :k]
    log_w = o_w - logsumexp(o_w, axis=1, keepdims=True)
    comp = np.broadcast_to(log_w, (n, k)).copy()
    blocks = _head_blocks(config, o)
    cache = []
    for head, block, t in zip(config.output_spec, blocks, targets):
        if isinstance(head, CategoricalHead):
            if head.cardinality == 2:
                l = block[:, :, 0]
                tt = t[:, None].astype(np.float64)
                comp += tt * (-softplus(-l)) - (1.0 - tt) * softplus(l)
                cache.append(("bern", l, tt))
            else:
                logp = block - logsumexp(block, axis=2, keepdims=True)
                comp += np.take_along_axis(
                    logp, t[:, None, None].repeat(k, axis=1), axis=2
                )[:, :, 0]
                cache.append(("cat", logp, t))
        else:
            d = head.dim
            mean = block[:, :, :d]
            s = block[:, :, d]
            v_raw = softplus(s)
            var = np.maximum(v_raw, config.variance_floor)
            floored = v_raw < config.variance_floor
            diff = t[:, None, :] - mean
            sq = (diff**2).sum(axis=2)
            comp += -0.5 * d * (LOG_2PI + np.log(var)) - sq / (2.0 * var)
            cache.append(("gauss", s, var, floored, diff, sq))

    log_q = logsumexp(comp, axis=1)
    if not np.all(np.isfinite(log_q)):
        bad = int(np.flatnonzero(~np.isfinite(log_q))[0])
        raise TrainingError(f"non-finite log density at batch sample {bad}", bad)
    loss = float(-log_q.mean())
    if not want_grad:
        return loss, None

    # d(mean NLL)/dO, assembled per sample then backpropagated
    r = np.exp(comp - log_q[:, None])  # responsibilities (n, k)
    d_o = np.empty_like(o)
    d_o[:, :k] = softmax(o_w, axis=1) - r
    start = k
    for head, entry in zip(config.output_spec, cache):
        size = head.raw_size
        block_grad = np.empty((n, k, size))
        if entry[0] == "bern":
            _, l, tt = entry
            block_grad[:, :, 0] = -r * (tt - sigmoid(l))
        elif entry[0] == "cat":
            _, logp, t = entry
            grad = np.exp(logp)  # softmax; subtract the one-hot target
            idx = t[:, None, None].repeat(k, axis=1)
            np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=2) - 1.0, axis=2)
            block_grad[:] = r[:, :, None] * grad
        else:
            _, s, var, floored, diff, sq = entry
            d = head.dim
            block_grad[:, :, :d] = -r[:, :, None] * diff / var[:, :, None]
            dlogf_dvar = -0.5 * d / var + sq / (2.0 * var**2)
            block_grad[:, :, d] = np.where(floored, 0.0, -r * dlogf_dvar * sigmoid(s))
        d_o[:, start : start + k * size] = block_grad.reshape(n, k * size)
        start += k * size
    d_o /= n

    d_h2 = d_o @ params.w3.T
    d_z2 = d_h2 * _elu_grad(z2)
    d_h1 = d_z2 @ params.w2.T
    d_z1 = d_h1 * _elu_grad(z1)
    grads = MdnParams(
        w1=x.T @ d_z1,
        b1=d_z1.sum(axis=0),
        w2=h1.T @ d_z2,
        b2=d_z2.sum(axis=0),
        w3=h2.T @ d_o,
        b3=d_o.sum(axis=0),
    )
    return loss, grads


def nll(config: MdnConfig, params: MdnParams, batch: Batch) -> float:
    """Mean negative log density over the batch."""
    loss, _ = _nll_and_grad(config, params, batch, want_grad=False)
    return loss


def grad_nll(config: MdnConfig, params: MdnParams, batch: Batch) -> MdnParams:
    """Exact gradient of the mean negative log density over the batch."""
    _, grads = _nll_and_grad(config, params, batch)
    assert grads is not None
    return grads


# ---------------------------------------------------------------------------
# Optimizer


@dataclasses.dataclass(frozen=True)
class OptimizerHyperparams:
    lr: float = 1e-3
    batch_size: int = 256
    steps: int = 1000
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise MdnSpecError(f"unknown optimizer {self.optimizer!r}")


def optimize(
    config: MdnConfig,
    params: MdnParams,
    batch_stream: Iterable[Batch],
    hyper: OptimizerHyperparams,
    record: Callable[[int, float], None] | None = None,
    inspect: Callable[[int, "MdnParams"], None] | None = None,
    inspect_every: int = 0,
) -> MdnParams:
    """Minimize mean NLL over `hyper.steps` minibatches from the stream.

    Deterministic given a deterministic stream. Raises OptimizeDiverged on a
    non-finite or absurdly large loss. `record(step, loss)` sees every
    minibatch loss before its update; `inspect(step_count, params_copy)`
    runs after every `inspect_every`-th update.
    """
    arrays = [a.copy() for a in params.arrays()]
    if hyper.optimizer == "adam":
        m = [np.zeros_like(a) for a in arrays]
        v = [np.zeros_like(a) for a in arrays]
    stream: Iterator[Batch] = iter(batch_stream)
    for step in range(hyper.steps):
        batch = next(stream)
        try:
            loss, grads = _nll_and_grad(config, MdnParams(*arrays), batch)
        except TrainingError as err:
            raise OptimizeDiverged(f"step {step}: {err}") from err
        if not np.isfinite(loss) or loss > 1e6:
            raise OptimizeDiverged(f"step {step}: loss {loss}")
        if record is not None:
            record(step, loss)
        gs = grads.arrays()
        if hyper.optimizer == "sgd":
            for a, g in zip(arrays, gs):
                a -= hyper.lr * g
        else:
            t = step + 1
            for i, (a, g) in enumerate(zip(arrays, gs)):
                m[i] = hyper.beta1 * m[i] + (1 - hyper.beta1) * g
                v[i] = hyper.beta2 * v[i] + (1 - hyper.beta2) * g * g
                m_hat = m[i] / (1 - hyper.beta1**t)
                v_hat = v[i] / (1 - hyper.beta2**t)
                a -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        if inspect is not None and inspect_every > 0 and (step + 1) % inspect_every == 0:
            inspect(step + 1, MdnParams(*(a.copy() for a in arrays)))
    return MdnParams(*arrays)


# ---------------------------------------------------------------------------
# Versioned binary param files (+ JSON sidecar with training metadata)

_MAGIC = b"NBMDN\x00"
_FORMAT_VERSION = 1
_HEAD_KIND = {"categorical": 0, "gaussian": 1}


def save_params(
    path: str,
    config: MdnConfig,
    params: MdnParams,
    encoding_tag: str,
    metadata: dict | None = None,
) -> None:
    _check_param_shapes(config, params)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(
            struct.pack(
                "<IIIId",
                config.input_dim,
                config.hidden_dims[0],
                config.hidden_dims[1],
                config.n_mixtures,
                config.variance_floor,
            )
        )
        fh.write(struct.pack("<I", len(config.output_spec)))
        for head in config.output_spec:
            if isinstance(head, CategoricalHead):
                fh.write(struct.pack("<BI", _HEAD_KIND["categorical"], head.cardinality))
            else:
                fh.write(struct.pack("<BI", _HEAD_KIND["gaussian"], head.dim))
        tag = encoding_tag.encode("utf-8")
        fh.write(struct.pack("<I", len(tag)))
        fh.write(tag)
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    if metadata is not None:
        with open(path + ".json", "w") as fh:
            json.dump(metadata, fh, indent=2)


def load_params(path: str) -> tuple[MdnConfig, MdnParams, str, dict | None]:
    """Returns (config, params, encoding_tag, sidecar metadata or None)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise MdnSpecError(f"{path}: not a params file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FORMAT_VERSION:
            raise MdnSpecError(f"{path}: unsupported format version {version}")
        input_dim, h1, h2, n_mix, floor = struct.unpack("<IIIId", fh.read(24))
        (n_heads,) = struct.unpack("<I", fh.read(4))
        heads: list[Head] = []
        for _ in range(n_heads):
            kind, size = struct.unpack("<BI", fh.read(5))
            heads.append(CategoricalHead(size) if kind == 0 else GaussianHead(size))
        (tag_len,) = struct.unpack("<I", fh.read(4))
        encoding_tag = fh.read(tag_len).decode("utf-8")
        config = MdnConfig(
            input_dim=input_dim,
            hidden_dims=(h1, h2),
            n_mixtures=n_mix,
            output_spec=tuple(heads),
            variance_floor=floor,
        )
        dims = (input_dim, h1, h2, config.output_dim)
        shapes = [
            (dims[0], dims[1]), (dims[1],),
            (dims[1], dims[2]), (dims[2],),
            (dims[2], dims[3]), (dims[3],),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise MdnSpecError(f"{path}: truncated weight data")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        if fh.read(1):
            raise MdnSpecError(f"{path}: trailing data")
    params = MdnParams(*arrays)
    metadata = None
    try:
        with open(path + ".json") as mh:
            metadata = json.load(mh)
    except FileNotFoundError:
        pass
    return config, params, encoding_tag, metadata
