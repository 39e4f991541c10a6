import io

import numpy as np
import pytest

from neuralblock.models import DiscreteModel, FactorTable
from neuralblock.oracle import enumerate_marginals, exact_block_conditional
from neuralblock.samplers import (
    ChainState,
    ProposalOutcome,
    SamplerError,
    TraceWriter,
    chain_rng,
    exact_block_gibbs_step,
    gibbs_sweep,
    make_chain_state,
    mh_step,
    single_site_conditional,
)

from .helpers import random_binary_bn


def two_coins(p0=0.3, p1=0.7):
    return DiscreteModel(
        cards=(2, 2),
        factors=(
            FactorTable(scope=(0,), values=np.array([1 - p0, p0])),
            FactorTable(scope=(1,), values=np.array([1 - p1, p1])),
        ),
        kind="directed",
        parents=((), ()),
    )


def coupled_pair(flip=1e-4, p_x=0.5):
    """x -> y with y = x except with probability `flip`."""
    return DiscreteModel(
        cards=(2, 2),
        factors=(
            FactorTable(scope=(0,), values=np.array([1 - p_x, p_x])),
            FactorTable(
                scope=(0, 1), values=np.array([[1 - flip, flip], [flip, 1 - flip]])
            ),
        ),
        kind="directed",
        parents=((), (0,)),
    )


def test_chain_rng_streams():
    a = chain_rng(7, 0).random(5)
    b = chain_rng(7, 0).random(5)
    c = chain_rng(7, 1).random(5)
    d = chain_rng(8, 0).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_make_chain_state_directed_respects_evidence():
    model = coupled_pair()
    state = make_chain_state(model, evidence={1: 1}, seed=3)
    assert state.assignment[1] == 1
    assert state.log_joint() > float("-inf")
    assert state.latents == (0,)


def test_make_chain_state_redraws_until_feasible():
    # y copies x deterministically; evidence y=1 forces redraw whenever the
    # ancestral pass draws x=0.
    model = coupled_pair(flip=0.0)
    for seed in range(20):
        state = make_chain_state(model, evidence={1: 1}, seed=seed)
        assert state.assignment[0] == 1


def test_make_chain_state_impossible_evidence():
    model = coupled_pair(flip=0.0)
    with pytest.raises(SamplerError):
        make_chain_state(model, evidence={0: 0, 1: 1}, seed=0)


def test_make_chain_state_undirected():
    equal = FactorTable(scope=(0, 1), values=np.array([[1.0, 0.0], [0.0, 1.0]]))
    model = DiscreteModel(cards=(2, 2), factors=(equal,), kind="undirected")
    for seed in range(10):
        state = make_chain_state(model, evidence={1: 1}, seed=seed)
        assert state.assignment[0] == 1


def test_chain_state_validation():
    model = two_coins()
    rng = chain_rng(0)
    with pytest.raises(SamplerError):
        ChainState(model=model, assignment=np.zeros(3, dtype=int), evidence={}, rng=rng)
    with pytest.raises(SamplerError):
        ChainState(
            model=model, assignment=np.zeros(2, dtype=int), evidence={0: 1}, rng=rng
        )


def test_single_site_conditional_values():
    model = coupled_pair(flip=0.1, p_x=0.4)
    # p(x | y=1) ~ (0.6*0.1, 0.4*0.9)
    probs = single_site_conditional(model, np.array([0, 1]), 0)
    expect = np.array([0.06, 0.36])
    np.testing.assert_allclose(probs, expect / expect.sum(), atol=1e-12)


def test_single_site_zero_support():
    dead = FactorTable(scope=(0, 1), values=np.array([[1.0, 0.0], [0.0, 0.0]]))
    model = DiscreteModel(cards=(2, 2), factors=(dead,), kind="undirected")
    state = ChainState(
        model=model, assignment=np.array([1, 0]), evidence={}, rng=chain_rng(0)
    )
    with pytest.raises(SamplerError, match="variable 1"):
        gibbs_sweep(model, state, schedule=[1])


def test_gibbs_sweep_rejects_evidence_variable():
    model = two_coins()
    state = make_chain_state(model, evidence={0: 1}, seed=0)
    with pytest.raises(SamplerError):
        gibbs_sweep(model, state, schedule=[0])


def test_gibbs_sweep_independent_coins_sample_prior():
    # With independent variables one sweep draws exactly from the prior, so
    # consecutive sweeps give iid prior samples.
    model = two_coins(0.3, 0.7)
    state = make_chain_state(model, seed=1)
    n = 20_000
    counts = np.zeros((2, 2))
    for _ in range(n):
        gibbs_sweep(model, state)
        counts[state.assignment[0], state.assignment[1]] += 1
    freqs = counts / n
    expect = np.outer([0.7, 0.3], [0.3, 0.7])
    assert np.abs(freqs - expect).max() < 4 * np.sqrt(0.25 / n) + 0.005
    assert state.epoch == n


def test_gibbs_sweep_kernel_preserves_posterior():
    # Closed-form sweep kernel (resample x then y) applied to the exact
    # posterior must return the posterior itself.
    model = coupled_pair(flip=1e-4, p_x=0.5)
    marg = enumerate_marginals(model, {})
    # joint from the model directly (2x2): p(x) * p(y|x)
    px = np.array([0.5, 0.5])
    flip = 1e-4
    joint = np.array([[0.5 * (1 - flip), 0.5 * flip], [0.5 * flip, 0.5 * (1 - flip)]])
    posterior = joint.reshape(-1)
    kernel = np.zeros((4, 4))
    for x in range(2):
        for y in range(2):
            i = 2 * x + y
            px_cond = single_site_conditional(model, np.array([x, y]), 0)
            for x2 in range(2):
                py_cond = single_site_conditional(model, np.array([x2, y]), 1)
                for y2 in range(2):
                    kernel[i, 2 * x2 + y2] += px_cond[x2] * py_cond[y2]
    np.testing.assert_allclose(posterior @ kernel, posterior, atol=1e-12)
    # sanity: single-variable marginals from the enumeration oracle agree
    np.testing.assert_allclose(marg.probs[0], joint.sum(axis=1), atol=1e-12)


def test_single_site_chain_rarely_leaves_modes():
    # Cross-mode moves pass through probability-1e-4 mixed states, so mixed
    # states appear in well under 0.1% of sweeps.
    model = coupled_pair(flip=1e-4)
    state = ChainState(
        model=model, assignment=np.array([0, 0]), evidence={}, rng=chain_rng(5)
    )
    n = 10_000
    mixed = 0
    for _ in range(n):
        gibbs_sweep(model, state)
        mixed += state.assignment[0] != state.assignment[1]
    assert mixed / n < 0.001


def test_gibbs_grid_marginals_match_oracle():
    rng = np.random.default_rng(11)
    from neuralblock.motifs import sample_grid_model

    model = sample_grid_model(3, 3, rng, p_determ=0.0, alpha=(1.0, 1.0))
    evidence = {8: 1}
    oracle = enumerate_marginals(model, evidence)
    state = make_chain_state(model, evidence=evidence, seed=2)
    n = 20_000
    ones = np.zeros(9)
    for _ in range(n):
        gibbs_sweep(model, state)
        ones += state.assignment
    est = ones / n
    tv = max(
        abs(est[v] - oracle.probs[v][1]) for v in range(9) if v not in evidence
    )
    assert tv < 0.03


def _conditional_proposal(model, block):
    block = list(block)
    rest = [v for v in range(model.num_vars) if v not in block]

    def context(assignment):
        return {v: int(assignment[v]) for v in rest}

    def sampler(assignment, rng):
        cond = exact_block_conditional(model, block, context(assignment))
        flat = cond.table.reshape(-1)
        pick = int(rng.choice(flat.size, p=flat))
        return tuple(int(s) for s in np.unravel_index(pick, cond.table.shape))

    def density(assignment, values):
        cond = exact_block_conditional(model, block, context(assignment))
        return float(np.log(cond.table[tuple(values)]))

    return sampler, density


def test_gibbs_as_mh_has_zero_log_alpha():
    # Exact block conditionals as MH proposals: acceptance ratio is exactly 1
    # on 1000 random (model, state, block) triples.
    rng = np.random.default_rng(13)
    for trial in range(1000):
        model = random_binary_bn(int(rng.integers(3, 7)), rng)
        state = make_chain_state(model, seed=int(rng.integers(2**31)))
        n_block = int(rng.integers(1, min(4, model.num_vars) + 1))
        block = list(rng.choice(model.num_vars, size=n_block, replace=False))
        sampler, density = _conditional_proposal(model, block)
        _, outcome = mh_step(model, state, block, sampler, density)
        assert outcome.log_alpha == pytest.approx(0.0, abs=1e-9)
        assert outcome.accepted


def test_mh_symmetric_uniform_proposal_on_uniform_model():
    model = DiscreteModel(
        cards=(2, 2),
        factors=(FactorTable(scope=(0, 1), values=np.full((2, 2), 0.25)),),
        kind="undirected",
    )
    state = make_chain_state(model, seed=4)

    def sampler(assignment, rng):
        return (int(rng.integers(2)), int(rng.integers(2)))

    def density(assignment, values):
        return float(np.log(0.25))

    for _ in range(200):
        _, outcome = mh_step(model, state, [0, 1], sampler, density)
        assert outcome.accepted and outcome.log_alpha == 0.0


def test_mh_rejection_keeps_state_bit_identical():
    model = coupled_pair(flip=0.0)
    state = make_chain_state(model, seed=6)
    before = state.assignment.copy()
    mode = int(before[0])

    def sampler(assignment, rng):
        return (1 - mode, mode)  # always propose a zero-probability pair

    def density(assignment, values):
        return 0.0

    _, outcome = mh_step(model, state, [0, 1], sampler, density)
    assert not outcome.accepted
    assert outcome.log_alpha == float("-inf")
    assert np.array_equal(state.assignment, before)


def test_mh_flags_non_finite_proposal_density():
    model = two_coins()
    state = make_chain_state(model, seed=7)
    before = state.assignment.copy()

    def sampler(assignment, rng):
        return (int(1 - assignment[0]),)

    for bad in (float("nan"), float("inf"), float("-inf")):
        _, outcome = mh_step(model, state, [0], sampler, lambda a, v: bad)
        assert outcome.flagged and not outcome.accepted
        assert np.array_equal(state.assignment, before)


def test_mh_rejects_blocks_containing_evidence():
    model = two_coins()
    state = make_chain_state(model, evidence={1: 0}, seed=8)
    with pytest.raises(SamplerError):
        mh_step(model, state, [1], lambda a, r: (1,), lambda a, v: 0.0)


def test_mh_detailed_balance_on_fixed_stochastic_proposal():
    # Random 3-variable model, fixed dense row-stochastic proposal over the
    # 8 joint states; MH correction must make transition counts symmetric
    # in the detailed-balance sense.
    rng = np.random.default_rng(17)
    model = random_binary_bn(3, rng)
    q = rng.dirichlet(np.ones(8), size=8)  # q[i, j]: propose state j from i

    def encode(assignment):
        return int(assignment[0] * 4 + assignment[1] * 2 + assignment[2])

    def decode(i):
        return ((i >> 2) & 1, (i >> 1) & 1, i & 1)

    def sampler(assignment, r):
        return decode(int(r.choice(8, p=q[encode(assignment)])))

    def density(assignment, values):
        j = values[0] * 4 + values[1] * 2 + values[2]
        return float(np.log(q[encode(assignment), j]))

    state = make_chain_state(model, seed=9)
    n = 100_000
    burn = 2_000
    counts = np.zeros((8, 8))
    visits = np.zeros(8)
    prev = encode(state.assignment)
    for step in range(n + burn):
        mh_step(model, state, [0, 1, 2], sampler, density)
        cur = encode(state.assignment)
        if step >= burn:
            counts[prev, cur] += 1
            visits[cur] += 1
        prev = cur

    for i in range(8):
        for j in range(i + 1, 8):
            gap = abs(counts[i, j] - counts[j, i])
            assert gap <= 4 * np.sqrt(counts[i, j] + counts[j, i]) + 4

    oracle = enumerate_marginals(model, {})
    est = visits / visits.sum()
    for v in range(3):
        p1 = sum(est[i] for i in range(8) if decode(i)[v] == 1)
        assert abs(p1 - oracle.probs[v][1]) < 0.02


def test_exact_block_gibbs_is_posterior_draw():
    # Block = all latent variables: every step is an independent exact
    # posterior sample.
    rng = np.random.default_rng(19)
    model = random_binary_bn(4, rng)
    evidence = {3: 1}
    oracle = enumerate_marginals(model, evidence)
    state = make_chain_state(model, evidence=evidence, seed=10)
    n = 4_000
    ones = np.zeros(4)
    for _ in range(n):
        exact_block_gibbs_step(model, [0, 1, 2], state)
        ones += state.assignment
    for v in range(3):
        p1 = oracle.probs[v][1]
        assert abs(ones[v] / n - p1) < 4 * np.sqrt(p1 * (1 - p1) / n) + 1e-3


def test_exact_block_gibbs_mode_ratio():
    # Deterministic-coupled pair: block moves jump modes at the exact ratio.
    model = coupled_pair(flip=1e-3, p_x=0.3)
    state = make_chain_state(model, seed=12)
    n = 5_000
    m11 = 0
    for _ in range(n):
        exact_block_gibbs_step(model, [0, 1], state)
        m11 += int(state.assignment[0] == 1 and state.assignment[1] == 1)
    joint = np.array(
        [[0.7 * (1 - 1e-3), 0.7 * 1e-3], [0.3 * 1e-3, 0.3 * (1 - 1e-3)]]
    )
    p11 = joint[1, 1] / joint.sum()
    assert abs(m11 / n - p11) < 3 * np.sqrt(p11 * (1 - p11) / n)


def test_trace_writer_format():
    buf = io.StringIO()
    tw = TraceWriter(buf)
    tw.record(0, "gibbs", [3], True, -1.5, wall_ns=123)
    tw.record(1, "block", [0, 1, 2], False, -2.5, wall_ns=456)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "epoch,wall_ns,kind,block,accepted,log_joint"
    assert lines[1] == "0,123,gibbs,3,1,-1.5"
    assert lines[2] == "1,456,block,0|1|2,0,-2.5"


def test_proposal_outcome_fields():
    out = ProposalOutcome(
        proposed={0: 1},
        log_q_forward=-0.5,
        log_q_reverse=-0.7,
        accepted=True,
        log_alpha=-0.1,
    )
    assert not out.flagged
