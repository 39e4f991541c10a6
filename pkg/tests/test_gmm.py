"""Open-universe GMM tests.

The strongest oracle here: for m=2 the pair conditional is the whole
posterior, which has a closed form as a finite mixture of conjugate
Gaussians (one component per activity pattern and label assignment).
Injecting it as the pair proposal must drive MH acceptance to 1, and the
resulting chain draws must match the exact posterior over activity
patterns.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralblock import gmm, mdn, motifs, training
from neuralblock.gmm import GmmError, GmmSpec, GmmState
from neuralblock.numerics import logsumexp


def _rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Collapsed likelihood


def _full_joint_by_enumeration(spec, mu, v, x):
    """Sum the uncollapsed joint over every label vector."""
    active = np.flatnonzero(v)
    M = len(active)
    base = -math.log(spec.m) - gmm._log_comb(spec.m, M)
    base += gmm._iso_logpdf(mu, np.zeros(spec.d), spec.sigma2_mu).sum()
    terms = []
    for z in itertools.product(active, repeat=spec.n):
        lp = base
        for i, zi in enumerate(z):
            lp += -math.log(M) + gmm._iso_logpdf(x[i], mu[zi], spec.sigma2)
        terms.append(lp)
    return float(logsumexp(np.array(terms)))


def test_collapsed_matches_label_enumeration():
    rng = _rng(1)
    for m, n in [(2, 3), (3, 4), (3, 6)]:
        spec = GmmSpec(m=m, n=n)
        state, x = gmm.sample_prior(spec, rng)
        got = gmm.collapsed_log_likelihood(spec, state.mu, state.v, x)
        want = _full_joint_by_enumeration(spec, state.mu, state.v, x)
        assert got == pytest.approx(want, abs=1e-10)


def test_collapsed_single_component_closed_form():
    spec = GmmSpec(m=3, n=5)
    rng = _rng(2)
    mu = rng.normal(size=(3, 2))
    v = np.array([0, 1, 0])
    x = rng.normal(size=(5, 2))
    got = gmm.collapsed_log_likelihood(spec, mu, v, x)
    want = (
        -math.log(3)
        - math.log(3)  # C(3,1)
        + gmm._iso_logpdf(mu, np.zeros(2), 4.0).sum()
        + gmm._iso_logpdf(x, mu[1], 0.1).sum()  # log M = 0
    )
    assert got == pytest.approx(want, abs=1e-12)


def test_collapsed_invariant_to_active_relabeling():
    # same multiset of active means in different slots
    spec = GmmSpec(m=3, n=4)
    rng = _rng(3)
    x = rng.normal(size=(4, 2))
    means = rng.normal(size=(2, 2))
    spare = rng.normal(size=2)
    mu_a = np.stack([means[0], means[1], spare])
    mu_b = np.stack([means[0], spare, means[1]])
    a = gmm.collapsed_log_likelihood(spec, mu_a, np.array([1, 1, 0]), x)
    b = gmm.collapsed_log_likelihood(spec, mu_b, np.array([1, 0, 1]), x)
    # spare slot carries the same prior mass in both
    assert a == pytest.approx(b, abs=1e-12)


def test_collapsed_rejects_all_inactive():
    spec = GmmSpec(m=2, n=1)
    with pytest.raises(GmmError, match="active"):
        gmm.collapsed_log_likelihood(
            spec, np.zeros((2, 2)), np.zeros(2, dtype=int), np.zeros((1, 2))
        )


def test_state_m_is_derived_not_stored():
    state = GmmState(mu=np.zeros((3, 2)), v=np.array([1, 0, 1]))
    assert state.M == 2
    assert "M" not in [f.name for f in state.__dataclass_fields__.values()]
    with pytest.raises(AttributeError):
        state.M = 5


# ---------------------------------------------------------------------------
# Encoding


def test_encoding_dimension_matches_network_contract():
    spec = GmmSpec(m=8, n=60)
    assert gmm.encoded_dim(spec) == 156
    motif = motifs.gmm_pair_motif()
    config = training.motif_config(motif)
    assert (config.input_dim, *config.hidden_dims, config.output_dim) == (
        156, 624, 624, 36,
    )
    assert 4 <= mdn.sizing_lambda(config) <= 5


def test_encoding_layout():
    spec = GmmSpec(m=8, n=60)
    rng = _rng(4)
    state, x = gmm.sample_prior(spec, rng)
    enc = gmm.encode_gmm_input(spec, state.mu, state.v, x, (1, 6))
    xc = x[np.lexsort(x.T[::-1])]  # the canonical pre-ordering
    center, pc = gmm.principal_direction(xc)
    order = np.argsort((xc - center) @ pc, kind="stable")
    assert np.array_equal(enc[:120].reshape(60, 2), xc[order])
    assert np.array_equal(enc[136:144], np.sort(enc[136:144])[::-1] * 0 + enc[136:144])  # v block present
    assert enc[136:144].sum() == state.v.sum() - state.v[[1, 6]].sum()
    assert np.array_equal(enc[144:146], center)
    assert np.array_equal(enc[146:148], pc)
    assert enc[148:156].sum() == 2.0  # pair indicators


def test_encoding_independent_of_pair_values():
    # the vector is a function of the conditioning context only, so one
    # network call serves the forward and reverse proposal densities
    spec = GmmSpec(m=8, n=60)
    rng = _rng(5)
    state, x = gmm.sample_prior(spec, rng)
    enc = gmm.encode_gmm_input(spec, state.mu, state.v, x, (2, 5))
    mu2 = state.mu.copy()
    mu2[2], mu2[5] = (57.0, -3.0), (0.02, 11.0)
    v2 = state.v.copy()
    v2[2], v2[5] = 1 - v2[2], 1 - v2[5]
    assert np.array_equal(enc, gmm.encode_gmm_input(spec, mu2, v2, x, (2, 5)))
    assert np.array_equal(enc, gmm.encode_gmm_input(spec, state.mu, state.v, x, (5, 2)))


def test_encoding_invariant_to_data_permutation():
    spec = GmmSpec(m=4, n=12)
    rng = _rng(6)
    state, x = gmm.sample_prior(spec, rng)
    enc = gmm.encode_gmm_input(spec, state.mu, state.v, x, (0, 3))
    for _ in range(5):
        perm = rng.permutation(12)
        assert np.array_equal(
            enc, gmm.encode_gmm_input(spec, state.mu, state.v, x[perm], (0, 3))
        )


def test_encoding_invariant_to_duplicate_inactive_swap():
    spec = GmmSpec(m=4, n=6)
    rng = _rng(7)
    _, x = gmm.sample_prior(spec, rng)
    shared = np.array([0.4, -1.1])
    mu = np.stack([rng.normal(size=2), shared, shared, rng.normal(size=2)])
    v = np.array([1, 0, 0, 1])
    a = gmm.encode_gmm_input(spec, mu, v, x, (0, 3))
    swapped = mu.copy()
    swapped[[1, 2]] = swapped[[2, 1]]
    b = gmm.encode_gmm_input(spec, swapped, v, x, (0, 3))
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 2**32 - 1))
def test_principal_direction_sign_fixed_under_rotation(angle, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 2)) @ np.diag([3.0, 0.5])
    rot = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    _, pc = gmm.principal_direction(x @ rot.T)
    assert pc.shape == (2,)
    assert np.linalg.norm(pc) == pytest.approx(1.0, abs=1e-12)
    nz = np.flatnonzero(pc)
    assert pc[nz[0]] > 0
    # pure function: recomputing gives the identical vector
    _, pc2 = gmm.principal_direction(x @ rot.T)
    assert np.array_equal(pc, pc2)


def test_encode_validates_pair_and_shapes():
    spec = GmmSpec(m=4, n=6)
    rng = _rng(8)
    state, x = gmm.sample_prior(spec, rng)
    with pytest.raises(GmmError, match="differ"):
        gmm.encode_gmm_input(spec, state.mu, state.v, x, (1, 1))
    with pytest.raises(GmmError, match="range"):
        gmm.encode_gmm_input(spec, state.mu, state.v, x, (0, 4))
    with pytest.raises(GmmError, match="shape"):
        gmm.encode_gmm_input(spec, state.mu[:3], state.v, x, (0, 1))


# ---------------------------------------------------------------------------
# Label restoration


def test_label_conditional_matches_direct_computation():
    spec = GmmSpec(m=4, n=7)
    rng = _rng(9)
    state, x = gmm.sample_prior(spec, rng)
    active, logw = gmm.label_log_weights(spec, state.mu, state.v, x)
    assert np.array_equal(active, np.flatnonzero(state.v))
    for i in range(spec.n):
        for a, j in enumerate(active):
            want = -0.5 * 2 * (np.log(2 * np.pi) + np.log(0.1)) - (
                (x[i] - state.mu[j]) ** 2
            ).sum() / 0.2
            assert logw[i, a] == pytest.approx(want, rel=1e-12)


def test_resample_labels_frequencies():
    spec = GmmSpec(m=2, n=1)
    mu = np.array([[0.0, 0.0], [1.0, 0.0]])
    v = np.array([1, 1])
    x = np.array([[0.25, 0.0]])
    active, logw = gmm.label_log_weights(spec, mu, v, x)
    p1 = np.exp(logw[0, 1] - logsumexp(logw[0]))
    rng = _rng(10)
    draws = np.array(
        [gmm.resample_labels(spec, mu, v, x, rng)[0] for _ in range(4000)]
    )
    assert abs((draws == 1).mean() - p1) < 4 * math.sqrt(p1 * (1 - p1) / 4000)


def test_resample_labels_single_active_is_deterministic():
    spec = GmmSpec(m=3, n=5)
    rng = _rng(11)
    _, x = gmm.sample_prior(spec, rng)
    mu = rng.normal(size=(3, 2))
    z = gmm.resample_labels(spec, mu, np.array([0, 1, 0]), x, rng)
    assert np.array_equal(z, np.ones(5, dtype=int))


# ---------------------------------------------------------------------------
# Exact pair-conditional oracle (m=2): mixture of conjugate Gaussians


class _ExactPairOracle:
    """p(mu, v | x) for m=2 as a finite mixture over (v pattern, labels)."""

    def __init__(self, spec, x):
        assert spec.m == 2
        self.spec = spec
        tau0, tau = 1.0 / spec.sigma2_mu, 1.0 / spec.sigma2
        d = spec.d
        comps = []  # (pattern, means (2,d), variances (2,), log weight)

        def log_ml(xs):
            k = xs.shape[0]
            prec = tau0 + k * tau
            s = xs.sum(axis=0) if k else np.zeros(d)
            mean = tau * s / prec
            ss = float((xs**2).sum())
            return (
                0.5 * k * d * math.log(tau / (2 * np.pi))
                + 0.5 * d * math.log(tau0 / (2 * np.pi))
                + 0.5 * d * math.log(2 * np.pi / prec)
                - 0.5 * (tau * ss - prec * float((mean**2).sum()))
            )

        def posterior(xs):
            k = xs.shape[0]
            prec = tau0 + k * tau
            s = xs.sum(axis=0) if k else np.zeros(d)
            return tau * s / prec, 1.0 / prec

        n = spec.n
        for pattern in ((1, 0), (0, 1), (1, 1)):
            M = sum(pattern)
            prior = -gmm._log_comb(2, M) - n * math.log(M)
            active = [j for j in (0, 1) if pattern[j]]
            for labels in itertools.product(active, repeat=n):
                sets = [
                    x[[i for i in range(n) if labels[i] == j]] for j in (0, 1)
                ]
                means, variances = zip(*(posterior(s) for s in sets))
                lw = prior + sum(log_ml(s) for s in sets)
                comps.append(
                    (pattern, np.stack(means), np.array(variances), lw)
                )
        lws = np.array([c[3] for c in comps])
        self.comps = comps
        self.log_weights = lws - logsumexp(lws)

    def log_pattern_prob(self, pattern):
        sel = [
            lw
            for (pat, _, _, _), lw in zip(self.comps, self.log_weights)
            if pat == pattern
        ]
        return float(logsumexp(np.array(sel)))

    def log_q(self, mu, v):
        pattern = (int(v[0]), int(v[1]))
        terms = []
        for (pat, means, variances, _), lw in zip(self.comps, self.log_weights):
            if pat != pattern:
                continue
            lp = lw
            for j in (0, 1):
                lp += gmm._iso_logpdf(mu[j], means[j], variances[j])
            terms.append(lp)
        return float(logsumexp(np.array(terms)))

    def propose(self, spec, mu, v, x, pair, rng):
        idx = int(
            rng.choice(len(self.comps), p=np.exp(self.log_weights))
        )
        pattern, means, variances, _ = self.comps[idx]
        new_mu = means + np.sqrt(variances)[:, None] * rng.standard_normal(
            (2, spec.d)
        )
        new_vals = (new_mu[0], pattern[0], new_mu[1], pattern[1])
        log_fwd = self.log_q(new_mu, np.array(pattern))
        log_rev = self.log_q(mu[[pair[0], pair[1]]], v[[pair[0], pair[1]]])
        return new_vals, log_fwd, log_rev


@pytest.fixture(scope="module")
def tiny_posterior():
    spec = GmmSpec(m=2, n=4)
    rng = _rng(12)
    x = np.array([[1.0, 0.2], [1.1, -0.1], [-0.9, 0.1], [-1.2, 0.0]])
    return spec, x, _ExactPairOracle(spec, x), rng


def test_oracle_density_proportional_to_collapsed(tiny_posterior):
    # exp(collapsed) / q must be the constant p(x) wherever q is the
    # exact posterior; this certifies the oracle against the likelihood
    spec, x, oracle, rng = tiny_posterior
    ratios = []
    for _ in range(12):
        mu = rng.normal(scale=1.5, size=(2, 2))
        v = np.array([(1, 0), (0, 1), (1, 1)][int(rng.integers(3))])
        lr = gmm.collapsed_log_likelihood(spec, mu, v, x) - oracle.log_q(mu, v)
        ratios.append(lr)
    assert np.ptp(ratios) < 1e-9


def test_exact_proposal_always_accepts(tiny_posterior):
    spec, x, oracle, _ = tiny_posterior
    rng = _rng(13)
    state = gmm.init_state(spec, x, rng)
    alphas = []
    for _ in range(150):
        state, outcome = gmm.neural_pair_step(spec, state, oracle, x, rng)
        alphas.append(outcome.log_alpha)
        assert outcome.accepted
        assert not outcome.flagged
    assert max(abs(a) for a in alphas) < 1e-9


def test_exact_proposal_chain_matches_posterior_patterns(tiny_posterior):
    spec, x, oracle, _ = tiny_posterior
    rng = _rng(14)
    state = gmm.init_state(spec, x, rng)
    counts = {(1, 0): 0, (0, 1): 0, (1, 1): 0}
    n = 400
    for _ in range(n):
        state, _ = gmm.neural_pair_step(spec, state, oracle, x, rng)
        counts[(int(state.v[0]), int(state.v[1]))] += 1
    for pattern, c in counts.items():
        p = math.exp(oracle.log_pattern_prob(pattern))
        assert abs(c / n - p) < 4 * math.sqrt(p * (1 - p) / n) + 0.01


def test_exact_proposal_chain_restores_labels(tiny_posterior):
    spec, x, oracle, _ = tiny_posterior
    rng = _rng(15)
    state = gmm.init_state(spec, x, rng)
    for _ in range(30):
        state, _ = gmm.neural_pair_step(spec, state, oracle, x, rng)
        gmm.validate_state(spec, state)
        assert state.v[state.z].all()


# ---------------------------------------------------------------------------
# Pair step mechanics


class _StubProposal:
    def __init__(self, values, log_fwd=-1.0, log_rev=-1.0):
        self.values = values
        self.log_fwd = log_fwd
        self.log_rev = log_rev

    def propose(self, spec, mu, v, x, pair, rng):
        return self.values, self.log_fwd, self.log_rev


def test_all_inactive_proposal_auto_rejected():
    spec = GmmSpec(m=2, n=3)
    rng = _rng(16)
    state, x = gmm.sample_prior(spec, rng)
    stub = _StubProposal((np.zeros(2), 0, np.zeros(2), 0))
    new_state, outcome = gmm.neural_pair_step(spec, state, stub, x, rng)
    assert not outcome.accepted
    assert not outcome.flagged
    assert outcome.log_alpha == float("-inf")
    assert np.array_equal(new_state.mu, state.mu)
    assert np.array_equal(new_state.v, state.v)


def test_nonfinite_proposal_density_flags_and_freezes_state():
    spec = GmmSpec(m=2, n=3)
    rng = _rng(17)
    state, x = gmm.sample_prior(spec, rng)
    for bad in [
        _StubProposal((np.zeros(2), 1, np.zeros(2), 1), log_fwd=float("nan")),
        _StubProposal((np.zeros(2), 1, np.zeros(2), 1), log_fwd=float("inf")),
        _StubProposal((np.zeros(2), 1, np.zeros(2), 1), log_rev=float("inf")),
        _StubProposal((np.full(2, np.nan), 1, np.zeros(2), 1)),
    ]:
        new_state, outcome = gmm.neural_pair_step(spec, state, bad, x, rng)
        assert outcome.flagged and not outcome.accepted
        assert new_state is state  # bit-identical, z included


def test_impossible_reverse_rejects_without_flag():
    spec = GmmSpec(m=2, n=3)
    rng = _rng(18)
    state, x = gmm.sample_prior(spec, rng)
    stub = _StubProposal(
        (np.zeros(2), 1, np.zeros(2), 1), log_rev=float("-inf")
    )
    _, outcome = gmm.neural_pair_step(spec, state, stub, x, rng)
    assert not outcome.flagged
    assert not outcome.accepted
    assert outcome.log_alpha == float("-inf")


def test_neural_step_with_untrained_network_runs():
    motif = motifs.gmm_pair_motif()
    config = training.motif_config(motif)
    params = mdn.init_params(config, _rng(19))
    proposal = gmm.NeuralPairProposal(config=config, params=params)
    spec = GmmSpec(m=8, n=60)
    x, _ = gmm.circle_clusters(60, 3, radius=3.0, rng=_rng(20))
    rng = _rng(21)
    state = gmm.init_state(spec, x, rng, m_active=3)
    for _ in range(20):
        state, outcome = gmm.neural_pair_step(spec, state, proposal, x, rng)
        gmm.validate_state(spec, state)
        assert np.isfinite(outcome.log_q_forward)


def test_neural_step_deterministic_under_seed():
    motif = motifs.gmm_pair_motif()
    config = training.motif_config(motif)
    params = mdn.init_params(config, _rng(22))
    proposal = gmm.NeuralPairProposal(config=config, params=params)
    spec = GmmSpec(m=8, n=60)
    x, _ = gmm.circle_clusters(60, 3, radius=3.0, rng=_rng(23))

    def run():
        rng = _rng(24)
        state = gmm.init_state(spec, x, rng, m_active=2)
        rows = []
        for _ in range(15):
            state, outcome = gmm.neural_pair_step(spec, state, proposal, x, rng)
            rows.append((state.M, outcome.accepted, outcome.log_alpha))
        return state, rows

    s1, r1 = run()
    s2, r2 = run()
    assert r1 == r2
    assert np.array_equal(s1.mu, s2.mu)
    assert np.array_equal(s1.z, s2.z)


def test_neural_proposal_subsets_larger_models():
    motif = motifs.gmm_pair_motif()
    config = training.motif_config(motif)
    params = mdn.init_params(config, _rng(25))
    proposal = gmm.NeuralPairProposal(config=config, params=params)
    spec = GmmSpec(m=12, n=90)
    x, _ = gmm.circle_clusters(90, 3, radius=3.0, rng=_rng(26))
    rng = _rng(27)
    state = gmm.init_state(spec, x, rng, m_active=4)
    for _ in range(10):
        state, _ = gmm.neural_pair_step(spec, state, proposal, x, rng)
        gmm.validate_state(spec, state)


def test_neural_proposal_rejects_smaller_models():
    motif = motifs.gmm_pair_motif()
    config = training.motif_config(motif)
    params = mdn.init_params(config, _rng(28))
    proposal = gmm.NeuralPairProposal(config=config, params=params)
    spec = GmmSpec(m=4, n=60)
    x = np.zeros((60, 2))
    with pytest.raises(GmmError, match="smaller than the trained"):
        proposal.propose(spec, np.zeros((4, 2)), np.array([1, 0, 0, 0]), x, (0, 1), _rng(29))


def test_proposal_file_tag_is_checked(tmp_path):
    config = MdnConfigSmall = mdn.MdnConfig(
        input_dim=4, hidden_dims=(8, 8), n_mixtures=4,
        output_spec=(mdn.CategoricalHead(2),),
    )
    params = mdn.init_params(config, _rng(30))
    path = str(tmp_path / "bad.params")
    mdn.save_params(path, config, params, "something-else/v1")
    with pytest.raises(GmmError, match="encoding tag"):
        gmm.NeuralPairProposal.from_file(path)


# ---------------------------------------------------------------------------
# Truncated Gibbs baseline


def test_baseline_prior_moments_with_no_data():
    # n = 0: every sweep redraws mu from its prior and v from the
    # structural prior, so sweep outputs are iid prior draws
    spec = GmmSpec(m=3, n=0)
    rng = _rng(31)
    state = GmmState(
        mu=np.zeros((3, 2)), v=np.array([1, 0, 0]), z=np.zeros(0, dtype=int)
    )
    sweeps = 30_000
    mus = np.empty((sweeps, 3, 2))
    pattern_counts: dict = {}
    for s in range(sweeps):
        state = gmm.gibbs_truncated_baseline(spec, state, np.zeros((0, 2)), rng)
        mus[s] = state.mu
        key = tuple(state.v)
        pattern_counts[key] = pattern_counts.get(key, 0) + 1
    flat = mus.reshape(-1)
    assert abs(flat.mean()) < 4 * 2.0 / math.sqrt(flat.size)
    assert flat.var() == pytest.approx(4.0, rel=0.05)
    # P(v) = (1/m) / C(m, M): 1/9 for each M in {1, 2} pattern, 1/3 for M=3
    for pattern, count in pattern_counts.items():
        want = (1 / 3) / math.comb(3, sum(pattern))
        assert count / sweeps == pytest.approx(want, abs=0.02)


def test_baseline_single_component_conjugate_posterior():
    # m = 1: v is pinned, labels are pinned, so mu sweeps are iid draws
    # from the conjugate posterior
    spec = GmmSpec(m=1, n=6)
    rng = _rng(32)
    x = rng.normal(loc=1.5, scale=0.3, size=(6, 2))
    prec = 1 / spec.sigma2_mu + spec.n / spec.sigma2
    want_mean = (x.sum(axis=0) / spec.sigma2) / prec
    state = gmm.init_state(spec, x, rng, m_active=1)
    sweeps = 20_000
    samples = np.empty((sweeps, 2))
    for s in range(sweeps):
        state = gmm.gibbs_truncated_baseline(spec, state, x, rng)
        assert state.v[0] == 1 and np.all(state.z == 0)
        samples[s] = state.mu[0]
    sd = 1 / math.sqrt(prec)
    assert np.all(
        np.abs(samples.mean(axis=0) - want_mean) < 4 * sd / math.sqrt(sweeps)
    )
    assert samples.var(axis=0) == pytest.approx(1 / prec, rel=0.06)


def test_baseline_blocks_v_for_assigned_components():
    spec = GmmSpec(m=4, n=40)
    rng = _rng(33)
    x, _ = gmm.circle_clusters(40, 2, radius=3.0, rng=rng)
    state = gmm.init_state(spec, x, rng, m_active=2)
    for _ in range(50):
        new_state = gmm.gibbs_truncated_baseline(spec, state, x, rng)
        for j in np.unique(new_state.z):
            assert new_state.v[j] == 1
        assert new_state.M >= 1
        state = new_state


def test_baseline_requires_labels():
    spec = GmmSpec(m=2, n=2)
    with pytest.raises(GmmError, match="labels"):
        gmm.gibbs_truncated_baseline(
            spec,
            GmmState(mu=np.zeros((2, 2)), v=np.array([1, 0])),
            np.zeros((2, 2)),
            _rng(34),
        )


def test_baseline_matches_exact_posterior_on_soft_instance():
    # soft noise makes the coupling weak enough for the baseline to mix;
    # its v-pattern frequencies must then match the exact posterior
    spec = GmmSpec(m=2, n=2, sigma2=1.0, sigma2_mu=2.0)
    x = np.array([[0.6, 0.0], [-0.6, 0.1]])
    oracle = _ExactPairOracle(spec, x)
    rng = _rng(35)
    state = gmm.init_state(spec, x, rng)
    counts = {(1, 0): 0, (0, 1): 0, (1, 1): 0}
    sweeps = 40_000
    for _ in range(sweeps):
        state = gmm.gibbs_truncated_baseline(spec, state, x, rng)
        counts[(int(state.v[0]), int(state.v[1]))] += 1
    for pattern, c in counts.items():
        p = math.exp(oracle.log_pattern_prob(pattern))
        assert c / sweeps == pytest.approx(p, abs=0.05)


# ---------------------------------------------------------------------------
# Synthetic data, traces, I/O


def test_circle_clusters_layout():
    x, labels = gmm.circle_clusters(61, 3, radius=4.0, rng=_rng(36))
    assert x.shape == (61, 2)
    assert np.bincount(labels).tolist() == [21, 20, 20]
    angles = 2 * np.pi * np.arange(3) / 3
    centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    for k in range(3):
        got = x[labels == k].mean(axis=0)
        assert np.linalg.norm(got - centers[k]) < 0.4


def test_observations_csv_roundtrip(tmp_path):
    x, _ = gmm.circle_clusters(17, 2, radius=2.0, rng=_rng(37))
    path = str(tmp_path / "x.csv")
    gmm.save_observations(path, x)
    assert np.array_equal(gmm.load_observations(path), x)
    with pytest.raises(GmmError, match="columns"):
        gmm.load_observations(path, d=3)


def test_trace_csv_format(tiny_posterior):
    spec, x, oracle, _ = tiny_posterior
    rng = _rng(38)
    state = gmm.init_state(spec, x, rng)
    state, rows, accepts = gmm.run_neural(spec, state, oracle, x, rng, steps=5)
    assert accepts == 5
    csv = gmm.trace_to_csv(rows)
    lines = csv.strip().split("\n")
    assert lines[0] == "step,m_active,log_joint"
    assert len(lines) == 6
    step, m_active, lj = lines[1].split(",")
    assert (int(step), int(m_active)) == (1, rows[0][1])
    assert float(lj) == rows[0][2]

    state2, rows2 = gmm.run_baseline(spec, state, x, rng, steps=3)
    assert len(rows2) == 3
    gmm.validate_state(spec, state2)


# ---------------------------------------------------------------------------
# Training stream


def test_training_batches_replay_the_prior_stream():
    motif = motifs.gmm_pair_motif()
    dist = motifs.InstantiationDistribution(motif=motif)
    job = training.TrainJob(
        motif_name="gmm-pair",
        dist=dist,
        config=training.motif_config(motif),
        hyper=mdn.OptimizerHyperparams(batch_size=5),
        seed=41,
        steps=1,
        eval_instantiations=0,
    )
    xs, targets = next(gmm.training_batches(job))
    assert xs.shape == (5, 156)
    spec = GmmSpec(m=8, n=60)
    for i in range(5):
        rng = training.sample_stream_rng(41, i)
        state, x = gmm.sample_prior(spec, rng)
        j, k = sorted(int(c) for c in rng.choice(8, size=2, replace=False))
        assert np.array_equal(xs[i], gmm.encode_gmm_input(spec, state.mu, state.v, x, (j, k)))
        assert np.array_equal(targets[0][i], state.mu[j])
        assert targets[1][i] == state.v[j]
        assert np.array_equal(targets[2][i], state.mu[k])
        assert targets[3][i] == state.v[k]


def test_gmm_training_smoke():
    motif = motifs.gmm_pair_motif()
    dist = motifs.InstantiationDistribution(motif=motif)
    job = training.TrainJob(
        motif_name="gmm-pair",
        dist=dist,
        config=training.motif_config(motif),
        hyper=mdn.OptimizerHyperparams(batch_size=8),
        seed=42,
        steps=3,
        eval_instantiations=0,
    )
    params, report = training.train_proposal(job)
    assert len(report.loss_curve) == 3
    assert report.kl_summary is None
    assert np.isfinite([v for _, v in report.loss_curve]).all()


def test_prior_sampler_distributions():
    spec = GmmSpec(m=4, n=3)
    rng = _rng(43)
    n = 6000
    ms = np.empty(n, dtype=int)
    mu_sample = np.empty((n, 2))
    for i in range(n):
        state, x = gmm.sample_prior(spec, rng)
        gmm.validate_state(spec, state)
        ms[i] = state.M
        mu_sample[i] = state.mu[0]
    for M in range(1, 5):
        assert abs((ms == M).mean() - 0.25) < 4 * math.sqrt(0.25 * 0.75 / n)
    assert abs(mu_sample.mean()) < 4 * 2.0 / math.sqrt(2 * n)
    assert mu_sample.var() == pytest.approx(4.0, rel=0.1)
