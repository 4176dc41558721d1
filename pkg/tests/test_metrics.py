import itertools
import math

import numpy as np
import pytest

from fluidcd.data import gen_blocks
from fluidcd.errors import DegenerateError, ProtocolError
from fluidcd.metrics import (MODES, dump_report, modified_ari, modified_nmi, modified_purity, node_weights,
                             score_report, spiked_diagnostics, unit_ari)


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def labels_of(part, n):
    lab = np.zeros(n, dtype=int)
    for c, block in enumerate(part, 1):
        lab[block] = c
    return lab


# literal transcriptions over explicit node sets

def lit_purity(omega, psi, w):
    total = sum(w)
    out = 0.0
    for cl in omega:
        # psi is listed in class-id order; ties go to the lowest class id
        best = max(psi, key=lambda g: len(set(cl) & set(g)))
        for u in cl:
            if u in best:
                out += w[u] / total
    return out


def kappa(nodes, w):
    return sum(w[t] * w[u] for t in nodes for u in nodes)


def lit_ari(omega, psi, w):
    allv = list(range(len(w)))
    cells = sum(kappa([u for u in a if u in b], w) for a in omega for b in psi)
    rows = sum(kappa(a, w) for a in omega)
    cols = sum(kappa(b, w) for b in psi)
    exp = rows * cols / kappa(allv, w)
    den = 0.5 * (rows + cols) - exp
    return 1.0 if den == 0 else (cells - exp) / den


def lit_nmi(omega, psi, w):
    total = sum(w)
    p = [[sum(w[u] for u in a if u in b) / total for b in psi] for a in omega]
    pa = [sum(r) for r in p]
    pb = [sum(p[i][j] for i in range(len(omega))) for j in range(len(psi))]
    num = 0.0
    for i in range(len(omega)):
        for j in range(len(psi)):
            if p[i][j] > 0:
                num += p[i][j] * math.log(p[i][j] / (pa[i] * pb[j]))
    den = sum(x * math.log(x) for x in pa if x > 0) + sum(x * math.log(x) for x in pb if x > 0)
    return 1.0 if den == 0 else -2 * num / den


def test_exhaustive_against_literal_formulas():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        parts = list(set_partitions(list(range(n))))
        weights = [np.ones(n), 0.1 + rng.random(n)]
        # n = 6 has 203^2 pairs; subsample a fixed stride to bound runtime
        pairs = list(itertools.product(parts, parts))
        if n == 6:
            pairs = pairs[::7]
        for w in weights:
            for om, ps in pairs:
                lo, lp = labels_of(om, n), labels_of(ps, n)
                assert modified_purity(lo, lp, w) == pytest.approx(lit_purity(om, ps, w), abs=1e-12)
                assert modified_ari(lo, lp, w) == pytest.approx(lit_ari(om, ps, w), abs=1e-12)
                assert modified_nmi(lo, lp, w) == pytest.approx(lit_nmi(om, ps, w), abs=1e-12)


def test_purity_example():
    omega = np.array([1, 1, 1, 2, 2])
    psi = np.array([1, 1, 2, 2, 2])
    assert modified_purity(omega, psi, np.ones(5)) == pytest.approx(0.8)
    assert modified_purity(omega, psi, 2 * np.ones(5)) == pytest.approx(0.8)


def test_identity_scores_are_one():
    lab = np.array([1, 1, 2, 3, 3, 3])
    w = np.array([0.2, 1, 0.5, 0.7, 0.1, 0.9])
    for f in (modified_purity, modified_ari, modified_nmi):
        assert f(lab, lab, w) == pytest.approx(1.0, abs=1e-12)


def test_single_cluster_conventions():
    one = np.ones(4, dtype=int)
    assert modified_nmi(one, one, np.ones(4)) == 1.0
    assert modified_ari(one, one, np.ones(4)) == 1.0


def test_invariances():
    rng = np.random.default_rng(2)
    om = rng.integers(1, 4, 12)
    ps = rng.integers(1, 3, 12)
    w = rng.random(12)
    perm_om = np.array([3, 1, 2])[om - 1]
    counts = np.array([[np.sum((om == a) & (ps == b)) for b in (1, 2)] for a in (1, 2, 3)])
    majority_tied = np.any(counts[:, 0] == counts[:, 1])
    for f in (modified_purity, modified_ari, modified_nmi):
        base = f(om, ps, w)
        assert f(om, ps, 3.5 * w) == pytest.approx(base, abs=1e-12)
        assert f(perm_om, ps, w) == pytest.approx(base, abs=1e-12)
        if f is modified_purity and majority_tied:
            continue  # the lowest-class tie rule is not invariant under class relabelling
        assert f(om, 3 - ps, w) == pytest.approx(base, abs=1e-12)


def test_zero_weights_are_degenerate():
    with pytest.raises(DegenerateError):
        modified_ari(np.array([1, 2]), np.array([1, 2]), np.zeros(2))


def test_node_weight_modes():
    q = np.array([[0, 0.5, 0.5, 0], [0.5, 0, 0.25, 0.25], [0.5, 0.25, 0, 0.25], [0, 0.5, 0.5, 0]])
    lab = np.array([1, 1, 2, 2])
    qs = 0.5 * (q + q.T)
    deg = qs.sum(1)
    internal = np.array([qs[0, 1], qs[1, 0], qs[2, 3], qs[3, 2]])
    np.testing.assert_allclose(node_weights(q, lab, "degree"), deg / deg.max())
    np.testing.assert_allclose(node_weights(q, lab, "embeddedness"), internal / deg)
    np.testing.assert_allclose(node_weights(q, lab, "weighted_embeddedness"), internal / deg.max())
    for mode in MODES:
        w = node_weights(q, lab, mode)
        assert np.all((w >= 0) & (w <= 1))


def test_score_report_keys_and_json():
    q = np.ones((4, 4)) - np.eye(4)
    rep = score_report(q, np.array([1, 1, 2, 2]), np.array([1, 1, 2, 2]))
    assert set(rep) == {f"{m}_{w}" for m in ("mp", "mari", "mnmi") for w in MODES}
    assert dump_report(rep) == dump_report(dict(reversed(list(rep.items()))))
    assert unit_ari(np.array([1, 1, 2, 2]), np.array([2, 2, 1, 1])) == 1.0


def test_diagnostics_single_class_is_zero():
    x = np.random.default_rng(0).random((10, 5))
    diag = spiked_diagnostics(x, np.ones(10, dtype=int), [5, 10])
    for norms, t, tm in zip(diag.m_prime_norms, diag.t, diag.t_matrix):
        assert np.allclose(norms, 0) and np.allclose(t, 0) and np.allclose(tm, 0)


def test_diagnostics_identical_generators_shrink():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4000, 6))
    lab = np.tile([1, 2], 2000)
    diag = spiked_diagnostics(x, lab, [100, 4000])
    assert diag.m_prime_norms[1].max() < diag.m_prime_norms[0].max()
    assert diag.m_prime_norms[1].max() < 0.05
    assert np.abs(diag.t_matrix[1]).max() < 0.01


def test_diagnostics_against_direct_formula():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 4))
    lab = np.repeat([1, 2, 3], 10)
    d = spiked_diagnostics(x, lab, [30])
    means = [x[lab == c].mean(0) for c in (1, 2, 3)]
    grand = x.mean(0)
    covs = [np.cov(x[lab == c].T, bias=True) for c in (1, 2, 3)]
    cbar = sum(covs) / 3
    for c in range(3):
        assert d.m_prime_norms[0][c] == pytest.approx(np.linalg.norm(means[c] - grand))
        assert d.t[0][c] == pytest.approx(np.trace(covs[c] - cbar) / 2.0)
    assert d.t_matrix[0][0, 1] == pytest.approx(np.trace((covs[0] - cbar) @ (covs[1] - cbar)) / 4)


def test_diagnostics_trend_flattens_on_blocks():
    d, gt = gen_blocks(3, (400, 400, 400), 20, 0.05, seed=0)
    order = np.random.default_rng(0).permutation(d.sample_count)
    diag = spiked_diagnostics(d.values[order], gt.labels[order], [300, 600, 900, 1200])
    last, prev = diag.m_prime_norms[-1], diag.m_prime_norms[-2]
    assert np.all(np.abs(last - prev) / np.abs(last) <= 0.05)


def test_diagnostics_missing_class():
    with pytest.raises(ProtocolError):
        spiked_diagnostics(np.zeros((4, 2)), np.array([1, 1, 2, 2]), [2])
