"""Node-weighted clustering scores and spiked-model diagnostics.

Partitions and ground truths are plain integer label vectors (any ids).
Weights come from the symmetrized transition matrix: the degree of node u is
sum_j Q_sym[u, j], and its internal degree restricts the sum to u's cluster.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, ProtocolError

MODES = ("degree", "embeddedness", "weighted_embeddedness")


def _q_sym(q):
    q = np.asarray(getattr(q, "q", q), dtype=float)
    qs = 0.5 * (q + q.T)
    np.fill_diagonal(qs, 0.0)
    return qs


def _safe_div(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.divide(a, b, out=np.zeros(np.broadcast(a, b).shape), where=b != 0)


def node_weights(q, labels, mode: str) -> np.ndarray:
    """Per-node weights in [0, 1] for one of the three weighting modes; 0/0 gives 0."""
    if mode not in MODES:
        raise ValueError(f"unknown weighting mode {mode!r}")
    qs = _q_sym(q)
    labels = np.asarray(labels)
    deg = qs.sum(axis=1)
    same = labels[:, None] == labels[None, :]
    internal = np.where(same, qs, 0.0).sum(axis=1)
    top = deg.max() if deg.size else 0.0
    if mode == "degree":
        w = _safe_div(deg, np.full_like(deg, top))
    elif mode == "embeddedness":
        w = _safe_div(internal, deg)
    else:
        w = _safe_div(internal, np.full_like(deg, top))
    return np.clip(w, 0.0, 1.0)


def _contingency(omega, psi, w):
    _, oi = np.unique(np.asarray(omega), return_inverse=True)
    _, pj = np.unique(np.asarray(psi), return_inverse=True)
    table = np.zeros((oi.max() + 1, pj.max() + 1))
    np.add.at(table, (oi, pj), w)
    return table, oi, pj


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    if w.sum() <= 0:
        raise DegenerateError("node weights are all zero")
    return w


def modified_purity(omega, psi, w) -> float:
    w = _check_weights(w)
    counts, oi, pj = _contingency(omega, psi, np.ones_like(w))
    # argmax returns the first maximum, i.e. the lowest class id on ties
    majority = counts.argmax(axis=1)
    pure = majority[oi] == pj
    return float(np.sum(w * pure) / w.sum())


def modified_ari(omega, psi, w) -> float:
    """Weighted ARI with kappa(S) = (sum of weights in S)^2."""
    w = _check_weights(w)
    table, _, _ = _contingency(omega, psi, w)
    k_total = w.sum() ** 2
    k_cells = np.sum(table ** 2)
    k_rows = np.sum(table.sum(axis=1) ** 2)
    k_cols = np.sum(table.sum(axis=0) ** 2)
    expected = k_rows * k_cols / k_total
    denom = 0.5 * (k_rows + k_cols) - expected
    if denom == 0:
        # both partitions are a single block as far as the weights can tell
        return 1.0
    return float((k_cells - expected) / denom)


def modified_nmi(omega, psi, w) -> float:
    w = _check_weights(w)
    table, _, _ = _contingency(omega, psi, w)
    p = table / w.sum()
    a = p.sum(axis=1)
    b = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(a, b)
    num = -2.0 * np.sum(p[nz] * np.log(p[nz] / outer[nz]))
    den = np.sum(a[a > 0] * np.log(a[a > 0])) + np.sum(b[b > 0] * np.log(b[b > 0]))
    if den == 0:
        return 1.0
    return float(num / den)


def score_report(q, omega, psi) -> dict:
    """All three scores under all three weightings, keyed '<metric>_<mode>'."""
    out = {}
    for mode in MODES:
        w = node_weights(q, omega, mode)
        out[f"mp_{mode}"] = modified_purity(omega, psi, w)
        out[f"mari_{mode}"] = modified_ari(omega, psi, w)
        out[f"mnmi_{mode}"] = modified_nmi(omega, psi, w)
    return out


def unit_ari(omega, psi) -> float:
    return modified_ari(omega, psi, np.ones(len(omega)))


def dump_report(report: dict) -> str:
    return json.dumps({k: float(f"{v:.17g}") for k, v in report.items()}, sort_keys=True)


@dataclass
class SpikedDiagnostics:
    prefix_counts: list
    m_prime_norms: list = field(default_factory=list)  # per prefix: length-k vector
    t: list = field(default_factory=list)              # per prefix: length-k vector
    t_matrix: list = field(default_factory=list)       # per prefix: k x k matrix


def _class_stats(x, labels, k):
    n = x.shape[1]
    sizes = np.array([np.sum(labels == c) for c in range(1, k + 1)], dtype=float)
    means = np.array([x[labels == c].mean(axis=0) for c in range(1, k + 1)])
    grand = (sizes[:, None] * means).sum(axis=0) / sizes.sum()
    m_prime = means - grand
    covs = []
    for c in range(1, k + 1):
        xc = x[labels == c] - means[c - 1]
        covs.append(xc.T @ xc / len(xc))
    covs = np.array(covs)
    c_bar = np.tensordot(sizes / sizes.sum(), covs, axes=1)
    c_prime = covs - c_bar
    norms = np.linalg.norm(m_prime, axis=1)
    t = np.trace(c_prime, axis1=1, axis2=2) / math.sqrt(n)
    t_mat = np.einsum("iab,jba->ij", c_prime, c_prime) / n
    return norms, t, 0.5 * (t_mat + t_mat.T)


def spiked_diagnostics(d, gt, prefix_counts) -> SpikedDiagnostics:
    """Class-mean and class-covariance separations on growing row prefixes.

    For each prefix: ||m'_l|| with m'_l = m_l - (population-weighted mean),
    t_l = Tr(C'_l)/sqrt(n) and T_ij = Tr(C'_i C'_j)/n with C'_l = C_l - C_bar.
    """
    x = np.asarray(getattr(d, "values", d), dtype=float)
    labels = np.asarray(getattr(gt, "labels", gt))
    k = int(labels.max())
    out = SpikedDiagnostics(list(prefix_counts))
    for count in prefix_counts:
        lab = labels[:count]
        for c in range(1, k + 1):
            if not np.any(lab == c):
                raise ProtocolError(f"class {c} absent from prefix of {count} rows")
        norms, t, t_mat = _class_stats(x[:count], lab, k)
        out.m_prime_norms.append(norms)
        out.t.append(t)
        out.t_matrix.append(t_mat)
    return out
