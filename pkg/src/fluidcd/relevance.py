"""Per-sample relevant-feature selection.

For every sample two feature graphs are built: a Gaussian-kernel graph on the
sample's own feature values and a dataset-wide mutual-information graph.
Their normalized Laplacians are jointly diagonalized, the number of relevant
features is read off the combined spectrum with kneedle, and one
representative feature is taken from each k-means cluster of the joint
spectral embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ContractError, DegenerateError, NumericalError, ParameterError
from .kmeans import kmeans

DEFAULT_BINS = 16
DEFAULT_RIDGE = 1e-8


# --------------------------------------------------------------------------
# feature affinities


def _bin_column(col, bins):
    lo, hi = col.min(), col.max()
    if hi <= lo:
        return np.zeros(len(col), dtype=np.int64)
    idx = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def effective_bins(bins: int, n_samples: int) -> int:
    """Largest bin count <= bins whose independence bias (B-1)^2/(2N) stays below 0.1 nats."""
    cap = int(math.floor(1.0 + math.sqrt(0.2 * n_samples)))
    return int(max(2, min(bins, cap)))


def mutual_info_matrix(values, bins: int = DEFAULT_BINS, missing=None) -> np.ndarray:
    """Plug-in mutual information (nats) between every pair of feature columns.

    Each column is cut into `bins` equal-width bins over its observed range.
    When a missing mask is given, every pair only uses the samples where both
    features are present. The diagonal holds the marginal entropies.
    """
    x = np.asarray(values, dtype=float)
    n_samples, n = x.shape
    if n_samples < 2 or bins < 2:
        raise ParameterError("need at least 2 samples and 2 bins")
    present = np.ones_like(x, dtype=bool) if missing is None else ~np.asarray(missing, dtype=bool)
    onehot = np.zeros((n_samples, n * bins))
    for l in range(n):
        rows = np.flatnonzero(present[:, l])
        if rows.size == 0:
            continue
        idx = _bin_column(x[rows, l], bins)
        onehot[rows, l * bins + idx] = 1.0
    # integer-valued float products are exact, so the count matrix is exactly symmetric
    counts = onehot.T @ onehot
    mi = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            block = counts[a * bins:(a + 1) * bins, b * bins:(b + 1) * bins]
            total = block.sum()
            if total <= 0:
                continue
            p = block / total
            pa = p.sum(axis=1)
            pb = p.sum(axis=0)
            nz = p > 0
            val = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz])))
            mi[a, b] = mi[b, a] = max(val, 0.0)
    return mi


def gaussian_kernel_matrix(sample_row, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    x = np.asarray(sample_row, dtype=float)
    diff = x[:, None] - x[None, :]
    w = np.exp(-diff * diff / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 1.0)
    return w


def kernel_matrix(sample_row, kind: str = "gaussian", sigma: float = None,
                  l: float = 1.0, a: float = 1.0, b: float = 2.0) -> np.ndarray:
    """Feature-by-feature affinity for one sample under the chosen kernel.

    gaussian: exp(-(x1 - x2)^2 / (2 sigma^2)); euclidean: |x1 - x2|;
    linear: x1 x2 + l; poly: (a x1 x2 + l)^b.
    """
    x = np.asarray(sample_row, dtype=float)
    if kind == "gaussian":
        return gaussian_kernel_matrix(x, median_bandwidth(x) if sigma is None else sigma)
    if kind == "euclidean":
        return np.abs(x[:, None] - x[None, :])
    if kind == "linear":
        return np.outer(x, x) + l
    if kind == "poly":
        return (a * np.outer(x, x) + l) ** b
    raise ParameterError(f"unknown kernel {kind!r}")


def median_bandwidth(sample_row) -> float:
    """Median of |x_l1 - x_l2| over feature pairs, with fallbacks for flat rows."""
    x = np.asarray(sample_row, dtype=float)
    if len(x) < 2:
        return 1.0
    iu = np.triu_indices(len(x), 1)
    gaps = np.abs(x[:, None] - x[None, :])[iu]
    med = float(np.median(gaps))
    if med > 0:
        return med
    pos = gaps[gaps > 0]
    return float(pos.mean()) if pos.size else 1.0


def normalized_laplacian(w, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """I - D^-1/2 W D^-1/2 + ridge I; zero-degree rows get degree = ridge."""
    w = np.asarray(w, dtype=float)
    if np.max(np.abs(w - w.T)) > 1e-9:
        raise ContractError("affinity matrix is not symmetric")
    deg = w.sum(axis=1)
    deg = np.where(deg > 0, deg, ridge)
    s = 1.0 / np.sqrt(deg)
    lap = np.eye(len(w)) - w * np.outer(s, s) + ridge * np.eye(len(w))
    return 0.5 * (lap + lap.T)


# --------------------------------------------------------------------------
# joint diagonalization by Jacobi rotations


@numba.njit(cache=True)
def _pair_objective(u, s, al, be):
    f = 0.0
    for m in range(s.shape[0]):
        h = al[m] * math.cos(u) + be[m] * math.sin(u)
        f += math.log(s[m] * s[m] - h * h)
    return f


@numba.njit(cache=True)
def _best_angle(s, al, be, grid):
    # f(u) = sum_M log(S^2 - (alpha cos u + beta sin u)^2) has period pi
    best_u = 0.0
    best_f = _pair_objective(0.0, s, al, be)
    for g in range(1, grid):
        u = math.pi * g / grid
        f = _pair_objective(u, s, al, be)
        if f < best_f:
            best_f = f
            best_u = u
    u = best_u
    for _ in range(8):
        d1 = 0.0
        d2 = 0.0
        for m in range(s.shape[0]):
            h = al[m] * math.cos(u) + be[m] * math.sin(u)
            hp = -al[m] * math.sin(u) + be[m] * math.cos(u)
            g = s[m] * s[m] - h * h
            d1 += -2.0 * h * hp / g
            d2 += -2.0 * (hp * hp - h * h) / g - 4.0 * h * h * hp * hp / (g * g)
        if d2 <= 0.0:
            break
        step = d1 / d2
        cand = u - step
        fc = _pair_objective(cand, s, al, be)
        if fc < best_f:
            best_f = fc
            best_u = cand
            u = cand
        else:
            break
        if abs(step) < 1e-15:
            break
    return best_u, best_f


@numba.njit(cache=True)
def _diag_log_sum(mats):
    total = 0.0
    for m in range(mats.shape[0]):
        for k in range(mats.shape[1]):
            total += math.log(mats[m, k, k])
    return total


@numba.njit(cache=True)
def _jacobi_sweeps(mats, v, tol, max_sweeps, history):
    nm, n, _ = mats.shape
    s = np.empty(nm)
    al = np.empty(nm)
    be = np.empty(nm)
    sweeps = 0
    for sweep in range(max_sweeps):
        before = _diag_log_sum(mats)
        for p in range(n - 1):
            for q in range(p + 1, n):
                for m in range(nm):
                    s[m] = 0.5 * (mats[m, p, p] + mats[m, q, q])
                    al[m] = 0.5 * (mats[m, p, p] - mats[m, q, q])
                    be[m] = mats[m, p, q]
                f0 = _pair_objective(0.0, s, al, be)
                u, fu = _best_angle(s, al, be, 48)
                if not fu < f0 - 1e-15 * abs(f0) - 1e-300:
                    continue
                c = math.cos(0.5 * u)
                sn = math.sin(0.5 * u)
                # new column p = c e_p + s e_q, new column q = -s e_p + c e_q
                for m in range(nm):
                    a = mats[m]
                    for k in range(n):
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp + sn * akq
                        a[k, q] = -sn * akp + c * akq
                    for k in range(n):
                        apk = a[p, k]
                        aqk = a[q, k]
                        a[p, k] = c * apk + sn * aqk
                        a[q, k] = -sn * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp + sn * vkq
                    v[k, q] = -sn * vkp + c * vkq
        after = _diag_log_sum(mats)
        history[sweep] = after
        sweeps = sweep + 1
        if before - after <= tol * max(1.0, abs(after)):
            break
    return sweeps


def joint_criterion(v, mats) -> float:
    """sum_M log(prod diag(V^T M V) / det(V^T M V)), evaluated from scratch."""
    total = 0.0
    for m in mats:
        t = v.T @ m @ v
        sign, logdet = np.linalg.slogdet(t)
        diag = np.diag(t)
        if sign <= 0 or np.any(diag <= 0):
            raise NumericalError("transformed matrix is not positive definite")
        total += float(np.sum(np.log(diag)) - logdet)
    return total


@dataclass
class JointDiagonalization:
    v: np.ndarray
    eigvals: tuple          # (diag of V^T l1 V, diag of V^T l2 V), sorted by the first
    criterion: float
    history: list = field(default_factory=list)   # criterion after each sweep


def joint_diagonalize(l1, l2, tol: float = 1e-12, max_sweeps: int = 100) -> JointDiagonalization:
    """Orthogonal approximate joint diagonalization of two SPD matrices.

    Each 2x2 rotation minimizes the log-det off-diagonality criterion over
    the pair, so the criterion never increases from sweep to sweep.
    """
    mats = []
    for name, m in (("l1", l1), ("l2", l2)):
        m = np.array(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractError(f"{name} must be square")
        if np.max(np.abs(m - m.T)) > 1e-9:
            raise ContractError(f"{name} is not symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise NumericalError(f"{name} is not positive definite (non-positive pivot)") from None
        mats.append(0.5 * (m + m.T))
    if mats[0].shape != mats[1].shape:
        raise ContractError("l1 and l2 must have the same shape")
    n = mats[0].shape[0]
    const = sum(np.linalg.slogdet(m)[1] for m in mats)
    # warm start from the eigenbasis of the sum; Jacobi sweeps refine from there
    _, v = np.linalg.eigh(mats[0] + mats[1])
    v = np.ascontiguousarray(v)
    work = np.ascontiguousarray(np.stack([v.T @ m @ v for m in mats]))
    for w in work:
        w[:] = 0.5 * (w + w.T)
    start = float(sum(np.sum(np.log(np.diag(w))) for w in work)) - const
    hist = np.zeros(max_sweeps)
    sweeps = _jacobi_sweeps(work, v, tol, max_sweeps, hist) if n > 1 else 0
    history = [start] + [float(h - const) for h in hist[:sweeps]]
    d1 = np.diag(work[0]).copy()
    d2 = np.diag(work[1]).copy()
    order = np.argsort(d1, kind="stable")
    v = v[:, order]
    # rotations accumulate rounding in `work`; report the criterion evaluated afresh
    crit = max(joint_criterion(v, mats), 0.0) if n > 1 else 0.0
    history[-1] = min(history[-1], crit) if len(history) > 1 else crit
    return JointDiagonalization(v, (d1[order], d2[order]), crit, history)


# --------------------------------------------------------------------------
# knee detection


def find_knee(curve, sensitivity: float = 1.0):
    """0-based knee index of a curve by kneedle, or None if no knee is confirmed.

    The curve is min-max normalized against a uniform x grid, the difference
    y - x is scanned for local maxima, and a maximum is confirmed once a later
    difference value drops below its threshold before the next maximum.
    """
    y = np.asarray(curve, dtype=float)
    m = len(y)
    if m < 3:
        return None
    span = y.max() - y.min()
    if span <= 0:
        return None
    yn = (y - y.min()) / span
    xn = np.linspace(0.0, 1.0, m)
    diff = yn - xn
    step = sensitivity / (m - 1)
    maxima = [i for i in range(1, m - 1) if diff[i] >= diff[i - 1] and diff[i] > diff[i + 1] and diff[i] > 0]
    for pos, i in enumerate(maxima):
        threshold = diff[i] - step
        stop = maxima[pos + 1] if pos + 1 < len(maxima) else m
        if np.any(diff[i + 1:stop] < threshold):
            return i
    return None


def kneedle_select(curve, sensitivity: float = 1.0) -> int:
    """Knee index, falling back to ceil(sqrt(len)) when no knee exists."""
    knee = find_knee(curve, sensitivity)
    if knee is None:
        return int(math.ceil(math.sqrt(len(curve))))
    return knee


# --------------------------------------------------------------------------
# per-sample selection


@dataclass(frozen=True)
class RelevanceParams:
    bins: int = DEFAULT_BINS
    ridge: float = DEFAULT_RIDGE
    sensitivity: float = 1.0
    kernel: str = "gaussian"
    kernel_l: float = 1.0
    kernel_a: float = 1.0
    kernel_b: float = 2.0
    restarts: int = 10
    seed: int = 0
    masked_mode: bool = True


def sample_missing_mask(d, masked_mode: bool) -> np.ndarray:
    """Boolean mask of entries treated as missing (the dataset's recorded mask)."""
    if not masked_mode or d.missing is None:
        return np.zeros(d.values.shape, dtype=bool)
    return d.missing


def select_relevant_features(jd: JointDiagonalization, features, ridge: float = DEFAULT_RIDGE,
                             sensitivity: float = 1.0, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """Pick K_m representative features from a joint spectral embedding.

    `features` maps rows of jd.v back to original feature indices. The
    combined spectrum (sum of both joint eigenvalue vectors) is sorted, its
    lowest mode is taken as the joint null mode, and kneedle on the rest sets
    K_m. The embedding uses the K_m lowest combined modes and each k-means
    cluster contributes the feature nearest its centroid (lowest index on ties).
    """
    features = np.asarray(features)
    n = len(features)
    if n == 0:
        raise DegenerateError("every feature of the sample is masked")
    if n == 1:
        return features.copy()
    e1, e2 = jd.eigvals
    combined = e1 + e2
    order = np.argsort(combined, kind="stable")
    # the lowest combined mode is the joint null mode; the knee is read off the rest
    curve = combined[order[1:]]
    knee = find_knee(curve, sensitivity)
    # a knee at index i leaves i informative modes below it, plus the null mode;
    # without a knee the count falls back to ceil(sqrt(n))
    k = knee + 1 if knee is not None else math.ceil(math.sqrt(n))
    k = int(min(max(k, 1), n))
    emb = jd.v[:, order[:k]]
    res = kmeans(emb, k, seed=seed, restarts=restarts)
    chosen = []
    for c in range(k):
        members = np.flatnonzero(res.labels == c + 1)
        dist = ((emb[members] - res.centroids[c]) ** 2).sum(axis=1)
        best = members[np.flatnonzero(dist == dist.min())]
        chosen.append(int(features[best].min()))
    return np.array(sorted(set(chosen)), dtype=np.int64)


@dataclass
class PermeabilityTensor:
    """Binary N x N x n relevance tensor kept as per-sample feature sets."""

    relevant: list
    n_features: int

    @property
    def sample_count(self) -> int:
        return len(self.relevant)

    def shared(self, i: int, j: int) -> np.ndarray:
        return np.intersect1d(self.relevant[i], self.relevant[j])

    def row(self, i: int, j: int) -> np.ndarray:
        out = np.zeros(self.n_features, dtype=np.int8)
        out[self.shared(i, j)] = 1
        return out

    def dense(self) -> np.ndarray:
        mem = np.zeros((self.sample_count, self.n_features), dtype=np.int8)
        for i, r in enumerate(self.relevant):
            mem[i, r] = 1
        return mem[:, None, :] * mem[None, :, :]

    def write_tsv(self, path):
        with open(path, "w") as fh:
            for m, r in enumerate(self.relevant):
                fh.write(f"{m}\t{' '.join(str(int(i)) for i in r)}\n")


def sample_seed(seed: int, m: int) -> int:
    return int(np.random.SeedSequence([seed, m]).generate_state(1)[0])


def relevant_for_sample(values, w_mi, mask_row, m: int, params: RelevanceParams) -> np.ndarray:
    features = np.flatnonzero(~mask_row)
    if features.size == 0:
        raise DegenerateError(f"sample {m}: every feature is masked")
    if features.size == 1:
        return features
    row = values[m, features]
    if params.kernel == "gaussian":
        w_gk = gaussian_kernel_matrix(row, median_bandwidth(row))
    else:
        w_gk = kernel_matrix(row, params.kernel, l=params.kernel_l, a=params.kernel_a, b=params.kernel_b)
    sub_mi = w_mi[np.ix_(features, features)].copy()
    np.fill_diagonal(sub_mi, 0.0)
    jd = joint_diagonalize(normalized_laplacian(w_gk, params.ridge), normalized_laplacian(sub_mi, params.ridge))
    return select_relevant_features(jd, features, params.ridge, params.sensitivity,
                                    seed=sample_seed(params.seed, m), restarts=params.restarts)


def build_permeability(d, params: RelevanceParams = RelevanceParams()) -> PermeabilityTensor:
    """Run the per-sample selection for every sample of a normalized dataset."""
    mask = sample_missing_mask(d, params.masked_mode)
    bins = effective_bins(params.bins, d.sample_count)
    w_mi = mutual_info_matrix(d.values, bins, mask if mask.any() else None)
    relevant = []
    for m in range(d.sample_count):
        try:
            relevant.append(relevant_for_sample(d.values, w_mi, mask[m], m, params))
        except DegenerateError as exc:
            raise DegenerateError(f"sample {m}: {exc}") from exc
    return PermeabilityTensor(relevant, d.feature_count)
