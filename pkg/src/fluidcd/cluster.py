"""Spectral community detection on the fluid Laplacian and heat-kernel baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist, squareform

from . import fluidgraph
from .data import Dataset, normalize_minmax
from .errors import ContractError, DegenerateError, FluidError, ParameterError, SizeError, StageError
from .kmeans import KMeansResult, canonical_labels, kmeans
from .relevance import RelevanceParams, build_permeability, find_knee

BASELINES = ("unnormalized", "normalized", "self_tuning")
SELF_TUNING_NEIGHBOUR = 7


@dataclass(frozen=True)
class SpectralEmbedding:
    j: np.ndarray
    eigvals: np.ndarray


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray

    @property
    def k(self) -> int:
        return int(self.labels.max())


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)  # first occurrence wins ties
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def spectral_embed(l, k: int) -> SpectralEmbedding:
    """Ascending spectrum and the k lowest eigenvectors (sign-canonicalized)."""
    l = np.asarray(l, dtype=float)
    if np.max(np.abs(l - l.T)) > 1e-9:
        raise ContractError("matrix is not symmetric")
    if not 1 <= k <= len(l):
        raise ParameterError(f"k={k} must lie in 1..{len(l)}")
    vals, vecs = np.linalg.eigh(0.5 * (l + l.T))
    return SpectralEmbedding(_fix_signs(vecs[:, :k]), vals)


def default_k_max(n_eigvals: int) -> int:
    return max(2, min(n_eigvals - 1, 20))


def choose_k(eigvals, k_max: int = None) -> int:
    """Cluster count from the knee of the leading non-trivial eigenvalues.

    Kneedle runs on lambda_2 .. lambda_{k_max+1} (ascending, the constant
    mode's eigenvalue left out); a knee at 0-based index i means the
    eigenvalues up to lambda_{i+1} rise before the spectrum flattens, so
    K_F = i + 1, never below 2.
    """
    ev = np.sort(np.asarray(eigvals, dtype=float))
    if len(ev) < 3:
        raise ParameterError("need at least 3 eigenvalues")
    k_max = default_k_max(len(ev)) if k_max is None else min(k_max, len(ev) - 1)
    curve = ev[1:k_max + 1]
    knee = find_knee(curve) if len(curve) >= 3 else None
    if knee is None:
        return max(2, math.ceil(math.sqrt(len(ev))))
    return max(2, knee + 1)


def normalized_cut_value(q, labels) -> float:
    """Half the sum over clusters of cut(C, rest) / vol(C), on Q_sym."""
    qs = np.asarray(getattr(q, "q", q), dtype=float)
    qs = 0.5 * (qs + qs.T)
    np.fill_diagonal(qs, 0.0)
    labels = np.asarray(getattr(labels, "labels", labels))
    total = 0.0
    for c in np.unique(labels):
        inside = labels == c
        vol = qs[inside].sum()
        if vol <= 0:
            raise DegenerateError(f"cluster {c} has zero volume")
        total += qs[np.ix_(inside, ~inside)].sum() / vol
    return 0.5 * total


@dataclass(frozen=True)
class PipelineParams:
    relevance: RelevanceParams = RelevanceParams()
    restarts: int = 10
    seed: int = 0
    k_max: int = None
    k: int = None          # force the cluster count instead of choosing it


@dataclass
class Detection:
    partition: Partition
    embedding: SpectralEmbedding
    k: int
    nc: float
    q: fluidgraph.TransitionMatrix
    laplacian: fluidgraph.FluidLaplacian
    permeability: object
    f_eigvals: np.ndarray = field(default=None)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except FluidError as exc:
        raise StageError(name, exc) from exc


def detect_communities(d: Dataset, params: PipelineParams = PipelineParams()) -> Detection:
    """Normalize, select features, build Q and F, embed and cluster."""
    if d.sample_count < 3:
        raise SizeError(f"need at least 3 samples, got {d.sample_count}")
    d = _stage("normalize", normalize_minmax, d)
    rel = replace(params.relevance, seed=params.seed)
    perm = _stage("permeability", build_permeability, d, rel)
    v = _stage("transport", fluidgraph.transport_velocity, d.values, perm.relevant)
    q = _stage("transition", fluidgraph.build_q, v)
    lap = _stage("laplacian", fluidgraph.fluid_laplacian, q)
    n = d.sample_count
    full = _stage("embedding", spectral_embed, lap.f_norm, n)
    k = params.k if params.k is not None else _stage("choose_k", choose_k, full.eigvals, params.k_max)
    k = int(min(k, n))
    emb = SpectralEmbedding(full.j[:, :k], full.eigvals)
    res = _stage("kmeans", kmeans, emb.j, k, params.seed, params.restarts)
    part = Partition(res.labels)
    nc = _stage("normalized_cut", normalized_cut_value, q, part.labels)
    f_eig = np.linalg.eigvalsh(lap.f)
    return Detection(part, emb, k, nc, q, lap, perm, f_eig)


# --------------------------------------------------------------------------
# heat-diffusion baselines


def heat_affinity(values, kind: str = "normalized") -> np.ndarray:
    x = np.asarray(values, dtype=float)
    dist = squareform(pdist(x))
    if kind == "self_tuning":
        if len(x) < SELF_TUNING_NEIGHBOUR + 1:
            raise ParameterError(f"self-tuning needs at least {SELF_TUNING_NEIGHBOUR + 1} samples")
        local = np.sort(dist, axis=1)[:, SELF_TUNING_NEIGHBOUR]
        local = np.where(local > 0, local, 1e-12)
        w = np.exp(-dist ** 2 / np.outer(local, local))
    else:
        sigma = float(np.median(pdist(x)))
        sigma = sigma if sigma > 0 else 1.0
        w = np.exp(-dist ** 2 / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 0.0)
    return w


def baseline_laplacian(d, kind: str = "normalized"):
    """Heat-kernel Laplacian of the samples and its ascending spectrum.

    unnormalized: D - W; normalized and self_tuning: I - D^-1/2 W D^-1/2,
    the latter with per-sample scales (distance to the 7th neighbour).
    """
    if kind not in BASELINES:
        raise ParameterError(f"unknown baseline {kind!r}")
    w = heat_affinity(getattr(d, "values", d), kind)
    deg = w.sum(axis=1)
    if kind == "unnormalized":
        lap = np.diag(deg) - w
    else:
        s = 1.0 / np.sqrt(np.where(deg > 0, deg, 1e-300))
        lap = np.eye(len(w)) - w * np.outer(s, s)
    lap = 0.5 * (lap + lap.T)
    return lap, np.linalg.eigvalsh(lap)


def baseline_communities(d, kind: str = "normalized", seed: int = 0, restarts: int = 10,
                         k: int = None, k_max: int = None) -> Partition:
    """Spectral clustering on a heat-kernel Laplacian with the same k selection."""
    lap, _ = baseline_laplacian(normalize_minmax(d), kind)
    full = spectral_embed(lap, len(lap))
    k = choose_k(full.eigvals, k_max) if k is None else k
    res = kmeans(full.j[:, :k], k, seed, restarts)
    return Partition(res.labels)


def eigengap_report(eigvals, k_c: int):
    """(|lambda_{k+1} - lambda_k|, |lambda_{k+2} - lambda_{k+1}|), 1-based ascending."""
    ev = np.sort(np.asarray(eigvals, dtype=float))
    if len(ev) < k_c + 2 or k_c < 1:
        raise ParameterError(f"spectrum of length {len(ev)} too short for k_c={k_c}")
    return float(abs(ev[k_c] - ev[k_c - 1])), float(abs(ev[k_c + 1] - ev[k_c]))
