"""Dual-softmax matching and rotation-invariant matching with steerers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .group_reps import Steerer, invariant_projector

__all__ = [
    "MatchSet",
    "MatcherConfig",
    "STRATEGIES",
    "dual_softmax",
    "match_dual_softmax",
    "match_invariant_projection",
    "match_max_matches",
    "match_max_similarity",
    "match_procrustes",
    "match_prototype_procrustes",
    "match_subset",
    "mutual_nn_matches",
    "procrustes_2x2",
    "prototype_from_calibration",
]


@dataclass(frozen=True)
class MatcherConfig:
    inverse_temperature: float = 20.0
    similarity_threshold: float = 0.01
    subset_size: int = 1000

    def __post_init__(self):
        if not self.inverse_temperature > 0:
            raise ValueError("inverse temperature must be positive")
        if not 0 <= self.similarity_threshold < 1:
            raise ValueError("similarity threshold must lie in [0, 1)")
        if int(self.subset_size) < 1:
            raise ValueError("subset size must be positive")


@dataclass
class MatchSet:
    """Mutual nearest-neighbour matches.

    ``similarity`` is the cosine (or aligned) similarity of each match and
    ``probability`` its dual-softmax score. ``steering_power`` is the power of
    the steerer applied to the second description set, when one was chosen.
    """

    pairs: np.ndarray
    similarity: np.ndarray
    probability: np.ndarray
    strategy: str = "dual-softmax"
    steering_power: int | float | None = None
    per_match_rotation: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}

    def to_dict(self) -> dict:
        out = {
            "strategy": self.strategy,
            "steering_power_or_angle": self.steering_power,
            "matches": [[int(i), int(j), float(s)] for (i, j), s in zip(self.pairs, self.similarity)],
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.per_match_rotation is not None:
            out["per_match_rotation"] = np.asarray(self.per_match_rotation).tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _as_matrix(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"descriptions must be a D x N matrix, got shape {y.shape}")
    return y


def _normalize_columns(y: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(y, axis=0)
    return y / np.where(norm > 0, norm, 1.0)


def dual_softmax(Y, cfg: MatcherConfig | None = None) -> np.ndarray:
    """Product of the row-wise and column-wise softmax of ``iota * Y``."""
    cfg = cfg or MatcherConfig()
    A = cfg.inverse_temperature * np.asarray(Y, dtype=np.float64)
    if A.size == 0:
        return A.copy()
    row = np.exp(A - A.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(A - A.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return row * col


def mutual_nn_matches(P, cfg: MatcherConfig | None = None, *, similarity=None,
                      strategy: str = "mutual-nn") -> MatchSet:
    """Pairs whose entry is the unique maximum of both its row and its column.

    Rows or columns whose maximum is attained more than once yield no match.
    Entries must exceed the configured threshold.
    """
    cfg = cfg or MatcherConfig()
    P = np.asarray(P, dtype=np.float64)
    sim = P if similarity is None else np.asarray(similarity, dtype=np.float64)
    if P.size == 0:
        return MatchSet(np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0), strategy)
    row_max = P.max(axis=1)
    col_max = P.max(axis=0)
    row_unique = (P == row_max[:, None]).sum(axis=1) == 1
    col_unique = (P == col_max[None, :]).sum(axis=0) == 1
    nn12 = P.argmax(axis=1)
    nn21 = P.argmax(axis=0)
    ids = np.arange(P.shape[0])
    keep = (nn21[nn12] == ids) & row_unique & col_unique[nn12] & (row_max > cfg.similarity_threshold)
    i = ids[keep]
    j = nn12[keep]
    return MatchSet(np.stack([i, j], axis=1).astype(np.int64), sim[i, j], P[i, j], strategy)


def _match(Y, cfg, strategy, **extra) -> MatchSet:
    ms = mutual_nn_matches(dual_softmax(Y, cfg), cfg, similarity=Y, strategy=strategy)
    for key, value in extra.items():
        setattr(ms, key, value)
    return ms


def match_dual_softmax(y1, y2, cfg: MatcherConfig | None = None) -> MatchSet:
    """Plain matching: cosine similarities, dual softmax, mutual nearest neighbours."""
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    Y = y1.T @ y2
    ms = _match(Y, cfg, "dual-softmax", steering_power=0)
    ms.diagnostics["similarity_evaluations"] = Y.size
    return ms


def _steered(y2: np.ndarray, s: Steerer) -> list[np.ndarray]:
    return [_normalize_columns(M @ y2) for M in s.powers()]


def match_max_matches(y1, y2, s: Steerer, cfg: MatcherConfig | None = None) -> MatchSet:
    """Match ``y1`` against every steered ``s^k y2``; keep the k with most matches."""
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    best = None
    counts = []
    for k, z in enumerate(_steered(y2, s)):
        ms = _match(y1.T @ z, cfg, "max-matches", steering_power=k)
        counts.append(len(ms))
        if best is None or len(ms) > len(best):
            best = ms
    best.diagnostics["matches_per_power"] = counts
    best.diagnostics["similarity_evaluations"] = s.group_order * y1.shape[1] * y2.shape[1]
    return best


def match_max_similarity(y1, y2, s: Steerer, cfg: MatcherConfig | None = None) -> MatchSet:
    """Match on the elementwise maximum over k of the steered cosine similarities."""
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    stack = np.stack([y1.T @ z for z in _steered(y2, s)])
    Ystar = stack.max(axis=0)
    ms = _match(Ystar, cfg, "max-similarity")
    ms.diagnostics["per_match_power"] = stack.argmax(axis=0)[ms.pairs[:, 0], ms.pairs[:, 1]]
    ms.diagnostics["similarity_evaluations"] = stack.size
    return ms


def match_subset(y1, y2, s: Steerer, cfg: MatcherConfig | None = None) -> MatchSet:
    """Pick the steering power by max-matches on the leading columns, then match everything.

    Columns are expected in detector order (strongest first).
    """
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    n1 = min(cfg.subset_size, y1.shape[1])
    n2 = min(cfg.subset_size, y2.shape[1])
    vote = match_max_matches(y1[:, :n1], y2[:, :n2], s, cfg)
    k = vote.steering_power
    Y = y1.T @ _normalize_columns(s.power(k) @ y2)
    ms = _match(Y, cfg, "subset", steering_power=k)
    ms.diagnostics["subset_sizes"] = [n1, n2]
    ms.diagnostics["subset_matches_per_power"] = vote.diagnostics["matches_per_power"]
    ms.diagnostics["similarity_evaluations"] = s.group_order * n1 * n2 + Y.size
    return ms


def match_invariant_projection(y1, y2, s: Steerer, cfg: MatcherConfig | None = None) -> MatchSet:
    """Match after projecting both sets onto the steerer's invariant subspace.

    Columns the projector annihilates are left out of matching; if nothing
    survives the result is empty with a diagnostic.
    """
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    proj = invariant_projector(s)
    z1, z2 = proj @ y1, proj @ y2
    n1, n2 = np.linalg.norm(z1, axis=0), np.linalg.norm(z2, axis=0)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(proj))))
    k1, k2 = np.flatnonzero(n1 > tol), np.flatnonzero(n2 > tol)
    diag = {"dropped_columns": [int(y1.shape[1] - len(k1)), int(y2.shape[1] - len(k2))],
            "invariant_rank": int(round(np.trace(proj)))}
    if len(k1) == 0 or len(k2) == 0:
        diag["note"] = "projector annihilates every description"
        return MatchSet(np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0),
                        "invariant", diagnostics=diag)
    Y = (z1[:, k1] / n1[k1]).T @ (z2[:, k2] / n2[k2])
    ms = _match(Y, cfg, "invariant")
    ms.pairs = np.stack([k1[ms.pairs[:, 0]], k2[ms.pairs[:, 1]]], axis=1) if len(ms) else ms.pairs
    ms.diagnostics.update(diag)
    return ms


# -- frequency-1 descriptions -------------------------------------------------

def _as_pairs(y: np.ndarray) -> np.ndarray:
    """(D, N) -> (N, 2, D/2); dimensions (2b, 2b+1) form the b-th planar vector."""
    D, N = y.shape
    if D % 2:
        raise ValueError(f"frequency-1 descriptions need an even dimension, got {D}")
    return y.T.reshape(N, D // 2, 2).transpose(0, 2, 1)


def _from_pairs(p: np.ndarray) -> np.ndarray:
    N, _, half = p.shape
    return p.transpose(0, 2, 1).reshape(N, 2 * half).T


def procrustes_2x2(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotations maximizing tr(R^T C) for a stack of 2x2 cross-covariances.

    Returns ``(R, value)`` where ``value = s1 + det * s2`` is the attained
    maximum; a zero ``C`` gives the identity and value 0.
    """
    U, S, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(C.shape[:-2] + (2,))
    fix[..., 1] = d
    R = (U * fix[..., None, :]) @ Vt
    return R, S[..., 0] + d * S[..., 1]


def match_procrustes(y1, y2, cfg: MatcherConfig | None = None) -> MatchSet:
    """Align every pair of frequency-1 descriptions by the optimal planar rotation.

    Descriptions must already be in the steerer's block basis. The match score
    of (m, n) is <R_mn y1_m, y2_n> and ``per_match_rotation`` holds R_mn.
    """
    cfg = cfg or MatcherConfig()
    a, b = _as_pairs(_as_matrix(y1)), _as_pairs(_as_matrix(y2))
    # C[m, n] = y2_n @ y1_m^T
    C = np.einsum("nib,mjb->mnij", b, a)
    R, Y = procrustes_2x2(C)
    ms = _match(Y, cfg, "procrustes")
    ms.per_match_rotation = R[ms.pairs[:, 0], ms.pairs[:, 1]]
    ms.diagnostics["similarity_evaluations"] = Y.size
    return ms


def prototype_from_calibration(y) -> np.ndarray:
    """Normalized mean of a calibration description set."""
    m = _as_matrix(y).mean(axis=1)
    n = np.linalg.norm(m)
    if n == 0:
        raise ValueError("calibration descriptions average to zero")
    return m / n


def match_prototype_procrustes(y1, y2, prototype=None, cfg: MatcherConfig | None = None, *,
                               calibration=None) -> MatchSet:
    """Rotate each frequency-1 description onto a prototype, then match once.

    The prototype defaults to :func:`prototype_from_calibration` of
    ``calibration`` (or of ``y1`` when none is given). Descriptions whose
    cross-covariance with the prototype vanishes get an ill-defined rotation
    and are listed under ``ill_conditioned`` in the diagnostics.
    """
    cfg = cfg or MatcherConfig()
    y1, y2 = _as_matrix(y1), _as_matrix(y2)
    if prototype is None:
        prototype = prototype_from_calibration(y1 if calibration is None else calibration)
    proto = np.asarray(prototype, dtype=np.float64)
    if proto.shape == (2, y1.shape[0] // 2):
        proto = _from_pairs(proto[None])[:, 0]
    proto = proto.reshape(-1)
    if proto.shape[0] != y1.shape[0]:
        raise ValueError("prototype dimension does not match the descriptions")
    if not np.any(proto):
        raise ValueError("prototype is zero")
    p = _as_pairs(proto[:, None])[0]

    def align(y):
        a = _as_pairs(y)
        C = np.einsum("ib,njb->nij", p, a)
        R, value = procrustes_2x2(C)
        scale = np.linalg.norm(p) * np.linalg.norm(a.reshape(len(a), -1), axis=1)
        ill = np.flatnonzero(np.abs(value) <= 1e-9 * np.maximum(scale, 1e-300))
        return _from_pairs(R @ a), R, ill

    z1, R1, ill1 = align(y1)
    z2, R2, ill2 = align(y2)
    ms = _match(z1.T @ z2, cfg, "prototype-procrustes")
    # relative rotation taking y1_m to y2_n
    ms.per_match_rotation = np.transpose(R2[ms.pairs[:, 1]], (0, 2, 1)) @ R1[ms.pairs[:, 0]]
    ms.diagnostics["ill_conditioned"] = [ill1.tolist(), ill2.tolist()]
    ms.diagnostics["similarity_evaluations"] = y1.shape[1] * y2.shape[1]
    return ms


STRATEGIES = {
    "dual-softmax": lambda y1, y2, s, cfg: match_dual_softmax(y1, y2, cfg),
    "max-matches": match_max_matches,
    "max-similarity": match_max_similarity,
    "subset": match_subset,
    "invariant": match_invariant_projection,
}
