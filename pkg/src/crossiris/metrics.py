"""Verification metrics over dissimilarity scores (lower = more similar)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

FAR_TARGETS = (0.1, 0.01, 0.001)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    provenance: dict = field(default_factory=dict)
    polarity: str = "dissimilarity"

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        if self.polarity != "dissimilarity":
            raise ValueError("scores must be dissimilarities; negate similarities on ingestion")
        if not (np.isfinite(self.genuine).all() and np.isfinite(self.impostor).all()):
            raise ValueError("non-finite score")

    def check(self) -> None:
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise ValueError(f"need genuine and impostor scores, got "
                             f"{self.genuine.size} and {self.impostor.size}")

    @classmethod
    def from_similarity(cls, genuine, impostor, provenance=None) -> "ScoreSet":
        return cls(-np.asarray(genuine, float), -np.asarray(impostor, float), provenance or {})


class ROC(NamedTuple):
    threshold: np.ndarray
    far: np.ndarray
    gar: np.ndarray


def roc(scores: ScoreSet) -> ROC:
    """Accept iff score < t, for t at every distinct score and at +inf."""
    scores.check()
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    t = np.append(np.unique(np.concatenate([g, i])), np.inf)
    far = np.searchsorted(i, t, side="left") / i.size
    gar = np.searchsorted(g, t, side="left") / g.size
    return ROC(t, far, gar)


def roc_counts(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds with integer accept counts (impostor, genuine)."""
    r = roc(scores)
    return (r.threshold, np.rint(r.far * scores.impostor.size).astype(int),
            np.rint(r.gar * scores.genuine.size).astype(int))


def _envelope(far: np.ndarray, gar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best GAR for each distinct FAR, sorted by FAR."""
    ufar = np.unique(far)
    best = np.array([gar[far == f].max() for f in ufar])
    return ufar, np.maximum.accumulate(best)


class GarResult(NamedTuple):
    gar: float
    extrapolated: bool


def gar_at_far(curve: ROC, far_target: float) -> GarResult:
    """GAR linearly interpolated at ``far_target``.

    Rejecting everything always reaches FAR 0, so the resolution limit is the
    smallest nonzero FAR on the curve. Targets below it get the GAR at that
    FAR, flagged as extrapolated.
    """
    far, gar = _envelope(np.asarray(curve.far), np.asarray(curve.gar))
    if far.size == 0:
        raise ValueError("empty ROC")
    if far_target <= 0:
        return GarResult(float(gar[0]), False)
    nonzero = far[far > 0]
    if far_target < nonzero[0]:
        return GarResult(float(gar[far > 0][0]), True)
    if far_target >= far[-1]:
        return GarResult(float(gar[-1]), False)
    k = int(np.searchsorted(far, far_target, side="left"))
    if far[k] == far_target:
        return GarResult(float(gar[k]), False)
    f0, f1, g0, g1 = far[k - 1], far[k], gar[k - 1], gar[k]
    return GarResult(float(g0 + (g1 - g0) * (far_target - f0) / (f1 - f0)), False)


def eer(scores: ScoreSet) -> float:
    """Equal error rate, interpolated linearly between the two ROC thresholds
    where FAR - FRR changes sign."""
    r = roc(scores)
    d = r.far - (1.0 - r.gar)
    k = int(np.argmax(d >= 0))  # d[-1] = 1 at t=inf, so a crossing exists
    if k == 0:
        return float(r.far[0])
    d0, d1 = d[k - 1], d[k]
    a = -d0 / (d1 - d0)
    return float(r.far[k - 1] + a * (r.far[k] - r.far[k - 1]))


def auc(curve: ROC) -> float:
    order = np.lexsort((curve.gar, curve.far))
    f, g = np.asarray(curve.far)[order], np.asarray(curve.gar)[order]
    return float(np.sum((f[1:] - f[:-1]) * (g[1:] + g[:-1]) / 2))


def summarize(scores: ScoreSet, targets: Sequence[float] = FAR_TARGETS) -> dict:
    curve = roc(scores)
    out = {"eer": eer(scores), "auc": auc(curve),
           "n_genuine": int(scores.genuine.size), "n_impostor": int(scores.impostor.size)}
    for t in targets:
        res = gar_at_far(curve, t)
        out[f"gar@{t:g}"] = res.gar
        if res.extrapolated:
            out.setdefault("extrapolated", []).append(t)
    return out


def format_percent(x: float) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:.2f}"
