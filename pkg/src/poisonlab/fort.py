"""Feature-oriented adversarial training (FORT).

Instead of following loss gradients (which three of the four learners do not
have), training data is augmented with sign perturbations weighted by the
model's feature-importance scores: boundary-proximal rows with heavy
important-feature mass get copies shifted by exactly +-c per coordinate,
keeping their labels, and the model is refit on the union.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, round_half_up
from .models import feature_importance, fit, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FortConfig:
    c: float = 0.01
    b: float = 0.001
    tau: float = 0.3
    q: float = 0.1
    importance_rows: int | None = None  # cap permutation-importance rows on wide data

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.b == 0.0:
            raise ValueError("b must be non-zero")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.importance_rows is not None and self.importance_rows < 1:
            raise ValueError("importance_rows must be >= 1 when set")

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "b": self.b,
            "tau": self.tau,
            "q": self.q,
            "importance_rows": self.importance_rows,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FortConfig":
        return cls(**doc)


def margins(model, ds: Dataset) -> np.ndarray:
    """Gap between the two largest predicted class probabilities, per row."""
    proba = predict_proba(model, ds.features)
    top2 = np.sort(proba, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def select_augmentation_points(
    ds: Dataset, model, importance: np.ndarray, cfg: FortConfig
) -> list[int]:
    """Boundary-proximal rows ranked by importance-weighted feature mass.

    Candidates are rows with margin <= tau; they are ranked by
    sum_j F_j * |x_ij| descending (ties to the smaller index) and the top
    round_half_up(q * n) are returned, or every candidate if fewer.
    """
    m = margins(model, ds)
    candidates = np.flatnonzero(m <= cfg.tau)
    if candidates.size == 0:
        log.info("no boundary-proximal rows at tau=%g; augmentation skipped", cfg.tau)
        return []
    budget = round_half_up(cfg.q * ds.n)
    scores = np.abs(ds.features) @ np.asarray(importance, dtype=np.float64)
    order = np.lexsort((candidates, -scores[candidates]))
    return [int(i) for i in candidates[order[:budget]]]


def perturb(x: np.ndarray, importance: np.ndarray, cfg: FortConfig) -> np.ndarray:
    """x_j + c * sign(F_j * x_j + b) per coordinate, with sign(0) = +1."""
    x = np.asarray(x, dtype=np.float64)
    F = np.asarray(importance, dtype=np.float64)
    if x.shape != F.shape:
        raise ValueError(f"row has {x.shape} coordinates, importance has {F.shape}")
    step = np.where(F * x + cfg.b >= 0.0, cfg.c, -cfg.c)
    return x + step


def build_adversarial_rows(
    d_san: Dataset, model, importance: np.ndarray, cfg: FortConfig
) -> tuple[list[int], np.ndarray]:
    """Selected source indices and their perturbed feature rows (labels unchanged)."""
    selected = select_augmentation_points(d_san, model, importance, cfg)
    if not selected:
        return [], np.empty((0, d_san.d))
    F = np.asarray(importance, dtype=np.float64)
    rows = d_san.features[selected]
    adv = rows + np.where(F * rows + cfg.b >= 0.0, cfg.c, -cfg.c)
    return selected, adv


def fort_fit(
    kind: str,
    d_san: Dataset,
    hyperparams: dict | None,
    fort_cfg: FortConfig | None = None,
    seed: int = 0,
):
    """Fit, augment boundary-proximal important rows, refit on the union.

    Returns (final model, number of adversarial rows). The preliminary and
    final fits share the seed so differences are attributable to the
    augmentation alone; with an empty selection the preliminary model is the
    final model.
    """
    cfg = fort_cfg or FortConfig()
    prelim = fit(kind, d_san, hyperparams, seed)
    importance = feature_importance(
        prelim, d_san, seed=seed, max_rows=cfg.importance_rows
    )
    selected, adv = build_adversarial_rows(d_san, prelim, importance, cfg)
    if not selected:
        log.info("FORT selection empty; keeping the plain fit")
        return prelim, 0
    combined = Dataset(
        np.vstack([d_san.features, adv]),
        np.concatenate([d_san.labels, d_san.labels[selected]]),
        d_san.class_count,
        d_san.feature_names,
        provenance=f"{d_san.provenance}|fort_adv:{len(selected)}",
    )
    final = fit(kind, combined, hyperparams, seed)
    return final, len(selected)
