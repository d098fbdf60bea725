"""Flow-matching and velocity-contrastive losses with exact gradients.

All losses sum squared error over the C*H*W entries of a sample and
average over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BatchGrid, ParameterError, Space, check_same_shape
from .perturb import NegativeCandidateSet


class IllConditionedError(ParameterError):
    """The contrastive weight makes the quadratic concave or flat."""


@dataclass(frozen=True)
class VecorConfig:
    lam: float = 0.05
    K: int = 1


@dataclass(frozen=True)
class LossReport:
    total: float
    positive_term: float
    negative_term: float = 0.0


def validate_config(cfg: VecorConfig, allow_zero: bool = False) -> None:
    """Raise unless 0 < lam < 1 and lam*K < 1.

    ``allow_zero`` admits lam = 0, which is only meaningful in tests that
    check the reduction to plain flow matching.
    """
    lam, K = cfg.lam, cfg.K
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    lower_ok = lam >= 0.0 if allow_zero else lam > 0.0
    if not (lower_ok and lam < 1.0):
        raise IllConditionedError(f"contrastive weight must satisfy 0 < λ < 1, got λ={lam}")
    if not lam * K < 1.0:
        raise IllConditionedError(f"ill-conditioned: λK < 1 is required, got λ={lam}, K={K}, λK={lam * K:g}")


def _sq_norms(diff: np.ndarray) -> np.ndarray:
    return (diff.reshape(diff.shape[0], -1) ** 2).sum(axis=1)


def fm_loss(v_pred: BatchGrid, v_target: BatchGrid) -> LossReport:
    check_same_shape(v_pred, v_target, "prediction/target")
    pos = float(_sq_norms(v_pred.data - v_target.data).mean())
    return LossReport(pos, pos, 0.0)


def fm_grad(v_pred: BatchGrid, v_target: BatchGrid) -> BatchGrid:
    check_same_shape(v_pred, v_target, "prediction/target")
    return BatchGrid((2.0 / v_pred.batch) * (v_pred.data - v_target.data), Space.VELOCITY)


def _check_cands(v_pred: BatchGrid, cands: NegativeCandidateSet, cfg: VecorConfig):
    if cands.K != cfg.K:
        raise ParameterError(f"candidate set holds {cands.K} negatives but config says K={cfg.K}")
    check_same_shape(v_pred, cands.positive, "prediction/positive")
    for j, neg in enumerate(cands.negatives):
        check_same_shape(v_pred, neg, f"prediction/negative[{j}]")


def vecor_loss(v_pred: BatchGrid, cands: NegativeCandidateSet, cfg: VecorConfig, allow_zero: bool = False) -> LossReport:
    validate_config(cfg, allow_zero)
    _check_cands(v_pred, cands, cfg)
    pos = float(_sq_norms(v_pred.data - cands.positive.data).mean())
    neg = 0.0
    for n in cands.negatives:
        neg += float(_sq_norms(v_pred.data - n.data).mean())
    return LossReport(pos - cfg.lam * neg, pos, neg)


def vecor_grad(v_pred: BatchGrid, cands: NegativeCandidateSet, cfg: VecorConfig, allow_zero: bool = False) -> BatchGrid:
    """Gradient of :func:`vecor_loss` with respect to the prediction."""
    validate_config(cfg, allow_zero)
    _check_cands(v_pred, cands, cfg)
    K = cands.K
    neg_sum = cands.negatives_array().sum(axis=0)
    g = (1.0 - cfg.lam * K) * v_pred.data - (cands.positive.data - cfg.lam * neg_sum)
    return BatchGrid((2.0 / v_pred.batch) * g, Space.VELOCITY)


def closed_form_optimum(cands: NegativeCandidateSet, cfg: VecorConfig, allow_zero: bool = False) -> BatchGrid:
    """Per-sample minimizer ``(v_pos - lam * sum_j v_neg_j) / (1 - lam * K)``."""
    validate_config(cfg, allow_zero)
    if cands.K != cfg.K:
        raise ParameterError(f"candidate set holds {cands.K} negatives but config says K={cfg.K}")
    K = cands.K
    num = cands.positive.data - cfg.lam * cands.negatives_array().sum(axis=0)
    return BatchGrid(num / (1.0 - cfg.lam * K), Space.VELOCITY)
