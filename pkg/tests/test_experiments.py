import numpy as np
import pytest

from vecor.core import BatchGrid, SeededRng, Space
from vecor.experiments import (DirectionOutcome, exact_field_direction, gauss2_velocity, run_direction,
                               swap_optimum)
from vecor.objective import VecorConfig, closed_form_optimum
from vecor.perturb import NegativeCandidateSet
from vecor.train import sample_dataset


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_gauss2_velocity_matches_importance_weighted_oracle(t):
    # E[(x - x_t)/(1-t) | x_t] estimated with posterior weights over a large data draw
    data = sample_dataset("gauss2", 400_000, SeededRng(3, "oracle")).data.reshape(-1, 2)
    pts = np.array([[0.3, -0.2], [1.5, 0.4], [-1.0, 1.0]])
    exact = gauss2_velocity(pts.reshape(3, 2, 1, 1), t).reshape(3, 2)
    for p, v in zip(pts, exact):
        logw = -((p - t * data) ** 2).sum(axis=1) / (2 * (1 - t) ** 2)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        mc = (w[:, None] * (data - p)).sum(axis=0) / (1 - t)
        # standard error of a self-normalized weighted mean
        var = (w[:, None] * (data - p - mc * (1 - t)) ** 2).sum(axis=0)
        se = np.sqrt(var * (w ** 2).sum()) / (1 - t)
        assert np.all(np.abs(v - mc) < 5 * se + 1e-3)


def test_swap_optimum_is_the_closed_form_minimizer():
    x = SeededRng(0, "pts").normal((64, 2, 1, 1))
    v = gauss2_velocity(x, 0.4)
    cands = NegativeCandidateSet(BatchGrid(v, Space.VELOCITY), (BatchGrid(v[:, ::-1].copy(), Space.VELOCITY),),
                                 BatchGrid(x, Space.NOISE), np.full(64, 0.4))
    ref = closed_form_optimum(cands, VecorConfig(0.05, 1)).data
    assert np.allclose(swap_optimum(gauss2_velocity, 0.05)(x, 0.4), ref, rtol=0, atol=1e-13)


def test_exact_fields_trade_final_quality_for_low_nfe_quality():
    # frozen from a run of the exact and regularized gauss2 fields, 3 seeds, 10k samples
    out = exact_field_direction(lam=0.05, nfes=(10, 50))
    assert out[("baseline", 50)] == pytest.approx(0.00151, abs=1e-5)
    assert out[("vecor", 50)] == pytest.approx(0.00499, abs=1e-5)
    assert out[("baseline", 10)] == pytest.approx(0.01091, abs=1e-5)
    assert out[("vecor", 10)] == pytest.approx(0.00826, abs=1e-5)
    assert out[("vecor", 50)] > out[("baseline", 50)]
    assert out[("vecor", 10)] < out[("baseline", 10)]


def test_run_direction_structure():
    out = run_direction(steps=20, seeds=(0, 1), n_eval=200)
    assert set(out.final) == set(out.low_nfe) == {"baseline", "vecor"}
    assert all(len(v) == 2 for v in out.final.values())
    assert all(np.isfinite(v).all() for v in out.low_nfe.values())
    assert "median final sliced W2" in out.summary()


def test_direction_outcome_uses_medians():
    out = DirectionOutcome([0, 1, 2], {"baseline": [1.0, 2.0, 9.0], "vecor": [0.5, 1.9, 99.0]},
                           {"baseline": [1.0, 1.0, 1.0], "vecor": [2.0, 2.0, 0.0]})
    assert out.final_ok and not out.low_nfe_ok
