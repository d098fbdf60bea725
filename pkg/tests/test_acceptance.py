"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line straight to the terminal
(bypassing capture) before asserting, so a plain ``pytest`` run shows the
scoreboard.
"""

import time

import numpy as np
import pytest

from vecor import verify
from vecor.cli import EXIT_OK, main
from vecor.config import ConfigError, RunConfig
from vecor.core import BatchGrid, SeededRng, Space
from vecor.experiments import DIRECTION_SEEDS, DIRECTION_STEPS, LOW_NFE, run_direction
from vecor.interpolant import gaussian_score, gaussian_velocity, linear_schedule, score_from_velocity
from vecor.objective import IllConditionedError, VecorConfig, validate_config
from vecor.train import fit


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok
    return emit


def test_fixed_point_oracle(report):
    t0 = time.perf_counter()
    res = verify.check_fixed_point()
    secs = time.perf_counter() - t0
    cells = {(lam, K) for lam, K, _, _ in res.values["cells"]}
    ok = res.values["residual"] < 1e-6 and secs < 10.0 and cells == {(l, k) for l in (0.01, 0.05, 0.2) for k in (1, 2, 4)}
    report("fixed-point oracle", ok, f"{res.detail}; {len(cells)} (λ,K) cells; {secs:.2f}s (budget 10s)")
    assert ok


def test_well_posedness_gate(report, tmp_path):
    pairs = verify.ILL_POSED_GRID
    assert len(pairs) == 20 and all(lam * K >= 1 for lam, K in pairs)
    refused = 0
    for lam, K in pairs:
        with pytest.raises(IllConditionedError):
            validate_config(VecorConfig(lam, K))
        cfg = RunConfig(name=f"gate-{lam}-{K}", steps=1).replace(vecor={"enabled": True, "lam": lam, "K": K})
        try:
            fit(cfg, out_dir=tmp_path)
        except ConfigError:
            refused += 1
    nothing_written = not any(tmp_path.iterdir())
    ok = refused == 20 and nothing_written
    report("well-posedness gate", ok, f"{refused}/20 ill-posed pairs refused; no run directory created: {nothing_written}")
    assert ok


def test_reduction_identity(report):
    res = verify.check_reduction_identity(steps=60)
    report("reduction identity (λ=0 vs FM)", res.passed, res.detail)
    assert res.values["losses"] and res.values["grads"] and res.values["params"]


def test_gradient_correctness(report):
    t0 = time.perf_counter()
    res = verify.check_gradients(n_instances=100, seed=0)
    secs = time.perf_counter() - t0
    ok = res.values["max_rel_err"] < 1e-4 and res.values["n"] == 100 and secs < 60.0
    report("gradient correctness", ok, f"{res.detail}; {secs:.1f}s (budget 60s)")
    assert ok


def test_operator_invariants(report):
    t0 = time.perf_counter()
    res = verify.check_operators(trials=1000)
    secs = time.perf_counter() - t0
    ok = res.passed and secs < 30.0
    report("operator invariants", ok, f"{res.detail}; {secs:.1f}s (budget 30s)")
    assert ok


def test_score_conversion_oracle(report):
    sched = linear_schedule()
    x = SeededRng(42, "acceptance-score").normal((256, 3, 1, 1))
    worst = 0.0
    for t in np.linspace(0.05, 0.95, 181):
        v = BatchGrid(gaussian_velocity(x, t), Space.VELOCITY)
        s = score_from_velocity(sched, v, BatchGrid(x), t).data
        worst = max(worst, float(np.abs(s - (-x / (t * t + (1 - t) ** 2))).max()))
    assert np.allclose(gaussian_score(x, 0.3), -x / (0.09 + 0.49))
    ok = worst < 1e-10
    report("score-conversion oracle", ok, f"max error {worst:.3g} over t in [0.05, 0.95] (tol 1e-10)")
    assert ok


def test_integrator_order(report):
    res = verify.check_integrators()
    v = res.values
    ok = 3.5 <= v["heun_ratio"] <= 4.5 and 1.8 <= v["euler_ratio"] <= 2.2 and v["sde_bit_exact"]
    report("integrator order", ok, res.detail)
    assert ok


@pytest.mark.slow
def test_ab_direction_gauss2(report):
    t0 = time.perf_counter()
    out = run_direction(DIRECTION_STEPS, DIRECTION_SEEDS)
    secs = time.perf_counter() - t0
    within = secs < 15 * 60
    ok = out.final_ok and out.low_nfe_ok and within
    detail = (f"{out.summary()}; per-seed final {out.final}, NFE={LOW_NFE} {out.low_nfe}; "
              f"{secs / 60:.1f} min (budget 15)")
    report(f"desk-scale direction (gauss2, {len(DIRECTION_SEEDS)} seeds, {DIRECTION_STEPS} steps)", ok, detail)
    assert out.final_ok, "median final sliced W2: contrastive arm worse than baseline"
    assert out.low_nfe_ok, f"median sliced W2 at NFE={LOW_NFE}: contrastive arm worse than baseline"
    assert within


def test_ablation_shape(report):
    res = verify.check_ablation()
    margins = res.values["margins"]
    ok = res.values["cells"] == 18 and res.passed and len(margins) == 4
    report("ablation shape (grid8)", ok, res.detail)
    assert ok


def test_cmd_verify_end_to_end(report, capsys):
    t0 = time.perf_counter()
    code = main(["verify"])
    secs = time.perf_counter() - t0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    names = {l.split()[1] for l in lines}
    expected = {"fixed_point", "well_posedness", "reduction_identity", "gradient_fd", "operator_invariants",
                "score_conversion", "integrator_order", "ablation_grid"}
    ok = code == EXIT_OK and names == expected and all(l.startswith("PASS") for l in lines) and secs < 300
    report("cmd_verify end-to-end", ok, f"exit {code}, {len(lines)} checks, {secs:.1f}s (budget 300s)")
    assert ok
