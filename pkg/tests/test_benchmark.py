import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraclap.benchmark import (
    StudyConfig,
    convergence_order,
    exact_nodal_values,
    exact_solution,
    expected_order,
    max_norm_error,
    resolve_kappa,
    run_convergence_study,
    threads_from_env,
)
from fraclap.mesh import build_graded_mesh


def getoor_mp(alpha, x):
    a = mp.mpf(alpha)
    c = 2 ** (-a) * mp.sqrt(mp.pi) / (mp.gamma((1 + a) / 2) * mp.gamma(1 + a / 2))
    return c * (mp.mpf(x) * (2 - mp.mpf(x))) ** (a / 2)


def test_exact_solution_values():
    assert exact_solution(1.0, 1.0) == pytest.approx(1.0, rel=1e-15)
    # 30-digit gamma oracle
    assert exact_solution(0.8, 1.0) == pytest.approx(1.07367127403083, rel=1e-13)
    assert exact_solution(0.3, 0.0) == 0.0 and exact_solution(0.3, 2.0) == 0.0
    assert exact_solution(0.3, -1.0) == 0.0 and exact_solution(0.3, 2.5) == 0.0
    with pytest.raises(ValueError):
        exact_solution(2.0, 1.0)


@given(st.floats(0.01, 1.99), st.floats(1e-6, 2 - 1e-6))
def test_exact_solution_vs_mpmath(alpha, x):
    assert exact_solution(alpha, x) == pytest.approx(float(getoor_mp(alpha, x)), rel=1e-12)


def test_exact_solution_shifted_interval():
    x = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(exact_solution(0.7, x, -1.0, 1.0), exact_solution(0.7, x + 1.0), rtol=1e-14)


def test_exact_nodal_values_on_strong_grading():
    mesh = build_graded_mesh(0.0, 2.0, 512, 8.0)
    vals = exact_nodal_values(mesh, 0.4)
    np.testing.assert_allclose(vals, vals[::-1], rtol=1e-14)
    assert np.all(vals > 0)


def test_max_norm_error():
    mesh = build_graded_mesh(0.0, 2.0, 16, 2.0)
    u = exact_nodal_values(mesh, 0.6)
    assert max_norm_error(u, mesh, 0.6) == 0.0
    v = u.copy()
    v[4] += 1e-3
    assert max_norm_error(v, mesh, 0.6) == pytest.approx(1e-3, rel=1e-9)
    with pytest.raises(ValueError):
        max_norm_error(u[:-1], mesh, 0.6)


def test_convergence_order():
    assert convergence_order(0.1, 0.05) == pytest.approx(1.0)
    assert convergence_order(0.1, 0.1) == 0.0
    # the printed errors carry 5 digits, enough for the order to about 3e-4
    assert convergence_order(1.5655e-01, 1.1754e-01) == pytest.approx(0.4136, abs=3e-4)
    with pytest.raises(ValueError):
        convergence_order(0.0, 0.1)


def test_expected_order():
    assert expected_order(0.8, 1.0) == pytest.approx(0.4)
    assert expected_order(0.8, 3.0) == pytest.approx(1.2)
    assert expected_order(1.5, 1.0) == pytest.approx(min(0.5, 0.75))


def test_kappa_tokens():
    assert resolve_kappa("uniform", 0.3) == 1.0
    assert resolve_kappa("k(2-a)/s", 0.4) == pytest.approx(8.0)
    assert resolve_kappa("k(2-a)/2s", 0.8) == pytest.approx(1.5)
    assert resolve_kappa("k2/(1+s)", 0.8) == pytest.approx(2 / 1.4)
    assert resolve_kappa("2.5", 0.8) == 2.5
    with pytest.raises(ValueError):
        resolve_kappa("k(2-a)/s", 1.7)
    assert resolve_kappa("k(2-a)/s", 1.7, clamp=True) == 1.0
    with pytest.raises(ValueError):
        resolve_kappa("steep", 0.5)


def test_threads_from_env(monkeypatch):
    monkeypatch.delenv("FRACLAP_THREADS", raising=False)
    assert threads_from_env() == 1
    monkeypatch.setenv("FRACLAP_THREADS", "3")
    assert threads_from_env() == 3
    monkeypatch.setenv("FRACLAP_THREADS", "0")
    with pytest.raises(ValueError):
        threads_from_env()


@pytest.mark.parametrize("bad", [
    dict(alphas=(2.5,)), dict(alphas=(0.5,), N_list=(63,)), dict(alphas=(0.5,), N_list=(2,)),
    dict(alphas=(0.5,), scheme="direct", solver="pf-bicgstab"), dict(alphas=(0.5,), band_l=0),
    dict(alphas=(0.5,), solver="lu"), dict(alphas=()),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        StudyConfig(**bad).validate()


def test_study_rows_and_orders():
    cfg = StudyConfig(alphas=(0.8,), kappas=("uniform", "3"), N_list=(128, 32, 64))
    rows = run_convergence_study(cfg)
    assert [(r.kappa, r.N) for r in rows] == [(1.0, 32), (1.0, 64), (1.0, 128), (3.0, 32), (3.0, 64), (3.0, 128)]
    assert rows[0].order is None and rows[3].order is None
    for coarse, fine in ((rows[0], rows[1]), (rows[4], rows[5])):
        assert fine.order == pytest.approx(math.log2(coarse.error_inf / fine.error_inf))
    assert all(r.converged for r in rows)
    # error decreases with N
    assert rows[0].error_inf > rows[1].error_inf > rows[2].error_inf


def test_threaded_study_matches_serial():
    base = dict(alphas=(0.5, 1.5), kappas=("uniform",), N_list=(32, 64), scheme="modified")
    serial = run_convergence_study(StudyConfig(**base))
    threaded = run_convergence_study(StudyConfig(**base, threads=3))
    assert [(r.alpha, r.N, r.error_inf, r.iterations) for r in serial] == [
        (r.alpha, r.N, r.error_inf, r.iterations) for r in threaded
    ]


@pytest.mark.parametrize("alpha, kappa, scheme", [(0.7, "uniform", "original"), (0.5, "3", "original"),
                                                  (1.4, "2", "modified")])
def test_solvers_agree(alpha, kappa, scheme):
    errs = {}
    for solver in ("ge", "bicgstab", "f-bicgstab", "pf-bicgstab"):
        cfg = StudyConfig(alphas=(alpha,), kappas=(kappa,), N_list=(256,), scheme=scheme, solver=solver)
        (row,) = run_convergence_study(cfg)
        assert row.converged
        errs[solver] = row.error_inf
    ref = errs["ge"]
    for e in errs.values():
        assert e == pytest.approx(ref, rel=5e-4)


def test_alpha08_optimal_grading_orders():
    # alpha = 0.8 with kappa = (2 - alpha) / sigma = 3
    cfg = StudyConfig(alphas=(0.8,), kappas=("k(2-a)/s",), N_list=(64, 128, 256, 512))
    rows = run_convergence_study(cfg)
    orders = [r.order for r in rows[1:]]
    np.testing.assert_allclose(orders, [1.1679, 1.1861, 1.1936], atol=0.02)


def test_alpha_15_uniform_modified_order():
    cfg = StudyConfig(alphas=(1.5,), N_list=(256, 512, 1024), scheme="modified")
    rows = run_convergence_study(cfg)
    assert rows[-1].order == pytest.approx(0.5, abs=0.08)
