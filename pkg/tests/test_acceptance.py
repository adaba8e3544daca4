"""Acceptance criteria, one test (or a few labelled parts) per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary lists one
pass/fail line per criterion. Parts that are known not to hold are strict
xfails so a surprise pass is reported.
"""
import csv
import itertools
import json

import numpy as np
import pytest

from l1rom import cli, hdm, rom
from l1rom.minimize import Functional, l1_irls, l1_lp, qr_least_squares

PERTURB = rom.PerturbationConfig(True, 1e-8, 0)


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def run(tmp_path, raw, **overrides):
    cfg = cli.config_from_dict(raw, **overrides)
    manifest = cli.run_experiment(cfg, tmp_path)
    return cfg, manifest


# ---------------------------------------------------------------------------
# 1. minimizer oracle suite


def gauss_solve(M, v):
    M, v = M.astype(float).copy(), v.astype(float).copy()
    n = len(v)
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        M[[k, p]], v[[k, p]] = M[[p, k]], v[[p, k]]
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            M[i, k:] -= f * M[k, k:]
            v[i] -= f * v[k]
    z = np.zeros(n)
    for k in range(n - 1, -1, -1):
        z[k] = (v[k] - M[k, k + 1:] @ z[k + 1:]) / M[k, k]
    return z


@pytest.mark.criterion("1")
def test_minimizer_oracles():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(8, 60))
        r = int(rng.integers(1, min(8, N - 2)))
        A, b = rng.standard_normal((N, r)), rng.standard_normal(N)
        lp, irls = l1_lp(A, b), l1_irls(A, b)
        assert abs(irls.objective - lp.objective) <= 1e-6 * lp.objective
        z = qr_least_squares(A, b).solution
        # normal equations A^T (A z + b) = 0, against elimination on A^T A
        assert np.abs(A.T @ (A @ z + b)).max() <= 1e-9 * (1 + np.abs(A).max() ** 2 * np.abs(b).max())
        np.testing.assert_allclose(z, gauss_solve(A.T @ A, -A.T @ b), rtol=1e-9, atol=1e-9)

    # median property: every multiset of size n <= 11 over a three-letter
    # alphabet with ties (and the sign flip), plus distinct values
    for n in range(1, 12):
        sets = [np.array(c, dtype=float) for c in
                itertools.combinations_with_replacement((-1.0, 0.5, 3.0), n)]
        sets.append(np.arange(n, dtype=float) ** 2 - 7.0)
        for y in sets:
            s = np.sort(y)
            lo, hi = s[(n - 1) // 2], s[n // 2]
            best = np.abs(y - lo).sum()
            for rep, tol in ((l1_lp(np.ones((n, 1)), -y), 1e-12), (l1_irls(np.ones((n, 1)), -y), 1e-6)):
                m = rep.solution[0]
                assert lo - tol <= m <= hi + tol
                assert rep.objective == pytest.approx(best, abs=1e-6)


# ---------------------------------------------------------------------------
# 2. regression robustness


@pytest.mark.criterion("2")
def test_regression_robustness(tmp_path):
    run(tmp_path, {"experiment": "regression", "seed": 0})
    header, rows = read_rows(tmp_path / "coefficients.csv")
    fits = {(r[0], r[1]): np.array(r[2:4], dtype=float) for r in rows}
    target = np.array([2.0, 0.4])
    for f in ("l2", "l1lp", "l1irls", "huber"):
        assert np.abs(fits["clean", f] - target).max() < 0.15
    for a, b in itertools.combinations(("l1lp", "l1irls", "huber"), 2):
        assert np.abs(fits["outliers", a] - fits["outliers", b]).max() < 1e-4
    assert np.abs(fits["outliers", "l2"] - target).max() > 0.3


# ---------------------------------------------------------------------------
# 3. steady advection coefficient pattern


@pytest.mark.criterion("3")
def test_advection_table(tmp_path):
    cfg, manifest = run(tmp_path, {"experiment": "advect1d", "n": 1000,
                                   "functionals": ["l1lp", "l1irls", "huber", "galerkin"]})
    assert manifest["failures"] == {}
    header, rows = read_rows(tmp_path / "coefficients.csv")
    alpha = {r[0]: np.array(r[1:7], dtype=float) for r in rows}
    for f in ("l1lp", "l1irls", "huber"):
        a = alpha[f]
        assert 0.90 <= a[4] <= 1.0
        assert 0.0 <= a[3] <= 0.06
        assert np.abs(np.delete(a, [3, 4])).max() < 0.05
    assert (np.abs(alpha["galerkin"]) > 0.4).sum() >= 4


# ---------------------------------------------------------------------------
# 4. 2D advection-diffusion


@pytest.fixture(scope="module")
def advdiff(tmp_path_factory):
    out = tmp_path_factory.mktemp("advdiff")
    cfg = cli.config_from_dict({"experiment": "advdiff2d",
                                "functionals": ["l2", "l1irls", "huber", "galerkin"]},
                               desk_scale=True)
    manifest = cli.run_experiment(cfg, out)
    header, rows = read_rows(out / "coefficients.csv")
    alpha = {r[0]: (np.array(r[1:3], dtype=float), r[3]) for r in rows}
    sh, srows = read_rows(out / "solutions.csv")
    cols = {name: np.array([float(r[k]) for r in srows]) for k, name in enumerate(sh)}
    return manifest, alpha, cols


@pytest.mark.criterion("4a")
def test_advdiff_irls_recorded_nonconverged(advdiff):
    manifest, alpha, _ = advdiff
    assert "l1irls" not in manifest["failures"]
    a, converged = alpha["l1irls"]
    assert converged == "false" and np.linalg.norm(a) < 1e-6


@pytest.mark.criterion("4b")
@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="symmetric dictionary gives Huber (0.5, 0.5)")
def test_advdiff_huber(advdiff):
    _, alpha, cols = advdiff
    a, _ = alpha["huber"]
    if np.abs(a - [0.021, 0.979]).max() <= 0.08:
        return
    err = {f: np.abs(cols[f] - cols["hdm"]).max() for f in ("huber", "l2", "galerkin")}
    assert err["huber"] <= 0.75 * min(err["l2"], err["galerkin"])


# ---------------------------------------------------------------------------
# 5. POD decay


@pytest.mark.criterion("5")
def test_pod_decay(tmp_path):
    run(tmp_path, {"experiment": "pod-decay", "sizes": [400], "svd": "jacobi"})
    header, rows = read_rows(tmp_path / "solutions.csv")
    ratio = np.array([float(r[2]) for r in rows])
    ell = np.arange(2, 41)
    slope = np.polyfit(np.log(ell), np.log(ratio[ell - 1]), 1)[0]
    assert abs(slope + 1.0) <= 0.15
    header, rows = read_rows(tmp_path / "coefficients.csv")
    assert 0.55 <= float(rows[0][2]) <= 0.70


# ---------------------------------------------------------------------------
# 6. linear invariance


@pytest.mark.criterion("6")
def test_linear_invariance():
    mus = (0.3, 0.4, 0.5, 0.6, 0.7)
    trajs = [hdm.advect1d_unsteady(mu, n_steps=200) for mu in mus]
    x = trajs[0].grid.x
    D = rom.UnsteadyDictionary(mus, trajs, lambda mu: np.exp(-((x - mu) / 0.05) ** 2))
    tr = rom.run_unsteady_rom(D, 0.45, Functional.from_name("l2"))
    alphas = np.array([c.alpha for c in tr.coefficients])
    assert len(alphas) == 201
    assert np.abs(alphas - alphas[0]).max() < 1e-8


# ---------------------------------------------------------------------------
# 7. unsteady Burgers


BURGERS_D = (0.0, 0.2, 0.4, 0.6, 1.0)
BURGERS_D1 = (0.4, 0.45, 0.55, 0.6)
BURGERS_D0 = (0.0, 0.2, 0.4, 0.45, 0.55, 0.6, 1.0)
N_BURGERS = 250


@pytest.fixture(scope="module")
def burgers():
    every = sorted(set(BURGERS_D) | set(BURGERS_D0) | {0.5})
    dt = hdm.burgers_time_step(every, N_BURGERS)
    trajs = {mu: hdm.burgers1d_unsteady(mu, N_BURGERS, np.pi, dt=dt) for mu in every}
    x = trajs[0.5].grid.x

    def dictionary(mus):
        return rom.UnsteadyDictionary(mus, [trajs[m] for m in mus],
                                      lambda mu: hdm.burgers_initial(x, mu))

    return trajs[0.5], dictionary


def burgers_rom(dictionary, func, n_steps):
    return rom.run_unsteady_rom(dictionary, 0.5, Functional.from_name(func), n_steps=n_steps,
                                perturbation=PERTURB)


@pytest.mark.criterion("7a")
@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="L1 family about 2.1% off at the shock")
def test_burgers_quarter_time(burgers):
    truth, dictionary = burgers
    D = dictionary(BURGERS_D)
    n = truth.index_of(np.pi / 4)
    ref = truth.states[n]
    errs = {f: np.abs(burgers_rom(D, f, n).reconstructed[n] - ref).max() / np.abs(ref).max()
            for f in ("l2", "l1lp", "l1irls", "huber")}
    assert max(errs.values()) < 0.02, errs


@pytest.mark.criterion("7b")
def test_burgers_envelope(burgers):
    truth, dictionary = burgers
    D = dictionary(BURGERS_D)
    n = truth.index_of(np.pi / 2)
    ref = truth.states[n]
    lo, hi = ref.min() - 0.01 * np.abs(ref).max(), ref.max() + 0.01 * np.abs(ref).max()

    def inside(u):
        return lo <= u.min() and u.max() <= hi

    for f in ("l1irls", "huber"):
        assert inside(burgers_rom(D, f, n).reconstructed[n])
    assert not inside(burgers_rom(D, "l2", n).reconstructed[n])


@pytest.mark.criterion("7c")
@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="D0 changes the t = pi solution by about 5%")
def test_burgers_dictionary_outliers(burgers):
    truth, dictionary = burgers
    n = truth.n_steps
    scale = np.abs(truth.states[n]).max()
    changes = {}
    for f in ("l1irls", "huber"):
        u1 = burgers_rom(dictionary(BURGERS_D1), f, n).reconstructed[n]
        u0 = burgers_rom(dictionary(BURGERS_D0), f, n).reconstructed[n]
        changes[f] = np.abs(u1 - u0).max() / scale
    assert max(changes.values()) < 0.02, changes


# ---------------------------------------------------------------------------
# 8. Euler strategies


EULER_MUS = (0.0, 0.2, 0.4, 0.5, 0.8, 1.0)


@pytest.mark.criterion("8")
def test_euler_strategies():
    n_cells = 300
    dt = hdm.euler_time_step(list(EULER_MUS) + [0.6], n_cells)
    trajs = [hdm.euler1d_unsteady(mu, n_cells, dt=dt) for mu in EULER_MUS]
    truth = hdm.euler1d_unsteady(0.6, n_cells, dt=dt)
    x = truth.grid.x
    D = rom.UnsteadyDictionary(EULER_MUS, trajs,
                               lambda mu: hdm.euler_initial_state(x, mu).as_array())
    f = Functional.from_name("l1irls")
    per = rom.euler_rom_per_variable(D, 0.6, f, perturbation=PERTURB)
    single = rom.euler_rom_single_expansion(D, 0.6, f, perturbation=PERTURB)

    def velocity(U):
        return U[1] / U[0]

    assert abs(velocity(per.reconstructed[0])[0] - 0.2792) <= 1e-3
    assert abs(velocity(single.reconstructed[0])[0] - 0.2792) > 0.05

    n = truth.n_steps
    assert n * dt == pytest.approx(hdm.EULER_T_END)
    u_ref = velocity(truth.states[n])
    err_per = np.abs(velocity(per.reconstructed[n]) - u_ref).max()
    err_single = np.abs(velocity(single.reconstructed[n]) - u_ref).max()
    assert err_per <= err_single

    # each HDM step changes the totals by exactly the boundary flux
    for k in range(n):
        F = hdm.EULER.interface_fluxes(truth.states[k])
        change = (truth.states[k + 1] - truth.states[k]).sum(axis=1) * truth.grid.dx
        np.testing.assert_allclose(change, -dt * (F[:, -1] - F[:, 0]), atol=1e-10)


# ---------------------------------------------------------------------------
# 9. determinism


@pytest.mark.criterion("9")
@pytest.mark.parametrize("raw", [
    {"experiment": "regression", "seed": 11},
    {"experiment": "advect1d", "functionals": ["l2", "l1lp", "l1irls", "huber", "galerkin"]},
    {"experiment": "euler", "functionals": ["l2"]},
], ids=["regression", "advect1d", "euler"])
def test_determinism(tmp_path, raw):
    _, first = run(tmp_path / "a", raw, desk_scale=True)
    _, second = run(tmp_path / "b", raw, desk_scale=True)
    assert first["files"] == second["files"]
    for name in first["files"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text()) == first
