"""End-to-end acceptance checks for the escalation engine.

Everything here runs the real Monte Carlo pipeline at production replication
counts, so the module is slow by design.  Targets and tolerances live in the
module constants below; each criterion gets its own test so a failure names
the property that broke.
"""

import itertools
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

import podose.cli as cli
from podose.calibration import default_grid, cyclic_calibrate, config_from_omega
from podose.engine import TrialConfig, run_oc, resolve_pseudo, simulate_trial
from podose.inference import fit_glm_fractional, posterior_quadrature_blrm
from podose.lattice import build_grid
from podose.modelprior import (
    NormalPrior,
    PseudoPrior,
    Skeleton,
    kl_normal_vs_pseudo,
    match_prior_kl,
    prior_point_estimates,
    standardize_doses,
)
from podose.reporting import config_to_dict
from podose.scenarios import bundled_scenarios, benchmark_pcs, full_scenario_set
from podose.service import create_app

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

PRIOR = NormalPrior(1.0, -1.0, 1.0, 1.0)
B_FULL = 2000
SEED = 7


def gmean(values):
    return float(np.exp(np.mean(np.log(np.maximum(list(values), 1e-4)))))


@pytest.fixture(scope="module")
def scenarios():
    return bundled_scenarios()


# ---------------------------------------------------------------------------
# randomised head-to-head


@pytest.fixture(scope="module")
def randomised_ocs(scenarios):
    poblrm = TrialConfig(
        design="poblrm",
        randomised=True,
        m1=3,
        m2=1,
        skeleton_p1=0.05,
        skeleton_nu=0.07,
        prior=PRIOR,
        soc_skeleton=0.020,
        pseudo_override=(0.37, 1.37, 2.86, 4.54),
        quad_nodes=81,
    )
    pocrm = TrialConfig(
        design="pocrm",
        randomised=True,
        m1=3,
        m2=1,
        skeleton_p1=0.05,
        skeleton_nu=0.07,
        crm_sigma=0.5,
        soc_skeleton=0.0075,
        quad_nodes=81,
    )
    return {
        "poblrm": [run_oc(poblrm, sc, B_FULL, seed=SEED) for sc in scenarios],
        "pocrm": [run_oc(pocrm, sc, B_FULL, seed=SEED) for sc in scenarios],
    }


def test_randomised_poblrm_mean_pcs(randomised_ocs):
    gm = 100.0 * gmean(r.pcs for r in randomised_ocs["poblrm"])
    assert 45.1 - 3.0 <= gm <= 45.1 + 3.0


def test_randomised_pocrm_mean_pcs(randomised_ocs):
    gm = 100.0 * gmean(r.pcs for r in randomised_ocs["pocrm"])
    assert 38.2 - 3.0 <= gm <= 38.2 + 3.0


def test_randomised_design_gap(randomised_ocs):
    gm_b = 100.0 * gmean(r.pcs for r in randomised_ocs["poblrm"])
    gm_c = 100.0 * gmean(r.pcs for r in randomised_ocs["pocrm"])
    assert gm_b - gm_c >= 4.0


def test_randomised_scenario1_soc_selection(randomised_ocs):
    sel_b = 100.0 * randomised_ocs["poblrm"][0].selection[0]
    sel_c = 100.0 * randomised_ocs["pocrm"][0].selection[0]
    assert 77.6 - 4.0 <= sel_b <= 77.6 + 4.0
    assert 45.5 - 4.0 <= sel_c <= 45.5 + 4.0


# ---------------------------------------------------------------------------
# non-randomised operating characteristics


@pytest.fixture(scope="module")
def plain_ocs(scenarios):
    poblrm = TrialConfig(
        design="poblrm",
        skeleton_p1=0.15,
        skeleton_nu=0.01,
        prior=PRIOR,
        n_cohorts=15,
        m1=3,
        quad_nodes=81,
    )
    pocrm = TrialConfig(
        design="pocrm",
        skeleton_p1=0.1,
        skeleton_nu=0.05,
        crm_sigma=0.5,
        n_cohorts=15,
        m1=3,
        quad_nodes=201,
    )
    return {
        "poblrm": [run_oc(poblrm, sc, B_FULL, seed=SEED) for sc in scenarios],
        "pocrm": [run_oc(pocrm, sc, B_FULL, seed=SEED) for sc in scenarios],
    }


def test_plain_poblrm_geometric_mean_pcs(plain_ocs):
    gm = 100.0 * gmean(r.pcs for r in plain_ocs["poblrm"])
    assert 46.8 - 3.0 <= gm <= 46.8 + 3.0


def test_plain_pocrm_close_to_poblrm(plain_ocs):
    gm_b = 100.0 * gmean(r.pcs for r in plain_ocs["poblrm"])
    gm_c = 100.0 * gmean(r.pcs for r in plain_ocs["pocrm"])
    assert abs(gm_b - gm_c) <= 3.0


# ---------------------------------------------------------------------------
# overdose exactness at the scenario extremes


@pytest.mark.parametrize("design", ["poblrm", "pocrm"])
@pytest.mark.parametrize("B", [1, 5])
def test_overdose_extremes_exact(scenarios, design, B):
    if design == "poblrm":
        cfg = TrialConfig(
            design="poblrm",
            skeleton_p1=0.15,
            skeleton_nu=0.01,
            prior=PRIOR,
            n_cohorts=4,
            m1=3,
            quad_nodes=81,
        )
    else:
        cfg = TrialConfig(
            design="pocrm",
            skeleton_p1=0.1,
            skeleton_nu=0.05,
            crm_sigma=0.5,
            n_cohorts=4,
            m1=3,
            quad_nodes=81,
        )
    # every dose in scenario 1 exceeds the target; none does in scenario 10
    assert run_oc(cfg, scenarios[0], B, seed=3).overdose_alloc == 1.0
    assert run_oc(cfg, scenarios[9], B, seed=3).overdose_alloc == 0.0


# ---------------------------------------------------------------------------
# scenario generator versus a brute-force antichain oracle


def brute_force_antichains(grid):
    doses = range(1, grid.k + 1)
    out = set()
    for r in range(grid.k + 1):
        for combo in itertools.combinations(doses, r):
            ok = all(
                not (grid.leq(a, b) or grid.leq(b, a))
                for a, b in itertools.combinations(combo, 2)
            )
            if ok:
                out.add(frozenset(combo))
    return out


@pytest.mark.parametrize("r,c,count", [(3, 3, 20), (2, 2, 6)])
def test_scenario_set_matches_antichain_enumeration(r, c, count):
    grid = build_grid(r, c)
    scens = full_scenario_set(grid, 0.30)
    assert len(scens) == count
    oracle = brute_force_antichains(grid)
    assert len(oracle) == count
    # one scenario per antichain; the first is the empty one (all doses toxic)
    produced = {frozenset(s.mtc_set) if i else frozenset() for i, s in enumerate(scens)}
    assert produced == oracle
    for s in scens:
        # the validator runs in the constructor; rebuilding must not raise
        type(s)(s.label, s.grid, s.tox, s.ttl, s.soc_tox, s.mtc_override)


# ---------------------------------------------------------------------------
# prior matching quality against the published pseudo hyperparameters


@pytest.mark.parametrize(
    "p1,nu,published",
    [
        (0.15, 0.01, (0.45, 1.50, 0.57, 1.65)),
        (0.05, 0.07, (0.37, 1.37, 2.86, 4.54)),
    ],
)
def test_kl_matching_beats_reference(p1, nu, published):
    skeleton = Skeleton.equal_spaced(p1, nu, 9)
    dtilde = standardize_doses(skeleton, prior_point_estimates(PRIOR))
    res = match_prior_kl(PRIOR, dtilde, seed=17)
    d_lo, d_hi = float(dtilde[0]), float(dtilde[-1])
    kl_ours, _ = kl_normal_vs_pseudo(PRIOR, res.pseudo, d_lo, d_hi, seed=29)
    kl_ref, se_ref = kl_normal_vs_pseudo(
        PRIOR, PseudoPrior(*published), d_lo, d_hi, seed=29
    )
    assert kl_ours <= kl_ref + 2.0 * se_ref


# ---------------------------------------------------------------------------
# cyclic calibration behaviour on the two anchor scenarios


@pytest.fixture(scope="module")
def calibration_runs(scenarios):
    grid = default_grid("poblrm")
    template = TrialConfig(
        design="poblrm",
        skeleton_p1=0.15,
        skeleton_nu=0.01,
        prior=PRIOR,
        n_cohorts=15,
        m1=3,
        quad_nodes=81,
    )
    anchors = [scenarios[0], scenarios[6]]
    start = {"p1": 0.1, "nu": 0.1, "mu1": 0.0, "mu2": 1.0, "sigma1": 5.0, "sigma2": 5.0}
    first = cyclic_calibrate(
        grid, anchors, template, B=B_FULL, alpha=0.05, seed=SEED, start=start
    )
    second = cyclic_calibrate(
        grid, anchors, template, B=B_FULL, alpha=0.05, seed=SEED, start=start
    )
    return {"grid": grid, "template": template, "first": first, "second": second}


def test_calibration_effort_bounds(calibration_runs):
    _, trace = calibration_runs["first"]
    assert calibration_runs["grid"].size == 25_200
    assert trace.n_configs <= 25_200
    assert trace.n_configs <= 200


def test_calibration_accepted_path_improves(calibration_runs):
    _, trace = calibration_runs["first"]
    path = [e.gm for e in trace.accepted_path()]
    assert path, "no accepted update at all"
    assert all(b > a for a, b in zip(path, path[1:]))


def test_calibration_same_seed_identical(calibration_runs):
    omega1, trace1 = calibration_runs["first"]
    omega2, trace2 = calibration_runs["second"]
    assert omega1 == omega2
    assert len(trace1.entries) == len(trace2.entries)
    for e1, e2 in zip(trace1.entries, trace2.entries):
        assert e1.omega == e2.omega
        assert e1.per_scenario_pcs == e2.per_scenario_pcs
        assert e1.accepted == e2.accepted


def test_calibrated_design_holds_up_on_full_set(calibration_runs, scenarios, plain_ocs):
    omega, _ = calibration_runs["first"]
    cfg = config_from_omega(calibration_runs["template"], omega)
    assert cfg is not None
    gm = 100.0 * gmean(run_oc(cfg, sc, B_FULL, seed=SEED).pcs for sc in scenarios)
    reference = 100.0 * gmean(r.pcs for r in plain_ocs["poblrm"])
    assert abs(gm - reference) <= 3.0


# ---------------------------------------------------------------------------
# complete-information benchmark


@pytest.fixture(scope="module")
def benchmark_values(scenarios):
    return {sc.label: benchmark_pcs(sc, n=45, B=10_000, seed=SEED) for sc in scenarios}


def test_benchmark_difficulty_ranking(benchmark_values):
    ranked = sorted(benchmark_values, key=benchmark_values.get)
    assert "7" in ranked[:3]
    assert "1" in ranked[-3:]


def test_benchmark_upper_bounds_designs(benchmark_values, plain_ocs, scenarios):
    for ocs in plain_ocs.values():
        for sc, oc in zip(scenarios, ocs):
            assert oc.pcs <= benchmark_values[sc.label] + 0.03


# ---------------------------------------------------------------------------
# numeric oracles


def _grid_mle(levels, y, n, span=8.0, nodes=401):
    best = (None, None, -np.inf)
    t1c, t2c, width = 0.0, 1.0, span
    for _ in range(3):
        t1s = np.linspace(t1c - width, t1c + width, nodes)
        t2s = np.linspace(max(t2c - width, 1e-6), t2c + width, nodes)
        ll = np.zeros((nodes, nodes))
        for d, yy, nn in zip(levels, y, n):
            eta = t1s[:, None] + t2s[None, :] * d
            p = 1.0 / (1.0 + np.exp(-eta))
            p = np.clip(p, 1e-12, 1 - 1e-12)
            ll += yy * np.log(p) + (nn - yy) * np.log1p(-p)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        t1c, t2c = float(t1s[i]), float(t2s[j])
        best = (t1c, t2c, float(ll[i, j]))
        width /= math.sqrt(nodes)
        width = max(width, 1e-4)
    return best


def test_irls_matches_grid_search_oracle():
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(99)))
    levels = np.linspace(-3.0, 0.5, 5)
    for _ in range(5):
        n = rng.integers(2, 8, size=5).astype(float)
        p = 1.0 / (1.0 + np.exp(-(0.5 + 1.3 * levels)))
        y = rng.binomial(n.astype(int), p).astype(float)
        # fractional pseudo weights keep the fit away from separation
        y = y + 0.3
        n = n + 0.9
        fit = fit_glm_fractional(levels, y, n)
        t1o, t2o, llo = _grid_mle(levels, y, n)
        assert fit.theta1 == pytest.approx(t1o, abs=1e-3)
        assert fit.theta2 == pytest.approx(t2o, abs=1e-3)


def test_quadrature_matches_riemann_oracle():
    # two pseudo cohorts bracket the observed ones (pseudo-posterior form)
    d = np.array([-4.0, -3.0, -2.0, -1.0, -0.5])
    y = np.array([0.45, 1.0, 2.0, 0.0, 0.57])
    n = np.array([1.50, 3.0, 3.0, 3.0, 1.65])
    post = posterior_quadrature_blrm(d, y, n)
    t1f = np.linspace(post.t1g[0], post.t1g[-1], 4 * post.t1g.size)
    l2f = np.linspace(post.lt2g[0], post.lt2g[-1], 4 * post.lt2g.size)
    lp = np.zeros((t1f.size, l2f.size))
    t2f = np.exp(l2f)
    for dd, yy, nn in zip(d, y, n):
        eta = t1f[:, None] + t2f[None, :] * dd
        p = np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-12, 1 - 1e-12)
        lp += yy * np.log(p) + (nn - yy) * np.log1p(-p)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    e1 = float((w.sum(axis=1) * t1f).sum())
    e2 = float((w.sum(axis=0) * t2f).sum())
    assert post.theta1 == pytest.approx(e1, abs=1e-3)
    assert post.theta2 == pytest.approx(e2, abs=1e-3)


def test_skeleton_roundtrip_exact():
    skeleton = Skeleton.equal_spaced(0.15, 0.01, 9)
    t1, t2 = prior_point_estimates(PRIOR)
    d = standardize_doses(skeleton, (t1, t2))
    back = 1.0 / (1.0 + np.exp(-(t1 + t2 * d)))
    assert np.allclose(back, skeleton.values, atol=1e-12, rtol=0.0)


# ---------------------------------------------------------------------------
# determinism


def test_simulation_is_reproducible(scenarios):
    cfg = resolve_pseudo(
        TrialConfig(
            design="poblrm",
            skeleton_p1=0.15,
            skeleton_nu=0.01,
            prior=PRIOR,
            n_cohorts=6,
            m1=3,
            quad_nodes=81,
        )
    )
    a = simulate_trial(cfg, scenarios[4], seed=11, rep=3)
    b = simulate_trial(cfg, scenarios[4], seed=11, rep=3)
    assert a == b
    assert a.final_arm == b.final_arm
    assert a.trace == b.trace


def test_oc_independent_of_thread_count(scenarios):
    cfg = TrialConfig(
        design="pocrm",
        skeleton_p1=0.1,
        skeleton_nu=0.05,
        crm_sigma=0.5,
        n_cohorts=4,
        m1=3,
        quad_nodes=81,
    )
    serial = run_oc(cfg, scenarios[4], 40, seed=13, threads=1)
    threaded = run_oc(cfg, scenarios[4], 40, seed=13, threads=2)
    assert serial.selection == threaded.selection
    assert serial.allocation == threaded.allocation
    assert serial.mean_dlts == threaded.mean_dlts


def test_oc_files_identical_across_runs(tmp_path):
    cfg = TrialConfig(
        design="pocrm",
        skeleton_p1=0.1,
        skeleton_nu=0.05,
        crm_sigma=0.5,
        n_cohorts=3,
        m1=3,
        quad_nodes=81,
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config_to_dict(cfg)))
    outputs = []
    for run in ("one", "two"):
        out = tmp_path / run
        res = CliRunner().invoke(
            cli.main,
            [
                "simulate",
                "--config",
                str(cfg_path),
                "--scenarios",
                "1,10",
                "-B",
                "25",
                "--seed",
                "5",
                "--out",
                str(out),
            ],
        )
        assert res.exit_code == 0, res.output
        payload = json.loads((out.with_suffix(".json")).read_text())
        # the manifest records wall-clock creation time; everything else
        # must match byte for byte
        payload["manifest"].pop("created_at")
        outputs.append((out.with_suffix(".csv").read_bytes(), payload))
        assert (out.parent / (out.name + "_pcs.png")).exists()
    assert outputs[0] == outputs[1]


# ---------------------------------------------------------------------------
# conduct service agrees with offline replay


def test_service_replay_equivalence(tmp_path):
    cfg = TrialConfig(
        design="poblrm",
        skeleton_p1=0.15,
        skeleton_nu=0.01,
        prior=PRIOR,
        n_cohorts=5,
        m1=3,
        quad_nodes=201,
    )
    config_dict = config_to_dict(cfg)
    app = create_app(tmp_path / "data")
    with TestClient(app) as client:
        created = client.post(
            "/trials", json={"config": config_dict, "key": "acc-1"}
        ).json()
        trial_id = created["trial_id"]
        history = []
        for i, dlt in enumerate([0, 1, 0, 2, 1]):
            view = client.get(f"/trials/{trial_id}").json()
            outcomes = {a: min(dlt, c) for a, c in view["next_allocation"].items()}
            history.append(outcomes)
            client.post(
                f"/trials/{trial_id}/cohorts",
                json={"outcomes": outcomes, "key": f"acc-c{i}"},
            )
        served = client.get(f"/trials/{trial_id}").json()

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config_dict))
    hist_path = tmp_path / "hist.json"
    hist_path.write_text(json.dumps(history))
    res = CliRunner().invoke(
        cli.main, ["replay", "--config", str(cfg_path), "--history", str(hist_path)]
    )
    assert res.exit_code == 0, res.output
    offline = json.loads(res.output)["steps"]
    assert [s["recommendation"] for s in offline] == [
        h["recommendation"] for h in served["history"]
    ]
    assert served["complete"]
