import itertools

import pytest

from podose.lattice import build_grid
from podose.scenarios import (
    SUBSET_METHODS,
    Scenario,
    benchmark_pcs,
    bundled_scenarios,
    dump_scenarios,
    full_scenario_set,
    load_scenarios,
    select_subset,
)


def brute_force_antichains(grid):
    doses = range(1, grid.k + 1)
    out = []
    for size in range(grid.k + 1):
        for combo in itertools.combinations(doses, size):
            if all(not grid.comparable(i, j) for i, j in itertools.combinations(combo, 2)):
                out.append(frozenset(combo))
    return set(out)


@pytest.mark.parametrize("r,c,count", [(3, 3, 20), (2, 2, 6), (1, 1, 2)])
def test_full_set_counts_match_antichain_oracle(r, c, count):
    grid = build_grid(r, c)
    scens = full_scenario_set(grid, 0.3)
    assert len(scens) == count
    assert len(brute_force_antichains(grid)) == count
    got = {frozenset(s.mtc_set) if i > 0 else frozenset() for i, s in enumerate(scens)}
    # scenario 1 is the empty antichain (everything above target)
    assert got == brute_force_antichains(grid)


def test_full_set_monotone_and_labeled():
    scens = full_scenario_set(build_grid(3, 3), 0.3)
    assert [s.label for s in scens] == [str(i) for i in range(1, 21)]
    for s in scens:
        # construction passes the Scenario monotonicity validator; re-check
        Scenario(s.label, s.grid, s.tox, s.ttl)


def test_full_set_mtc_at_target():
    scens = full_scenario_set(build_grid(3, 3), 0.3)
    for s in scens[1:]:
        for dose in s.mtc_set:
            assert s.tox[dose - 1] == pytest.approx(0.3)


def test_scenario_rejects_nonmonotone():
    grid = build_grid(3, 3)
    with pytest.raises(ValueError):
        Scenario("x", grid, (0.5, 0.2, 0.3, 0.3, 0.4, 0.5, 0.4, 0.5, 0.6), 0.3)


def test_bundled_set():
    scens = bundled_scenarios()
    assert len(scens) == 20
    for s in scens:
        assert s.soc_tox is not None
        assert len(s.tox) == 9
    # spot checks against the reference tables
    assert scens[0].tox[0] == pytest.approx(0.40)
    assert scens[0].soc_tox == pytest.approx(0.30)
    assert scens[9].mtc_set == (9,)
    assert scens[19].mtc_set == (3, 5, 7)


def test_bundled_correct_arms_randomised():
    scens = bundled_scenarios()
    # scenario 1: SoC at exactly the target beats every overly toxic dose
    assert scens[0].correct_arms(randomised=True) == (0,)
    # scenario 7: the MTC dose is closer than the 0.05 SoC
    assert scens[6].correct_arms(randomised=True) == (6,)


def test_overdose_doses():
    scens = bundled_scenarios()
    assert scens[0].overdose_doses() == tuple(range(1, 10))
    assert scens[9].overdose_doses() == ()


def test_benchmark_single_dose_is_certain():
    sc = Scenario("s", build_grid(1, 1), (0.3,), 0.3)
    assert benchmark_pcs(sc, n=45, B=200, seed=1) == 1.0


def test_benchmark_bounds():
    sc = bundled_scenarios()[6]
    p = benchmark_pcs(sc, n=45, B=300, seed=2)
    assert 0.0 <= p <= 1.0
    with pytest.raises(ValueError):
        benchmark_pcs(sc, n=0, B=10)


def test_benchmark_deterministic():
    sc = bundled_scenarios()[6]
    a = benchmark_pcs(sc, n=45, B=500, seed=9)
    b = benchmark_pcs(sc, n=45, B=500, seed=9)
    assert a == b


def test_subset_positions():
    scens = bundled_scenarios()
    assert [s.label for s in select_subset("pos2", scens)] == ["2", "10"]
    assert [s.label for s in select_subset("pos4", scens)] == ["2", "11", "19", "10"]
    assert [s.label for s in select_subset("pos5", scens)] == ["2", "11", "20", "19", "10"]
    assert select_subset("full", scens) == scens


def test_subset_benchmark_based():
    scens = bundled_scenarios()
    bench = {s.label: 0.5 for s in scens}
    bench["7"] = 0.1
    bench["13"] = 0.2
    bench["1"] = 0.95
    bench["2"] = 0.9
    assert [s.label for s in select_subset("ben2", scens, bench)] == ["7", "1"]
    assert [s.label for s in select_subset("ben4", scens, bench)] == ["7", "13", "2", "1"]
    with pytest.raises(ValueError):
        select_subset("ben2", scens)


def test_subset_methods_registry():
    assert set(SUBSET_METHODS) == {"full", "pos2", "pos4", "pos5", "ben2", "ben4"}


def test_scenario_roundtrip(tmp_path):
    scens = bundled_scenarios()
    path = tmp_path / "scens.json"
    dump_scenarios(scens, path)
    back = load_scenarios(path)
    assert back == scens
