import math

import numpy as np
import pytest

from crowdcert.certify import Verdict, sigma_bound_all
from crowdcert.core import ClassPrior, TransitionMatrix
from crowdcert.errors import InvalidParams, InvalidSplit, SigmaTooLarge
from crowdcert.exact import BinaryNoiseParams
from crowdcert.simulate import (
    SweepMode,
    SweepSpec,
    empirical_accuracies,
    gen_fixed,
    gen_perturbed,
    gen_two_groups,
    group_matrices,
    perturbed_matrices,
    sweep,
)


def test_identity_copies_gold():
    data = gen_fixed(300, ClassPrior.binary(0.3), np.eye(2), 5, seed=0)
    assert np.array_equal(data.labels, np.asarray(data.gold)[data.task_index])


def test_beta_mv_accuracy():
    t = TransitionMatrix.symmetric(0.1)
    data = gen_fixed(10000, ClassPrior.binary(0.5), t, 3, seed=1)
    assert empirical_accuracies(data, t, ClassPrior.binary(0.5)).mv == pytest.approx(0.971, abs=0.01)


def test_flip_frequency_concentration():
    flip, N, H = 0.3, 20000, 3
    data = gen_fixed(N, ClassPrior.binary(0.6), TransitionMatrix.symmetric(flip), H, seed=2)
    gold = np.asarray(data.gold)[data.task_index]
    for c, nu_c in ((0, 0.6), (1, 0.4)):
        freq = np.mean(data.labels[gold == c] != c)
        assert abs(freq - flip) <= 3 * math.sqrt(flip * (1 - flip) / (N * H * nu_c))


def test_fixed_is_deterministic():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    a = gen_fixed(500, ClassPrior.binary(0.4), t, 3, seed=9)
    b = gen_fixed(500, ClassPrior.binary(0.4), t, 3, seed=9)
    c = gen_fixed(500, ClassPrior.binary(0.4), t, 3, seed=10)
    assert a == b and a != c


def test_zero_sigma_matches_fixed():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    fixed = gen_fixed(1000, ClassPrior.binary(0.6), t, 3, seed=5)
    pert, mats = gen_perturbed(1000, ClassPrior.binary(0.6), t, 3, 0.0, seed=5)
    assert fixed == pert
    assert all(m == t for m in mats)


def test_perturbed_matrices_shape_and_range():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    mats = perturbed_matrices(t, 50, 0.1, seed=3)
    s = np.array([t.entries[0, 0] - m.entries[0, 0] for m in mats])
    assert np.all(np.abs(s) <= 0.1)
    for m in mats:
        np.testing.assert_allclose(m.entries - t.entries, s[mats.index(m)] * np.array([[-1, 1], [1, -1]]),
                                   atol=1e-15)
    with pytest.raises(SigmaTooLarge):
        perturbed_matrices(t, 3, 0.2, seed=3)


def test_perturbed_equal_accuracy_row():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    sigma = 0.9 * sigma_bound_all(BinaryNoiseParams(3, 0.7, 0.8, 0.6))
    data, mats = gen_perturbed(10000, ClassPrior.binary(0.6), t, 3, sigma, seed=7)
    acc = empirical_accuracies(data, mats, ClassPrior.binary(0.6))
    assert acc.mv == pytest.approx(0.8328, abs=0.015)
    assert acc.map == pytest.approx(0.8328, abs=0.015)


def test_perturbed_unequal_accuracy_row():
    t = TransitionMatrix.symmetric(0.45)
    data, mats = gen_perturbed(10000, ClassPrior.binary(0.9), t, 3, 0.04, seed=8)
    acc = empirical_accuracies(data, mats, ClassPrior.binary(0.9))
    assert acc.map == pytest.approx(0.899, abs=0.02)
    assert acc.mv == pytest.approx(0.579, abs=0.02)


def test_two_groups_identical_matrices_match_fixed():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    a = gen_two_groups(800, ClassPrior.binary(0.5), t, t, 2, 3, seed=4)
    b = gen_fixed(800, ClassPrior.binary(0.5), t, 5, seed=4)
    assert a == b


def test_two_groups_split_errors():
    t = TransitionMatrix.from_diag(0.7, 0.8)
    with pytest.raises(InvalidSplit):
        gen_two_groups(10, ClassPrior.binary(0.5), t, t, 2, 2, seed=0)
    with pytest.raises(InvalidSplit):
        gen_two_groups(10, ClassPrior.binary(0.5), t, t, 4, 3, seed=0)


@pytest.mark.parametrize("nu0,want_map,want_mv", [(0.55, 0.869, 0.869), (0.95, 0.966, 0.844)])
def test_two_group_accuracy_rows(nu0, want_map, want_mv):
    ta, tb = TransitionMatrix.from_diag(0.58, 0.8), TransitionMatrix.from_diag(0.8, 0.58)
    data = gen_two_groups(10000, ClassPrior.binary(nu0), ta, tb, 3, 4, seed=6)
    acc = empirical_accuracies(data, group_matrices(ta, tb, 3, 4), ClassPrior.binary(nu0))
    assert acc.map == pytest.approx(want_map, abs=0.015)
    assert acc.mv == pytest.approx(want_mv, abs=0.015)


def mv_two_groups_closed_form(ta, tb, size_a, size_b, nu0):
    from scipy.stats import binom

    need = (size_a + size_b) // 2 + 1

    def correct(pa, pb):
        return sum(binom.pmf(i, size_a, pa) * binom.pmf(j, size_b, pb)
                   for i in range(size_a + 1) for j in range(size_b + 1) if i + j >= need)

    return nu0 * correct(ta[0], tb[0]) + (1 - nu0) * correct(ta[1], tb[1])


@pytest.mark.parametrize("ta,tb", [((0.58, 0.8), (0.8, 0.58)), ((0.78, 0.65), (0.65, 0.78))])
@pytest.mark.parametrize("nu0", [0.55, 0.65, 0.95])
def test_two_groups_mv_matches_closed_form(ta, tb, nu0):
    a, b = TransitionMatrix.from_diag(*ta), TransitionMatrix.from_diag(*tb)
    data = gen_two_groups(10000, ClassPrior.binary(nu0), a, b, 3, 4, seed=21)
    acc = empirical_accuracies(data, group_matrices(a, b, 3, 4), ClassPrior.binary(nu0))
    want = mv_two_groups_closed_form(ta, tb, 3, 4, nu0)
    assert abs(acc.mv - want) <= 3 * math.sqrt(want * (1 - want) / 10000)


def grid_values(n, lo=0.5, hi=1.0):
    return np.linspace(lo, hi, n + 2)[1:-1].tolist()


def test_one_coin_sweep_region():
    nus = grid_values(20, 0.0, 1.0)
    spec = SweepSpec(nu0_values=nus, t00_values=grid_values(20), one_coin=True, h_values=(3,))
    grid = sweep(spec)
    assert len(grid) == 400 and grid.n_errors == 0
    for c in grid:
        flip = 1 - c.t00
        assert (c.verdict == Verdict.MV_OPTIMAL.value) == (flip < c.nu0 < 1 - flip)


def test_gap_vs_h_curves():
    hs = tuple(range(1, 42, 2))
    flat = sweep(SweepSpec(nu0_values=(0.4,), t00_values=(0.7,), one_coin=True, h_values=hs))
    assert all(c.gap == 0.0 for c in flat)
    bent = sweep(SweepSpec(nu0_values=(0.2,), t00_values=(0.7,), one_coin=True, h_values=hs))
    gaps = [c.gap for c in bent]
    assert all(g > 0 for g in gaps)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_sweep_spec_validation():
    with pytest.raises(InvalidParams):
        SweepSpec(nu0_values=(0.5, 0.2), t00_values=(0.7,), t11_values=(0.7,))
    with pytest.raises(InvalidParams):
        SweepSpec(nu0_values=(0.5,), t00_values=(0.4,), t11_values=(0.7,))
    with pytest.raises(InvalidParams):
        SweepSpec(nu0_values=(0.5,), t00_values=(0.7,), t11_values=(0.7,), h_values=(2,))
    with pytest.raises(InvalidParams):
        SweepSpec(nu0_values=(0.5,), t00_values=(0.7,), t11_values=(0.7,), mode="MONTE_CARLO", n_samples=10)
    with pytest.raises(InvalidParams):
        SweepSpec(nu0_values=(), t00_values=(0.7,), t11_values=(0.7,))


@pytest.fixture(scope="module")
def mc_grid():
    spec = SweepSpec(nu0_values=grid_values(10, 0.0, 1.0), t00_values=grid_values(10),
                     t11_values=(0.75,), h_values=(3,), mode=SweepMode.MONTE_CARLO,
                     n_samples=4000, seed=123)
    return sweep(spec)


def test_mc_matches_analytic(mc_grid):
    n = mc_grid.spec.n_samples
    for c in mc_grid:
        assert abs((c.empirical_map - c.empirical_mv) - c.gap) <= 3 * math.sqrt(0.5 / n)


def test_mc_map_not_worse(mc_grid):
    n = mc_grid.spec.n_samples
    for c in mc_grid:
        se = math.sqrt(c.empirical_mv * (1 - c.empirical_mv) / n)
        assert c.empirical_map >= c.empirical_mv - 3 * se


def test_sweep_deterministic_and_order_independent(mc_grid):
    again = sweep(mc_grid.spec, workers=2)
    assert again.cells == mc_grid.cells


def test_sweep_estimated_and_errors():
    spec = SweepSpec(nu0_values=(0.5,), t00_values=(0.8,), t11_values=(0.8,), h_values=(3,),
                     n_samples=2000, estimate=True, seed=1)
    cell = sweep(spec).cells[0]
    assert cell.estimated_verdict == Verdict.MV_OPTIMAL.value and not cell.error
    # one anchor task cannot cover both classes: the error is recorded, not raised
    spec = SweepSpec(nu0_values=(0.5,), t00_values=(0.8,), t11_values=(0.8,), h_values=(3,),
                     n_samples=2000, estimate=True, anchor_fraction=1e-4, seed=1)
    grid = sweep(spec)
    assert grid.n_errors == 1 and grid.cells[0].verdict == Verdict.MV_OPTIMAL.value


def test_degenerate_cells_flagged():
    spec = SweepSpec(nu0_values=(0.3,), t00_values=(0.7,), one_coin=True, h_values=(3,))
    cell = sweep(spec).cells[0]
    assert cell.degenerate and cell.gap == 0.0


def test_sigma_bound_regime_random_params():
    from crowdcert.certify import check_two_coin

    rng = np.random.default_rng(20)
    done = 0
    while done < 20:
        H = int(rng.choice([1, 3, 5, 7]))
        p = BinaryNoiseParams(H, *rng.uniform(0.55, 0.95, 2), rng.uniform(0.1, 0.9))
        if check_two_coin(p).verdict is not Verdict.MV_OPTIMAL:
            continue
        bound = sigma_bound_all(p)
        if bound <= 0:
            continue
        t = TransitionMatrix.from_diag(p.t00, p.t11)
        data, mats = gen_perturbed(10000, ClassPrior.binary(p.nu0), t, H, 0.9 * bound, seed=(20, done))
        acc = empirical_accuracies(data, mats, ClassPrior.binary(p.nu0))
        assert abs(acc.map - acc.mv) <= 3 * acc.se(), p
        done += 1
