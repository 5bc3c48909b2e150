import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poqm.adversary import (
    adaptive_two_round,
    breidbart_strategy,
    classical_basis_guess,
    exact_acceptance,
    keep_subset_strategy,
    parity_groups,
    zoo,
)
from poqm.core import ProtocolParams, as_rng
from poqm.errors import CapacityError, HarnessError
from poqm.games import (
    XI,
    BoundSpec,
    BzCircuit,
    Estimate,
    HybridGame,
    Insertion,
    LoccGame,
    amplification_bound,
    amplification_report,
    check_bz,
    clopper_pearson,
    estimate_acceptance,
    exact_hybrid,
    jensen_report,
    keep_subset_family,
    locc_bound,
    locc_leakage_game,
    output_distribution,
    puzzle_bound,
    random_bz_case,
    run_hybrid,
    tight_bz_case,
)
from poqm.puzzle import ToyPuzzle, guess_block_adversary, measure_all_adversary
from poqm.qsim import CNOT, H, product_state

BREIDBART_VALUE = math.cos(math.pi / 8) ** 2


# estimates


@given(st.integers(1, 10**6), st.data())
def test_estimate_invariants(trials, data):
    k = data.draw(st.integers(0, trials))
    e = Estimate.from_counts(k, trials)
    assert 0.0 <= e.ci_low <= e.p_hat <= e.ci_high <= 1.0
    assert e.p_hat == k / trials
    assert e.se >= 0.0
    assert e.contains(e.p_hat)
    d = e.to_dict()
    assert d["successes"] == k and d["se"] == e.se


@given(st.integers(1, 1000), st.integers(1, 1000), st.data())
def test_estimate_combine_adds_counts(t1, t2, data):
    a = Estimate.from_counts(data.draw(st.integers(0, t1)), t1)
    b = Estimate.from_counts(data.draw(st.integers(0, t2)), t2)
    c = a.combine(b)
    assert c.trials == t1 + t2 and c.successes == a.successes + b.successes


def test_estimate_errors_and_bounds():
    with pytest.raises(ValueError):
        Estimate.from_counts(3, 2)
    with pytest.raises(ValueError):
        Estimate.from_counts(0, 0)
    e = Estimate.from_counts(30, 100)
    with pytest.raises(ValueError):
        e.within_bound()
    assert e.with_bound(0.3).within_bound()
    assert not e.with_bound(0.1).within_bound()
    assert e.with_bound(1.5).bound_vacuous


def test_clopper_pearson_edges():
    lo, hi = clopper_pearson(0, 50)
    assert lo == 0.0 and 0 < hi < 0.2
    lo, hi = clopper_pearson(50, 50)
    assert hi == 1.0 and 0.8 < lo < 1.0
    lo, hi = clopper_pearson(500, 1000)
    assert lo < 0.5 < hi and hi - lo < 0.1


def test_estimate_acceptance_routes():
    e1 = estimate_acceptance(lambda rng: rng.random() < 0.25, 4000, 1)
    assert e1.contains(0.25) or abs(e1.p_hat - 0.25) < 3 * e1.se
    game = LoccGame(classical_basis_guess(), 2)
    e2 = estimate_acceptance(game, 20_000, 2, bound=game.bound)
    assert abs(e2.p_hat - 0.5625) <= 3 * e2.se
    assert estimate_acceptance(game, 500, 7) == estimate_acceptance(game, 500, 7)
    with pytest.raises(ValueError):
        estimate_acceptance(game, 99, 0)


# bounds


def test_locc_bound_values():
    assert XI == pytest.approx(0.228446, abs=1e-6)
    v, vac = locc_bound(8)
    assert v == pytest.approx(0.53223, abs=1e-5) and not vac
    assert [locc_bound(n)[1] for n in range(1, 6)] == [True, True, False, False, False]
    with pytest.raises(ValueError):
        locc_bound(0)


@given(st.integers(2, 200))
def test_locc_bound_decreasing(n):
    assert locc_bound(n + 1)[0] < locc_bound(n)[0]


def test_other_bounds():
    assert amplification_bound(0.25, 2) == 1.0
    assert puzzle_bound(3) == 0.125
    assert BoundSpec("puzzle-2^-k", {"k": 2}).evaluate() == (0.25, False)
    assert BoundSpec("amplification", {"beta": 0.3, "m2": 2}).evaluate() == (1.2, True)
    assert BoundSpec("locc", {"n": 8}).evaluate() == locc_bound(8)
    with pytest.raises(ValueError):
        BoundSpec("other", {})


# leakage game


def test_locc_game_rejects_quantum_memory():
    with pytest.raises(HarnessError):
        LoccGame(keep_subset_strategy([0]), 2)
    with pytest.raises(HarnessError):
        locc_leakage_game(keep_subset_strategy([0]), 2, as_rng(0))


@pytest.mark.parametrize("strategy", [breidbart_strategy(), classical_basis_guess(), parity_groups(3, group=2),
                                      adaptive_two_round(3)])
def test_scalar_and_batched_routes_agree_with_exact(strategy):
    n = 3
    exact = exact_acceptance(strategy, n)
    trials = 4000
    scalar = estimate_acceptance(lambda rng: locc_leakage_game(strategy, n, rng), trials, 3)
    batched = estimate_acceptance(LoccGame(strategy, n), 40_000, 4)
    assert abs(scalar.p_hat - exact) <= 4 * math.sqrt(exact * (1 - exact) / trials)
    assert abs(batched.p_hat - exact) <= 4 * math.sqrt(exact * (1 - exact) / 40_000)


def test_zoo_below_bound_at_eight():
    bound = locc_bound(8)[0]
    for s in zoo(8):
        e = estimate_acceptance(LoccGame(s, 8), 20_000, 5, bound=bound)
        assert e.within_bound(), s.descriptor()


# hybrids


def test_hybrid_index_checked():
    with pytest.raises(ValueError):
        run_hybrid(4, ProtocolParams(2), breidbart_strategy(), as_rng(0))
    with pytest.raises(ValueError):
        exact_hybrid(1, 2, breidbart_strategy())


def test_hybrids_zero_and_two_agree():
    s = keep_subset_strategy([0])
    exact = exact_hybrid(2, 3, s)
    trials = 3000
    h0 = estimate_acceptance(HybridGame(0, 3, s, batched=False), trials, 6)
    h2 = estimate_acceptance(HybridGame(2, 3, s), 40_000, 7)
    assert abs(h0.p_hat - exact) <= 4 * math.sqrt(exact * (1 - exact) / trials)
    assert abs(h2.p_hat - exact) <= 4 * math.sqrt(exact * (1 - exact) / 40_000)


def test_hybrid_one_scales_with_failure():
    s = breidbart_strategy()
    p = 0.7 * BREIDBART_VALUE**2
    h1 = estimate_acceptance(HybridGame(1, 2, s, fail_prob=0.3, batched=False), 6000, 8)
    assert abs(h1.p_hat - p) <= 4 * math.sqrt(p * (1 - p) / 6000)
    hb = estimate_acceptance(HybridGame(1, 2, s, fail_prob=0.3), 40_000, 9)
    assert abs(hb.p_hat - p) <= 4 * math.sqrt(p * (1 - p) / 40_000)


def test_hybrid_three_matches_exact_measured():
    s = keep_subset_strategy([0, 1])
    exact = exact_hybrid(3, 2, s)
    assert exact == pytest.approx(0.75**2)
    e = estimate_acceptance(HybridGame(3, 2, s), 40_000, 10)
    assert abs(e.p_hat - exact) <= 4 * math.sqrt(exact * (1 - exact) / 40_000)


def test_exact_hybrid_amplification_inequality():
    for n, s in keep_subset_family(3, 2):
        assert exact_hybrid(2, n, s) <= 2**s.m2 * exact_hybrid(3, n, s) + 1e-12


# measurement insertion


def test_tight_case():
    rep = check_bz(*tight_bz_case())
    assert rep.ok and rep.tight
    assert rep.p_original == pytest.approx({"0": 1.0, "1": 0.0})
    assert rep.p_inserted == pytest.approx({"0": 0.5, "1": 0.5})
    assert rep.worst_ratio == pytest.approx(1.0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 6))
def test_random_insertions_never_violate(seed, n, depth):
    circuit, ins = random_bz_case(np.random.default_rng(seed), n, depth)
    rep = check_bz(circuit, ins)
    assert rep.ok
    assert sum(rep.p_inserted.values()) == pytest.approx(1.0)
    assert sum(rep.p_original.values()) == pytest.approx(1.0)


def test_output_distribution_examples():
    bell = BzCircuit(product_state([0.0, 0.0]), ((H, (0,)), (CNOT, (0, 1))))
    assert output_distribution(bell) == pytest.approx({"00": 0.5, "01": 0.0, "10": 0.0, "11": 0.5})
    assert output_distribution(BzCircuit(bell.prep, bell.gates, (1,))) == pytest.approx({"0": 0.5, "1": 0.5})
    swapped = BzCircuit(product_state([0.0, math.pi / 2]), (), (1, 0))
    assert output_distribution(swapped) == pytest.approx({"00": 0.0, "01": 0.0, "10": 1.0, "11": 0.0})


def test_output_distribution_errors():
    c = BzCircuit(product_state([0.0]), ((H, (0,)),))
    with pytest.raises(ValueError):
        output_distribution(c, Insertion(2, (0,)))
    with pytest.raises(ValueError):
        output_distribution(c, Insertion(0, ()))
    with pytest.raises(CapacityError):
        output_distribution(BzCircuit(product_state([0.0] * 7)))


# amplification


def test_amplification_n1_example():
    rep = amplification_report(1, keep_subset_strategy([0]))
    assert (rep.acc_m2, rep.acc_measured) == pytest.approx((1.0, 0.75))
    assert rep.ok and rep.ratio == pytest.approx(4 / 3)


def test_amplification_mc_mode():
    rep = amplification_report(4, keep_subset_strategy([0, 1]), mode="mc", trials=20_000, seed=1)
    assert rep.ok and set(rep.estimates) == {"acc_m2", "acc_measured"}
    with pytest.raises(ValueError):
        amplification_report(2, keep_subset_strategy([0]), mode="other")
    with pytest.raises(CapacityError):
        amplification_report(5, keep_subset_strategy([0]))


def test_keep_subset_family_shape():
    fam = keep_subset_family()
    assert len(fam) == 28
    assert all(s.m2 <= min(n, 2) for n, s in fam)
    assert {n for n, _ in fam} == {1, 2, 3, 4}


# Jensen pairing


def test_jensen_deterministic_pair_is_exact():
    rep = jensen_report(ToyPuzzle(6, 2), measure_all_adversary(), 2000, 3)
    assert rep.identical_answers
    assert rep.both.successes == rep.single.successes
    assert rep.ok


def test_jensen_randomised_pair():
    rep = jensen_report(ToyPuzzle(4, 2), guess_block_adversary(), 4000, 4)
    assert rep.ok and not rep.identical_answers
    assert rep.both.p_hat <= rep.single.p_hat
