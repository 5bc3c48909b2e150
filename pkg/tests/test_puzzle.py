import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poqm.core import HonestProver, ProtocolParams, Role, as_rng, run_poqm
from poqm.errors import BudgetViolation, HarnessError, InterfaceError
from poqm.puzzle import (
    AbcSplit,
    CompiledPuzzlePoQM,
    PuzzleAdversary,
    ToyPuzzle,
    ToySecret,
    block_bases,
    block_layout,
    compile_puzzle_to_poqm,
    exact_random_answer_acceptance,
    guess_block_adversary,
    keep_all_adversary,
    measure_all_adversary,
    pair_from_single,
    parse_pk,
    random_answer_adversary,
    run_abc_game,
    toy_keygen,
    toy_obligate,
    toy_solve,
    toy_ver,
)
from poqm.qsim import Bb84Description, QReg


@given(st.integers(1, 64), st.data())
def test_layout_partitions_range(n, data):
    k = data.draw(st.integers(1, n))
    layout = block_layout(n, k)
    assert len(layout) == k
    assert layout[0][0] == 0 and layout[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(layout, layout[1:]))
    sizes = [b - a for a, b in layout]
    assert min(sizes) >= 1 and max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)


def test_layout_examples_and_errors():
    assert block_layout(5, 2) == ((0, 3), (3, 5))
    assert block_bases(((0, 3), (3, 5)), "10") == "11100"
    with pytest.raises(ValueError):
        block_layout(3, 4)
    with pytest.raises(ValueError):
        block_layout(3, 0)


def test_toy_ver_examples():
    sk = ToySecret(Bb84Description("0110", "0011"), ((0, 2), (2, 4)))
    assert toy_ver(sk, b"", "00", "01zz")
    assert toy_ver(sk, b"", "11", "zz10")
    assert toy_ver(sk, b"", "01", "0110")
    assert not toy_ver(sk, b"", "01", "1110")
    assert not toy_ver(sk, b"", "10", "011")
    assert not toy_ver(sk, b"", "0", "0110")
    # no matching positions: anything of the right length passes
    assert toy_ver(sk, b"", "10", "1001")


@given(st.integers(1, 10), st.data(), st.integers(0, 2**32 - 1))
def test_honest_toy_solution_verifies(n, data, seed):
    k = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    keys, handed = toy_keygen(n, k, rng)
    inst = toy_obligate(keys.pk, handed)
    ch = "".join(str(b) for b in rng.integers(0, 2, k))
    assert toy_ver(keys.sk, inst.y, ch, toy_solve(inst, ch, rng))


def test_public_key_carries_no_secret():
    keys, _ = toy_keygen(6, 2, as_rng(0))
    assert set(json.loads(keys.pk)) == {"n", "blocks"}
    assert parse_pk(keys.pk) == (6, ((0, 3), (3, 6)))


def test_obligate_and_solve_errors():
    keys, handed = toy_keygen(4, 2, as_rng(0))
    with pytest.raises(ValueError):
        toy_obligate(keys.pk, QReg.empty())
    inst = toy_obligate(keys.pk, handed)
    with pytest.raises(ValueError):
        toy_solve(inst, "0", as_rng(0))


def test_compiled_protocol_has_four_rounds():
    proto = compile_puzzle_to_poqm(ToyPuzzle(6, 2))
    assert isinstance(proto, CompiledPuzzlePoQM) and proto.rounds == 4
    verdict, t_init, t_exec = run_poqm(proto, HonestProver(), ProtocolParams(6, k=2), as_rng(3))
    assert verdict.accepted
    assert [m.sender for m in t_init] == [Role.VERIFIER, Role.PROVER]
    assert [m.sender for m in t_exec] == [Role.VERIFIER, Role.PROVER]
    assert len(t_init) + len(t_exec) == proto.rounds
    with pytest.raises(ValueError):
        run_poqm(proto, HonestProver(), ProtocolParams(6, k=3), as_rng(3))


def test_honest_compiled_always_accepts():
    proto = compile_puzzle_to_poqm(ToyPuzzle(12, 3))
    rng = as_rng(9)
    assert all(run_poqm(proto, HonestProver(), ProtocolParams(12, k=3), rng)[0].accepted for _ in range(200))


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (3, 2), (4, 4), (6, 3)])
def test_exact_random_answer(n, k):
    assert exact_random_answer_acceptance(n, k) == pytest.approx(0.75**n)


def _rate(adv, n, k, trials, seed):
    proto = compile_puzzle_to_poqm(ToyPuzzle(n, k))
    rng = as_rng(seed)
    return sum(run_poqm(proto, adv, ProtocolParams(n, k=k), rng)[0].accepted for _ in range(trials)) / trials


def test_random_answer_matches_exact_value():
    trials = 6000
    p = exact_random_answer_acceptance(4, 1)
    assert abs(_rate(random_answer_adversary(), 4, 1, trials, 1) - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_measure_all_rate_one_block():
    # challenge 0 checks only computational positions, where stored bits are right;
    # challenge 1 checks Hadamard positions, each right w.p. 1/2
    n, trials = 4, 6000
    p = (1 + 0.75**n) / 2
    assert abs(_rate(measure_all_adversary(0.0), n, 1, trials, 2) - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_keep_all_wins_and_declares_budget():
    assert _rate(keep_all_adversary(4), 4, 2, 300, 3) == 1.0
    lying = PuzzleAdversary(keep_all_adversary(4).first, keep_all_adversary(4).second, m2=1)
    with pytest.raises(BudgetViolation):
        run_poqm(compile_puzzle_to_poqm(ToyPuzzle(4, 2)), lying, ProtocolParams(4, k=2), as_rng(0))


def test_adversary_output_types_checked():
    bad = PuzzleAdversary(lambda pk, ws, rng: ("y", b"", ()), lambda ch, s, rho, rng: "")
    with pytest.raises(HarnessError):
        run_poqm(compile_puzzle_to_poqm(ToyPuzzle(2, 1)), bad, ProtocolParams(2, k=1), as_rng(0))


# three-party game


def test_abc_pairing_runs():
    puzzle = ToyPuzzle(4, 2)
    A, B, C = pair_from_single(guess_block_adversary())
    rng = as_rng(1)
    results = [run_abc_game(puzzle, A, B, C, rng) for _ in range(200)]
    assert any(results) and not all(results)
    assert all(len(r.ch) == 2 for r in results)


def test_abc_deterministic_pair_agrees_with_single():
    puzzle = ToyPuzzle(4, 1)
    A, B, C = pair_from_single(measure_all_adversary())
    rng = as_rng(5)
    for _ in range(100):
        r = run_abc_game(puzzle, A, B, C, rng)
        assert r.ans_b == r.ans_c and r.b_ok == r.c_ok == r.accepted


def test_pairing_refuses_quantum_memory():
    with pytest.raises(HarnessError):
        pair_from_single(keep_all_adversary(2))


def test_abc_split_rules():
    puzzle = ToyPuzzle(2, 1)

    def share(view, rng):
        return AbcSplit(b"", b"", (0,), b"", (0,))

    with pytest.raises(HarnessError):
        run_abc_game(puzzle, share, None, None, as_rng(0))

    with pytest.raises(HarnessError):
        run_abc_game(puzzle, lambda v, r: (b"", b""), None, None, as_rng(0))

    def split(view, rng):
        return AbcSplit(b"", b"", (0,), b"", (1,))

    def steal(view, rng):
        view.register.measure(1)
        return "00"

    with pytest.raises(HarnessError):
        run_abc_game(puzzle, split, steal, lambda v, r: "00", as_rng(0))


def test_views_are_sealed():
    puzzle = ToyPuzzle(2, 1)

    def peek(view, rng):
        view.secret
        return AbcSplit(b"")

    with pytest.raises(InterfaceError):
        run_abc_game(puzzle, peek, None, None, as_rng(0))

    def scribble(view, rng):
        view.note = 1
        return AbcSplit(b"")

    with pytest.raises(HarnessError):
        run_abc_game(puzzle, scribble, None, None, as_rng(0))
