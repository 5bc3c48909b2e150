import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poqm.errors import CapacityError
from poqm.qsim import (
    BREIDBART,
    CNOT,
    HADAMARD,
    H,
    X,
    BranchPath,
    Bb84Description,
    QReg,
    apply_unitary,
    basis_state,
    depolarize,
    enumerate_branches,
    fidelity,
    haar_unitary,
    measure_angle,
    measure_angle_drop,
    measure_subset_computational,
    new_register,
    prepare_bb84,
    product_state,
    random_bits,
    state_distance,
)

SQ = 1 / math.sqrt(2)


def random_reg(rng, n):
    z = rng.standard_normal(1 << n) + 1j * rng.standard_normal(1 << n)
    return QReg(n, z / np.linalg.norm(z))


def exact_dist(fn):
    out = {}
    for w, r in enumerate_branches(fn):
        out[r] = out.get(r, 0.0) + w
    return out


# registers


def test_new_register():
    assert np.allclose(new_register(1).amps, [1, 0])
    assert np.allclose(new_register(2).amps, [1, 0, 0, 0])
    with pytest.raises(CapacityError):
        new_register(25)
    with pytest.raises(CapacityError):
        new_register(0)


def test_qreg_rejects_bad_shapes():
    with pytest.raises(ValueError):
        QReg(2, np.ones(3) / math.sqrt(3))
    with pytest.raises(ValueError):
        QReg(1, np.array([1.0, 1.0]))


def test_prepare_bb84_examples():
    assert np.allclose(prepare_bb84(Bb84Description("0", "0")).amps, [1, 0])
    assert np.allclose(prepare_bb84(Bb84Description("1", "1")).amps, [SQ, -SQ])
    assert np.allclose(prepare_bb84(Bb84Description("01", "10")).amps, [0, SQ, 0, SQ])


def test_description_invariants():
    with pytest.raises(ValueError):
        Bb84Description("01", "1")
    with pytest.raises(ValueError):
        Bb84Description("0a", "11")


# measurement


def test_measure_angle_examples():
    assert exact_dist(lambda p: measure_angle(new_register(1), 0, 0.0, p)[0]) == {0: 1.0}
    plus = product_state([HADAMARD])
    d = exact_dist(lambda p: measure_angle(plus, 0, 0.0, p)[0])
    assert d[0] == pytest.approx(0.5) and d[1] == pytest.approx(0.5)
    d = exact_dist(lambda p: measure_angle(new_register(1), 0, BREIDBART, p)[0])
    assert d[0] == pytest.approx(math.cos(math.pi / 8) ** 2, abs=1e-12)


def test_measure_breidbart_frequency():
    rng = np.random.default_rng(3)
    reg = new_register(1)
    hits = sum(measure_angle_drop(reg, 0, BREIDBART, rng)[0] == 0 for _ in range(100_000))
    p = math.cos(math.pi / 8) ** 2
    assert abs(hits / 100_000 - p) <= 3 * math.sqrt(p * (1 - p) / 100_000)


@given(st.floats(0, math.pi), st.floats(0, math.pi), st.integers(0, 2**32 - 1))
def test_born_frequencies(phi, angle, seed):
    rng = np.random.default_rng(seed)
    reg = product_state([phi])
    trials = 4000
    zeros = sum(measure_angle(reg, 0, angle, rng)[0] == 0 for _ in range(trials))
    p = math.cos(phi - angle) ** 2
    se = math.sqrt(max(p * (1 - p), 1e-12) / trials)
    assert abs(zeros / trials - p) <= 5 * se + 1e-9


def test_measure_angle_collapses_to_basis_vector():
    rng = np.random.default_rng(0)
    reg = random_reg(rng, 3)
    bit, out = measure_angle(reg, 1, BREIDBART, rng)
    again, _ = measure_angle(out, 1, BREIDBART, rng)
    assert again == bit


def test_measure_angle_index_error():
    with pytest.raises(IndexError):
        measure_angle(new_register(2), 2, 0.0, np.random.default_rng(0))


# unitaries


def test_apply_unitary_examples():
    reg = random_reg(np.random.default_rng(1), 3)
    assert state_distance(apply_unitary(reg, np.eye(2), [1]), reg) < 1e-12
    assert np.allclose(apply_unitary(new_register(1), H, [0]).amps, [SQ, SQ])
    assert np.allclose(apply_unitary(new_register(2), X, [1]).amps, [0, 1, 0, 0])


def test_apply_unitary_errors():
    reg = new_register(2)
    with pytest.raises(ValueError):
        apply_unitary(reg, np.array([[1, 1], [0, 1]]), [0])
    with pytest.raises(ValueError):
        apply_unitary(reg, CNOT, [0, 0])
    with pytest.raises(IndexError):
        apply_unitary(reg, X, [5])
    with pytest.raises(ValueError):
        apply_unitary(reg, CNOT, [0])


def test_cnot_target_order():
    reg = basis_state("10")
    assert np.allclose(apply_unitary(reg, CNOT, [0, 1]).amps, basis_state("11").amps)
    assert np.allclose(apply_unitary(reg, CNOT, [1, 0]).amps, basis_state("10").amps)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_unitary_then_inverse_is_identity(n, seed):
    rng = np.random.default_rng(seed)
    reg = random_reg(rng, n)
    t = int(rng.integers(1, min(n, 3) + 1))
    targets = [int(q) for q in rng.choice(n, size=t, replace=False)]
    u = haar_unitary(1 << t, rng)
    back = apply_unitary(apply_unitary(reg, u, targets), u.conj().T, targets)
    assert state_distance(back, reg) <= 1e-8


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_normalisation_preserved(n, seed):
    rng = np.random.default_rng(seed)
    reg = random_reg(rng, n)
    for _ in range(20):
        op = rng.integers(4)
        q = int(rng.integers(reg.n)) if reg.n else 0
        if reg.n == 0:
            break
        if op == 0:
            reg = apply_unitary(reg, haar_unitary(2, rng), [q])
        elif op == 1:
            _, reg = measure_angle(reg, q, float(rng.uniform(0, math.pi)), rng)
        elif op == 2:
            reg = depolarize(reg, q, float(rng.random()), rng)
        else:
            _, reg = measure_angle_drop(reg, q, float(rng.uniform(0, math.pi)), rng)
        assert abs(reg.norm() - 1) < 1e-9
        assert reg.amps.size == 1 << reg.n


# subset measurement


def test_subset_examples():
    rng = np.random.default_rng(0)
    bits, rest = measure_subset_computational(basis_state("10"), [0, 1], rng)
    assert bits == "10" and rest.n == 0
    bell = QReg(2, np.array([SQ, 0, 0, SQ]))
    d = exact_dist(lambda p: (lambda b, r: (b, tuple(np.round(r.amps.real, 12))))(*measure_subset_computational(bell, [0], p)))
    assert d == pytest.approx({("0", (1.0, 0.0)): 0.5, ("1", (0.0, 1.0)): 0.5})
    reg = random_reg(rng, 2)
    bits, rest = measure_subset_computational(reg, [], rng)
    assert bits == "" and state_distance(rest, reg) == 0


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_subset_all_matches_born_distribution(n, seed):
    rng = np.random.default_rng(seed)
    reg = random_reg(rng, n)
    order = [int(q) for q in rng.permutation(n)]
    d = exact_dist(lambda p: measure_subset_computational(reg, order, p)[0])
    probs = reg.probabilities().reshape((2,) * n)
    for bits, w in d.items():
        idx = [0] * n
        for q, b in zip(order, bits):
            idx[q] = int(b)
        assert w == pytest.approx(probs[tuple(idx)], abs=1e-12)
    assert sum(d.values()) == pytest.approx(1.0)


def test_subset_rejects_duplicates():
    with pytest.raises(ValueError):
        measure_subset_computational(new_register(2), [0, 0], np.random.default_rng(0))


# noise


def _pr_zero_after(p, times):
    def run(path):
        reg = new_register(1)
        for _ in range(times):
            reg = depolarize(reg, 0, p, path)
        return measure_angle(reg, 0, 0.0, path)[0]

    return exact_dist(run)[0]


def test_depolarize_zero_is_identity():
    reg = random_reg(np.random.default_rng(0), 2)
    assert depolarize(reg, 0, 0.0, np.random.default_rng(1)) is reg


def test_depolarize_full_exact_mixture():
    # I and Z keep |0>, X and Y flip it: Pr[0] = 1/2 under trajectory semantics.
    assert _pr_zero_after(1.0, 1) == pytest.approx(0.5)
    rng = np.random.default_rng(4)
    zeros = sum(measure_angle(depolarize(new_register(1), 0, 1.0, rng), 0, 0.0, rng)[0] == 0 for _ in range(100_000))
    assert abs(zeros / 100_000 - 0.5) < 0.01


def test_depolarize_repeated_monotone():
    vals = [_pr_zero_after(0.5, t) for t in range(4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    # two rounds at p equal one round at p' = 1 - (1 - p)^2
    assert vals[2] == pytest.approx(_pr_zero_after(0.75, 1))


def test_depolarize_bad_p():
    with pytest.raises(ValueError):
        depolarize(new_register(1), 0, 1.5, np.random.default_rng(0))


# fidelity


def test_fidelity_examples():
    d = Bb84Description("0110", "1010")
    assert fidelity(prepare_bb84(d), d) == pytest.approx(1.0)
    assert fidelity(new_register(1), Bb84Description("1", "0")) == pytest.approx(0.0)
    assert fidelity(new_register(1), Bb84Description("0", "1")) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        fidelity(new_register(2), Bb84Description("1", "0"))


# randomness


def test_same_seed_same_outcomes():
    def run(seed):
        rng = np.random.default_rng(seed)
        reg = random_reg(rng, 4)
        return [measure_angle_drop(reg, 0, 0.3, rng)[0] for _ in range(50)]

    assert run(9) == run(9)


def test_random_bits_lengths():
    rng = np.random.default_rng(0)
    assert random_bits(rng, 0) == ""
    assert len(random_bits(rng, 70)) == 70
    assert set(random_bits(rng, 40)) <= {"0", "1"}


def test_branch_path_weights_sum_to_one():
    path_results = enumerate_branches(lambda p: random_bits(p, 3))
    assert len(path_results) == 8
    assert sum(w for w, _ in path_results) == pytest.approx(1.0)
    assert isinstance(BranchPath(), BranchPath)
