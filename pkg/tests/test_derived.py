import json
import math

import numpy as np
import pytest

from poqm.bb84 import MARKER
from poqm.core import Role, as_rng
from poqm.derived import (
    EVES,
    STATEPUZZ_ATTACKERS,
    breidbart_attacker,
    ke_agreement,
    ke_eve_eval,
    ke_run,
    reduction_check,
    statepuzz_attack_eval,
    statepuzz_samp,
    zeros_attacker,
)
from poqm.errors import InterfaceError
from poqm.puzzle import PartyView
from poqm.qsim import QReg, fidelity, prepare_bb84


# state puzzles


def test_puzzle_string_hides_the_description():
    for seed in range(20):
        inst = statepuzz_samp(12, as_rng(seed))
        body = json.loads(inst.s)
        assert set(body) == {"state", "tau"}
        text = inst.s.decode()
        assert '"x"' not in text and '"theta"' not in text
        assert inst.register.n == 12


def test_answer_register_is_the_target():
    inst = statepuzz_samp(6, as_rng(1))
    assert fidelity(inst.register, inst.target) == pytest.approx(1.0)
    assert fidelity(prepare_bb84(inst.target), inst.target) == pytest.approx(1.0)


def test_attacker_view_is_restricted():
    view = PartyView(s=statepuzz_samp(4, as_rng(0)).s)
    with pytest.raises(InterfaceError):
        view.target
    with pytest.raises(InterfaceError):
        view.register


def test_attackers_return_registers_of_the_right_size():
    view = PartyView(s=statepuzz_samp(5, as_rng(0)).s)
    for attack in STATEPUZZ_ATTACKERS.values():
        out = attack(view, as_rng(1))
        assert isinstance(out, QReg) and out.n == 5


def test_zero_attacker_fidelity_exact_mean():
    # each qubit: 1 for |0>, 0 for |1>, 1/2 for either Hadamard state; mean 1/2 per qubit
    n, trials = 2, 4000
    est = statepuzz_attack_eval(zeros_attacker, n, trials, 3)
    p = 0.5**n
    assert abs(est.p_hat - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_attacker_fidelity_small_at_eight_qubits():
    est = statepuzz_attack_eval(breidbart_attacker, 8, 2000, 4)
    assert est.p_hat <= 2.0**-8 + 3 * est.se + 1e-12


def test_attacker_must_return_register():
    with pytest.raises(ValueError):
        statepuzz_attack_eval(lambda view, rng: None, 2, 1, 0)


def test_reduction_honest_register():
    rep = reduction_check(lambda inst: inst.register, 6, 300, 5)
    assert rep.fidelity.p_hat == 1.0 and rep.acceptance.p_hat == 1.0 and rep.ok


def test_reduction_with_zero_register():
    rep = reduction_check(lambda inst: zeros_attacker(PartyView(s=inst.s), None), 2, 2000, 6)
    assert rep.ok


# key exchange


def test_ke_examples():
    out = ke_run(8, as_rng(0))
    assert out.agree and len(out.a) == 8 and out.retries == 0
    assert [m.sender for m in out.tau] == [Role.VERIFIER, Role.VERIFIER]
    assert [m.phase for m in out.tau] == ["init", "exec"]


def test_ke_retries_after_failed_preparation():
    rng = as_rng(1)
    outs = [ke_run(4, rng, fail_prob=0.5) for _ in range(200)]
    assert all(o.agree for o in outs)
    assert any(o.retries > 0 for o in outs)


def test_ke_transcript_is_marker_then_bases():
    for seed in range(20):
        out = ke_run(16, as_rng(seed))
        msgs = [m.payload for m in out.tau]
        assert msgs[0] == MARKER
        assert set(msgs[1].decode()) <= {"0", "1"} and len(msgs[1]) == 16


def test_ke_agreement_perfect_without_noise():
    assert ke_agreement(8, 500, 2).p_hat == 1.0


def test_ke_agreement_drops_under_noise():
    noisy = ke_agreement(8, 1000, 3, depolarize=0.05)
    assert noisy.p_hat < 1.0
    # each qubit flips w.p. p/2 under trajectory depolarization in the measured basis
    p = (1 - 0.025) ** 8
    assert abs(noisy.p_hat - p) <= 4 * math.sqrt(p * (1 - p) / 1000)


def test_eve_view_is_transcript_only():
    def nosy(view, rng):
        return view.key

    with pytest.raises(InterfaceError):
        ke_eve_eval(nosy, 4, 1, 0)


@pytest.mark.parametrize("name", sorted(EVES))
def test_eves_bounded(name):
    n, trials = 6, 3000
    est = ke_eve_eval(EVES[name], n, trials, 11)
    assert est.p_hat <= 2.0**-n + 3 * math.sqrt(2.0**-n * (1 - 2.0**-n) / trials) + 1e-12
    assert np.isfinite(est.se)
