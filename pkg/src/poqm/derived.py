"""Constructions built on the BB84 protocol: a state-puzzle sampler and a classical-channel key exchange."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .bb84 import Bb84RspProtocol, VerifierSecret, execute_prover, extract
from .core import ProtocolParams, QuantumHandoff, Role, Transcript, apply_hold, HoldSpec, as_rng, drive_phase, encode_json, session_streams
from .errors import ProtocolViolation
from .games import Estimate
from .puzzle import PartyView
from .qsim import BREIDBART, HADAMARD, Bb84Description, QReg, fidelity, product_state


def _honest_init(n, fail_prob, rng):
    proto = Bb84RspProtocol(fail_prob)
    v_rng, p_rng, h_rng = session_streams(rng)
    params = ProtocolParams(n)
    handoff = QuantumHandoff()
    tau = Transcript()
    v, (state, sigma) = drive_phase(
        proto.verifier_init(params, v_rng, handoff), proto.prover_init(params, p_rng, handoff), tau, "init"
    )
    return VerifierSecret.from_bytes(v), state, sigma, tau, v_rng, p_rng, h_rng


# --------------------------------------------------------------------------
# state puzzles


@dataclass(frozen=True)
class StatePuzzInstance:
    s: bytes
    target: Bb84Description
    register: QReg


def statepuzz_samp(n: int, rng) -> StatePuzzInstance:
    """Run the protocol's initialization; the puzzle is the prover's classical view, the answer its state."""
    vs, state, sigma, tau, *_ = _honest_init(n, 0.0, as_rng(rng))
    s = encode_json({"state": state.decode(), "tau": tau.to_bytes().hex()})
    return StatePuzzInstance(s, vs.desc, sigma)


def _bernoulli_mean(values, rng) -> Estimate:
    values = np.asarray(values, dtype=float)
    hits = int(np.sum(rng.random(values.size) < values))
    return Estimate.from_counts(hits, values.size)


def statepuzz_attack_eval(attacker, n: int, trials: int, seed) -> Estimate:
    """Mean fidelity of ``attacker(view)`` with the answer state.

    The attacker sees a view holding only ``s``. Each trial ends with a
    projection onto the answer state, so the estimate is a binomial
    proportion whose mean is the average fidelity.
    """
    rng = as_rng(seed)
    fids = []
    for _ in range(trials):
        inst = statepuzz_samp(n, rng)
        out = attacker(PartyView(s=inst.s), rng)
        if not isinstance(out, QReg) or out.n != n:
            raise ValueError(f"attacker must return a {n}-qubit register")
        fids.append(fidelity(out, inst.target))
    return _bernoulli_mean(fids, rng)


def zeros_attacker(view, rng) -> QReg:
    n = len(_state_of(view))
    return product_state([0.0] * n)


def plus_attacker(view, rng) -> QReg:
    return product_state([HADAMARD] * len(_state_of(view)))


def breidbart_attacker(view, rng) -> QReg:
    return product_state([BREIDBART] * len(_state_of(view)))


def hashed_product_attacker(view, rng) -> QReg:
    """Product state whose angles are derived deterministically from ``s``."""
    n = len(_state_of(view))
    digest = hashlib.sha256(view.s).digest()
    return product_state([digest[i % len(digest)] / 255 * math.pi for i in range(n)])


def haar_attacker(view, rng) -> QReg:
    n = len(_state_of(view))
    z = rng.standard_normal(1 << n) + 1j * rng.standard_normal(1 << n)
    return QReg(n, z / np.linalg.norm(z))


def _state_of(view) -> str:
    return json.loads(view.s)["state"]


STATEPUZZ_ATTACKERS = {
    "zeros": zeros_attacker,
    "plus": plus_attacker,
    "breidbart": breidbart_attacker,
    "hashed-product": hashed_product_attacker,
    "haar": haar_attacker,
}


@dataclass(frozen=True)
class ReductionReport:
    fidelity: Estimate
    acceptance: Estimate
    ok: bool


def reduction_check(produce, n: int, trials: int, seed, slack: float = 3.0) -> ReductionReport:
    """Feed a produced register to the protocol's honest second step.

    ``produce(instance) -> QReg`` runs with harness access, so the honest
    register can be wired in directly.
    """
    rng = as_rng(seed)
    fids, acc = [], 0
    for _ in range(trials):
        inst = statepuzz_samp(n, rng)
        reg = produce(inst)
        fids.append(fidelity(reg, inst.target))
        acc += execute_prover(reg, inst.target.theta, rng) == inst.target.x
    f = _bernoulli_mean(fids, rng)
    a = Estimate.from_counts(acc, trials)
    return ReductionReport(f, a, a.p_hat >= f.p_hat - slack * math.hypot(a.se, f.se))


# --------------------------------------------------------------------------
# key exchange


@dataclass(frozen=True)
class KeOutcome:
    a: str
    b: str
    tau: Transcript
    retries: int = 0

    @property
    def agree(self) -> bool:
        return self.a == self.b


def ke_run(n: int, rng, depolarize: float = 0.0, fail_prob: float = 0.0, max_retries: int = 64) -> KeOutcome:
    """Alice plays the prover and keeps her answer as key; Bob plays the verifier and extracts."""
    rng = as_rng(rng)
    hold = HoldSpec(0, depolarize) if depolarize else None
    for retries in range(max_retries + 1):
        vs, state, sigma, tau, v_rng, p_rng, h_rng = _honest_init(n, fail_prob, rng)
        if vs.passed:
            break
    else:
        raise ProtocolViolation("preparation kept failing")
    sigma = apply_hold(sigma, hold, h_rng)
    theta = vs.desc.theta
    tau.append("exec", Role.VERIFIER, theta.encode())
    a = execute_prover(sigma, theta, p_rng)
    b = extract(vs, tau, theta)
    return KeOutcome(a, b, tau, retries)


def ke_agreement(n: int, trials: int, seed, depolarize: float = 0.0) -> Estimate:
    rng = as_rng(seed)
    hits = sum(ke_run(n, rng, depolarize).agree for _ in range(trials))
    return Estimate.from_counts(hits, trials)


def ke_eve_eval(eve, n: int, trials: int, seed) -> Estimate:
    """Success of ``eve(view) -> guess`` at Alice's key; the view holds only the transcript."""
    rng = as_rng(seed)
    hits = 0
    for _ in range(trials):
        out = ke_run(n, rng)
        guess = eve(PartyView(tau=out.tau, n=n), rng)
        hits += guess == out.a
    return Estimate.from_counts(hits, trials, bound=2.0 ** (-n))


def _theta_of(view) -> str:
    return view.tau.messages(Role.VERIFIER, "exec")[0].decode()


EVES = {
    "zeros": lambda view, rng: "0" * view.n,
    "ones": lambda view, rng: "1" * view.n,
    "copy-theta": lambda view, rng: _theta_of(view),
    "hash": lambda view, rng: format(int.from_bytes(hashlib.sha256(view.tau.to_bytes()).digest()[:8], "big") % (1 << view.n), f"0{view.n}b"),
    "random": lambda view, rng: "".join(str(b) for b in rng.integers(0, 2, size=view.n)),
}
