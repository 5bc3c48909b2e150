"""BB84-state proofs of quantum memory.

Two variants share one implementation:

* ``bb84-it``: the verifier hands the prover a BB84 register directly.
* ``bb84-rsp``: the register comes from an ideal remote-state-preparation
  functionality that may report ``fail`` with a configurable probability.

In both, the execution phase is one round: the verifier reveals the bases
``theta`` and the prover must return ``x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import (
    RECV,
    InitOutcome,
    PoQM,
    ProtocolParams,
    QuantumHandoff,
    Role,
    Send,
    Transcript,
    Verdict,
    drive_phase,
    encode_json,
    session_streams,
)
from .errors import ExtractionUnavailable, ProtocolViolation
from .qsim import Bb84Description, MAX_QUBITS, QReg, measure_angle_drop, prepare_bb84, random_bits, HADAMARD

# Classical stand-in for the out-of-band quantum delivery. It carries no
# information about (x, theta).
MARKER = encode_json({"envelope": "bb84"})


def n_from_m2(m2: int) -> int:
    """Register size ``ceil(9.1 * m2)``, computed in integers."""
    if m2 < 1:
        raise ValueError("m2 must be at least 1")
    return (91 * m2 + 9) // 10


@dataclass(frozen=True)
class VerifierSecret:
    flag: str
    desc: Bb84Description | None = None

    def __post_init__(self):
        if self.flag not in ("pass", "fail"):
            raise ValueError("flag must be 'pass' or 'fail'")
        if (self.flag == "pass") != (self.desc is not None):
            raise ValueError("a description is present exactly when the flag is 'pass'")

    @property
    def passed(self) -> bool:
        return self.flag == "pass"

    def to_bytes(self) -> bytes:
        body = {"flag": self.flag}
        if self.desc is not None:
            body.update(self.desc.to_json())
        return encode_json(body)

    @classmethod
    def from_bytes(cls, raw: bytes) -> VerifierSecret:
        body = json.loads(raw)
        if body["flag"] == "fail":
            return cls("fail")
        return cls("pass", Bb84Description(body["x"], body["theta"]))


@dataclass
class RspOutcome:
    flag: str
    desc: Bb84Description | None
    delivered: QReg


def ideal_rsp(n: int, fail_prob: float, rng) -> RspOutcome:
    """Ideal preparation: the exact BB84 register, or ``fail`` with probability ``fail_prob``.

    On failure the prover still receives a BB84 register, but of a description
    the verifier never learns.
    """
    if not 0.0 <= fail_prob < 1.0:
        raise ValueError("fail_prob must lie in [0, 1)")
    failed = fail_prob > 0.0 and rng.random() < fail_prob
    desc = Bb84Description.random(n, rng)
    if failed:
        return RspOutcome("fail", None, prepare_bb84(desc))
    return RspOutcome("pass", desc, prepare_bb84(desc))


def execute_prover(reg: QReg, theta: str, rng) -> str:
    """Measure qubit i in the computational (``0``) or Hadamard (``1``) basis."""
    if reg.n != len(theta):
        raise ValueError(f"register has {reg.n} qubits but theta has {len(theta)} bits")
    if set(theta) - {"0", "1"}:
        raise ValueError("theta must be a bit string")
    out = []
    for t in theta:
        bit, reg = measure_angle_drop(reg, 0, HADAMARD if t == "1" else 0.0, rng)
        out.append(str(bit))
    return "".join(out)


def execute_verifier(vs: VerifierSecret, x_prime: str) -> Verdict:
    if not vs.passed:
        return Verdict(False, "state preparation failed")
    if len(x_prime) != vs.desc.n or set(x_prime) - {"0", "1"}:
        return Verdict(False, f"malformed answer of length {len(x_prime)}")
    if x_prime != vs.desc.x:
        return Verdict(False, "answer differs from x")
    return Verdict(True, "")


def extract(vs: VerifierSecret, tau: Transcript, theta_msg: str) -> str:
    """Predict the honest prover's answer: matching-basis measurement returns ``x``."""
    if not vs.passed:
        raise ExtractionUnavailable("no description available after a failed preparation")
    if theta_msg != vs.desc.theta:
        raise ValueError("theta message does not match the session")
    return vs.desc.x


class Bb84Protocol(PoQM):
    """BB84 proof of quantum memory; ``fail_prob=None`` selects the direct-handoff variant."""

    def __init__(self, fail_prob: float | None = None):
        if fail_prob is not None and not 0.0 <= fail_prob < 1.0:
            raise ValueError("fail_prob must lie in [0, 1)")
        self.fail_prob = fail_prob
        self.name = "bb84-it" if fail_prob is None else "bb84-rsp"

    def m1(self, params):
        return params.n

    def prepare(self, n: int, rng) -> tuple[VerifierSecret, QReg, Bb84Description]:
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"n must lie in 1..{MAX_QUBITS}")
        if self.fail_prob is None:
            desc = Bb84Description.random(n, rng)
            return VerifierSecret("pass", desc), prepare_bb84(desc), desc
        out = ideal_rsp(n, self.fail_prob, rng)
        return VerifierSecret(out.flag, out.desc), out.delivered, out.desc

    def verifier_init(self, params, rng, handoff):
        secret, reg, desc = self.prepare(params.n, rng)
        handoff.deliver(reg, desc)
        yield Send(MARKER)
        return secret.to_bytes()

    def prover_init(self, params, rng, handoff):
        msg = yield RECV
        if msg != MARKER:
            raise ProtocolViolation("unexpected initialization message")
        return ("1" * params.n).encode(), handoff.take()

    def verifier_exec(self, v, params, rng):
        secret = VerifierSecret.from_bytes(v)
        theta = secret.desc.theta if secret.passed else random_bits(rng, params.n)
        yield Send(theta.encode())
        answer = yield RECV
        try:
            x_prime = answer.decode("ascii")
        except UnicodeDecodeError:
            return Verdict(False, "answer is not ASCII")
        return execute_verifier(secret, x_prime)

    def prover_exec(self, state, sigma, params, rng):
        theta = (yield RECV).decode("ascii")
        yield Send(execute_prover(sigma, theta, rng).encode())


class Bb84ITProtocol(Bb84Protocol):
    def __init__(self):
        super().__init__(None)


class Bb84RspProtocol(Bb84Protocol):
    def __init__(self, fail_prob: float = 0.0):
        super().__init__(fail_prob)


def _honest_init(proto: Bb84Protocol, n: int, rng):
    v_rng, p_rng, _ = session_streams(rng)
    params = ProtocolParams(n)
    handoff = QuantumHandoff()
    t = Transcript()
    v, (state, sigma) = drive_phase(
        proto.verifier_init(params, v_rng, handoff), proto.prover_init(params, p_rng, handoff), t, "init"
    )
    return v, InitOutcome(v, state, sigma, t)


def it_init(n: int, rng) -> InitOutcome:
    return _honest_init(Bb84ITProtocol(), n, rng)[1]


def ideal_rsp_init(n: int, fail_prob: float, rng) -> tuple[VerifierSecret, InitOutcome]:
    v, outcome = _honest_init(Bb84RspProtocol(fail_prob), n, rng)
    return VerifierSecret.from_bytes(v), outcome


def theta_message(tau: Transcript) -> str:
    """The bases revealed in an execution transcript."""
    msgs = tau.messages(Role.VERIFIER, "exec")
    if not msgs:
        raise ValueError("transcript holds no execution challenge")
    return msgs[0].decode("ascii")
