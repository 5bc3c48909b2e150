"""Two-phase protocol machinery: parties, transcripts, verdicts and runners.

A party's phase is a generator. It yields :class:`Send` to put a message on
the classical channel or :data:`RECV` to wait for one, and returns its phase
output. :func:`drive_phase` interleaves a verifier and a prover generator,
records every message and turns any out-of-turn behaviour into a
:class:`~poqm.errors.ProtocolViolation`. The networked mode drives the very
same generators over sockets.

Quantum data never crosses the classical channel. A :class:`QuantumHandoff`
stands for the out-of-band delivery of a register (a trusted functionality in
this artifact).
"""

from __future__ import annotations

import abc
import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetViolation, ProtocolViolation
from .qsim import Bb84Description, QReg, depolarize


@dataclass(frozen=True)
class HoldSpec:
    """Hold period between phases: wall-clock delay (networked mode only) and per-qubit depolarisation."""

    duration_ms: int = 0
    depolarize: float = 0.0

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ValueError("hold duration must be non-negative")
        if not 0.0 <= self.depolarize <= 1.0:
            raise ValueError("depolarisation probability must lie in [0, 1]")


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    k: int | None = None
    hold: HoldSpec | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")


class Role(str, enum.Enum):
    VERIFIER = "V"
    PROVER = "P"


@dataclass(frozen=True)
class Message:
    phase: str
    sender: Role
    payload: bytes


class Transcript:
    """Append-only message log; senders alternate within a phase."""

    def __init__(self, entries=()):
        self._entries: list[Message] = []
        for m in entries:
            self.append(m.phase, m.sender, m.payload)

    def append(self, phase: str, sender: Role, payload: bytes):
        if not isinstance(payload, bytes):
            raise TypeError("messages are byte strings")
        if self._entries:
            last = self._entries[-1]
            if last.phase == phase and last.sender == sender:
                raise ProtocolViolation(f"{sender.value} sent twice in a row in phase {phase!r}")
        self._entries.append(Message(phase, Role(sender), payload))

    def concat(self, other: Transcript) -> Transcript:
        return Transcript(list(self) + list(other))

    def messages(self, sender: Role | None = None, phase: str | None = None) -> list[bytes]:
        return [
            m.payload
            for m in self._entries
            if (sender is None or m.sender == sender) and (phase is None or m.phase == phase)
        ]

    def to_bytes(self) -> bytes:
        out = bytearray()
        for m in self._entries:
            ph = m.phase.encode()
            out += struct.pack(">B", len(ph)) + ph + m.sender.value.encode()
            out += struct.pack(">I", len(m.payload)) + m.payload
        return bytes(out)

    def to_json(self) -> list:
        return [
            {"phase": m.phase, "sender": m.sender.value, "payload": m.payload.decode("utf-8", "replace")}
            for m in self._entries
        ]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return isinstance(other, Transcript) and self._entries == other._entries

    def __repr__(self):
        return f"Transcript({len(self)} messages)"


@dataclass
class InitOutcome:
    verifier_out: bytes
    prover_classical: bytes
    prover_quantum: QReg
    transcript: Transcript


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    detail: str = ""

    def __bool__(self):
        return self.accepted


@dataclass(frozen=True)
class Send:
    payload: bytes


class _Recv:
    def __repr__(self):
        return "RECV"


RECV = _Recv()


class QuantumHandoff:
    """Out-of-band delivery of one register from a trusted preparer to the prover.

    ``description`` is kept so the networked mode can ship the classical
    description in a simulation-only envelope.
    """

    def __init__(self):
        self._reg: QReg | None = None
        self.description: Bb84Description | None = None

    def deliver(self, reg: QReg, description: Bb84Description | None = None):
        if self._reg is not None:
            raise ProtocolViolation("a register is already waiting in the handoff")
        self._reg = reg
        self.description = description

    @property
    def holding(self) -> bool:
        return self._reg is not None

    def peek(self) -> QReg:
        if self._reg is None:
            raise ProtocolViolation("no register was delivered")
        return self._reg

    def take(self) -> QReg:
        if self._reg is None:
            raise ProtocolViolation("no register was delivered")
        reg, self._reg = self._reg, None
        return reg


class PoQM(abc.ABC):
    """A proof of quantum memory as four phase coroutines."""

    name = "poqm"

    @abc.abstractmethod
    def m1(self, params: ProtocolParams) -> int:
        """Qubits the honest prover keeps across the phase boundary."""

    @abc.abstractmethod
    def verifier_init(self, params, rng, handoff):
        """Generator returning the verifier's secret output ``v`` (bytes)."""

    @abc.abstractmethod
    def prover_init(self, params, rng, handoff):
        """Generator returning ``(state, sigma)``."""

    @abc.abstractmethod
    def verifier_exec(self, v: bytes, params, rng):
        """Generator returning a :class:`Verdict`."""

    @abc.abstractmethod
    def prover_exec(self, state: bytes, sigma: QReg, params, rng):
        """Generator; the honest prover outputs nothing."""


class Prover(abc.ABC):
    """Prover side of a session. ``m2`` is ``None`` for the honest prover."""

    m2: int | None = None

    @abc.abstractmethod
    def init_phase(self, proto: PoQM, params, rng, handoff):
        """Generator returning ``(state, sigma)``: the classical and quantum memory kept."""

    @abc.abstractmethod
    def exec_phase(self, proto: PoQM, state: bytes, sigma: QReg, params, rng):
        ...


class HonestProver(Prover):
    def init_phase(self, proto, params, rng, handoff):
        return (yield from proto.prover_init(params, rng, handoff))

    def exec_phase(self, proto, state, sigma, params, rng):
        return (yield from proto.prover_exec(state, sigma, params, rng))


def _step(gen, value=None, first=False):
    try:
        act = next(gen) if first else gen.send(value)
    except StopIteration as stop:
        return None, stop.value, True
    if not (isinstance(act, Send) or act is RECV):
        raise TypeError(f"party yielded {act!r}; expected Send(...) or RECV")
    return act, None, False


def drive_phase(verifier, prover, transcript: Transcript, phase: str):
    """Run one phase to completion and return ``(verifier_output, prover_output)``."""
    v_act, v_out, v_done = _step(verifier, first=True)
    p_act, p_out, p_done = _step(prover, first=True)
    while True:
        if not v_done and isinstance(v_act, Send):
            if p_done:
                raise ProtocolViolation("prover left the phase while the verifier was sending")
            if isinstance(p_act, Send):
                raise ProtocolViolation("prover sent out of turn")
            msg = v_act.payload
            transcript.append(phase, Role.VERIFIER, msg)
            v_act, v_out, v_done = _step(verifier)
            p_act, p_out, p_done = _step(prover, msg)
        elif not v_done:
            if p_done:
                raise ProtocolViolation("prover sent too few messages")
            if p_act is RECV:
                raise ProtocolViolation("both parties are waiting")
            msg = p_act.payload
            if not isinstance(msg, bytes):
                raise ProtocolViolation("prover message is not a byte string")
            transcript.append(phase, Role.PROVER, msg)
            p_act, p_out, p_done = _step(prover)
            v_act, v_out, v_done = _step(verifier, msg)
        else:
            if p_done:
                return v_out, p_out
            if isinstance(p_act, Send):
                raise ProtocolViolation("prover sent an extra message")
            raise ProtocolViolation("prover expects messages the verifier never sends")


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def session_streams(rng):
    """Independent verifier, prover and hold-noise streams derived from one source."""
    v, p, h = as_rng(rng).spawn(3)
    return v, p, h


def _check_memory(proto, prover, params, sigma):
    if not isinstance(sigma, QReg):
        raise BudgetViolation("prover memory must be a QReg (use an empty register for m2=0)")
    if prover.m2 is None:
        if sigma.n != proto.m1(params):
            raise BudgetViolation(f"honest prover kept {sigma.n} qubits, protocol declares m1={proto.m1(params)}")
    elif sigma.n != prover.m2:
        raise BudgetViolation(f"adversary declared m2={prover.m2} but carried {sigma.n} qubits")


def apply_hold(sigma: QReg, hold: HoldSpec | None, rng) -> QReg:
    if hold is None or hold.depolarize == 0.0:
        return sigma
    for i in range(sigma.n):
        sigma = depolarize(sigma, i, hold.depolarize, rng)
    return sigma


def run_poqm(proto: PoQM, prover: Prover, params: ProtocolParams, rng):
    """Execute both phases; return ``(verdict, init_transcript, exec_transcript)``.

    Interaction errors become a rejecting verdict with a diagnostic; budget
    violations raise, since they indicate a broken experiment.
    """
    v_rng, p_rng, h_rng = session_streams(rng)
    t_init, t_exec = Transcript(), Transcript()
    handoff = QuantumHandoff()
    try:
        v, (state, sigma) = drive_phase(
            proto.verifier_init(params, v_rng, handoff),
            prover.init_phase(proto, params, p_rng, handoff),
            t_init,
            "init",
        )
    except ProtocolViolation as exc:
        return Verdict(False, f"protocol violation: {exc}"), t_init, t_exec
    _check_memory(proto, prover, params, sigma)
    sigma = apply_hold(sigma, params.hold, h_rng)
    try:
        verdict, _ = drive_phase(
            proto.verifier_exec(v, params, v_rng),
            prover.exec_phase(proto, state, sigma, params, p_rng),
            t_exec,
            "exec",
        )
    except ProtocolViolation as exc:
        return Verdict(False, f"protocol violation: {exc}"), t_init, t_exec
    return verdict, t_init, t_exec


@dataclass
class PoQ:
    """Single interaction whose verifier runs both phases back to back."""

    proto: PoQM
    name: str = field(init=False)

    def __post_init__(self):
        self.name = f"poq({self.proto.name})"

    def verifier(self, params, rng, handoff):
        v = yield from self.proto.verifier_init(params, rng, handoff)
        return (yield from self.proto.verifier_exec(v, params, rng))

    def run(self, prover: Prover, params: ProtocolParams, rng):
        """Return ``(verdict, transcript)``; the transcript is init followed by exec."""
        if prover.m2 not in (None, 0):
            raise BudgetViolation("a PoQ prover is classical between its steps (m2 must be 0)")
        params = ProtocolParams(params.n, params.k, None)
        verdict, t_init, t_exec = run_poqm(self.proto, prover, params, rng)
        return verdict, t_init.concat(t_exec)


def poqm_to_poq(proto: PoQM) -> PoQ:
    return PoQ(proto)


def encode_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
