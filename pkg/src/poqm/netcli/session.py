"""Networked sessions: verifier and prover as separate processes over TCP.

Both ends drive the same phase generators used in-process. Verifier messages
travel as INIT_MSG in the first phase and CHALLENGE in the second; prover
messages as INIT_MSG and ANSWER. The handed register crosses as a
simulation-only QSTATE_ENVELOPE before the first INIT_MSG.
"""

from __future__ import annotations

import os
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bb84 import Bb84ITProtocol, Bb84RspProtocol
from ..core import RECV, HoldSpec, ProtocolParams, QuantumHandoff, Send, Verdict, apply_hold, session_streams
from ..errors import FrameError, ProtocolViolation
from ..puzzle import ToyPuzzle, compile_puzzle_to_poqm
from ..qsim import Bb84Description, QReg, prepare_bb84
from .report import Report
from .wire import MAX_PAYLOAD, Frame, FrameType, encode_frame, read_frame

PROTOCOLS = ("bb84-it", "bb84-rsp", "puzzle")


def make_protocol(name: str, n: int, k: int | None):
    if name == "bb84-it":
        return Bb84ITProtocol()
    if name == "bb84-rsp":
        return Bb84RspProtocol(0.0)
    if name == "puzzle":
        return compile_puzzle_to_poqm(ToyPuzzle(n, k or 1))
    raise ValueError(f"unknown protocol {name!r}; choose from {', '.join(PROTOCOLS)}")


@dataclass
class SessionConfig:
    protocol: str = "bb84-it"
    n: int = 8
    k: int | None = None
    seed: int = 0
    hold_ms: int = 0
    depolarize: float = 0.0
    host: str = "127.0.0.1"
    port: int = 0
    port_file: str | None = None
    sessions: int = 1
    session_index: int = 0
    transcript: str | None = None
    timeout: float = 30.0

    def hello(self) -> dict:
        return {"protocol": self.protocol, "params": {"n": self.n, "k": self.k}}


class PeerError(Exception):
    """The peer sent an ERROR frame or broke the state machine."""


def _data(payload: bytes) -> dict:
    try:
        return {"data": payload.decode("utf-8")}
    except UnicodeDecodeError:
        return {"hex": payload.hex()}


def _bytes(frame: Frame) -> bytes:
    p = frame.payload
    if isinstance(p.get("data"), str):
        return p["data"].encode("utf-8")
    if isinstance(p.get("hex"), str):
        try:
            return bytes.fromhex(p["hex"])
        except ValueError:
            raise ProtocolViolation("bad hex payload") from None
    raise ProtocolViolation(f"{frame.type.name} frame carries no data")


def _envelope(reg: QReg, desc: Bb84Description | None) -> dict:
    if desc is not None:
        return {"x": desc.x, "theta": desc.theta}
    return {"n": reg.n, "amps": [[float(a.real), float(a.imag)] for a in reg.amps]}


def _from_envelope(p: dict) -> QReg:
    try:
        if "x" in p:
            return prepare_bb84(Bb84Description(p["x"], p["theta"]))
        amps = np.array([complex(re, im) for re, im in p["amps"]])
        return QReg(int(p["n"]), amps)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed state envelope: {exc}") from None


class _SocketReader:
    """Unbuffered exact reads, so ``select`` on the socket sees every pending byte."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def read(self, size: int) -> bytes:
        buf = bytearray()
        while len(buf) < size:
            chunk = self.sock.recv(size - len(buf))
            if not chunk:
                break
            buf += chunk
        return bytes(buf)


class Channel:
    """A framed socket that logs every frame, in either direction, in order."""

    def __init__(self, sock: socket.socket, timeout: float):
        self.sock = sock
        sock.settimeout(timeout)
        self.rfile = _SocketReader(sock)
        self.log = bytearray()
        self.events: list[tuple[float, str, str]] = []

    def send(self, ftype: FrameType, payload: dict):
        raw = encode_frame(ftype, payload)
        self.sock.sendall(raw)
        self.log += raw
        self.events.append((time.monotonic(), "out", ftype.name))

    def recv(self, *expected: FrameType) -> Frame:
        frame = read_frame(self.rfile)
        if frame is None:
            raise PeerError("connection closed")
        self.log += encode_frame(frame.type, frame.payload)
        self.events.append((time.monotonic(), "in", frame.type.name))
        if frame.type is FrameType.ERROR:
            raise PeerError(str(frame.payload.get("error", "peer error")))
        if expected and frame.type not in expected:
            raise ProtocolViolation(f"expected {'/'.join(t.name for t in expected)}, got {frame.type.name}")
        return frame

    def pending(self, wait: float) -> bool:
        """True if the peer has data ready within ``wait`` seconds."""
        ready, _, _ = select.select([self.sock], [], [], max(wait, 0.0))
        return bool(ready)

    def error(self, message: str):
        try:
            self.send(FrameType.ERROR, {"error": message})
        except OSError:
            pass

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _drive(gen, chan: Channel, out_type: FrameType, in_type: FrameType, before_send=None):
    """Run a local phase generator against the remote party; return its output."""
    act = next(gen)
    while True:
        if isinstance(act, Send):
            if before_send is not None:
                before_send()
            chan.send(out_type, _data(act.payload))
            value = None
        elif act is RECV:
            value = _bytes(chan.recv(in_type))
        else:
            raise TypeError(f"party yielded {act!r}")
        try:
            act = gen.send(value)
        except StopIteration as stop:
            return stop.value


def write_atomic(path: str | os.PathLike, data: bytes):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _transcript_path(base: str | None, index: int, total: int) -> Path | None:
    if base is None:
        return None
    if total == 1:
        return Path(base)
    p = Path(base)
    return p.with_name(f"{p.stem}.{index}{p.suffix}")


# --------------------------------------------------------------------------
# verifier


@dataclass
class SessionResult:
    index: int
    verdict: Verdict
    duration: float
    hold_elapsed: float
    transcript: bytes = field(repr=False, default=b"")

    def row(self) -> dict:
        return {
            "session": self.index,
            "accepted": self.verdict.accepted,
            "detail": self.verdict.detail,
            "duration_s": round(self.duration, 4),
            "hold_s": round(self.hold_elapsed, 4),
        }


def verifier_session(chan: Channel, cfg: SessionConfig, index: int) -> SessionResult:
    start = time.monotonic()
    hold_elapsed = 0.0
    try:
        hello = chan.recv(FrameType.HELLO).payload
        if hello != cfg.hello():
            chan.error(f"parameter mismatch: verifier runs {cfg.hello()}")
            return SessionResult(index, Verdict(False, "parameter mismatch"), time.monotonic() - start, 0.0, bytes(chan.log))
        proto = make_protocol(cfg.protocol, cfg.n, cfg.k)
        params = ProtocolParams(cfg.n, cfg.k)
        v_rng, _, _ = session_streams(np.random.default_rng([cfg.seed, index]))
        handoff = QuantumHandoff()
        shipped = False

        def ship():
            nonlocal shipped
            if not shipped and handoff.holding:
                chan.send(FrameType.QSTATE_ENVELOPE, _envelope(handoff.peek(), handoff.description))
            shipped = True

        v = _drive(proto.verifier_init(params, v_rng, handoff), chan, FrameType.INIT_MSG, FrameType.INIT_MSG, ship)
        ship()
        chan.send(FrameType.PHASE_DONE, {"phase": "init"})
        hold_start = time.monotonic()
        deadline = hold_start + cfg.hold_ms / 1000
        while (left := deadline - time.monotonic()) > 0:
            if chan.pending(left):
                chan.error("frame received during the hold period")
                raise ProtocolViolation("prover sent a frame before the challenge")
        hold_elapsed = time.monotonic() - hold_start
        verdict = _drive(proto.verifier_exec(v, params, v_rng), chan, FrameType.CHALLENGE, FrameType.ANSWER)
    except (ProtocolViolation, FrameError, PeerError) as exc:
        chan.error(str(exc))
        verdict = Verdict(False, f"protocol violation: {exc}")
    except (socket.timeout, TimeoutError):
        verdict = Verdict(False, "timeout")
    except OSError as exc:
        verdict = Verdict(False, f"connection error: {exc}")
    else:
        body = {"accepted": verdict.accepted}
        if verdict.detail:
            body["detail"] = verdict.detail
        try:
            chan.send(FrameType.VERDICT, body)
        except OSError as exc:
            verdict = Verdict(False, f"connection error: {exc}")
    return SessionResult(index, verdict, time.monotonic() - start, hold_elapsed, bytes(chan.log))


def serve_verifier(cfg: SessionConfig) -> Report:
    """Accept ``cfg.sessions`` connections, serve them concurrently and report."""
    t0 = time.monotonic()
    listener = socket.create_server((cfg.host, cfg.port))
    port = listener.getsockname()[1]
    if cfg.port_file:
        write_atomic(cfg.port_file, f"{port}\n".encode())
    results: list[SessionResult | None] = [None] * cfg.sessions
    threads = []
    listener.settimeout(cfg.timeout)
    try:
        for i in range(cfg.sessions):
            try:
                conn, _ = listener.accept()
            except (socket.timeout, TimeoutError):
                results[i] = SessionResult(i, Verdict(False, "timeout waiting for a prover"), cfg.timeout, 0.0)
                continue

            def work(i=i, conn=conn):
                chan = Channel(conn, cfg.timeout)
                try:
                    results[i] = verifier_session(chan, cfg, i)
                finally:
                    chan.close()

            th = threading.Thread(target=work, daemon=True)
            th.start()
            threads.append(th)
        for th in threads:
            th.join()
    finally:
        listener.close()
    for r in results:
        path = _transcript_path(cfg.transcript, r.index, cfg.sessions)
        if path is not None:
            write_atomic(path, r.transcript)
    hold_s = cfg.hold_ms / 1000
    return Report(
        experiment="verifier",
        params={"protocol": cfg.protocol, "n": cfg.n, "k": cfg.k, "hold_ms": cfg.hold_ms, "sessions": cfg.sessions, "port": port},
        seed=cfg.seed,
        estimates={"accepted": sum(r.verdict.accepted for r in results)},
        gates={
            "accepted": all(r.verdict.accepted for r in results),
            "hold_enforced": all(r.hold_elapsed >= hold_s for r in results if r.verdict.accepted),
        },
        timings={"wall_s": round(time.monotonic() - t0, 4), "session_s": [round(r.duration, 4) for r in results]},
        rows=[r.row() for r in results],
    )


# --------------------------------------------------------------------------
# prover


def prover_session(chan: Channel, cfg: SessionConfig) -> Verdict:
    proto = make_protocol(cfg.protocol, cfg.n, cfg.k)
    params = ProtocolParams(cfg.n, cfg.k)
    _, p_rng, h_rng = session_streams(np.random.default_rng([cfg.seed, cfg.session_index]))
    handoff = QuantumHandoff()
    chan.send(FrameType.HELLO, cfg.hello())

    first = chan.recv(FrameType.QSTATE_ENVELOPE, FrameType.INIT_MSG)
    if first.type is FrameType.QSTATE_ENVELOPE:
        env = dict(first.payload)
        handoff.deliver(_from_envelope(env), Bb84Description(env["x"], env["theta"]) if "x" in env else None)
        pushed = None
    else:
        pushed = first

    def init_gen():
        gen = proto.prover_init(params, p_rng, handoff)
        act = next(gen)
        if pushed is not None:
            if act is not RECV:
                raise ProtocolViolation("verifier spoke first, prover expected to send")
            act = gen.send(_bytes(pushed))
        while True:
            value = yield act
            try:
                act = gen.send(value)
            except StopIteration as stop:
                return stop.value

    state, sigma = _drive(init_gen(), chan, FrameType.INIT_MSG, FrameType.INIT_MSG)
    chan.recv(FrameType.PHASE_DONE)
    sigma = apply_hold(sigma, HoldSpec(0, cfg.depolarize), h_rng)
    _drive(proto.prover_exec(state, sigma, params, p_rng), chan, FrameType.ANSWER, FrameType.CHALLENGE)
    body = chan.recv(FrameType.VERDICT).payload
    return Verdict(bool(body.get("accepted")), str(body.get("detail", "")))


def run_prover(cfg: SessionConfig) -> Report:
    t0 = time.monotonic()
    sock = socket.create_connection((cfg.host, cfg.port), timeout=cfg.timeout)
    chan = Channel(sock, cfg.timeout)
    try:
        verdict = prover_session(chan, cfg)
    except (ProtocolViolation, FrameError) as exc:
        chan.error(str(exc))
        verdict = Verdict(False, f"protocol violation: {exc}")
    except PeerError as exc:
        verdict = Verdict(False, f"verifier error: {exc}")
    except (socket.timeout, TimeoutError):
        verdict = Verdict(False, "timeout")
    finally:
        chan.close()
    if cfg.transcript:
        write_atomic(cfg.transcript, bytes(chan.log))
    wall = time.monotonic() - t0
    return Report(
        experiment="prover",
        params={"protocol": cfg.protocol, "n": cfg.n, "k": cfg.k, "depolarize": cfg.depolarize, "port": cfg.port},
        seed=cfg.seed,
        estimates={"accepted": int(verdict.accepted)},
        gates={"accepted": verdict.accepted},
        timings={"wall_s": round(wall, 4)},
        notes={"detail": verdict.detail} if verdict.detail else {},
    )


__all__ = [
    "MAX_PAYLOAD",
    "PROTOCOLS",
    "SessionConfig",
    "SessionResult",
    "make_protocol",
    "run_prover",
    "serve_verifier",
]
