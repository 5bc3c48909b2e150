import socket
import threading
import time

import pytest

from poqm.netcli.session import (
    Channel,
    SessionConfig,
    make_protocol,
    run_prover,
    serve_verifier,
    write_atomic,
)
from poqm.netcli.wire import FrameType, decode_frame, read_frame


def start_verifier(tmp_path, **kw):
    port_file = tmp_path / "port"
    cfg = SessionConfig(port_file=str(port_file), timeout=10.0, **kw)
    box = {}
    th = threading.Thread(target=lambda: box.setdefault("report", serve_verifier(cfg)), daemon=True)
    th.start()
    deadline = time.monotonic() + 5
    while not port_file.exists():
        assert time.monotonic() < deadline, "verifier did not publish its port"
        time.sleep(0.01)
    port = int(port_file.read_text())

    def finish():
        th.join(15)
        assert not th.is_alive()
        return box["report"]

    return port, finish


def frames(log: bytes):
    out, pos = [], 0
    while pos < len(log):
        length = int.from_bytes(log[pos:pos + 4], "big")
        out.append(decode_frame(log[pos:pos + 5 + length]))
        pos += 5 + length
    return out


def connect(port):
    return Channel(socket.create_connection(("127.0.0.1", port), timeout=5), 5.0)


@pytest.mark.parametrize("protocol,n,k", [("bb84-it", 8, None), ("bb84-rsp", 10, None), ("puzzle", 6, 2)])
def test_honest_session_accepts(tmp_path, protocol, n, k):
    port, finish = start_verifier(tmp_path, protocol=protocol, n=n, k=k, seed=3, transcript=str(tmp_path / "v.log"))
    prover = run_prover(SessionConfig(protocol=protocol, n=n, k=k, seed=3, port=port, timeout=10.0,
                                      transcript=str(tmp_path / "p.log")))
    report = finish()
    assert prover.passed and report.passed
    v_log, p_log = (tmp_path / "v.log").read_bytes(), (tmp_path / "p.log").read_bytes()
    assert v_log == p_log
    types = [f.type for f in frames(v_log)]
    assert types[0] is FrameType.HELLO and types[1] is FrameType.QSTATE_ENVELOPE
    assert types[-1] is FrameType.VERDICT and FrameType.PHASE_DONE in types
    assert types.index(FrameType.PHASE_DONE) < types.index(FrameType.CHALLENGE)


def test_transcripts_reproducible(tmp_path):
    logs = []
    for run in range(2):
        d = tmp_path / str(run)
        d.mkdir()
        port, finish = start_verifier(d, n=6, seed=11, transcript=str(d / "v.log"))
        run_prover(SessionConfig(n=6, seed=11, port=port, timeout=10.0))
        finish()
        logs.append((d / "v.log").read_bytes())
    assert logs[0] == logs[1]


def test_hold_is_enforced(tmp_path):
    port, finish = start_verifier(tmp_path, n=4, hold_ms=300)
    t0 = time.monotonic()
    assert run_prover(SessionConfig(n=4, port=port, timeout=10.0)).passed
    assert time.monotonic() - t0 >= 0.3
    report = finish()
    assert report.gates["hold_enforced"] and report.rows[0]["hold_s"] >= 0.3


def test_parameter_mismatch_gets_error(tmp_path):
    port, finish = start_verifier(tmp_path, n=8)
    prover = run_prover(SessionConfig(n=6, port=port, timeout=10.0))
    report = finish()
    assert not prover.passed and "verifier error" in prover.notes["detail"]
    assert not report.passed and report.rows[0]["detail"] == "parameter mismatch"


def test_early_answer_gets_error(tmp_path):
    port, finish = start_verifier(tmp_path, n=2, hold_ms=1000)
    chan = connect(port)
    chan.send(FrameType.HELLO, {"protocol": "bb84-it", "params": {"n": 2, "k": None}})
    assert chan.recv().type is FrameType.QSTATE_ENVELOPE
    assert chan.recv().type is FrameType.INIT_MSG
    assert chan.recv().type is FrameType.PHASE_DONE
    chan.send(FrameType.ANSWER, {"data": "00"})
    reply = read_frame(chan.rfile)
    chan.close()
    report = finish()
    assert reply.type is FrameType.ERROR
    assert not report.passed and "protocol violation" in report.rows[0]["detail"]


def test_wrong_frame_type_is_bottom(tmp_path):
    port, finish = start_verifier(tmp_path, n=2)
    chan = connect(port)
    chan.send(FrameType.ANSWER, {"data": "00"})
    reply = read_frame(chan.rfile)
    chan.close()
    assert reply.type is FrameType.ERROR
    assert not finish().passed


def test_two_concurrent_sessions(tmp_path):
    port, finish = start_verifier(tmp_path, n=6, sessions=2, hold_ms=400, transcript=str(tmp_path / "v.log"))
    reports = [None, None]

    def go(i):
        reports[i] = run_prover(SessionConfig(n=6, port=port, session_index=i, timeout=10.0))

    t0 = time.monotonic()
    ths = [threading.Thread(target=go, args=(i,)) for i in range(2)]
    for th in ths:
        th.start()
    for th in ths:
        th.join()
    wall = time.monotonic() - t0
    report = finish()
    assert all(r.passed for r in reports) and report.passed
    assert wall < 0.8, "sessions should overlap, not run back to back"
    assert (tmp_path / "v.0.log").exists() and (tmp_path / "v.1.log").exists()


def test_heavy_depolarizing_rejects(tmp_path):
    port, finish = start_verifier(tmp_path, n=16, seed=1)
    prover = run_prover(SessionConfig(n=16, seed=1, depolarize=1.0, port=port, timeout=10.0))
    finish()
    assert not prover.passed


def test_make_protocol_and_atomic_write(tmp_path):
    assert make_protocol("puzzle", 4, 2).puzzle.k == 2
    with pytest.raises(ValueError):
        make_protocol("other", 4, None)
    target = tmp_path / "f"
    write_atomic(target, b"abc")
    write_atomic(target, b"de")
    assert target.read_bytes() == b"de" and sorted(p.name for p in tmp_path.iterdir()) == ["f"]
