"""1-of-2^k puzzles, a toy instantiation, the PoQM compiler and the three-party game.

The toy puzzle hands a BB84 register to the solver out of band. Its qubits are
split into ``k`` contiguous blocks; challenge bit ``ch_j`` asks for block ``j``
to be measured in the computational (0) or Hadamard (1) basis, and the
verifier checks the positions whose basis matches.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass

import numpy as np

from .adversary import Workspace, release
from .core import RECV, PoQM, Prover, Send, Verdict, encode_json
from .errors import BudgetViolation, HarnessError, InterfaceError
from .qsim import HADAMARD, Bb84Description, QReg, measure_angle_drop, prepare_bb84, random_bits


def block_layout(n: int, k: int) -> tuple[tuple[int, int], ...]:
    """Split ``range(n)`` into ``k`` contiguous blocks, larger blocks first."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    q, r = divmod(n, k)
    out, start = [], 0
    for j in range(k):
        size = q + (1 if j < r else 0)
        out.append((start, start + size))
        start += size
    return tuple(out)


def block_bases(layout, ch: str) -> str:
    """Per-qubit basis string induced by a challenge."""
    return "".join(c * (b - a) for (a, b), c in zip(layout, ch))


@dataclass(frozen=True)
class ToySecret:
    desc: Bb84Description
    layout: tuple


@dataclass(frozen=True)
class PuzzleKeys:
    pk: bytes
    sk: ToySecret


@dataclass
class PuzzleInstance:
    y: bytes
    reg: QReg
    layout: tuple


def _pk_bytes(n, layout) -> bytes:
    return encode_json({"n": n, "blocks": [list(b) for b in layout]})


def parse_pk(pk: bytes) -> tuple[int, tuple]:
    body = json.loads(pk)
    return int(body["n"]), tuple(tuple(b) for b in body["blocks"])


def toy_keygen(n: int, k: int, rng) -> tuple[PuzzleKeys, QReg]:
    layout = block_layout(n, k)
    desc = Bb84Description.random(n, rng)
    return PuzzleKeys(_pk_bytes(n, layout), ToySecret(desc, layout)), prepare_bb84(desc)


def toy_obligate(pk: bytes, handed: QReg) -> PuzzleInstance:
    n, layout = parse_pk(pk)
    if handed.n != n:
        raise ValueError(f"handed register has {handed.n} qubits, layout needs {n}")
    return PuzzleInstance(b"", handed, layout)


def toy_solve(inst: PuzzleInstance, ch: str, rng) -> str:
    if len(ch) != len(inst.layout):
        raise ValueError("challenge length differs from the number of blocks")
    reg, out = inst.reg, []
    for c in block_bases(inst.layout, ch):
        bit, reg = measure_angle_drop(reg, 0, HADAMARD if c == "1" else 0.0, rng)
        out.append(str(bit))
    return "".join(out)


def toy_ver(sk: ToySecret, y: bytes, ch: str, ans: str) -> bool:
    d = sk.desc
    if len(ch) != len(sk.layout) or len(ans) != d.n:
        return False
    bases = block_bases(sk.layout, ch)
    return all(a == x for a, x, t, b in zip(ans, d.x, d.theta, bases) if t == b)


class OneOfTwoKPuzzle(abc.ABC):
    n: int
    k: int

    @property
    def m1(self) -> int:
        return self.n

    @abc.abstractmethod
    def keygen(self, rng):
        """Return ``(keys, handed_register)``."""

    @abc.abstractmethod
    def obligate(self, pk: bytes, handed: QReg) -> PuzzleInstance:
        ...

    @abc.abstractmethod
    def solve(self, inst: PuzzleInstance, ch: str, rng) -> str:
        ...

    @abc.abstractmethod
    def ver(self, sk, y: bytes, ch: str, ans: str) -> bool:
        ...

    def secret_description(self, sk) -> Bb84Description | None:
        """Description of the handed register, for simulation envelopes only."""
        return None


class ToyPuzzle(OneOfTwoKPuzzle):
    def __init__(self, n: int, k: int):
        block_layout(n, k)
        self.n, self.k = n, k

    def keygen(self, rng):
        return toy_keygen(self.n, self.k, rng)

    def obligate(self, pk, handed):
        return toy_obligate(pk, handed)

    def solve(self, inst, ch, rng):
        return toy_solve(inst, ch, rng)

    def ver(self, sk, y, ch, ans):
        return toy_ver(sk, y, ch, ans)

    def secret_description(self, sk):
        return sk.desc


def _encode_v(sk: ToySecret, y: bytes) -> bytes:
    return encode_json({"x": sk.desc.x, "theta": sk.desc.theta, "blocks": [list(b) for b in sk.layout], "y": y.hex()})


def _decode_v(v: bytes) -> tuple[ToySecret, bytes]:
    body = json.loads(v)
    sk = ToySecret(Bb84Description(body["x"], body["theta"]), tuple(tuple(b) for b in body["blocks"]))
    return sk, bytes.fromhex(body["y"])


class CompiledPuzzlePoQM(PoQM):
    """Four messages: pk, y in the initialization phase; ch, ans in the execution phase."""

    rounds = 4

    def __init__(self, puzzle: OneOfTwoKPuzzle):
        self.puzzle = puzzle
        self.name = "puzzle"

    def m1(self, params):
        return self.puzzle.m1

    def _check(self, params):
        if params.n != self.puzzle.n or (params.k is not None and params.k != self.puzzle.k):
            raise ValueError("session parameters do not match the puzzle")

    def verifier_init(self, params, rng, handoff):
        self._check(params)
        keys, handed = self.puzzle.keygen(rng)
        handoff.deliver(handed, self.puzzle.secret_description(keys.sk))
        yield Send(keys.pk)
        y = yield RECV
        return _encode_v(keys.sk, y)

    def prover_init(self, params, rng, handoff):
        pk = yield RECV
        inst = self.puzzle.obligate(pk, handoff.take())
        yield Send(inst.y)
        return encode_json({"pk": pk.decode(), "y": inst.y.hex()}), inst.reg

    def verifier_exec(self, v, params, rng):
        sk, y = _decode_v(v)
        ch = random_bits(rng, self.puzzle.k)
        yield Send(ch.encode())
        ans = yield RECV
        try:
            ans = ans.decode("ascii")
        except UnicodeDecodeError:
            return Verdict(False, "answer is not ASCII")
        ok = self.puzzle.ver(sk, y, ch, ans)
        return Verdict(ok, "" if ok else "puzzle answer rejected")

    def prover_exec(self, state, sigma, params, rng):
        body = json.loads(state)
        inst = PuzzleInstance(bytes.fromhex(body["y"]), sigma, parse_pk(body["pk"].encode())[1])
        ch = (yield RECV).decode("ascii")
        yield Send(self.puzzle.solve(inst, ch, rng).encode())


def compile_puzzle_to_poqm(puzzle: OneOfTwoKPuzzle) -> CompiledPuzzlePoQM:
    return CompiledPuzzlePoQM(puzzle)


# --------------------------------------------------------------------------
# adversaries


class PuzzleAdversary(Prover):
    """Prover given by two functions.

    ``first(pk, ws, rng) -> (y, s, kept_wires)`` works on the handed register
    through a workspace; ``second(ch, s, rho, rng) -> ans`` answers the
    challenge from the classical string and the kept register.
    """

    def __init__(self, first, second, m2: int = 0, name: str = "puzzle-adversary", deterministic_answer: bool = False):
        self.first, self.second = first, second
        self.m2 = m2
        self.name = name
        self.deterministic_answer = deterministic_answer

    def run_first(self, pk: bytes, ws: Workspace, rng):
        y, s, kept = self.first(json.loads(pk), ws, rng)
        if not isinstance(y, bytes) or not isinstance(s, bytes):
            raise HarnessError("first-phase outputs must be byte strings")
        rho = release(ws, kept)
        if rho.n != self.m2:
            raise BudgetViolation(f"declared m2={self.m2} but kept {rho.n} qubits")
        return y, s, rho

    def init_phase(self, proto, params, rng, handoff):
        pk = yield RECV
        desc = handoff.description
        reg = handoff.take()
        ws = Workspace.from_product(desc.phases(), rng) if desc is not None else Workspace(reg, rng)
        y, s, rho = self.run_first(pk, ws, rng)
        yield Send(y)
        return s, rho

    def exec_phase(self, proto, state, sigma, params, rng):
        ch = (yield RECV).decode("ascii")
        yield Send(self.second(ch, state, sigma, rng).encode())


def _bases_for(pk, ch):
    return block_bases(tuple(tuple(b) for b in pk["blocks"]), ch)


def measure_all_adversary(angle: float = 0.0) -> PuzzleAdversary:
    """Measure every qubit at one angle; always answer the stored outcomes."""

    def first(pk, ws, rng):
        return b"", ws.measure_many(range(ws.n_data), angle).encode(), ()

    def second(ch, s, rho, rng):
        return s.decode()

    return PuzzleAdversary(first, second, name=f"measure-all:{angle:g}", deterministic_answer=True)


def random_answer_adversary() -> PuzzleAdversary:
    """Discard the register and answer uniformly random bits."""

    def first(pk, ws, rng):
        return b"", str(ws.n_data).encode(), ()

    def second(ch, s, rho, rng):
        return random_bits(rng, int(s))

    return PuzzleAdversary(first, second, name="random-answer")


def guess_block_adversary() -> PuzzleAdversary:
    """Measure each block in a random basis; answer stored bits where the challenge agrees, coin flips elsewhere."""

    def first(pk, ws, rng):
        guess = random_bits(rng, len(pk["blocks"]))
        bases = _bases_for(pk, guess)
        bits = ws.measure_many(range(ws.n_data), [HADAMARD if b == "1" else 0.0 for b in bases])
        return b"", encode_json({"guess": guess, "bits": bits, "blocks": pk["blocks"]}), ()

    def second(ch, s, rho, rng):
        body = json.loads(s)
        stored = body["bits"]
        out = []
        for (a, b), c, g in zip(body["blocks"], ch, body["guess"]):
            out.append(stored[a:b] if c == g else random_bits(rng, b - a))
        return "".join(out)

    return PuzzleAdversary(first, second, name="guess-block")


def keep_all_adversary(n: int) -> PuzzleAdversary:
    """Keep the whole register and solve honestly (a quantum-memory prover)."""

    def first(pk, ws, rng):
        return b"", json.dumps(pk).encode(), tuple(range(ws.n_data))

    def second(ch, s, rho, rng):
        pk = json.loads(s)
        inst = PuzzleInstance(b"", rho, tuple(tuple(b) for b in pk["blocks"]))
        return toy_solve(inst, ch, rng)

    return PuzzleAdversary(first, second, m2=n, name="keep-all")


# --------------------------------------------------------------------------
# three-party game


class _Sealed:
    """Read-only record that refuses everything outside its fields."""

    __slots__ = ("_fields",)

    def __init__(self, **fields):
        object.__setattr__(self, "_fields", dict(fields))

    def __getattr__(self, name):
        fields = object.__getattribute__(self, "_fields")
        if name in fields:
            return fields[name]
        raise InterfaceError(f"{type(self).__name__} does not provide {name!r}")

    def __setattr__(self, name, value):
        raise HarnessError("views are read-only; parties cannot leave side channels")


class RestrictedWorkspace(_Sealed):
    """A party's access to its own wires of a shared register."""

    def __init__(self, ws: Workspace, wires):
        super().__init__(wires=tuple(wires))
        object.__setattr__(self, "_ws", ws)

    __slots__ = ("_ws",)

    def _own(self, wires):
        mine = object.__getattribute__(self, "_fields")["wires"]
        for w in wires:
            if w not in mine:
                raise HarnessError(f"wire {w} belongs to another party")

    def apply(self, u, wires):
        self._own(wires)
        object.__getattribute__(self, "_ws").apply(u, wires)

    def measure(self, wire, angle=0.0):
        self._own([wire])
        return object.__getattribute__(self, "_ws").measure(wire, angle)

    def measure_many(self, wires, angles=0.0):
        wires = list(wires)
        self._own(wires)
        return object.__getattribute__(self, "_ws").measure_many(wires, angles)


class PartyView(_Sealed):
    pass


@dataclass(frozen=True)
class AbcSplit:
    """A's output: the puzzle string ``y`` plus a classical string and a set of wires for each of B and C."""

    y: bytes
    b_classical: bytes = b""
    b_wires: tuple = ()
    c_classical: bytes = b""
    c_wires: tuple = ()


@dataclass(frozen=True)
class AbcResult:
    accepted: bool
    ch: str
    ans_b: str
    ans_c: str
    b_ok: bool
    c_ok: bool

    def __bool__(self):
        return self.accepted


def run_abc_game(puzzle: OneOfTwoKPuzzle, A, B, C, rng) -> AbcResult:
    """One round: A splits the instance between B and C, who answer the same challenge without talking."""
    keys, handed = puzzle.keygen(rng)
    desc = puzzle.secret_description(keys.sk)
    ws = Workspace.from_product(desc.phases(), rng) if desc is not None else Workspace(handed, rng)
    split = A(PartyView(pk=keys.pk, register=ws), rng)
    if not isinstance(split, AbcSplit):
        raise HarnessError("A must return an AbcSplit")
    if not all(isinstance(v, bytes) for v in (split.y, split.b_classical, split.c_classical)):
        raise HarnessError("A's classical outputs must be byte strings")
    if set(split.b_wires) & set(split.c_wires):
        raise HarnessError("B and C cannot share wires")
    ch = random_bits(rng, puzzle.k)
    # B and C act on disjoint wires, so running them one after the other is exact.
    view_b = PartyView(ch=ch, classical=split.b_classical, register=RestrictedWorkspace(ws, split.b_wires))
    view_c = PartyView(ch=ch, classical=split.c_classical, register=RestrictedWorkspace(ws, split.c_wires))
    ans_b = B(view_b, rng)
    ans_c = C(view_c, rng)
    if not isinstance(ans_b, str) or not isinstance(ans_c, str):
        raise HarnessError("answers must be bit strings")
    b_ok = puzzle.ver(keys.sk, split.y, ch, ans_b)
    c_ok = puzzle.ver(keys.sk, split.y, ch, ans_c)
    return AbcResult(b_ok and c_ok, ch, ans_b, ans_c, b_ok, c_ok)


def pair_from_single(adv: PuzzleAdversary):
    """Build (A, B, C) from a single classical-memory prover: both B and C run its second step on A's string."""
    if adv.m2 != 0:
        raise HarnessError("the pairing needs a prover with no quantum memory (m2 = 0)")

    def A(view, rng):
        y, s, rho = adv.run_first(view.pk, view.register, rng)
        if rho.n:
            raise HarnessError("first step produced quantum output")
        return AbcSplit(y, s, (), s, ())

    def answer(view, rng):
        return adv.second(view.ch, view.classical, QReg.empty(), rng)

    return A, answer, answer


def exact_random_answer_acceptance(n: int, k: int) -> float:
    """Single-prover acceptance of uniformly random answers, by enumerating (theta, ch)."""
    layout = block_layout(n, k)
    total = 0.0
    for ti in range(1 << n):
        theta = format(ti, f"0{n}b")
        for ci in range(1 << k):
            bases = block_bases(layout, format(ci, f"0{k}b"))
            matches = sum(t == b for t, b in zip(theta, bases))
            total += 0.5 ** matches
    return total / (1 << (n + k))


def honest_information_adversary() -> PuzzleAdversary:
    """Store the full record of a Breidbart-angle measurement; answer it deterministically."""
    return measure_all_adversary(np.pi / 8)
