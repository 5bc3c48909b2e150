"""Memory-bounded adversaries against BB84-state protocols.

An adversary is a :class:`Strategy`: a sequence of rounds that act on the
received register through a :class:`Workspace` handle and emit classical
leakage, a declared set of wires kept as quantum memory (``m2`` qubits), and an
answer function of ``(leakage, kept register, theta)``.

Every strategy runs on two engines:

* the generic engine, one trial at a time through a :class:`Workspace`
  (this is what protocol runs and exact enumeration use);
* ``batch_guesses``, a vectorised engine over many trials for the large
  Monte-Carlo games. Tests pin the two together.
"""

from __future__ import annotations

import abc
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from . import kernels
from .bb84 import MARKER
from .core import RECV, Prover, Send
from .errors import BudgetViolation, CapacityError, HarnessError, ProtocolViolation
from .qsim import (
    BREIDBART,
    CNOT,
    H,
    HADAMARD,
    MAX_QUBITS,
    Bb84Description,
    QReg,
    _apply,
    _check_unitary,
    array_to_bits,
    basis_state,
    bits_to_array,
    draw_bit,
    enumerate_branches,
    haar_unitary,
    measure_angle_drop,
    permute,
    product_state,
    tensor,
)

HALF_PI = math.pi / 2
SNAP = 1e-12
MAX_BLOCK = 10
SEARCH_FAMILY = "product projective measurements with classical post-processing"


@dataclass
class AdversaryMemory:
    """What crosses the phase boundary: any classical string plus ``m2`` qubits."""

    s: bytes
    rho: QReg

    def check(self, m2: int):
        if self.rho.n != m2:
            raise BudgetViolation(f"declared m2={m2} but the register has {self.rho.n} qubits")
        return self


def encode_leaks(leaks) -> bytes:
    return json.dumps(list(leaks), separators=(",", ":")).encode()


def decode_leaks(s: bytes) -> tuple[str, ...]:
    return tuple(json.loads(s)) if s else ()


# --------------------------------------------------------------------------
# workspace


class Workspace:
    """Handle on the adversary's register.

    Strategies may add ancillas, apply unitaries and measure wires; amplitudes
    are never exposed. Wires in a known real product state are tracked as
    angles and only joined to the dense register when a gate touches them.
    """

    __slots__ = ("_Workspace__rng", "_Workspace__live", "_Workspace__pos", "_Workspace__prod", "_Workspace__nw", "_Workspace__nd")

    def __init__(self, reg: QReg, rng):
        self.__rng = rng
        self.__live = reg
        self.__pos = {i: i for i in range(reg.n)}
        self.__prod: dict[int, float] = {}
        self.__nw = reg.n
        self.__nd = reg.n

    @classmethod
    def from_product(cls, angles, rng) -> Workspace:
        ws = cls(QReg.empty(), rng)
        ws.__prod = {i: float(a) for i, a in enumerate(angles)}
        ws.__nw = ws.__nd = len(ws.__prod)
        return ws

    def __getattr__(self, name):
        raise HarnessError(f"the workspace does not expose {name!r}")

    @property
    def n_data(self) -> int:
        return self.__nd

    @property
    def n_wires(self) -> int:
        return self.__nw

    def add_ancillas(self, k: int) -> list[int]:
        new = list(range(self.__nw, self.__nw + k))
        for w in new:
            self.__prod[w] = 0.0
        self.__nw += k
        return new

    def __check(self, w):
        if not 0 <= w < self.__nw:
            raise IndexError(f"wire {w} out of range")
        if w not in self.__pos and w not in self.__prod:
            raise HarnessError(f"wire {w} is no longer held")

    def __join(self, w):
        if w in self.__pos:
            return
        if self.__live.n + 1 > MAX_QUBITS:
            raise CapacityError("workspace exceeds the simulator capacity")
        self.__live = tensor(self.__live, product_state([self.__prod.pop(w)]))
        self.__pos[w] = self.__live.n - 1

    def apply(self, u, wires):
        wires = [int(w) for w in wires]
        if len(set(wires)) != len(wires):
            raise ValueError("wires must be distinct")
        u = np.asarray(u, dtype=np.complex128)
        if u.shape != (1 << len(wires),) * 2:
            raise ValueError(f"gate of shape {u.shape} does not act on {len(wires)} wires")
        _check_unitary(u)
        for w in wires:
            self.__check(w)
            self.__join(w)
        self.__live = _apply(self.__live, u, tuple(self.__pos[w] for w in wires))

    def measure(self, wire: int, angle: float = 0.0) -> int:
        self.__check(wire)
        if wire in self.__prod:
            p0 = math.cos(self.__prod[wire] - angle) ** 2
            p0 = 1.0 if p0 > 1 - SNAP else 0.0 if p0 < SNAP else p0
            bit = draw_bit(self.__rng, p0)
        else:
            pos = self.__pos.pop(wire)
            bit, self.__live = measure_angle_drop(self.__live, pos, angle, self.__rng)
            for w, p in self.__pos.items():
                if p > pos:
                    self.__pos[w] = p - 1
        self.__prod[wire] = angle + bit * HALF_PI
        return bit

    def measure_many(self, wires, angles=0.0) -> str:
        wires = list(wires)
        angles = np.broadcast_to(np.asarray(angles, dtype=float), (len(wires),))
        return "".join(str(self.measure(w, a)) for w, a in zip(wires, angles))


def release(ws: Workspace, wires) -> QReg:
    """Hand the listed wires, in order, to the adversary's quantum memory.

    Harness-side: the rest of the workspace is discarded by measuring any
    dense wires that are not kept.
    """
    wires = [int(w) for w in wires]
    live_pos = ws._Workspace__pos
    for w in sorted(set(live_pos) - set(wires), key=lambda w: -live_pos[w]):
        ws.measure(w, 0.0)
    live = ws._Workspace__live
    pos = ws._Workspace__pos
    prod = ws._Workspace__prod
    if set(pos) - set(wires):
        raise HarnessError("dense wires remain outside the kept set")
    cur = sorted(pos, key=pos.get)
    extra = [w for w in wires if w not in pos]
    for w in extra:
        if w not in prod:
            raise HarnessError(f"wire {w} is not held")
    reg = tensor(live, product_state([prod[w] for w in extra])) if extra else live
    order = cur + extra
    return permute(reg, [order.index(w) for w in wires])


# --------------------------------------------------------------------------
# strategies


class Strategy(abc.ABC):
    m2 = 0
    name = "strategy"

    @property
    def n_rounds(self) -> int:
        return 1

    @abc.abstractmethod
    def round(self, i: int, ws: Workspace, leaks: tuple, rng) -> str:
        """Leakage round ``i``; returns a bit string."""

    def kept_wires(self, n: int) -> tuple:
        return ()

    @abc.abstractmethod
    def answer(self, leaks: tuple, rho: QReg, theta: str, rng) -> str:
        ...

    def batch_guesses(self, x, theta, rng, measure_kept: bool = False):
        """Vectorised guesses for ``(T, n)`` arrays, or ``None`` if unsupported."""
        return None

    @abc.abstractmethod
    def descriptor(self) -> str:
        ...

    def __repr__(self):
        return f"<{self.descriptor()} m2={self.m2}>"


def _phases(x, theta):
    return theta * HADAMARD + x * HALF_PI


def _decode_table(tables, bits, theta):
    return ((tables >> (2 * bits.astype(np.int64) + theta.astype(np.int64))) & 1).astype(np.uint8)


STORED_BIT_TABLE = 0b1100


class ProductMeasure(Strategy):
    """Measure every qubit at a fixed angle and answer from the stored outcomes.

    ``tables[i]`` maps (outcome, theta_i) to the guess: bit ``2*o + t``. The
    default answers the stored outcome whatever theta is.
    """

    def __init__(self, angles=0.0, name="classical-basis-guess", tables=None):
        self.angles = np.atleast_1d(np.asarray(angles, dtype=float))
        self.tables = None if tables is None else np.atleast_1d(np.asarray(tables, dtype=np.int64))
        self.name = name

    def angles_for(self, n):
        if self.angles.size == 1:
            return np.full(n, self.angles[0])
        if self.angles.size != n:
            raise ValueError(f"strategy has {self.angles.size} angles for {n} qubits")
        return self.angles

    def tables_for(self, n):
        if self.tables is None:
            return np.full(n, STORED_BIT_TABLE)
        return np.broadcast_to(self.tables, (n,)) if self.tables.size == 1 else self.tables

    def round(self, i, ws, leaks, rng):
        n = ws.n_data
        return ws.measure_many(range(n), self.angles_for(n))

    def answer(self, leaks, rho, theta, rng):
        bits = bits_to_array(leaks[0])
        t = bits_to_array(theta)
        return array_to_bits(_decode_table(self.tables_for(len(t)), bits, t))

    def batch_guesses(self, x, theta, rng, measure_kept=False):
        n = x.shape[1]
        out = kernels.measure_product(_phases(x, theta), self.angles_for(n), rng.random(x.shape))
        if self.tables is None:
            return out
        return _decode_table(self.tables_for(n), out, theta)

    def descriptor(self):
        if self.name == "breidbart":
            return "breidbart"
        if self.name == "classical-basis-guess":
            if self.angles.size == 1 and self.angles[0] == 0.0:
                return "classical"
            return "classical:" + ",".join(repr(float(a)) for a in self.angles)
        return self.name


def classical_basis_guess(angles=0.0) -> ProductMeasure:
    return ProductMeasure(angles, "classical-basis-guess")


def breidbart_strategy() -> ProductMeasure:
    return ProductMeasure(BREIDBART, "breidbart")


class KeepSubset(Strategy):
    """Keep the listed qubits untouched; measure the rest with a product strategy."""

    def __init__(self, indices, fallback: ProductMeasure | None = None):
        self.indices = tuple(int(i) for i in indices)
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("kept indices must be distinct")
        self.fallback = fallback if fallback is not None else breidbart_strategy()
        if not isinstance(self.fallback, ProductMeasure):
            raise TypeError("fallback must be a product-measurement strategy")
        self.m2 = len(self.indices)
        self.name = "keep-subset"

    def _others(self, n):
        if any(not 0 <= i < n for i in self.indices):
            raise ValueError(f"kept index out of range for n={n}")
        return [i for i in range(n) if i not in self.indices]

    def round(self, i, ws, leaks, rng):
        n = ws.n_data
        others = self._others(n)
        return ws.measure_many(others, self.fallback.angles_for(n)[others])

    def kept_wires(self, n):
        self._others(n)
        return self.indices

    def answer(self, leaks, rho, theta, rng):
        n = len(theta)
        others = self._others(n)
        t = bits_to_array(theta)
        out = np.zeros(n, dtype=np.uint8)
        if others:
            stored = bits_to_array(leaks[0])
            out[others] = _decode_table(self.fallback.tables_for(n)[others], stored, t[others])
        for i in self.indices:
            out[i], rho = measure_angle_drop(rho, 0, t[i] * HADAMARD, rng)
        return array_to_bits(out)

    def batch_guesses(self, x, theta, rng, measure_kept=False):
        n = x.shape[1]
        others = self._others(n)
        phi = _phases(x, theta)
        angle = np.broadcast_to(self.fallback.angles_for(n), x.shape).copy()
        kept = list(self.indices)
        angle[:, kept] = 0.0 if measure_kept else theta[:, kept] * HADAMARD
        out = kernels.measure_product(phi, angle, rng.random(x.shape))
        if others:
            out[:, others] = _decode_table(self.fallback.tables_for(n)[others], out[:, others], theta[:, others])
        if measure_kept and kept:
            p = out[:, kept]
            out[:, kept] = kernels.measure_product(p * HALF_PI, theta[:, kept] * HADAMARD, rng.random(p.shape))
        return out

    def descriptor(self):
        fb = self.fallback.descriptor()
        return "keep:" + ",".join(map(str, self.indices)) + ("" if fb == "breidbart" else "+" + fb)


def keep_subset_strategy(indices, fallback: ProductMeasure | None = None) -> KeepSubset:
    return KeepSubset(indices, fallback)


class Measured(Strategy):
    """Wrap a strategy so its kept register is measured computationally at the boundary."""

    m2 = 0

    def __init__(self, inner: Strategy):
        self.inner = inner
        self.name = f"measured({inner.name})"

    @property
    def n_rounds(self):
        return self.inner.n_rounds + 1

    def round(self, i, ws, leaks, rng):
        if i < self.inner.n_rounds:
            return self.inner.round(i, ws, leaks, rng)
        return ws.measure_many(self.inner.kept_wires(ws.n_data), 0.0)

    def answer(self, leaks, rho, theta, rng):
        p = leaks[-1]
        return self.inner.answer(leaks[:-1], basis_state(p), theta, rng)

    def batch_guesses(self, x, theta, rng, measure_kept=False):
        return self.inner.batch_guesses(x, theta, rng, measure_kept=True)

    def descriptor(self):
        return f"measured({self.inner.descriptor()})"


def measure_inserted(strategy: Strategy) -> Strategy:
    return Measured(strategy) if strategy.m2 > 0 else strategy


class Compression(Strategy):
    """Apply a circuit over data plus ancilla wires, keep some wires, measure the rest.

    Measured wires are emitted over ``leak_rounds`` rounds in wire order. With
    ``adapt`` set, the measurement angle of round ``r`` is
    ``adapt(r, prior_bits)``, where ``prior_bits`` is a ``(T, m)`` array of
    earlier leakage, so the rounds can depend on one another.

    The answer uncomputes the circuit on the reconstructed post-measurement
    state and measures each data wire in its revealed basis. A measured data
    wire that no gate touches answers with its stored outcome instead.
    """

    def __init__(self, n, gates=(), kept=(), ancillas=0, leak_rounds=1, adapt=None, angle=0.0, name="compression"):
        self.n = int(n)
        self.ancillas = int(ancillas)
        width = self.n + self.ancillas
        self.gates = []
        for u, wires in gates:
            u = np.asarray(u, dtype=np.complex128)
            wires = tuple(int(w) for w in wires)
            if any(not 0 <= w < width for w in wires) or len(set(wires)) != len(wires):
                raise ValueError(f"gate wires {wires} invalid for {width} wires")
            if u.shape != (1 << len(wires),) * 2:
                raise ValueError("gate shape does not match its wires")
            _check_unitary(u)
            self.gates.append((u, wires))
        self.kept = tuple(int(w) for w in kept)
        if any(not 0 <= w < width for w in self.kept) or len(set(self.kept)) != len(self.kept):
            raise ValueError("kept wires invalid")
        if leak_rounds < 1:
            raise ValueError("leak_rounds must be at least 1")
        self.m2 = len(self.kept)
        self.leak_rounds = int(leak_rounds)
        self.adapt = adapt
        self.angle = float(angle)
        self.name = name
        measured = [w for w in range(width) if w not in self.kept]
        self.chunks = [list(map(int, c)) for c in np.array_split(np.array(measured, dtype=int), self.leak_rounds)]
        self.touched = sorted({w for _, ws in self.gates for w in ws})

    @property
    def n_rounds(self):
        return self.leak_rounds

    def _check_n(self, n):
        if n != self.n:
            raise ValueError(f"strategy built for n={self.n}, game has n={n}")

    def round_angles(self, r, prior):
        """Per-trial angle for round ``r`` given ``(T, m)`` prior leakage."""
        if self.adapt is None:
            return np.full(prior.shape[0], self.angle)
        return np.asarray(self.adapt(r, prior), dtype=float)

    def round(self, i, ws, leaks, rng):
        self._check_n(ws.n_data)
        if i == 0:
            ws.add_ancillas(self.ancillas)
            for u, wires in self.gates:
                ws.apply(u, wires)
        prior = bits_to_array("".join(leaks)).reshape(1, -1)
        a = float(self.round_angles(i, prior)[0])
        return ws.measure_many(self.chunks[i], a)

    def kept_wires(self, n):
        self._check_n(n)
        return self.kept

    def answer(self, leaks, rho, theta, rng):
        self._check_n(len(theta))
        wire_angle = {}
        for r, (chunk, bits) in enumerate(zip(self.chunks, leaks)):
            prior = bits_to_array("".join(leaks[:r])).reshape(1, -1)
            a = float(self.round_angles(r, prior)[0])
            for w, b in zip(chunk, bits):
                wire_angle[w] = (a, int(b))
        out = np.zeros(self.n, dtype=np.uint8)
        sub = sorted(set(self.touched) | set(self.kept))
        for w in range(self.n):
            if w not in sub:
                out[w] = wire_angle[w][1]
        if not sub:
            return array_to_bits(out)
        meas = [w for w in sub if w not in self.kept]
        reg = tensor(product_state([wire_angle[w][0] + wire_angle[w][1] * HALF_PI for w in meas]), rho)
        order = meas + list(self.kept)
        reg = permute(reg, [order.index(w) for w in sub])
        local = {w: j for j, w in enumerate(sub)}
        for u, wires in reversed(self.gates):
            reg = _apply(reg, u.conj().T, tuple(local[w] for w in wires))
        t = bits_to_array(theta)
        removed = 0
        for j, w in enumerate(sub):
            if w < self.n:
                out[w], reg = measure_angle_drop(reg, j - removed, t[w] * HADAMARD, rng)
                removed += 1
        return array_to_bits(out)

    # -- batched engine

    def _blocks(self):
        width = self.n + self.ancillas
        parent = list(range(width))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for _, wires in self.gates:
            for w in wires[1:]:
                parent[find(w)] = find(wires[0])
        groups: dict[int, list[int]] = {}
        for w in range(width):
            groups.setdefault(find(w), []).append(w)
        return list(groups.values())

    def _block_unitary(self, block):
        d = 1 << len(block)
        local = {w: j for j, w in enumerate(block)}
        u_b = np.eye(d, dtype=np.complex128)
        for u, wires in self.gates:
            if wires[0] in local:
                out = np.empty((d, d), dtype=np.complex128)
                for c in range(d):
                    cols = QReg(len(block), u_b[:, c])
                    out[:, c] = _apply(cols, u, tuple(local[w] for w in wires)).amps
                u_b = out
        return u_b

    def batch_guesses(self, x, theta, rng, measure_kept=False):
        T, n = x.shape
        self._check_n(n)
        blocks = self._blocks()
        if max(len(b) for b in blocks) > MAX_BLOCK:
            return None
        chunk_of = {w: r for r, c in enumerate(self.chunks) for w in c}
        if self.adapt is not None:
            for b in blocks:
                if len({chunk_of[w] for w in b if w in chunk_of}) > 1:
                    return None
        phi = _phases(x, theta)
        guesses = np.zeros((T, n), dtype=np.uint8)
        bits = {}
        kept = set(self.kept)
        by_round: dict[int, list] = {}
        for b in blocks:
            rs = {chunk_of[w] for w in b if w in chunk_of}
            by_round.setdefault(min(rs) if rs else self.leak_rounds, []).append(b)
        for r in range(self.leak_rounds + 1):
            if r < self.leak_rounds:
                done = [w for c in self.chunks[:r] for w in c]
                prior = np.stack([bits[w] for w in done], axis=1) if done else np.zeros((T, 0), np.uint8)
                angle = self.round_angles(r, prior)
            else:
                angle = np.zeros(T)
            for b in by_round.get(r, []):
                self._run_block(b, angle, phi, theta, kept, measure_kept, rng, guesses, bits)
        return guesses

    def _run_block(self, block, angle, phi, theta, kept, measure_kept, rng, guesses, bits):
        T = phi.shape[0]
        data = [j for j, w in enumerate(block) if w < self.n]
        if data and block[0] not in self.touched and block[0] not in kept:
            w = block[0]
            b = kernels.measure_product(phi[:, w], angle, rng.random(T))
            bits[w] = guesses[:, w] = b
            return
        nb = len(block)
        state = np.ones((T, 1), dtype=np.complex128)
        for w in block:
            if w < self.n:
                vec = np.stack([np.cos(phi[:, w]), np.sin(phi[:, w])], axis=1).astype(np.complex128)
            else:
                vec = np.tile(np.array([1.0, 0.0], dtype=np.complex128), (T, 1))
            state = (state[:, :, None] * vec[:, None, :]).reshape(T, -1)
        u_b = self._block_unitary(block)
        state = state @ u_b.T
        meas = [j for j, w in enumerate(block) if w not in kept or measure_kept]
        rest = [j for j in range(nb) if j not in meas]
        ang = np.zeros((T, nb))
        for j in meas:
            ang[:, j] = 0.0 if block[j] in kept else angle
        psi = _rotate_axes(state.reshape((T,) + (2,) * nb), meas, -ang)
        psi = np.moveaxis(psi, [1 + j for j in meas + rest], list(range(1, nb + 1)))
        psi = psi.reshape(T, 1 << len(meas), 1 << len(rest))
        probs = np.sum(np.abs(psi) ** 2, axis=2)
        idx = kernels.sample_categorical(probs, rng.random(T))
        res = psi[np.arange(T), idx, :]
        res = res / np.linalg.norm(res, axis=1, keepdims=True)
        outcomes = {}
        for pos, j in enumerate(meas):
            outcomes[j] = ((idx >> (len(meas) - 1 - pos)) & 1).astype(np.uint8)
            if block[j] not in kept:
                bits[block[j]] = outcomes[j]
        if not data:
            return
        rebuilt = np.ones((T, 1), dtype=np.complex128)
        for j in meas:
            a = ang[:, j] + outcomes[j] * HALF_PI
            vec = np.stack([np.cos(a), np.sin(a)], axis=1).astype(np.complex128)
            rebuilt = (rebuilt[:, :, None] * vec[:, None, :]).reshape(T, -1)
        rebuilt = (rebuilt[:, :, None] * res[:, None, :]).reshape((T,) + (2,) * nb)
        rebuilt = np.moveaxis(rebuilt, list(range(1, nb + 1)), [1 + j for j in meas + rest])
        state = rebuilt.reshape(T, -1) @ u_b.conj()
        ang = np.zeros((T, nb))
        for j in data:
            ang[:, j] = theta[:, block[j]] * HADAMARD
        psi = _rotate_axes(state.reshape((T,) + (2,) * nb), data, -ang)
        anc = [j for j in range(nb) if j not in data]
        p = np.sum(np.abs(psi) ** 2, axis=tuple(1 + j for j in anc)) if anc else np.abs(psi) ** 2
        idx = kernels.sample_categorical(p.reshape(T, -1), rng.random(T))
        for pos, j in enumerate(data):
            guesses[:, block[j]] = (idx >> (len(data) - 1 - pos)) & 1

    def descriptor(self):
        return self.name


def _rotate_axes(psi, axes, angles):
    """Apply ``rotation(angles[:, j])`` to axis ``j`` (after the trial axis) for each listed axis."""
    T = psi.shape[0]
    shape = (T,) + (1,) * (psi.ndim - 2)
    for j in axes:
        c = np.cos(angles[:, j]).reshape(shape)
        s = np.sin(angles[:, j]).reshape(shape)
        a0 = np.take(psi, 0, axis=1 + j)
        a1 = np.take(psi, 1, axis=1 + j)
        psi = np.stack([c * a0 - s * a1, s * a0 + c * a1], axis=1 + j)
    return psi


def compression_strategy(n, gates=(), kept=(), ancillas=0, leak_rounds=1, adapt=None, angle=0.0, name="compression"):
    return Compression(n, gates, kept, ancillas, leak_rounds, adapt, angle, name)


def _pairs(n):
    return [(2 * j, 2 * j + 1) for j in range(n // 2)]


def cnot_pairs(n, kept=0, angle=0.0):
    """CNOT inside each adjacent pair; keep the first ``kept`` pair targets."""
    pairs = _pairs(n)
    if kept > len(pairs):
        raise ValueError("not enough pairs to keep")
    return Compression(n, [(CNOT, p) for p in pairs], [p[1] for p in pairs[:kept]], angle=angle,
                       name=f"compression:cnot-pairs:kept={kept}")


def bell_pairs(n, kept=0):
    """Bell-basis measurement of each adjacent pair."""
    pairs = _pairs(n)
    gates = []
    for a, b in pairs:
        gates += [(CNOT, (a, b)), (H, (a,))]
    return Compression(n, gates, [p[0] for p in pairs[:kept]], name=f"compression:bell-pairs:kept={kept}")


def haar_pairs(n, kept=0, seed=0):
    rng = np.random.default_rng(seed)
    pairs = _pairs(n)
    gates = [(haar_unitary(4, rng), p) for p in pairs]
    return Compression(n, gates, [p[1] for p in pairs[:kept]], name=f"compression:haar-pairs:kept={kept}:seed={seed}")


def parity_groups(n, kept=0, group=4):
    """Copy the parity of each group of data wires into an ancilla; keep the first ``kept`` ancillas."""
    groups = [list(range(s, min(s + group, n))) for s in range(0, n, group)]
    if kept > len(groups):
        raise ValueError("not enough groups to keep")
    gates = []
    for g, members in enumerate(groups):
        for w in members:
            gates.append((CNOT, (w, n + g)))
    return Compression(n, gates, [n + g for g in range(kept)], ancillas=len(groups),
                       name=f"compression:parity:kept={kept}:group={group}")


def _parity_rule(r, prior):
    if r == 0 or prior.shape[1] == 0:
        return np.full(prior.shape[0], BREIDBART)
    return np.where(prior.sum(axis=1) % 2 == 0, BREIDBART, 0.0)


def adaptive_two_round(n):
    """Two leakage rounds; the second half is measured at the Breidbart angle or computationally depending on the parity of the first half."""
    return Compression(n, (), (), leak_rounds=2, adapt=_parity_rule, name="adaptive")


# --------------------------------------------------------------------------
# running strategies


def run_p1(strategy: Strategy, ws: Workspace, rng) -> AdversaryMemory:
    leaks = []
    for i in range(strategy.n_rounds):
        leak = strategy.round(i, ws, tuple(leaks), rng)
        if not isinstance(leak, str) or set(leak) - {"0", "1"}:
            raise HarnessError("leakage must be a bit string")
        leaks.append(leak)
    rho = release(ws, strategy.kept_wires(ws.n_data))
    return AdversaryMemory(encode_leaks(leaks), rho).check(strategy.m2)


def run_p2(strategy: Strategy, mem: AdversaryMemory, theta: str, rng) -> str:
    return strategy.answer(decode_leaks(mem.s), mem.rho, theta, rng)


class Bb84Adversary(Prover):
    """A strategy playing the prover of a BB84 protocol."""

    def __init__(self, strategy: Strategy):
        self.strategy = strategy
        self.m2 = strategy.m2

    def init_phase(self, proto, params, rng, handoff):
        msg = yield RECV
        if msg != MARKER:
            raise ProtocolViolation("unexpected initialization message")
        desc = handoff.description
        reg = handoff.take()
        # The harness knows the delivered register is a real product state and
        # tracks it lazily; the strategy only sees the workspace handle.
        ws = Workspace.from_product(desc.phases(), rng) if desc is not None else Workspace(reg, rng)
        mem = run_p1(self.strategy, ws, rng)
        return mem.s, mem.rho

    def exec_phase(self, proto, state, sigma, params, rng):
        theta = (yield RECV).decode("ascii")
        x_prime = run_p2(self.strategy, AdversaryMemory(state, sigma), theta, rng)
        yield Send(x_prime.encode())


def play_once(strategy: Strategy, desc: Bb84Description, rng, measured: bool = False) -> bool:
    """One soundness-game round against a fixed description, with an honest ideal preparation."""
    s = Measured(strategy) if measured and strategy.m2 > 0 else strategy
    mem = run_p1(s, Workspace.from_product(desc.phases(), rng), rng)
    return run_p2(s, mem, desc.theta, rng) == desc.x


def exact_acceptance(strategy: Strategy, n: int, measured: bool = False, max_n: int = 4) -> float:
    """Acceptance probability summed over every (x, theta) and every measurement branch."""
    if n > max_n:
        raise CapacityError(f"exact enumeration is limited to n <= {max_n}")
    total = 0.0
    for xi in range(1 << n):
        for ti in range(1 << n):
            desc = Bb84Description(format(xi, f"0{n}b"), format(ti, f"0{n}b"))
            for w, ok in enumerate_branches(lambda path: play_once(strategy, desc, path, measured)):
                if ok:
                    total += w
    return total / (1 << (2 * n))


def brute_force_best(n: int, grid: int = 64, angles=None):
    """Best product-measurement strategy by exhaustive search, with its exact acceptance.

    Searches one measurement angle per qubit and every post-processing table
    from (outcome, theta_i) to a guess. Returns ``(strategy, value)``.
    """
    if n > 2:
        raise CapacityError("brute-force search is limited to n <= 2")
    if n < 1:
        raise ValueError("n must be at least 1")
    if angles is None:
        if grid < 8:
            raise ValueError("grid must hold at least 8 angles")
        angles = np.arange(grid) * (math.pi / grid)
    angles = np.asarray(angles, dtype=float)
    # acc[a, t, x, th, o]: Pr[outcome o | x, th, angle a] * [table t guesses x]
    xs = np.array([0, 1])
    phi = xs[:, None] * HALF_PI + xs[None, :] * HADAMARD
    p0 = np.cos(phi[None] - angles[:, None, None]) ** 2
    pr = np.stack([p0, 1 - p0], axis=-1)
    tables = np.arange(16)
    o = np.array([0, 1])
    guess = (tables[:, None, None] >> (2 * o[None, None, :] + xs[None, :, None])) & 1
    hit = guess[:, None, :, :] == xs[None, :, None, None]
    acc = pr[:, None, :, :, :] * hit[None, :, :, :, :]
    if n == 1:
        value = acc.sum(axis=(2, 3, 4)) / 4
    else:
        value = np.einsum("atxyo,bsuvp->atbs", acc, acc) / 16
    best = value.max()
    flat = int(np.flatnonzero(value.ravel() >= best - 1e-12)[0])
    pos = np.unravel_index(flat, value.shape)
    if n == 1:
        best_angles, best_tables = [angles[pos[0]]], [pos[1]]
    else:
        best_angles, best_tables = [angles[pos[0]], angles[pos[2]]], [pos[1], pos[3]]
    strat = ProductMeasure(best_angles, "brute-force-best", best_tables)
    strat.family = SEARCH_FAMILY
    return strat, float(best)


# --------------------------------------------------------------------------
# descriptors

_KEEP = re.compile(r"^keep:([0-9,]*)(?:\+(.+))?$")
_KEEP_FIRST = re.compile(r"^keep-first:(\d+)(?:\+(.+))?$")


def _options(parts):
    out = {}
    for p in parts:
        key, _, val = p.partition("=")
        out[key] = val
    return out


def parse_strategy(text, n: int) -> Strategy:
    """Build a strategy from a descriptor string (or a config mapping with a ``kind`` key).

    Forms: ``classical[:a0,a1,...]``, ``breidbart``, ``keep:i,j[+fallback]``,
    ``keep-first:m[+fallback]``, ``compression:{cnot-pairs,bell-pairs,haar-pairs,parity}[:kept=K][:seed=S][:group=G]``,
    ``adaptive``, ``measured(<descriptor>)``.
    """
    if isinstance(text, dict):
        text = _from_mapping(text)
    text = text.strip()
    if text.startswith("measured(") and text.endswith(")"):
        return Measured(parse_strategy(text[len("measured("):-1], n))
    if text in ("classical", "classical-basis-guess"):
        return classical_basis_guess()
    if text.startswith("classical:"):
        return classical_basis_guess([float(a) for a in text.split(":", 1)[1].split(",")])
    if text == "breidbart":
        return breidbart_strategy()
    if text == "adaptive":
        return adaptive_two_round(n)
    m = _KEEP.match(text)
    if m:
        idx = [int(i) for i in m.group(1).split(",") if i]
        fb = parse_strategy(m.group(2), n) if m.group(2) else None
        return keep_subset_strategy(idx, fb)
    m = _KEEP_FIRST.match(text)
    if m:
        fb = parse_strategy(m.group(2), n) if m.group(2) else None
        return keep_subset_strategy(range(int(m.group(1))), fb)
    if text.startswith("compression:"):
        kind, *rest = text.split(":")[1:]
        opts = _options(rest)
        kept = int(opts.get("kept", 0))
        if kind == "cnot-pairs":
            return cnot_pairs(n, kept)
        if kind == "bell-pairs":
            return bell_pairs(n, kept)
        if kind == "haar-pairs":
            return haar_pairs(n, kept, int(opts.get("seed", 0)))
        if kind == "parity":
            return parity_groups(n, kept, int(opts.get("group", 4)))
    raise ValueError(f"unknown strategy descriptor {text!r}")


def _from_mapping(cfg: dict) -> str:
    kind = cfg.get("kind")
    if kind == "measured":
        return f"measured({_from_mapping(cfg['inner']) if isinstance(cfg['inner'], dict) else cfg['inner']})"
    if kind in ("keep-subset", "keep"):
        fb = cfg.get("fallback")
        return "keep:" + ",".join(map(str, cfg["indices"])) + (f"+{fb}" if fb else "")
    if kind == "compression":
        s = f"compression:{cfg['circuit']}:kept={cfg.get('kept', 0)}"
        for key in ("seed", "group"):
            if key in cfg:
                s += f":{key}={cfg[key]}"
        return s
    if kind == "classical-basis-guess" and "angles" in cfg:
        return "classical:" + ",".join(map(str, cfg["angles"]))
    if kind is None:
        raise ValueError("strategy mapping needs a 'kind'")
    return kind


def zoo(n: int, m2: int = 0) -> list[Strategy]:
    """Strategies exercised by the soundness gates: every one keeps at most ``m2`` qubits."""
    out: list[Strategy] = [classical_basis_guess(), classical_basis_guess(HADAMARD), breidbart_strategy()]
    out += [cnot_pairs(n), bell_pairs(n), haar_pairs(n, 0, seed=1), parity_groups(n), adaptive_two_round(n)]
    if m2 > 0:
        out += [
            keep_subset_strategy(range(m2)),
            keep_subset_strategy(range(m2), classical_basis_guess()),
            cnot_pairs(n, kept=min(m2, n // 2)),
            bell_pairs(n, kept=min(m2, n // 2)),
            haar_pairs(n, kept=min(m2, n // 2), seed=2),
            parity_groups(n, kept=min(m2, (n + 3) // 4)),
        ]
    return out
