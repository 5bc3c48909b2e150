"""Dense state-vector simulation for BB84-style experiments.

Qubit 0 is the most significant bit of the basis index, so on two qubits
``|01>`` is index 1 and "X on qubit 1 of |00>" gives ``[0, 1, 0, 0]``.

Measurement angle convention, used everywhere in the package: a measurement
at ``angle`` projects onto ``cos(angle)|0> + sin(angle)|1>`` (outcome 0) and
``-sin(angle)|0> + cos(angle)|1>`` (outcome 1). Angle 0 is the computational
basis, ``pi/4`` the Hadamard basis and ``pi/8`` the Breidbart basis.

Every probabilistic operation takes an explicit random source: either a
``numpy.random.Generator`` or a :class:`BranchPath`, which lets
:func:`enumerate_branches` compute exact outcome distributions by replaying a
computation once per measurement branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CapacityError

MAX_QUBITS = 24

COMPUTATIONAL = 0.0
HADAMARD = math.pi / 4
BREIDBART = math.pi / 8

UNITARY_TOL = 1e-9
NORM_TOL = 1e-9
BRANCH_EPS = 1e-14

I2 = np.eye(2, dtype=np.complex128)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)
PAULIS = (I2, X, Y, Z)


def rotation(angle: float) -> np.ndarray:
    """Real rotation taking ``|0>`` to the outcome-0 vector at ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


class QReg:
    """A pure state on ``n`` qubits stored as ``2**n`` complex amplitudes."""

    __slots__ = ("n", "amps")

    def __init__(self, n: int, amps: np.ndarray):
        if not 0 <= n <= MAX_QUBITS:
            raise CapacityError(f"register size {n} outside 0..{MAX_QUBITS}")
        amps = np.ascontiguousarray(amps, dtype=np.complex128)
        if amps.shape != (1 << n,):
            raise ValueError(f"expected {1 << n} amplitudes, got shape {amps.shape}")
        norm = np.vdot(amps, amps).real
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"amplitudes have squared norm {norm:.12g}, expected 1")
        self.n = n
        self.amps = amps

    @classmethod
    def _unchecked(cls, n: int, amps: np.ndarray) -> QReg:
        """Wrap amplitudes without the norm check; for unnormalised branch vectors."""
        reg = object.__new__(cls)
        reg.n, reg.amps = n, amps
        return reg

    @classmethod
    def empty(cls) -> QReg:
        """The zero-qubit register (a single amplitude 1)."""
        return cls(0, np.ones(1, dtype=np.complex128))

    def copy(self) -> QReg:
        return QReg(self.n, self.amps.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def __repr__(self) -> str:
        return f"QReg(n={self.n})"


@dataclass(frozen=True)
class Bb84Description:
    """Classical description ``(x, theta)`` of ``H^theta_1|x_1> ... H^theta_n|x_n>``."""

    x: str
    theta: str

    def __post_init__(self):
        if len(self.x) != len(self.theta):
            raise ValueError("x and theta must have equal length")
        if set(self.x + self.theta) - {"0", "1"}:
            raise ValueError("x and theta must be bit strings")

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def random(cls, n: int, rng) -> Bb84Description:
        return cls(random_bits(rng, n), random_bits(rng, n))

    def phases(self) -> np.ndarray:
        """Per-qubit real angle: qubit i is ``cos(a)|0> + sin(a)|1>`` up to sign."""
        return bits_to_array(self.theta) * HADAMARD + bits_to_array(self.x) * (math.pi / 2)

    def to_json(self) -> dict:
        return {"x": self.x, "theta": self.theta}


def bits_to_array(bits: str) -> np.ndarray:
    return np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")


def array_to_bits(arr) -> str:
    return (np.asarray(arr, dtype=np.uint8) + ord("0")).tobytes().decode("ascii")


# --------------------------------------------------------------------------
# random sources


class BranchPath:
    """Random source that forces a prefix of branch choices and records the rest.

    The first time a new choice point is reached, the lowest-index branch with
    non-negligible probability is taken and its siblings are queued in
    ``pending`` for the enumerator.
    """

    __slots__ = ("prefix", "taken", "weight", "pending")

    def __init__(self, prefix: tuple = ()):
        self.prefix = prefix
        self.taken: list[int] = []
        self.weight = 1.0
        self.pending: list[tuple] = []

    def choose(self, probs) -> int:
        pos = len(self.taken)
        if pos < len(self.prefix):
            c = self.prefix[pos]
        else:
            live = [j for j, p in enumerate(probs) if p > BRANCH_EPS]
            c = live[0]
            base = tuple(self.taken)
            for j in live[1:]:
                self.pending.append(base + (j,))
        self.taken.append(c)
        self.weight *= float(probs[c])
        return c


def enumerate_branches(fn):
    """Run ``fn(path)`` once per measurement branch.

    Returns a list of ``(probability, result)``. ``fn`` must draw all of its
    randomness through the sampling helpers of this module.
    """
    out = []
    stack = [()]
    while stack:
        path = BranchPath(stack.pop())
        result = fn(path)
        out.append((path.weight, result))
        stack.extend(path.pending)
    return out


def choice_index(rng, probs) -> int:
    if isinstance(rng, BranchPath):
        return rng.choose(probs)
    u = rng.random()
    acc = 0.0
    last = 0
    for j, p in enumerate(probs):
        if p <= 0.0:
            continue
        acc += p
        last = j
        if u < acc:
            return j
    return last


def draw_bit(rng, p0: float) -> int:
    """Return 0 with probability ``p0``."""
    p0 = min(max(p0, 0.0), 1.0)
    if isinstance(rng, BranchPath):
        return rng.choose((p0, 1.0 - p0))
    return 0 if rng.random() < p0 else 1


def random_bits(rng, n: int) -> str:
    if isinstance(rng, BranchPath):
        return "".join(str(rng.choose((0.5, 0.5))) for _ in range(n))
    if n <= 62:
        return format(int(rng.integers(0, 1 << n)), f"0{n}b") if n else ""
    return array_to_bits(rng.integers(0, 2, size=n))


# --------------------------------------------------------------------------
# operations


def new_register(n: int) -> QReg:
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"register size {n} outside 1..{MAX_QUBITS}")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    return QReg(n, amps)


def _outer_chain(vectors) -> np.ndarray:
    amps = np.ones(1, dtype=np.complex128)
    for v in vectors:
        amps = (amps[:, None] * v[None, :]).reshape(-1)
    return amps


def product_state(angles) -> QReg:
    """Product of real single-qubit states ``cos(a)|0> + sin(a)|1>``."""
    angles = list(angles)
    return QReg(len(angles), _outer_chain(np.array([[math.cos(a), math.sin(a)] for a in angles], dtype=np.complex128)))


def basis_state(bits: str) -> QReg:
    amps = np.zeros(1 << len(bits), dtype=np.complex128)
    amps[int(bits, 2) if bits else 0] = 1.0
    return QReg(len(bits), amps)


_BB84_VECTORS = {
    ("0", "0"): np.array([1, 0], dtype=np.complex128),
    ("1", "0"): np.array([0, 1], dtype=np.complex128),
    ("0", "1"): np.array([1, 1], dtype=np.complex128) / math.sqrt(2),
    ("1", "1"): np.array([1, -1], dtype=np.complex128) / math.sqrt(2),
}


def prepare_bb84(d: Bb84Description) -> QReg:
    if d.n > MAX_QUBITS:
        raise CapacityError(f"register size {d.n} exceeds {MAX_QUBITS}")
    return QReg(d.n, _outer_chain(_BB84_VECTORS[xt] for xt in zip(d.x, d.theta)))


def tensor(a: QReg, b: QReg) -> QReg:
    return QReg(a.n + b.n, (a.amps[:, None] * b.amps[None, :]).reshape(-1))


def permute(reg: QReg, order) -> QReg:
    """Reorder qubits: qubit ``k`` of the result is qubit ``order[k]`` of ``reg``."""
    if reg.n <= 1:
        return reg.copy()
    t = reg.amps.reshape((2,) * reg.n).transpose(tuple(order))
    return QReg(reg.n, t.reshape(-1))


def _check_index(reg: QReg, i: int):
    if not 0 <= i < reg.n:
        raise IndexError(f"qubit {i} out of range for {reg.n}-qubit register")


def _check_unitary(u: np.ndarray):
    err = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
    if err > UNITARY_TOL:
        raise ValueError(f"matrix is not unitary (deviation {err:.2e})")


def apply_unitary(reg: QReg, u, targets) -> QReg:
    """Apply ``u`` to ``targets`` (``targets[0]`` is the most significant) and the identity elsewhere."""
    targets = tuple(int(t) for t in targets)
    u = np.asarray(u, dtype=np.complex128)
    t = len(targets)
    if t == 0 or t > reg.n:
        raise ValueError(f"need 1..{reg.n} targets, got {t}")
    if len(set(targets)) != t:
        raise ValueError("targets must be distinct")
    for q in targets:
        _check_index(reg, q)
    if u.shape != (1 << t, 1 << t):
        raise ValueError(f"matrix shape {u.shape} does not match {t} targets")
    _check_unitary(u)
    return _apply(reg, u, targets)


def _apply(reg: QReg, u: np.ndarray, targets: tuple) -> QReg:
    if len(targets) == 1:
        amps = reg.amps.copy()
        kernels.apply_1q(amps, reg.n, targets[0], u)
        return QReg._unchecked(reg.n, amps)
    t = len(targets)
    psi = reg.amps.reshape((2,) * reg.n)
    ut = u.reshape((2,) * (2 * t))
    out = np.tensordot(ut, psi, axes=(tuple(range(t, 2 * t)), targets))
    out = np.moveaxis(out, tuple(range(t)), targets)
    # unitaries preserve the norm, so the result needs no re-check
    return QReg._unchecked(reg.n, np.ascontiguousarray(out).reshape(-1))


def measure_angle(reg: QReg, i: int, angle: float, rng) -> tuple[int, QReg]:
    """Measure qubit ``i`` at ``angle``; return the bit and the collapsed register."""
    _check_index(reg, i)
    amps = reg.amps.copy()
    kernels.apply_1q(amps, reg.n, i, rotation(-angle))
    bit = draw_bit(rng, kernels.prob_zero(amps, reg.n, i))
    view = amps.reshape(1 << i, 2, 1 << (reg.n - 1 - i))
    view[:, 1 - bit, :] = 0.0
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2))
    kernels.apply_1q(amps, reg.n, i, rotation(angle))
    return bit, QReg(reg.n, amps)


def measure_angle_drop(reg: QReg, i: int, angle: float, rng) -> tuple[int, QReg]:
    """Like :func:`measure_angle` but removes the measured qubit from the result."""
    _check_index(reg, i)
    amps = reg.amps
    if angle != 0.0:
        amps = amps.copy()
        kernels.apply_1q(amps, reg.n, i, rotation(-angle))
    bit = draw_bit(rng, kernels.prob_zero(amps, reg.n, i))
    return bit, QReg(reg.n - 1, kernels.collapse_drop(amps, reg.n, i, bit))


def measure_subset_computational(reg: QReg, subset, rng) -> tuple[str, QReg]:
    """Measure ``subset`` computationally; the residual keeps the other qubits in order."""
    subset = [int(q) for q in subset]
    if len(set(subset)) != len(subset):
        raise ValueError("subset must be distinct")
    for q in subset:
        _check_index(reg, q)
    bits = []
    removed: list[int] = []
    cur = reg
    for q in subset:
        pos = q - sum(1 for r in removed if r < q)
        b, cur = measure_angle_drop(cur, pos, 0.0, rng)
        bits.append(str(b))
        removed.append(q)
    return "".join(bits), cur


def depolarize(reg: QReg, i: int, p: float, rng) -> QReg:
    """With probability ``p`` apply a uniformly random Pauli from {I, X, Y, Z} to qubit ``i``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    _check_index(reg, i)
    if p == 0.0:
        return reg
    k = choice_index(rng, (1 - p + p / 4, p / 4, p / 4, p / 4))
    if k == 0:
        return reg
    amps = reg.amps.copy()
    kernels.apply_1q(amps, reg.n, i, PAULIS[k])
    return QReg(reg.n, amps)


def fidelity(reg: QReg, target: Bb84Description) -> float:
    if reg.n != target.n:
        raise ValueError(f"register has {reg.n} qubits, target has {target.n}")
    ov = np.vdot(prepare_bb84(target).amps, reg.amps)
    return float(min(1.0, abs(ov) ** 2))


def state_distance(a: QReg, b: QReg) -> float:
    """Euclidean distance between amplitude vectors (phase sensitive)."""
    return float(np.linalg.norm(a.amps - b.amps))


def haar_unitary(d: int, rng) -> np.ndarray:
    """Haar-random ``d x d`` unitary (QR of a complex Ginibre matrix)."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph
