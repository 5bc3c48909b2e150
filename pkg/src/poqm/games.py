"""Security games, closed-form bounds and Monte-Carlo estimation."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import beta

from . import kernels
from .adversary import (
    Bb84Adversary,
    Strategy,
    Workspace,
    breidbart_strategy,
    classical_basis_guess,
    exact_acceptance,
    keep_subset_strategy,
    play_once,
    run_p1,
    run_p2,
)
from .bb84 import Bb84RspProtocol
from .core import ProtocolParams, as_rng, run_poqm
from .errors import CapacityError, HarnessError
from .puzzle import pair_from_single, run_abc_game
from .qsim import HADAMARD, Bb84Description, QReg, _apply, _check_unitary, haar_unitary, product_state, random_bits

XI = -math.log2(0.5 + 1 / (2 * math.sqrt(2)))
SLACK_SE = 3.0
CONFIDENCE = 0.99
CHUNK = 20000


def clopper_pearson(successes: int, trials: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    alpha = 1 - confidence
    lo = 0.0 if successes == 0 else float(beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


@dataclass(frozen=True)
class Estimate:
    trials: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    bound: float | None = None
    bound_vacuous: bool = False
    confidence: float = CONFIDENCE

    @classmethod
    def from_counts(cls, successes: int, trials: int, bound: float | None = None, confidence: float = CONFIDENCE):
        if trials <= 0 or not 0 <= successes <= trials:
            raise ValueError("need 0 <= successes <= trials and trials > 0")
        lo, hi = clopper_pearson(successes, trials, confidence)
        p = successes / trials
        return cls(trials, successes, p, min(lo, p), max(hi, p), bound, bound is not None and bound >= 1.0, confidence)

    @property
    def se(self) -> float:
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.trials)

    def combine(self, other: Estimate) -> Estimate:
        return Estimate.from_counts(self.successes + other.successes, self.trials + other.trials, self.bound, self.confidence)

    def with_bound(self, bound: float) -> Estimate:
        return Estimate.from_counts(self.successes, self.trials, bound, self.confidence)

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def within_bound(self, k: float = SLACK_SE) -> bool:
        if self.bound is None:
            raise ValueError("no bound attached")
        return self.p_hat <= self.bound + k * self.se

    def to_dict(self) -> dict:
        d = asdict(self)
        d["se"] = self.se
        return d


def estimate_acceptance(game, trials: int, seed, bound: float | None = None) -> Estimate:
    """Run ``trials`` independent rounds from one seed.

    ``game`` is either a callable ``rng -> bool`` or exposes
    ``run_batch(trials, rng) -> successes``.
    """
    if trials < 100:
        raise ValueError("use at least 100 trials")
    rng = as_rng(seed)
    if hasattr(game, "run_batch"):
        successes = int(game.run_batch(trials, rng))
    else:
        successes = sum(1 for _ in range(trials) if game(rng))
    return Estimate.from_counts(successes, trials, bound)


# --------------------------------------------------------------------------
# bounds


def locc_bound(n: int) -> tuple[float, bool]:
    """Leakage-game bound ``2^(-xi*n/2 + 2^-n)`` and whether it is vacuous."""
    if n < 1:
        raise ValueError("n must be at least 1")
    raw = 2.0 ** (-XI * n / 2 + 2.0 ** (-n))
    return raw, raw >= 1.0


def amplification_bound(beta_: float, m2: int) -> float:
    return (2 ** m2) * beta_


def puzzle_bound(k: int) -> float:
    """The ``2^-k`` term only; the computational slack is omitted."""
    return 2.0 ** (-k)


@dataclass(frozen=True)
class BoundSpec:
    name: str
    params: dict
    xi: float = XI

    def __post_init__(self):
        if self.name not in ("locc", "amplification", "puzzle-2^-k"):
            raise ValueError(f"unknown bound {self.name!r}")

    def evaluate(self):
        if self.name == "locc":
            return locc_bound(self.params["n"])
        if self.name == "amplification":
            v = amplification_bound(self.params["beta"], self.params["m2"])
            return v, v >= 1.0
        v = puzzle_bound(self.params["k"])
        return v, False


# --------------------------------------------------------------------------
# leakage game


def _random_pair(n, rng):
    x = rng.integers(0, 2, size=n, dtype=np.uint8)
    th = rng.integers(0, 2, size=n, dtype=np.uint8)
    return x, th


def locc_leakage_game(strategy: Strategy, n: int, rng) -> bool:
    """One round: the strategy only ever emits classical leakage, then guesses ``x`` from it and ``theta``."""
    if strategy.m2 != 0:
        raise HarnessError("the final guesser sees only classical leakage; strategies may not keep qubits")
    desc = Bb84Description.random(n, rng)
    ws = Workspace.from_product(desc.phases(), rng)
    leaks = []
    for i in range(strategy.n_rounds):
        leak = strategy.round(i, ws, tuple(leaks), rng)
        if not isinstance(leak, str):
            raise HarnessError("leakage must be a classical bit string")
        leaks.append(leak)
    return strategy.answer(tuple(leaks), QReg.empty(), desc.theta, rng) == desc.x


def _batched_successes(strategy, n, trials, rng, measure_kept=False, fail_prob=0.0, generic=None):
    total = 0
    done = 0
    while done < trials:
        c = min(CHUNK, trials - done)
        x = rng.integers(0, 2, size=(c, n), dtype=np.uint8)
        th = rng.integers(0, 2, size=(c, n), dtype=np.uint8)
        g = strategy.batch_guesses(x, th, rng, measure_kept=measure_kept)
        if g is None:
            total += sum(1 for _ in range(c) if generic(rng))
        else:
            ok = kernels.rows_equal(g, x)
            if fail_prob > 0.0:
                ok &= rng.random(c) >= fail_prob
            total += int(ok.sum())
        done += c
    return total


@dataclass
class LoccGame:
    strategy: Strategy
    n: int

    def __post_init__(self):
        if self.strategy.m2 != 0:
            raise HarnessError("the final guesser sees only classical leakage; strategies may not keep qubits")

    def __call__(self, rng) -> bool:
        return locc_leakage_game(self.strategy, self.n, rng)

    def run_batch(self, trials, rng):
        return _batched_successes(self.strategy, self.n, trials, rng, generic=self)

    @property
    def bound(self):
        return locc_bound(self.n)[0]


# --------------------------------------------------------------------------
# hybrids


def run_hybrid(which: int, params: ProtocolParams, adversary: Strategy, rng, fail_prob: float = 0.0) -> bool:
    """One round of hybrid 0-3 of the soundness argument for the preparation-compiled protocol.

    0: the real protocol run; 1: flag and register drawn from the ideal
    preparation directly; 2: a BB84 register is always delivered; 3: as 2
    with the adversary's kept register measured computationally.
    """
    if which == 0:
        verdict, _, _ = run_poqm(Bb84RspProtocol(fail_prob), Bb84Adversary(adversary), params, rng)
        return verdict.accepted
    desc = Bb84Description.random(params.n, rng)
    if which == 1:
        passed = not (fail_prob > 0.0 and rng.random() < fail_prob)
        mem = run_p1(adversary, Workspace.from_product(desc.phases(), rng), rng)
        theta = desc.theta if passed else random_bits(rng, params.n)
        return passed and run_p2(adversary, mem, theta, rng) == desc.x
    if which in (2, 3):
        return play_once(adversary, desc, rng, measured=which == 3)
    raise ValueError("hybrid index must be 0, 1, 2 or 3")


@dataclass
class HybridGame:
    which: int
    n: int
    strategy: Strategy
    fail_prob: float = 0.0
    batched: bool = True

    def __call__(self, rng) -> bool:
        return run_hybrid(self.which, ProtocolParams(self.n), self.strategy, rng, self.fail_prob)

    def run_batch(self, trials, rng):
        if not self.batched:
            return sum(1 for _ in range(trials) if self(rng))
        fail = self.fail_prob if self.which in (0, 1) else 0.0
        return _batched_successes(self.strategy, self.n, trials, rng, measure_kept=self.which == 3,
                                  fail_prob=fail, generic=self)


def exact_hybrid(which: int, n: int, strategy: Strategy) -> float:
    if which not in (2, 3):
        raise ValueError("exact evaluation covers hybrids 2 and 3")
    return exact_acceptance(strategy, n, measured=which == 3)


# --------------------------------------------------------------------------
# measurement insertion


MAX_BZ_QUBITS = 6


@dataclass(frozen=True)
class BzCircuit:
    prep: QReg
    gates: tuple = ()
    measured: tuple | None = None

    @property
    def n(self):
        return self.prep.n


@dataclass(frozen=True)
class Insertion:
    step: int
    qubits: tuple


@dataclass(frozen=True)
class BzReport:
    p_original: dict
    p_inserted: dict
    k: int
    ok: bool
    tight: bool
    worst_ratio: float


def output_distribution(circuit: BzCircuit, insertion: Insertion | None = None) -> dict:
    """Exact outcome distribution, summing every branch of the inserted measurement."""
    n = circuit.n
    if n > MAX_BZ_QUBITS:
        raise CapacityError(f"circuits are limited to {MAX_BZ_QUBITS} qubits")
    final = tuple(range(n)) if circuit.measured is None else tuple(circuit.measured)
    if insertion is not None:
        if not 0 <= insertion.step <= len(circuit.gates):
            raise ValueError("insertion step out of range")
        if not insertion.qubits or len(set(insertion.qubits)) != len(insertion.qubits):
            raise ValueError("insertion needs distinct qubits")
    branches = [circuit.prep.amps.copy()]

    def split(states, qubits):
        out = []
        for amps in states:
            t = amps.reshape((2,) * n)
            for m in range(1 << len(qubits)):
                sel = [slice(None)] * n
                for pos, q in enumerate(qubits):
                    sel[q] = (m >> (len(qubits) - 1 - pos)) & 1
                part = np.zeros_like(t)
                part[tuple(sel)] = t[tuple(sel)]
                out.append(part.reshape(-1))
        return out

    for step, (u, targets) in enumerate(circuit.gates):
        if insertion is not None and step == insertion.step:
            branches = split(branches, insertion.qubits)
        u = np.asarray(u, dtype=np.complex128)
        _check_unitary(u)
        branches = [_apply(QReg._unchecked(n, b), u, tuple(targets)).amps for b in branches]
    if insertion is not None and insertion.step == len(circuit.gates):
        branches = split(branches, insertion.qubits)
    probs = sum(np.abs(b) ** 2 for b in branches).reshape((2,) * n)
    rest = tuple(q for q in range(n) if q not in final)
    marg = probs.sum(axis=rest) if rest else probs
    marg = np.moveaxis(marg, [sorted(final).index(q) for q in final], list(range(len(final)))).reshape(-1)
    return {format(i, f"0{len(final)}b"): float(p) for i, p in enumerate(marg)}


def check_bz(circuit: BzCircuit, insertion: Insertion, tol: float = 1e-12) -> BzReport:
    """Compare output distributions with and without one inserted computational measurement."""
    p = output_distribution(circuit)
    q = output_distribution(circuit, insertion)
    k = 1 << len(insertion.qubits)
    ok = all(q[o] >= p[o] / k - tol for o in p)
    tight = any(p[o] > tol and abs(q[o] - p[o] / k) <= 1e-9 for o in p)
    ratios = [q[o] * k / p[o] for o in p if p[o] > tol]
    return BzReport(p, q, k, ok, tight, min(ratios) if ratios else math.inf)


def random_bz_case(rng, n_qubits: int = 3, depth: int = 6) -> tuple[BzCircuit, Insertion]:
    z = rng.standard_normal(1 << n_qubits) + 1j * rng.standard_normal(1 << n_qubits)
    prep = QReg(n_qubits, z / np.linalg.norm(z))
    gates = []
    for _ in range(depth):
        if n_qubits >= 2 and rng.random() < 0.5:
            targets = tuple(int(t) for t in rng.choice(n_qubits, size=2, replace=False))
            gates.append((haar_unitary(4, rng), targets))
        else:
            gates.append((haar_unitary(2, rng), (int(rng.integers(n_qubits)),)))
    size = int(rng.integers(1, n_qubits + 1))
    qubits = tuple(int(q) for q in rng.choice(n_qubits, size=size, replace=False))
    fsize = int(rng.integers(1, n_qubits + 1))
    final = tuple(sorted(int(q) for q in rng.choice(n_qubits, size=fsize, replace=False)))
    return BzCircuit(prep, tuple(gates), final), Insertion(int(rng.integers(0, depth + 1)), qubits)


def tight_bz_case() -> tuple[BzCircuit, Insertion]:
    """|+> then H, measured; inserting a measurement before H halves Pr[0] exactly."""
    h = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
    return BzCircuit(product_state([HADAMARD]), ((h, (0,)),), (0,)), Insertion(0, (0,))


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class AmplificationReport:
    n: int
    m2: int
    mode: str
    acc_m2: float
    acc_measured: float
    ratio: float
    ok: bool
    estimates: dict = field(default_factory=dict)


def amplification_report(n: int, strategy: Strategy, mode: str = "exact", trials: int = 100_000, seed=0) -> AmplificationReport:
    """Compare a strategy with its measured transform on the BB84 protocol at size ``n``."""
    m2 = strategy.m2
    if mode == "exact":
        if n > 4 or m2 > 2:
            raise CapacityError("exact mode needs n <= 4 and m2 <= 2")
        a = exact_acceptance(strategy, n)
        b = exact_acceptance(strategy, n, measured=True)
        ok = a <= (2 ** m2) * b + 1e-12
        return AmplificationReport(n, m2, mode, a, b, a / b if b else math.inf, ok)
    if mode != "mc":
        raise ValueError("mode must be 'exact' or 'mc'")
    ea = estimate_acceptance(HybridGame(2, n, strategy), trials, seed)
    eb = estimate_acceptance(HybridGame(3, n, strategy), trials, (seed, 1) if isinstance(seed, int) else seed)
    se = math.hypot(ea.se, (2 ** m2) * eb.se)
    ok = ea.p_hat <= (2 ** m2) * eb.p_hat + SLACK_SE * se
    ratio = ea.p_hat / eb.p_hat if eb.p_hat else math.inf
    return AmplificationReport(n, m2, mode, ea.p_hat, eb.p_hat, ratio, ok, {"acc_m2": ea, "acc_measured": eb})


@dataclass(frozen=True)
class JensenReport:
    single: Estimate
    both: Estimate
    slack: float
    ok: bool
    identical_answers: bool


def jensen_report(puzzle, adversary, trials: int, seed) -> JensenReport:
    """Single-prover acceptance against the paired (B, C) game on the same rounds.

    Each round plays the three-party game built from the adversary; B's
    verdict is exactly one run of the single-prover game, so both estimates
    come from the same draws of keys, first step and challenge.
    """
    A, B, C = pair_from_single(adversary)
    rng = as_rng(seed)
    single = both = 0
    same = True
    for _ in range(trials):
        r = run_abc_game(puzzle, A, B, C, rng)
        single += r.b_ok
        both += r.accepted
        same &= r.ans_b == r.ans_c
    s = Estimate.from_counts(single, trials)
    b = Estimate.from_counts(both, trials)
    slack = SLACK_SE * math.hypot(b.se, 2 * s.p_hat * s.se)
    return JensenReport(s, b, slack, b.p_hat >= s.p_hat ** 2 - slack, same)


def keep_subset_family(max_n: int = 4, max_m2: int = 2) -> list[tuple[int, Strategy]]:
    """``(n, strategy)`` pairs for the exact amplification gate.

    Every kept subset is covered for n < max_n; at max_n, where one exact
    pair costs about a second, the first and last subsets of each size stand
    in. Each subset runs with both the Breidbart and computational fallbacks.
    """
    out = []
    for n in range(1, max_n + 1):
        for m2 in range(1, min(max_m2, n) + 1):
            subsets = list(itertools.combinations(range(n), m2))
            if n == max_n:
                subsets = sorted({subsets[0], subsets[-1]})
            for subset in subsets:
                for fb in (breidbart_strategy(), classical_basis_guess()):
                    out.append((n, keep_subset_strategy(subset, fb)))
    return out
