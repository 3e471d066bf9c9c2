"""Acceptance battery: the statements the artifact must demonstrate, each
runnable on a desk in minutes, printed as one pass/fail line apiece.

Every criterion pins its trial counts, tolerances, and master seed, so a
rerun is bit-reproducible. Statistical checks use three-sigma windows (or
Wilson intervals where stated); runtime ceilings are part of the criteria
and are asserted, not just reported.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from . import attacks
from .attacks import DEFENDED_KINDS
from .harness import ExperimentConfig, build_report, report_content, run_experiment, sweep
from .model import Model, World
from .primitives import (
    Encapsulation,
    Opening,
    REJECT,
    commit,
    decode_fields,
    encode_fields,
    open_commitment,
)
from .primitives import _commitment_digest, COMMIT_TAG
from .protocols import (
    ProtocolConfig,
    ProtocolKind,
    Side,
    build_machine,
    compile_mt,
)
from .rng import HashDrbg, derive_seed

ACCEPTANCE_SEED = 7


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    elapsed_s: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d}: {self.title} ({self.elapsed_s:.1f}s) {self.detail}"


def _timed(number, title, fn) -> CriterionResult:
    started = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, title, passed, detail, time.perf_counter() - started)


def _three_sigma_envelope(p: float, trials: int, factor: float = 2.0) -> float:
    return factor * p + 3 * math.sqrt(p * (1 - p) / trials)


# ---------------------------------------------------------------------------

def criterion_1(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Every protocol completes 1000/1000 honest runs with matching keys
    and entropies, within 30 seconds total."""

    def check():
        started = time.perf_counter()
        bad = []
        for offset, kind in enumerate(ProtocolKind):
            summary = run_experiment(
                ExperimentConfig(
                    protocol=kind.value, trials=1000, n_e=16, seed=seed + offset
                )
            )
            if summary.successes != 1000:
                bad.append(f"{kind.value}:{summary.successes}/1000")
        elapsed = time.perf_counter() - started
        if bad:
            return False, "incomplete runs: " + ", ".join(bad)
        if elapsed > 30:
            return False, f"took {elapsed:.1f}s > 30s"
        return True, f"8 x 1000/1000 completions in {elapsed:.1f}s"

    return _timed(1, "honest completeness", check)


def criterion_2(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """The 2-pass exchange falls to the keypair collision loop at n_e=8:
    near-certain success, mean loop length around 2^8."""

    def check():
        started = time.perf_counter()
        summary = run_experiment(
            ExperimentConfig(
                protocol="kex2", strategy="kex2-collision", n_e=8,
                budget=100_000, trials=50, seed=seed,
            )
        )
        elapsed = time.perf_counter() - started
        ok_rate = summary.rate >= 0.99
        ok_iters = 128 <= summary.mean_iterations <= 512
        ok_time = elapsed <= 60
        detail = (
            f"rate {summary.rate:.3f}, mean iterations {summary.mean_iterations:.1f}, "
            f"{elapsed:.1f}s"
        )
        return ok_rate and ok_iters and ok_time, detail

    return _timed(2, "2-pass exchange falls to the collision loop", check)


def criterion_3(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Same-key attack: certain against key-only entropy with all three
    parties sharing one key; impossible against the full entropy input in
    de-randomized mode."""

    def check():
        all_equal = 0
        wins = 0
        for i in range(100):
            world = World(
                ProtocolKind.KEM2,
                ProtocolConfig(kem2_key_only_entropy=True, n_e=16),
                Model.UM,
                derive_seed(seed, b"c3-keyonly", i.to_bytes(4, "big")),
            )
            outcome = attacks.attack_kem_same_key(world)
            wins += outcome.success
            all_equal += outcome.detail["all_three_keys_equal"]
        if wins != 100 or all_equal != 100:
            return False, f"key-only: {wins}/100 wins, {all_equal}/100 shared keys"
        blocked = run_experiment(
            ExperimentConfig(
                protocol="kem2", strategy="kem-same-key", kem_mode="det",
                n_e=16, trials=10_000, seed=seed,
            )
        )
        if blocked.successes != 0:
            return False, f"full entropy: {blocked.successes} successes in 10^4"
        return True, "key-only 100/100 with shared keys; full entropy 0/10^4"

    return _timed(3, "same-key attack on the 2-pass encapsulation", check)


def criterion_4(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Replica attack at n_e=8: near-certain entropy match; de-randomized
    mode never matches the two end keys; probabilistic re-encapsulation of
    the same secret matches keys and entropy simultaneously."""

    def check():
        det_wins, det_key_mismatch = 0, 0
        for i in range(50):
            world = World(
                ProtocolKind.KEM2, ProtocolConfig(n_e=8), Model.UM,
                derive_seed(seed, b"c4-det", i.to_bytes(4, "big")),
            )
            outcome = attacks.attack_kem2_replica(world, 100_000)
            det_wins += outcome.success
            if outcome.success:
                det_key_mismatch += not outcome.detail[
                    "initiator_key_equals_responder_key"
                ]
        if det_wins / 50 < 0.99:
            return False, f"deterministic replica rate {det_wins}/50"
        if det_key_mismatch != det_wins:
            return False, f"only {det_key_mismatch}/{det_wins} successes had split keys"
        combined_both = 0
        combined_wins = 0
        from .primitives import KemMode
        for i in range(50):
            world = World(
                ProtocolKind.KEM2,
                ProtocolConfig(n_e=8, kem_mode=KemMode.PROBABILISTIC),
                Model.UM,
                derive_seed(seed, b"c4-comb", i.to_bytes(4, "big")),
            )
            outcome = attacks.attack_kem2_replica(world, 100_000, reuse_secret=True)
            combined_wins += outcome.success
            if outcome.success and outcome.detail["initiator_key_equals_responder_key"]:
                combined_both += 1
        if combined_wins < 50 or combined_both < 1:
            return False, (
                f"combined: {combined_wins}/50 wins, {combined_both} with shared key"
            )
        return True, (
            f"det {det_wins}/50 with split keys {det_key_mismatch}/{det_wins}; "
            f"combined {combined_both}/50 matched keys and entropy"
        )

    return _timed(4, "replica and combined attacks", check)


def criterion_5(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Forge and redirect against every defended protocol stay below
    2 * 2^-8 plus three binomial sigmas over 10^4 trials each."""

    def check():
        started = time.perf_counter()
        p = 2**-8
        limit = _three_sigma_envelope(p, 10_000, factor=2.0)
        rows = []
        violations = []
        for kind in DEFENDED_KINDS:
            for strategy in ("random-forge", "redirect"):
                summary = run_experiment(
                    ExperimentConfig(
                        protocol=kind.value, strategy=strategy, n_e=8,
                        trials=10_000, seed=seed,
                    )
                )
                rows.append(f"{kind.value}/{strategy}:{summary.rate:.4f}")
                if summary.rate > limit:
                    violations.append(rows[-1])
                if summary.verdict != "within-bound":
                    violations.append(rows[-1] + " (harness verdict)")
        elapsed = time.perf_counter() - started
        if violations:
            return False, f"over {limit:.4f}: " + ", ".join(violations)
        if elapsed > 600:
            return False, f"took {elapsed:.0f}s > 600s"
        return True, f"10 combinations <= {limit:.4f} in {elapsed:.0f}s"

    return _timed(5, "defended protocols hold the residual bound", check)


def criterion_6(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Tampering with the encapsulation alone in the commit-to-secret
    3-pass protocol always trips the secret-mismatch abort."""

    def check():
        cfg = ProtocolConfig()
        g = cfg.group
        aborts = 0
        trials = 10_000
        for i in range(trials):
            rng_a = HashDrbg(derive_seed(seed, b"c6-a", i.to_bytes(4, "big")))
            rng_b = HashDrbg(derive_seed(seed, b"c6-b", i.to_bytes(4, "big")))
            a = build_machine(ProtocolKind.KEM3_COMMIT, cfg, Side.A, b"alice", b"bob", rng_a)
            b = build_machine(ProtocolKind.KEM3_COMMIT, cfg, Side.B, b"bob", b"alice", rng_b)
            msg = b.advance(None)
            msg = a.advance(msg)
            msg = b.advance(msg)
            fields = dict(decode_fields(msg))
            ct = Encapsulation.decode(fields["ct"], g)
            tampered = Encapsulation(ct.c1, (ct.c2 * g.g) % g.p)
            forged = encode_fields([("ct", tampered.encode(g)), ("ctd", fields["ctd"])])
            try:
                a.advance(forged)
            except Exception:
                if a.aborted:
                    aborts += 1
        if aborts != trials:
            return False, f"{aborts}/{trials} aborts"
        return True, f"{aborts}/{trials} tampered encapsulations aborted"

    return _timed(6, "commit-to-secret abort on encapsulation tampering", check)


def criterion_7(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """The 6-message flow, the 4-message flow, and the compiler output agree
    bitwise on entropies and key under a shared randomness schedule."""

    def check():
        compiled = compile_mt(ProtocolKind.KEM2)
        if compiled.message_count != 6:
            return False, f"compiled message count {compiled.message_count}"
        cfg = ProtocolConfig()
        matches = 0
        trials = 1000
        for i in range(trials):
            seed_a = derive_seed(seed, b"c7-a", i.to_bytes(4, "big"))
            seed_b = derive_seed(seed, b"c7-b", i.to_bytes(4, "big"))
            runs = []
            for factory in (
                lambda *a: build_machine(ProtocolKind.KEM4, *a),
                lambda *a: build_machine(ProtocolKind.KEM6, *a),
                lambda cfg_, side, *rest: compiled.build(cfg_, side, *rest),
            ):
                a = factory(cfg, Side.A, b"alice", b"bob", HashDrbg(seed_a))
                b = factory(cfg, Side.B, b"bob", b"alice", HashDrbg(seed_b))
                payload = a.advance(None)
                machines = {Side.A: a, Side.B: b}
                current = Side.B
                while payload is not None:
                    payload = machines[current].advance(payload)
                    current = current.other
                runs.append((a.entropies, b.entropies, a.key, b.key))
            first = runs[0]
            if all(
                run == first and run[0] == run[1] and run[2] == run[3]
                for run in runs
            ):
                matches += 1
        if matches != trials:
            return False, f"{matches}/{trials} bitwise matches"
        return True, f"{matches}/{trials} runs bitwise equal across 4/6/compiled"

    return _timed(7, "6-message and 4-message flows are the same protocol", check)


def criterion_8(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Commitment scheme: random second openings never bind; the digest
    reveals nothing to a blinderless-hash distinguisher."""

    def check():
        rng = HashDrbg(derive_seed(seed, b"c8"))
        c, d = commit(b"the committed message", rng)
        binding_hits = 0
        for _ in range(100_000):
            forged = Opening(rng.randbytes(24), rng.randbytes(32))
            if open_commitment(c, forged) is not REJECT:
                binding_hits += 1
        if binding_hits:
            return False, f"{binding_hits} second openings accepted"
        x0, x1 = b"left message", b"right message"
        wins = 0
        trials = 10_000
        for _ in range(trials):
            b = rng.randbit()
            cb, _ = commit(x0 if b == 0 else x1, rng)
            # distinguisher hashes its guesses without the blinder
            guess = None
            for candidate, value in ((x0, 0), (x1, 1)):
                if _commitment_digest(COMMIT_TAG, candidate, b"") == cb.digest:
                    guess = value
            if guess is None:
                guess = rng.randbit()
            wins += guess == b
        rate = wins / trials
        sigma = math.sqrt(0.25 / trials)
        if abs(rate - 0.5) > 3 * sigma:
            return False, f"hiding distinguisher rate {rate:.4f}"
        return True, f"binding 0/10^5, hiding rate {rate:.4f} in 0.5 +/- {3*sigma:.4f}"

    return _timed(8, "commitment binding and hiding at desk scale", check)


def criterion_9(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Forge success tracks 2^-n_e across a width sweep, inside the Wilson
    95% interval at each point."""

    def check():
        widths = [4, 8, 12]
        trials = [100_000, 10_000, 10_000]
        summaries = sweep(
            ExperimentConfig(protocol="kex3", strategy="random-forge", seed=seed),
            widths,
            trials_per_point=trials,
        )
        misses = []
        for summary in summaries:
            target = 2.0**-summary.n_e
            if not summary.wilson_low <= target <= summary.wilson_high:
                misses.append(
                    f"n_e={summary.n_e}: {target:.2e} outside "
                    f"[{summary.wilson_low:.2e}, {summary.wilson_high:.2e}]"
                )
        if misses:
            return False, "; ".join(misses)
        rates = ", ".join(f"2^-{s.n_e}~{s.rate:.2e}" for s in summaries)
        return True, rates

    return _timed(9, "sweep tracks the 2^-n_e curve", check)


def criterion_10(seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    """Identical config and seed produce byte-identical reports outside the
    timestamp region."""

    def check():
        config = ExperimentConfig(
            protocol="kem3-two-entropy", strategy="random-forge", n_e=8,
            trials=500, seed=seed,
        )
        first = build_report([run_experiment(config)], config=config)
        second = build_report([run_experiment(config)], config=config)
        import json

        a = json.dumps(report_content(first), sort_keys=True).encode()
        b = json.dumps(report_content(second), sort_keys=True).encode()
        if a != b:
            return False, "content regions differ"
        if first["content_sha256"] != second["content_sha256"]:
            return False, "content hashes differ"
        return True, f"content sha256 {first['content_sha256'][:16]}... stable"

    return _timed(10, "byte-identical reports for identical config", check)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_criteria(
    numbers: list[int] | None = None, seed: int = ACCEPTANCE_SEED, echo=print
) -> list[CriterionResult]:
    results = []
    for number in numbers or sorted(CRITERIA):
        if number not in CRITERIA:
            raise ValueError(f"no criterion {number}")
        result = CRITERIA[number](seed)
        results.append(result)
        if echo:
            echo(result.line())
    return results
