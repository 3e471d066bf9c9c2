"""Man-in-the-middle strategies against the shipped protocols.

Two families:

  demonstrations   the 2-pass protocols fall: an entropy-collision keypair
                   loop against the 2-pass exchange, and the same-key,
                   replica, and combined attacks against the 2-pass
                   encapsulation protocol

  negative tests   single-shot substitutions (random forge) and third-party
                   redirects against the 3/4/6-pass protocols, which succeed
                   only at the residual n_e-bit collision rate

Every adversarial decision is made through the AdversaryView facade, i.e.
from wire traffic, public parameters, and values the attacker computed
itself. World access outside the view is measurement plumbing: starting the
session under attack and reading final records for the outcome report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .model import AdversaryView, MessageEnvelope, Model, SessionId, SessionStatus, World
from .primitives import (
    Encapsulation,
    EntropyValue,
    KemMode,
    commit,
    decode_fields,
    encode_fields,
    entropy,
    kem_decaps_star,
    kem_encaps,
    kem_encaps_star,
    kem_keygen,
    kex_agree,
    kex_keygen,
    pke_encrypt,
)
from .protocols import ProtocolKind

DEFENDED_KINDS = (
    ProtocolKind.KEX3,
    ProtocolKind.KEM3_TWO_ENTROPY,
    ProtocolKind.KEM3_COMMIT,
    ProtocolKind.KEM4,
    ProtocolKind.KEM6,
)


class AttackStrategy(Enum):
    KEX2_ENTROPY_COLLISION = "kex2-collision"
    KEM_SAME_KEY = "kem-same-key"
    KEM2_REPLICA = "kem2-replica"
    KEM2_COMBINED = "kem2-combined"
    RANDOM_FORGE = "random-forge"
    REDIRECT = "redirect"


# success criterion per strategy: collision attacks break the entropy check,
# the replica completes a run whose two ends hold different keys, and the
# same-key family leaves one key shared by all three parties
SUCCESS_CRITERIA = {
    AttackStrategy.KEX2_ENTROPY_COLLISION: "entropy-match",
    AttackStrategy.KEM_SAME_KEY: "same-key-three-parties",
    AttackStrategy.KEM2_REPLICA: "key-mismatch-undetected",
    AttackStrategy.KEM2_COMBINED: "same-key-three-parties",
    AttackStrategy.RANDOM_FORGE: "entropy-match",
    AttackStrategy.REDIRECT: "entropy-match",
}


@dataclass
class AttackOutcome:
    success: bool
    criterion: str
    iterations: int
    transcripts: dict | None = None
    detail: dict = field(default_factory=dict)


@dataclass
class AttackAggregate:
    strategy: AttackStrategy
    protocol: ProtocolKind
    trials: int
    successes: int
    iterations: list[int]
    details: list[dict] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def _require(condition: bool, reason: str):
    if not condition:
        raise ValueError(reason)


def _transcripts(world: World, *ends: tuple[bytes, SessionId]) -> dict:
    out = {}
    for party, sid in ends:
        record = world.session_record(party, sid)
        out[party.decode("latin-1")] = [
            {k: e[k] for k in ("event", "labels", "digest") if k in e}
            for e in record.events
        ]
    return out


def _kex2_entropy(view, receiver, pka_raw, pkb_raw, key) -> EntropyValue:
    return entropy(
        receiver,
        [("pka", pka_raw), ("pkb", pkb_raw), ("key", key.key)],
        view.cfg.n_e,
    )


def _kem2_entropy(view, pk_raw, ct_raw, key) -> EntropyValue:
    if view.cfg.kem2_key_only_entropy:
        elements = [("key", key.key)]
    else:
        elements = [("pk", pk_raw), ("ct", ct_raw), ("key", key.key)]
    return entropy(b"", elements, view.cfg.n_e)


# ---------------------------------------------------------------------------
# 2-pass key exchange: keypair collision loop
# ---------------------------------------------------------------------------

def attack_kex2_collision(world: World, budget: int) -> AttackOutcome:
    """Substitute both public elements and loop over keypairs toward the
    initiator until the two sides' short digests collide."""
    _require(world.kind is ProtocolKind.KEX2, "collision loop targets the 2-pass exchange")
    _require(world.model is Model.UM, "attack requires the unauthenticated model")
    criterion = SUCCESS_CRITERIA[AttackStrategy.KEX2_ENTROPY_COLLISION]

    sid = world.start_session(b"alice", b"bob")
    view = AdversaryView(world)
    g = view.cfg.group

    env1 = view.pending()[0]
    (pka_raw,) = [v for _, v in decode_fields(env1.payload)]
    pka = g.decode_element(pka_raw)
    receiver = env1.receiver if view.cfg.include_receiver_identity else b""

    toward_bob = kex_keygen(g, view.rng)
    toward_bob_raw = g.encode_element(toward_bob.public)
    view.modify(env1, encode_fields([("pka", toward_bob_raw)]))

    env2 = view.pending()[0]
    (pkb_raw,) = [v for _, v in decode_fields(env2.payload)]
    pkb = g.decode_element(pkb_raw)
    key_eb = kex_agree(toward_bob, pkb, g)
    e_bob = _kex2_entropy(view, receiver, toward_bob_raw, pkb_raw, key_eb)

    found = None
    iterations = 0
    while iterations < budget:
        iterations += 1
        candidate = kex_keygen(g, view.rng)
        candidate_raw = g.encode_element(candidate.public)
        key_ea = kex_agree(candidate, pka, g)
        if _kex2_entropy(view, receiver, pka_raw, candidate_raw, key_ea) == e_bob:
            found = candidate_raw
            break
    if found is None:
        view.drop(env2)
        return AttackOutcome(False, criterion, iterations)

    view.modify(env2, encode_fields([("pkb", found)]))
    verdict = view.verify(b"alice", sid, b"bob", sid)
    return AttackOutcome(
        verdict == "accept",
        criterion,
        iterations,
        transcripts=_transcripts(world, (b"alice", sid), (b"bob", sid)),
    )


# ---------------------------------------------------------------------------
# 2-pass encapsulation: same key on all three ends
# ---------------------------------------------------------------------------

def attack_kem_same_key(world: World) -> AttackOutcome:
    """Swap in the attacker's public key, decapsulate the responder's secret,
    and re-encapsulate the exact same secret toward the initiator."""
    _require(world.kind is ProtocolKind.KEM2, "same-key attack targets the 2-pass encapsulation")
    _require(world.model is Model.UM, "attack requires the unauthenticated model")
    criterion = SUCCESS_CRITERIA[AttackStrategy.KEM_SAME_KEY]

    sid = world.start_session(b"alice", b"bob")
    view = AdversaryView(world)
    g = view.cfg.group

    env1 = view.pending()[0]
    (pka_raw,) = [v for _, v in decode_fields(env1.payload)]
    pka = g.decode_element(pka_raw)
    own = kem_keygen(g, view.rng)
    view.modify(env1, encode_fields([("pk", g.encode_element(own.public))]))

    env2 = view.pending()[0]
    (ct_raw,) = [v for _, v in decode_fields(env2.payload)]
    x, attacker_key = kem_decaps_star(own.secret, Encapsulation.decode(ct_raw, g), g)
    ct_e, _ = kem_encaps_star(pka, x, g, view.cfg.kem_mode, view.rng)
    view.modify(env2, encode_fields([("ct", ct_e.encode(g))]))

    verdict = view.verify(b"alice", sid, b"bob", sid)
    alice = world.session_record(b"alice", sid)
    bob = world.session_record(b"bob", sid)
    all_equal = (
        alice.kappa is not None
        and alice.kappa == bob.kappa == attacker_key.key
    )
    return AttackOutcome(
        verdict == "accept" and all_equal,
        criterion,
        iterations=1,
        transcripts=_transcripts(world, (b"alice", sid), (b"bob", sid)),
        detail={"all_three_keys_equal": all_equal},
    )


# ---------------------------------------------------------------------------
# 2-pass encapsulation: replica / combined collision loops
# ---------------------------------------------------------------------------

def attack_kem2_replica(
    world: World, budget: int, reuse_secret: bool = False
) -> AttackOutcome:
    """Loop fresh encapsulations toward the initiator until the short digest
    matches the responder side. With reuse_secret the attacker re-encapsulates
    the responder's own secret (probabilistic mode only), so a success also
    leaves both ends with the same key."""
    _require(world.kind is ProtocolKind.KEM2, "replica attack targets the 2-pass encapsulation")
    _require(world.model is Model.UM, "attack requires the unauthenticated model")
    _require(
        not world.cfg.kem2_key_only_entropy,
        "replica loop needs the public values in the entropy input",
    )
    strategy = AttackStrategy.KEM2_COMBINED if reuse_secret else AttackStrategy.KEM2_REPLICA
    if reuse_secret:
        _require(
            world.cfg.kem_mode is KemMode.PROBABILISTIC,
            "re-encapsulating a fixed secret needs a probabilistic scheme",
        )
    criterion = SUCCESS_CRITERIA[strategy]

    sid = world.start_session(b"alice", b"bob")
    view = AdversaryView(world)
    g = view.cfg.group

    env1 = view.pending()[0]
    (pka_raw,) = [v for _, v in decode_fields(env1.payload)]
    pka = g.decode_element(pka_raw)
    own = kem_keygen(g, view.rng)
    own_raw = g.encode_element(own.public)
    view.modify(env1, encode_fields([("pk", own_raw)]))

    env2 = view.pending()[0]
    (ct_raw,) = [v for _, v in decode_fields(env2.payload)]
    x_b, key_be = kem_decaps_star(own.secret, Encapsulation.decode(ct_raw, g), g)
    e_bob = _kem2_entropy(view, own_raw, ct_raw, key_be)

    found = None
    iterations = 0
    while iterations < budget:
        iterations += 1
        if reuse_secret:
            ct_e, key_ea = kem_encaps_star(pka, x_b, g, KemMode.PROBABILISTIC, view.rng)
        else:
            ct_e, key_ea, _ = kem_encaps(pka, g, view.cfg.kem_mode, view.rng)
        if _kem2_entropy(view, pka_raw, ct_e.encode(g), key_ea) == e_bob:
            found = (ct_e, key_ea)
            break
    if found is None:
        view.drop(env2)
        return AttackOutcome(False, criterion, iterations)

    ct_e, key_ea = found
    view.modify(env2, encode_fields([("ct", ct_e.encode(g))]))
    verdict = view.verify(b"alice", sid, b"bob", sid)
    alice = world.session_record(b"alice", sid)
    bob = world.session_record(b"bob", sid)
    return AttackOutcome(
        verdict == "accept",
        criterion,
        iterations,
        transcripts=_transcripts(world, (b"alice", sid), (b"bob", sid)),
        detail={
            "initiator_key_equals_responder_key": (
                alice.kappa is not None and alice.kappa == bob.kappa
            ),
        },
    )


# ---------------------------------------------------------------------------
# defended protocols: single-shot substitution at the committed point
# ---------------------------------------------------------------------------

def forge_trial(world: World) -> AttackOutcome:
    """Substitute a coherent forgery at the one undetermined point of the
    flow and hope the n_e-bit digests collide."""
    kind = world.kind
    criterion = SUCCESS_CRITERIA[AttackStrategy.RANDOM_FORGE]
    sid = world.start_session(b"alice", b"bob")
    view = AdversaryView(world)
    g = view.cfg.group

    def fields(env: MessageEnvelope) -> dict:
        return dict(decode_fields(env.payload))

    if kind is ProtocolKind.KEX3:
        env1 = view.pending()[0]  # commitment to the responder's element
        own = kex_keygen(g, view.rng)
        c_e, d_e = commit(g.encode_element(own.public), view.rng)
        view.modify(env1, encode_fields([("com", c_e.encode())]))
        view.deliver(view.pending()[0])  # peer's public element, untouched
        env3 = view.pending()[0]
        view.modify(env3, encode_fields([("open", d_e.encode())]))

    elif kind is ProtocolKind.KEM3_TWO_ENTROPY:
        env1 = view.pending()[0]  # commitment to the nonce
        c_e, d_e = commit(view.rng.randbytes(32), view.rng)
        view.modify(env1, encode_fields([("com", c_e.encode())]))
        view.deliver(view.pending()[0])
        env3 = view.pending()[0]
        ct_raw = fields(env3)["ct"]  # keep the encapsulation, swap the opening
        view.modify(env3, encode_fields([("ct", ct_raw), ("open", d_e.encode())]))

    elif kind is ProtocolKind.KEM3_COMMIT:
        env1 = view.pending()[0]  # commitment to the encapsulated secret
        x_e = pow(g.g, view.rng.randrange(1, g.q + 1), g.p)
        c_e, d_e = commit(g.encode_element(x_e), view.rng)
        view.modify(env1, encode_fields([("com", c_e.encode())]))
        env2 = view.pending()[0]
        pka = g.decode_element(fields(env2)["pk"])
        view.deliver(env2)
        env3 = view.pending()[0]
        ct_e, _ = kem_encaps_star(pka, x_e, g, view.cfg.kem_mode, view.rng)
        ctd_e = pke_encrypt(pka, g, d_e.blinder, view.rng)
        view.modify(
            env3, encode_fields([("ct", ct_e.encode(g)), ("ctd", ctd_e)])
        )

    elif kind is ProtocolKind.KEM4:
        env1 = view.pending()[0]
        pk = g.decode_element(fields(env1)["pk"])
        view.deliver(env1)
        env2 = view.pending()[0]  # (committed encapsulation, challenge)
        ct_e, _, _ = kem_encaps(pk, g, view.cfg.kem_mode, view.rng)
        c_e, d_e = commit(ct_e.encode(g), view.rng)
        view.modify(
            env2,
            encode_fields([("com_ct", c_e.encode()), ("chal_b", fields(env2)["chal_b"])]),
        )
        view.deliver(view.pending()[0])
        env4 = view.pending()[0]
        view.modify(env4, encode_fields([("open_ct", d_e.encode())]))

    elif kind is ProtocolKind.KEM6:
        env1 = view.pending()[0]
        pk = g.decode_element(fields(env1)["pk"])
        view.deliver(env1)
        for _ in range(2):  # challenge and opening of the first transfer
            view.deliver(view.pending()[0])
        env4 = view.pending()[0]  # commitment to the encapsulation
        ct_e, _, _ = kem_encaps(pk, g, view.cfg.kem_mode, view.rng)
        c_e, d_e = commit(ct_e.encode(g), view.rng)
        view.modify(env4, encode_fields([("com_ct", c_e.encode())]))
        view.deliver(view.pending()[0])
        env6 = view.pending()[0]
        view.modify(env6, encode_fields([("open_ct", d_e.encode())]))

    else:
        raise ValueError(f"no forge strategy for {kind.value}")

    initiator = world.session_record(b"alice", sid)
    responder = world.session_record(b"bob", sid)
    if SessionStatus.ABORTED in (initiator.status, responder.status):
        return AttackOutcome(False, criterion, iterations=1, detail={"aborted": True})
    verdict = view.verify(b"alice", sid, b"bob", sid)
    return AttackOutcome(verdict == "accept", criterion, iterations=1)


def attack_random_forge(world: World, kind: ProtocolKind, trials: int) -> AttackAggregate:
    _require(kind in DEFENDED_KINDS, f"forge targets the defended protocols, not {kind.value}")
    _require(world.kind is kind, "world was built for a different protocol")
    _require(world.model is Model.UM, "attack requires the unauthenticated model")
    successes = 0
    iterations = []
    for _ in range(trials):
        world.reset_sessions()
        outcome = forge_trial(world)
        successes += outcome.success
        iterations.append(outcome.iterations)
    return AttackAggregate(
        AttackStrategy.RANDOM_FORGE, kind, trials, successes, iterations
    )


# ---------------------------------------------------------------------------
# redirect: unmodified flow, wrong destination
# ---------------------------------------------------------------------------

def redirect_trial(world: World) -> AttackOutcome:
    """Deliver the starter's flow, unmodified, to a third party instead of
    the intended peer, relabeling envelopes so both ends stay in-session."""
    criterion = SUCCESS_CRITERIA[AttackStrategy.REDIRECT]
    sid = world.start_session(b"alice", b"bob")
    redirected = SessionId(b"alice", b"carol", sid.nonce)
    view = AdversaryView(world)

    while view.pending():
        env = view.pending()[0]
        if env.sender == b"alice":
            view.inject(
                MessageEnvelope(b"alice", b"carol", redirected, env.seq, env.payload)
            )
        else:  # carol's replies, presented to alice as if from bob
            view.inject(MessageEnvelope(b"bob", b"alice", sid, env.seq, env.payload))
        view.drop(env)

    alice = world.session_record(b"alice", sid)
    carol = world.session_record(b"carol", redirected)
    if SessionStatus.ABORTED in (alice.status, carol.status):
        return AttackOutcome(False, criterion, iterations=1, detail={"aborted": True})
    verdict = view.verify(b"alice", sid, b"carol", redirected)
    return AttackOutcome(verdict == "accept", criterion, iterations=1)


def attack_redirect(world: World, kind: ProtocolKind, trials: int) -> AttackAggregate:
    _require(world.kind is kind, "world was built for a different protocol")
    _require(world.model is Model.UM, "attack requires the unauthenticated model")
    _require(
        b"carol" in world.parties, "redirect needs a third party named carol"
    )
    successes = 0
    for _ in range(trials):
        world.reset_sessions()
        successes += redirect_trial(world).success
    return AttackAggregate(
        AttackStrategy.REDIRECT, kind, trials, successes, [1] * trials
    )
