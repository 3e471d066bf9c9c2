"""Protocol state machines.

Each machine implements one side (the figure's left or right column) of a
message flow, advancing on incoming payloads and emitting outgoing ones.
Payloads are strict TLV layouts; a schema mismatch or a rejected commitment
opening aborts the session. Machines expose their session-entropy values and
session key once computed; comparing entropies is the out-of-band
verification executed by the scheduler, not by the machines.

Flows (arrows show wire messages; entropy receivers in brackets):

  mt-auth            A: com(m)  ->  B             3 msgs, E_A [B]
                     A  <-  challenge N
                     A: opening ->  B

  kex2               A: pk_a -> B, B: pk_b -> A   2 msgs, E [B]
  kex3               B: com(pk_b) -> A            3 msgs, E_B [A]
                     A: pk_a -> B
                     B: opening -> A

  kem2               A: pk -> B, B: ct -> A       2 msgs, E [none]
  kem3-two-entropy   B: com(N) -> A               3 msgs, E_B1 + E_B2 [A]
                     A: pk -> B
                     B: (ct, opening) -> A

  kem3-commit        B: com(x) -> A               3 msgs, E [A]
                     A: pk -> B
                     B: (ct, enc(blinder)) -> A, abort unless x reopens

  kem4               A: (pk, com(m)) -> B         4 msgs, E_A [B], E_B [A]
                     B: (com(ct), N_B) -> A
                     A: (open(m), N_A) -> B
                     B: open(ct) -> A

  kem6               the kem4 exchange unrolled into two 3-message
                     authenticated transfers (6 msgs, same entropies)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .primitives import (
    Commitment,
    DIGEST_SIZE,
    Encapsulation,
    EntropyValue,
    GroupParams,
    KemMode,
    MalformedElementError,
    Opening,
    REJECT,
    SharedKey,
    SizeError,
    TOY256,
    commit,
    encode_fields,
    entropy,
    expect_fields,
    kem_decaps,
    kem_decaps_star,
    kem_encaps,
    kem_encaps_star,
    kem_keygen,
    kex_agree,
    kex_keygen,
    message_key,
    open_commitment,
    pke_decrypt,
    pke_encrypt,
)
from .rng import HashDrbg

NONCE_SIZE = 32  # random values N, N_A, N_B and m are all 32 bytes


class ProtocolKind(Enum):
    MT_AUTH = "mt-auth"
    KEX2 = "kex2"
    KEX3 = "kex3"
    KEM2 = "kem2"
    KEM3_TWO_ENTROPY = "kem3-two-entropy"
    KEM3_COMMIT = "kem3-commit"
    KEM4 = "kem4"
    KEM6 = "kem6"


class Side(Enum):
    """Figure column: A is the left party, B the right party."""

    A = "A"
    B = "B"

    @property
    def other(self) -> "Side":
        return Side.B if self is Side.A else Side.A


MESSAGE_COUNTS = {
    ProtocolKind.MT_AUTH: 3,
    ProtocolKind.KEX2: 2,
    ProtocolKind.KEX3: 3,
    ProtocolKind.KEM2: 2,
    ProtocolKind.KEM3_TWO_ENTROPY: 3,
    ProtocolKind.KEM3_COMMIT: 3,
    ProtocolKind.KEM4: 4,
    ProtocolKind.KEM6: 6,
}

# Which side sends the first wire message.
STARTING_SIDE = {
    ProtocolKind.MT_AUTH: Side.A,
    ProtocolKind.KEX2: Side.A,
    ProtocolKind.KEX3: Side.B,
    ProtocolKind.KEM2: Side.A,
    ProtocolKind.KEM3_TWO_ENTROPY: Side.B,
    ProtocolKind.KEM3_COMMIT: Side.B,
    ProtocolKind.KEM4: Side.A,
    ProtocolKind.KEM6: Side.A,
}

# Which side's identity each entropy value binds (None: the flow carries no
# receiver identity and the entropy is computed over elements alone).
ENTROPY_RECEIVER_SIDE: dict[ProtocolKind, dict[str, Optional[Side]]] = {
    ProtocolKind.MT_AUTH: {"E_A": Side.B},
    ProtocolKind.KEX2: {"E": Side.B},
    ProtocolKind.KEX3: {"E_B": Side.A},
    ProtocolKind.KEM2: {"E": None},
    ProtocolKind.KEM3_TWO_ENTROPY: {"E_B1": Side.A, "E_B2": Side.A},
    ProtocolKind.KEM3_COMMIT: {"E": Side.A},
    ProtocolKind.KEM4: {"E_A": Side.B, "E_B": Side.A},
    ProtocolKind.KEM6: {"E_A": Side.B, "E_B": Side.A},
}

# Message index (1-based) at which each entropy element becomes determined,
# or "derived"/"local" for values computed from earlier ones. "main" entropy
# values must not depend on anything determined only by the final message;
# secondary values exist precisely to cover the final message.
ENTROPY_PROVENANCE: dict[ProtocolKind, dict[str, dict]] = {
    ProtocolKind.MT_AUTH: {
        "E_A": {"main": True, "elements": {"com": 1, "chal": 2, "msg": 1}},
    },
    ProtocolKind.KEX2: {
        "E": {"main": True, "elements": {"pka": 1, "pkb": 2, "key": "derived"}},
    },
    ProtocolKind.KEX3: {
        "E_B": {"main": True, "elements": {"pka": 2, "pkb": 1, "com": 1}},
    },
    ProtocolKind.KEM2: {
        "E": {"main": True, "elements": {"pk": 1, "ct": 2, "key": "derived"}},
    },
    ProtocolKind.KEM3_TWO_ENTROPY: {
        "E_B1": {"main": True, "elements": {"nonce": 1, "pk": 2, "com": 1}},
        "E_B2": {"main": False, "elements": {"ct": 3, "key": "derived"}},
    },
    ProtocolKind.KEM3_COMMIT: {
        "E": {"main": True, "elements": {"pk": 2, "com": 1, "key": "derived"}},
    },
    ProtocolKind.KEM4: {
        "E_A": {"main": True, "elements": {"com": 1, "chal": 2, "msg": 1, "pk": 1}},
        "E_B": {"main": True, "elements": {"com": 2, "chal": 3, "msg": 2}},
    },
    ProtocolKind.KEM6: {
        "E_A": {"main": True, "elements": {"com": 1, "chal": 2, "msg": 1, "pk": 1}},
        "E_B": {"main": True, "elements": {"com": 4, "chal": 5, "msg": 4}},
    },
}


class ProtocolError(Exception):
    """Schema violation, malformed element, rejected opening, or abort."""


@dataclass
class ProtocolConfig:
    group: GroupParams = TOY256
    n_e: int = 16
    kem_mode: KemMode = KemMode.DETERMINISTIC
    # kem2 only: drop the public values from the entropy input, mirroring the
    # key-only digest variant (the same-key attack target).
    kem2_key_only_entropy: bool = False
    # negative-control switch: compute entropies without receiver identities
    include_receiver_identity: bool = True


class Machine:
    """One party's state machine for a protocol run."""

    kind: ProtocolKind

    def __init__(
        self,
        cfg: ProtocolConfig,
        side: Side,
        self_id: bytes,
        peer_id: bytes,
        rng: HashDrbg,
        message: bytes | None = None,
    ):
        self.cfg = cfg
        self.side = side
        self.self_id = self_id
        self.peer_id = peer_id
        self.rng = rng
        self.message = message
        self.done = False
        self.aborted = False
        self.abort_reason: str | None = None
        self.entropies: dict[str, EntropyValue] = {}
        self.key: SharedKey | None = None
        self.delivered_message: bytes | None = None
        self._step = 0

    # -- helpers -----------------------------------------------------------

    def _receiver_identity(self, receiver_side: Optional[Side]) -> bytes:
        if receiver_side is None or not self.cfg.include_receiver_identity:
            return b""
        return self.self_id if receiver_side is self.side else self.peer_id

    def _entropy(self, label: str, elements: list[tuple[str, bytes]]) -> None:
        receiver_side = ENTROPY_RECEIVER_SIDE[self.kind][label]
        self.entropies[label] = entropy(
            self._receiver_identity(receiver_side), elements, self.cfg.n_e
        )

    def _fail(self, reason: str):
        self.aborted = True
        self.abort_reason = reason
        raise ProtocolError(reason)

    def _expect(self, payload: bytes, labels: list[str]) -> list[bytes]:
        try:
            return expect_fields(payload, labels)
        except ValueError as exc:
            self._fail(f"step {self._step}: {exc}")

    def _decode_element(self, raw: bytes) -> int:
        try:
            return self.cfg.group.decode_element(raw)
        except MalformedElementError as exc:
            self._fail(str(exc))

    def _decode_opening(self, raw: bytes) -> Opening:
        try:
            return Opening.decode(raw)
        except ValueError as exc:
            self._fail(str(exc))

    def _open_or_abort(self, c: Commitment, d: Opening) -> bytes:
        value = open_commitment(c, d)
        if value is REJECT:
            self._fail("commitment opening rejected")
        return value

    # -- public surface ----------------------------------------------------

    def advance(self, incoming: bytes | None = None) -> bytes | None:
        """Process a start signal (None) or an incoming payload.

        Returns the outgoing payload, or None when this side has nothing to
        send. Raises ProtocolError (and marks the machine aborted) on any
        schema or verification failure.
        """
        if self.aborted:
            raise ProtocolError("session already aborted")
        if self.done:
            self._fail("message delivered to a finished session")
        if incoming is None and (self._step != 0 or self.side is not STARTING_SIDE[self.kind]):
            self._fail("unexpected start signal")
        if incoming is not None and self._step == 0 and self.side is STARTING_SIDE[self.kind]:
            self._fail("starting side expected a start signal")
        try:
            out = self._advance(incoming)
        except ProtocolError:
            raise
        except (MalformedElementError, SizeError, ValueError) as exc:
            self._fail(str(exc))
        self._step += 1
        return out

    def _advance(self, incoming: bytes | None) -> bytes | None:
        raise NotImplementedError

    def state_snapshot(self) -> dict:
        """Ephemeral session state, as exposed by a state-reveal query."""
        skip = {"cfg", "rng", "entropies"}
        out = {"kind": self.kind.value, "side": self.side.value, "step": self._step}
        for name, value in self.__dict__.items():
            if name in skip or name in out:
                continue
            if isinstance(value, bytes):
                out[name] = value.hex()
            elif isinstance(value, int) and not isinstance(value, bool):
                out[name] = hex(value)
        return out


def _mt_entropy_elements(
    c: Commitment, challenge: bytes, message: bytes, extras: list[tuple[str, bytes]] = ()
) -> list[tuple[str, bytes]]:
    """Canonical element list for one authenticated transfer."""
    return [("com", c.digest), ("chal", challenge), ("msg", message)] + list(extras)


# ---------------------------------------------------------------------------
# mt-auth
# ---------------------------------------------------------------------------

class MtAuthMachine(Machine):
    """Authenticated transfer of one message: commit, challenge, open."""

    kind = ProtocolKind.MT_AUTH

    def _advance(self, incoming):
        if self.side is Side.A:
            if self._step == 0:
                self._m = self.message if self.message is not None else self.rng.randbytes(NONCE_SIZE)
                self._c, self._d = commit(self._m, self.rng)
                return encode_fields([("com", self._c.encode())])
            (raw_n,) = self._expect(incoming, ["chal"])
            self._entropy("E_A", _mt_entropy_elements(self._c, raw_n, self._m))
            self.key = message_key(self._m)
            self.done = True
            return encode_fields([("open", self._d.encode())])
        # Side.B
        if self._step == 0:
            (raw_c,) = self._expect(incoming, ["com"])
            self._c = Commitment(raw_c)
            self._n = self.rng.randbytes(NONCE_SIZE)
            return encode_fields([("chal", self._n)])
        (raw_d,) = self._expect(incoming, ["open"])
        m = self._open_or_abort(self._c, self._decode_opening(raw_d))
        self._entropy("E_A", _mt_entropy_elements(self._c, self._n, m))
        self.delivered_message = m
        self.key = message_key(m)
        self.done = True
        return None


# ---------------------------------------------------------------------------
# kex2 / kex3
# ---------------------------------------------------------------------------

class Kex2Machine(Machine):
    kind = ProtocolKind.KEX2

    def _kex2_entropy(self, pka: int, pkb: int, key: SharedKey):
        g = self.cfg.group
        self._entropy(
            "E",
            [
                ("pka", g.encode_element(pka)),
                ("pkb", g.encode_element(pkb)),
                ("key", key.key),
            ],
        )

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.A:
            if self._step == 0:
                self._pair = kex_keygen(g, self.rng)
                return encode_fields([("pka", g.encode_element(self._pair.public))])
            (raw,) = self._expect(incoming, ["pkb"])
            pkb = self._decode_element(raw)
            self.key = kex_agree(self._pair, pkb, g)
            self._kex2_entropy(self._pair.public, pkb, self.key)
            self.done = True
            return None
        (raw,) = self._expect(incoming, ["pka"])
        pka = self._decode_element(raw)
        self._pair = kex_keygen(g, self.rng)
        self.key = kex_agree(self._pair, pka, g)
        self._kex2_entropy(pka, self._pair.public, self.key)
        self.done = True
        return encode_fields([("pkb", g.encode_element(self._pair.public))])


class Kex3Machine(Machine):
    """Responder commits to its public element before seeing the peer's."""

    kind = ProtocolKind.KEX3

    def _kex3_entropy(self, pka: int, pkb: int, c: Commitment):
        g = self.cfg.group
        self._entropy(
            "E_B",
            [
                ("pka", g.encode_element(pka)),
                ("pkb", g.encode_element(pkb)),
                ("com", c.digest),
            ],
        )

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.B:
            if self._step == 0:
                self._pair = kex_keygen(g, self.rng)
                self._c, self._d = commit(g.encode_element(self._pair.public), self.rng)
                return encode_fields([("com", self._c.encode())])
            (raw,) = self._expect(incoming, ["pka"])
            pka = self._decode_element(raw)
            self.key = kex_agree(self._pair, pka, g)
            self._kex3_entropy(pka, self._pair.public, self._c)
            self.done = True
            return encode_fields([("open", self._d.encode())])
        # Side.A
        if self._step == 0:
            (raw_c,) = self._expect(incoming, ["com"])
            self._c = Commitment(raw_c)
            self._pair = kex_keygen(g, self.rng)
            return encode_fields([("pka", g.encode_element(self._pair.public))])
        (raw_d,) = self._expect(incoming, ["open"])
        pkb_raw = self._open_or_abort(self._c, self._decode_opening(raw_d))
        pkb = self._decode_element(pkb_raw)
        self.key = kex_agree(self._pair, pkb, g)
        self._kex3_entropy(self._pair.public, pkb, self._c)
        self.done = True
        return None


# ---------------------------------------------------------------------------
# kem2
# ---------------------------------------------------------------------------

class Kem2Machine(Machine):
    kind = ProtocolKind.KEM2

    def _kem2_entropy(self, pk: int, ct: Encapsulation, key: SharedKey):
        if self.cfg.kem2_key_only_entropy:
            elements = [("key", key.key)]
        else:
            g = self.cfg.group
            elements = [
                ("pk", g.encode_element(pk)),
                ("ct", ct.encode(g)),
                ("key", key.key),
            ]
        self._entropy("E", elements)

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.A:
            if self._step == 0:
                self._pair = kem_keygen(g, self.rng)
                return encode_fields([("pk", g.encode_element(self._pair.public))])
            (raw,) = self._expect(incoming, ["ct"])
            ct = Encapsulation.decode(raw, g)
            self.key = kem_decaps(self._pair.secret, ct, g)
            self._kem2_entropy(self._pair.public, ct, self.key)
            self.done = True
            return None
        (raw,) = self._expect(incoming, ["pk"])
        pk = self._decode_element(raw)
        ct, self.key, self._x = kem_encaps(pk, g, self.cfg.kem_mode, self.rng)
        self._kem2_entropy(pk, ct, self.key)
        self.done = True
        return encode_fields([("ct", ct.encode(g))])


# ---------------------------------------------------------------------------
# kem3 variants
# ---------------------------------------------------------------------------

class Kem3TwoEntropyMachine(Machine):
    """Responder commits to a nonce; two entropy values, verified together."""

    kind = ProtocolKind.KEM3_TWO_ENTROPY

    def _entropy_pair(self, n: bytes, pk: int, c: Commitment, ct: Encapsulation, key: SharedKey):
        g = self.cfg.group
        self._entropy(
            "E_B1",
            [("nonce", n), ("pk", g.encode_element(pk)), ("com", c.digest)],
        )
        self._entropy("E_B2", [("ct", ct.encode(g)), ("key", key.key)])

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.B:
            if self._step == 0:
                self._n = self.rng.randbytes(NONCE_SIZE)
                self._c, self._d = commit(self._n, self.rng)
                return encode_fields([("com", self._c.encode())])
            (raw,) = self._expect(incoming, ["pk"])
            pk = self._decode_element(raw)
            ct, self.key, _ = kem_encaps(pk, g, self.cfg.kem_mode, self.rng)
            self._entropy_pair(self._n, pk, self._c, ct, self.key)
            self.done = True
            return encode_fields([("ct", ct.encode(g)), ("open", self._d.encode())])
        # Side.A
        if self._step == 0:
            (raw_c,) = self._expect(incoming, ["com"])
            self._c = Commitment(raw_c)
            self._pair = kem_keygen(g, self.rng)
            return encode_fields([("pk", g.encode_element(self._pair.public))])
        raw_ct, raw_d = self._expect(incoming, ["ct", "open"])
        ct = Encapsulation.decode(raw_ct, g)
        self.key = kem_decaps(self._pair.secret, ct, g)
        n = self._open_or_abort(self._c, self._decode_opening(raw_d))
        self._entropy_pair(n, self._pair.public, self._c, ct, self.key)
        self.done = True
        return None


class Kem3CommitMachine(Machine):
    """Responder commits to the encapsulated secret itself.

    The commitment blinder travels encrypted under the initiator's public
    key; the initiator recomputes the secret from the encapsulation and
    aborts unless it reopens the commitment.
    """

    kind = ProtocolKind.KEM3_COMMIT

    def _commit_entropy(self, pk: int, c: Commitment, key: SharedKey):
        g = self.cfg.group
        self._entropy(
            "E",
            [("pk", g.encode_element(pk)), ("com", c.digest), ("key", key.key)],
        )

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.B:
            if self._step == 0:
                self._x = pow(g.g, self.rng.randrange(1, g.q + 1), g.p)
                self._c, self._d = commit(g.encode_element(self._x), self.rng)
                return encode_fields([("com", self._c.encode())])
            (raw,) = self._expect(incoming, ["pk"])
            pk = self._decode_element(raw)
            ct, self.key = kem_encaps_star(pk, self._x, g, self.cfg.kem_mode, self.rng)
            ct_d = pke_encrypt(pk, g, self._d.blinder, self.rng)
            self._commit_entropy(pk, self._c, self.key)
            self.done = True
            return encode_fields([("ct", ct.encode(g)), ("ctd", ct_d)])
        # Side.A
        if self._step == 0:
            (raw_c,) = self._expect(incoming, ["com"])
            self._c = Commitment(raw_c)
            self._pair = kem_keygen(g, self.rng)
            return encode_fields([("pk", g.encode_element(self._pair.public))])
        raw_ct, raw_ctd = self._expect(incoming, ["ct", "ctd"])
        blinder = pke_decrypt(self._pair.secret, g, raw_ctd)
        ct = Encapsulation.decode(raw_ct, g)
        x, self.key = kem_decaps_star(self._pair.secret, ct, g)
        if len(blinder) != 32:
            self._fail("recovered blinder has wrong length")
        reopened = open_commitment(self._c, Opening(g.encode_element(x), blinder))
        if reopened is REJECT:
            self._fail("decapsulated secret does not reopen the commitment")
        self._commit_entropy(self._pair.public, self._c, self.key)
        self.done = True
        return None


# ---------------------------------------------------------------------------
# kem4 / kem6
# ---------------------------------------------------------------------------

class Kem4Machine(Machine):
    kind = ProtocolKind.KEM4

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.A:
            if self._step == 0:
                self._pair = kem_keygen(g, self.rng)
                self._m = self.rng.randbytes(NONCE_SIZE)
                self._cm, self._dm = commit(self._m, self.rng)
                return encode_fields(
                    [
                        ("pk", g.encode_element(self._pair.public)),
                        ("com_m", self._cm.encode()),
                    ]
                )
            if self._step == 1:
                raw_cct, raw_nb = self._expect(incoming, ["com_ct", "chal_b"])
                self._cct = Commitment(raw_cct)
                self._na = self.rng.randbytes(NONCE_SIZE)
                self._entropy(
                    "E_A",
                    _mt_entropy_elements(
                        self._cm, raw_nb, self._m,
                        [("pk", g.encode_element(self._pair.public))],
                    ),
                )
                return encode_fields([("open_m", self._dm.encode()), ("chal_a", self._na)])
            (raw_dct,) = self._expect(incoming, ["open_ct"])
            ct_raw = self._open_or_abort(self._cct, self._decode_opening(raw_dct))
            ct = Encapsulation.decode(ct_raw, g)
            self.key = kem_decaps(self._pair.secret, ct, g)
            self._entropy("E_B", _mt_entropy_elements(self._cct, self._na, ct_raw))
            self.done = True
            return None
        # Side.B
        if self._step == 0:
            raw_pk, raw_cm = self._expect(incoming, ["pk", "com_m"])
            self._pk = self._decode_element(raw_pk)
            self._cm = Commitment(raw_cm)
            self._nb = self.rng.randbytes(NONCE_SIZE)
            ct, self.key, _ = kem_encaps(self._pk, g, self.cfg.kem_mode, self.rng)
            self._ct_raw = ct.encode(g)
            self._cct, self._dct = commit(self._ct_raw, self.rng)
            return encode_fields([("com_ct", self._cct.encode()), ("chal_b", self._nb)])
        raw_dm, raw_na = self._expect(incoming, ["open_m", "chal_a"])
        m = self._open_or_abort(self._cm, self._decode_opening(raw_dm))
        self._entropy(
            "E_A",
            _mt_entropy_elements(
                self._cm, self._nb, m, [("pk", g.encode_element(self._pk))]
            ),
        )
        self._entropy("E_B", _mt_entropy_elements(self._cct, raw_na, self._ct_raw))
        self.done = True
        return encode_fields([("open_ct", self._dct.encode())])


class Kem6Machine(Machine):
    """The kem4 exchange before message-piggybacking: two separate
    3-message authenticated transfers sharing one session."""

    kind = ProtocolKind.KEM6

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.A:
            if self._step == 0:
                self._pair = kem_keygen(g, self.rng)
                self._m = self.rng.randbytes(NONCE_SIZE)
                self._cm, self._dm = commit(self._m, self.rng)
                return encode_fields(
                    [
                        ("pk", g.encode_element(self._pair.public)),
                        ("com_m", self._cm.encode()),
                    ]
                )
            if self._step == 1:
                (raw_nb,) = self._expect(incoming, ["chal_b"])
                self._entropy(
                    "E_A",
                    _mt_entropy_elements(
                        self._cm, raw_nb, self._m,
                        [("pk", g.encode_element(self._pair.public))],
                    ),
                )
                return encode_fields([("open_m", self._dm.encode())])
            if self._step == 2:
                (raw_cct,) = self._expect(incoming, ["com_ct"])
                self._cct = Commitment(raw_cct)
                self._na = self.rng.randbytes(NONCE_SIZE)
                return encode_fields([("chal_a", self._na)])
            (raw_dct,) = self._expect(incoming, ["open_ct"])
            ct_raw = self._open_or_abort(self._cct, self._decode_opening(raw_dct))
            ct = Encapsulation.decode(ct_raw, g)
            self.key = kem_decaps(self._pair.secret, ct, g)
            self._entropy("E_B", _mt_entropy_elements(self._cct, self._na, ct_raw))
            self.done = True
            return None
        # Side.B
        if self._step == 0:
            raw_pk, raw_cm = self._expect(incoming, ["pk", "com_m"])
            self._pk = self._decode_element(raw_pk)
            self._cm = Commitment(raw_cm)
            self._nb = self.rng.randbytes(NONCE_SIZE)
            return encode_fields([("chal_b", self._nb)])
        if self._step == 1:
            (raw_dm,) = self._expect(incoming, ["open_m"])
            m = self._open_or_abort(self._cm, self._decode_opening(raw_dm))
            self._entropy(
                "E_A",
                _mt_entropy_elements(
                    self._cm, self._nb, m, [("pk", g.encode_element(self._pk))]
                ),
            )
            ct, self.key, _ = kem_encaps(self._pk, g, self.cfg.kem_mode, self.rng)
            self._ct_raw = ct.encode(g)
            self._cct, self._dct = commit(self._ct_raw, self.rng)
            return encode_fields([("com_ct", self._cct.encode())])
        (raw_na,) = self._expect(incoming, ["chal_a"])
        self._entropy("E_B", _mt_entropy_elements(self._cct, raw_na, self._ct_raw))
        self.done = True
        return encode_fields([("open_ct", self._dct.encode())])


# ---------------------------------------------------------------------------
# compiler: wrap each message of the 2-pass encapsulation protocol in an
# authenticated transfer
# ---------------------------------------------------------------------------

@dataclass
class CompiledProtocol:
    inner: ProtocolKind
    message_count: int
    build: Callable[..., Machine] = field(repr=False)


class _CompiledKem2Machine(Machine):
    """Mechanical composition: one authenticated-transfer leg per inner
    message, with the public key riding the first flight in clear and
    folded into that leg's entropy."""

    kind = ProtocolKind.KEM6

    def _advance(self, incoming):
        g = self.cfg.group
        if self.side is Side.A:
            if self._step == 0:
                self._pair = kem_keygen(g, self.rng)
                # artificial extra first-flight element: a random value is
                # what actually gets committed, the key rides alongside
                self._m = self.rng.randbytes(NONCE_SIZE)
                self._leg1_c, self._leg1_d = commit(self._m, self.rng)
                return encode_fields(
                    [
                        ("pk", g.encode_element(self._pair.public)),
                        ("com_m", self._leg1_c.encode()),
                    ]
                )
            if self._step == 1:
                (raw_nb,) = self._expect(incoming, ["chal_b"])
                self._entropy(
                    "E_A",
                    _mt_entropy_elements(
                        self._leg1_c, raw_nb, self._m,
                        [("pk", g.encode_element(self._pair.public))],
                    ),
                )
                return encode_fields([("open_m", self._leg1_d.encode())])
            if self._step == 2:
                (raw_cct,) = self._expect(incoming, ["com_ct"])
                self._leg2_c = Commitment(raw_cct)
                self._na = self.rng.randbytes(NONCE_SIZE)
                return encode_fields([("chal_a", self._na)])
            (raw_dct,) = self._expect(incoming, ["open_ct"])
            ct_raw = self._open_or_abort(self._leg2_c, self._decode_opening(raw_dct))
            # inner protocol consumes the authenticated message
            ct = Encapsulation.decode(ct_raw, g)
            self.key = kem_decaps(self._pair.secret, ct, g)
            self._entropy("E_B", _mt_entropy_elements(self._leg2_c, self._na, ct_raw))
            self.done = True
            return None
        # Side.B
        if self._step == 0:
            raw_pk, raw_cm = self._expect(incoming, ["pk", "com_m"])
            self._pk = self._decode_element(raw_pk)
            self._leg1_c = Commitment(raw_cm)
            self._nb = self.rng.randbytes(NONCE_SIZE)
            return encode_fields([("chal_b", self._nb)])
        if self._step == 1:
            (raw_dm,) = self._expect(incoming, ["open_m"])
            m = self._open_or_abort(self._leg1_c, self._decode_opening(raw_dm))
            self._entropy(
                "E_A",
                _mt_entropy_elements(
                    self._leg1_c, self._nb, m, [("pk", g.encode_element(self._pk))]
                ),
            )
            # leg 1 delivered: inner protocol emits its reply, leg 2 wraps it
            ct, self.key, _ = kem_encaps(self._pk, g, self.cfg.kem_mode, self.rng)
            self._ct_raw = ct.encode(g)
            self._leg2_c, self._leg2_d = commit(self._ct_raw, self.rng)
            return encode_fields([("com_ct", self._leg2_c.encode())])
        (raw_na,) = self._expect(incoming, ["chal_a"])
        self._entropy("E_B", _mt_entropy_elements(self._leg2_c, raw_na, self._ct_raw))
        self.done = True
        return encode_fields([("open_ct", self._leg2_d.encode())])


def compile_mt(inner: ProtocolKind) -> CompiledProtocol:
    """Wrap each message of the inner protocol in an authenticated transfer.

    Ships for the 2-pass encapsulation protocol only; the result is the
    6-message flow (3 messages per inner message).
    """
    if inner is not ProtocolKind.KEM2:
        raise ValueError(f"compiler supports kem2 as inner protocol, not {inner.value}")

    def build(cfg, side, self_id, peer_id, rng, message=None):
        return _CompiledKem2Machine(cfg, side, self_id, peer_id, rng, message)

    return CompiledProtocol(
        inner=inner,
        message_count=3 * MESSAGE_COUNTS[inner],
        build=build,
    )


_MACHINES = {
    ProtocolKind.MT_AUTH: MtAuthMachine,
    ProtocolKind.KEX2: Kex2Machine,
    ProtocolKind.KEX3: Kex3Machine,
    ProtocolKind.KEM2: Kem2Machine,
    ProtocolKind.KEM3_TWO_ENTROPY: Kem3TwoEntropyMachine,
    ProtocolKind.KEM3_COMMIT: Kem3CommitMachine,
    ProtocolKind.KEM4: Kem4Machine,
    ProtocolKind.KEM6: Kem6Machine,
}


def build_machine(
    kind: ProtocolKind,
    cfg: ProtocolConfig,
    side: Side,
    self_id: bytes,
    peer_id: bytes,
    rng: HashDrbg,
    message: bytes | None = None,
) -> Machine:
    return _MACHINES[kind](cfg, side, self_id, peer_id, rng, message)
