from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union
import json

import numpy as np

from src.authentication.crypto import Ciphertext, CryptoScheme, Signature, VirtualIdentity, get_scheme
from src.blockchain.bcn import BlockchainNetwork
from src.protocol.accounts import CpAccount, UserAccount
from src.utility.errors import DecryptionError, ProtocolViolation
from src.utility.logger import logger

NONCE_MODULUS = 2 ** 64
_VID_SIZE = 32
_NONCE_SIZE = 8


class AuthState(str, Enum):
    INIT = "Init"
    V1_SENT = "V1Sent"
    V2_SENT = "V2Sent"
    AUTHENTICATED = "Authenticated"
    FAILED = "Failed"


class FailureReason(str, Enum):
    UNKNOWN_VID = "UnknownVid"
    BAD_SIGNATURE = "BadSignature"
    BAD_NONCE = "BadNonce"
    BAD_CIPHERTEXT = "BadCiphertext"
    VID_MISMATCH = "VidMismatch"


@dataclass(frozen=True)
class V1:
    vid: VirtualIdentity
    nonce: int
    signature: Optional[Signature]


@dataclass(frozen=True)
class V2:
    vid: VirtualIdentity
    nonce_plus_1: int
    ciphertext: Ciphertext


@dataclass(frozen=True)
class V3:
    vid: VirtualIdentity
    nonce_plus_2: int
    ciphertext: Ciphertext


AuthMessage = Union[V1, V2, V3]

_ORDER = [AuthState.INIT, AuthState.V1_SENT, AuthState.V2_SENT, AuthState.AUTHENTICATED]


@dataclass
class AuthSession:
    """
    One side of a handshake.

    The user side walks Init -> V1Sent -> Authenticated, the CP side
    Init -> V2Sent -> Authenticated; either may drop to Failed. ``peer_public_key``
    is the CP key learned by the user, or the user key learned by the CP once
    the BCN resolved the vid.
    """

    session_id: str
    role: str
    vid: VirtualIdentity
    nonce: int
    state: AuthState = AuthState.INIT
    failure: Optional[FailureReason] = None
    peer_public_key: Optional[bytes] = None
    cp_id: Optional[str] = None

    @property
    def authenticated(self) -> bool:
        return self.state == AuthState.AUTHENTICATED

    def _advance(self, state: AuthState) -> None:
        if self.state == AuthState.FAILED or _ORDER.index(state) <= _ORDER.index(self.state):
            raise ProtocolViolation(f"Session {self.session_id}: illegal transition {self.state.value} -> {state.value}")
        self.state = state

    def _fail(self, reason: FailureReason) -> None:
        self.state = AuthState.FAILED
        self.failure = reason
        logger.warning(f"Handshake {self.session_id} ({self.role}) failed: {reason.value}")

    def _expect(self, state: AuthState) -> None:
        if self.state != state:
            raise ProtocolViolation(f"Session {self.session_id} is {self.state.value}, expected {state.value}")


def session_id_for(vid: VirtualIdentity, nonce: int) -> str:
    return f"{vid.hex()[:16]}-{nonce:016x}"


def draw_nonce(rng: np.random.Generator) -> int:
    return int.from_bytes(rng.bytes(_NONCE_SIZE), "big")


def _plus(nonce: int, k: int) -> int:
    return (nonce + k) % NONCE_MODULUS


def v1_message(vid: VirtualIdentity, nonce: int) -> bytes:
    return b"auth-v1|" + _pack(vid, nonce)


def _pack(vid: VirtualIdentity, nonce: int, tail: bytes = b"") -> bytes:
    return vid.vid + nonce.to_bytes(_NONCE_SIZE, "big") + tail


def _unpack(data: bytes) -> Tuple[VirtualIdentity, int, bytes]:
    head = _VID_SIZE + _NONCE_SIZE
    if len(data) < head:
        raise DecryptionError("Plaintext too short for (vid, nonce)")
    return VirtualIdentity(data[:_VID_SIZE]), int.from_bytes(data[_VID_SIZE:head], "big"), data[head:]


def auth_initiate(
    user: UserAccount,
    rng: np.random.Generator,
    scheme: CryptoScheme = None,
    nonce: int = None,
) -> Tuple[AuthSession, V1]:
    """
    Opens a session: draws a 64-bit nonce and signs (vid, nonce).

    Raises:
        ProtocolViolation: If the user is not registered.
    """
    if not user.registered:
        raise ProtocolViolation(f"User vid {user.vid.hex()[:12]} is not registered")
    scheme = scheme or get_scheme()
    nonce = draw_nonce(rng) if nonce is None else nonce % NONCE_MODULUS
    session = AuthSession(session_id=session_id_for(user.vid, nonce), role="user", vid=user.vid, nonce=nonce)
    signature = scheme.sign(user.keypair.private_key, v1_message(user.vid, nonce))
    session._advance(AuthState.V1_SENT)
    return session, V1(vid=user.vid, nonce=nonce, signature=signature)


def auth_respond(cp: CpAccount, v1: V1, bcn: BlockchainNetwork) -> Tuple[AuthSession, Optional[V2]]:
    """
    CP side of V1: the BCN resolves the vid, the CP checks the signature and answers with V2.

    Returns:
        (session, V2) on success, (failed session, None) otherwise.

    Raises:
        ProtocolViolation: If the CP is not registered.
    """
    if not cp.registered:
        raise ProtocolViolation(f"CP '{cp.cp_id}' is not registered")
    session = AuthSession(
        session_id=session_id_for(v1.vid, v1.nonce), role="cp", vid=v1.vid, nonce=v1.nonce, cp_id=cp.cp_id
    )
    user_public_key = bcn.lookup_vid(v1.vid)
    if user_public_key is None:
        session._fail(FailureReason.UNKNOWN_VID)
        return session, None
    if not bcn.scheme.verify(user_public_key, v1_message(v1.vid, v1.nonce), v1.signature):
        session._fail(FailureReason.BAD_SIGNATURE)
        return session, None

    session.peer_public_key = user_public_key
    nonce_plus_1 = _plus(v1.nonce, 1)
    ciphertext = bcn.scheme.encrypt(user_public_key, _pack(v1.vid, nonce_plus_1, cp.keypair.public_key))
    session._advance(AuthState.V2_SENT)
    return session, V2(vid=v1.vid, nonce_plus_1=nonce_plus_1, ciphertext=ciphertext)


def auth_confirm(
    user: UserAccount, session: AuthSession, v2: V2, scheme: CryptoScheme = None
) -> Tuple[AuthSession, Optional[V3]]:
    """
    User side of V2: opens the ciphertext, checks (vid, nonce+1) and learns the CP key.

    Raises:
        ProtocolViolation: If the session is not waiting for V2.
    """
    session._expect(AuthState.V1_SENT)
    scheme = scheme or get_scheme()
    try:
        vid, nonce_plus_1, cp_public_key = _unpack(scheme.decrypt(user.keypair.private_key, v2.ciphertext))
    except DecryptionError:
        session._fail(FailureReason.BAD_CIPHERTEXT)
        return session, None
    if vid != session.vid or v2.vid != session.vid:
        session._fail(FailureReason.VID_MISMATCH)
        return session, None
    expected = _plus(session.nonce, 1)
    if nonce_plus_1 != expected or v2.nonce_plus_1 != expected:
        session._fail(FailureReason.BAD_NONCE)
        return session, None

    session.peer_public_key = cp_public_key
    nonce_plus_2 = _plus(session.nonce, 2)
    ciphertext = scheme.encrypt(cp_public_key, _pack(session.vid, nonce_plus_2))
    session._advance(AuthState.AUTHENTICATED)
    return session, V3(vid=session.vid, nonce_plus_2=nonce_plus_2, ciphertext=ciphertext)


def auth_finalize(cp: CpAccount, session: AuthSession, v3: V3, scheme: CryptoScheme = None) -> AuthState:
    """
    CP side of V3: decrypts with the CP private key and compares (vid, nonce+2).

    Raises:
        ProtocolViolation: If the session is not waiting for V3.
    """
    session._expect(AuthState.V2_SENT)
    scheme = scheme or get_scheme()
    try:
        vid, nonce_plus_2, _ = _unpack(scheme.decrypt(cp.keypair.private_key, v3.ciphertext))
    except DecryptionError:
        session._fail(FailureReason.BAD_CIPHERTEXT)
        return session.state
    if vid != session.vid or v3.vid != session.vid:
        session._fail(FailureReason.VID_MISMATCH)
        return session.state
    expected = _plus(session.nonce, 2)
    if nonce_plus_2 != expected or v3.nonce_plus_2 != expected:
        session._fail(FailureReason.BAD_NONCE)
        return session.state
    session._advance(AuthState.AUTHENTICATED)
    return session.state


@dataclass(frozen=True)
class TranscriptEntry:
    tick: int
    session_id: str
    variant: str
    outcome: str

    def to_line(self) -> str:
        return json.dumps(
            {"tick": self.tick, "session": self.session_id, "variant": self.variant, "outcome": self.outcome},
            separators=(",", ":"),
        )


@dataclass
class HandshakeTranscript:
    entries: List[TranscriptEntry] = field(default_factory=list)

    def record(self, tick: int, session: AuthSession, variant: str) -> None:
        outcome = session.failure.value if session.failure else session.state.value
        self.entries.append(TranscriptEntry(tick, session.session_id, variant, outcome))

    def to_lines(self) -> List[str]:
        return [entry.to_line() for entry in self.entries]

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(line + "\n" for line in self.to_lines())
        return path


def authenticate(
    user: UserAccount,
    cp: CpAccount,
    bcn: BlockchainNetwork,
    rng: np.random.Generator,
    transcript: HandshakeTranscript = None,
) -> Tuple[AuthSession, AuthSession]:
    """Runs V1 -> V2 -> V3 end to end; returns (user session, CP session)."""
    user_session, v1 = auth_initiate(user, rng, scheme=bcn.scheme)
    if transcript is not None:
        transcript.record(bcn.now, user_session, "V1")
    cp_session, v2 = auth_respond(cp, v1, bcn)
    if transcript is not None:
        transcript.record(bcn.now, cp_session, "V2")
    if v2 is None:
        return user_session, cp_session
    user_session, v3 = auth_confirm(user, user_session, v2, scheme=bcn.scheme)
    if transcript is not None:
        transcript.record(bcn.now, user_session, "V3")
    if v3 is None:
        return user_session, cp_session
    auth_finalize(cp, cp_session, v3, scheme=bcn.scheme)
    if transcript is not None:
        transcript.record(bcn.now, cp_session, "Done")
    return user_session, cp_session
