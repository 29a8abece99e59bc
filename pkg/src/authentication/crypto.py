from abc import ABC, abstractmethod
from dataclasses import dataclass
import hashlib
import hmac
import os

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from src.utility.config import CRYPTO_SCHEME
from src.utility.errors import ConfigError, DecryptionError

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


@dataclass(frozen=True)
class KeyPair:
    private_key: bytes
    public_key: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


@dataclass(frozen=True, order=True)
class VirtualIdentity:
    vid: bytes

    def hex(self) -> str:
        return self.vid.hex()

    @classmethod
    def from_hex(cls, value: str) -> "VirtualIdentity":
        return cls(bytes.fromhex(value))


@dataclass(frozen=True)
class Signature:
    sig: bytes


@dataclass(frozen=True)
class Ciphertext:
    ct: bytes


def digest(data: bytes) -> bytes:
    """SHA-256 digest, the fixed 32-byte hash used for vids, blocks and messages."""
    return hashlib.sha256(data).digest()


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, str):
        return seed.encode("utf-8")
    if isinstance(seed, int) and seed >= 0:
        return seed.to_bytes(16, "big")
    raise ValueError(f"Unsupported key seed: {seed!r}")


class CryptoScheme(ABC):
    """Hash/sign/encrypt primitives over raw key bytes."""

    name: str

    @abstractmethod
    def generate_keypair(self, seed) -> KeyPair: ...

    @abstractmethod
    def sign(self, private_key: bytes, message: bytes) -> Signature: ...

    @abstractmethod
    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool: ...

    @abstractmethod
    def encrypt(self, public_key: bytes, message: bytes) -> Ciphertext: ...

    @abstractmethod
    def decrypt(self, private_key: bytes, ciphertext: Ciphertext) -> bytes: ...


class SimCrypto(CryptoScheme):
    """
    Deterministic keyed-hash scheme for reproducible simulation runs.

    Signatures are HMACs keyed by the signer's public key and ciphertexts are
    SHAKE-256 keystreams bound to the recipient's public key, so verification
    and decryption fail for any other key. Anyone holding a public key can forge
    under this scheme; it exists for speed and replay, not secrecy.
    """

    name = "sim"
    _TAG = 16

    def _public_of(self, private_key: bytes) -> bytes:
        return digest(b"bcdn-sim/public" + private_key)

    def generate_keypair(self, seed) -> KeyPair:
        private_key = digest(b"bcdn-sim/private" + _seed_bytes(seed))
        return KeyPair(private_key=private_key, public_key=self._public_of(private_key))

    def sign(self, private_key: bytes, message: bytes) -> Signature:
        mac = hmac.new(self._public_of(private_key), b"sig" + message, hashlib.sha256)
        return Signature(mac.digest())

    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool:
        if signature is None:
            return False
        expected = hmac.new(public_key, b"sig" + message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature.sig)

    def _stream(self, public_key: bytes, tag: bytes, size: int) -> bytes:
        return hashlib.shake_256(b"stream" + public_key + tag).digest(size)

    def encrypt(self, public_key: bytes, message: bytes) -> Ciphertext:
        tag = hmac.new(public_key, b"enc" + message, hashlib.sha256).digest()[: self._TAG]
        stream = self._stream(public_key, tag, len(message))
        return Ciphertext(tag + bytes(a ^ b for a, b in zip(message, stream)))

    def decrypt(self, private_key: bytes, ciphertext: Ciphertext) -> bytes:
        data = ciphertext.ct
        if len(data) < self._TAG:
            raise DecryptionError("Ciphertext too short")
        public_key = self._public_of(private_key)
        tag, body = data[: self._TAG], data[self._TAG:]
        stream = self._stream(public_key, tag, len(body))
        message = bytes(a ^ b for a, b in zip(body, stream))
        expected = hmac.new(public_key, b"enc" + message, hashlib.sha256).digest()[: self._TAG]
        if not hmac.compare_digest(expected, tag):
            raise DecryptionError("Ciphertext was not produced for this key")
        return message


class StandardCrypto(CryptoScheme):
    """
    Ed25519 signatures plus X25519/HKDF/AES-GCM hybrid encryption.

    Both halves are derived from one 32-byte private seed; the public key is
    the 64-byte concatenation ``ed25519_pub || x25519_pub``.
    """

    name = "standard"
    _HALF = 32
    _NONCE = 12

    def _x25519_private(self, private_key: bytes) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(digest(b"bcdn-std/x25519" + private_key))

    def _kdf(self, shared: bytes, context: bytes) -> bytes:
        return HKDF(
            algorithm=hashes.SHA256(),
            length=32,
            salt=None,
            info=b"bcdn-std/enc" + context,
        ).derive(shared)

    def generate_keypair(self, seed) -> KeyPair:
        private_key = digest(b"bcdn-std/private" + _seed_bytes(seed))
        ed_pub = Ed25519PrivateKey.from_private_bytes(private_key).public_key()
        x_pub = self._x25519_private(private_key).public_key()
        public_key = ed_pub.public_bytes(_RAW, _RAW_PUB) + x_pub.public_bytes(_RAW, _RAW_PUB)
        return KeyPair(private_key=private_key, public_key=public_key)

    def sign(self, private_key: bytes, message: bytes) -> Signature:
        return Signature(Ed25519PrivateKey.from_private_bytes(private_key).sign(message))

    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool:
        if signature is None or len(public_key) != 2 * self._HALF:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(public_key[: self._HALF]).verify(signature.sig, message)
            return True
        except (InvalidSignature, ValueError):
            return False

    def encrypt(self, public_key: bytes, message: bytes) -> Ciphertext:
        recipient = X25519PublicKey.from_public_bytes(public_key[self._HALF:])
        ephemeral = X25519PrivateKey.generate()
        ephemeral_pub = ephemeral.public_key().public_bytes(_RAW, _RAW_PUB)
        key = self._kdf(ephemeral.exchange(recipient), ephemeral_pub + public_key[self._HALF:])
        nonce = os.urandom(self._NONCE)
        return Ciphertext(ephemeral_pub + nonce + AESGCM(key).encrypt(nonce, message, None))

    def decrypt(self, private_key: bytes, ciphertext: Ciphertext) -> bytes:
        data = ciphertext.ct
        if len(data) < self._HALF + self._NONCE + 16:
            raise DecryptionError("Ciphertext too short")
        ephemeral_pub = data[: self._HALF]
        nonce = data[self._HALF: self._HALF + self._NONCE]
        body = data[self._HALF + self._NONCE:]
        own = self._x25519_private(private_key)
        own_pub = own.public_key().public_bytes(_RAW, _RAW_PUB)
        try:
            shared = own.exchange(X25519PublicKey.from_public_bytes(ephemeral_pub))
            return AESGCM(self._kdf(shared, ephemeral_pub + own_pub)).decrypt(nonce, body, None)
        except (InvalidTag, ValueError) as e:
            raise DecryptionError("Ciphertext was not produced for this key") from e


SCHEMES = {scheme.name: scheme for scheme in (SimCrypto(), StandardCrypto())}


def get_scheme(name: str = None) -> CryptoScheme:
    name = name or CRYPTO_SCHEME
    if name not in SCHEMES:
        raise ConfigError(f"Unknown crypto scheme '{name}' (expected one of {sorted(SCHEMES)})")
    return SCHEMES[name]


def generate_keypair(seed, scheme: CryptoScheme = None) -> KeyPair:
    return (scheme or get_scheme()).generate_keypair(seed)


def derive_vid(public_key: bytes) -> VirtualIdentity:
    """VID = hash(public key); the only user identifier that reaches the ledger."""
    return VirtualIdentity(digest(public_key))


def sign(private_key: bytes, message: bytes, scheme: CryptoScheme = None) -> Signature:
    return (scheme or get_scheme()).sign(private_key, message)


def verify(public_key: bytes, message: bytes, signature: Signature, scheme: CryptoScheme = None) -> bool:
    return (scheme or get_scheme()).verify(public_key, message, signature)


def encrypt(public_key: bytes, message: bytes, scheme: CryptoScheme = None) -> Ciphertext:
    return (scheme or get_scheme()).encrypt(public_key, message)


def decrypt(private_key: bytes, ciphertext: Ciphertext, scheme: CryptoScheme = None) -> bytes:
    return (scheme or get_scheme()).decrypt(private_key, ciphertext)
