from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional

from src.authentication.crypto import (
    CryptoScheme,
    KeyPair,
    Signature,
    VirtualIdentity,
    derive_vid,
    generate_keypair,
    get_scheme,
)
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.ledger import (
    ContentMetadata,
    CpRegistration,
    UserRegistration,
    history_request_message,
    registration_message,
)
from src.utility.logger import logger

FLAT_RATE_PLAN = "flat-rate"


@dataclass
class CpAccount:
    """
    A content provider: its keys, its network address and the services it sells.

    ``catalog`` maps every content id of the CP's library to its metadata;
    ``plans`` lists the flat-rate plan tags it accepts.
    """

    cp_id: str
    keypair: KeyPair
    address: str
    public_info: str = ""
    catalog: Dict[int, ContentMetadata] = field(default_factory=dict)
    plans: FrozenSet[str] = frozenset({FLAT_RATE_PLAN})
    registered: bool = False

    @classmethod
    def create(cls, cp_id: str, scheme: CryptoScheme = None, **kwargs) -> "CpAccount":
        keypair = generate_keypair(f"cp/{cp_id}", scheme=scheme)
        address = kwargs.pop("address", f"edge://{cp_id.lower()}")
        return cls(cp_id=cp_id, keypair=keypair, address=address, **kwargs)

    def sign_history_request(self, scheme: CryptoScheme = None) -> Signature:
        return (scheme or get_scheme()).sign(
            self.keypair.private_key, history_request_message(self.cp_id, self.address)
        )


@dataclass
class UserAccount:
    keypair: KeyPair
    vid: VirtualIdentity
    user_id: Optional[int] = None
    registered: bool = False

    @classmethod
    def create(cls, seed, scheme: CryptoScheme = None, user_id: int = None) -> "UserAccount":
        keypair = generate_keypair(seed, scheme=scheme)
        return cls(keypair=keypair, vid=derive_vid(keypair.public_key), user_id=user_id)


def build_cp_registration(cp: CpAccount) -> CpRegistration:
    return CpRegistration(
        cp_id=cp.cp_id,
        cp_public_key=cp.keypair.public_key,
        address=cp.address,
        public_info=cp.public_info,
    )


def build_user_registration(user: UserAccount, node_keypair: KeyPair, scheme: CryptoScheme = None) -> UserRegistration:
    """The node signs (user public key, vid) on the user's behalf."""
    scheme = scheme or get_scheme()
    signature = scheme.sign(node_keypair.private_key, registration_message(user.keypair.public_key, user.vid))
    return UserRegistration(
        user_public_key=user.keypair.public_key,
        vid=user.vid,
        node_public_key=node_keypair.public_key,
        node_signature=signature,
    )


def register_cp(cp: CpAccount, bcn: BlockchainNetwork) -> str:
    """
    Commits the CP's registration through the BCN.

    Returns:
        str: Id of the committed CpRegistration transaction.

    Raises:
        TransactionRejected: If the cp_id is already registered.
    """
    transaction_id, block = bcn.submit_and_wait(build_cp_registration(cp))
    cp.registered = True
    logger.info(f"CP '{cp.cp_id}' registered in block {block.index}")
    return transaction_id


def register_user(user: UserAccount, node_keypair: KeyPair, bcn: BlockchainNetwork) -> str:
    """
    Commits a UserRegistration vouched for by ``node_keypair``.

    Raises:
        TransactionRejected: On a vid that is not the hash of the user's key,
            a duplicate vid, or a node signature that does not verify.
    """
    tx = build_user_registration(user, node_keypair, scheme=bcn.scheme)
    transaction_id, block = bcn.submit_and_wait(tx)
    user.registered = True
    logger.debug(f"User vid {user.vid.hex()[:12]} registered in block {block.index}")
    return transaction_id


def register_users(users, node_keypair: KeyPair, bcn: BlockchainNetwork) -> int:
    """Registers a population in as few blocks as the BCN cuts; returns the block count."""
    pending = [user for user in users if not user.registered]
    for user in pending:
        bcn.submit(build_user_registration(user, node_keypair, scheme=bcn.scheme))
    blocks = bcn.flush()
    for user in pending:
        user.registered = True
    logger.info(f"{len(pending)} users registered in {len(blocks)} block(s)")
    return len(blocks)
