from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import ClassVar, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Union
import json

from src.authentication.crypto import (
    CryptoScheme,
    Signature,
    VirtualIdentity,
    ZERO_DIGEST,
    derive_vid,
    digest,
    get_scheme,
)
from src.caching.features import FeatureVector
from src.utility.errors import AuthorizationError, LedgerFormatError, TransactionRejected
from src.utility.logger import logger

DEFAULT_INITIAL_BALANCE = 10 ** 6


def canonical_bytes(record: dict) -> bytes:
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _unhex(value: str) -> bytes:
    # Exports are lowercase; accepting other spellings would let a byte change go unnoticed.
    if not isinstance(value, str) or value != value.lower():
        raise ValueError(f"Expected lowercase hex, got {value!r}")
    return bytes.fromhex(value)


def registration_message(user_public_key: bytes, vid: VirtualIdentity) -> bytes:
    """Bytes a blockchain node signs to vouch for (user public key, vid)."""
    return b"user-registration|" + user_public_key + b"|" + vid.vid


def history_request_message(cp_id: str, address: str) -> bytes:
    """Bytes a CP signs to ask the BCN for the ledger's request history."""
    return f"history-request|{cp_id}|{address}".encode("utf-8")


class TxKind(str, Enum):
    CP_REGISTRATION = "CpRegistration"
    USER_REGISTRATION = "UserRegistration"
    CONTRACT_RECORD = "ContractRecord"
    PAYMENT = "Payment"


@dataclass(frozen=True)
class ContentMetadata:
    content_id: int
    feature_vector: FeatureVector
    cp_id: str

    def to_record(self) -> dict:
        return {
            "content_id": self.content_id,
            "features": list(self.feature_vector.bits),
            "cp_id": self.cp_id,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ContentMetadata":
        return cls(
            content_id=int(record["content_id"]),
            feature_vector=FeatureVector(tuple(record["features"])),
            cp_id=str(record["cp_id"]),
        )


@dataclass(frozen=True)
class CpRegistration:
    cp_id: str
    cp_public_key: bytes
    address: str
    public_info: str = ""
    kind: ClassVar[TxKind] = TxKind.CP_REGISTRATION

    def to_record(self) -> dict:
        return {
            "cp_id": self.cp_id,
            "cp_public_key": self.cp_public_key.hex(),
            "address": self.address,
            "public_info": self.public_info,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CpRegistration":
        return cls(
            cp_id=record["cp_id"],
            cp_public_key=_unhex(record["cp_public_key"]),
            address=record["address"],
            public_info=record["public_info"],
        )


@dataclass(frozen=True)
class UserRegistration:
    user_public_key: bytes
    vid: VirtualIdentity
    node_public_key: bytes
    node_signature: Signature
    kind: ClassVar[TxKind] = TxKind.USER_REGISTRATION

    def to_record(self) -> dict:
        return {
            "user_public_key": self.user_public_key.hex(),
            "vid": self.vid.hex(),
            "node_public_key": self.node_public_key.hex(),
            "node_signature": self.node_signature.sig.hex(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "UserRegistration":
        return cls(
            user_public_key=_unhex(record["user_public_key"]),
            vid=VirtualIdentity(_unhex(record["vid"])),
            node_public_key=_unhex(record["node_public_key"]),
            node_signature=Signature(_unhex(record["node_signature"])),
        )


@dataclass(frozen=True)
class ContractRecord:
    contract_id: str
    vid: VirtualIdentity
    cp_id: str
    content_metadata: Optional[ContentMetadata]
    plan: Optional[str]
    timestamp: int
    kind: ClassVar[TxKind] = TxKind.CONTRACT_RECORD

    def to_record(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "vid": self.vid.hex(),
            "cp_id": self.cp_id,
            "content_metadata": self.content_metadata.to_record() if self.content_metadata else None,
            "plan": self.plan,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ContractRecord":
        metadata = record["content_metadata"]
        return cls(
            contract_id=record["contract_id"],
            vid=VirtualIdentity(_unhex(record["vid"])),
            cp_id=record["cp_id"],
            content_metadata=ContentMetadata.from_record(metadata) if metadata is not None else None,
            plan=record["plan"],
            timestamp=int(record["timestamp"]),
        )


@dataclass(frozen=True)
class Payment:
    contract_id: str
    vid: VirtualIdentity
    cp_id: str
    amount: int
    kind: ClassVar[TxKind] = TxKind.PAYMENT

    def to_record(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "vid": self.vid.hex(),
            "cp_id": self.cp_id,
            "amount": self.amount,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Payment":
        return cls(
            contract_id=record["contract_id"],
            vid=VirtualIdentity(_unhex(record["vid"])),
            cp_id=record["cp_id"],
            amount=int(record["amount"]),
        )


Transaction = Union[CpRegistration, UserRegistration, ContractRecord, Payment]

_TX_TYPES = {cls.kind.value: cls for cls in (CpRegistration, UserRegistration, ContractRecord, Payment)}


def tx_to_record(tx: Transaction) -> dict:
    return {"kind": tx.kind.value, "payload": tx.to_record()}


def tx_from_record(record: dict) -> Transaction:
    kind = record["kind"]
    if kind not in _TX_TYPES:
        raise LedgerFormatError(f"Unknown transaction kind '{kind}'")
    return _TX_TYPES[kind].from_record(record["payload"])


def tx_id(tx: Transaction) -> str:
    return digest(canonical_bytes(tx_to_record(tx))).hex()


@dataclass(frozen=True)
class Block:
    index: int
    prev_digest: bytes
    timestamp: int
    transactions: tuple
    digest: bytes

    @staticmethod
    def compute_digest(index: int, prev_digest: bytes, timestamp: int, transactions: Sequence[Transaction]) -> bytes:
        return digest(canonical_bytes({
            "index": index,
            "prev_digest": prev_digest.hex(),
            "timestamp": timestamp,
            "transactions": [tx_to_record(tx) for tx in transactions],
        }))

    @classmethod
    def build(cls, index: int, prev_digest: bytes, timestamp: int, transactions: Sequence[Transaction]) -> "Block":
        transactions = tuple(transactions)
        return cls(
            index=index,
            prev_digest=prev_digest,
            timestamp=timestamp,
            transactions=transactions,
            digest=cls.compute_digest(index, prev_digest, timestamp, transactions),
        )

    def digest_is_valid(self) -> bool:
        return self.digest == self.compute_digest(self.index, self.prev_digest, self.timestamp, self.transactions)

    def to_line(self) -> str:
        # Fixed field order: index, prev_digest, timestamp, transactions, digest.
        return json.dumps({
            "index": self.index,
            "prev_digest": self.prev_digest.hex(),
            "timestamp": self.timestamp,
            "transactions": [tx_to_record(tx) for tx in self.transactions],
            "digest": self.digest.hex(),
        }, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "Block":
        try:
            record = json.loads(line)
            return cls(
                index=int(record["index"]),
                prev_digest=_unhex(record["prev_digest"]),
                timestamp=int(record["timestamp"]),
                transactions=tuple(tx_from_record(tx) for tx in record["transactions"]),
                digest=_unhex(record["digest"]),
            )
        except LedgerFormatError:
            raise
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise LedgerFormatError(f"Malformed block line: {e}") from e


def genesis_block() -> Block:
    return Block.build(0, ZERO_DIGEST, 0, ())


def verify_blocks(blocks: Sequence[Block]) -> bool:
    """True iff every digest recomputes, the chain starts at genesis and every link holds."""
    if not blocks:
        return False
    if blocks[0].index != 0 or blocks[0].prev_digest != ZERO_DIGEST:
        return False
    for position, block in enumerate(blocks):
        if block.index != position or not block.digest_is_valid():
            return False
        if position > 0 and block.prev_digest != blocks[position - 1].digest:
            return False
    return True


@dataclass
class LedgerState:
    """Indexes derived from committed transactions; rebuilt by replaying the chain."""

    node_keys: frozenset
    initial_balance: int
    vid_index: Dict[bytes, bytes] = field(default_factory=dict)
    cp_index: Dict[str, bytes] = field(default_factory=dict)
    cp_addresses: Dict[str, str] = field(default_factory=dict)
    vid_balances: Dict[bytes, int] = field(default_factory=dict)
    cp_balances: Dict[str, int] = field(default_factory=dict)
    payments: Dict[str, Payment] = field(default_factory=dict)
    recorded: Set[str] = field(default_factory=set)

    def copy(self) -> "LedgerState":
        return LedgerState(
            node_keys=self.node_keys,
            initial_balance=self.initial_balance,
            vid_index=dict(self.vid_index),
            cp_index=dict(self.cp_index),
            cp_addresses=dict(self.cp_addresses),
            vid_balances=dict(self.vid_balances),
            cp_balances=dict(self.cp_balances),
            payments=dict(self.payments),
            recorded=set(self.recorded),
        )

    def check(self, tx: Transaction, scheme: CryptoScheme) -> None:
        """Raises TransactionRejected when ``tx`` is not valid on top of this state."""
        reason = self._violation(tx, scheme)
        if reason:
            raise TransactionRejected(tx_id(tx), reason)

    def _violation(self, tx: Transaction, scheme: CryptoScheme) -> Optional[str]:
        if isinstance(tx, CpRegistration):
            if not tx.cp_id:
                return "empty cp_id"
            if tx.cp_id in self.cp_index:
                return f"cp '{tx.cp_id}' already registered"
        elif isinstance(tx, UserRegistration):
            if derive_vid(tx.user_public_key) != tx.vid:
                return "vid does not match hash of user public key"
            if tx.vid.vid in self.vid_index:
                return "vid already registered"
            if tx.node_public_key not in self.node_keys:
                return "registering node is not a blockchain node"
            if not scheme.verify(tx.node_public_key, registration_message(tx.user_public_key, tx.vid), tx.node_signature):
                return "node signature does not verify"
        elif isinstance(tx, Payment):
            if tx.vid.vid not in self.vid_index:
                return "unknown vid"
            if tx.cp_id not in self.cp_index:
                return f"unknown cp '{tx.cp_id}'"
            if tx.amount < 0:
                return "negative amount"
            if tx.contract_id in self.payments:
                return f"contract '{tx.contract_id}' already paid"
            if self.vid_balances.get(tx.vid.vid, 0) < tx.amount:
                return "insufficient balance"
        elif isinstance(tx, ContractRecord):
            if tx.vid.vid not in self.vid_index:
                return "unknown vid"
            if tx.cp_id not in self.cp_index:
                return f"unknown cp '{tx.cp_id}'"
            if (tx.content_metadata is None) == (tx.plan is None):
                return "contract must carry exactly one of content metadata or plan"
            if tx.content_metadata is not None and tx.content_metadata.cp_id != tx.cp_id:
                return "content metadata belongs to another cp"
            payment = self.payments.get(tx.contract_id)
            if payment is None or payment.vid != tx.vid or payment.cp_id != tx.cp_id:
                return f"no committed payment for contract '{tx.contract_id}'"
            if tx.contract_id in self.recorded:
                return f"contract '{tx.contract_id}' already recorded"
        else:
            return f"unsupported transaction type {type(tx).__name__}"
        return None

    def apply(self, tx: Transaction) -> None:
        if isinstance(tx, CpRegistration):
            self.cp_index[tx.cp_id] = tx.cp_public_key
            self.cp_addresses[tx.cp_id] = tx.address
            self.cp_balances.setdefault(tx.cp_id, 0)
        elif isinstance(tx, UserRegistration):
            self.vid_index[tx.vid.vid] = tx.user_public_key
            self.vid_balances[tx.vid.vid] = self.initial_balance
        elif isinstance(tx, Payment):
            self.payments[tx.contract_id] = tx
            self.vid_balances[tx.vid.vid] -= tx.amount
            self.cp_balances[tx.cp_id] += tx.amount
        elif isinstance(tx, ContractRecord):
            self.recorded.add(tx.contract_id)


class Chain:
    """
    Append-only hash-chained block store.

    The consensus commit path is the single writer; readers only see committed
    blocks. Indexes (vid -> public key, cp_id -> public key, balances) are kept
    in a LedgerState that is swapped in only after a whole block validates.
    """

    def __init__(
        self,
        node_keys: Iterable[bytes] = (),
        initial_balance: int = DEFAULT_INITIAL_BALANCE,
        scheme: CryptoScheme = None,
    ):
        self.scheme = scheme or get_scheme()
        self.blocks: List[Block] = [genesis_block()]
        self.state = LedgerState(node_keys=frozenset(node_keys), initial_balance=initial_balance)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def vid_index(self) -> Dict[bytes, bytes]:
        return self.state.vid_index

    @property
    def cp_index(self) -> Dict[str, bytes]:
        return self.state.cp_index

    def validate(self, transactions: Sequence[Transaction], state: LedgerState = None) -> LedgerState:
        """Validates ``transactions`` in order against ``state`` (default: committed) and returns the staged result."""
        staged = (state or self.state).copy()
        for tx in transactions:
            staged.check(tx, self.scheme)
            staged.apply(tx)
        return staged

    def candidate_block(self, transactions: Sequence[Transaction], timestamp: int) -> Block:
        self.validate(transactions)
        return Block.build(len(self.blocks), self.head.digest, timestamp, transactions)

    def commit(self, block: Block) -> Block:
        """Appends an already-built block after checking linkage, digest and every transaction."""
        if block.index != len(self.blocks) or block.prev_digest != self.head.digest:
            raise LedgerFormatError(f"Block {block.index} does not extend head {self.head.index}")
        if not block.digest_is_valid():
            raise LedgerFormatError(f"Block {block.index} digest does not recompute")
        staged = self.validate(block.transactions)
        self.blocks.append(block)
        self.state = staged
        logger.debug(f"Block {block.index} committed with {len(block.transactions)} transactions")
        return block

    def append_block(self, transactions: Sequence[Transaction], timestamp: int) -> Block:
        """
        Validates and appends one block; nothing is appended if any transaction is rejected.

        Raises:
            TransactionRejected: Naming the first offending transaction.
        """
        return self.commit(self.candidate_block(transactions, timestamp))

    def verify_chain(self) -> bool:
        return verify_blocks(self.blocks)

    def transactions(self) -> Iterator[Transaction]:
        for block in self.blocks:
            yield from block.transactions

    def lookup_vid(self, vid: VirtualIdentity) -> Optional[bytes]:
        return self.state.vid_index.get(vid.vid)

    def lookup_cp(self, cp_id: str) -> Optional[bytes]:
        return self.state.cp_index.get(cp_id)

    def balance_of_vid(self, vid: VirtualIdentity) -> int:
        return self.state.vid_balances.get(vid.vid, 0)

    def balance_of_cp(self, cp_id: str) -> int:
        return self.state.cp_balances.get(cp_id, 0)

    def has_payment(self, contract_id: str) -> bool:
        return contract_id in self.state.payments

    def has_contract_record(self, contract_id: str) -> bool:
        return contract_id in self.state.recorded

    def query_request_history(self, cp_id: str, address: str, signature: Signature) -> List[ContractRecord]:
        """
        Returns every committed ContractRecord, across all CPs, in chain order.

        Flat-rate plan records are included with no content metadata;
        ``requested_contents`` projects the history onto the requested contents.

        Only registered CPs whose address matches the registered one and whose
        signature over the history request verifies are served. Records expose
        vids, never user public keys.

        Raises:
            AuthorizationError: If the requester is not a verified, registered CP.
        """
        cp_public_key = self.lookup_cp(cp_id)
        if cp_public_key is None:
            raise AuthorizationError(f"CP '{cp_id}' is not registered")
        if self.state.cp_addresses.get(cp_id) != address:
            raise AuthorizationError(f"Address mismatch for CP '{cp_id}'")
        if not self.scheme.verify(cp_public_key, history_request_message(cp_id, address), signature):
            raise AuthorizationError(f"History request signature from CP '{cp_id}' does not verify")
        return [tx for tx in self.transactions() if isinstance(tx, ContractRecord)]

    def header_line(self) -> str:
        return json.dumps({
            "header": "bcdn-chain",
            "node_keys": sorted(key.hex() for key in self.state.node_keys),
            "initial_balance": self.state.initial_balance,
            "scheme": self.scheme.name,
        }, separators=(",", ":"))

    def export(self, path) -> Path:
        """Writes a header line followed by one block per line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.header_line() + "\n")
            for block in self.blocks:
                f.write(block.to_line() + "\n")
        logger.info(f"Chain with {len(self.blocks)} blocks exported to {path}")
        return path

    @classmethod
    def from_lines(cls, lines: Iterable[str], scheme: CryptoScheme = None) -> "Chain":
        """
        Rebuilds a chain by replaying exported lines; every block is re-validated.

        Raises:
            LedgerFormatError: Malformed header/block line or broken linkage.
            TransactionRejected: A replayed transaction is invalid.
        """
        lines = [line for line in (raw.strip() for raw in lines) if line]
        if not lines:
            raise LedgerFormatError("Empty chain export")
        try:
            header = json.loads(lines[0])
            node_keys = [_unhex(key) for key in header["node_keys"]]
            initial_balance = int(header["initial_balance"])
            scheme = scheme or get_scheme(header["scheme"])
        except (ValueError, KeyError, TypeError) as e:
            raise LedgerFormatError(f"Malformed chain header: {e}") from e
        chain = cls(node_keys=node_keys, initial_balance=initial_balance, scheme=scheme)
        blocks = [Block.from_line(line) for line in lines[1:]]
        if not blocks or blocks[0] != chain.blocks[0]:
            raise LedgerFormatError("Chain export does not start with the genesis block")
        for block in blocks[1:]:
            chain.commit(block)
        return chain

    @classmethod
    def load(cls, path, scheme: CryptoScheme = None) -> "Chain":
        return cls.from_lines(read_export(path), scheme=scheme)


def requested_contents(records: Iterable[ContractRecord]) -> List[ContentMetadata]:
    """Content metadata of every per-content record, in order; plan records have none."""
    return [record.content_metadata for record in records if record.content_metadata is not None]


def read_export(path) -> List[str]:
    """
    Lines of an exported chain file.

    Raises:
        LedgerFormatError: If the file is not valid UTF-8.
    """
    try:
        return Path(path).read_bytes().decode("utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise LedgerFormatError(f"Chain export is not valid UTF-8: {e}") from e


def verify_export(lines: Iterable[str]) -> bool:
    """Integrity check of exported block lines (header line optional): digests and links only."""
    blocks = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith('{"header"'):
            continue
        try:
            blocks.append(Block.from_line(line))
        except LedgerFormatError:
            return False
    return verify_blocks(blocks)
