from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Union

from src.authentication.auth import AuthSession
from src.authentication.crypto import VirtualIdentity
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.ledger import ContentMetadata, ContractRecord, Payment
from src.protocol.accounts import CpAccount, UserAccount
from src.utility.errors import ProtocolViolation
from src.utility.logger import logger

DEFAULT_FEE = 1


class ContractState(str, Enum):
    REQUESTED = "Requested"
    PAYMENT_REQUESTED = "PaymentRequested"
    PAID = "Paid"
    DELIVERED = "Delivered"
    COMMITTED = "Committed"


class ContractFailure(str, Enum):
    UNAUTHENTICATED = "Unauthenticated"
    UNKNOWN_VID = "UnknownVid"
    UNKNOWN_SERVICE = "UnknownService"
    INSUFFICIENT_BALANCE = "InsufficientBalance"


_LIFECYCLE = list(ContractState)

Service = Union[int, str, ContentMetadata]


@dataclass
class SmartContract:
    """
    One service request from the request-to-pay step to the timestamped chain record.

    ``service`` is the content's metadata, or a flat-rate plan tag. A contract
    that cannot proceed keeps its last state and records a ``failure``.
    """

    contract_id: str
    vid: VirtualIdentity
    cp_id: str
    service: Union[ContentMetadata, str, None]
    fee: int
    state: ContractState = ContractState.REQUESTED
    timestamp: Optional[int] = None
    failure: Optional[ContractFailure] = None
    payment_tx_id: Optional[str] = None
    record_tx_id: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def advance(self, state: ContractState) -> None:
        if self.failure is not None or _LIFECYCLE.index(state) != _LIFECYCLE.index(self.state) + 1:
            raise ProtocolViolation(f"Contract {self.contract_id}: {self.state.value} -> {state.value} is not allowed")
        self.state = state

    def halt(self, failure: ContractFailure) -> "SmartContract":
        self.failure = failure
        logger.warning(f"Contract {self.contract_id} halted at {self.state.value}: {failure.value}")
        return self


def _resolve_service(cp: CpAccount, service: Service) -> Union[ContentMetadata, str, None]:
    if isinstance(service, ContentMetadata):
        service = service.content_id
    if isinstance(service, str):
        return service if service in cp.plans else None
    return cp.catalog.get(service)


def run_contract(
    user: UserAccount,
    cp: CpAccount,
    service: Service,
    bcn: BlockchainNetwork,
    session: AuthSession,
    fee: int = DEFAULT_FEE,
    wait: bool = True,
) -> SmartContract:
    """
    Drives a contract through Requested -> PaymentRequested -> Paid -> Delivered -> Committed.

    Args:
        user: The requesting user.
        cp: The CP selling ``service``.
        service: A content id of the CP's catalog (or its metadata), or a plan tag.
        bcn: The blockchain network.
        session: The CP's handshake session with this user.
        fee: Token price of the service.
        wait: Cut blocks until the record commits. With ``wait=False`` the
            contract stops at Delivered with both transactions queued;
            ``settle_contracts`` completes it.

    Returns:
        SmartContract: Committed, Delivered (``wait=False``) or halted with a failure.
    """
    resolved = _resolve_service(cp, service)
    contract = SmartContract(
        contract_id=bcn.new_contract_id(user.vid, cp.cp_id),
        vid=user.vid,
        cp_id=cp.cp_id,
        service=resolved,
        fee=fee,
    )
    if not session.authenticated or session.vid != user.vid or session.cp_id != cp.cp_id:
        return contract.halt(ContractFailure.UNAUTHENTICATED)
    if not bcn.is_registered_vid(user.vid, pending=True):
        return contract.halt(ContractFailure.UNKNOWN_VID)
    if resolved is None:
        return contract.halt(ContractFailure.UNKNOWN_SERVICE)

    contract.advance(ContractState.PAYMENT_REQUESTED)
    if bcn.balance_of(user.vid) < fee:
        return contract.halt(ContractFailure.INSUFFICIENT_BALANCE)

    payment = Payment(contract_id=contract.contract_id, vid=user.vid, cp_id=cp.cp_id, amount=fee)
    contract.payment_tx_id = bcn.submit(payment)
    if wait:
        bcn.wait_for(contract.payment_tx_id)
    contract.advance(ContractState.PAID)

    contract.advance(ContractState.DELIVERED)
    record = ContractRecord(
        contract_id=contract.contract_id,
        vid=user.vid,
        cp_id=cp.cp_id,
        content_metadata=resolved if isinstance(resolved, ContentMetadata) else None,
        plan=resolved if isinstance(resolved, str) else None,
        timestamp=bcn.now,
    )
    contract.record_tx_id = bcn.submit(record)
    contract.timestamp = record.timestamp
    if wait:
        bcn.wait_for(contract.record_tx_id)
        contract.advance(ContractState.COMMITTED)
    return contract


def settle_contracts(contracts: Iterable[SmartContract], bcn: BlockchainNetwork) -> List[SmartContract]:
    """Flushes the mempool and moves every delivered contract whose record committed to Committed."""
    bcn.flush()
    settled = []
    for contract in contracts:
        if contract.state == ContractState.DELIVERED and contract.ok and bcn.is_committed(contract.record_tx_id):
            contract.advance(ContractState.COMMITTED)
            settled.append(contract)
    return settled
