from typing import Dict, List, Optional, Sequence, Tuple

from src.authentication.crypto import CryptoScheme, KeyPair, Signature, VirtualIdentity, get_scheme
from src.blockchain.consensus import (
    Behavior,
    CommitOutcome,
    ConsensusEngine,
    DEFAULT_DELAY_RANGE,
    DEFAULT_TIMEOUT,
    DEFAULT_VALIDATORS,
)
from src.blockchain.ledger import (
    Block,
    Chain,
    ContractRecord,
    DEFAULT_INITIAL_BALANCE,
    Transaction,
    tx_id,
)
from src.utility.errors import ConsensusStall, TransactionRejected
from src.utility.logger import logger

DEFAULT_BLOCK_INTERVAL = 10


class BlockchainNetwork:
    """
    The BCN as seen by CPs and users: a mempool in front of PBFT and the chain.

    Transactions are validated against a staged view (committed state plus the
    mempool) when submitted, and cut into a block at every ``block_interval``
    tick boundary. With ``use_consensus`` the block goes through the PBFT
    engine, whose first honest commit appends it; otherwise it is appended
    directly (the batch path used by fast scenario runs).
    """

    def __init__(
        self,
        n_validators: int = DEFAULT_VALIDATORS,
        behaviors: Dict[int, Behavior] = None,
        timeout: int = DEFAULT_TIMEOUT,
        delay_range: Tuple[int, int] = DEFAULT_DELAY_RANGE,
        drop_probability: float = 0.0,
        seed: int = 0,
        block_interval: int = DEFAULT_BLOCK_INTERVAL,
        initial_balance: int = DEFAULT_INITIAL_BALANCE,
        scheme: CryptoScheme = None,
        use_consensus: bool = True,
        record_events: bool = False,
    ):
        if block_interval < 1:
            raise ValueError(f"Block interval must be positive, got {block_interval}")
        self.scheme = scheme or get_scheme()
        self.engine = ConsensusEngine(
            n_validators=n_validators,
            behaviors=behaviors,
            timeout=timeout,
            delay_range=delay_range,
            drop_probability=drop_probability,
            seed=seed,
            scheme=self.scheme,
            record_events=record_events,
        )
        self.chain = Chain(node_keys=self.engine.node_keys, initial_balance=initial_balance, scheme=self.scheme)
        self.block_interval = block_interval
        self.use_consensus = use_consensus
        self.mempool: List[Transaction] = []
        self._staged = self.chain.state.copy()
        self._committed_in: Dict[str, int] = {}
        self._contract_seq = 0
        self.last_outcome: Optional[CommitOutcome] = None
        self.engine.set_block_validator(self._validate_block)
        self.engine.on_block_committed = self._on_block_committed

    @property
    def now(self) -> int:
        return self.engine.now

    def node_keypair(self, node_id: int = 0) -> KeyPair:
        return self.engine.keypairs[node_id]

    def _validate_block(self, block: Block) -> bool:
        if block.index < len(self.chain):
            return self.chain.blocks[block.index] == block
        if block.index != len(self.chain) or block.prev_digest != self.chain.head.digest:
            return False
        try:
            self.chain.validate(block.transactions)
        except TransactionRejected:
            return False
        return True

    def _on_block_committed(self, block: Block) -> None:
        self.chain.commit(block)
        for tx in block.transactions:
            self._committed_in[tx_id(tx)] = block.index
        logger.debug(f"BCN: block {block.index} appended at tick {block.timestamp}")

    def submit(self, tx: Transaction) -> str:
        """
        Validates ``tx`` on top of the committed chain and the mempool and queues it.

        Raises:
            TransactionRejected: If the transaction is invalid in that view.
        """
        self._staged.check(tx, self.scheme)
        self._staged.apply(tx)
        self.mempool.append(tx)
        return tx_id(tx)

    def is_committed(self, transaction_id: str) -> bool:
        return transaction_id in self._committed_in

    def _next_boundary(self) -> int:
        return (self.now // self.block_interval + 1) * self.block_interval

    def cut_block(self) -> Optional[Block]:
        """
        Advances to the next block boundary and commits the mempool as one block.

        Raises:
            ConsensusStall: If PBFT did not commit the block within its tick budget.
        """
        if not self.mempool:
            return None
        self.engine.advance_to(self._next_boundary())
        transactions, self.mempool = self.mempool, []
        block = self.chain.candidate_block(transactions, timestamp=self.now)
        if self.use_consensus:
            outcome = self.engine.run_block(block)
            self.last_outcome = outcome
            if not outcome.committed:
                self.mempool = transactions
                raise ConsensusStall(f"Block {block.index} did not commit after {outcome.ticks} ticks")
        else:
            self._on_block_committed(block)
        self._staged = self.chain.state.copy()
        return block

    def wait_for(self, transaction_id: str) -> Block:
        """Cuts blocks until ``transaction_id`` is on chain; returns its block."""
        while not self.is_committed(transaction_id):
            if self.cut_block() is None:
                raise KeyError(f"Transaction {transaction_id[:16]} is neither pending nor committed")
        return self.chain.blocks[self._committed_in[transaction_id]]

    def submit_and_wait(self, tx: Transaction) -> Tuple[str, Block]:
        transaction_id = self.submit(tx)
        return transaction_id, self.wait_for(transaction_id)

    def flush(self) -> List[Block]:
        blocks = []
        while self.mempool:
            blocks.append(self.cut_block())
        return blocks

    def lookup_vid(self, vid: VirtualIdentity) -> Optional[bytes]:
        return self.chain.lookup_vid(vid)

    def lookup_cp(self, cp_id: str) -> Optional[bytes]:
        return self.chain.lookup_cp(cp_id)

    def balance_of(self, vid: VirtualIdentity, pending: bool = True) -> int:
        """Token balance of ``vid``; with ``pending`` the mempool's payments are already deducted."""
        if pending:
            return self._staged.vid_balances.get(vid.vid, 0)
        return self.chain.balance_of_vid(vid)

    def is_registered_vid(self, vid: VirtualIdentity, pending: bool = False) -> bool:
        if pending:
            return vid.vid in self._staged.vid_index
        return self.chain.lookup_vid(vid) is not None

    def query_request_history(self, cp_id: str, address: str, signature: Signature) -> Sequence[ContractRecord]:
        return self.chain.query_request_history(cp_id, address, signature)

    def new_contract_id(self, vid: VirtualIdentity, cp_id: str) -> str:
        self._contract_seq += 1
        return f"c{self._contract_seq:08d}-{cp_id}-{vid.hex()[:8]}"
