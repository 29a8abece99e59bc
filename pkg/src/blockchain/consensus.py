from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple
import json

from src.authentication.crypto import CryptoScheme, KeyPair, Signature, digest, get_scheme
from src.blockchain.ledger import Block
from src.blockchain.network import SimulatedNetwork
from src.utility.errors import ConfigError, ProtocolViolation
from src.utility.logger import logger

DEFAULT_VALIDATORS = 4
DEFAULT_TIMEOUT = 50
DEFAULT_DELAY_RANGE = (1, 5)


class Phase(str, Enum):
    PRE_PREPARE = "PrePrepare"
    PREPARE = "Prepare"
    COMMIT = "Commit"


class Behavior(str, Enum):
    HONEST = "Honest"
    SILENT = "Silent"
    EQUIVOCATING = "Equivocating"


@dataclass(frozen=True)
class ConsensusMessage:
    phase: Phase
    view: int
    sequence: int
    block_digest: bytes
    sender: int
    signature: Signature
    block: Optional[Block] = field(default=None, compare=False)

    @staticmethod
    def signing_bytes(phase: Phase, view: int, sequence: int, block_digest: bytes, sender: int) -> bytes:
        return f"{phase.value}|{view}|{sequence}|{sender}|".encode("utf-8") + block_digest

    @classmethod
    def create(cls, keypair: KeyPair, scheme: CryptoScheme, phase: Phase, view: int, sequence: int,
               block_digest: bytes, sender: int, block: Block = None) -> "ConsensusMessage":
        signature = scheme.sign(keypair.private_key, cls.signing_bytes(phase, view, sequence, block_digest, sender))
        return cls(phase, view, sequence, block_digest, sender, signature, block)

    def verifies(self, public_key: bytes, scheme: CryptoScheme) -> bool:
        payload = self.signing_bytes(self.phase, self.view, self.sequence, self.block_digest, self.sender)
        return scheme.verify(public_key, payload, self.signature)


@dataclass(frozen=True)
class ConsensusEvent:
    tick: int
    validator: int
    phase: str
    view: int
    sequence: int
    digest: str

    def to_line(self) -> str:
        return json.dumps({
            "tick": self.tick,
            "validator": self.validator,
            "phase": self.phase,
            "view": self.view,
            "sequence": self.sequence,
            "digest": self.digest,
        }, separators=(",", ":"))


Outgoing = Tuple[int, ConsensusMessage]


def conflicting_digest(block_digest: bytes) -> bytes:
    """The second digest an equivocating validator tells odd-id peers."""
    return digest(b"equivocate|" + block_digest)


class ValidatorState:
    """
    One PBFT replica: message log, accepted pre-prepares, locks and commits.

    An honest replica never sends two different Prepare or Commit digests for
    the same (view, sequence), and once it holds a prepared certificate for a
    sequence it only accepts that digest again in later views.
    """

    def __init__(self, validator_id: int, n_validators: int, keypair: KeyPair, public_keys: List[bytes],
                 behavior: Behavior = Behavior.HONEST, timeout: int = DEFAULT_TIMEOUT,
                 scheme: CryptoScheme = None):
        self.validator_id = validator_id
        self.n = n_validators
        self.f = (n_validators - 1) // 3
        self.keypair = keypair
        self.public_keys = public_keys
        self.behavior = behavior
        self.timeout = timeout
        self.scheme = scheme or get_scheme()
        self.current_view = 0
        self.log: Dict[Tuple[int, int, Phase], Dict[int, bytes]] = defaultdict(dict)
        self.pre_prepares: Dict[Tuple[int, int], ConsensusMessage] = {}
        self.accepted: Dict[Tuple[int, int], Tuple[bytes, Block]] = {}
        self.prepare_sent: set = set()
        self.commit_sent: set = set()
        self.locked: Dict[int, bytes] = {}
        self.committed: Dict[int, bytes] = {}
        self.requests: Dict[int, Block] = {}
        self.timer_start: Dict[int, int] = {}
        self.dropped: Counter = Counter()
        self.validate_block: Callable[[Block], bool] = lambda block: True
        self.on_commit: Callable[[int, int, bytes, Block, int], None] = lambda *args: None
        self.on_emit: Callable[..., None] = lambda *args: None

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def primary(self, view: int = None) -> int:
        return (self.current_view if view is None else view) % self.n

    def is_primary(self) -> bool:
        return self.primary() == self.validator_id

    def _broadcast(self, phase: Phase, view: int, sequence: int, block_digest: bytes, now: int,
                   block: Block = None) -> List[Outgoing]:
        digests = {block_digest}
        if self.behavior is Behavior.EQUIVOCATING:
            digests.add(conflicting_digest(block_digest))
        messages = {
            d: ConsensusMessage.create(self.keypair, self.scheme, phase, view, sequence, d, self.validator_id, block)
            for d in digests
        }
        outgoing = []
        for dest in range(self.n):
            sent_digest = block_digest
            if self.behavior is Behavior.EQUIVOCATING and dest % 2 == 1:
                sent_digest = conflicting_digest(block_digest)
            if dest == self.validator_id:
                if phase is not Phase.PRE_PREPARE:
                    self.log[(view, sequence, phase)][self.validator_id] = sent_digest
            else:
                outgoing.append((dest, messages[sent_digest]))
        self.on_emit(now, self.validator_id, phase.value, view, sequence, block_digest)
        return outgoing

    def request(self, sequence: int, block: Block, now: int) -> None:
        """Client request broadcast: the replica learns the candidate block and starts its timer."""
        if self.behavior is Behavior.SILENT or sequence in self.committed:
            return
        self.requests[sequence] = block
        self.timer_start[sequence] = now

    def propose(self, block: Block, now: int) -> List[Outgoing]:
        """
        Primary role: pre-prepare ``block`` at sequence ``block.index`` in the current view.

        Raises:
            ProtocolViolation: If this replica is not the primary of its view.
        """
        if not self.is_primary():
            raise ProtocolViolation(
                f"Validator {self.validator_id} is not primary of view {self.current_view} "
                f"(primary is {self.primary()})"
            )
        if self.behavior is Behavior.SILENT:
            return []
        if not self.validate_block(block):
            raise ProtocolViolation(f"Block {block.index} fails ledger validation; refusing to propose")
        key = (self.current_view, block.index)
        if key in self.accepted:
            return []
        self.accepted[key] = (block.digest, block)
        outgoing = self._broadcast(Phase.PRE_PREPARE, self.current_view, block.index, block.digest, now, block)
        outgoing += self._send_prepare(self.current_view, block.index, block.digest, now)
        return outgoing + self._progress(self.current_view, block.index, now)

    def _send_prepare(self, view: int, sequence: int, block_digest: bytes, now: int) -> List[Outgoing]:
        if (view, sequence) in self.prepare_sent:
            return []
        self.prepare_sent.add((view, sequence))
        return self._broadcast(Phase.PREPARE, view, sequence, block_digest, now)

    def handle_message(self, message: ConsensusMessage, now: int) -> List[Outgoing]:
        """
        Applies one delivered message and returns the messages it triggers.

        Bad signatures and digests that contradict an accepted pre-prepare are
        dropped and counted in ``dropped``.
        """
        if self.behavior is Behavior.SILENT:
            return []
        if not 0 <= message.sender < self.n or not message.verifies(self.public_keys[message.sender], self.scheme):
            self.dropped["bad_signature"] += 1
            logger.debug(f"Validator {self.validator_id}: bad signature from {message.sender}")
            return []
        if message.sequence in self.committed:
            return []
        if message.view < self.current_view:
            self.dropped["stale_view"] += 1
            return []

        key = (message.view, message.sequence)
        if message.phase is Phase.PRE_PREPARE:
            self.pre_prepares.setdefault(key, message)
        else:
            accepted = self.accepted.get(key)
            if accepted is not None and accepted[0] != message.block_digest:
                self.dropped["digest_mismatch"] += 1
                return []
            self.log[(message.view, message.sequence, message.phase)].setdefault(message.sender, message.block_digest)
        return self._progress(message.view, message.sequence, now)

    def _try_accept(self, view: int, sequence: int, now: int) -> List[Outgoing]:
        message = self.pre_prepares.get((view, sequence))
        if message is None or (view, sequence) in self.accepted:
            return []
        block = message.block
        if message.sender != self.primary(view):
            self.dropped["not_primary"] += 1
        elif block is None or block.index != sequence or block.digest != message.block_digest or not block.digest_is_valid():
            self.dropped["digest_mismatch"] += 1
        elif sequence in self.locked and self.locked[sequence] != message.block_digest:
            self.dropped["locked"] += 1
        elif not self.validate_block(block):
            self.dropped["invalid_block"] += 1
        else:
            self.accepted[(view, sequence)] = (message.block_digest, block)
            # Votes for other digests logged before acceptance no longer count.
            for phase in (Phase.PREPARE, Phase.COMMIT):
                votes = self.log.get((view, sequence, phase), {})
                for sender in [s for s, d in votes.items() if d != message.block_digest]:
                    del votes[sender]
                    self.dropped["digest_mismatch"] += 1
            return self._send_prepare(view, sequence, message.block_digest, now)
        del self.pre_prepares[(view, sequence)]
        return []

    def _votes(self, view: int, sequence: int, phase: Phase, block_digest: bytes) -> int:
        return sum(1 for d in self.log.get((view, sequence, phase), {}).values() if d == block_digest)

    def _progress(self, view: int, sequence: int, now: int) -> List[Outgoing]:
        if view != self.current_view or sequence in self.committed:
            return []
        outgoing = self._try_accept(view, sequence, now)
        accepted = self.accepted.get((view, sequence))
        if accepted is None:
            return outgoing
        block_digest, block = accepted
        if (view, sequence) not in self.commit_sent and self._votes(view, sequence, Phase.PREPARE, block_digest) >= self.quorum:
            self.commit_sent.add((view, sequence))
            self.locked[sequence] = block_digest
            outgoing += self._broadcast(Phase.COMMIT, view, sequence, block_digest, now)
        if (view, sequence) in self.commit_sent and self._votes(view, sequence, Phase.COMMIT, block_digest) >= self.quorum:
            self.committed[sequence] = block_digest
            self.requests.pop(sequence, None)
            self.timer_start.pop(sequence, None)
            self.on_commit(self.validator_id, sequence, block_digest, block, now)
        return outgoing

    def on_tick(self, now: int) -> List[Outgoing]:
        """Fires the view-change timer for the oldest pending request, if expired."""
        if self.behavior is Behavior.SILENT or not self.timer_start:
            return []
        sequence = min(self.timer_start)
        if now - self.timer_start[sequence] < self.timeout:
            return []
        self.current_view += 1
        self.timer_start = {seq: now for seq in self.timer_start}
        logger.debug(f"Validator {self.validator_id}: view change to {self.current_view} at tick {now}")
        self.on_emit(now, self.validator_id, "ViewChange", self.current_view, sequence, None)
        outgoing = []
        for seq in sorted(self.requests):
            if self.is_primary() and (self.current_view, seq) not in self.accepted:
                outgoing += self.propose(self.requests[seq], now)
            else:
                outgoing += self._progress(self.current_view, seq, now)
        return outgoing


@dataclass
class CommitOutcome:
    sequence: int
    committed: bool
    digest: Optional[bytes]
    started_at: int
    finished_at: int
    views: Dict[int, int]

    @property
    def ticks(self) -> int:
        return self.finished_at - self.started_at


class ConsensusEngine:
    """
    Single-threaded deterministic PBFT event loop over ``n_validators = 3f + 1`` replicas.

    The first honest commit of a sequence is handed to ``on_block_committed``
    (the ledger's single writer). Later honest commits of the same sequence
    are checked against it; a differing digest is recorded in
    ``safety_violations``.
    """

    def __init__(
        self,
        n_validators: int = DEFAULT_VALIDATORS,
        behaviors: Dict[int, Behavior] = None,
        timeout: int = DEFAULT_TIMEOUT,
        delay_range: Tuple[int, int] = DEFAULT_DELAY_RANGE,
        drop_probability: float = 0.0,
        seed: int = 0,
        scheme: CryptoScheme = None,
        record_events: bool = True,
    ):
        f = (n_validators - 1) // 3
        if n_validators < 1 or n_validators != 3 * f + 1:
            raise ConfigError(f"Validator count must be 3f+1, got {n_validators}")
        behaviors = {int(k): Behavior(v) for k, v in (behaviors or {}).items()}
        unknown = [v for v in behaviors if not 0 <= v < n_validators]
        if unknown:
            raise ConfigError(f"Behaviors given for unknown validators {unknown}")
        self.n = n_validators
        self.f = f
        self.timeout = timeout
        self.scheme = scheme or get_scheme()
        self.network = SimulatedNetwork(delay_range, drop_probability, seed)
        self.now = 0
        self.record_events = record_events
        self.events: List[ConsensusEvent] = []
        self.keypairs = [self.scheme.generate_keypair(f"bcn-validator-{i}") for i in range(n_validators)]
        public_keys = [kp.public_key for kp in self.keypairs]
        self.validators = [
            ValidatorState(i, n_validators, self.keypairs[i], public_keys,
                           behaviors.get(i, Behavior.HONEST), timeout, self.scheme)
            for i in range(n_validators)
        ]
        for validator in self.validators:
            validator.on_commit = self._on_commit
            validator.on_emit = self._on_emit
        self.committed: Dict[int, bytes] = {}
        self.commit_ticks: Dict[int, Dict[int, int]] = defaultdict(dict)
        self.safety_violations: List[Tuple[int, int, bytes, bytes]] = []
        self.on_block_committed: Callable[[Block], None] = lambda block: None

    @property
    def node_keys(self) -> List[bytes]:
        return [kp.public_key for kp in self.keypairs]

    @property
    def honest(self) -> List[ValidatorState]:
        return [v for v in self.validators if v.behavior is Behavior.HONEST]

    @property
    def current_view(self) -> int:
        participants = self.honest or self.validators
        return max(v.current_view for v in participants)

    def set_block_validator(self, validate_block: Callable[[Block], bool]) -> None:
        for validator in self.validators:
            validator.validate_block = validate_block

    def _event(self, validator: int, phase: str, view: int, sequence: int, block_digest: Optional[bytes]) -> None:
        if self.record_events:
            self.events.append(ConsensusEvent(
                self.now, validator, phase, view, sequence, block_digest.hex() if block_digest else ""
            ))

    def _on_emit(self, now: int, validator_id: int, phase: str, view: int, sequence: int,
                 block_digest: Optional[bytes]) -> None:
        self._event(validator_id, phase, view, sequence, block_digest)

    def _on_commit(self, validator_id: int, sequence: int, block_digest: bytes, block: Block, now: int) -> None:
        validator = self.validators[validator_id]
        self._event(validator_id, "Committed", validator.current_view, sequence, block_digest)
        if validator.behavior is not Behavior.HONEST:
            return
        self.commit_ticks[sequence][validator_id] = now
        if sequence not in self.committed:
            self.committed[sequence] = block_digest
            logger.debug(f"Sequence {sequence} committed first by validator {validator_id} at tick {now}")
            self.on_block_committed(block)
        elif self.committed[sequence] != block_digest:
            self.safety_violations.append((sequence, validator_id, self.committed[sequence], block_digest))
            logger.error(f"Safety violation at sequence {sequence} by validator {validator_id}")

    def _send_all(self, outgoing: List[Outgoing]) -> None:
        for dest, message in outgoing:
            self.network.send(dest, message, self.now)

    def propose(self, primary_id: int, block: Block) -> None:
        """
        Has ``primary_id`` pre-prepare ``block``; the PrePrepare is enqueued on the network.

        Raises:
            ProtocolViolation: If ``primary_id`` is not the primary of its current view.
        """
        self._send_all(self.validators[primary_id].propose(block, self.now))

    def advance_tick(self) -> List[ConsensusMessage]:
        """Moves the clock one tick, delivers everything due, then fires expired timers."""
        self.now += 1
        delivered = []
        for item in self.network.deliver_due(self.now):
            delivered.append(item.message)
            self._send_all(self.validators[item.dest].handle_message(item.message, self.now))
        for validator in self.validators:
            self._send_all(validator.on_tick(self.now))
        return delivered

    def advance_to(self, tick: int) -> None:
        while self.now < tick:
            self.advance_tick()

    def liveness_bound(self) -> int:
        return 2 * self.timeout + self.network.max_delay

    def _settled(self, sequence: int) -> bool:
        return all(sequence in v.committed for v in self.honest)

    def run_block(self, block: Block, max_ticks: int = None) -> CommitOutcome:
        """
        Drives one sequence to commit: request broadcast, proposal by the current primary, ticks.

        Runs until every honest validator committed the sequence or ``max_ticks``
        elapse (default: four times the liveness bound).
        """
        sequence = block.index
        started = self.now
        for validator in self.validators:
            validator.request(sequence, block, self.now)
        primary = self.validators[self.current_view % self.n]
        if primary.behavior is not Behavior.SILENT and primary.is_primary():
            self.propose(primary.validator_id, block)
        budget = max_ticks if max_ticks is not None else 4 * self.liveness_bound()
        while not self._settled(sequence) and self.now - started < budget:
            self.advance_tick()
        return CommitOutcome(
            sequence=sequence,
            committed=sequence in self.committed,
            digest=self.committed.get(sequence),
            started_at=started,
            finished_at=self.now,
            views={v.validator_id: v.current_view for v in self.validators},
        )

    def safety_holds(self) -> bool:
        """No two honest validators committed different digests at any sequence."""
        by_sequence: Dict[int, set] = defaultdict(set)
        for validator in self.honest:
            for sequence, block_digest in validator.committed.items():
                by_sequence[sequence].add(block_digest)
        return all(len(digests) <= 1 for digests in by_sequence.values()) and not self.safety_violations

    def dropped(self) -> Counter:
        total = Counter()
        for validator in self.validators:
            total.update(validator.dropped)
        return total

    def dump_events(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for event in self.events:
                f.write(event.to_line() + "\n")
        logger.info(f"{len(self.events)} consensus events written to {path}")
        return path
