import json

import pytest

from src.authentication.crypto import Signature, ZERO_DIGEST
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.consensus import Behavior, ConsensusEngine, ConsensusMessage, Phase
from src.blockchain.ledger import Block, CpRegistration, genesis_block
from src.blockchain.network import SimulatedNetwork
from src.simulation.consensus_demo import run_consensus_demo
from src.utility.errors import ConfigError, ConsensusStall, ProtocolViolation
from src.utility.models import ConsensusDemoRequest

SEEDS = range(100)


def first_block():
    return Block.build(1, genesis_block().digest, 0, ())


def test_validator_count_must_be_3f_plus_1():
    with pytest.raises(ConfigError):
        ConsensusEngine(n_validators=5)
    with pytest.raises(ConfigError):
        ConsensusEngine(behaviors={7: Behavior.SILENT})


def test_primary_rotation():
    engine = ConsensusEngine()
    validator = engine.validators[0]
    assert validator.primary(0) == 0
    assert validator.primary(5) == 1


def test_non_primary_cannot_propose():
    engine = ConsensusEngine()
    with pytest.raises(ProtocolViolation):
        engine.propose(2, first_block())


def test_idle_tick_changes_nothing():
    engine = ConsensusEngine()
    assert engine.advance_tick() == []
    assert engine.committed == {}
    assert engine.current_view == 0


def test_network_delivers_at_scheduled_tick():
    network = SimulatedNetwork(delay_range=(3, 3), seed=1)
    assert network.send(0, "hello", now=10) == 13
    assert network.deliver_due(12) == []
    delivered = network.deliver_due(13)
    assert [item.message for item in delivered] == ["hello"]


def test_bad_signature_is_dropped():
    engine = ConsensusEngine()
    block = first_block()
    forged = ConsensusMessage(Phase.PREPARE, 0, 1, block.digest, 1, Signature(b"\x00" * 32))
    assert engine.validators[0].handle_message(forged, now=1) == []
    assert engine.validators[0].dropped["bad_signature"] == 1


def test_all_honest_commit_same_block():
    engine = ConsensusEngine(seed=0)
    block = first_block()
    outcome = engine.run_block(block)
    assert outcome.committed
    assert all(v.committed[1] == block.digest for v in engine.validators)
    assert outcome.ticks <= engine.liveness_bound()


@pytest.mark.parametrize("behavior", [None, Behavior.SILENT, Behavior.EQUIVOCATING])
def test_safety_and_liveness_with_at_most_one_fault(behavior):
    for seed in SEEDS:
        behaviors = {seed % 4: behavior} if behavior else {}
        engine = ConsensusEngine(behaviors=behaviors, seed=seed, record_events=False)
        block = first_block()
        outcome = engine.run_block(block)
        assert outcome.committed, seed
        assert outcome.digest == block.digest
        assert outcome.ticks <= engine.liveness_bound(), (seed, outcome.ticks)
        assert engine.safety_holds(), seed


def test_silent_primary_triggers_view_change():
    engine = ConsensusEngine(behaviors={0: Behavior.SILENT}, seed=3)
    outcome = engine.run_block(first_block())
    assert outcome.committed
    assert outcome.ticks >= engine.timeout
    assert all(v.current_view == 1 for v in engine.honest)


@pytest.mark.parametrize("behaviors", [
    {0: Behavior.EQUIVOCATING, 1: Behavior.EQUIVOCATING},
    {1: Behavior.SILENT, 2: Behavior.EQUIVOCATING},
    {0: Behavior.SILENT, 3: Behavior.SILENT},
])
def test_safety_with_two_byzantine(behaviors):
    for seed in range(20):
        engine = ConsensusEngine(behaviors=behaviors, seed=seed, record_events=False)
        engine.run_block(first_block(), max_ticks=300)
        assert engine.safety_holds(), seed


def test_safety_under_message_loss():
    for seed in range(20):
        engine = ConsensusEngine(behaviors={seed % 4: Behavior.EQUIVOCATING}, drop_probability=0.2, seed=seed,
                                 record_events=False)
        engine.run_block(first_block(), max_ticks=400)
        assert engine.safety_holds(), seed


def test_same_seed_same_schedule():
    runs = []
    for _ in range(2):
        engine = ConsensusEngine(behaviors={1: Behavior.EQUIVOCATING}, seed=11)
        outcome = engine.run_block(first_block())
        runs.append((outcome.finished_at, [event.to_line() for event in engine.events]))
    assert runs[0] == runs[1]


def test_event_log(tmp_path):
    engine = ConsensusEngine(seed=0)
    engine.run_block(first_block())
    path = engine.dump_events(tmp_path / "events.jsonl")
    events = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    phases = {event["phase"] for event in events}
    assert {"PrePrepare", "Prepare", "Commit", "Committed"} <= phases
    assert events == sorted(events, key=lambda event: event["tick"])


def test_bcn_commits_through_pbft(scheme):
    bcn = BlockchainNetwork(scheme=scheme)
    keys = scheme.generate_keypair("cp")
    tx_id, block = bcn.submit_and_wait(CpRegistration("CP1", keys.public_key, "edge://cp1"))
    assert bcn.is_committed(tx_id)
    assert block.index == 1
    assert bcn.chain.head == block
    assert bcn.lookup_cp("CP1") == keys.public_key
    assert bcn.last_outcome.committed


def test_bcn_stall_keeps_mempool(scheme):
    bcn = BlockchainNetwork(behaviors={1: Behavior.SILENT, 2: Behavior.SILENT}, scheme=scheme)
    bcn.submit(CpRegistration("CP1", scheme.generate_keypair("cp").public_key, "edge://cp1"))
    with pytest.raises(ConsensusStall):
        bcn.cut_block()
    assert len(bcn.mempool) == 1
    assert len(bcn.chain) == 1
    assert bcn.engine.safety_holds()


def test_bcn_block_boundaries(scheme):
    bcn = BlockchainNetwork(scheme=scheme, use_consensus=False, block_interval=10)
    for i in range(3):
        bcn.submit(CpRegistration(f"CP{i}", scheme.generate_keypair(i).public_key, f"edge://cp{i}"))
        bcn.cut_block()
    assert [b.timestamp for b in bcn.chain.blocks] == [0, 10, 20, 30]
    assert bcn.chain.blocks[0].prev_digest == ZERO_DIGEST
    assert bcn.cut_block() is None


@pytest.mark.parametrize("faults", [dict(), dict(silent=[0]), dict(equivocating=[2])])
def test_consensus_demo_commits(faults):
    result = run_consensus_demo(ConsensusDemoRequest(blocks=3, **faults))
    assert result.committed == 3
    assert result.safety_holds
    assert result.max_commit_ticks <= result.liveness_bound


def test_consensus_demo_stalls_safely(tmp_path):
    result = run_consensus_demo(ConsensusDemoRequest(blocks=2, silent=[1, 2]), events_path=tmp_path / "ev.jsonl")
    assert result.committed == 0
    assert result.max_commit_ticks is None
    assert result.safety_holds
    assert (tmp_path / "ev.jsonl").exists()


def test_consensus_demo_rejects_contradictory_flags():
    with pytest.raises(ConfigError):
        run_consensus_demo(ConsensusDemoRequest(silent=[1], equivocating=[1]))
