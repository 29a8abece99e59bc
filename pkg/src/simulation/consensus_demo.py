from src.authentication.crypto import get_scheme
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.consensus import Behavior
from src.blockchain.ledger import CpRegistration
from src.utility.errors import ConfigError, ConsensusStall
from src.utility.logger import logger
from src.utility.models import ConsensusDemoRequest, ConsensusDemoResult


def run_consensus_demo(request: ConsensusDemoRequest, events_path=None) -> ConsensusDemoResult:
    """
    Commits ``request.blocks`` one-transaction blocks through PBFT with the requested faults.

    Proposing stops at the first block that stalls; safety is checked over
    everything the honest validators committed.
    """
    overlap = set(request.silent) & set(request.equivocating)
    if overlap:
        raise ConfigError(f"Validators {sorted(overlap)} cannot be both silent and equivocating")
    behaviors = {i: Behavior.SILENT for i in request.silent}
    behaviors.update({i: Behavior.EQUIVOCATING for i in request.equivocating})
    scheme = get_scheme()
    bcn = BlockchainNetwork(
        n_validators=request.n_validators,
        behaviors=behaviors,
        timeout=request.timeout,
        drop_probability=request.drop_probability,
        seed=request.seed,
        scheme=scheme,
        record_events=events_path is not None,
    )
    committed = 0
    ticks = []
    for i in range(request.blocks):
        bcn.submit(CpRegistration(
            cp_id=f"DEMO{i}",
            cp_public_key=scheme.generate_keypair(f"demo/{i}").public_key,
            address=f"edge://demo{i}",
        ))
        try:
            bcn.cut_block()
        except ConsensusStall as e:
            logger.warning(f"Consensus demo: {e}")
            break
        committed += 1
        ticks.append(bcn.last_outcome.ticks)

    engine = bcn.engine
    if events_path is not None:
        engine.dump_events(events_path)
    return ConsensusDemoResult(
        n_validators=engine.n,
        faulty=sorted(behaviors),
        committed=committed,
        proposed=request.blocks,
        max_commit_ticks=max(ticks) if ticks else None,
        liveness_bound=engine.liveness_bound(),
        final_view=engine.current_view,
        safety_holds=engine.safety_holds(),
        dropped_messages=sum(engine.dropped().values()),
    )
