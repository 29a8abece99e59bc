from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from src.authentication.auth import AuthSession, HandshakeTranscript, authenticate
from src.authentication.crypto import get_scheme
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.ledger import ContractRecord, requested_contents
from src.caching.feature_cache import (
    CacheState,
    ContentLibrary,
    CorrelationVector,
    cache_lookup,
    dump_correlations,
    extract_feature_popularity,
    random_prefetch,
    rank_and_prefetch,
    ranked_feature_report,
    score_library,
    Lookup,
)
from src.protocol.accounts import CpAccount, UserAccount, register_cp, register_users
from src.protocol.contracts import ContractState, SmartContract, run_contract, settle_contracts
from src.simulation.metrics import Tally, compute_norm_delivery_time
from src.trace.assignment import CpAssignment, partition_libraries, route_requests
from src.trace.movielens import DEFAULT_WINDOW, GENRES, MovieRecord, TraceWindow, parse_movies, parse_ratings
from src.trace.synthetic import synth_trace
from src.utility.errors import ProtocolViolation
from src.utility.logger import logger
from src.utility.models import (
    Architecture,
    FeatureShare,
    MetricsReport,
    MetricsRow,
    ScenarioConfig,
)

# Fast mode settles queued contracts in blocks of this many.
FAST_BATCH = 256

_ARCH_ORDER = list(Architecture)


def load_trace(config: ScenarioConfig) -> Tuple[List[MovieRecord], TraceWindow]:
    """Catalog and request trace for ``config``: generated, or parsed from MovieLens files."""
    if config.synthetic:
        synthetic = synth_trace(
            n_contents=config.n_contents,
            n_requests=config.n_requests,
            zipf_s=config.zipf_s,
            seed=config.seed,
            n_users=config.n_users,
        )
        return synthetic.catalog, synthetic.window
    movies_path, ratings_path = config.dataset_paths()
    window = (config.window_start, config.window_end) if config.window_start is not None else DEFAULT_WINDOW
    catalog = parse_movies(movies_path, ignored_genres=config.ignored_genres)
    return catalog, parse_ratings(ratings_path, window)


@dataclass
class World:
    """Every stakeholder of one scenario run, wired to one BCN."""

    config: ScenarioConfig
    bcn: BlockchainNetwork
    cps: Dict[str, CpAccount]
    libraries: Dict[str, ContentLibrary]
    users: Dict[int, UserAccount]
    rng: np.random.Generator
    transcript: HandshakeTranscript = field(default_factory=HandshakeTranscript)
    sessions: Dict[Tuple[int, str], AuthSession] = field(default_factory=dict)
    pending: List[SmartContract] = field(default_factory=list)
    correlations: Dict[Tuple[str, Architecture], CorrelationVector] = field(default_factory=dict)
    contracts: List[SmartContract] = field(default_factory=list)

    def serve(self, user_id: int, cp_id: str, content_id: int) -> SmartContract:
        """Handshake on first contact, then one smart contract for ``content_id``."""
        user, cp = self.users[user_id], self.cps[cp_id]
        key = (user_id, cp_id)
        if key not in self.sessions:
            _, cp_session = authenticate(user, cp, self.bcn, self.rng, self.transcript)
            if not cp_session.authenticated:
                raise ProtocolViolation(f"User {user_id} failed to authenticate with {cp_id}: {cp_session.failure}")
            self.sessions[key] = cp_session
        fast = self.config.fast
        contract = run_contract(user, cp, content_id, self.bcn, self.sessions[key], fee=self.config.fee, wait=not fast)
        if not contract.ok:
            raise ProtocolViolation(f"Contract {contract.contract_id} halted: {contract.failure.value}")
        self.contracts.append(contract)
        if fast:
            self.pending.append(contract)
            if len(self.pending) >= FAST_BATCH:
                self.settle()
        return contract

    def settle(self) -> None:
        if self.pending:
            settle_contracts(self.pending, self.bcn)
            self.pending = []

    def history(self, cp_id: str) -> List[ContractRecord]:
        """The whole ledger's request history, as CP ``cp_id`` obtains it from the BCN."""
        self.settle()
        cp = self.cps[cp_id]
        return self.bcn.query_request_history(cp_id, cp.address, cp.sign_history_request(self.bcn.scheme))


def build_world(config: ScenarioConfig, catalog: List[MovieRecord], assignment: CpAssignment, user_ids) -> World:
    """Registers every CP with its library and every user seen in the trace."""
    scheme = get_scheme(config.crypto_scheme)
    bcn = BlockchainNetwork(
        n_validators=config.n_validators,
        timeout=config.consensus_timeout,
        seed=config.seed,
        block_interval=config.block_interval,
        initial_balance=config.initial_balance,
        scheme=scheme,
        use_consensus=not config.fast,
    )
    libraries = assignment.build_libraries(catalog)
    cps = {}
    for cp_id in config.cp_ids:
        cp = CpAccount.create(cp_id, scheme=scheme, catalog=libraries[cp_id].metadata())
        register_cp(cp, bcn)
        cps[cp_id] = cp
    users = {
        int(uid): UserAccount.create(f"user/{config.seed}/{int(uid)}", scheme=scheme, user_id=int(uid))
        for uid in sorted(set(int(u) for u in user_ids))
    }
    register_users(users.values(), bcn.node_keypair(0), bcn)
    return World(
        config=config,
        bcn=bcn,
        cps=cps,
        libraries=libraries,
        users=users,
        rng=np.random.default_rng([config.seed, 1]),
    )


def build_caches(world: World, cp_id: str, architecture: Architecture) -> Dict[int, CacheState]:
    """One cache per Z of the sweep for ``cp_id`` under ``architecture``."""
    config = world.config
    library = world.libraries[cp_id]
    if architecture == Architecture.CONVENTIONAL_RANDOM:
        index = config.cp_ids.index(cp_id)
        return {
            z: random_prefetch(library, z, np.random.default_rng([config.seed, 2, index]))
            for z in config.z_sweep
        }
    history = world.history(cp_id)
    if architecture == Architecture.CONVENTIONAL_OWN_HISTORY:
        history = [record for record in history if record.cp_id == cp_id]
    popularity = extract_feature_popularity(requested_contents(history))
    world.correlations[(cp_id, architecture)] = score_library(library, popularity)
    return {z: rank_and_prefetch(library, popularity, z) for z in config.z_sweep}


def _dump_artifacts(world: World, caches, artifacts_dir: Path) -> None:
    """Correlation dumps (cached flag at the largest Z), chain export and handshake transcript."""
    top_z = max(world.config.z_sweep, default=None)
    for (cp_id, architecture), correlation in sorted(world.correlations.items(), key=lambda item: (item[0][0], _ARCH_ORDER.index(item[0][1]))):
        if top_z is None:
            break
        cache = caches[(cp_id, architecture)][top_z]
        dump_correlations(correlation, cache, artifacts_dir / f"correlations_{cp_id}_{architecture.value}.csv")
    world.bcn.chain.export(artifacts_dir / "chain.jsonl")
    world.transcript.dump(artifacts_dir / "handshakes.jsonl")


def run_scenario(config: ScenarioConfig, artifacts_dir=None) -> MetricsReport:
    """
    Runs warmup, cache placement and evaluation for every CP, architecture and Z.

    Phase 1 replays the chronologically earlier part of the trace for the
    established CPs as committed smart contracts. Phase 2 places caches: BCdn
    scores each library against the whole ledger, ConventionalOwnHistory
    against the CP's own contracts, ConventionalRandom draws a seeded random
    subset. Phase 3 replays the rest of the trace through the full protocol
    path for every CP and counts hits per (architecture, Z).

    Args:
        config: A validated scenario.
        artifacts_dir: If given, receives the chain export, the handshake
            transcript and the correlation dumps.

    Returns:
        MetricsReport: One row per (CP, architecture, Z), sorted in that order.
    """
    logger.info(f"Scenario {config.run_id()}: loading trace")
    catalog, trace = load_trace(config)
    warmup, evaluation = trace.split(config.warmup_fraction)

    assignment = partition_libraries(catalog, config.cp_count, config.per_cp, config.seed)
    owners = assignment.owner_map()
    warm_streams = route_requests(warmup, assignment)
    established = set(config.established_cps)
    warm_events = [
        (int(u), owners[int(m)], int(m))
        for u, m in zip(warmup.user_ids, warmup.movie_ids)
        if int(m) in owners and owners[int(m)] in established
    ]
    eval_events = [
        (int(u), owners[int(m)], int(m))
        for u, m in zip(evaluation.user_ids, evaluation.movie_ids)
        if int(m) in owners
    ]
    # Only users who show up in a replayed request get an identity.
    user_ids = {u for u, _, _ in warm_events} | {u for u, _, _ in eval_events}
    world = build_world(config, catalog, assignment, user_ids)
    logger.info(
        f"Scenario {config.run_id()}: {len(warm_events)} warmup requests "
        f"({', '.join(f'{cp}={len(s)}' for cp, s in warm_streams.items())} routed), "
        f"{len(eval_events)} evaluation requests"
    )

    for user_id, cp_id, content_id in warm_events:
        world.serve(user_id, cp_id, content_id)
    world.settle()
    warm_contracts = len(world.contracts)
    logger.info(f"Scenario {config.run_id()}: warmup done, {warm_contracts} contracts on chain")

    caches: Dict[Tuple[str, Architecture], Dict[int, CacheState]] = {}

    def place_caches() -> None:
        for cp_id in config.cp_ids:
            for architecture in config.architectures_of(cp_id):
                caches[(cp_id, architecture)] = build_caches(world, cp_id, architecture)

    place_caches()
    tallies = {key: {z: Tally() for z in config.z_sweep} for key in caches}
    served_per_cp: Dict[str, int] = {cp_id: 0 for cp_id in config.cp_ids}

    for position, (user_id, cp_id, content_id) in enumerate(eval_events, start=1):
        world.serve(user_id, cp_id, content_id)
        served_per_cp[cp_id] += 1
        for architecture in config.architectures_of(cp_id):
            for z, cache in caches[(cp_id, architecture)].items():
                tallies[(cp_id, architecture)][z].count(cache_lookup(cache, content_id) == Lookup.HIT)
        if config.refresh_every and position % config.refresh_every == 0 and position < len(eval_events):
            place_caches()
    world.settle()

    rows = []
    for (cp_id, architecture), by_z in sorted(tallies.items(), key=lambda item: (item[0][0], _ARCH_ORDER.index(item[0][1]))):
        for z in sorted(by_z):
            tally = by_z[z]
            chr = tally.chr
            rows.append(MetricsRow(
                cp=cp_id,
                architecture=architecture,
                z=z,
                chr=chr,
                norm_delivery_time=compute_norm_delivery_time(chr, config.tau_ratio),
                requests=tally.requests,
                hits=tally.hits,
            ))

    ledger_records = world.history(config.cp_ids[0])
    committed = [c for c in world.contracts if c.state == ContractState.COMMITTED]
    eval_records = ledger_records[warm_contracts:]
    reconciled = (
        len(committed) == len(world.contracts) == len(ledger_records)
        and all(
            sum(1 for record in eval_records if record.cp_id == cp_id) == served_per_cp[cp_id]
            for cp_id in config.cp_ids
        )
        and all(tally.requests == served_per_cp[cp_id] for (cp_id, _), by_z in tallies.items() for tally in by_z.values())
    )
    verified = world.bcn.chain.verify_chain()
    if not reconciled:
        logger.error(f"Scenario {config.run_id()}: request tallies do not reconcile with the ledger")

    overall = extract_feature_popularity(ledger_records[:warm_contracts])
    ranking = ranked_feature_report(overall, GENRES) if len(overall) == len(GENRES) else ranked_feature_report(overall)
    report = MetricsReport(
        run_id=config.run_id(),
        tau_ratio=config.tau_ratio,
        rows=rows,
        feature_ranking=[
            FeatureShare(rank=int(row.rank), feature=str(row.feature), share=float(row.share))
            for row in ranking.itertuples(index=False)
        ],
        blocks=len(world.bcn.chain),
        contracts_committed=len(committed),
        ledger_verified=verified,
        ledger_reconciled=reconciled,
    )
    if artifacts_dir is not None:
        _dump_artifacts(world, caches, Path(artifacts_dir))
    logger.info(f"Scenario {config.run_id()}: {len(rows)} rows, {len(world.bcn.chain)} blocks, ledger verified={verified}")
    return report
