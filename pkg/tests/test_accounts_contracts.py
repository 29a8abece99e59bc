import pytest

from src.authentication.auth import AuthSession, AuthState, authenticate
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.ledger import DEFAULT_INITIAL_BALANCE
from src.protocol.accounts import (
    FLAT_RATE_PLAN,
    CpAccount,
    UserAccount,
    build_user_registration,
    register_cp,
    register_user,
    register_users,
)
from src.protocol.contracts import (
    ContractFailure,
    ContractState,
    SmartContract,
    run_contract,
    settle_contracts,
)
from src.utility.errors import ProtocolViolation, TransactionRejected


def cp_session(user, cp, bcn, rng):
    _, session = authenticate(user, cp, bcn, rng)
    assert session.authenticated
    return session


def history(cp, bcn):
    return bcn.query_request_history(cp.cp_id, cp.address, cp.sign_history_request(bcn.scheme))


def test_duplicate_cp_registration_rejected(bcn, cp, scheme):
    with pytest.raises(TransactionRejected) as info:
        register_cp(CpAccount.create("CP1", scheme=scheme, address="edge://elsewhere"), bcn)
    assert "already registered" in info.value.reason


def test_register_user_funds_vid(bcn, scheme):
    user = UserAccount.create("alice", scheme=scheme)
    register_user(user, bcn.node_keypair(1), bcn)
    assert user.registered
    assert bcn.lookup_vid(user.vid) == user.keypair.public_key
    assert bcn.balance_of(user.vid, pending=False) == DEFAULT_INITIAL_BALANCE


def test_registration_by_outsider_rejected(bcn, scheme):
    user = UserAccount.create("alice", scheme=scheme)
    outsider = scheme.generate_keypair("not-a-node")
    with pytest.raises(TransactionRejected) as info:
        bcn.submit(build_user_registration(user, outsider, scheme=scheme))
    assert info.value.reason == "registering node is not a blockchain node"
    assert bcn.lookup_vid(user.vid) is None


def test_register_users_in_one_block(bcn, scheme):
    population = [UserAccount.create(f"batch/{i}", scheme=scheme) for i in range(25)]
    assert register_users(population, bcn.node_keypair(0), bcn) == 1
    assert all(bcn.is_registered_vid(user.vid) for user in population)
    assert register_users(population, bcn.node_keypair(0), bcn) == 0


def test_contract_commits_and_moves_tokens(bcn, cp, users, rng):
    user = users[0]
    contract = run_contract(user, cp, 7, bcn, cp_session(user, cp, bcn, rng), fee=3)
    assert contract.ok
    assert contract.state == ContractState.COMMITTED
    assert bcn.is_committed(contract.payment_tx_id)
    assert bcn.is_committed(contract.record_tx_id)
    assert bcn.balance_of(user.vid, pending=False) == DEFAULT_INITIAL_BALANCE - 3
    assert bcn.chain.balance_of_cp("CP1") == 3
    [record] = history(cp, bcn)
    assert record.contract_id == contract.contract_id
    assert record.content_metadata.content_id == 7
    assert record.plan is None
    assert record.timestamp == contract.timestamp


def test_contract_for_flat_rate_plan(bcn, cp, users, rng):
    contract = run_contract(users[1], cp, FLAT_RATE_PLAN, bcn, cp_session(users[1], cp, bcn, rng))
    assert contract.state == ContractState.COMMITTED
    [record] = history(cp, bcn)
    assert record.plan == FLAT_RATE_PLAN
    assert record.content_metadata is None


@pytest.mark.parametrize("service", [99, "gold-plan"])
def test_unknown_service(bcn, cp, users, rng, service):
    contract = run_contract(users[0], cp, service, bcn, cp_session(users[0], cp, bcn, rng))
    assert contract.failure == ContractFailure.UNKNOWN_SERVICE
    assert contract.state == ContractState.REQUESTED
    assert history(cp, bcn) == []


def test_unauthenticated_session(bcn, cp, users, rng):
    session = cp_session(users[0], cp, bcn, rng)
    contract = run_contract(users[1], cp, 7, bcn, session)
    assert contract.failure == ContractFailure.UNAUTHENTICATED
    assert contract.payment_tx_id is None
    assert bcn.balance_of(users[1].vid) == DEFAULT_INITIAL_BALANCE


def test_unknown_vid(bcn, cp, scheme):
    stranger = UserAccount.create("stranger", scheme=scheme)
    forged = AuthSession(
        session_id="forged", role="cp", vid=stranger.vid, nonce=0, state=AuthState.AUTHENTICATED, cp_id="CP1"
    )
    contract = run_contract(stranger, cp, 7, bcn, forged)
    assert contract.failure == ContractFailure.UNKNOWN_VID


def test_fee_equal_to_balance_leaves_zero(scheme, catalog, rng):
    bcn = BlockchainNetwork(scheme=scheme, initial_balance=1, use_consensus=False)
    cp = CpAccount.create("CP1", scheme=scheme, catalog=catalog)
    register_cp(cp, bcn)
    user = UserAccount.create("alice", scheme=scheme)
    register_user(user, bcn.node_keypair(0), bcn)
    contract = run_contract(user, cp, 8, bcn, cp_session(user, cp, bcn, rng), fee=1)
    assert contract.state == ContractState.COMMITTED
    assert bcn.balance_of(user.vid, pending=False) == 0


def test_insufficient_balance_leaves_no_record(scheme, catalog, rng):
    bcn = BlockchainNetwork(scheme=scheme, initial_balance=0, use_consensus=False)
    cp = CpAccount.create("CP1", scheme=scheme, catalog=catalog)
    register_cp(cp, bcn)
    user = UserAccount.create("alice", scheme=scheme)
    register_user(user, bcn.node_keypair(0), bcn)
    contract = run_contract(user, cp, 8, bcn, cp_session(user, cp, bcn, rng))
    assert contract.failure == ContractFailure.INSUFFICIENT_BALANCE
    assert contract.state == ContractState.PAYMENT_REQUESTED
    assert contract.payment_tx_id is None
    assert history(cp, bcn) == []


def test_deferred_contracts_settle_together(bcn, cp, users, rng):
    contracts = [
        run_contract(user, cp, 7, bcn, cp_session(user, cp, bcn, rng), wait=False) for user in users[:4]
    ]
    assert all(contract.state == ContractState.DELIVERED for contract in contracts)
    assert history(cp, bcn) == []
    settled = settle_contracts(contracts, bcn)
    assert settled == contracts
    assert all(contract.state == ContractState.COMMITTED for contract in contracts)
    assert len(history(cp, bcn)) == 4
    assert not bcn.mempool


def test_lifecycle_cannot_skip_states(users):
    contract = SmartContract("c1", users[0].vid, "CP1", FLAT_RATE_PLAN, fee=1)
    with pytest.raises(ProtocolViolation):
        contract.advance(ContractState.PAID)
    contract.advance(ContractState.PAYMENT_REQUESTED)
    contract.halt(ContractFailure.INSUFFICIENT_BALANCE)
    with pytest.raises(ProtocolViolation):
        contract.advance(ContractState.PAID)


def test_history_lists_every_contract_in_order(bcn, cp, users, rng):
    sessions = {id(user): cp_session(user, cp, bcn, rng) for user in users[:2]}
    issued = [
        run_contract(user, cp, service, bcn, sessions[id(user)])
        for user, service in [(users[0], 7), (users[1], 8), (users[0], FLAT_RATE_PLAN)]
    ]
    records = history(cp, bcn)
    assert [record.contract_id for record in records] == [contract.contract_id for contract in issued]
    assert [record.vid for record in records] == [users[0].vid, users[1].vid, users[0].vid]
