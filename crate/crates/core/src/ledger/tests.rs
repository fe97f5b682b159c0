use serde_json::json;

use super::*;
use crate::Duration;

fn roster(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("peer-{i}")).collect()
}

fn solo() -> Peer {
    let mut p = Peer::new("peer-0", roster(1), PeerConfig::default());
    p.bootstrap(0).unwrap();
    p
}

fn registry_tx(name: &str, nonce: u64) -> Transaction {
    Transaction::with_payload(
        Contract::ServiceRegistry,
        "register",
        &json!({"name": name, "metrics_endpoint": format!("http://{name}/metrics")}),
        "peer-0",
        nonce,
    )
}

#[test]
fn genesis_shape() {
    let p = solo();
    let g = &p.chain()[0];
    assert_eq!(g.height, 0);
    assert_eq!(g.prev_hash, crate::crypto::Hash32::ZERO);
    assert!(p.state().is_active_identity("peer-0"));
}

#[test]
fn duplicate_tx_rejected() {
    let mut p = solo();
    let tx = registry_tx("a", 1);
    p.submit(tx.clone()).unwrap();
    assert_eq!(p.submit(tx.clone()), Err(TxError::Duplicate(tx.tx_id)));
}

#[test]
fn duplicate_nonce_rejected() {
    let mut p = solo();
    p.submit(registry_tx("a", 1)).unwrap();
    assert!(matches!(p.submit(registry_tx("b", 1)), Err(TxError::DuplicateNonce { nonce: 1, .. })));
}

#[test]
fn forged_id_is_bad_hash() {
    let mut p = solo();
    let mut tx = registry_tx("a", 1);
    tx.payload[3] ^= 1;
    assert_ne!(tx.compute_id(), tx.tx_id);
    assert_eq!(p.submit(tx.clone()), Err(TxError::BadHash(tx.tx_id)));
}

#[test]
fn unknown_contract_name() {
    assert!(matches!("oracle".parse::<Contract>(), Err(TxError::UnknownContract(_))));
    for c in Contract::ALL {
        assert_eq!(c.as_str().parse::<Contract>().unwrap(), c);
    }
}

#[test]
fn block_drains_max_txs_in_order() {
    let mut p = Peer::new("peer-0", roster(1), PeerConfig { max_block_txs: 2, heartbeat: false });
    p.bootstrap(0).unwrap();
    let txs: Vec<_> = (1..=3).map(|i| registry_tx(&format!("s{i}"), i)).collect();
    for t in &txs {
        p.submit(t.clone()).unwrap();
    }
    let b = p.propose(10).unwrap().unwrap();
    assert_eq!(b.txs, txs[..2].to_vec());
}

#[test]
fn empty_mempool_without_heartbeat_does_not_propose() {
    let mut p = solo();
    assert_eq!(p.propose(10).unwrap(), None);
    let mut hb = Peer::new("peer-0", roster(1), PeerConfig { max_block_txs: 10, heartbeat: true });
    hb.bootstrap(0).unwrap();
    assert!(hb.propose(10).unwrap().unwrap().txs.is_empty());
}

#[test]
fn non_leader_cannot_propose() {
    let mut p = Peer::new("peer-1", roster(3), PeerConfig::default());
    p.bootstrap(0).unwrap();
    // Height 1 belongs to peer-1, height 2 to peer-2.
    assert!(p.is_leader());
    let b = p.propose_heartbeat(5).unwrap();
    p.accept_block(b).unwrap();
    assert!(matches!(p.propose(10), Err(LedgerError::NotLeader { height: 2, .. })));
}

#[test]
fn seven_peer_schedule() {
    let leaders: Vec<usize> = (0..7).map(|h| leader_index(h, 7)).collect();
    assert_eq!(leaders, vec![0, 1, 2, 3, 4, 5, 6]);
    assert_eq!(leader_index(7, 7), 0);
}

#[test]
fn honest_block_validates_and_tamper_is_caught() {
    let mut p = solo();
    p.submit(registry_tx("a", 1)).unwrap();
    let b = p.propose(10).unwrap().unwrap();
    assert_eq!(p.validate_block(&b), Ok(()));

    let mut forged = b.clone();
    forged.txs[0].payload[0] ^= 0x01;
    let faults = p.validate_block(&forged).unwrap_err();
    assert!(faults.iter().any(|f| matches!(f, BlockFault::InvalidTx { error: TxError::BadHash(_), .. })));

    let mut relabeled = b.clone();
    relabeled.timestamp += 1;
    let faults = p.validate_block(&relabeled).unwrap_err();
    assert!(faults.iter().any(|f| matches!(f, BlockFault::HashMismatch { .. })));
}

#[test]
fn skipped_height_rejected() {
    let p = solo();
    let b = Block::new(2, p.chain()[0].block_hash, 10, "peer-0", vec![]);
    let faults = p.validate_block(&b).unwrap_err();
    assert!(faults.contains(&BlockFault::HeightGap { expected: 1, got: 2 }));
}

#[test]
fn vault_registration_visible() {
    let mut p = solo();
    p.submit(Transaction::with_payload(
        Contract::ServiceRegistry,
        "register",
        &json!({"name": "vault", "metrics_endpoint": "http://vault:8200/v1/sys/metrics", "container": "vault:1.15"}),
        "peer-0",
        1,
    ))
    .unwrap();
    let b = p.propose(10).unwrap().unwrap();
    p.accept_block(b).unwrap();
    let rec = &p.state().services["vault"];
    assert_eq!(rec.metrics_endpoint, "http://vault:8200/v1/sys/metrics");
    assert_eq!(rec.container.as_deref(), Some("vault:1.15"));
    assert_eq!(rec.owner, "peer-0");
}

fn sample_token(target: f64) -> crate::nft::S528Token {
    let ctx = crate::slogen::GenerationContext::new(
        "vault",
        "vault_requests_total",
        crate::slogen::Objective::availability(target, Duration::from_days(30)),
    );
    let slo = crate::slogen::template_slo(&ctx).unwrap();
    let prov = crate::nft::Provenance { fl_round: 0, backend: "template".into(), created_at: 0, issuer: "peer-0".into() };
    crate::nft::encode_s528(crate::nft::Tokenizable::Slo(&slo), prov, 1)
}

#[test]
fn double_mint_in_one_block() {
    let mut p = solo();
    let tok = sample_token(0.99);
    let a = Transaction::with_payload(Contract::Nft, "mint", &tok, "peer-0", 1);
    let b = Transaction::with_payload(Contract::Nft, "mint", &tok, "peer-0", 2);
    p.submit(a.clone()).unwrap();
    p.submit(b.clone()).unwrap();
    let blk = p.propose(10).unwrap().unwrap();
    assert_eq!(blk.txs.len(), 2);
    let before = p.state().tokens.clone();
    p.accept_block(blk).unwrap();
    assert_eq!(p.state().receipts[&a.tx_id].outcome, Outcome::Applied);
    assert!(matches!(p.state().receipts[&b.tx_id].outcome, Outcome::AppliedWithError(_)));
    assert_eq!(p.state().tokens.len(), before.len() + 1);
}

#[test]
fn rejected_handler_leaves_state_untouched() {
    let mut p = solo();
    let before = p.state().clone();
    let tx = Transaction::with_payload(Contract::Identity, "revoke", &json!({"id": "ghost"}), "peer-0", 1);
    p.submit(tx.clone()).unwrap();
    let b = p.propose(10).unwrap().unwrap();
    p.accept_block(b).unwrap();
    assert!(matches!(p.state().receipts[&tx.tx_id].outcome, Outcome::AppliedWithError(_)));
    assert_eq!(p.state().identities, before.identities);
    assert_eq!(p.state().services, before.services);
}

#[test]
fn unregistered_submitter_rejected_in_block() {
    let p = solo();
    let tx = Transaction::with_payload(Contract::ServiceRegistry, "register", &json!({"name": "x", "metrics_endpoint": "e"}), "mallory", 1);
    let b = Block::new(1, p.chain()[0].block_hash, 10, "peer-0", vec![tx]);
    let faults = p.validate_block(&b).unwrap_err();
    assert!(matches!(faults[0], BlockFault::InvalidTx { error: TxError::UnknownSubmitter(_), .. }));
}

fn fifty_block_fixture() -> Vec<Block> {
    let mut net = Network::new(
        NetworkConfig { peer_count: 3, peer: PeerConfig { max_block_txs: 2, heartbeat: false }, ..NetworkConfig::default() },
        0,
    )
    .unwrap();
    let mut k = 0;
    while net.peer(0).chain().len() < 51 {
        for _ in 0..2 {
            let peer = k % 3;
            let id = net.peer_id(peer).to_string();
            net.submit_as(peer, &id, Contract::ServiceRegistry, "register", &json!({"name": format!("svc-{k}"), "metrics_endpoint": "x"}))
                .unwrap();
            k += 1;
        }
        let t = net.now() + 500;
        net.advance_to(t);
    }
    net.settle();
    net.peer(0).chain()[..51].to_vec()
}

#[test]
fn fifty_block_dual_replay() {
    let chain = fifty_block_fixture();
    let a = Peer::replay("peer-0", roster(3), PeerConfig::default(), chain.clone()).unwrap();
    let b = Peer::replay("peer-2", roster(3), PeerConfig::default(), chain.clone()).unwrap();
    assert_eq!(a.chain().len(), 51);
    assert_eq!(a.state().state_hash(), b.state().state_hash());
    assert_eq!(ContractState::replay(&chain).state_hash(), a.state().state_hash());
}

#[test]
fn chain_dump_round_trip_and_tamper() {
    let chain = fifty_block_fixture();
    let mut buf = Vec::new();
    write_chain_dump(&mut buf, &chain).unwrap();
    assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), chain.len());
    let back = read_chain_dump(&buf[..]).unwrap();
    assert_eq!(back, chain);

    // Flip one byte in a historical tx payload: that block or a later one must fail.
    let mut tampered = chain.clone();
    tampered[10].txs[0].payload[5] ^= 0x20;
    let err = Peer::replay("peer-0", roster(3), PeerConfig::default(), tampered).unwrap_err();
    assert!(matches!(err, LedgerError::Rejected { height: 10, .. }));
}

#[test]
fn network_one_peer_ten_txs() {
    let report = run_network(NetworkConfig { peer_count: 1, ..NetworkConfig::default() }, 10.0, Duration::from_secs(1)).unwrap();
    assert!(!report.rows.is_empty());
    assert_eq!(report.rows.iter().map(|r| r.tx_count).sum::<usize>(), 10);
    assert!(report.consistent);
    assert!(report.to_csv().starts_with("height,proposer,tx_count,accept_latency_ms\n"));
}

#[test]
fn network_seven_peers_identical() {
    let cfg = NetworkConfig { peer_count: 7, ..NetworkConfig::default() };
    let mut net = Network::new(cfg, 0).unwrap();
    for k in 0..40u64 {
        let peer = (k % 7) as usize;
        let id = net.peer_id(peer).to_string();
        net.submit_as(peer, &id, Contract::ServiceRegistry, "register", &json!({"name": format!("s{k}"), "metrics_endpoint": "x"})).unwrap();
        let t = net.now() + 37;
        net.advance_to(t);
    }
    net.settle();
    assert!(net.chains_identical());
    assert_eq!(net.peer(3).state().services.len(), 40);
    // The gossip reached every mempool before inclusion emptied them.
    assert!(net.peers().iter().all(|p| p.mempool().is_empty()));
    for w in net.peer(0).chain().windows(2) {
        assert_eq!(w[1].prev_hash, w[0].block_hash);
    }
}

#[test]
fn tx_reaches_all_mempools_after_latency() {
    let mut net = Network::new(NetworkConfig { peer_count: 3, ..NetworkConfig::default() }, 0).unwrap();
    let tx = Transaction::with_payload(Contract::ServiceRegistry, "register", &json!({"name": "a", "metrics_endpoint": "x"}), "peer-1", 9);
    net.submit(1, tx.clone()).unwrap();
    net.advance_to(49);
    assert!(!net.peer(0).mempool().contains(&tx));
    net.advance_to(50);
    assert!(net.peers().iter().all(|p| p.mempool().contains(&tx)));
}

#[test]
fn doubling_latency_increases_mean() {
    let base = NetworkConfig { peer_count: 4, latency: Duration::from_millis(40), ..NetworkConfig::default() };
    let slow = NetworkConfig { latency: Duration::from_millis(80), ..base };
    let a = run_network(base, 20.0, Duration::from_secs(5)).unwrap();
    let b = run_network(slow, 20.0, Duration::from_secs(5)).unwrap();
    assert!(b.mean_ms > a.mean_ms, "{} vs {}", b.mean_ms, a.mean_ms);
}

#[test]
fn peer_count_bounds() {
    assert!(matches!(Network::new(NetworkConfig { peer_count: 0, ..NetworkConfig::default() }, 0), Err(LedgerError::PeerCount { .. })));
    assert!(matches!(Network::new(NetworkConfig { peer_count: 8, ..NetworkConfig::default() }, 0), Err(LedgerError::PeerCount { .. })));
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn any_byte_flip_in_history_is_detected(block in 1usize..6, tx in 0usize..2, byte in 0usize..40, bit in 0u8..8) {
            let mut p = Peer::new("peer-0", roster(1), PeerConfig { max_block_txs: 2, heartbeat: false });
            p.bootstrap(0).unwrap();
            for h in 1..6u64 {
                p.submit(registry_tx(&format!("a{h}"), 2 * h)).unwrap();
                p.submit(registry_tx(&format!("b{h}"), 2 * h + 1)).unwrap();
                let b = p.propose(h as i64 * 100).unwrap().unwrap();
                p.accept_block(b).unwrap();
            }
            let mut chain = p.chain().to_vec();
            let payload = &mut chain[block].txs[tx].payload;
            let i = byte % payload.len();
            payload[i] ^= 1 << bit;
            prop_assert!(Peer::replay("peer-0", roster(1), PeerConfig::default(), chain).is_err());
        }

        #[test]
        fn state_hash_independent_of_replica(n in 1usize..5, txs in 1usize..12) {
            let mut net = Network::new(NetworkConfig { peer_count: n, ..NetworkConfig::default() }, 0).unwrap();
            for k in 0..txs {
                let peer = k % n;
                let id = net.peer_id(peer).to_string();
                net.submit_as(peer, &id, Contract::ServiceRegistry, "register", &json!({"name": format!("s{k}"), "metrics_endpoint": "x"})).unwrap();
            }
            net.settle();
            prop_assert!(net.chains_identical());
            let h = net.peer(0).state().state_hash();
            let replayed = ContractState::replay(net.peer(n - 1).chain());
            prop_assert_eq!(replayed.state_hash(), h);
        }
    }
}
