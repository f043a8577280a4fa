use union_core::ids::{FunctionaryId, VmxoId};
use union_core::protocol::log::{Body, RosterEntry};
use union_core::protocol::{Bridge, BridgeConfig, PeginState, ProtocolError};
use union_core::txgraph::TemplateKind;

const DENOM: u64 = 1_000_000;

fn config(n: u32, vmxos: u32) -> BridgeConfig {
    let mut c = BridgeConfig::new(n, 5, DENOM, vmxos);
    c.users = 2;
    c.user_funds = c.default_user_funds(vmxos as u64);
    c
}

fn bridge(c: BridgeConfig) -> Bridge {
    let roster = (0..c.functionaries)
        .map(|i| RosterEntry {
            id: FunctionaryId(i),
            honest: true,
            strategy: "honest".into(),
            funds: c.functionary_funds,
        })
        .collect();
    Bridge::new(c, roster, 0, "test").unwrap()
}

fn steps(b: &mut Bridge, n: usize) {
    for _ in 0..n {
        b.step();
    }
}

fn rejected(b: &Bridge, action: &str) -> Vec<String> {
    b.log()
        .events()
        .iter()
        .filter_map(|e| match &e.body {
            Body::Rejected {
                action: a, reason, ..
            } if a == action => Some(reason.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn pegin_mints_once_confirmed() {
    let mut b = bridge(config(3, 2));
    b.request_pegin(0, DENOM).unwrap();
    steps(&mut b, 20);
    assert_eq!(b.wrapped(0), DENOM);
    assert_eq!(b.pegins[0].state, PeginState::Minted);
}

#[test]
fn wrong_denomination_is_refused() {
    let mut b = bridge(config(3, 2));
    assert!(matches!(
        b.request_pegin(0, DENOM + 1),
        Err(ProtocolError::WrongDenomination { .. })
    ));
}

#[test]
fn deposit_signed_by_all_but_one_is_never_minted() {
    let mut b = bridge(config(3, 2));
    b.request_pegin_signed_by(0, DENOM, &[FunctionaryId(0), FunctionaryId(1)])
        .unwrap();
    steps(&mut b, 20);
    assert_eq!(b.wrapped(0), 0);
    assert_eq!(b.pegins[0].state, PeginState::Rejected);
    let reasons = rejected(&b, "mint");
    assert_eq!(
        reasons,
        [ProtocolError::MissingSignature(FunctionaryId(2)).to_string()]
    );
}

#[test]
fn reorged_deposit_lacks_confirmations() {
    let mut b = bridge(config(3, 2));
    b.request_pegin(0, DENOM).unwrap();
    while b.pegins[0].locking_block.is_none() {
        b.step();
    }
    let block = b.pegins[0].locking_block.unwrap();
    let parent = b.source.header(&block).unwrap().parent_id.unwrap();
    let mut tip = parent;
    for _ in 0..3 {
        tip = b.source.mine_block(tip, Vec::new(), 1).unwrap().id();
    }
    assert_eq!(b.source.canonical_tip(), tip);
    assert!(matches!(
        b.execute_pegin(0),
        Err(ProtocolError::InsufficientConfirmations { have: 0, need: 6 })
    ));
    steps(&mut b, 20);
    assert_eq!(b.wrapped(0), 0);
}

#[test]
fn full_pool_rejects_further_pegins() {
    let mut b = bridge(config(3, 1));
    b.request_pegin(0, DENOM).unwrap();
    assert!(matches!(
        b.request_pegin(1, DENOM),
        Err(ProtocolError::NoCapacity)
    ));
}

#[test]
fn pegin_after_withdrawal_finds_functionary_offline() {
    let mut b = bridge(config(3, 2));
    b.withdraw_deposit(FunctionaryId(2)).unwrap();
    steps(&mut b, 2);
    assert!(!b.is_active(FunctionaryId(2)));
    assert!(matches!(
        b.request_pegin(0, DENOM),
        Err(ProtocolError::FunctionaryOffline(FunctionaryId(2)))
    ));
    assert!(matches!(
        b.withdraw_deposit(FunctionaryId(2)),
        Err(ProtocolError::NotActive(_))
    ));
}

#[test]
fn pegout_needs_wrapped_coins() {
    let mut b = bridge(config(3, 2));
    assert!(matches!(
        b.request_pegout(0),
        Err(ProtocolError::InsufficientWrapped(0))
    ));
}

#[test]
fn theft_needs_every_key() {
    for leaked in [vec![0], vec![0, 1, 2]] {
        let mut c = config(3, 2);
        c.leaked = leaked.iter().map(|i| FunctionaryId(*i)).collect();
        let mut b = bridge(c);
        b.request_pegin(0, DENOM).unwrap();
        steps(&mut b, 20);
        let result = b.attempt_theft(FunctionaryId(0), VmxoId(0));
        steps(&mut b, 2);
        let stolen = b.log().events().iter().any(|e| {
            matches!(
                &e.body,
                Body::Transaction {
                    template: TemplateKind::Theft,
                    ..
                }
            )
        });
        assert_eq!(result.is_ok(), leaked.len() == 3);
        assert_eq!(stolen, leaked.len() == 3);
    }
}

#[test]
fn finished_log_round_trips_through_jsonl() {
    let mut b = bridge(config(3, 2));
    b.request_pegin(0, DENOM).unwrap();
    steps(&mut b, 20);
    let log = b.finish();
    let text = log.to_jsonl();
    let back = union_core::protocol::log::EventLog::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back, log);
}
