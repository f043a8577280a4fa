//! Invariant checks over a finished event log.
//!
//! Every verdict is recomputed from the log alone: balances are replayed
//! from the roster, watch intervals from move ticks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dispute::{MoveKind, Reason};
use crate::ids::{FunctionaryId, Sats, Tick, TxId, VmxoId};
use crate::protocol::log::{Body, Event, GameRef, Holder, RosterEntry};
use crate::txgraph::{Account, OutPoint, TemplateKind};

pub const CONSERVATION: &str = "conservation";
pub const SAFETY: &str = "safety";
pub const HONEST_DEPOSITS: &str = "honest-deposits";
pub const LIVENESS: &str = "liveness";
pub const RECOVERY: &str = "recovery";
pub const EXCLUSION: &str = "exclusion";
pub const SINGLE_SPEND: &str = "single-spend";
pub const DENOMINATION: &str = "denomination";
pub const WATCH: &str = "watch";
pub const COST_ATTRIBUTION: &str = "cost-attribution";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, problems: Vec<String>, ok_detail: String) -> Verdict {
        Verdict {
            name: name.to_string(),
            pass: problems.is_empty(),
            detail: if problems.is_empty() {
                ok_detail
            } else {
                let mut shown: Vec<String> = problems.iter().take(3).cloned().collect();
                if problems.len() > 3 {
                    shown.push(format!("... {} more", problems.len() - 3));
                }
                shown.join("; ")
            },
        }
    }
}

struct Roster {
    functionaries: Vec<RosterEntry>,
    users: Vec<(u32, Sats)>,
    fee_rate: u64,
    fee_ppm: u64,
    denomination: Sats,
    required_deposit: Sats,
    watch_threshold: u64,
}

impl Roster {
    fn honest(&self, f: FunctionaryId) -> bool {
        self.functionaries.iter().any(|r| r.id == f && r.honest)
    }
}

fn roster(events: &[Event]) -> Option<Roster> {
    match &events.first()?.body {
        Body::Roster {
            functionaries,
            users,
            fee_rate,
            fee_ppm,
            denomination,
            required_deposit,
            watch_threshold,
            ..
        } => Some(Roster {
            functionaries: functionaries.clone(),
            users: users.clone(),
            fee_rate: *fee_rate,
            fee_ppm: *fee_ppm,
            denomination: *denomination,
            required_deposit: *required_deposit,
            watch_threshold: *watch_threshold,
        }),
        _ => None,
    }
}

struct TxView<'a> {
    template: TemplateKind,
    tx: TxId,
    payer: Account,
    vbytes: u64,
    fee: Sats,
    spends: &'a [OutPoint],
    transfers: &'a [crate::protocol::log::Transfer],
    pegout: Option<u32>,
    subject: Option<FunctionaryId>,
}

fn txs(events: &[Event]) -> Vec<TxView<'_>> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            Body::Transaction {
                template,
                tx,
                payer,
                vbytes,
                fee,
                spends,
                transfers,
                pegout,
                subject,
                ..
            } => Some(TxView {
                template: *template,
                tx: *tx,
                payer: *payer,
                vbytes: *vbytes,
                fee: *fee,
                spends,
                transfers,
                pegout: *pegout,
                subject: *subject,
            }),
            _ => None,
        })
        .collect()
}

/// Fee-paying transactions that exist only because of a dispute.
pub fn is_dispute_template(kind: TemplateKind) -> bool {
    matches!(
        kind,
        TemplateKind::ChallengeStep
            | TemplateKind::StopWatchStop
            | TemplateKind::StopWatchTick
            | TemplateKind::ProverLoses
            | TemplateKind::VerifierLoses
            | TemplateKind::ForceClose
            | TemplateKind::KillEnablers
    )
}

/// Dispute fees paid by each functionary.
pub fn dispute_costs(events: &[Event]) -> BTreeMap<FunctionaryId, Sats> {
    let mut out = BTreeMap::new();
    for t in txs(events) {
        if let Account::Functionary(f) = t.payer {
            if is_dispute_template(t.template) {
                *out.entry(f).or_default() += t.fee;
            }
        }
    }
    out
}

pub fn check_invariants(events: &[Event]) -> Vec<Verdict> {
    let Some(r) = roster(events) else {
        return vec![Verdict {
            name: "log".into(),
            pass: false,
            detail: "log does not start with a roster".into(),
        }];
    };
    vec![
        conservation(events, &r),
        safety(events),
        honest_deposits(events, &r),
        liveness(events),
        recovery(events, &r),
        exclusion(events),
        single_spend(events),
        denomination(events, &r),
        watch(events, &r),
        cost_attribution(events, &r),
    ]
}

fn conservation(events: &[Event], r: &Roster) -> Verdict {
    let mut problems = Vec::new();
    let mut bal: BTreeMap<Holder, Sats> = BTreeMap::new();
    for f in &r.functionaries {
        *bal.entry(Holder::Wallet(Account::Functionary(f.id)))
            .or_default() += f.funds;
    }
    for (u, funds) in &r.users {
        *bal.entry(Holder::Wallet(Account::User(*u))).or_default() += funds;
    }
    let total: Sats = bal.values().sum();
    let mut txn = 0;
    for t in txs(events) {
        txn += 1;
        if t.fee != t.vbytes * r.fee_rate {
            problems.push(format!("{} pays fee {} for {} vB", t.tx, t.fee, t.vbytes));
        }
        let fee_paid: Sats = t
            .transfers
            .iter()
            .filter(|x| x.to == Holder::Fees && x.from == Holder::Wallet(t.payer))
            .map(|x| x.amount)
            .sum();
        if fee_paid != t.fee {
            problems.push(format!(
                "{} records fee {} but moves {}",
                t.tx, t.fee, fee_paid
            ));
        }
        for x in t.transfers {
            let from = bal.entry(x.from).or_default();
            if *from < x.amount {
                problems.push(format!("{} overdraws {:?}", t.tx, x.from));
                *from = 0;
            } else {
                *from -= x.amount;
            }
            *bal.entry(x.to).or_default() += x.amount;
        }
    }
    let replayed_total: Sats = bal.values().sum();
    if replayed_total != total {
        problems.push(format!("supply drifted from {total} to {replayed_total}"));
    }
    match events.iter().rev().find_map(|e| match &e.body {
        Body::Final { balances, .. } => Some(balances),
        _ => None,
    }) {
        None => problems.push("log has no final balances".into()),
        Some(fin) => {
            let fin: BTreeMap<Holder, Sats> = fin.iter().filter(|(_, v)| *v > 0).copied().collect();
            let replay: BTreeMap<Holder, Sats> = bal
                .iter()
                .filter(|(_, v)| **v > 0)
                .map(|(h, v)| (*h, *v))
                .collect();
            if fin != replay {
                let differing: Vec<String> = fin
                    .keys()
                    .chain(replay.keys())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .filter(|h| fin.get(h) != replay.get(h))
                    .map(|h| format!("{h:?}: final {:?} replayed {:?}", fin.get(h), replay.get(h)))
                    .collect();
                problems.push(format!(
                    "final balances differ from replay: {}",
                    differing.join(", ")
                ));
            }
        }
    }
    Verdict::new(
        CONSERVATION,
        problems,
        format!("{txn} transactions replayed, {total} sats conserved"),
    )
}

fn safety(events: &[Event]) -> Verdict {
    let mut problems = Vec::new();
    let mut burned = BTreeSet::new();
    let mut acked: BTreeSet<(u32, VmxoId, FunctionaryId)> = BTreeSet::new();
    let mut fronted: BTreeSet<(u32, FunctionaryId)> = BTreeSet::new();
    let mut unlocked = BTreeSet::new();
    let mut count = 0;
    for e in events {
        match &e.body {
            Body::Burned { pegout, .. } => {
                burned.insert(*pegout);
            }
            Body::Acked {
                pegout,
                vmxo,
                operator,
                ..
            } => {
                acked.insert((*pegout, *vmxo, *operator));
            }
            Body::Transaction {
                template: TemplateKind::Fronting,
                pegout: Some(p),
                subject: Some(op),
                ..
            } => {
                fronted.insert((*p, *op));
            }
            Body::Transaction {
                template: TemplateKind::Theft,
                vmxo,
                payer,
                ..
            } => problems.push(format!("VMXO {vmxo:?} stolen by {payer:?}")),
            Body::Transaction {
                template: TemplateKind::Unlocking,
                vmxo: Some(v),
                pegout,
                subject: Some(op),
                ..
            } => {
                count += 1;
                if !unlocked.insert(*v) {
                    problems.push(format!("VMXO {v} unlocked twice"));
                }
                let matched = pegout.is_some_and(|p| {
                    burned.contains(&p)
                        && acked.contains(&(p, *v, *op))
                        && fronted.contains(&(p, *op))
                });
                if !matched {
                    problems.push(format!(
                        "VMXO {v} unlocked to {op} without a matching peg-out"
                    ));
                }
            }
            _ => {}
        }
    }
    Verdict::new(
        SAFETY,
        problems,
        format!("{count} unlockings, all backed by peg-outs"),
    )
}

fn honest_deposits(events: &[Event], r: &Roster) -> Verdict {
    let mut problems = Vec::new();
    let mut slashed = 0;
    for e in events {
        if let Body::Slashed { loser, .. } = &e.body {
            slashed += 1;
            if r.honest(*loser) {
                problems.push(format!("honest {loser} slashed at tick {}", e.tick));
            }
        }
    }
    Verdict::new(
        HONEST_DEPOSITS,
        problems,
        format!("{slashed} slashings, none honest"),
    )
}

fn liveness(events: &[Event]) -> Verdict {
    let mut problems = Vec::new();
    let mut locked: BTreeMap<VmxoId, (Tick, u32)> = BTreeMap::new();
    let mut minted = BTreeSet::new();
    let mut mint_rejected: BTreeMap<u32, usize> = BTreeMap::new();
    let mut burned = BTreeMap::new();
    let mut fronted = BTreeSet::new();
    for e in events {
        match &e.body {
            Body::Transaction {
                template: TemplateKind::Locking,
                vmxo: Some(v),
                payer: Account::User(u),
                ..
            } => {
                locked.insert(*v, (e.tick, *u));
            }
            Body::Minted { vmxo, .. } => {
                minted.insert(*vmxo);
            }
            Body::Rejected {
                actor: Some(Account::User(u)),
                action,
                ..
            } if action == "mint" => *mint_rejected.entry(*u).or_default() += 1,
            Body::Burned { pegout, user, .. } => {
                burned.insert(*pegout, *user);
            }
            Body::Transaction {
                template: TemplateKind::Fronting,
                pegout: Some(p),
                ..
            } => {
                fronted.insert(*p);
            }
            _ => {}
        }
    }
    let mut unminted: BTreeMap<u32, usize> = BTreeMap::new();
    for (v, (_, u)) in &locked {
        if !minted.contains(v) {
            *unminted.entry(*u).or_default() += 1;
        }
    }
    for (u, n) in unminted {
        if mint_rejected.get(&u).copied().unwrap_or(0) < n {
            problems.push(format!("user {u} locked BTC but was never minted"));
        }
    }
    for (p, u) in &burned {
        if !fronted.contains(p) {
            problems.push(format!("peg-out {p} of user {u} was never paid"));
        }
    }
    Verdict::new(
        LIVENESS,
        problems,
        format!("{} mints, {} peg-outs paid", minted.len(), fronted.len()),
    )
}

fn recovery(events: &[Event], r: &Roster) -> Verdict {
    let mut problems = Vec::new();
    let mut fronted: Vec<(u32, FunctionaryId)> = Vec::new();
    let mut unlocked: BTreeSet<(u32, FunctionaryId)> = BTreeSet::new();
    for t in txs(events) {
        match (t.template, t.pegout, t.subject) {
            (TemplateKind::Fronting, Some(p), Some(op)) => fronted.push((p, op)),
            (TemplateKind::Unlocking, Some(p), Some(op)) => {
                unlocked.insert((p, op));
            }
            _ => {}
        }
    }
    let honest: Vec<&(u32, FunctionaryId)> =
        fronted.iter().filter(|(_, op)| r.honest(*op)).collect();
    for (p, op) in &honest {
        if !unlocked.contains(&(*p, *op)) {
            problems.push(format!(
                "honest {op} fronted peg-out {p} and never recovered it"
            ));
        }
    }
    Verdict::new(
        RECOVERY,
        problems,
        format!("{} honest fronts recovered", honest.len()),
    )
}

fn exclusion(events: &[Event]) -> Verdict {
    let mut problems = Vec::new();
    let mut excluded: BTreeMap<FunctionaryId, Tick> = BTreeMap::new();
    for e in events {
        match &e.body {
            Body::Slashed { loser, .. } => {
                excluded.entry(*loser).or_insert(e.tick);
            }
            Body::Withdrawn { functionary } => {
                excluded.entry(*functionary).or_insert(e.tick);
            }
            Body::Transaction {
                template: TemplateKind::Kickoff | TemplateKind::Fronting | TemplateKind::Unlocking,
                subject: Some(f),
                tx,
                ..
            } if excluded.contains_key(f) => problems.push(format!("excluded {f} acted in {tx}")),
            Body::GameOpened {
                prover,
                verifier,
                game,
            } => {
                for f in [prover, verifier] {
                    if excluded.contains_key(f) && !game.nested {
                        problems.push(format!("excluded {f} entered a dispute"));
                    }
                }
            }
            _ => {}
        }
    }
    Verdict::new(
        EXCLUSION,
        problems,
        format!("{} excluded functionaries stayed out", excluded.len()),
    )
}

fn single_spend(events: &[Event]) -> Verdict {
    let mut problems = Vec::new();
    let mut seen: BTreeMap<OutPoint, TxId> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for t in txs(events) {
        if !ids.insert(t.tx) {
            problems.push(format!("{} confirmed twice", t.tx));
        }
        for op in t.spends {
            if let Some(prev) = seen.insert(*op, t.tx) {
                problems.push(format!(
                    "{}:{} spent by {} and {}",
                    op.tx, op.index, prev, t.tx
                ));
            }
        }
    }
    Verdict::new(
        SINGLE_SPEND,
        problems,
        format!("{} outputs spent once each", seen.len()),
    )
}

fn denomination(events: &[Event], r: &Roster) -> Verdict {
    let mut problems = Vec::new();
    let fronted = r.denomination - r.denomination * r.fee_ppm / 1_000_000;
    for e in events {
        match &e.body {
            Body::Minted { amount, .. } | Body::Burned { amount, .. }
                if *amount != r.denomination =>
            {
                problems.push(format!("wrapped amount {amount} outside the denomination"))
            }
            Body::Transaction {
                template: TemplateKind::Fronting,
                transfers,
                tx,
                ..
            } => {
                let paid: Sats = transfers
                    .iter()
                    .filter(|t| matches!(t.to, Holder::Wallet(Account::User(_))))
                    .map(|t| t.amount)
                    .sum();
                if paid != fronted {
                    problems.push(format!("{tx} fronts {paid}, expected {fronted}"));
                }
            }
            Body::Transaction {
                template: TemplateKind::Unlocking,
                transfers,
                tx,
                ..
            } => {
                let paid: Sats = transfers
                    .iter()
                    .filter(|t| matches!(t.from, Holder::Locked(_)))
                    .map(|t| t.amount)
                    .sum();
                if paid != r.denomination {
                    problems.push(format!("{tx} unlocks {paid}"));
                }
            }
            _ => {}
        }
    }
    Verdict::new(
        DENOMINATION,
        problems,
        format!("all amounts in {{{}}}", r.denomination),
    )
}

struct WatchState {
    /// Party on turn and when the turn began.
    turn: Option<(FunctionaryId, Tick)>,
    awaiting_challenge: bool,
    parties: (FunctionaryId, FunctionaryId),
    accumulated: BTreeMap<FunctionaryId, u64>,
    expected_stops: BTreeMap<FunctionaryId, Vec<u64>>,
    closed: bool,
}

impl WatchState {
    fn other(&self, f: FunctionaryId) -> FunctionaryId {
        if f == self.parties.0 {
            self.parties.1
        } else {
            self.parties.0
        }
    }
}

/// Recomputes every stop-watch from move ticks: a party's watch runs from
/// the tick its turn begins to the tick of its next move.
fn watch(events: &[Event], r: &Roster) -> Verdict {
    let threshold = r.watch_threshold;
    let mut problems = Vec::new();
    let mut games: BTreeMap<GameRef, WatchState> = BTreeMap::new();
    let mut timeouts = 0;
    let mut stops = 0;
    for e in events {
        match &e.body {
            Body::GameOpened {
                game,
                prover,
                verifier,
            } => {
                games.insert(
                    *game,
                    WatchState {
                        turn: Some((*verifier, e.tick)),
                        awaiting_challenge: true,
                        parties: (*prover, *verifier),
                        accumulated: BTreeMap::new(),
                        expected_stops: BTreeMap::new(),
                        closed: false,
                    },
                );
            }
            Body::Move { game, by, kind } => {
                let Some(g) = games.get_mut(game) else {
                    problems.push(format!("move in unopened game {}", game.kickoff));
                    continue;
                };
                match by {
                    None => {
                        g.turn = Some((g.parties.1, e.tick));
                        g.awaiting_challenge = true;
                    }
                    Some(x) => {
                        let Some((on_turn, since)) = g.turn else {
                            problems.push(format!("{x} moved out of turn in {}", game.kickoff));
                            continue;
                        };
                        if on_turn != *x {
                            problems.push(format!("{x} moved on {on_turn}'s turn"));
                        }
                        let interval = e.tick - since;
                        let acc = g.accumulated.entry(*x).or_default();
                        *acc += interval;
                        if !g.awaiting_challenge && *acc > threshold {
                            problems.push(format!(
                                "{x} moved after its watch expired ({acc} > {threshold})"
                            ));
                        }
                        g.expected_stops.entry(*x).or_default().push(interval);
                        g.awaiting_challenge = false;
                        g.turn = match kind {
                            MoveKind::ExecuteLeaf | MoveKind::CounterProof => None,
                            _ => Some((g.other(*x), e.tick)),
                        };
                    }
                }
            }
            Body::WatchStop {
                game,
                party,
                interval,
            } => {
                stops += 1;
                let expected = games
                    .get_mut(game)
                    .and_then(|g| g.expected_stops.get_mut(party))
                    .and_then(|v| {
                        if v.is_empty() {
                            None
                        } else {
                            Some(v.remove(0))
                        }
                    });
                if expected != Some(*interval) {
                    problems.push(format!(
                        "{party} stop records {interval}, oracle {expected:?}"
                    ));
                }
            }
            Body::Outcome {
                game,
                loser,
                reason,
                ..
            } => {
                let Some(g) = games.get_mut(game) else {
                    continue;
                };
                if *reason == Reason::Timeout {
                    timeouts += 1;
                    match g.turn {
                        Some((on_turn, since)) if on_turn == *loser => {
                            let total =
                                g.accumulated.get(loser).copied().unwrap_or(0) + (e.tick - since);
                            if total != threshold + 1 {
                                problems.push(format!(
                                    "{loser} timed out with {total} accumulated, threshold {threshold}"
                                ));
                            }
                        }
                        _ => problems.push(format!("{loser} timed out off turn")),
                    }
                } else if !matches!(reason, Reason::NoChallenge | Reason::CounterProofDefeated) {
                    if let Some((on_turn, since)) = g.turn {
                        let total =
                            g.accumulated.get(&on_turn).copied().unwrap_or(0) + (e.tick - since);
                        if !g.awaiting_challenge && total > threshold {
                            problems.push(format!("{on_turn} overran its watch without a timeout"));
                        }
                    }
                }
                g.closed = true;
                g.turn = None;
            }
            Body::Moot { game } => {
                if let Some(g) = games.get_mut(game) {
                    g.closed = true;
                    g.turn = None;
                }
                let inner = GameRef {
                    nested: true,
                    ..*game
                };
                if let Some(g) = games.get_mut(&inner) {
                    g.closed = true;
                    g.turn = None;
                }
            }
            _ => {}
        }
    }
    let end = events.last().map_or(0, |e| e.tick);
    for (game, g) in &games {
        if let (false, Some((on_turn, since))) = (g.closed, g.turn) {
            let total = g.accumulated.get(&on_turn).copied().unwrap_or(0) + (end - since);
            if !g.awaiting_challenge && total > threshold {
                problems.push(format!(
                    "{on_turn} overran its watch in {} without a timeout",
                    game.kickoff
                ));
            }
        }
    }
    Verdict::new(
        WATCH,
        problems,
        format!(
            "{} games, {stops} stops and {timeouts} timeouts match the oracle",
            games.len()
        ),
    )
}

fn cost_attribution(events: &[Event], r: &Roster) -> Verdict {
    let mut problems = Vec::new();
    let costs = dispute_costs(events);
    let honest_total: Sats = costs
        .iter()
        .filter(|(f, _)| r.honest(**f))
        .map(|(_, c)| *c)
        .sum();
    let malicious = r.functionaries.iter().filter(|f| !f.honest).count();
    if malicious == 1 && honest_total > r.required_deposit {
        problems.push(format!(
            "honest parties spent {honest_total} on disputes, above the deposit {}",
            r.required_deposit
        ));
    }
    Verdict::new(
        COST_ATTRIBUTION,
        problems,
        format!(
            "honest dispute costs {honest_total} within deposit {}",
            r.required_deposit
        ),
    )
}
