//! Per-tick decisions of every functionary.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dispute::{
    griefing_verifier_move, honest_verifier_move, prover_move, ChallengeKind, Corruption, Move,
    Phase, Role,
};
use crate::ids::{FunctionaryId, TxId, VmxoId};
use crate::protocol::{
    ack_tx_id, Assessment, Bridge, GameKey, PeginState, PegoutState, FORGED_PEGOUT,
};
use crate::txgraph::VmxoState;

use super::strategy::Strategy;

pub(crate) struct Agents {
    strategies: Vec<Strategy>,
    rng: ChaCha8Rng,
    attacking: bool,
    attacked: BTreeSet<FunctionaryId>,
    fronted: BTreeSet<(u32, FunctionaryId)>,
    kicked: BTreeSet<u32>,
    unlocks: BTreeSet<TxId>,
    closes: BTreeSet<(TxId, TxId)>,
}

impl Agents {
    pub(crate) fn new(strategies: Vec<Strategy>, rng: ChaCha8Rng) -> Agents {
        Agents {
            strategies,
            rng,
            attacking: false,
            attacked: BTreeSet::new(),
            fronted: BTreeSet::new(),
            kicked: BTreeSet::new(),
            unlocks: BTreeSet::new(),
            closes: BTreeSet::new(),
        }
    }

    pub(crate) fn start_attack(&mut self) {
        self.attacking = true;
    }

    pub(crate) fn act(&mut self, bridge: &mut Bridge) {
        for i in 0..self.strategies.len() {
            let f = FunctionaryId(i as u32);
            if !bridge.is_active(f) {
                continue;
            }
            let s = self.strategies[i];
            if s.operates() {
                self.operate(bridge, f);
            }
            if self.attacking && !self.attacked.contains(&f) {
                self.attack(bridge, f, s);
            }
            if s.forges_kickoffs() {
                self.unlock_own(bridge, f);
            }
            self.play(bridge, f, s);
            if s.verifies() {
                self.mine_markers(bridge, f);
            }
        }
        self.force_close(bridge);
    }

    fn operate(&mut self, bridge: &mut Bridge, f: FunctionaryId) {
        for p in 0..bridge.pegouts.len() as u32 {
            if bridge.may_front(p, f) && self.fronted.insert((p, f)) {
                let _ = bridge.execute_pegout(p, f);
            }
        }
        let need = bridge.config.secondary_confirmations;
        let ready: Vec<u32> = bridge
            .pegouts
            .iter()
            .filter(|p| {
                p.operator == Some(f)
                    && p.state == PegoutState::Acked
                    && !self.kicked.contains(&p.id)
            })
            .filter(|p| {
                p.ack_tx
                    .is_some_and(|t| bridge.secondary.tx_confirmations(&t) >= need)
            })
            .map(|p| p.id)
            .collect();
        for p in ready {
            self.kicked.insert(p);
            match bridge.honest_claim(p) {
                Ok(claim) => {
                    if let Err(e) = bridge.submit_kickoff(claim, true, None) {
                        bridge.reject(Some(crate::txgraph::Account::Functionary(f)), "kickoff", e);
                    }
                }
                Err(e) => {
                    bridge.reject(Some(crate::txgraph::Account::Functionary(f)), "kickoff", e)
                }
            }
        }
        self.unlock_own(bridge, f);
    }

    fn unlock_own(&mut self, bridge: &mut Bridge, f: FunctionaryId) {
        let mine: Vec<TxId> = bridge
            .kickoffs
            .values()
            .filter(|k| k.operator == f && !self.unlocks.contains(&k.id))
            .map(|k| k.id)
            .collect();
        for k in mine {
            if bridge.can_unlock(&k).is_ok() {
                self.unlocks.insert(k);
                let _ = bridge.submit_unlock(&k);
            }
        }
    }

    /// Minted VMXOs `f` could kick off on, excluding those already linked
    /// to a peg-out.
    fn targets(bridge: &Bridge, f: FunctionaryId) -> Vec<VmxoId> {
        let linked: BTreeSet<VmxoId> = bridge.pegouts.iter().filter_map(|p| p.vmxo).collect();
        bridge
            .pegins
            .iter()
            .filter(|p| p.state == PeginState::Minted)
            .map(|p| p.vmxo)
            .filter(|v| !linked.contains(v))
            .filter(|v| {
                matches!(
                    bridge.graph.vmxo(*v).state,
                    VmxoState::Locked | VmxoState::KickoffOpen(_)
                )
            })
            .filter(|v| bridge.graph.operator_enabler_live(f, *v))
            .collect()
    }

    fn attack(&mut self, bridge: &mut Bridge, f: FunctionaryId, s: Strategy) {
        let targets = Self::targets(bridge, f);
        match s {
            Strategy::Honest | Strategy::GriefingVerifier => {
                self.attacked.insert(f);
            }
            Strategy::KeyLeaker => {
                let Some(v) = bridge
                    .pegins
                    .iter()
                    .filter(|p| p.state == PeginState::Minted)
                    .map(|p| p.vmxo)
                    .find(|v| matches!(bridge.graph.vmxo(*v).state, VmxoState::Locked))
                else {
                    return;
                };
                self.attacked.insert(f);
                let _ = bridge.attempt_theft(f, v);
            }
            Strategy::SilentProver | Strategy::FakeProofProver => {
                if targets.is_empty() {
                    return;
                }
                let v = targets[self.rng.gen_range(0..targets.len())];
                self.attacked.insert(f);
                self.forge(bridge, f, v);
            }
            Strategy::DoubleOperator => {
                if targets.is_empty() {
                    return;
                }
                self.attacked.insert(f);
                for v in targets.into_iter().take(2) {
                    self.forge(bridge, f, v);
                }
            }
            Strategy::ForkProver => {
                let Some(v) = targets.first().copied() else {
                    return;
                };
                let Some(anchor) = bridge.anchor(v) else {
                    return;
                };
                let tip = bridge.secondary.canonical_tip();
                let Some(canonical) = bridge.secondary.branch(&anchor, &tip) else {
                    return;
                };
                let depth = (canonical.len().saturating_sub(1)).max(1);
                let ack = ack_tx_id(v, f, FORGED_PEGOUT);
                let first = bridge.mine_fork_block(anchor, vec![ack]).id();
                let mut fork_tip = first;
                for _ in 1..depth {
                    fork_tip = bridge.mine_fork_block(fork_tip, Vec::new()).id();
                }
                let proof = bridge
                    .secondary
                    .prove_inclusion(ack, first)
                    .expect("ack in fork block");
                self.attacked.insert(f);
                match bridge.claim_over(v, f, FORGED_PEGOUT, fork_tip, proof) {
                    Ok(claim) => {
                        let _ = bridge.submit_kickoff(claim, true, None);
                    }
                    Err(e) => {
                        bridge.reject(Some(crate::txgraph::Account::Functionary(f)), "kickoff", e)
                    }
                }
            }
        }
    }

    fn forge(&mut self, bridge: &mut Bridge, f: FunctionaryId, v: VmxoId) {
        let len = bridge.config.trace_len;
        let p = self.rng.gen_range(1..=len);
        let corruption = if self.rng.gen_bool(0.5) {
            Corruption::State(p)
        } else {
            Corruption::Read(p)
        };
        match bridge.forged_claim(f, v) {
            Ok(claim) => {
                let _ = bridge.submit_kickoff(claim, false, Some(corruption));
            }
            Err(e) => bridge.reject(Some(crate::txgraph::Account::Functionary(f)), "kickoff", e),
        }
    }

    fn play(&mut self, bridge: &mut Bridge, f: FunctionaryId, s: Strategy) {
        for key in bridge.games_awaiting(f) {
            if let Some(mv) = self.choose(bridge, key, f, s) {
                let _ = bridge.submit_move(key, f, mv);
            }
        }
    }

    fn choose(
        &mut self,
        bridge: &Bridge,
        key: GameKey,
        f: FunctionaryId,
        s: Strategy,
    ) -> Option<Move> {
        let slot = bridge.game(&key)?;
        let g = slot.active();
        let nested = matches!(slot.game.phase(), Phase::CounterProof);
        let role = if g.prover == f {
            Role::Prover
        } else {
            Role::Verifier
        };
        match (role, s) {
            (Role::Prover, Strategy::SilentProver | Strategy::DoubleOperator) if !nested => None,
            (Role::Prover, _) => prover_move(g),
            (Role::Verifier, Strategy::GriefingVerifier) => match g.phase() {
                Phase::AwaitChallenge => Some(Move::Challenge(ChallengeKind::Execution)),
                _ => griefing_verifier_move(g, self.rng.gen()),
            },
            (Role::Verifier, Strategy::ForkProver) if nested => match g.phase() {
                Phase::AwaitChallenge => Some(Move::Challenge(ChallengeKind::Execution)),
                _ => griefing_verifier_move(g, self.rng.gen()),
            },
            (Role::Verifier, s) if s.verifies() => match g.phase() {
                Phase::AwaitChallenge if nested => {
                    let local = slot.active_local()?;
                    (local.final_state() != g.prover_trace().final_state())
                        .then_some(Move::Challenge(ChallengeKind::Execution))
                }
                Phase::AwaitChallenge => match bridge.assess(&key.0)? {
                    Assessment::Sound => None,
                    Assessment::FalseClaim => Some(Move::Challenge(ChallengeKind::Execution)),
                    Assessment::NonCanonical if slot.game.counter_proof_used() => None,
                    Assessment::NonCanonical => bridge
                        .counter_proof(&key.0, true)
                        .map(|(c, _)| Move::Challenge(c)),
                },
                _ => honest_verifier_move(g, slot.active_local()?),
            },
            (Role::Verifier, _) => None,
        }
    }

    fn mine_markers(&mut self, bridge: &mut Bridge, f: FunctionaryId) {
        let keys: Vec<GameKey> = bridge
            .games
            .iter()
            .filter(|(_, s)| s.is_open() && (s.game.prover == f || s.game.verifier == f))
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            if bridge.markers_minable(&key, f) {
                let _ = bridge.submit_markers(key, f);
            }
        }
    }

    fn force_close(&mut self, bridge: &mut Bridge) {
        let Some(closer) = (0..self.strategies.len())
            .map(|i| FunctionaryId(i as u32))
            .find(|f| self.strategies[f.0 as usize].verifies() && bridge.is_active(*f))
        else {
            return;
        };
        for (a, b) in bridge.force_close_candidates() {
            if self.closes.insert((a, b)) {
                let _ = bridge.force_close(closer, a, b);
            }
        }
    }
}
