//! Source and secondary chain substrate.
//!
//! A [`ChainView`] is a tree of headers rooted at a genesis block. The
//! canonical tip is the header with the highest accumulated difficulty,
//! ties going to the lowest header id. Block bodies are lists of
//! transaction ids committed to by a Merkle root, so inclusion can be proven
//! against a single header.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::ids::{BlockId, FunctionaryId, Tick, TxId};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum ChainId {
    Source,
    Secondary,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("unknown parent block {0}")]
    UnknownParent(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("transaction {tx} is not included in block {block}")]
    NotIncluded { tx: TxId, block: BlockId },
    #[error("block difficulty must be positive")]
    ZeroDifficulty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub chain_id: ChainId,
    pub height: u64,
    pub parent_id: Option<BlockId>,
    pub difficulty: u64,
    pub tx_commitment: Digest,
    /// Distinguishes siblings that would otherwise serialize identically.
    pub nonce: u64,
}

impl BlockHeader {
    pub fn id(&self) -> BlockId {
        let chain = match self.chain_id {
            ChainId::Source => 0,
            ChainId::Secondary => 1,
        };
        BlockId(
            Digest::builder("header")
                .u64(chain)
                .u64(self.height)
                .opt_digest(self.parent_id.as_ref().map(|p| &p.0))
                .u64(self.difficulty)
                .digest(&self.tx_commitment)
                .u64(self.nonce)
                .finish(),
        )
    }
}

fn leaf_hash(tx: &TxId) -> Digest {
    Digest::builder("merkle-leaf").digest(&tx.0).finish()
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    Digest::builder("merkle-node")
        .digest(left)
        .digest(right)
        .finish()
}

/// Merkle root over an ordered list of transaction ids. An odd node at the
/// end of a level is carried up unchanged.
pub fn merkle_root(txs: &[TxId]) -> Digest {
    if txs.is_empty() {
        return Digest::builder("merkle-empty").finish();
    }
    let mut level: Vec<Digest> = txs.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub sibling: Digest,
    pub sibling_on_left: bool,
}

fn merkle_path(txs: &[TxId], mut index: usize) -> Vec<PathStep> {
    let mut path = Vec::new();
    let mut level: Vec<Digest> = txs.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        let sibling = index ^ 1;
        if sibling < level.len() {
            path.push(PathStep {
                sibling: level[sibling],
                sibling_on_left: sibling < index,
            });
        }
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
        index /= 2;
    }
    path
}

/// Audit path binding a transaction id to one header's commitment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub tx_id: TxId,
    pub block_id: BlockId,
    pub path: Vec<PathStep>,
}

impl InclusionProof {
    /// Checks the proof against `header`. Total: never panics, false on any
    /// mismatch.
    pub fn verify(&self, header: &BlockHeader) -> bool {
        if header.id() != self.block_id {
            return false;
        }
        let root = self.path.iter().fold(leaf_hash(&self.tx_id), |acc, step| {
            if step.sibling_on_left {
                node_hash(&step.sibling, &acc)
            } else {
                node_hash(&acc, &step.sibling)
            }
        });
        root == header.tx_commitment
    }
}

#[derive(Clone, Debug)]
struct BlockEntry {
    header: BlockHeader,
    txs: Vec<TxId>,
    accumulated: u128,
}

/// A tree of headers with a fork-choice rule.
#[derive(Clone, Debug)]
pub struct ChainView {
    chain_id: ChainId,
    genesis: BlockId,
    blocks: BTreeMap<BlockId, BlockEntry>,
    canonical: Vec<BlockId>,
    next_nonce: u64,
}

impl ChainView {
    pub fn new(chain_id: ChainId, genesis_difficulty: u64) -> ChainView {
        let header = BlockHeader {
            chain_id,
            height: 0,
            parent_id: None,
            difficulty: genesis_difficulty.max(1),
            tx_commitment: merkle_root(&[]),
            nonce: 0,
        };
        let id = header.id();
        let accumulated = header.difficulty as u128;
        let mut blocks = BTreeMap::new();
        blocks.insert(
            id,
            BlockEntry {
                header,
                txs: Vec::new(),
                accumulated,
            },
        );
        ChainView {
            chain_id,
            genesis: id,
            blocks,
            canonical: vec![id],
            next_nonce: 1,
        }
    }

    pub fn chain_id(&self) -> ChainId {
        self.chain_id
    }

    pub fn genesis(&self) -> BlockId {
        self.genesis
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Appends a child of `parent` committing to `txs` in order.
    pub fn mine_block(
        &mut self,
        parent: BlockId,
        txs: Vec<TxId>,
        difficulty: u64,
    ) -> Result<BlockHeader, ChainError> {
        if difficulty == 0 {
            return Err(ChainError::ZeroDifficulty);
        }
        let parent_entry = self
            .blocks
            .get(&parent)
            .ok_or(ChainError::UnknownParent(parent))?;
        let header = BlockHeader {
            chain_id: self.chain_id,
            height: parent_entry.header.height + 1,
            parent_id: Some(parent),
            difficulty,
            tx_commitment: merkle_root(&txs),
            nonce: self.next_nonce,
        };
        self.next_nonce += 1;
        let accumulated = parent_entry.accumulated + difficulty as u128;
        let id = header.id();
        self.blocks.insert(
            id,
            BlockEntry {
                header: header.clone(),
                txs,
                accumulated,
            },
        );
        self.update_tip(id);
        Ok(header)
    }

    /// Mines on top of the current canonical tip.
    pub fn extend_tip(&mut self, txs: Vec<TxId>, difficulty: u64) -> BlockHeader {
        self.mine_block(self.canonical_tip(), txs, difficulty)
            .expect("canonical tip always exists")
    }

    fn update_tip(&mut self, candidate: BlockId) {
        let tip = self.canonical_tip();
        let (cand_acc, tip_acc) = (
            self.blocks[&candidate].accumulated,
            self.blocks[&tip].accumulated,
        );
        let better = cand_acc > tip_acc || (cand_acc == tip_acc && candidate < tip);
        if !better {
            return;
        }
        let entry = &self.blocks[&candidate];
        if entry.header.parent_id == Some(tip) {
            self.canonical.push(candidate);
            return;
        }
        let mut chain = Vec::with_capacity(entry.header.height as usize + 1);
        let mut cursor = Some(candidate);
        while let Some(id) = cursor {
            chain.push(id);
            cursor = self.blocks[&id].header.parent_id;
        }
        chain.reverse();
        self.canonical = chain;
    }

    pub fn canonical_tip(&self) -> BlockId {
        *self
            .canonical
            .last()
            .expect("canonical chain holds genesis")
    }

    /// Canonical chain from genesis to tip.
    pub fn canonical_chain(&self) -> &[BlockId] {
        &self.canonical
    }

    pub fn header(&self, id: &BlockId) -> Option<&BlockHeader> {
        self.blocks.get(id).map(|e| &e.header)
    }

    pub fn txs(&self, id: &BlockId) -> Option<&[TxId]> {
        self.blocks.get(id).map(|e| e.txs.as_slice())
    }

    pub fn accumulated_difficulty(&self, id: &BlockId) -> Option<u128> {
        self.blocks.get(id).map(|e| e.accumulated)
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn is_canonical(&self, id: &BlockId) -> bool {
        match self.blocks.get(id) {
            Some(e) => self.canonical.get(e.header.height as usize) == Some(id),
            None => false,
        }
    }

    /// Every block that has no children.
    pub fn tips(&self) -> Vec<BlockId> {
        let mut has_child = std::collections::BTreeSet::new();
        for e in self.blocks.values() {
            if let Some(p) = e.header.parent_id {
                has_child.insert(p);
            }
        }
        self.blocks
            .keys()
            .filter(|id| !has_child.contains(*id))
            .copied()
            .collect()
    }

    /// Headers from `from` down to `to` inclusive, in ascending height, if
    /// `to` descends from `from`.
    pub fn branch(&self, from: &BlockId, to: &BlockId) -> Option<Vec<BlockHeader>> {
        let start_height = self.blocks.get(from)?.header.height;
        let mut out = Vec::new();
        let mut cursor = *to;
        loop {
            let entry = self.blocks.get(&cursor)?;
            if entry.header.height < start_height {
                return None;
            }
            out.push(entry.header.clone());
            if cursor == *from {
                break;
            }
            cursor = entry.header.parent_id?;
        }
        out.reverse();
        Some(out)
    }

    pub fn prove_inclusion(&self, tx: TxId, block: BlockId) -> Result<InclusionProof, ChainError> {
        let entry = self
            .blocks
            .get(&block)
            .ok_or(ChainError::UnknownBlock(block))?;
        let index = entry
            .txs
            .iter()
            .position(|t| *t == tx)
            .ok_or(ChainError::NotIncluded { tx, block })?;
        Ok(InclusionProof {
            tx_id: tx,
            block_id: block,
            path: merkle_path(&entry.txs, index),
        })
    }

    /// Canonical blocks at or above `block`'s height; 0 off the canonical
    /// branch.
    pub fn confirmations(&self, block: &BlockId) -> Result<u64, ChainError> {
        let entry = self
            .blocks
            .get(block)
            .ok_or(ChainError::UnknownBlock(*block))?;
        if !self.is_canonical(block) {
            return Ok(0);
        }
        Ok(self.canonical.len() as u64 - entry.header.height)
    }

    /// The canonical block containing `tx`, if any.
    pub fn find_canonical_tx(&self, tx: &TxId) -> Option<BlockId> {
        self.canonical
            .iter()
            .find(|id| self.blocks[*id].txs.contains(tx))
            .copied()
    }

    /// Every block (on any branch) containing `tx`.
    pub fn blocks_containing(&self, tx: &TxId) -> Vec<BlockId> {
        self.blocks
            .iter()
            .filter(|(_, e)| e.txs.contains(tx))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Confirmations of `tx` on the canonical chain; 0 if not canonical.
    pub fn tx_confirmations(&self, tx: &TxId) -> u64 {
        self.find_canonical_tx(tx)
            .and_then(|b| self.confirmations(&b).ok())
            .unwrap_or(0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClockError {
    #[error("censorship window for {party} must end after it starts ({start}..{end})")]
    EmptyWindow {
        party: FunctionaryId,
        start: Tick,
        end: Tick,
    },
}

/// Half-open interval `[start, end)` during which a party's broadcasts are
/// withheld.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensorshipWindow {
    pub party: FunctionaryId,
    pub start: Tick,
    pub end: Tick,
}

#[derive(Clone, Debug, Default)]
pub struct SimClock {
    pub now: Tick,
    windows: Vec<CensorshipWindow>,
}

impl SimClock {
    pub fn new(windows: Vec<CensorshipWindow>) -> Result<SimClock, ClockError> {
        for w in &windows {
            if w.end <= w.start {
                return Err(ClockError::EmptyWindow {
                    party: w.party,
                    start: w.start,
                    end: w.end,
                });
            }
        }
        Ok(SimClock { now: 0, windows })
    }

    pub fn windows(&self) -> &[CensorshipWindow] {
        &self.windows
    }

    pub fn is_censored(&self, party: FunctionaryId, tick: Tick) -> bool {
        self.windows
            .iter()
            .any(|w| w.party == party && w.start <= tick && tick < w.end)
    }

    /// Tick at which a broadcast made by `party` at `tick` reaches miners.
    pub fn delivery_tick(&self, party: FunctionaryId, tick: Tick) -> Tick {
        let mut t = tick;
        while let Some(w) = self
            .windows
            .iter()
            .find(|w| w.party == party && w.start <= t && t < w.end)
        {
            t = w.end;
        }
        t
    }

    pub fn advance(&mut self) {
        self.now += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(n: u64) -> TxId {
        TxId(Digest::builder("tx").u64(n).finish())
    }

    #[test]
    fn mining_on_genesis_gives_height_one() {
        let mut c = ChainView::new(ChainId::Secondary, 1);
        let h = c.mine_block(c.genesis(), vec![], 1).unwrap();
        assert_eq!(h.height, 1);
        assert_eq!(h.parent_id, Some(c.genesis()));
        assert_eq!(c.canonical_tip(), h.id());
    }

    #[test]
    fn unknown_parent_is_rejected() {
        let mut c = ChainView::new(ChainId::Source, 1);
        let bogus = BlockId(Digest::builder("nope").finish());
        assert_eq!(
            c.mine_block(bogus, vec![], 1),
            Err(ChainError::UnknownParent(bogus))
        );
        assert_eq!(
            c.mine_block(c.genesis(), vec![], 0),
            Err(ChainError::ZeroDifficulty)
        );
    }

    #[test]
    fn fork_picks_higher_difficulty_branch() {
        let mut c = ChainView::new(ChainId::Secondary, 1);
        let g = c.genesis();
        let low = c.mine_block(g, vec![], 2).unwrap();
        let high = c.mine_block(g, vec![], 3).unwrap();
        assert_eq!(c.tips().len(), 2);
        assert_eq!(c.canonical_tip(), high.id());
        assert!(!c.is_canonical(&low.id()));
    }

    #[test]
    fn accumulated_difficulty_beats_single_heavy_block() {
        // Branch A: 3 + 3 = 6, branch B: 5.
        let mut c = ChainView::new(ChainId::Secondary, 1);
        let g = c.genesis();
        let a1 = c.mine_block(g, vec![], 3).unwrap();
        let b1 = c.mine_block(g, vec![], 5).unwrap();
        assert_eq!(c.canonical_tip(), b1.id());
        let a2 = c.mine_block(a1.id(), vec![], 3).unwrap();
        assert_eq!(c.canonical_tip(), a2.id());
        assert_eq!(c.accumulated_difficulty(&a2.id()), Some(1 + 6));
        assert_eq!(c.accumulated_difficulty(&b1.id()), Some(1 + 5));
    }

    #[test]
    fn equal_work_tie_goes_to_lowest_id() {
        let mut c = ChainView::new(ChainId::Secondary, 1);
        let g = c.genesis();
        let a = c.mine_block(g, vec![], 2).unwrap().id();
        let b = c.mine_block(g, vec![], 2).unwrap().id();
        assert_eq!(c.canonical_tip(), a.min(b));
    }

    #[test]
    fn inclusion_proofs() {
        let mut c = ChainView::new(ChainId::Source, 1);
        let txs: Vec<TxId> = (0..5).map(tx).collect();
        let h = c.extend_tip(txs.clone(), 1);
        for t in &txs {
            let p = c.prove_inclusion(*t, h.id()).unwrap();
            assert!(p.verify(&h));
        }
        assert_eq!(
            c.prove_inclusion(tx(99), h.id()),
            Err(ChainError::NotIncluded {
                tx: tx(99),
                block: h.id()
            })
        );
    }

    #[test]
    fn proof_against_other_header_fails() {
        let mut c = ChainView::new(ChainId::Source, 1);
        let x = c.extend_tip(vec![tx(1), tx(2)], 1);
        let y = c.extend_tip(vec![tx(1), tx(2)], 1);
        let p = c.prove_inclusion(tx(1), x.id()).unwrap();
        assert!(p.verify(&x));
        assert!(!p.verify(&y));
        let mut tampered = x.clone();
        tampered.difficulty += 1;
        assert!(!p.verify(&tampered));
    }

    #[test]
    fn confirmation_counting() {
        let mut c = ChainView::new(ChainId::Source, 1);
        let mut ids = vec![];
        for _ in 0..5 {
            ids.push(c.extend_tip(vec![], 1).id());
        }
        assert_eq!(c.confirmations(&ids[4]), Ok(1));
        assert_eq!(c.confirmations(&ids[1]), Ok(4));
        let loser = c.mine_block(ids[0], vec![], 1).unwrap();
        assert_eq!(c.confirmations(&loser.id()), Ok(0));
        let bogus = BlockId(Digest::ZERO);
        assert_eq!(
            c.confirmations(&bogus),
            Err(ChainError::UnknownBlock(bogus))
        );
    }

    #[test]
    fn branch_extraction() {
        let mut c = ChainView::new(ChainId::Secondary, 1);
        let a = c.extend_tip(vec![], 1).id();
        let b = c.extend_tip(vec![], 1).id();
        let d = c.extend_tip(vec![], 1).id();
        let br = c.branch(&a, &d).unwrap();
        assert_eq!(br.iter().map(|h| h.id()).collect::<Vec<_>>(), vec![a, b, d]);
        assert!(c.branch(&d, &a).is_none());
    }

    #[test]
    fn censorship_delays_until_window_end() {
        let f = FunctionaryId(1);
        let clock = SimClock::new(vec![
            CensorshipWindow {
                party: f,
                start: 10,
                end: 20,
            },
            CensorshipWindow {
                party: f,
                start: 20,
                end: 25,
            },
        ])
        .unwrap();
        assert_eq!(clock.delivery_tick(f, 5), 5);
        assert_eq!(clock.delivery_tick(f, 12), 25);
        assert_eq!(clock.delivery_tick(FunctionaryId(2), 12), 12);
        assert!(SimClock::new(vec![CensorshipWindow {
            party: f,
            start: 3,
            end: 3
        }])
        .is_err());
    }
}
