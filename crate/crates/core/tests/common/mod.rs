//! Dispute fixtures shared by the integration tests.
#![allow(dead_code)]

use union_core::chain::{BlockHeader, ChainId, ChainView};
use union_core::digest::Digest;
use union_core::dispute::{
    ChannelAccess, Corruption, DisputeGame, ExecutionTrace, GameConfig, OpenParams,
};
use union_core::ids::{BlockId, FunctionaryId, TxId, VmxoId};
use union_core::lightclient::{CheckChainInput, ProofArtifact};

pub const P: FunctionaryId = FunctionaryId(0);
pub const V: FunctionaryId = FunctionaryId(1);

pub struct Open;

impl ChannelAccess for Open {
    fn verifier_enabler_live(&self, _: VmxoId, _: FunctionaryId, _: FunctionaryId) -> bool {
        true
    }
    fn channel_unspent(&self, _: TxId, _: FunctionaryId) -> bool {
        true
    }
}

pub fn tx(tag: &str) -> TxId {
    TxId(Digest::builder("acceptance-tx").str(tag).finish())
}

pub struct World {
    pub source: ChainView,
    pub secondary: ChainView,
    pub pegin_block: BlockId,
    pub pegout_block: BlockId,
    /// Prover's headers, anchor first.
    pub claimed: Vec<BlockHeader>,
}

impl World {
    /// Anchor, peg-out block, then `tail` further blocks with the given
    /// difficulties.
    pub fn new(anchor_diff: u64, pegout_diff: u64, tail: &[u64]) -> World {
        let mut source = ChainView::new(ChainId::Source, 1);
        let pegin_block = source.extend_tip(vec![tx("filler"), tx("pegin")], 1).id();
        let mut secondary = ChainView::new(ChainId::Secondary, 1);
        let anchor = secondary.extend_tip(vec![tx("mint")], anchor_diff).id();
        let pegout_block = secondary.extend_tip(vec![tx("pegout")], pegout_diff).id();
        let mut tip = pegout_block;
        for d in tail {
            tip = secondary.extend_tip(Vec::new(), *d).id();
        }
        let claimed = secondary.branch(&anchor, &tip).unwrap();
        World {
            source,
            secondary,
            pegin_block,
            pegout_block,
            claimed,
        }
    }

    pub fn check_input(&self) -> CheckChainInput {
        CheckChainInput {
            claimed_difficulty: self.claimed.iter().map(|h| h.difficulty as u128).sum(),
            headers: self.claimed.clone(),
            pegin_header: self.source.header(&self.pegin_block).unwrap().clone(),
            pegin_proof: self
                .source
                .prove_inclusion(tx("pegin"), self.pegin_block)
                .unwrap(),
            pegout_proof: self
                .secondary
                .prove_inclusion(tx("pegout"), self.pegout_block)
                .unwrap(),
        }
    }
}

pub fn open_game(
    len: usize,
    arity: u64,
    corruption: Option<Corruption>,
    threshold: u64,
) -> (DisputeGame, ExecutionTrace) {
    let w = World::new(2, 3, &[1]);
    let input = w.check_input();
    let proof = ProofArtifact::make(&input, corruption.is_none(), 2513).unwrap();
    let honest = ExecutionTrace::honest(proof.statement.program_id(), proof.commitment, len);
    let committed = corruption.map_or_else(|| honest.clone(), |c| honest.corrupted(c));
    let game = DisputeGame::open(
        OpenParams {
            kickoff: tx("kickoff"),
            vmxo: VmxoId(0),
            prover: P,
            verifier: V,
            proof,
            prover_trace: committed,
            input: &input,
            config: GameConfig {
                arity,
                challenge_window: 1_000,
                watch_threshold: threshold,
            },
            now: 0,
        },
        &Open,
    )
    .unwrap();
    (game, honest)
}
