//! Secondary-chain light client: the `checkChain` / `checkAltChain`
//! predicates, the counter-proof admission gate, and the opaque proof
//! artifact that stands in for a succinct argument over either predicate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{BlockHeader, ChainId, InclusionProof};
use crate::digest::Digest;
use crate::ids::BlockId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LightClientError {
    #[error("malformed input: {0}")]
    MalformedInput(&'static str),
}

/// Comparison metric over a header sequence. Accumulated difficulty is the
/// default; other consensus families can plug in their own weight.
pub trait ChainMetric {
    fn weight(&self, headers: &[BlockHeader]) -> u128;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AccumulatedDifficulty;

impl ChainMetric for AccumulatedDifficulty {
    fn weight(&self, headers: &[BlockHeader]) -> u128 {
        headers.iter().map(|h| h.difficulty as u128).sum()
    }
}

/// Inputs of `checkChain`: the prover's secondary-chain headers, the peg-in
/// inclusion proof on the source chain, the peg-out inclusion proof on the
/// secondary chain and the claimed accumulated weight.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckChainInput {
    pub headers: Vec<BlockHeader>,
    /// Source-chain header the peg-in proof is checked against (known to the
    /// secondary chain through its relay).
    pub pegin_header: BlockHeader,
    pub pegin_proof: InclusionProof,
    pub pegout_proof: InclusionProof,
    pub claimed_difficulty: u128,
}

/// Inputs of `checkAltChain`. `pegout_proof` is the contested proof whose
/// block must be absent from `headers`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltChainInput {
    pub headers: Vec<BlockHeader>,
    pub pegin_header: BlockHeader,
    pub pegin_proof: InclusionProof,
    pub pegout_proof: InclusionProof,
    pub claimed_difficulty: u128,
}

fn check_linkage(headers: &[BlockHeader]) -> Result<(), LightClientError> {
    if headers.is_empty() {
        return Err(LightClientError::MalformedInput("empty header sequence"));
    }
    for pair in headers.windows(2) {
        if pair[1].parent_id != Some(pair[0].id()) || pair[1].height != pair[0].height + 1 {
            return Err(LightClientError::MalformedInput(
                "headers are not parent-linked",
            ));
        }
    }
    Ok(())
}

/// Secondary-chain rules beyond linkage: chain tag and positive work.
fn follows_secondary_rules(headers: &[BlockHeader]) -> bool {
    headers
        .iter()
        .all(|h| h.chain_id == ChainId::Secondary && h.difficulty > 0)
}

fn pegin_verifies(header: &BlockHeader, proof: &InclusionProof) -> bool {
    header.chain_id == ChainId::Source && proof.verify(header)
}

pub fn check_chain(input: &CheckChainInput) -> Result<bool, LightClientError> {
    check_chain_with(input, &AccumulatedDifficulty)
}

pub fn check_chain_with(
    input: &CheckChainInput,
    metric: &impl ChainMetric,
) -> Result<bool, LightClientError> {
    check_linkage(&input.headers)?;
    let rules = follows_secondary_rules(&input.headers);
    let pegin = pegin_verifies(&input.pegin_header, &input.pegin_proof);
    let pegout = input.headers.iter().any(|h| input.pegout_proof.verify(h));
    let weight = metric.weight(&input.headers) == input.claimed_difficulty;
    Ok(rules && pegin && pegout && weight)
}

pub fn check_alt_chain(input: &AltChainInput) -> Result<bool, LightClientError> {
    check_alt_chain_with(input, &AccumulatedDifficulty)
}

pub fn check_alt_chain_with(
    input: &AltChainInput,
    metric: &impl ChainMetric,
) -> Result<bool, LightClientError> {
    check_linkage(&input.headers)?;
    let rules = follows_secondary_rules(&input.headers);
    let pegin = pegin_verifies(&input.pegin_header, &input.pegin_proof);
    let excludes_pegout = input
        .headers
        .iter()
        .all(|h| h.id() != input.pegout_proof.block_id);
    let weight = metric.weight(&input.headers) == input.claimed_difficulty;
    Ok(rules && pegin && excludes_pegout && weight)
}

/// Gate on the counter-proof challenge: the alternative sequence must carry
/// strictly more weight.
pub fn admit_counter_proof(d1: u128, d2: u128) -> bool {
    d2 > d1
}

/// Which predicate a proof artifact speaks about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statement {
    CheckChain,
    CheckAltChain,
}

impl Statement {
    pub fn program_id(self) -> Digest {
        match self {
            Statement::CheckChain => Digest::builder("program").str("checkChain").finish(),
            Statement::CheckAltChain => Digest::builder("program").str("checkAltChain").finish(),
        }
    }
}

/// Something a proof artifact can be made over.
pub trait ProvableInput {
    fn statement(&self) -> Statement;
    fn evaluate(&self) -> Result<bool, LightClientError>;
    fn commitment(&self) -> Digest;
    fn first_header(&self) -> Option<BlockId>;
    fn claimed_difficulty(&self) -> u128;
}

fn commit_common(
    tag: &str,
    headers: &[BlockHeader],
    pegin_header: &BlockHeader,
    pegin: &InclusionProof,
    pegout: &InclusionProof,
    claimed: u128,
) -> Digest {
    let mut b = Digest::builder(tag).u64(headers.len() as u64);
    for h in headers {
        b = b.digest(&h.id().0);
    }
    b.digest(&pegin_header.id().0)
        .digest(&pegin.tx_id.0)
        .digest(&pegin.block_id.0)
        .digest(&pegout.tx_id.0)
        .digest(&pegout.block_id.0)
        .u64((claimed >> 64) as u64)
        .u64(claimed as u64)
        .finish()
}

impl ProvableInput for CheckChainInput {
    fn statement(&self) -> Statement {
        Statement::CheckChain
    }
    fn evaluate(&self) -> Result<bool, LightClientError> {
        check_chain(self)
    }
    fn commitment(&self) -> Digest {
        commit_common(
            "check-chain-input",
            &self.headers,
            &self.pegin_header,
            &self.pegin_proof,
            &self.pegout_proof,
            self.claimed_difficulty,
        )
    }
    fn first_header(&self) -> Option<BlockId> {
        self.headers.first().map(|h| h.id())
    }
    fn claimed_difficulty(&self) -> u128 {
        self.claimed_difficulty
    }
}

impl ProvableInput for AltChainInput {
    fn statement(&self) -> Statement {
        Statement::CheckAltChain
    }
    fn evaluate(&self) -> Result<bool, LightClientError> {
        check_alt_chain(self)
    }
    fn commitment(&self) -> Digest {
        commit_common(
            "alt-chain-input",
            &self.headers,
            &self.pegin_header,
            &self.pegin_proof,
            &self.pegout_proof,
            self.claimed_difficulty,
        )
    }
    fn first_header(&self) -> Option<BlockId> {
        self.headers.first().map(|h| h.id())
    }
    fn claimed_difficulty(&self) -> u128 {
        self.claimed_difficulty
    }
}

/// Opaque stand-in for a succinct proof. Carries the asserted result and a
/// commitment to its inputs. Whether it would actually verify is hidden from
/// verifiers; only the dispute game surfaces it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofArtifact {
    pub statement: Statement,
    pub claim: bool,
    pub commitment: Digest,
    pub size_vbytes: u64,
    valid: bool,
}

impl ProofArtifact {
    /// Honest provers claim the true result; dishonest ones always claim
    /// `true`. The artifact is valid iff the claim matches the truth.
    pub fn make(
        input: &impl ProvableInput,
        honest: bool,
        size_vbytes: u64,
    ) -> Result<ProofArtifact, LightClientError> {
        let truth = input.evaluate()?;
        let claim = if honest { truth } else { true };
        Ok(ProofArtifact {
            statement: input.statement(),
            claim,
            commitment: input.commitment(),
            size_vbytes,
            valid: claim == truth,
        })
    }

    /// Oracle access for the dispute engine.
    pub(crate) fn oracle_valid(&self) -> bool {
        self.valid
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::chain::ChainView;
    use crate::ids::TxId;

    pub fn tx(tag: &str) -> TxId {
        TxId(Digest::builder("fixture-tx").str(tag).finish())
    }

    /// A source chain with a peg-in and a secondary chain with a three-block
    /// run (anchor, peg-out block, confirmation).
    pub struct World {
        pub source: ChainView,
        pub secondary: ChainView,
        pub pegin_block: BlockId,
        pub anchor: BlockId,
        pub pegout_block: BlockId,
        pub tip: BlockId,
    }

    pub fn world() -> World {
        let mut source = ChainView::new(ChainId::Source, 1);
        let pegin_block = source.extend_tip(vec![tx("filler"), tx("pegin")], 1).id();
        let mut secondary = ChainView::new(ChainId::Secondary, 1);
        let anchor = secondary.extend_tip(vec![tx("mint")], 2).id();
        let pegout_block = secondary.extend_tip(vec![tx("pegout")], 3).id();
        let tip = secondary.extend_tip(vec![], 1).id();
        World {
            source,
            secondary,
            pegin_block,
            anchor,
            pegout_block,
            tip,
        }
    }

    impl World {
        pub fn check_input(&self) -> CheckChainInput {
            let headers = self.secondary.branch(&self.anchor, &self.tip).unwrap();
            let claimed = headers.iter().map(|h| h.difficulty as u128).sum();
            CheckChainInput {
                headers,
                pegin_header: self.source.header(&self.pegin_block).unwrap().clone(),
                pegin_proof: self
                    .source
                    .prove_inclusion(tx("pegin"), self.pegin_block)
                    .unwrap(),
                pegout_proof: self
                    .secondary
                    .prove_inclusion(tx("pegout"), self.pegout_block)
                    .unwrap(),
                claimed_difficulty: claimed,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn empty_headers_are_malformed() {
        let mut input = world().check_input();
        input.headers.clear();
        assert!(matches!(
            check_chain(&input),
            Err(LightClientError::MalformedInput(_))
        ));
    }

    #[test]
    fn broken_linkage_is_malformed() {
        let mut input = world().check_input();
        input.headers.swap(0, 2);
        assert!(check_chain(&input).is_err());
    }

    #[test]
    fn valid_instance_passes_every_clause() {
        let w = world();
        let input = w.check_input();
        assert_eq!(input.headers.len(), 3);
        assert_eq!(input.claimed_difficulty, 2 + 3 + 1);
        assert_eq!(check_chain(&input), Ok(true));
    }

    #[test]
    fn pegout_outside_headers_fails() {
        let w = world();
        let mut input = w.check_input();
        // drop the anchor and peg-out block; keep only the tip
        input.headers = vec![input.headers[2].clone()];
        input.claimed_difficulty = 1;
        assert_eq!(check_chain(&input), Ok(false));
    }

    #[test]
    fn wrong_difficulty_or_pegin_fails() {
        let w = world();
        let mut input = w.check_input();
        input.claimed_difficulty += 1;
        assert_eq!(check_chain(&input), Ok(false));
        let mut input = w.check_input();
        input.pegin_proof.tx_id = tx("other");
        assert_eq!(check_chain(&input), Ok(false));
    }

    #[test]
    fn alt_chain_excluding_pegout_block() {
        let mut w = world();
        // Fork at the anchor with two heavier blocks.
        let f1 = w
            .secondary
            .mine_block(w.anchor, vec![tx("x")], 4)
            .unwrap()
            .id();
        let f2 = w.secondary.mine_block(f1, vec![], 4).unwrap().id();
        let check = w.check_input();
        let headers = w.secondary.branch(&w.anchor, &f2).unwrap();
        let alt = AltChainInput {
            claimed_difficulty: 2 + 4 + 4,
            headers,
            pegin_header: check.pegin_header.clone(),
            pegin_proof: check.pegin_proof.clone(),
            pegout_proof: check.pegout_proof.clone(),
        };
        assert_eq!(check_alt_chain(&alt), Ok(true));
        assert!(admit_counter_proof(
            check.claimed_difficulty,
            alt.claimed_difficulty
        ));

        let mut wrong = alt.clone();
        wrong.claimed_difficulty = 9;
        assert_eq!(check_alt_chain(&wrong), Ok(false));

        let mut containing = alt;
        containing.headers = check.headers.clone();
        containing.claimed_difficulty = check.claimed_difficulty;
        assert_eq!(check_alt_chain(&containing), Ok(false));
    }

    #[test]
    fn counter_proof_gate_is_strict() {
        assert!(admit_counter_proof(6, 7));
        assert!(!admit_counter_proof(7, 7));
        assert!(!admit_counter_proof(7, 6));
    }

    #[test]
    fn artifacts() {
        let w = world();
        let good = w.check_input();
        let a = ProofArtifact::make(&good, true, 2513).unwrap();
        assert!(a.claim && a.oracle_valid());

        let mut bad = w.check_input();
        bad.claimed_difficulty = 1;
        let lie = ProofArtifact::make(&bad, false, 2513).unwrap();
        assert!(lie.claim && !lie.oracle_valid());
        let honest_false = ProofArtifact::make(&bad, true, 2513).unwrap();
        assert!(!honest_false.claim);
        assert_ne!(a.commitment, lie.commitment);
    }
}
