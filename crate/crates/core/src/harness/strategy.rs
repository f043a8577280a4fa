//! Functionary behaviours.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Honest,
    /// Kicks off a peg-out that never happened, then never responds.
    SilentProver,
    /// Kicks off a peg-out that never happened and defends a corrupted trace.
    FakeProofProver,
    /// Mines a private secondary-chain branch holding a fake acknowledgement
    /// and proves it faithfully.
    ForkProver,
    /// Challenges every kick-off it sees, valid or not.
    GriefingVerifier,
    /// Operates honestly but opens extra kick-offs on other VMXOs.
    DoubleOperator,
    /// Keeps its keys and tries to spend a VMXO directly.
    KeyLeaker,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Honest,
        Strategy::SilentProver,
        Strategy::FakeProofProver,
        Strategy::ForkProver,
        Strategy::GriefingVerifier,
        Strategy::DoubleOperator,
        Strategy::KeyLeaker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::SilentProver => "silent-prover",
            Strategy::FakeProofProver => "fake-proof-prover",
            Strategy::ForkProver => "fork-prover",
            Strategy::GriefingVerifier => "griefing-verifier",
            Strategy::DoubleOperator => "double-operator",
            Strategy::KeyLeaker => "key-leaker",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_honest(self) -> bool {
        self == Strategy::Honest
    }

    /// Whether the functionary fronts, proves and unlocks its own peg-outs.
    pub fn operates(self) -> bool {
        matches!(
            self,
            Strategy::Honest | Strategy::DoubleOperator | Strategy::KeyLeaker
        )
    }

    /// Whether it challenges false kick-offs and mines markers.
    pub fn verifies(self) -> bool {
        matches!(self, Strategy::Honest | Strategy::KeyLeaker)
    }

    /// Whether it kicks off a peg-out it never fronted.
    pub fn forges_kickoffs(self) -> bool {
        matches!(
            self,
            Strategy::SilentProver
                | Strategy::FakeProofProver
                | Strategy::ForkProver
                | Strategy::DoubleOperator
        )
    }
}
