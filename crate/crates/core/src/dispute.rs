//! Prover/verifier dispute channel.
//!
//! The computation behind a proof artifact is abstracted as a deterministic
//! step function over opaque state digests. Each step also consumes a read
//! value, which must equal the state produced by an earlier step
//! ([`read_source`]). A dispute runs in these phases:
//!
//! 1. `AwaitChallenge`: the verifier may challenge the execution or submit
//!    an alternative-chain counter-proof; otherwise the prover wins once the
//!    challenge window passes.
//! 2. `MainSearch`: an n-ary search over committed states isolates the first
//!    step whose output the verifier disputes.
//! 3. `TraceReveal`: the prover publishes the full record of that step.
//! 4. `ReadSearch`: if the transition itself is consistent, a second n-ary
//!    search locates the step that produced the value read.
//! 5. `LeafCheck`: the verifier executes the single isolated check on-chain.
//!
//! A counter-proof opens a nested game with the roles reversed. Nesting
//! depth is at most one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::econ::{search_rounds, CostTable};
use crate::ids::{BlockId, FunctionaryId, Tick, TxId, VmxoId};
use crate::lightclient::{
    admit_counter_proof, AltChainInput, LightClientError, ProofArtifact, ProvableInput,
};
use crate::stopwatch::{Marker, StopWatch};

/// Default search arity.
pub const DEFAULT_ARITY: u64 = 4;
/// Default desk-scale trace length.
pub const DEFAULT_TRACE_LEN: usize = 16;
/// Upper bound on desk-scale traces.
pub const MAX_DESK_TRACE: usize = 4096;

/// Step `index` (1-based) reads the state produced by this earlier step.
pub fn read_source(index: usize) -> usize {
    debug_assert!(index >= 1);
    (index - 1) / 2
}

/// The abstract CPU transition.
pub fn step(program_id: &Digest, index: usize, prev: &Digest, read: &Digest) -> Digest {
    Digest::builder("cpu-step")
        .digest(program_id)
        .u64(index as u64)
        .digest(prev)
        .digest(read)
        .finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corruption {
    /// The committed output of this step is not the transition's result.
    State(usize),
    /// This step reads a value no earlier step produced.
    Read(usize),
}

impl Corruption {
    pub fn position(&self) -> usize {
        match *self {
            Corruption::State(p) | Corruption::Read(p) => p,
        }
    }
}

/// Committed execution: `states[0]` is the input state and `states[len]`
/// the final one. `reads[0]` is unused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub program_id: Digest,
    pub states: Vec<Digest>,
    pub reads: Vec<Digest>,
}

impl ExecutionTrace {
    pub fn honest(program_id: Digest, input: Digest, steps: usize) -> ExecutionTrace {
        let mut t = ExecutionTrace {
            program_id,
            states: vec![input; steps + 1],
            reads: vec![Digest::ZERO; steps + 1],
        };
        t.recompute_from(1);
        t
    }

    fn recompute_from(&mut self, from: usize) {
        for i in from..self.states.len() {
            self.reads[i] = self.states[read_source(i)];
            self.states[i] = step(&self.program_id, i, &self.states[i - 1], &self.reads[i]);
        }
    }

    /// Copy with one step falsified and everything after it recomputed from
    /// the falsified state, so the only invalid step is the corrupted one.
    pub fn corrupted(&self, c: Corruption) -> ExecutionTrace {
        let p = c.position();
        assert!(
            p >= 1 && p <= self.len(),
            "corruption position out of range"
        );
        let mut t = self.clone();
        match c {
            Corruption::State(p) => {
                t.states[p] = Digest::builder("corrupt-state")
                    .digest(&t.states[p])
                    .finish();
            }
            Corruption::Read(p) => {
                t.reads[p] = Digest::builder("corrupt-read").digest(&t.reads[p]).finish();
                t.states[p] = step(&t.program_id, p, &t.states[p - 1], &t.reads[p]);
            }
        }
        t.recompute_from(p + 1);
        t
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn final_state(&self) -> Digest {
        *self.states.last().unwrap()
    }

    pub fn transition_valid(&self, index: usize) -> bool {
        self.states[index]
            == step(
                &self.program_id,
                index,
                &self.states[index - 1],
                &self.reads[index],
            )
    }

    pub fn read_valid(&self, index: usize) -> bool {
        self.reads[index] == self.states[read_source(index)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Prover,
    Verifier,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Prover => Role::Verifier,
            Role::Verifier => Role::Prover,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    NoChallenge,
    ConflictingCommit,
    Timeout,
    CounterProofUpheld,
    CounterProofDefeated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub winner: FunctionaryId,
    pub loser: FunctionaryId,
    pub reason: Reason,
    /// True for the inner game of a counter-proof.
    pub nested: bool,
}

impl Outcome {
    /// Whether this terminal slashes the loser. Unchallenged proofs and the
    /// outer close after a defeated counter-proof do not (the latter's loser
    /// was already penalized by the inner game).
    pub fn is_penalizing(&self) -> bool {
        matches!(
            self.reason,
            Reason::ConflictingCommit | Reason::Timeout | Reason::CounterProofUpheld
        )
    }

    pub fn prover_lost(&self, game: &DisputeGame) -> bool {
        self.loser == game.prover
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafKind {
    Transition,
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    AwaitChallenge,
    MainSearch { round: u32 },
    TraceReveal,
    ReadSearch { round: u32 },
    LeafCheck(LeafKind),
    CounterProof,
    Terminal(Outcome),
}

impl Phase {
    fn rank(&self) -> u8 {
        match self {
            Phase::AwaitChallenge => 0,
            Phase::CounterProof => 1,
            Phase::MainSearch { .. } => 2,
            Phase::TraceReveal => 3,
            Phase::ReadSearch { .. } => 4,
            Phase::LeafCheck(_) => 5,
            Phase::Terminal(_) => 6,
        }
    }
}

/// What the verifier contests.
#[derive(Clone, Debug)]
pub enum ChallengeKind {
    Execution,
    /// Alternative header sequence with its own proof artifact and the trace
    /// the counter-prover commits to.
    AltChain {
        input: Box<AltChainInput>,
        proof: ProofArtifact,
        trace: ExecutionTrace,
    },
}

#[derive(Clone, Debug)]
pub enum Move {
    Challenge(ChallengeKind),
    /// Prover publishes the digests at the current round's split points.
    CommitHashes,
    /// Verifier selects a segment of the current search interval.
    Choose(usize),
    /// Prover publishes the full record of the isolated step.
    RevealStep,
    /// Verifier disputes the read value instead of the transition.
    DisputeRead,
    /// Prover publishes the trace entry located by the read search.
    PublishReadTrace,
    /// Verifier executes the isolated check on-chain.
    ExecuteLeaf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Challenge,
    CounterProof,
    CommitHashes,
    Choose,
    RevealStep,
    DisputeRead,
    PublishReadTrace,
    ExecuteLeaf,
    /// Not a transaction: the watch restarts after a defeated counter-proof.
    Resume,
}

impl MoveKind {
    pub fn vbytes(self, costs: &CostTable) -> u64 {
        match self {
            MoveKind::Challenge => costs.challenge,
            MoveKind::CounterProof => costs.challenge + costs.commit_proof,
            MoveKind::CommitHashes => costs.publish_hashes_per_step,
            MoveKind::Choose | MoveKind::DisputeRead => costs.publish_choice_per_step,
            MoveKind::RevealStep => costs.publish_full_trace,
            MoveKind::PublishReadTrace => costs.publish_read_trace,
            MoveKind::ExecuteLeaf => costs.sha256_computation,
            MoveKind::Resume => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub tick: Tick,
    pub by: Option<FunctionaryId>,
    pub kind: MoveKind,
    pub vbytes: u64,
    /// Split-point digests revealed by `CommitHashes`.
    pub commitments: Vec<(usize, Digest)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DisputeError {
    #[error("verifier holds no live enabler against this prover")]
    NoEnabler,
    #[error("dispute channel already spent")]
    ChannelSpent,
    #[error("move not allowed in phase {0:?}")]
    WrongPhase(Phase),
    #[error("not {0}'s turn")]
    WrongTurn(FunctionaryId),
    #[error("{0} is not a party to this game")]
    NotAParty(FunctionaryId),
    #[error("counter-proof weight {d2} does not exceed {d1}")]
    DifficultyNotHigher { d1: u128, d2: u128 },
    #[error("counter-proof must start from the prover's first header")]
    AnchorMismatch,
    #[error("counter-proof does not assert an alternative chain")]
    ClaimNotAsserted,
    #[error("counter-proofs cannot be nested")]
    NestingDepth,
    #[error("response deadline passed")]
    TimeoutExpired,
    #[error("challenge window open ({elapsed} of {window} ticks elapsed)")]
    WindowOpen { elapsed: u64, window: u64 },
    #[error("segment {index} out of range ({segments} segments)")]
    InvalidChoice { index: usize, segments: usize },
    #[error("counter-proof input malformed: {0}")]
    Malformed(#[from] LightClientError),
}

/// Channel bookkeeping the game needs from the transaction graph.
pub trait ChannelAccess {
    fn verifier_enabler_live(
        &self,
        vmxo: VmxoId,
        verifier: FunctionaryId,
        prover: FunctionaryId,
    ) -> bool;
    fn channel_unspent(&self, kickoff: TxId, verifier: FunctionaryId) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub arity: u64,
    pub challenge_window: u64,
    pub watch_threshold: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            arity: DEFAULT_ARITY,
            challenge_window: 100,
            watch_threshold: 100,
        }
    }
}

/// `(lo, hi]` with `lo` agreed and `hi` disputed for the main search;
/// `[lo, hi)` containing the read source for the read search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Interval {
    lo: usize,
    hi: usize,
}

impl Interval {
    fn width(&self) -> usize {
        self.hi - self.lo
    }

    fn segment_len(&self, arity: u64) -> usize {
        self.width().div_ceil(arity as usize).max(1)
    }

    /// Internal split points.
    fn boundaries(&self, arity: u64) -> Vec<usize> {
        let s = self.segment_len(arity);
        (1..)
            .map(|j| self.lo + j * s)
            .take_while(|b| *b < self.hi)
            .collect()
    }

    fn segments(&self, arity: u64) -> usize {
        self.boundaries(arity).len() + 1
    }

    fn segment(&self, arity: u64, index: usize) -> Interval {
        let b = self.boundaries(arity);
        let lo = if index == 0 { self.lo } else { b[index - 1] };
        let hi = b.get(index).copied().unwrap_or(self.hi);
        Interval { lo, hi }
    }
}

#[derive(Clone, Debug)]
pub struct DisputeGame {
    pub kickoff: TxId,
    pub vmxo: VmxoId,
    pub prover: FunctionaryId,
    pub verifier: FunctionaryId,
    pub config: GameConfig,
    pub proof: ProofArtifact,
    pub nested: bool,
    phase: Phase,
    turn: Option<Role>,
    prover_trace: ExecutionTrace,
    anchor: Option<BlockId>,
    claimed_difficulty: u128,
    main: Interval,
    read: Option<Interval>,
    isolated: Option<usize>,
    read_index: Option<usize>,
    watches: BTreeMap<Role, StopWatch>,
    moves: Vec<MoveRecord>,
    inner: Option<Box<DisputeGame>>,
    alt_chain_used: bool,
    counter_defeated: bool,
    opened_at: Tick,
    window_start: Tick,
    rounds: u32,
}

/// Parameters of a new channel game.
pub struct OpenParams<'a> {
    pub kickoff: TxId,
    pub vmxo: VmxoId,
    pub prover: FunctionaryId,
    pub verifier: FunctionaryId,
    pub proof: ProofArtifact,
    /// The trace the prover committed to alongside the proof.
    pub prover_trace: ExecutionTrace,
    /// Statement inputs committed in the kick-off.
    pub input: &'a dyn ProvableInputDyn,
    pub config: GameConfig,
    pub now: Tick,
}

/// Object-safe view of [`ProvableInput`].
pub trait ProvableInputDyn {
    fn first_header(&self) -> Option<BlockId>;
    fn claimed_difficulty(&self) -> u128;
}

impl<T: ProvableInput> ProvableInputDyn for T {
    fn first_header(&self) -> Option<BlockId> {
        ProvableInput::first_header(self)
    }
    fn claimed_difficulty(&self) -> u128 {
        ProvableInput::claimed_difficulty(self)
    }
}

/// Everything a move changed, for the caller's event log.
#[derive(Clone, Debug, Default)]
pub struct Step {
    pub record: Option<MoveRecord>,
    pub stopped: Option<(FunctionaryId, u64)>,
    pub outcomes: Vec<Outcome>,
}

fn max_slots(config: &GameConfig, trace_len: usize) -> usize {
    let rounds = search_rounds(config.arity, trace_len as u64) as usize;
    2 * rounds + 8
}

impl DisputeGame {
    pub fn open(
        params: OpenParams<'_>,
        access: &impl ChannelAccess,
    ) -> Result<DisputeGame, DisputeError> {
        if !access.verifier_enabler_live(params.vmxo, params.verifier, params.prover) {
            return Err(DisputeError::NoEnabler);
        }
        if !access.channel_unspent(params.kickoff, params.verifier) {
            return Err(DisputeError::ChannelSpent);
        }
        Ok(Self::new_unchecked(params, false))
    }

    fn new_unchecked(params: OpenParams<'_>, nested: bool) -> DisputeGame {
        let len = params.prover_trace.len();
        let slots = max_slots(&params.config, len);
        let mut watches = BTreeMap::new();
        watches.insert(
            Role::Prover,
            StopWatch::new(params.prover, params.config.watch_threshold, slots),
        );
        let mut vw = StopWatch::new(params.verifier, params.config.watch_threshold, slots);
        vw.start(params.now).expect("fresh watch");
        watches.insert(Role::Verifier, vw);
        DisputeGame {
            kickoff: params.kickoff,
            vmxo: params.vmxo,
            prover: params.prover,
            verifier: params.verifier,
            config: params.config,
            proof: params.proof,
            nested,
            phase: Phase::AwaitChallenge,
            turn: Some(Role::Verifier),
            anchor: params.input.first_header(),
            claimed_difficulty: params.input.claimed_difficulty(),
            main: Interval { lo: 0, hi: len },
            read: None,
            isolated: None,
            read_index: None,
            prover_trace: params.prover_trace,
            watches,
            moves: Vec::new(),
            inner: None,
            alt_chain_used: false,
            counter_defeated: false,
            opened_at: params.now,
            window_start: params.now,
            rounds: 0,
        }
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Terminal(_))
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.phase {
            Phase::Terminal(o) => Some(o),
            _ => None,
        }
    }

    pub fn turn(&self) -> Option<Role> {
        self.turn
    }

    /// The functionary expected to act next, descending into a running
    /// counter-proof game.
    pub fn party_to_move(&self) -> Option<FunctionaryId> {
        if let (Phase::CounterProof, Some(inner)) = (&self.phase, &self.inner) {
            return inner.party_to_move();
        }
        self.turn.map(|r| self.party(r))
    }

    pub fn party(&self, role: Role) -> FunctionaryId {
        match role {
            Role::Prover => self.prover,
            Role::Verifier => self.verifier,
        }
    }

    fn role_of(&self, who: FunctionaryId) -> Option<Role> {
        if who == self.prover {
            Some(Role::Prover)
        } else if who == self.verifier {
            Some(Role::Verifier)
        } else {
            None
        }
    }

    pub fn opened_at(&self) -> Tick {
        self.opened_at
    }

    pub fn moves(&self) -> &[MoveRecord] {
        &self.moves
    }

    pub fn watch(&self, role: Role) -> &StopWatch {
        &self.watches[&role]
    }

    pub fn inner(&self) -> Option<&DisputeGame> {
        self.inner.as_deref()
    }

    pub fn prover_trace(&self) -> &ExecutionTrace {
        &self.prover_trace
    }

    /// Step isolated by the main search, once it has finished.
    pub fn isolated_step(&self) -> Option<usize> {
        self.isolated
    }

    /// Trace index isolated by the read search.
    pub fn read_index(&self) -> Option<usize> {
        self.read_index
    }

    /// On-chain rounds used so far (each `CommitHashes` starts one).
    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn counter_proof_used(&self) -> bool {
        self.alt_chain_used
    }

    /// Current search interval boundaries and segment count, for strategies.
    pub fn current_split(&self) -> Option<(Vec<usize>, usize)> {
        let iv = match self.phase {
            Phase::MainSearch { .. } => self.main,
            Phase::ReadSearch { .. } => self.read?,
            _ => return None,
        };
        Some((
            iv.boundaries(self.config.arity),
            iv.segments(self.config.arity),
        ))
    }

    /// Read-search target and interval, for strategies.
    pub fn read_interval(&self) -> Option<(usize, usize)> {
        self.read.map(|iv| (iv.lo, iv.hi))
    }

    /// Prover commitments of the most recent `CommitHashes`.
    pub fn last_commitments(&self) -> Option<&[(usize, Digest)]> {
        self.moves
            .iter()
            .rev()
            .find(|m| m.kind == MoveKind::CommitHashes)
            .map(|m| m.commitments.as_slice())
    }

    /// Applies a move by `actor` at `now`, forwarding into a running
    /// counter-proof game.
    pub fn apply(
        &mut self,
        now: Tick,
        actor: FunctionaryId,
        mv: Move,
    ) -> Result<Step, DisputeError> {
        let mut outcomes = self.poll(now);
        if self.is_terminal() {
            return Err(if outcomes.iter().any(|o| o.reason == Reason::Timeout) {
                DisputeError::TimeoutExpired
            } else {
                DisputeError::WrongPhase(self.phase.clone())
            });
        }
        if self.phase == Phase::CounterProof {
            let inner = self
                .inner
                .as_mut()
                .expect("counter-proof phase has inner game");
            let mut step = inner.apply(now, actor, mv)?;
            outcomes.append(&mut step.outcomes);
            outcomes.extend(self.settle_counter_proof(now));
            step.outcomes = outcomes;
            return Ok(step);
        }
        let role = self.role_of(actor).ok_or(DisputeError::NotAParty(actor))?;
        if self.turn != Some(role) {
            return Err(DisputeError::WrongTurn(actor));
        }
        let mut step = self.apply_own(now, role, mv)?;
        outcomes.append(&mut step.outcomes);
        step.outcomes = outcomes;
        Ok(step)
    }

    fn apply_own(&mut self, now: Tick, role: Role, mv: Move) -> Result<Step, DisputeError> {
        let arity = self.config.arity;
        let mut commitments = Vec::new();
        let kind = match (&self.phase, role, mv) {
            (Phase::AwaitChallenge, Role::Verifier, Move::Challenge(ChallengeKind::Execution)) => {
                self.phase = if self.main.width() > 1 {
                    Phase::MainSearch { round: 1 }
                } else {
                    self.isolated = Some(self.main.hi);
                    Phase::TraceReveal
                };
                MoveKind::Challenge
            }
            (
                Phase::AwaitChallenge,
                Role::Verifier,
                Move::Challenge(ChallengeKind::AltChain {
                    input,
                    proof,
                    trace,
                }),
            ) => {
                if self.nested {
                    return Err(DisputeError::NestingDepth);
                }
                if self.alt_chain_used {
                    return Err(DisputeError::WrongPhase(self.phase.clone()));
                }
                if input.headers.is_empty() {
                    return Err(LightClientError::MalformedInput("empty header sequence").into());
                }
                if !proof.claim {
                    return Err(DisputeError::ClaimNotAsserted);
                }
                let d2 = input.claimed_difficulty;
                if !admit_counter_proof(self.claimed_difficulty, d2) {
                    return Err(DisputeError::DifficultyNotHigher {
                        d1: self.claimed_difficulty,
                        d2,
                    });
                }
                if self.anchor != input.headers.first().map(|h| h.id()) {
                    return Err(DisputeError::AnchorMismatch);
                }
                let inner = DisputeGame::new_unchecked(
                    OpenParams {
                        kickoff: self.kickoff,
                        vmxo: self.vmxo,
                        prover: self.verifier,
                        verifier: self.prover,
                        proof,
                        prover_trace: trace,
                        input: input.as_ref(),
                        config: self.config,
                        now,
                    },
                    true,
                );
                self.inner = Some(Box::new(inner));
                self.alt_chain_used = true;
                self.phase = Phase::CounterProof;
                MoveKind::CounterProof
            }
            (Phase::MainSearch { .. }, Role::Prover, Move::CommitHashes) => {
                commitments = self
                    .main
                    .boundaries(arity)
                    .into_iter()
                    .map(|b| (b, self.prover_trace.states[b]))
                    .collect();
                self.rounds += 1;
                MoveKind::CommitHashes
            }
            (Phase::MainSearch { round }, Role::Verifier, Move::Choose(i)) => {
                let round = *round;
                self.require_committed()?;
                let segments = self.main.segments(arity);
                if i >= segments {
                    return Err(DisputeError::InvalidChoice { index: i, segments });
                }
                self.main = self.main.segment(arity, i);
                self.phase = if self.main.width() == 1 {
                    self.isolated = Some(self.main.hi);
                    Phase::TraceReveal
                } else {
                    Phase::MainSearch { round: round + 1 }
                };
                MoveKind::Choose
            }
            (Phase::TraceReveal, Role::Prover, Move::RevealStep) => MoveKind::RevealStep,
            (Phase::TraceReveal, Role::Verifier, Move::ExecuteLeaf) => {
                self.require_revealed()?;
                self.phase = Phase::LeafCheck(LeafKind::Transition);
                MoveKind::ExecuteLeaf
            }
            (Phase::TraceReveal, Role::Verifier, Move::DisputeRead) => {
                self.require_revealed()?;
                let p = self.isolated.expect("isolated before reveal");
                let iv = Interval { lo: 0, hi: p };
                self.read = Some(iv);
                self.phase = Phase::ReadSearch { round: 1 };
                MoveKind::DisputeRead
            }
            (Phase::ReadSearch { .. }, Role::Prover, Move::CommitHashes) => {
                let iv = self.read.expect("read interval");
                if iv.width() <= 1 {
                    return Err(DisputeError::WrongPhase(self.phase.clone()));
                }
                commitments = iv
                    .boundaries(arity)
                    .into_iter()
                    .map(|b| (b, self.prover_trace.states[b]))
                    .collect();
                self.rounds += 1;
                MoveKind::CommitHashes
            }
            (Phase::ReadSearch { round }, Role::Verifier, Move::Choose(i)) => {
                let round = *round;
                self.require_committed()?;
                let iv = self.read.expect("read interval");
                let segments = iv.segments(arity);
                if i >= segments {
                    return Err(DisputeError::InvalidChoice { index: i, segments });
                }
                let next = iv.segment(arity, i);
                self.read = Some(next);
                self.phase = Phase::ReadSearch { round: round + 1 };
                MoveKind::Choose
            }
            (Phase::ReadSearch { .. }, Role::Prover, Move::PublishReadTrace) => {
                let iv = self.read.expect("read interval");
                if iv.width() != 1 {
                    return Err(DisputeError::WrongPhase(self.phase.clone()));
                }
                self.read_index = Some(iv.lo);
                self.phase = Phase::LeafCheck(LeafKind::Read);
                MoveKind::PublishReadTrace
            }
            (Phase::LeafCheck(LeafKind::Read), Role::Verifier, Move::ExecuteLeaf) => {
                MoveKind::ExecuteLeaf
            }
            (phase, _, _) => return Err(DisputeError::WrongPhase(phase.clone())),
        };

        let vbytes = kind.vbytes(&CostTable::MEASURED);
        let record = MoveRecord {
            tick: now,
            by: Some(self.party(role)),
            kind,
            vbytes,
            commitments,
        };
        self.moves.push(record.clone());

        let stopped_len = self
            .watches
            .get_mut(&role)
            .unwrap()
            .stop(now)
            .expect("mover's watch runs on their turn");
        let mut step = Step {
            record: Some(record),
            stopped: Some((self.party(role), stopped_len)),
            outcomes: Vec::new(),
        };

        if kind == MoveKind::ExecuteLeaf {
            let outcome = self.leaf_check();
            self.finish(outcome);
            step.outcomes.push(outcome);
        } else if kind == MoveKind::CounterProof {
            self.turn = None;
        } else {
            let next = role.other();
            self.turn = Some(next);
            self.watches
                .get_mut(&next)
                .unwrap()
                .start(now)
                .expect("counterparty watch idle");
        }
        Ok(step)
    }

    fn require_committed(&self) -> Result<(), DisputeError> {
        match self.moves.last() {
            Some(m) if m.kind == MoveKind::CommitHashes => Ok(()),
            _ => Err(DisputeError::WrongPhase(self.phase.clone())),
        }
    }

    fn require_revealed(&self) -> Result<(), DisputeError> {
        match self.moves.last() {
            Some(m) if m.kind == MoveKind::RevealStep => Ok(()),
            _ => Err(DisputeError::WrongPhase(self.phase.clone())),
        }
    }

    /// Re-executes the isolated check. The prover loses iff its committed
    /// trace is invalid at that point.
    pub fn leaf_check(&self) -> Outcome {
        let p = self.isolated.expect("leaf check after isolation");
        let prover_wrong = match self.phase {
            Phase::LeafCheck(LeafKind::Transition) => !self.prover_trace.transition_valid(p),
            Phase::LeafCheck(LeafKind::Read) => {
                let q = self.read_index.expect("read index located");
                q == read_source(p) && !self.prover_trace.read_valid(p)
            }
            _ => panic!("leaf check outside LeafCheck phase"),
        };
        let (winner, loser) = if prover_wrong {
            (self.verifier, self.prover)
        } else {
            (self.prover, self.verifier)
        };
        Outcome {
            winner,
            loser,
            reason: Reason::ConflictingCommit,
            nested: self.nested,
        }
    }

    fn finish(&mut self, outcome: Outcome) {
        self.phase = Phase::Terminal(outcome);
        self.turn = None;
    }

    /// Applies deadline-driven transitions at `now`: the unchallenged close
    /// once the window has passed, and stop-watch timeouts. Returns outcomes
    /// reached (inner ones first).
    pub fn poll(&mut self, now: Tick) -> Vec<Outcome> {
        let mut out = Vec::new();
        match self.phase {
            Phase::Terminal(_) => {}
            Phase::CounterProof => {
                let inner = self.inner.as_mut().unwrap();
                out.extend(inner.poll(now));
                out.extend(self.settle_counter_proof(now));
            }
            Phase::AwaitChallenge => {
                if let Ok(o) = self.resolve_no_challenge(now) {
                    out.push(o);
                }
            }
            _ => {
                let role = self.turn.expect("non-terminal phase has a turn");
                if self.watches[&role].check_aggregate_timeout(now) {
                    let loser = self.party(role);
                    let winner = self.party(role.other());
                    let o = Outcome {
                        winner,
                        loser,
                        reason: Reason::Timeout,
                        nested: self.nested,
                    };
                    self.finish(o);
                    out.push(o);
                }
            }
        }
        out
    }

    /// Closes an unchallenged game in the prover's favour once the window
    /// has fully elapsed.
    pub fn resolve_no_challenge(&mut self, now: Tick) -> Result<Outcome, DisputeError> {
        if self.phase != Phase::AwaitChallenge {
            return Err(DisputeError::WrongPhase(self.phase.clone()));
        }
        let elapsed = now.saturating_sub(self.window_start);
        window_elapsed(self.config.challenge_window, elapsed)?;
        let reason = if self.counter_defeated {
            Reason::CounterProofDefeated
        } else {
            Reason::NoChallenge
        };
        let o = Outcome {
            winner: self.prover,
            loser: self.verifier,
            reason,
            nested: self.nested,
        };
        let _ = self.watches.get_mut(&Role::Verifier).unwrap().stop(now);
        self.finish(o);
        Ok(o)
    }

    fn settle_counter_proof(&mut self, now: Tick) -> Vec<Outcome> {
        let Some(inner) = self.inner.as_ref() else {
            return Vec::new();
        };
        let Some(inner_outcome) = inner.outcome() else {
            return Vec::new();
        };
        if self.phase != Phase::CounterProof {
            return Vec::new();
        }
        if inner_outcome.winner == inner.prover {
            let o = Outcome {
                winner: self.verifier,
                loser: self.prover,
                reason: Reason::CounterProofUpheld,
                nested: self.nested,
            };
            self.finish(o);
            vec![o]
        } else {
            // The outer game resumes, alternative chain no longer available.
            self.counter_defeated = true;
            self.phase = Phase::AwaitChallenge;
            self.turn = Some(Role::Verifier);
            self.window_start = now;
            self.watches
                .get_mut(&Role::Verifier)
                .unwrap()
                .start(now)
                .expect("verifier watch idle during counter-proof");
            self.moves.push(MoveRecord {
                tick: now,
                by: None,
                kind: MoveKind::Resume,
                vbytes: 0,
                commitments: Vec::new(),
            });
            Vec::new()
        }
    }

    /// Mines every matured interval marker on the running watch of this game
    /// (and of a running inner game). Returns the party measured and marker.
    pub fn mine_markers(&mut self, now: Tick) -> Vec<(FunctionaryId, Marker)> {
        let mut out = Vec::new();
        if let Some(inner) = self.inner.as_mut() {
            out.extend(inner.mine_markers(now));
        }
        if self.is_terminal() {
            return out;
        }
        for w in self.watches.values_mut() {
            for d in w.minable_markers(now) {
                if let Ok(m) = w.mine_marker(now, d) {
                    out.push((w.party_under_measure, m));
                }
            }
        }
        out
    }

    /// Phase sequence check helper: phases never move backwards except the
    /// documented resume from `CounterProof` to `AwaitChallenge`.
    pub fn phase_rank(&self) -> u8 {
        self.phase.rank()
    }
}

/// `Ok` once more than `window` ticks have elapsed.
pub fn window_elapsed(window: u64, elapsed: u64) -> Result<(), DisputeError> {
    if elapsed > window {
        Ok(())
    } else {
        Err(DisputeError::WindowOpen { elapsed, window })
    }
}

/// The move an honest verifier makes, comparing against its own
/// re-execution `local`. Returns `None` when it is not the verifier's turn.
pub fn honest_verifier_move(game: &DisputeGame, local: &ExecutionTrace) -> Option<Move> {
    if game.turn() != Some(Role::Verifier) {
        return None;
    }
    match game.phase() {
        Phase::MainSearch { .. } => {
            let commits = game.last_commitments()?;
            let idx = commits
                .iter()
                .position(|(b, d)| local.states[*b] != *d)
                .unwrap_or(commits.len());
            Some(Move::Choose(idx))
        }
        Phase::TraceReveal => {
            let p = game.isolated_step()?;
            if game.prover_trace().transition_valid(p) {
                Some(Move::DisputeRead)
            } else {
                Some(Move::ExecuteLeaf)
            }
        }
        Phase::ReadSearch { .. } => {
            let p = game.isolated_step()?;
            let target = read_source(p);
            let (bounds, _) = game.current_split()?;
            let idx = bounds.iter().filter(|b| **b <= target).count();
            Some(Move::Choose(idx))
        }
        Phase::LeafCheck(_) => Some(Move::ExecuteLeaf),
        _ => None,
    }
}

/// The prover's response in the current phase. Provers cannot deviate from
/// their committed trace; their only freedom is whether to respond.
pub fn prover_move(game: &DisputeGame) -> Option<Move> {
    if game.turn() != Some(Role::Prover) {
        return None;
    }
    match game.phase() {
        Phase::MainSearch { .. } => Some(Move::CommitHashes),
        Phase::TraceReveal => Some(Move::RevealStep),
        Phase::ReadSearch { .. } => {
            let (lo, hi) = game.read_interval()?;
            if hi - lo <= 1 {
                Some(Move::PublishReadTrace)
            } else {
                Some(Move::CommitHashes)
            }
        }
        _ => None,
    }
}

/// A verifier contesting a correct proof: it picks segments by `pick` and
/// pushes the read dispute whenever it can.
pub fn griefing_verifier_move(game: &DisputeGame, pick: usize) -> Option<Move> {
    if game.turn() != Some(Role::Verifier) {
        return None;
    }
    match game.phase() {
        Phase::MainSearch { .. } | Phase::ReadSearch { .. } => {
            let (_, segments) = game.current_split()?;
            Some(Move::Choose(pick % segments))
        }
        Phase::TraceReveal => {
            if pick % 2 == 0 {
                Some(Move::DisputeRead)
            } else {
                Some(Move::ExecuteLeaf)
            }
        }
        Phase::LeafCheck(_) => Some(Move::ExecuteLeaf),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightclient::fixtures::world;

    struct Open;
    impl ChannelAccess for Open {
        fn verifier_enabler_live(&self, _: VmxoId, _: FunctionaryId, _: FunctionaryId) -> bool {
            true
        }
        fn channel_unspent(&self, _: TxId, _: FunctionaryId) -> bool {
            true
        }
    }

    struct Closed {
        enabler: bool,
        channel: bool,
    }
    impl ChannelAccess for Closed {
        fn verifier_enabler_live(&self, _: VmxoId, _: FunctionaryId, _: FunctionaryId) -> bool {
            self.enabler
        }
        fn channel_unspent(&self, _: TxId, _: FunctionaryId) -> bool {
            self.channel
        }
    }

    const P: FunctionaryId = FunctionaryId(0);
    const V: FunctionaryId = FunctionaryId(1);

    fn new_game(
        len: usize,
        arity: u64,
        corruption: Option<Corruption>,
    ) -> (DisputeGame, ExecutionTrace) {
        let w = world();
        let input = w.check_input();
        let proof = ProofArtifact::make(&input, corruption.is_none(), 2513).unwrap();
        let honest = ExecutionTrace::honest(proof.statement.program_id(), proof.commitment, len);
        let committed = match corruption {
            Some(c) => honest.corrupted(c),
            None => honest.clone(),
        };
        let game = DisputeGame::open(
            OpenParams {
                kickoff: TxId(Digest::ZERO),
                vmxo: VmxoId(0),
                prover: P,
                verifier: V,
                proof,
                prover_trace: committed,
                input: &input,
                config: GameConfig {
                    arity,
                    challenge_window: 100,
                    watch_threshold: 1000,
                },
                now: 0,
            },
            &Open,
        )
        .unwrap();
        (game, honest)
    }

    fn play_honest(game: &mut DisputeGame, local: &ExecutionTrace) -> Outcome {
        let mut now = 1;
        game.apply(now, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        while !game.is_terminal() {
            now += 1;
            let (who, mv) = match game.turn().unwrap() {
                Role::Prover => (P, prover_move(game).unwrap()),
                Role::Verifier => (V, honest_verifier_move(game, local).unwrap()),
            };
            game.apply(now, who, mv).unwrap();
        }
        game.outcome().unwrap()
    }

    #[test]
    fn open_checks_enabler_and_channel() {
        let w = world();
        let input = w.check_input();
        let proof = ProofArtifact::make(&input, true, 2513).unwrap();
        let trace = ExecutionTrace::honest(proof.statement.program_id(), proof.commitment, 4);
        let mk = || OpenParams {
            kickoff: TxId(Digest::ZERO),
            vmxo: VmxoId(0),
            prover: P,
            verifier: V,
            proof: proof.clone(),
            prover_trace: trace.clone(),
            input: &input,
            config: GameConfig::default(),
            now: 0,
        };
        assert!(DisputeGame::open(mk(), &Open).is_ok());
        assert_eq!(
            DisputeGame::open(
                mk(),
                &Closed {
                    enabler: false,
                    channel: true
                }
            )
            .unwrap_err(),
            DisputeError::NoEnabler
        );
        assert_eq!(
            DisputeGame::open(
                mk(),
                &Closed {
                    enabler: true,
                    channel: false
                }
            )
            .unwrap_err(),
            DisputeError::ChannelSpent
        );
    }

    #[test]
    fn corrupted_trace_has_single_bad_step() {
        let honest = ExecutionTrace::honest(Digest::ZERO, Digest::builder("in").finish(), 16);
        for p in 1..=16 {
            let t = honest.corrupted(Corruption::State(p));
            for i in 1..=16 {
                assert_eq!(t.transition_valid(i) && t.read_valid(i), i != p);
            }
            let r = honest.corrupted(Corruption::Read(p));
            assert!(r.transition_valid(p) && !r.read_valid(p));
            assert_ne!(r.final_state(), honest.final_state());
        }
    }

    #[test]
    fn four_ary_search_over_sixteen_takes_two_rounds() {
        let (mut g, local) = new_game(16, 4, Some(Corruption::State(16)));
        g.apply(1, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        for t in 0..2 {
            g.apply(2 + 2 * t, P, Move::CommitHashes).unwrap();
            let mv = honest_verifier_move(&g, &local).unwrap();
            g.apply(3 + 2 * t, V, mv).unwrap();
        }
        assert_eq!(g.phase(), &Phase::TraceReveal);
        assert_eq!(g.rounds(), 2);
    }

    #[test]
    fn search_isolates_divergent_step() {
        // brute force: first index where prover and honest states differ
        let (mut g, local) = new_game(16, 4, Some(Corruption::State(9)));
        let expected = (1..=16)
            .find(|i| g.prover_trace().states[*i] != local.states[*i])
            .unwrap();
        assert_eq!(expected, 9);
        let o = play_honest(&mut g, &local);
        assert_eq!(g.isolated_step(), Some(9));
        assert_eq!(o.loser, P);
        assert_eq!(o.reason, Reason::ConflictingCommit);
    }

    #[test]
    fn read_corruption_goes_through_read_search() {
        let (mut g, local) = new_game(16, 2, Some(Corruption::Read(11)));
        let o = play_honest(&mut g, &local);
        assert_eq!(o.loser, P);
        assert_eq!(g.isolated_step(), Some(11));
        assert_eq!(g.read_index(), Some(read_source(11)));
        assert!(g
            .moves()
            .iter()
            .any(|m| m.kind == MoveKind::PublishReadTrace));
    }

    #[test]
    fn honest_prover_beats_griefer() {
        for pick in 0..6 {
            let (mut g, _) = new_game(16, 4, None);
            let mut now = 1;
            g.apply(now, V, Move::Challenge(ChallengeKind::Execution))
                .unwrap();
            while !g.is_terminal() {
                now += 1;
                let (who, mv) = match g.turn().unwrap() {
                    Role::Prover => (P, prover_move(&g).unwrap()),
                    Role::Verifier => (V, griefing_verifier_move(&g, pick + now as usize).unwrap()),
                };
                g.apply(now, who, mv).unwrap();
            }
            assert_eq!(g.outcome().unwrap().loser, V);
        }
    }

    #[test]
    fn silent_responder_times_out() {
        let (mut g, _) = new_game(16, 4, Some(Corruption::State(3)));
        g.config.watch_threshold = 10;
        g.watches.get_mut(&Role::Prover).unwrap().threshold = 10;
        g.apply(5, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        assert!(g.poll(15).is_empty());
        let out = g.poll(16);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reason, Reason::Timeout);
        assert_eq!(out[0].loser, P);
        assert!(matches!(
            g.apply(17, P, Move::CommitHashes),
            Err(DisputeError::WrongPhase(_))
        ));
    }

    #[test]
    fn late_response_is_rejected_as_timeout() {
        let (mut g, _) = new_game(16, 4, None);
        g.watches.get_mut(&Role::Prover).unwrap().threshold = 3;
        g.apply(1, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        assert_eq!(
            g.apply(9, P, Move::CommitHashes).unwrap_err(),
            DisputeError::TimeoutExpired
        );
    }

    #[test]
    fn turn_and_phase_enforced() {
        let (mut g, _) = new_game(16, 4, None);
        assert_eq!(
            g.apply(1, P, Move::CommitHashes).unwrap_err(),
            DisputeError::WrongTurn(P)
        );
        assert_eq!(
            g.apply(1, FunctionaryId(9), Move::CommitHashes)
                .unwrap_err(),
            DisputeError::NotAParty(FunctionaryId(9))
        );
        g.apply(1, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        assert!(matches!(
            g.apply(2, P, Move::RevealStep),
            Err(DisputeError::WrongPhase(_))
        ));
        g.apply(2, P, Move::CommitHashes).unwrap();
        assert_eq!(
            g.apply(3, V, Move::Choose(7)).unwrap_err(),
            DisputeError::InvalidChoice {
                index: 7,
                segments: 4
            }
        );
    }

    #[test]
    fn no_challenge_window() {
        let (mut g, _) = new_game(16, 4, None);
        assert_eq!(
            g.resolve_no_challenge(99).unwrap_err(),
            DisputeError::WindowOpen {
                elapsed: 99,
                window: 100
            }
        );
        let o = g.resolve_no_challenge(101).unwrap();
        assert_eq!((o.winner, o.reason), (P, Reason::NoChallenge));

        let (mut g, _) = new_game(16, 4, None);
        g.apply(50, V, Move::Challenge(ChallengeKind::Execution))
            .unwrap();
        assert!(g.resolve_no_challenge(500).is_err());
    }

    #[test]
    fn moves_alternate() {
        let (mut g, local) = new_game(64, 2, Some(Corruption::Read(40)));
        play_honest(&mut g, &local);
        let movers: Vec<_> = g.moves().iter().filter_map(|m| m.by).collect();
        for w in movers.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }
}
