//! Peg-in / peg-out orchestration over one packet.
//!
//! [`Bridge`] owns both chains, the packet graph, the ledger and every
//! dispute channel. Parties submit transactions; each tick [`Bridge::step`]
//! mines one block per chain from the transactions that have reached the
//! miners, applies their effects, and advances deadlines. Every state
//! change is appended to the event log.

pub mod log;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    BlockHeader, CensorshipWindow, ChainId, ChainView, ClockError, InclusionProof, SimClock,
};
use crate::digest::Digest;
use crate::dispute::{
    ChallengeKind, ChannelAccess, Corruption, DisputeError, DisputeGame, ExecutionTrace,
    GameConfig, Move, MoveKind, OpenParams, Outcome, Phase, Role,
};
use crate::econ::{required_deposit, CostTable, DepositParams};
use crate::ids::{BlockId, FunctionaryId, Sats, Tick, TxId, VmxoId};
use crate::lightclient::{
    admit_counter_proof, check_chain, AltChainInput, CheckChainInput, LightClientError,
    ProofArtifact, ProvableInput, Statement,
};
use crate::txgraph::{
    build_packet_templates, vbytes, Account, EnablerState, GraphError, KeyState, OutPoint,
    OutputKind, PacketGraph, SimOutput, SimTx, TemplateKey, TemplateKind, TxInput, VmxoState,
};

use self::log::{Body, EventLog, GameRef, Holder, RosterEntry, Transfer};

pub const DEFAULT_SOURCE_CONFIRMATIONS: u64 = 6;
pub const DEFAULT_SECONDARY_CONFIRMATIONS: u64 = 10;
/// Operator fee in parts per million of the denomination.
pub const DEFAULT_FEE_PPM: u64 = 1_000;
pub const SECONDARY_DIFFICULTY: u64 = 2;
pub const FORK_DIFFICULTY: u64 = 1;
/// Peg-out id used by forged acknowledgements.
pub const FORGED_PEGOUT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConcurrencyMode {
    /// At most one active peg-out per operator.
    Base,
    /// Up to `p_max` active peg-outs per operator, started at least `t_sep`
    /// ticks apart.
    Parallel { t_sep: u64, p_max: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub functionaries: u32,
    pub fee_rate: u64,
    pub denomination: Sats,
    pub vmxos: u32,
    pub fee_ppm: u64,
    pub source_confirmations: u64,
    pub secondary_confirmations: u64,
    pub game: GameConfig,
    pub trace_len: usize,
    pub mode: ConcurrencyMode,
    /// Ticks the designated operator has to front before the role moves on.
    pub fronting_deadline: u64,
    pub functionary_funds: Sats,
    pub users: u32,
    pub user_funds: Sats,
    pub censorship: Vec<CensorshipWindow>,
    /// Functionaries that keep their per-VMXO keys instead of deleting them.
    pub leaked: BTreeSet<FunctionaryId>,
}

impl BridgeConfig {
    pub fn new(functionaries: u32, fee_rate: u64, denomination: Sats, vmxos: u32) -> BridgeConfig {
        BridgeConfig {
            functionaries,
            fee_rate,
            denomination,
            vmxos,
            fee_ppm: DEFAULT_FEE_PPM,
            source_confirmations: DEFAULT_SOURCE_CONFIRMATIONS,
            secondary_confirmations: DEFAULT_SECONDARY_CONFIRMATIONS,
            game: GameConfig {
                arity: 4,
                challenge_window: 40,
                watch_threshold: 40,
            },
            trace_len: 16,
            mode: ConcurrencyMode::Base,
            fronting_deadline: 40,
            functionary_funds: 100 * crate::econ::SATS_PER_BTC,
            users: 4,
            user_funds: 0,
            censorship: Vec::new(),
            leaked: BTreeSet::new(),
        }
    }

    pub fn deposit(&self) -> Sats {
        required_deposit(
            &DepositParams::new(self.functionaries as u64, self.fee_rate),
            &CostTable::MEASURED,
        )
    }

    pub fn fronted_amount(&self) -> Sats {
        self.denomination - self.denomination * self.fee_ppm / 1_000_000
    }

    pub fn fee(&self, vbytes: u64) -> Sats {
        vbytes * self.fee_rate
    }

    /// Wallet a user needs for `ops` peg-ins.
    pub fn default_user_funds(&self, ops: u64) -> Sats {
        ops.max(1) * (self.denomination + self.fee(vbytes::LOCKING))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionaryStatus {
    Active,
    Slashed,
    Withdrawn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Functionary {
    pub id: FunctionaryId,
    pub source_key: Digest,
    pub secondary_address: Digest,
    pub deposit: Sats,
    pub status: FunctionaryStatus,
    pub keys: KeyState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeginState {
    Requested,
    Locked,
    Minted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegIn {
    pub id: u32,
    pub user: u32,
    pub amount: Sats,
    pub vmxo: VmxoId,
    pub locking_tx: TxId,
    pub locking_block: Option<BlockId>,
    pub signatures: BTreeSet<FunctionaryId>,
    pub mint_tx: TxId,
    pub mint_block: Option<BlockId>,
    pub state: PeginState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PegoutState {
    Requested,
    Burned,
    Fronted,
    Acked,
    KickedOff,
    Unlocked,
    Invalidated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegOut {
    pub id: u32,
    pub user: u32,
    pub amount: Sats,
    pub burn_tx: TxId,
    pub vmxo: Option<VmxoId>,
    pub designated: Option<FunctionaryId>,
    pub designated_at: Tick,
    pub operator: Option<FunctionaryId>,
    pub fronting_tx: Option<TxId>,
    pub fronted_at: Option<Tick>,
    pub ack_tx: Option<TxId>,
    pub ack_block: Option<BlockId>,
    pub kickoff: Option<TxId>,
    pub state: PegoutState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no VMXO awaiting a peg-in")]
    NoCapacity,
    #[error("amount {amount} is not the packet denomination {denomination}")]
    WrongDenomination { amount: Sats, denomination: Sats },
    #[error("{0} cannot sign")]
    FunctionaryOffline(FunctionaryId),
    #[error("deposit lacks the signature of {0}")]
    MissingSignature(FunctionaryId),
    #[error("{have} confirmations, {need} required")]
    InsufficientConfirmations { have: u64, need: u64 },
    #[error("{0} has no live operator enabler for the linked VMXO")]
    EnablerUnavailable(FunctionaryId),
    #[error("{0} is at its active peg-out limit")]
    ConcurrencyLimit(FunctionaryId),
    #[error("peg-out {0} has no linked VMXO")]
    NotLinked(u32),
    #[error("no losing terminal names {0}")]
    NotTriggered(FunctionaryId),
    #[error("{0} is operating an active peg-out or dispute")]
    ActiveOperation(FunctionaryId),
    #[error("unknown peg-out {0}")]
    UnknownPegout(u32),
    #[error("unknown peg-in {0}")]
    UnknownPegin(u32),
    #[error("peg-out {0} is not in a state that allows this")]
    PegoutState(u32),
    #[error("{0} is not active")]
    NotActive(FunctionaryId),
    #[error("{account} cannot pay {amount}")]
    InsufficientFunds { account: Account, amount: Sats },
    #[error("user {0} holds too little wrapped BTC")]
    InsufficientWrapped(u32),
    #[error("unknown kick-off {0}")]
    UnknownKickoff(TxId),
    #[error("kick-off cannot be unlocked yet: {0}")]
    NotSettled(&'static str),
    #[error("VMXO {0} is not locked")]
    VmxoNotLocked(VmxoId),
    #[error("transaction {0} already confirmed")]
    Duplicate(TxId),
    #[error("dispute channel closed or unknown")]
    UnknownGame,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dispute(#[from] DisputeError),
    #[error(transparent)]
    LightClient(#[from] LightClientError),
    #[error(transparent)]
    Clock(#[from] ClockError),
}

/// Secondary-chain id of the acknowledgement that a peg-out was fronted.
pub fn ack_tx_id(vmxo: VmxoId, operator: FunctionaryId, pegout: u32) -> TxId {
    TxId(
        Digest::builder("pegout-ack")
            .u64(vmxo.0 as u64)
            .u64(operator.0 as u64)
            .u64(pegout as u64)
            .finish(),
    )
}

fn mint_tx_id(pegin: u32) -> TxId {
    TxId(Digest::builder("mint").u64(pegin as u64).finish())
}

fn burn_tx_id(pegout: u32) -> TxId {
    TxId(Digest::builder("burn").u64(pegout as u64).finish())
}

/// What a kick-off asserts: the header chain proves the acknowledgement of
/// `pegout`, fronted by `operator`, for `vmxo`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegoutClaim {
    pub input: CheckChainInput,
    pub vmxo: VmxoId,
    pub operator: FunctionaryId,
    pub pegout: u32,
}

impl ProvableInput for PegoutClaim {
    fn statement(&self) -> Statement {
        Statement::CheckChain
    }
    fn evaluate(&self) -> Result<bool, LightClientError> {
        let chain = check_chain(&self.input)?;
        Ok(chain
            && self.input.pegout_proof.tx_id == ack_tx_id(self.vmxo, self.operator, self.pegout))
    }
    fn commitment(&self) -> Digest {
        Digest::builder("pegout-claim")
            .digest(&self.input.commitment())
            .u64(self.vmxo.0 as u64)
            .u64(self.operator.0 as u64)
            .u64(self.pegout as u64)
            .finish()
    }
    fn first_header(&self) -> Option<BlockId> {
        self.input.first_header()
    }
    fn claimed_difficulty(&self) -> u128 {
        self.input.claimed_difficulty
    }
}

#[derive(Clone, Debug)]
pub struct KickoffRecord {
    pub id: TxId,
    pub operator: FunctionaryId,
    pub vmxo: VmxoId,
    pub pegout: Option<u32>,
    pub claim: PegoutClaim,
    pub artifact: ProofArtifact,
    pub trace: ExecutionTrace,
    pub confirmed_at: Option<Tick>,
}

/// How an honest verifier judges a kick-off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assessment {
    Sound,
    /// The artifact asserts something its inputs do not support.
    FalseClaim,
    /// The inputs hold but the acknowledgement is off the canonical chain.
    NonCanonical,
}

pub type GameKey = (TxId, FunctionaryId);

#[derive(Clone, Debug)]
pub struct GameSlot {
    pub game: DisputeGame,
    /// Verifier's re-execution of the outer statement.
    pub verifier_local: ExecutionTrace,
    /// Outer prover's re-execution of a counter-proof, once submitted.
    pub inner_local: Option<ExecutionTrace>,
    pub channel_state: OutPoint,
    pub moot: bool,
    pub pending: bool,
    pub marker_pending: bool,
    pub terminal_sent: bool,
    steps: u32,
}

impl GameSlot {
    pub fn is_open(&self) -> bool {
        !self.moot && !self.game.is_terminal()
    }

    /// Game whose turn it currently is (inner while a counter-proof runs).
    pub fn active(&self) -> &DisputeGame {
        match (self.game.phase(), self.game.inner()) {
            (Phase::CounterProof, Some(inner)) => inner,
            _ => &self.game,
        }
    }

    /// Local trace matching [`GameSlot::active`].
    pub fn active_local(&self) -> Option<&ExecutionTrace> {
        match self.game.phase() {
            Phase::CounterProof => self.inner_local.as_ref(),
            _ => Some(&self.verifier_local),
        }
    }
}

#[derive(Clone, Debug)]
enum Effect {
    Setup(FunctionaryId),
    Locking {
        pegin: u32,
    },
    Fronting {
        pegout: u32,
        operator: FunctionaryId,
    },
    Kickoff {
        record: Box<KickoffRecord>,
    },
    Move {
        key: GameKey,
        actor: FunctionaryId,
        mv: Move,
    },
    Markers {
        key: GameKey,
    },
    ProverLoses {
        key: GameKey,
    },
    VerifierLoses {
        key: GameKey,
    },
    ForceClose {
        closer: FunctionaryId,
        a: TxId,
        b: TxId,
    },
    Kill {
        loser: FunctionaryId,
        winner: FunctionaryId,
    },
    Unlock {
        operator: FunctionaryId,
        vmxo: VmxoId,
    },
    Withdraw {
        functionary: FunctionaryId,
    },
    Theft {
        vmxo: VmxoId,
    },
}

#[derive(Clone, Debug)]
enum SecondaryTx {
    Mint { pegin: u32 },
    Burn { pegout: u32 },
    Ack { pegout: u32 },
}

#[derive(Clone, Debug)]
enum Item {
    Source { tx: SimTx, effect: Effect },
    Secondary(SecondaryTx),
}

#[derive(Clone, Debug)]
struct Pending {
    seq: u64,
    deliver_at: Tick,
    actor: Account,
    item: Item,
}

struct GraphAccess<'a>(&'a PacketGraph);

impl ChannelAccess for GraphAccess<'_> {
    fn verifier_enabler_live(
        &self,
        vmxo: VmxoId,
        verifier: FunctionaryId,
        prover: FunctionaryId,
    ) -> bool {
        self.0.verifier_enabler_live(vmxo, verifier, prover)
    }
    fn channel_unspent(&self, kickoff: TxId, verifier: FunctionaryId) -> bool {
        match self.0.key_of(&kickoff) {
            Some(TemplateKey::Kickoff(op, v)) => self
                .0
                .channel_outpoint(op, v, verifier)
                .is_some_and(|o| self.0.utxos.contains(&o)),
            _ => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bridge {
    pub config: BridgeConfig,
    pub clock: SimClock,
    pub source: ChainView,
    pub secondary: ChainView,
    pub graph: PacketGraph,
    pub functionaries: Vec<Functionary>,
    pub pegins: Vec<PegIn>,
    pub pegouts: Vec<PegOut>,
    pub kickoffs: BTreeMap<TxId, KickoffRecord>,
    pub games: BTreeMap<GameKey, GameSlot>,
    balances: BTreeMap<Holder, Sats>,
    wrapped: BTreeMap<u32, Sats>,
    confirmed: BTreeMap<TxId, SimTx>,
    secondary_seen: BTreeSet<TxId>,
    mempool: Vec<Pending>,
    next_seq: u64,
    /// Fees each party spent on disputes against each counterparty.
    dispute_costs: BTreeMap<(FunctionaryId, FunctionaryId), Sats>,
    pending_kills: BTreeSet<FunctionaryId>,
    log: EventLog,
}

impl Bridge {
    /// Builds the packet, posts every deposit and signs the setup templates.
    pub fn new(
        config: BridgeConfig,
        roster: Vec<RosterEntry>,
        seed: u64,
        rng: &str,
    ) -> Result<Bridge, ProtocolError> {
        let ids: Vec<FunctionaryId> = (0..config.functionaries).map(FunctionaryId).collect();
        let deposit = config.deposit();
        let mut graph = build_packet_templates(
            &ids,
            config.vmxos,
            config.denomination,
            deposit,
            config.game.challenge_window,
            &CostTable::MEASURED,
        )?;
        for f in &ids {
            graph.sign_setup_templates(*f)?;
        }
        let clock = SimClock::new(config.censorship.clone())?;
        let functionaries = ids
            .iter()
            .map(|f| Functionary {
                id: *f,
                source_key: Digest::builder("source-key").u64(f.0 as u64).finish(),
                secondary_address: Digest::builder("secondary-address")
                    .u64(f.0 as u64)
                    .finish(),
                deposit,
                status: FunctionaryStatus::Active,
                keys: if config.leaked.contains(f) {
                    KeyState::Leaked
                } else {
                    KeyState::Deleted
                },
            })
            .collect();
        let mut balances = BTreeMap::new();
        for f in &ids {
            balances.insert(
                Holder::Wallet(Account::Functionary(*f)),
                config.functionary_funds,
            );
        }
        let users: Vec<(u32, Sats)> = (0..config.users).map(|u| (u, config.user_funds)).collect();
        for (u, funds) in &users {
            balances.insert(Holder::Wallet(Account::User(*u)), *funds);
        }
        let mut bridge = Bridge {
            clock,
            source: ChainView::new(ChainId::Source, 1),
            secondary: ChainView::new(ChainId::Secondary, SECONDARY_DIFFICULTY),
            graph,
            functionaries,
            pegins: Vec::new(),
            pegouts: Vec::new(),
            kickoffs: BTreeMap::new(),
            games: BTreeMap::new(),
            balances,
            wrapped: BTreeMap::new(),
            confirmed: BTreeMap::new(),
            secondary_seen: BTreeSet::new(),
            mempool: Vec::new(),
            next_seq: 0,
            dispute_costs: BTreeMap::new(),
            pending_kills: BTreeSet::new(),
            log: EventLog::default(),
            config,
        };
        bridge.log.push(
            0,
            Body::Roster {
                seed,
                rng: rng.to_string(),
                functionaries: roster,
                users,
                fee_rate: bridge.config.fee_rate,
                fee_ppm: bridge.config.fee_ppm,
                denomination: bridge.config.denomination,
                vmxos: bridge.config.vmxos,
                deposit,
                required_deposit: deposit,
                watch_threshold: bridge.config.game.watch_threshold,
            },
        );
        for f in ids {
            let tx = bridge.graph.setup_tx(f).clone();
            bridge.submit(Account::Functionary(f), tx, Effect::Setup(f));
        }
        bridge.step();
        Ok(bridge)
    }

    pub fn now(&self) -> Tick {
        self.clock.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn balance(&self, holder: Holder) -> Sats {
        self.balances.get(&holder).copied().unwrap_or(0)
    }

    pub fn wallet(&self, account: Account) -> Sats {
        self.balance(Holder::Wallet(account))
    }

    pub fn wrapped(&self, user: u32) -> Sats {
        self.wrapped.get(&user).copied().unwrap_or(0)
    }

    pub fn functionary(&self, f: FunctionaryId) -> &Functionary {
        &self.functionaries[f.0 as usize]
    }

    pub fn is_active(&self, f: FunctionaryId) -> bool {
        self.functionary(f).status == FunctionaryStatus::Active
    }

    pub fn is_confirmed(&self, tx: &TxId) -> bool {
        self.confirmed.contains_key(tx)
    }

    pub fn dispute_costs(&self) -> &BTreeMap<(FunctionaryId, FunctionaryId), Sats> {
        &self.dispute_costs
    }

    fn submit(&mut self, actor: Account, tx: SimTx, effect: Effect) {
        self.enqueue(actor, Item::Source { tx, effect });
    }

    fn enqueue(&mut self, actor: Account, item: Item) {
        let now = self.clock.now;
        let deliver_at = match actor {
            Account::Functionary(f) => self.clock.delivery_tick(f, now),
            Account::User(_) => now,
        };
        self.mempool.push(Pending {
            seq: self.next_seq,
            deliver_at,
            actor,
            item,
        });
        self.next_seq += 1;
    }

    pub fn reject(&mut self, actor: Option<Account>, action: &str, reason: impl ToString) {
        let tick = self.clock.now;
        let reason = reason.to_string();
        ::log::debug!("tick {tick}: {action} by {actor:?} rejected: {reason}");
        self.log.push(
            tick,
            Body::Rejected {
                actor,
                action: action.to_string(),
                reason,
            },
        );
    }

    fn move_funds(&mut self, from: Holder, to: Holder, amount: Sats) -> Result<(), ProtocolError> {
        let have = self.balance(from);
        if have < amount {
            let account = match from {
                Holder::Wallet(a) => a,
                _ => Account::User(u32::MAX),
            };
            return Err(ProtocolError::InsufficientFunds { account, amount });
        }
        *self.balances.entry(from).or_default() -= amount;
        *self.balances.entry(to).or_default() += amount;
        Ok(())
    }

    fn holder_of_spent(&self, op: &OutPoint) -> Option<Holder> {
        match self.graph.key_of(&op.tx) {
            Some(TemplateKey::Locking(v)) if op.index == 0 => Some(Holder::Locked(v)),
            Some(TemplateKey::Setup(f)) if op.index == 0 => Some(Holder::Deposit(f)),
            _ => None,
        }
    }

    fn holder_of_output(&self, tx: &SimTx, o: &SimOutput) -> Option<Holder> {
        match o.kind {
            OutputKind::Locking => match self.graph.key_of(&tx.id) {
                Some(TemplateKey::Locking(v)) => Some(Holder::Locked(v)),
                _ => None,
            },
            OutputKind::DepositOut => match self.graph.key_of(&tx.id) {
                Some(TemplateKey::Setup(f)) => Some(Holder::Deposit(f)),
                _ => None,
            },
            _ => o.payee.map(Holder::Wallet),
        }
    }

    /// Value movements implied by a transaction's inputs and outputs.
    fn transfers_of(&self, tx: &SimTx) -> Vec<Transfer> {
        let mut sources: Vec<(Holder, Sats)> = Vec::new();
        for input in &tx.inputs {
            match input {
                TxInput::Wallet { account, amount } if *amount > 0 => {
                    sources.push((Holder::Wallet(*account), *amount))
                }
                TxInput::Spend(op) => {
                    if let (Some(h), Some(o)) = (self.holder_of_spent(op), self.graph.utxos.get(op))
                    {
                        if o.amount > 0 {
                            sources.push((h, o.amount));
                        }
                    }
                }
                _ => {}
            }
        }
        let mut out = Vec::new();
        let mut si = 0;
        for o in tx.outputs.iter().filter(|o| o.amount > 0) {
            let Some(to) = self.holder_of_output(tx, o) else {
                continue;
            };
            let mut need = o.amount;
            while need > 0 && si < sources.len() {
                let take = need.min(sources[si].1);
                out.push(Transfer {
                    from: sources[si].0,
                    to,
                    amount: take,
                });
                sources[si].1 -= take;
                need -= take;
                if sources[si].1 == 0 {
                    si += 1;
                }
            }
        }
        out
    }

    /// Confirms a source transaction: fee, value transfers, UTXO update and
    /// the log record.
    fn settle_tx(
        &mut self,
        payer: Account,
        tx: &SimTx,
        vmxo: Option<VmxoId>,
        pegout: Option<u32>,
        subject: Option<FunctionaryId>,
        game: Option<GameRef>,
    ) -> Result<(), ProtocolError> {
        if self.confirmed.contains_key(&tx.id) {
            return Err(ProtocolError::Duplicate(tx.id));
        }
        self.graph.utxos.check(tx)?;
        let fee = self.config.fee(tx.vbytes);
        let transfers = self.transfers_of(tx);
        let mut need: BTreeMap<Holder, Sats> = BTreeMap::new();
        *need.entry(Holder::Wallet(payer)).or_default() += fee;
        for t in &transfers {
            *need.entry(t.from).or_default() += t.amount;
        }
        for (h, amount) in &need {
            if self.balance(*h) < *amount {
                let account = match h {
                    Holder::Wallet(a) => *a,
                    _ => payer,
                };
                return Err(ProtocolError::InsufficientFunds {
                    account,
                    amount: *amount,
                });
            }
        }
        self.graph.confirm(tx)?;
        let mut all = vec![Transfer {
            from: Holder::Wallet(payer),
            to: Holder::Fees,
            amount: fee,
        }];
        all.extend(transfers);
        for t in &all {
            self.move_funds(t.from, t.to, t.amount)?;
        }
        self.confirmed.insert(tx.id, tx.clone());
        let tick = self.clock.now;
        self.log.push(
            tick,
            Body::Transaction {
                template: tx.template_kind,
                tx: tx.id,
                payer,
                vbytes: tx.vbytes,
                fee,
                spends: tx.spends().copied().collect(),
                transfers: all,
                vmxo,
                pegout,
                subject,
                game,
            },
        );
        Ok(())
    }

    // ---- peg-in -------------------------------------------------------

    /// Binds a VMXO to the user, collects every functionary's signature on
    /// its Locking and Unlocking templates, applies each functionary's key
    /// policy, and broadcasts the user's deposit.
    pub fn request_pegin(&mut self, user: u32, amount: Sats) -> Result<u32, ProtocolError> {
        let signers: Vec<FunctionaryId> = self.functionaries.iter().map(|f| f.id).collect();
        self.request_pegin_signed_by(user, amount, &signers)
    }

    /// Like [`Bridge::request_pegin`] with only `signers` taking part.
    pub fn request_pegin_signed_by(
        &mut self,
        user: u32,
        amount: Sats,
        signers: &[FunctionaryId],
    ) -> Result<u32, ProtocolError> {
        if amount != self.config.denomination {
            return Err(ProtocolError::WrongDenomination {
                amount,
                denomination: self.config.denomination,
            });
        }
        for f in signers {
            if !self.is_active(*f) {
                return Err(ProtocolError::FunctionaryOffline(*f));
            }
        }
        let vmxo = self
            .graph
            .vmxos
            .iter()
            .find(|v| v.state == VmxoState::AwaitingPegin && v.user.is_none())
            .map(|v| v.id)
            .ok_or(ProtocolError::NoCapacity)?;
        self.graph.bind_pegin(vmxo, user);
        for id in self.graph.binding_templates(vmxo) {
            for f in signers {
                self.graph.sign_template(id, *f)?;
            }
        }
        let complete = self
            .graph
            .binding_templates(vmxo)
            .iter()
            .all(|id| self.graph.is_complete(id));
        if complete {
            for f in signers.to_vec() {
                let state = self.functionary(f).keys;
                match state {
                    KeyState::Deleted => {
                        self.graph.delete_keys(f, vmxo)?;
                    }
                    other => self.graph.set_key_state(f, vmxo, other),
                }
                let tick = self.clock.now;
                self.log.push(
                    tick,
                    Body::KeysSet {
                        vmxo,
                        functionary: f,
                        state,
                    },
                );
            }
        }
        let locking = self.graph.get(TemplateKey::Locking(vmxo))?.clone();
        let id = self.pegins.len() as u32;
        self.pegins.push(PegIn {
            id,
            user,
            amount,
            vmxo,
            locking_tx: locking.id,
            locking_block: None,
            signatures: locking.signatures.clone(),
            mint_tx: mint_tx_id(id),
            mint_block: None,
            state: PeginState::Requested,
        });
        self.submit(Account::User(user), locking, Effect::Locking { pegin: id });
        Ok(id)
    }

    /// Relays a confirmed deposit to the secondary chain for minting.
    pub fn execute_pegin(&mut self, pegin: u32) -> Result<(), ProtocolError> {
        let p = self
            .pegins
            .get(pegin as usize)
            .ok_or(ProtocolError::UnknownPegin(pegin))?;
        if p.state != PeginState::Locked {
            return Err(ProtocolError::InsufficientConfirmations {
                have: 0,
                need: self.config.source_confirmations,
            });
        }
        let have = self.source.tx_confirmations(&p.locking_tx);
        if have < self.config.source_confirmations {
            return Err(ProtocolError::InsufficientConfirmations {
                have,
                need: self.config.source_confirmations,
            });
        }
        let template = self.graph.get(TemplateKey::Locking(p.vmxo))?;
        if let Some(missing) = self
            .graph
            .functionaries
            .iter()
            .find(|f| !template.signatures.contains(f))
        {
            return Err(ProtocolError::MissingSignature(*missing));
        }
        let user = p.user;
        self.enqueue(
            Account::User(user),
            Item::Secondary(SecondaryTx::Mint { pegin }),
        );
        Ok(())
    }

    // ---- peg-out ------------------------------------------------------

    /// Burns wrapped BTC on the secondary chain.
    pub fn request_pegout(&mut self, user: u32) -> Result<u32, ProtocolError> {
        let amount = self.config.denomination;
        let already: Sats = self
            .pegouts
            .iter()
            .filter(|p| p.user == user && p.state == PegoutState::Requested)
            .map(|p| p.amount)
            .sum();
        if self.wrapped(user) < amount + already {
            return Err(ProtocolError::InsufficientWrapped(user));
        }
        let id = self.pegouts.len() as u32;
        self.pegouts.push(PegOut {
            id,
            user,
            amount,
            burn_tx: burn_tx_id(id),
            vmxo: None,
            designated: None,
            designated_at: 0,
            operator: None,
            fronting_tx: None,
            fronted_at: None,
            ack_tx: None,
            ack_block: None,
            kickoff: None,
            state: PegoutState::Requested,
        });
        self.enqueue(
            Account::User(user),
            Item::Secondary(SecondaryTx::Burn { pegout: id }),
        );
        Ok(id)
    }

    /// Number of peg-outs `f` has fronted and not yet unlocked.
    pub fn active_pegouts(&self, f: FunctionaryId) -> usize {
        self.pegouts
            .iter()
            .filter(|p| {
                p.operator == Some(f)
                    && matches!(
                        p.state,
                        PegoutState::Fronted | PegoutState::Acked | PegoutState::KickedOff
                    )
            })
            .count()
    }

    fn concurrency_ok(&self, f: FunctionaryId) -> bool {
        let active = self.active_pegouts(f);
        match self.config.mode {
            ConcurrencyMode::Base => active == 0,
            ConcurrencyMode::Parallel { t_sep, p_max } => {
                let last = self
                    .pegouts
                    .iter()
                    .filter(|p| p.operator == Some(f))
                    .filter_map(|p| p.fronted_at)
                    .max();
                (active as u64) < p_max.max(1) && last.is_none_or(|t| self.clock.now >= t + t_sep)
            }
        }
    }

    /// Operator `f` fronts the peg-out amount (minus fee) to the user.
    pub fn execute_pegout(
        &mut self,
        pegout: u32,
        operator: FunctionaryId,
    ) -> Result<(), ProtocolError> {
        self.check_pegout(pegout, operator)?;
        let p = &self.pegouts[pegout as usize];
        let amount = self.config.fronted_amount();
        let tx = SimTx::new(
            TemplateKind::Fronting,
            vec![TxInput::Wallet {
                account: Account::Functionary(operator),
                amount,
            }],
            vec![SimOutput {
                kind: OutputKind::UserPayout,
                amount,
                condition: crate::txgraph::SpendCondition {
                    predicate: Some(format!("peg-out {pegout}")),
                    ..Default::default()
                },
                payee: Some(Account::User(p.user)),
            }],
            vbytes::FRONTING,
        );
        self.submit(
            Account::Functionary(operator),
            tx,
            Effect::Fronting { pegout, operator },
        );
        Ok(())
    }

    fn check_pegout(&self, pegout: u32, operator: FunctionaryId) -> Result<VmxoId, ProtocolError> {
        let p = self
            .pegouts
            .get(pegout as usize)
            .ok_or(ProtocolError::UnknownPegout(pegout))?;
        if p.state != PegoutState::Burned {
            return Err(ProtocolError::PegoutState(pegout));
        }
        let vmxo = p.vmxo.ok_or(ProtocolError::NotLinked(pegout))?;
        if !self.is_active(operator) {
            return Err(ProtocolError::NotActive(operator));
        }
        if !self.graph.operator_enabler_live(operator, vmxo) {
            return Err(ProtocolError::EnablerUnavailable(operator));
        }
        if !self.concurrency_ok(operator) {
            return Err(ProtocolError::ConcurrencyLimit(operator));
        }
        Ok(vmxo)
    }

    /// Whether `f` may front `pegout` now: the designated operator always,
    /// anyone else only once the designation has lapsed.
    pub fn may_front(&self, pegout: u32, f: FunctionaryId) -> bool {
        let Some(p) = self.pegouts.get(pegout as usize) else {
            return false;
        };
        p.state == PegoutState::Burned
            && p.designated == Some(f)
            && self.check_pegout(pegout, f).is_ok()
    }

    fn eligible_operator(&self, vmxo: VmxoId, start: u32) -> Option<FunctionaryId> {
        let n = self.config.functionaries;
        (0..n)
            .map(|i| FunctionaryId((start + i) % n))
            .find(|f| self.is_active(*f) && self.graph.operator_enabler_live(*f, vmxo))
    }

    fn designate(&mut self, pegout: u32, start: u32) {
        let Some(vmxo) = self.pegouts[pegout as usize].vmxo else {
            return;
        };
        let now = self.clock.now;
        if let Some(op) = self.eligible_operator(vmxo, start) {
            let p = &mut self.pegouts[pegout as usize];
            p.designated = Some(op);
            p.designated_at = now;
            self.log.push(
                now,
                Body::Linked {
                    pegout,
                    vmxo,
                    operator: op,
                },
            );
        }
    }

    fn link_pegouts(&mut self) {
        let denomination = self.config.denomination;
        for i in 0..self.pegouts.len() {
            if self.pegouts[i].state != PegoutState::Burned || self.pegouts[i].vmxo.is_some() {
                continue;
            }
            let taken: BTreeSet<VmxoId> = self.pegouts.iter().filter_map(|p| p.vmxo).collect();
            let candidate = self
                .graph
                .vmxos
                .iter()
                .find(|v| {
                    v.amount == denomination
                        && !taken.contains(&v.id)
                        && matches!(v.state, VmxoState::Locked | VmxoState::KickoffOpen(_))
                        && self
                            .pegins
                            .iter()
                            .any(|p| p.vmxo == v.id && p.state == PeginState::Minted)
                })
                .map(|v| v.id);
            if let Some(v) = candidate {
                self.pegouts[i].vmxo = Some(v);
                self.designate(i as u32, i as u32);
            }
        }
        // Lapsed designations move to the next eligible operator.
        let deadline = self.config.fronting_deadline;
        let now = self.clock.now;
        for i in 0..self.pegouts.len() {
            let p = &self.pegouts[i];
            if p.state != PegoutState::Burned || p.vmxo.is_none() {
                continue;
            }
            let stale = match p.designated {
                Some(f) => {
                    now >= p.designated_at + deadline
                        || !self.is_active(f)
                        || !self.graph.operator_enabler_live(f, p.vmxo.unwrap())
                }
                None => true,
            };
            if stale {
                let start = p.designated.map_or(i as u32, |f| f.0 + 1);
                self.designate(i as u32, start);
            }
        }
    }

    /// Claim an honest operator proves for a fronted and acknowledged
    /// peg-out, over the canonical secondary chain.
    pub fn honest_claim(&self, pegout: u32) -> Result<PegoutClaim, ProtocolError> {
        let p = self
            .pegouts
            .get(pegout as usize)
            .ok_or(ProtocolError::UnknownPegout(pegout))?;
        let (Some(vmxo), Some(op), Some(ack_tx), Some(ack_block)) =
            (p.vmxo, p.operator, p.ack_tx, p.ack_block)
        else {
            return Err(ProtocolError::PegoutState(pegout));
        };
        let pegout_proof = self
            .secondary
            .prove_inclusion(ack_tx, ack_block)
            .expect("ack included");
        self.claim_over(
            vmxo,
            op,
            pegout,
            self.secondary.canonical_tip(),
            pegout_proof,
        )
    }

    /// Claim for a peg-out that never happened: the acknowledgement proof
    /// points at the tip but proves nothing.
    pub fn forged_claim(
        &self,
        operator: FunctionaryId,
        vmxo: VmxoId,
    ) -> Result<PegoutClaim, ProtocolError> {
        let tip = self.secondary.canonical_tip();
        let proof = InclusionProof {
            tx_id: ack_tx_id(vmxo, operator, FORGED_PEGOUT),
            block_id: tip,
            path: Vec::new(),
        };
        self.claim_over(vmxo, operator, FORGED_PEGOUT, tip, proof)
    }

    /// Claim over an arbitrary branch ending at `tip` (used for private
    /// forks).
    pub fn claim_over(
        &self,
        vmxo: VmxoId,
        operator: FunctionaryId,
        pegout: u32,
        tip: BlockId,
        pegout_proof: InclusionProof,
    ) -> Result<PegoutClaim, ProtocolError> {
        let pegin = self
            .pegins
            .iter()
            .find(|p| p.vmxo == vmxo && p.state == PeginState::Minted)
            .ok_or(ProtocolError::VmxoNotLocked(vmxo))?;
        let anchor = pegin.mint_block.expect("minted");
        let locking_block = pegin.locking_block.expect("locked");
        let headers = self
            .secondary
            .branch(&anchor, &tip)
            .ok_or(ProtocolError::VmxoNotLocked(vmxo))?;
        let claimed = headers.iter().map(|h| h.difficulty as u128).sum();
        Ok(PegoutClaim {
            input: CheckChainInput {
                headers,
                pegin_header: self.source.header(&locking_block).unwrap().clone(),
                pegin_proof: self
                    .source
                    .prove_inclusion(pegin.locking_tx, locking_block)
                    .unwrap(),
                pegout_proof,
                claimed_difficulty: claimed,
            },
            vmxo,
            operator,
            pegout,
        })
    }

    /// Anchor block of `vmxo` on the secondary chain (where it was minted).
    pub fn anchor(&self, vmxo: VmxoId) -> Option<BlockId> {
        self.pegins
            .iter()
            .find(|p| p.vmxo == vmxo && p.state == PeginState::Minted)
            .and_then(|p| p.mint_block)
    }

    /// Appends a block to a private secondary-chain branch.
    pub fn mine_fork_block(&mut self, parent: BlockId, txs: Vec<TxId>) -> BlockHeader {
        self.secondary
            .mine_block(parent, txs, FORK_DIFFICULTY)
            .expect("fork parent exists")
    }

    /// Publishes a kick-off. `honest` provers claim the truth; others claim
    /// `true` and commit a trace corrupted at `corruption` when the claim is
    /// false.
    pub fn submit_kickoff(
        &mut self,
        claim: PegoutClaim,
        honest: bool,
        corruption: Option<Corruption>,
    ) -> Result<TxId, ProtocolError> {
        let (op, vmxo) = (claim.operator, claim.vmxo);
        if !self.is_active(op) {
            return Err(ProtocolError::NotActive(op));
        }
        let tx = self.graph.kickoff(op, vmxo)?;
        if self.confirmed.contains_key(&tx.id) {
            return Err(ProtocolError::Duplicate(tx.id));
        }
        if !matches!(
            self.graph.vmxo(vmxo).state,
            VmxoState::Locked | VmxoState::KickoffOpen(_)
        ) {
            return Err(ProtocolError::VmxoNotLocked(vmxo));
        }
        let artifact = ProofArtifact::make(&claim, honest, CostTable::MEASURED.commit_proof)?;
        let len = self.config.trace_len;
        let honest_trace =
            ExecutionTrace::honest(artifact.statement.program_id(), artifact.commitment, len);
        let trace = if artifact.oracle_valid() {
            honest_trace
        } else {
            honest_trace.corrupted(corruption.unwrap_or(Corruption::State(len)))
        };
        let pegout = self
            .pegouts
            .iter()
            .find(|p| p.operator == Some(op) && p.vmxo == Some(vmxo) && p.id == claim.pegout)
            .map(|p| p.id);
        let record = KickoffRecord {
            id: tx.id,
            operator: op,
            vmxo,
            pegout,
            claim,
            artifact,
            trace,
            confirmed_at: None,
        };
        let id = tx.id;
        self.submit(
            Account::Functionary(op),
            tx,
            Effect::Kickoff {
                record: Box::new(record),
            },
        );
        Ok(id)
    }

    /// Honest verifier's judgement of a confirmed kick-off.
    pub fn assess(&self, kickoff: &TxId) -> Option<Assessment> {
        let k = self.kickoffs.get(kickoff)?;
        let truth = k.claim.evaluate().unwrap_or(false);
        if k.artifact.claim != truth {
            return Some(Assessment::FalseClaim);
        }
        if !truth {
            return Some(Assessment::FalseClaim);
        }
        if self
            .secondary
            .is_canonical(&k.claim.input.pegout_proof.block_id)
        {
            Some(Assessment::Sound)
        } else {
            Some(Assessment::NonCanonical)
        }
    }

    /// Counter-proof from the kick-off's anchor to the canonical tip, if it
    /// outweighs the prover's chain.
    pub fn counter_proof(
        &self,
        kickoff: &TxId,
        honest: bool,
    ) -> Option<(ChallengeKind, ExecutionTrace)> {
        let k = self.kickoffs.get(kickoff)?;
        let anchor = k.claim.input.headers.first()?.id();
        let headers = self
            .secondary
            .branch(&anchor, &self.secondary.canonical_tip())?;
        let d2: u128 = headers.iter().map(|h| h.difficulty as u128).sum();
        if !admit_counter_proof(k.claim.input.claimed_difficulty, d2) {
            return None;
        }
        let input = AltChainInput {
            headers,
            pegin_header: k.claim.input.pegin_header.clone(),
            pegin_proof: k.claim.input.pegin_proof.clone(),
            pegout_proof: k.claim.input.pegout_proof.clone(),
            claimed_difficulty: d2,
        };
        let proof = ProofArtifact::make(&input, honest, CostTable::MEASURED.commit_proof).ok()?;
        let len = self.config.trace_len;
        let local = ExecutionTrace::honest(proof.statement.program_id(), proof.commitment, len);
        let trace = if proof.oracle_valid() {
            local.clone()
        } else {
            local.corrupted(Corruption::State(len))
        };
        Some((
            ChallengeKind::AltChain {
                input: Box::new(input),
                proof,
                trace,
            },
            local,
        ))
    }

    // ---- disputes -----------------------------------------------------

    pub fn game(&self, key: &GameKey) -> Option<&GameSlot> {
        self.games.get(key)
    }

    /// Open channels in which `f` is to move next.
    pub fn games_awaiting(&self, f: FunctionaryId) -> Vec<GameKey> {
        self.games
            .iter()
            .filter(|(_, s)| s.is_open() && !s.pending && s.active().party_to_move() == Some(f))
            .map(|(k, _)| *k)
            .collect()
    }

    /// Submits a dispute move by `actor`.
    pub fn submit_move(
        &mut self,
        key: GameKey,
        actor: FunctionaryId,
        mv: Move,
    ) -> Result<(), ProtocolError> {
        let slot = self.games.get_mut(&key).ok_or(ProtocolError::UnknownGame)?;
        if !slot.is_open() || slot.pending {
            return Err(ProtocolError::UnknownGame);
        }
        let kind = move_kind(&mv);
        slot.pending = true;
        slot.steps += 1;
        let (game_prover, game_verifier) = (slot.game.prover, slot.game.verifier);
        let tx = SimTx::new(
            TemplateKind::ChallengeStep,
            vec![TxInput::Spend(slot.channel_state)],
            vec![SimOutput::contract(
                OutputKind::DisputeChannelOut,
                0,
                [game_prover, game_verifier].into_iter().collect(),
            )
            .with_predicate(&format!("{kind:?} #{}", slot.steps))],
            kind.vbytes(&CostTable::MEASURED),
        );
        self.submit(
            Account::Functionary(actor),
            tx,
            Effect::Move { key, actor, mv },
        );
        Ok(())
    }

    /// Mines interval markers on the running watches of a channel.
    pub fn submit_markers(
        &mut self,
        key: GameKey,
        miner: FunctionaryId,
    ) -> Result<(), ProtocolError> {
        let now = self.clock.now;
        let slot = self.games.get_mut(&key).ok_or(ProtocolError::UnknownGame)?;
        if !slot.is_open() || slot.marker_pending {
            return Err(ProtocolError::UnknownGame);
        }
        slot.marker_pending = true;
        let tx = SimTx::new(
            TemplateKind::StopWatchTick,
            vec![],
            vec![SimOutput::contract(
                OutputKind::DisputeChannelOut,
                0,
                [miner].into_iter().collect(),
            )
            .with_predicate(&format!("markers {} {} {now}", key.0, key.1))],
            vbytes::STOPWATCH_TICK,
        );
        self.submit(Account::Functionary(miner), tx, Effect::Markers { key });
        Ok(())
    }

    /// Whether markers for the counterparty's running watch are minable.
    pub fn markers_minable(&self, key: &GameKey, miner: FunctionaryId) -> bool {
        let Some(slot) = self.games.get(key) else {
            return false;
        };
        if !slot.is_open() || slot.marker_pending {
            return false;
        }
        let g = slot.active();
        if matches!(g.phase(), Phase::AwaitChallenge) {
            return false;
        }
        let now = self.clock.now;
        [Role::Prover, Role::Verifier].iter().any(|r| {
            let w = g.watch(*r);
            w.party_under_measure != miner && w.minable_markers(now).iter().any(|d| *d >= 2)
        })
    }

    /// Closes two open kick-offs of one operator.
    pub fn force_close(
        &mut self,
        closer: FunctionaryId,
        a: TxId,
        b: TxId,
    ) -> Result<(), ProtocolError> {
        let op = self
            .kickoffs
            .get(&a)
            .map(|k| k.operator)
            .ok_or(ProtocolError::UnknownKickoff(a))?;
        if !self
            .force_close_candidates()
            .iter()
            .any(|(x, _)| self.kickoffs[x].operator == op)
        {
            return Err(ProtocolError::NotTriggered(op));
        }
        let tx = self.graph.apply_force_close(a, b)?;
        self.submit(
            Account::Functionary(closer),
            tx,
            Effect::ForceClose { closer, a, b },
        );
        Ok(())
    }

    /// Open kick-offs an operator may hold at once.
    pub fn kickoff_limit(&self) -> usize {
        match self.config.mode {
            ConcurrencyMode::Base => 1,
            ConcurrencyMode::Parallel { p_max, .. } => p_max.max(1) as usize,
        }
    }

    /// Pairs of confirmed open kick-offs by operators holding more than
    /// [`Bridge::kickoff_limit`] at once.
    pub fn force_close_candidates(&self) -> Vec<(TxId, TxId)> {
        let mut by_op: BTreeMap<FunctionaryId, Vec<TxId>> = BTreeMap::new();
        for k in self.kickoffs.values() {
            if k.confirmed_at.is_some()
                && self.graph.utxos.contains(&OutPoint { tx: k.id, index: 0 })
            {
                by_op.entry(k.operator).or_default().push(k.id);
            }
        }
        let limit = self.kickoff_limit();
        by_op
            .values()
            .filter(|ids| ids.len() > limit)
            .map(|ids| (ids[0], ids[1]))
            .collect()
    }

    /// Whether the kick-off's channels all closed in the prover's favour
    /// and the challenge window has passed.
    pub fn can_unlock(&self, kickoff: &TxId) -> Result<(), ProtocolError> {
        let k = self
            .kickoffs
            .get(kickoff)
            .ok_or(ProtocolError::UnknownKickoff(*kickoff))?;
        let at = k
            .confirmed_at
            .ok_or(ProtocolError::NotSettled("kick-off unconfirmed"))?;
        if self.clock.now <= at + self.config.game.challenge_window {
            return Err(ProtocolError::NotSettled("challenge window open"));
        }
        if !self.graph.utxos.contains(&OutPoint { tx: k.id, index: 0 }) {
            return Err(ProtocolError::NotSettled("kick-off closed"));
        }
        if !self.graph.operator_enabler_live(k.operator, k.vmxo) {
            return Err(ProtocolError::EnablerUnavailable(k.operator));
        }
        for ((kid, _), slot) in &self.games {
            if kid != kickoff || slot.moot {
                continue;
            }
            match slot.game.outcome() {
                Some(o) if o.winner == k.operator => {}
                Some(_) => {
                    return Err(ProtocolError::NotSettled(
                        "a channel went against the prover",
                    ))
                }
                None => return Err(ProtocolError::NotSettled("a channel is still open")),
            }
        }
        Ok(())
    }

    pub fn submit_unlock(&mut self, kickoff: &TxId) -> Result<(), ProtocolError> {
        self.can_unlock(kickoff)?;
        let k = &self.kickoffs[kickoff];
        let (operator, vmxo) = (k.operator, k.vmxo);
        let tx = self
            .graph
            .get(TemplateKey::Unlocking(operator, vmxo))?
            .clone();
        self.submit(
            Account::Functionary(operator),
            tx,
            Effect::Unlock { operator, vmxo },
        );
        Ok(())
    }

    fn busy(&self, f: FunctionaryId) -> bool {
        self.active_pegouts(f) > 0
            || self.kickoffs.values().any(|k| {
                k.operator == f && self.graph.utxos.contains(&OutPoint { tx: k.id, index: 0 })
            })
            || self
                .games
                .values()
                .any(|s| s.is_open() && (s.game.prover == f || s.game.verifier == f))
    }

    pub fn withdraw_deposit(&mut self, f: FunctionaryId) -> Result<(), ProtocolError> {
        if !self.is_active(f) {
            return Err(ProtocolError::NotActive(f));
        }
        if self.busy(f) {
            return Err(ProtocolError::ActiveOperation(f));
        }
        let setup = self.graph.id_of(TemplateKey::Setup(f)).unwrap();
        let deposit = OutPoint {
            tx: setup,
            index: 0,
        };
        let mut inputs = vec![TxInput::Spend(deposit)];
        inputs.extend(
            self.graph
                .enablers
                .iter()
                .filter(|e| e.owner == f && e.state == EnablerState::Live)
                .map(|e| TxInput::Spend(e.outpoint)),
        );
        let amount = self.graph.utxos.get(&deposit).map_or(0, |o| o.amount);
        let tx = SimTx::new(
            TemplateKind::Withdrawal,
            inputs,
            vec![SimOutput::pay(
                OutputKind::RewardOut,
                amount,
                Account::Functionary(f),
            )],
            vbytes::WITHDRAWAL,
        );
        self.submit(
            Account::Functionary(f),
            tx,
            Effect::Withdraw { functionary: f },
        );
        Ok(())
    }

    /// Ad-hoc spend of a VMXO by `thief` using every functionary's key.
    pub fn attempt_theft(
        &mut self,
        thief: FunctionaryId,
        vmxo: VmxoId,
    ) -> Result<(), ProtocolError> {
        match self.graph.attempt_theft(vmxo, Account::Functionary(thief)) {
            Ok(tx) => {
                self.submit(Account::Functionary(thief), tx, Effect::Theft { vmxo });
                Ok(())
            }
            Err(e) => {
                self.reject(Some(Account::Functionary(thief)), "theft", &e);
                Err(e.into())
            }
        }
    }

    // ---- block production -------------------------------------------

    /// Mines one block per chain from delivered transactions, applies their
    /// effects, advances deadlines, then moves the clock forward.
    pub fn step(&mut self) {
        let now = self.clock.now;
        let (mut due, rest): (Vec<Pending>, Vec<Pending>) = std::mem::take(&mut self.mempool)
            .into_iter()
            .partition(|p| p.deliver_at <= now);
        self.mempool = rest;
        due.sort_by_key(|p| (p.deliver_at, actor_rank(&p.actor), p.seq));

        let mut source_ids = Vec::new();
        let mut secondary = Vec::new();
        for p in due {
            match p.item {
                Item::Source { tx, effect } => {
                    if self.include(p.actor, &tx, effect) {
                        source_ids.push(tx.id);
                    }
                }
                Item::Secondary(s) => secondary.push((p.actor, s)),
            }
        }
        let block = self.source.extend_tip(source_ids.clone(), 1).id();
        for id in &source_ids {
            self.on_source_block(id, block);
        }

        let mut s_ids = Vec::new();
        let mut s_effects = Vec::new();
        for (actor, s) in secondary {
            if let Some(id) = self.validate_secondary(actor, &s) {
                if self.secondary_seen.insert(id) {
                    s_ids.push(id);
                    s_effects.push(s);
                }
            }
        }
        let s_block = self.secondary.extend_tip(s_ids, SECONDARY_DIFFICULTY).id();
        for s in s_effects {
            self.apply_secondary(s, s_block);
        }

        self.poll_games();
        self.relay_pegins();
        self.link_pegouts();
        self.clock.advance();
    }

    fn on_source_block(&mut self, id: &TxId, block: BlockId) {
        if let Some(p) = self.pegins.iter_mut().find(|p| p.locking_tx == *id) {
            p.locking_block = Some(block);
        }
    }

    fn relay_pegins(&mut self) {
        for i in 0..self.pegins.len() {
            let p = &self.pegins[i];
            if p.state != PeginState::Locked || self.secondary_seen.contains(&p.mint_tx) {
                continue;
            }
            if self.mempool.iter().any(|m| matches!(m.item, Item::Secondary(SecondaryTx::Mint { pegin }) if pegin == i as u32)) {
                continue;
            }
            match self.execute_pegin(i as u32) {
                Ok(()) | Err(ProtocolError::InsufficientConfirmations { .. }) => {}
                Err(e) => {
                    let user = self.pegins[i].user;
                    self.pegins[i].state = PeginState::Rejected;
                    self.reject(Some(Account::User(user)), "mint", &e);
                }
            }
        }
    }

    fn validate_secondary(&mut self, actor: Account, s: &SecondaryTx) -> Option<TxId> {
        match *s {
            SecondaryTx::Mint { pegin } => Some(self.pegins[pegin as usize].mint_tx),
            SecondaryTx::Burn { pegout } => {
                let p = &self.pegouts[pegout as usize];
                if self.wrapped(p.user) < p.amount {
                    self.reject(
                        Some(actor),
                        "burn",
                        ProtocolError::InsufficientWrapped(p.user),
                    );
                    return None;
                }
                Some(p.burn_tx)
            }
            SecondaryTx::Ack { pegout } => self.pegouts[pegout as usize].ack_tx,
        }
    }

    fn apply_secondary(&mut self, s: SecondaryTx, block: BlockId) {
        let now = self.clock.now;
        match s {
            SecondaryTx::Mint { pegin } => {
                let p = &mut self.pegins[pegin as usize];
                p.state = PeginState::Minted;
                p.mint_block = Some(block);
                let (user, vmxo, amount) = (p.user, p.vmxo, p.amount);
                *self.wrapped.entry(user).or_default() += amount;
                self.graph.vmxo_mut(vmxo).state = VmxoState::Locked;
                self.log.push(now, Body::Minted { user, vmxo, amount });
            }
            SecondaryTx::Burn { pegout } => {
                let p = &mut self.pegouts[pegout as usize];
                p.state = PegoutState::Burned;
                let (user, amount) = (p.user, p.amount);
                *self.wrapped.entry(user).or_default() -= amount;
                self.log.push(
                    now,
                    Body::Burned {
                        user,
                        pegout,
                        amount,
                    },
                );
            }
            SecondaryTx::Ack { pegout } => {
                let p = &mut self.pegouts[pegout as usize];
                p.ack_block = Some(block);
                p.state = PegoutState::Acked;
                let (vmxo, operator) = (p.vmxo.unwrap(), p.operator.unwrap());
                self.log.push(
                    now,
                    Body::Acked {
                        pegout,
                        vmxo,
                        operator,
                        block,
                    },
                );
            }
        }
    }

    /// Validates and applies one delivered source transaction. Returns
    /// whether it made it into the block.
    fn include(&mut self, actor: Account, tx: &SimTx, effect: Effect) -> bool {
        let action = format!("{:?}", tx.template_kind);
        match self.apply_effect(actor, tx, effect) {
            Ok(()) => true,
            Err(e) => {
                self.reject(Some(actor), &action, e);
                false
            }
        }
    }

    fn apply_effect(
        &mut self,
        actor: Account,
        tx: &SimTx,
        effect: Effect,
    ) -> Result<(), ProtocolError> {
        let now = self.clock.now;
        match effect {
            Effect::Setup(f) => self.settle_tx(actor, tx, None, None, Some(f), None),
            Effect::Locking { pegin } => {
                let vmxo = self.pegins[pegin as usize].vmxo;
                self.settle_tx(actor, tx, Some(vmxo), None, None, None)?;
                self.pegins[pegin as usize].state = PeginState::Locked;
                Ok(())
            }
            Effect::Fronting { pegout, operator } => {
                let vmxo = self.check_pegout(pegout, operator)?;
                self.settle_tx(actor, tx, Some(vmxo), Some(pegout), Some(operator), None)?;
                let p = &mut self.pegouts[pegout as usize];
                p.operator = Some(operator);
                p.fronting_tx = Some(tx.id);
                p.fronted_at = Some(now);
                p.state = PegoutState::Fronted;
                p.ack_tx = Some(ack_tx_id(vmxo, operator, pegout));
                self.enqueue(actor, Item::Secondary(SecondaryTx::Ack { pegout }));
                Ok(())
            }
            Effect::Kickoff { record } => {
                let (op, vmxo) = (record.operator, record.vmxo);
                if !self.is_active(op) {
                    return Err(ProtocolError::NotActive(op));
                }
                if !self.graph.operator_enabler_live(op, vmxo) {
                    return Err(ProtocolError::EnablerUnavailable(op));
                }
                if !matches!(
                    self.graph.vmxo(vmxo).state,
                    VmxoState::Locked | VmxoState::KickoffOpen(_)
                ) {
                    return Err(ProtocolError::VmxoNotLocked(vmxo));
                }
                self.settle_tx(actor, tx, Some(vmxo), record.pegout, Some(op), None)?;
                if let Some(pid) = record.pegout {
                    let p = &mut self.pegouts[pid as usize];
                    p.kickoff = Some(tx.id);
                    p.state = PegoutState::KickedOff;
                }
                let mut record = *record;
                record.confirmed_at = Some(now);
                self.open_games(&record);
                self.kickoffs.insert(record.id, record);
                Ok(())
            }
            Effect::Move {
                key,
                actor: mover,
                mv,
            } => self.apply_move(actor, tx, key, mover, mv),
            Effect::Markers { key } => {
                let slot = self.games.get_mut(&key).ok_or(ProtocolError::UnknownGame)?;
                slot.marker_pending = false;
                if !slot.is_open() {
                    return Err(ProtocolError::UnknownGame);
                }
                let mined = slot.game.mine_markers(now);
                if mined.is_empty() {
                    return Err(ProtocolError::Dispute(DisputeError::WrongPhase(
                        slot.game.phase().clone(),
                    )));
                }
                let mut tx = tx.clone();
                tx.vbytes = vbytes::STOPWATCH_TICK * mined.len() as u64;
                tx.recompute_id();
                let game = self.game_ref(&key);
                self.settle_tx(actor, &tx, None, None, None, Some(game))?;
                self.charge_dispute(actor, &key, self.config.fee(tx.vbytes));
                Ok(())
            }
            Effect::ProverLoses { key } => {
                let slot = &self.games[&key];
                let (prover, vmxo) = (slot.game.prover, slot.game.vmxo);
                let game = self.game_ref(&key);
                self.settle_tx(actor, tx, Some(vmxo), None, Some(prover), Some(game))?;
                self.charge_dispute(actor, &key, self.config.fee(tx.vbytes));
                self.moot_kickoff_games(&key.0, Some(key.1));
                self.queue_kill(prover, account_id(actor));
                Ok(())
            }
            Effect::VerifierLoses { key } => {
                let slot = &self.games[&key];
                let (verifier, vmxo) = (slot.game.verifier, slot.game.vmxo);
                let game = self.game_ref(&key);
                self.settle_tx(actor, tx, Some(vmxo), None, Some(verifier), Some(game))?;
                self.charge_dispute(actor, &key, self.config.fee(tx.vbytes));
                self.queue_kill(verifier, account_id(actor));
                Ok(())
            }
            Effect::ForceClose { closer, a, b } => {
                let op = self
                    .kickoffs
                    .get(&a)
                    .map(|k| k.operator)
                    .ok_or(ProtocolError::UnknownKickoff(a))?;
                self.settle_tx(actor, tx, None, None, Some(op), None)?;
                *self.dispute_costs.entry((closer, op)).or_default() += self.config.fee(tx.vbytes);
                self.moot_kickoff_games(&a, None);
                self.moot_kickoff_games(&b, None);
                self.queue_kill(op, closer);
                Ok(())
            }
            Effect::Kill { loser, winner } => self.apply_kill(actor, loser, winner),
            Effect::Unlock { operator, vmxo } => {
                let kickoff = self
                    .graph
                    .id_of(TemplateKey::Kickoff(operator, vmxo))
                    .unwrap();
                self.can_unlock(&kickoff)?;
                let pegout = self.kickoffs[&kickoff].pegout;
                self.settle_tx(actor, tx, Some(vmxo), pegout, Some(operator), None)?;
                if let Some(pid) = pegout {
                    self.pegouts[pid as usize].state = PegoutState::Unlocked;
                }
                Ok(())
            }
            Effect::Withdraw { functionary } => {
                if self.busy(functionary) || !self.is_active(functionary) {
                    return Err(ProtocolError::ActiveOperation(functionary));
                }
                self.settle_tx(actor, tx, None, None, Some(functionary), None)?;
                self.functionaries[functionary.0 as usize].status = FunctionaryStatus::Withdrawn;
                self.log.push(now, Body::Withdrawn { functionary });
                Ok(())
            }
            Effect::Theft { vmxo } => {
                // Keys may have been deleted since broadcast.
                self.graph.attempt_theft(vmxo, actor)?;
                self.settle_tx(actor, tx, Some(vmxo), None, None, None)
            }
        }
    }

    fn game_ref(&self, key: &GameKey) -> GameRef {
        GameRef {
            kickoff: key.0,
            verifier: key.1,
            nested: false,
        }
    }

    fn charge_dispute(&mut self, payer: Account, key: &GameKey, fee: Sats) {
        let Account::Functionary(p) = payer else {
            return;
        };
        let slot = &self.games[key];
        let against = if slot.game.prover == p {
            slot.game.verifier
        } else {
            slot.game.prover
        };
        *self.dispute_costs.entry((p, against)).or_default() += fee;
    }

    fn open_games(&mut self, k: &KickoffRecord) {
        let now = self.clock.now;
        let verifiers: Vec<FunctionaryId> = self
            .functionaries
            .iter()
            .filter(|f| f.id != k.operator && f.status == FunctionaryStatus::Active)
            .map(|f| f.id)
            .collect();
        for v in verifiers {
            let params = OpenParams {
                kickoff: k.id,
                vmxo: k.vmxo,
                prover: k.operator,
                verifier: v,
                proof: k.artifact.clone(),
                prover_trace: k.trace.clone(),
                input: &k.claim,
                config: self.config.game,
                now,
            };
            let game = match DisputeGame::open(params, &GraphAccess(&self.graph)) {
                Ok(g) => g,
                Err(e) => {
                    self.reject(Some(Account::Functionary(v)), "open-game", e);
                    continue;
                }
            };
            let local = ExecutionTrace::honest(
                k.artifact.statement.program_id(),
                k.artifact.commitment,
                self.config.trace_len,
            );
            let channel_state = self.graph.channel_outpoint(k.operator, k.vmxo, v).unwrap();
            let key = (k.id, v);
            self.log.push(
                now,
                Body::GameOpened {
                    game: self.game_ref(&key),
                    prover: k.operator,
                    verifier: v,
                },
            );
            self.games.insert(
                key,
                GameSlot {
                    game,
                    verifier_local: local,
                    inner_local: None,
                    channel_state,
                    moot: false,
                    pending: false,
                    marker_pending: false,
                    terminal_sent: false,
                    steps: 0,
                },
            );
        }
    }

    fn apply_move(
        &mut self,
        actor: Account,
        tx: &SimTx,
        key: GameKey,
        mover: FunctionaryId,
        mv: Move,
    ) -> Result<(), ProtocolError> {
        let now = self.clock.now;
        let slot = self.games.get_mut(&key).ok_or(ProtocolError::UnknownGame)?;
        slot.pending = false;
        if slot.moot {
            return Err(ProtocolError::UnknownGame);
        }
        self.graph.utxos.check(tx)?;
        let outcomes = slot.game.poll(now);
        if !outcomes.is_empty() || slot.game.is_terminal() {
            self.handle_outcomes(key, outcomes);
            self.log_resumes(key);
            let slot = self.games.get_mut(&key).unwrap();
            if slot.game.is_terminal() {
                return Err(DisputeError::TimeoutExpired.into());
            }
        }
        let slot = self.games.get_mut(&key).unwrap();
        let nested_before = matches!(slot.game.phase(), Phase::CounterProof);
        let inner_local = match &mv {
            Move::Challenge(ChallengeKind::AltChain { proof, .. }) => Some(ExecutionTrace::honest(
                proof.statement.program_id(),
                proof.commitment,
                self.config.trace_len,
            )),
            _ => None,
        };
        let result = slot.game.apply(now, mover, mv);
        let step = match result {
            Ok(step) => step,
            Err(e) => return Err(e.into()),
        };
        if inner_local.is_some() {
            slot.inner_local = inner_local;
        }
        let nested = nested_before;
        let game = GameRef {
            kickoff: key.0,
            verifier: key.1,
            nested,
        };
        self.settle_tx(
            actor,
            tx,
            Some(self.games[&key].game.vmxo),
            None,
            None,
            Some(game),
        )?;
        self.charge_dispute(actor, &key, self.config.fee(tx.vbytes));
        let slot = self.games.get_mut(&key).unwrap();
        slot.channel_state = tx.outpoint(0);
        if let Some(record) = &step.record {
            self.log.push(
                now,
                Body::Move {
                    game,
                    by: record.by,
                    kind: record.kind,
                },
            );
            if record.kind == MoveKind::CounterProof {
                let inner = self.games[&key].game.inner().unwrap();
                let (p, v) = (inner.prover, inner.verifier);
                self.log.push(
                    now,
                    Body::GameOpened {
                        game: GameRef {
                            nested: true,
                            ..game
                        },
                        prover: p,
                        verifier: v,
                    },
                );
            }
        }
        if let Some((party, interval)) = step.stopped {
            let stop = SimTx::new(
                TemplateKind::StopWatchStop,
                vec![],
                vec![SimOutput::contract(
                    OutputKind::DisputeChannelOut,
                    0,
                    [party].into_iter().collect(),
                )
                .with_predicate(&format!("stop {} {} {}", tx.id, party, interval))],
                vbytes::STOPWATCH_STOP,
            );
            self.settle_tx(actor, &stop, None, None, None, Some(game))?;
            self.charge_dispute(actor, &key, self.config.fee(stop.vbytes));
            self.log.push(
                now,
                Body::WatchStop {
                    game,
                    party,
                    interval,
                },
            );
        }
        self.handle_outcomes(key, step.outcomes);
        self.log_resumes(key);
        Ok(())
    }

    /// Logs the watch restart after a defeated counter-proof.
    fn log_resumes(&mut self, key: GameKey) {
        let now = self.clock.now;
        let slot = &self.games[&key];
        if let Some(m) = slot.game.moves().last() {
            if m.kind == MoveKind::Resume && m.tick == now {
                let game = self.game_ref(&key);
                self.log.push(
                    now,
                    Body::Move {
                        game,
                        by: None,
                        kind: MoveKind::Resume,
                    },
                );
            }
        }
    }

    fn handle_outcomes(&mut self, key: GameKey, outcomes: Vec<Outcome>) {
        let now = self.clock.now;
        for o in outcomes {
            let slot = &self.games[&key];
            let (prover, verifier) = if o.nested {
                let inner = slot.game.inner().unwrap();
                (inner.prover, inner.verifier)
            } else {
                (slot.game.prover, slot.game.verifier)
            };
            let game = GameRef {
                kickoff: key.0,
                verifier: key.1,
                nested: o.nested,
            };
            self.log.push(
                now,
                Body::Outcome {
                    game,
                    prover,
                    verifier,
                    winner: o.winner,
                    loser: o.loser,
                    reason: o.reason,
                    threshold: self.config.game.watch_threshold,
                },
            );
            if !o.is_penalizing() {
                continue;
            }
            let (outer_prover, outer_verifier, vmxo, sent) = (
                slot.game.prover,
                slot.game.verifier,
                slot.game.vmxo,
                slot.terminal_sent,
            );
            let terminal = if !o.nested {
                Some(o.loser == outer_prover)
            } else if o.loser == outer_verifier {
                Some(false)
            } else {
                None
            };
            let Some(prover_lost) = terminal else {
                continue;
            };
            if sent {
                continue;
            }
            self.games.get_mut(&key).unwrap().terminal_sent = true;
            if prover_lost {
                let tx = self
                    .graph
                    .get(TemplateKey::ProverLoses {
                        prover: outer_prover,
                        vmxo,
                        verifier: outer_verifier,
                    })
                    .unwrap()
                    .clone();
                self.submit(
                    Account::Functionary(outer_verifier),
                    tx,
                    Effect::ProverLoses { key },
                );
            } else {
                let tx = self
                    .graph
                    .get(TemplateKey::VerifierLoses {
                        prover: outer_prover,
                        vmxo,
                        verifier: outer_verifier,
                    })
                    .unwrap()
                    .clone();
                self.submit(
                    Account::Functionary(outer_prover),
                    tx,
                    Effect::VerifierLoses { key },
                );
            }
        }
    }

    fn poll_games(&mut self) {
        let now = self.clock.now;
        let keys: Vec<GameKey> = self
            .games
            .iter()
            .filter(|(_, s)| s.is_open())
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            let outcomes = self.games.get_mut(&key).unwrap().game.poll(now);
            if !outcomes.is_empty() {
                self.handle_outcomes(key, outcomes);
                self.log_resumes(key);
            }
        }
    }

    fn moot_kickoff_games(&mut self, kickoff: &TxId, except: Option<FunctionaryId>) {
        let now = self.clock.now;
        let keys: Vec<GameKey> = self
            .games
            .iter()
            .filter(|((k, v), s)| {
                k == kickoff && Some(*v) != except && !s.moot && !s.game.is_terminal()
            })
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            self.games.get_mut(&key).unwrap().moot = true;
            let game = self.game_ref(&key);
            self.log.push(now, Body::Moot { game });
        }
    }

    fn queue_kill(&mut self, loser: FunctionaryId, winner: FunctionaryId) {
        if self.functionary(loser).status == FunctionaryStatus::Slashed
            || !self.pending_kills.insert(loser)
        {
            return;
        }
        let tx = match self.graph.burn_enablers(loser, &[]) {
            Ok(tx) => tx,
            Err(_) => return,
        };
        self.submit(
            Account::Functionary(winner),
            tx,
            Effect::Kill { loser, winner },
        );
    }

    fn apply_kill(
        &mut self,
        actor: Account,
        loser: FunctionaryId,
        winner: FunctionaryId,
    ) -> Result<(), ProtocolError> {
        let now = self.clock.now;
        self.pending_kills.remove(&loser);
        if self.functionary(loser).status == FunctionaryStatus::Slashed {
            return Err(ProtocolError::NotTriggered(loser));
        }
        let setup = self.graph.id_of(TemplateKey::Setup(loser)).unwrap();
        let available = self
            .graph
            .utxos
            .get(&OutPoint {
                tx: setup,
                index: 0,
            })
            .map_or(0, |o| o.amount);
        let probe = self.graph.burn_enablers(loser, &[])?;
        let kill_fee = self.config.fee(probe.vbytes);
        // Reimburse every challenger's costs against the loser, winner last.
        let mut claims: BTreeMap<FunctionaryId, Sats> = BTreeMap::new();
        for ((payer, against), cost) in &self.dispute_costs {
            if *against == loser && *payer != loser {
                *claims.entry(*payer).or_default() += cost;
            }
        }
        *claims.entry(winner).or_default() += kill_fee;
        let mut payouts: Vec<(Account, Sats)> = Vec::new();
        let mut left = available;
        for (f, c) in &claims {
            if *f == winner {
                continue;
            }
            let a = (*c).min(left);
            if a > 0 {
                payouts.push((Account::Functionary(*f), a));
                left -= a;
            }
        }
        if left > 0 {
            payouts.push((Account::Functionary(winner), left));
        }
        let challengers: Vec<FunctionaryId> = claims.keys().copied().collect();
        let share = available / challengers.len().max(1) as u64;
        let mut shared_model: Vec<(Account, Sats)> = challengers
            .iter()
            .map(|f| (Account::Functionary(*f), share))
            .collect();
        if let Some(first) = shared_model.first_mut() {
            first.1 += available - share * challengers.len().max(1) as u64;
        }
        let tx = self.graph.burn_enablers(loser, &payouts)?;
        self.settle_tx(actor, &tx, None, None, Some(loser), None)?;
        self.functionaries[loser.0 as usize].status = FunctionaryStatus::Slashed;
        ::log::info!("tick {now}: {loser} slashed, {winner} claims its deposit");
        self.log.push(
            now,
            Body::Slashed {
                loser,
                winner,
                payouts,
                shared_model,
            },
        );
        // In-flight operations of the loser.
        for i in 0..self.pegouts.len() {
            let p = &self.pegouts[i];
            if p.operator == Some(loser)
                && matches!(
                    p.state,
                    PegoutState::Fronted | PegoutState::Acked | PegoutState::KickedOff
                )
            {
                let vmxo = p.vmxo.unwrap();
                self.pegouts[i].state = PegoutState::Invalidated;
                self.graph.vmxo_mut(vmxo).state = VmxoState::Invalidated;
                self.log.push(
                    now,
                    Body::Invalidated {
                        vmxo,
                        pegout: i as u32,
                        operator: loser,
                    },
                );
            }
        }
        let keys: Vec<GameKey> = self
            .games
            .iter()
            .filter(|(_, s)| s.is_open() && (s.game.prover == loser || s.game.verifier == loser))
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            self.games.get_mut(&key).unwrap().moot = true;
            let game = self.game_ref(&key);
            self.log.push(now, Body::Moot { game });
        }
        Ok(())
    }

    /// True when nothing is pending: empty mempool, settled peg-ins, every
    /// peg-out finished, every channel closed.
    pub fn is_quiescent(&self) -> bool {
        self.mempool.is_empty()
            && self.pending_kills.is_empty()
            && self
                .pegins
                .iter()
                .all(|p| matches!(p.state, PeginState::Minted | PeginState::Rejected))
            && self
                .pegouts
                .iter()
                .all(|p| matches!(p.state, PegoutState::Unlocked | PegoutState::Invalidated))
            && self.games.values().all(|s| !s.is_open())
            && self.kickoffs.values().all(|k| {
                !self.graph.utxos.contains(&OutPoint { tx: k.id, index: 0 })
                    || self.kickoff_stuck(k)
            })
    }

    /// An open kick-off nobody can advance (its operator is excluded).
    fn kickoff_stuck(&self, k: &KickoffRecord) -> bool {
        !self.is_active(k.operator) || !self.graph.operator_enabler_live(k.operator, k.vmxo)
    }

    pub fn pending_transactions(&self) -> usize {
        self.mempool.len()
    }

    /// Appends the closing balances and returns the log.
    pub fn finish(mut self) -> EventLog {
        let now = self.clock.now;
        let balances = self.balances.iter().map(|(h, s)| (*h, *s)).collect();
        let wrapped = self.wrapped.iter().map(|(u, s)| (*u, *s)).collect();
        self.log.push(now, Body::Final { balances, wrapped });
        self.log
    }
}

fn account_id(a: Account) -> FunctionaryId {
    match a {
        Account::Functionary(f) => f,
        Account::User(_) => FunctionaryId(u32::MAX),
    }
}

/// Same-block ordering: functionaries by id, then users.
fn actor_rank(a: &Account) -> (u8, u32) {
    match a {
        Account::Functionary(f) => (0, f.0),
        Account::User(u) => (1, *u),
    }
}

fn move_kind(mv: &Move) -> MoveKind {
    match mv {
        Move::Challenge(ChallengeKind::Execution) => MoveKind::Challenge,
        Move::Challenge(ChallengeKind::AltChain { .. }) => MoveKind::CounterProof,
        Move::CommitHashes => MoveKind::CommitHashes,
        Move::Choose(_) => MoveKind::Choose,
        Move::RevealStep => MoveKind::RevealStep,
        Move::DisputeRead => MoveKind::DisputeRead,
        Move::PublishReadTrace => MoveKind::PublishReadTrace,
        Move::ExecuteLeaf => MoveKind::ExecuteLeaf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bridge() -> Bridge {
        let mut c = BridgeConfig::new(3, 5, 1_000_000, 2);
        c.users = 1;
        c.user_funds = c.default_user_funds(2);
        let roster = (0..3)
            .map(|i| RosterEntry {
                id: FunctionaryId(i),
                honest: true,
                strategy: "honest".into(),
                funds: c.functionary_funds,
            })
            .collect();
        Bridge::new(c, roster, 0, "test").unwrap()
    }

    #[test]
    fn slashing_twice_is_a_no_op() {
        let mut b = bridge();
        b.queue_kill(FunctionaryId(1), FunctionaryId(0));
        b.queue_kill(FunctionaryId(1), FunctionaryId(2));
        for _ in 0..3 {
            b.step();
        }
        assert_eq!(
            b.functionary(FunctionaryId(1)).status,
            FunctionaryStatus::Slashed
        );
        let balances = b.balances.clone();
        let events = b.log().events().len();
        b.queue_kill(FunctionaryId(1), FunctionaryId(2));
        assert!(b.mempool.is_empty());
        assert!(matches!(
            b.apply_kill(
                Account::Functionary(FunctionaryId(2)),
                FunctionaryId(1),
                FunctionaryId(2)
            ),
            Err(ProtocolError::NotTriggered(_))
        ));
        assert_eq!(b.balances, balances);
        assert_eq!(b.log().events().len(), events);
        let slashes = b
            .log()
            .events()
            .iter()
            .filter(|e| matches!(e.body, Body::Slashed { .. }))
            .count();
        assert_eq!(slashes, 1);
    }
}
