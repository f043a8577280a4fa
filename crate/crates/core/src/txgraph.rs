//! Presigned transaction graph of a packet.
//!
//! Templates commit to their contract inputs and outputs; the id is a digest
//! of the canonical serialization (template kind, inputs, outputs, vbytes),
//! so rewriting any ancestor changes every descendant's id and discards its
//! signatures. Fees are sponsored: executed transactions name a payer who is
//! debited `vbytes × fee rate` outside the template, so template inputs and
//! outputs balance on their own.
//!
//! Signatures are sets of functionary ids. Key deletion is a permission flag
//! per (functionary, VMXO).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::econ::CostTable;
use crate::ids::{FunctionaryId, Sats, TxId, VmxoId};

/// Nominal sizes for transactions the cost table does not cover.
pub mod vbytes {
    pub const SETUP: u64 = 150;
    pub const LOCKING: u64 = 200;
    pub const UNLOCKING: u64 = 300;
    pub const FRONTING: u64 = 150;
    pub const FORCE_CLOSE: u64 = 250;
    pub const PROVER_LOSES: u64 = 200;
    pub const VERIFIER_LOSES: u64 = 200;
    pub const KILL_BASE: u64 = 150;
    pub const KILL_PER_INPUT: u64 = 40;
    pub const STOPWATCH_TICK: u64 = 120;
    pub const STOPWATCH_STOP: u64 = 150;
    pub const WITHDRAWAL: u64 = 200;
    pub const THEFT: u64 = 200;
}

/// Holders of spendable value outside contract outputs.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Account {
    User(u32),
    Functionary(FunctionaryId),
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::User(u) => write!(f, "u{u}"),
            Account::Functionary(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum OutputKind {
    Locking,
    OpenKickoff,
    EnablerOut,
    DepositOut,
    DisputeChannelOut,
    RewardOut,
    UserPayout,
}

impl OutputKind {
    /// Contract outputs stay in the UTXO set; the rest pay straight into a
    /// wallet.
    pub fn is_contract(self) -> bool {
        !matches!(self, OutputKind::RewardOut | OutputKind::UserPayout)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum TemplateKind {
    Setup,
    Locking,
    Kickoff,
    Unlocking,
    ChallengeStep,
    ProverLoses,
    VerifierLoses,
    KillEnablers,
    ForceClose,
    StopWatchTick,
    StopWatchStop,
    Fronting,
    Withdrawal,
    Theft,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 14] = [
        TemplateKind::Setup,
        TemplateKind::Locking,
        TemplateKind::Kickoff,
        TemplateKind::Unlocking,
        TemplateKind::ChallengeStep,
        TemplateKind::ProverLoses,
        TemplateKind::VerifierLoses,
        TemplateKind::KillEnablers,
        TemplateKind::ForceClose,
        TemplateKind::StopWatchTick,
        TemplateKind::StopWatchStop,
        TemplateKind::Fronting,
        TemplateKind::Withdrawal,
        TemplateKind::Theft,
    ];
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct OutPoint {
    pub tx: TxId,
    pub index: u32,
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tx, self.index)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum TxInput {
    Spend(OutPoint),
    /// Funds drawn from a wallet balance.
    Wallet {
        account: Account,
        amount: Sats,
    },
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct SpendCondition {
    pub signers: BTreeSet<FunctionaryId>,
    pub timelock: Option<u64>,
    pub predicate: Option<String>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SimOutput {
    pub kind: OutputKind,
    pub amount: Sats,
    pub condition: SpendCondition,
    /// Wallet credited by a non-contract output.
    pub payee: Option<Account>,
}

impl SimOutput {
    pub fn contract(kind: OutputKind, amount: Sats, signers: BTreeSet<FunctionaryId>) -> SimOutput {
        SimOutput {
            kind,
            amount,
            condition: SpendCondition {
                signers,
                timelock: None,
                predicate: None,
            },
            payee: None,
        }
    }

    pub fn pay(kind: OutputKind, amount: Sats, payee: Account) -> SimOutput {
        SimOutput {
            kind,
            amount,
            condition: SpendCondition::default(),
            payee: Some(payee),
        }
    }

    fn with_timelock(mut self, ticks: u64) -> SimOutput {
        self.condition.timelock = Some(ticks);
        self
    }

    pub fn with_predicate(mut self, tag: &str) -> SimOutput {
        self.condition.predicate = Some(tag.to_string());
        self
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SimTx {
    pub id: TxId,
    pub template_kind: TemplateKind,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<SimOutput>,
    pub vbytes: u64,
    pub signatures: BTreeSet<FunctionaryId>,
}

/// Digest of the canonical serialization: template kind, inputs, outputs,
/// vbytes, in that order. Signatures are witness data and excluded.
pub fn canonical_id(
    kind: TemplateKind,
    inputs: &[TxInput],
    outputs: &[SimOutput],
    vbytes: u64,
) -> TxId {
    let bytes = serde_json::to_vec(&(kind, inputs, outputs, vbytes)).expect("serializable");
    TxId(Digest::builder("simtx").bytes(&bytes).finish())
}

impl SimTx {
    pub fn new(
        kind: TemplateKind,
        inputs: Vec<TxInput>,
        outputs: Vec<SimOutput>,
        vbytes: u64,
    ) -> SimTx {
        SimTx {
            id: canonical_id(kind, &inputs, &outputs, vbytes),
            template_kind: kind,
            inputs,
            outputs,
            vbytes,
            signatures: BTreeSet::new(),
        }
    }

    pub fn recompute_id(&mut self) {
        self.id = canonical_id(self.template_kind, &self.inputs, &self.outputs, self.vbytes);
    }

    pub fn outpoint(&self, index: u32) -> OutPoint {
        OutPoint { tx: self.id, index }
    }

    pub fn spends(&self) -> impl Iterator<Item = &OutPoint> {
        self.inputs.iter().filter_map(|i| match i {
            TxInput::Spend(op) => Some(op),
            TxInput::Wallet { .. } => None,
        })
    }

    pub fn output_total(&self) -> Sats {
        self.outputs.iter().map(|o| o.amount).sum()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum EnablerRole {
    Operator,
    Verifier,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum EnablerState {
    Live,
    Consumed,
    Burnt,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Enabler {
    pub owner: FunctionaryId,
    pub role: EnablerRole,
    pub vmxo: VmxoId,
    /// The prover this verifier enabler lets its owner challenge.
    pub counterparty: Option<FunctionaryId>,
    pub state: EnablerState,
    pub outpoint: OutPoint,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum VmxoState {
    AwaitingPegin,
    Locked,
    /// Operators with an open kick-off. An honest fallback operator may
    /// kick off while a fraudulent kick-off by another operator is pending.
    KickoffOpen(BTreeSet<FunctionaryId>),
    Unlocked(FunctionaryId),
    Invalidated,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Vmxo {
    pub id: VmxoId,
    pub amount: Sats,
    pub state: VmxoState,
    pub user: Option<u32>,
    pub stolen: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum KeyState {
    Held,
    Deleted,
    Leaked,
}

/// Semantic handle of a template, stable across id rewrites.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum TemplateKey {
    Setup(FunctionaryId),
    Locking(VmxoId),
    Kickoff(FunctionaryId, VmxoId),
    Unlocking(FunctionaryId, VmxoId),
    ForceClose(FunctionaryId, VmxoId, VmxoId),
    ProverLoses {
        prover: FunctionaryId,
        vmxo: VmxoId,
        verifier: FunctionaryId,
    },
    VerifierLoses {
        prover: FunctionaryId,
        vmxo: VmxoId,
        verifier: FunctionaryId,
    },
    KillEnablers(FunctionaryId),
}

impl TemplateKey {
    fn vmxo(&self) -> Option<VmxoId> {
        match *self {
            TemplateKey::Setup(_) | TemplateKey::KillEnablers(_) => None,
            TemplateKey::Locking(v)
            | TemplateKey::Kickoff(_, v)
            | TemplateKey::Unlocking(_, v)
            | TemplateKey::ForceClose(_, v, _) => Some(v),
            TemplateKey::ProverLoses { vmxo, .. } | TemplateKey::VerifierLoses { vmxo, .. } => {
                Some(vmxo)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("a packet needs at least two functionaries")]
    TooFewFunctionaries,
    #[error("a packet needs at least one VMXO")]
    NoVmxos,
    #[error("{0} deleted its key for {1}")]
    KeyDeleted(FunctionaryId, VmxoId),
    #[error("Locking/Unlocking templates of {0} are not fully signed")]
    PrematureDeletion(VmxoId),
    #[error("open kick-offs belong to different operators or are the same output")]
    NotSameOperator,
    #[error("kick-off output already spent")]
    AlreadyClosed,
    #[error("no confirmed losing terminal for {0}")]
    NoTrigger(FunctionaryId),
    #[error("unknown template {0}")]
    UnknownTemplate(TxId),
    #[error("unknown template key {0:?}")]
    UnknownKey(TemplateKey),
    #[error("{0} is not a functionary of this packet")]
    UnknownFunctionary(FunctionaryId),
    #[error("output {0} does not exist or is unconfirmed")]
    MissingOutput(OutPoint),
    #[error("output {0} already spent")]
    DoubleSpend(OutPoint),
    #[error("{0} has no live operator enabler for {1}")]
    NoOperatorEnabler(FunctionaryId, VmxoId),
    #[error("missing signatures: {0:?}")]
    MissingSignatures(Vec<FunctionaryId>),
}

/// Structural rule a graph breaks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// (i) input refers to an output no template in the graph creates.
    NonAncestorSpend { tx: TxId, outpoint: OutPoint },
    /// (ii) the loser of a terminal cannot have every enabler burnt.
    UnburnableEnabler {
        terminal: TxId,
        loser: FunctionaryId,
        enabler: OutPoint,
    },
    /// (iii) Unlocking must take exactly one operator enabler plus the
    /// matching open kick-off output.
    UnlockingShape { tx: TxId },
    /// (iv) Kick-off must create one dispute output per verifier.
    KickoffShape { tx: TxId },
}

/// Unspent contract outputs with single-spend enforcement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UtxoSet {
    unspent: BTreeMap<OutPoint, SimOutput>,
    spent: BTreeSet<OutPoint>,
}

impl UtxoSet {
    pub fn contains(&self, op: &OutPoint) -> bool {
        self.unspent.contains_key(op)
    }

    pub fn get(&self, op: &OutPoint) -> Option<&SimOutput> {
        self.unspent.get(op)
    }

    pub fn is_spent(&self, op: &OutPoint) -> bool {
        self.spent.contains(op)
    }

    pub fn check(&self, tx: &SimTx) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for op in tx.spends() {
            if self.spent.contains(op) || !seen.insert(*op) {
                return Err(GraphError::DoubleSpend(*op));
            }
            if !self.unspent.contains_key(op) {
                return Err(GraphError::MissingOutput(*op));
            }
        }
        Ok(())
    }

    /// Consumes the inputs and adds the contract outputs of a confirmed tx.
    pub fn apply(&mut self, tx: &SimTx) -> Result<(), GraphError> {
        self.check(tx)?;
        for op in tx.spends() {
            self.unspent.remove(op);
            self.spent.insert(*op);
        }
        for (i, o) in tx.outputs.iter().enumerate() {
            if o.kind.is_contract() {
                self.unspent.insert(tx.outpoint(i as u32), o.clone());
            }
        }
        Ok(())
    }

    pub fn total(&self) -> Sats {
        self.unspent.values().map(|o| o.amount).sum()
    }
}

pub const PREDICATE_OPERATOR_ENABLER: &str = "requires live operator enabler";
pub const PREDICATE_CHANNELS_SETTLED: &str =
    "requires every dispute channel settled for the prover";
pub const PREDICATE_VERIFIER_ENABLER: &str = "requires live verifier enabler against the prover";

/// Templates, enabler pool, key states and contract UTXOs of one packet.
#[derive(Clone, Debug)]
pub struct PacketGraph {
    pub functionaries: Vec<FunctionaryId>,
    pub vmxos: Vec<Vmxo>,
    pub enablers: Vec<Enabler>,
    pub challenge_window: u64,
    templates: BTreeMap<TxId, SimTx>,
    keys_by_id: BTreeMap<TxId, TemplateKey>,
    ids_by_key: BTreeMap<TemplateKey, TxId>,
    key_states: BTreeMap<(FunctionaryId, VmxoId), KeyState>,
    deposit: Sats,
    pub utxos: UtxoSet,
}

fn all_signers(fs: &[FunctionaryId]) -> BTreeSet<FunctionaryId> {
    fs.iter().copied().collect()
}

/// Placeholder payer of a Locking template before a user is bound.
const UNBOUND_USER: Account = Account::User(u32::MAX);

/// Builds every template of a packet. Signature sets start empty.
pub fn build_packet_templates(
    functionaries: &[FunctionaryId],
    vmxo_count: u32,
    amount: Sats,
    deposit: Sats,
    challenge_window: u64,
    costs: &CostTable,
) -> Result<PacketGraph, GraphError> {
    if functionaries.len() < 2 {
        return Err(GraphError::TooFewFunctionaries);
    }
    if vmxo_count == 0 {
        return Err(GraphError::NoVmxos);
    }
    let everyone = all_signers(functionaries);
    let mut g = PacketGraph {
        functionaries: functionaries.to_vec(),
        vmxos: (0..vmxo_count)
            .map(|i| Vmxo {
                id: VmxoId(i),
                amount,
                state: VmxoState::AwaitingPegin,
                user: None,
                stolen: false,
            })
            .collect(),
        enablers: Vec::new(),
        challenge_window,
        templates: BTreeMap::new(),
        keys_by_id: BTreeMap::new(),
        ids_by_key: BTreeMap::new(),
        key_states: BTreeMap::new(),
        deposit,
        utxos: UtxoSet::default(),
    };
    for f in functionaries {
        for v in 0..vmxo_count {
            g.key_states.insert((*f, VmxoId(v)), KeyState::Held);
        }
    }

    // Setup: deposit plus the enabler pool, per functionary.
    for &f in functionaries {
        let mut outputs = vec![SimOutput::contract(
            OutputKind::DepositOut,
            deposit,
            everyone.clone(),
        )];
        let mut plan = Vec::new();
        for v in 0..vmxo_count {
            plan.push((EnablerRole::Operator, VmxoId(v), None));
            for &c in functionaries.iter().filter(|c| **c != f) {
                plan.push((EnablerRole::Verifier, VmxoId(v), Some(c)));
            }
        }
        for _ in &plan {
            outputs.push(SimOutput::contract(
                OutputKind::EnablerOut,
                0,
                [f].into_iter().collect(),
            ));
        }
        let tx = SimTx::new(
            TemplateKind::Setup,
            vec![TxInput::Wallet {
                account: Account::Functionary(f),
                amount: deposit,
            }],
            outputs,
            vbytes::SETUP + 10 * plan.len() as u64,
        );
        for (i, (role, vmxo, counterparty)) in plan.into_iter().enumerate() {
            g.enablers.push(Enabler {
                owner: f,
                role,
                vmxo,
                counterparty,
                state: EnablerState::Live,
                outpoint: tx.outpoint(i as u32 + 1),
            });
        }
        g.insert(TemplateKey::Setup(f), tx);
    }

    for v in 0..vmxo_count {
        let v = VmxoId(v);
        let locking = SimTx::new(
            TemplateKind::Locking,
            vec![TxInput::Wallet {
                account: UNBOUND_USER,
                amount,
            }],
            vec![
                SimOutput::contract(OutputKind::Locking, amount, everyone.clone())
                    .with_predicate(&format!("secures {v}")),
            ],
            vbytes::LOCKING,
        );
        let locking_out = locking.outpoint(0);
        g.insert(TemplateKey::Locking(v), locking);

        for &op in functionaries {
            let mut outputs =
                vec![
                    SimOutput::contract(OutputKind::OpenKickoff, 0, [op].into_iter().collect())
                        .with_timelock(challenge_window)
                        .with_predicate(&format!("{PREDICATE_CHANNELS_SETTLED} on {v}")),
                ];
            for &ver in functionaries.iter().filter(|c| **c != op) {
                outputs.push(
                    SimOutput::contract(
                        OutputKind::DisputeChannelOut,
                        0,
                        [ver].into_iter().collect(),
                    )
                    .with_predicate(PREDICATE_VERIFIER_ENABLER),
                );
            }
            let kickoff = SimTx::new(TemplateKind::Kickoff, vec![], outputs, costs.commit_proof);
            let open = kickoff.outpoint(0);
            let kickoff_id = kickoff.id;
            g.insert(TemplateKey::Kickoff(op, v), kickoff);

            let op_enabler = g.enabler_outpoint(op, EnablerRole::Operator, v, None);
            let unlocking = SimTx::new(
                TemplateKind::Unlocking,
                vec![
                    TxInput::Spend(locking_out),
                    TxInput::Spend(open),
                    TxInput::Spend(op_enabler),
                ],
                vec![SimOutput::pay(
                    OutputKind::RewardOut,
                    amount,
                    Account::Functionary(op),
                )],
                vbytes::UNLOCKING,
            );
            g.insert(TemplateKey::Unlocking(op, v), unlocking);

            for &ver in functionaries.iter().filter(|c| **c != op) {
                let ver_enabler = g.enabler_outpoint(ver, EnablerRole::Verifier, v, Some(op));
                let pl = SimTx::new(
                    TemplateKind::ProverLoses,
                    vec![TxInput::Spend(open), TxInput::Spend(ver_enabler)],
                    vec![],
                    vbytes::PROVER_LOSES,
                );
                g.insert(
                    TemplateKey::ProverLoses {
                        prover: op,
                        vmxo: v,
                        verifier: ver,
                    },
                    pl,
                );
                // No contract inputs; a zero-value marker output tied to the
                // channel keeps the per-channel templates distinct.
                let vl = SimTx::new(
                    TemplateKind::VerifierLoses,
                    vec![],
                    vec![SimOutput::contract(
                        OutputKind::DisputeChannelOut,
                        0,
                        [op, ver].into_iter().collect(),
                    )
                    .with_predicate(&format!("channel {} {}", kickoff_id, ver))],
                    vbytes::VERIFIER_LOSES,
                );
                g.insert(
                    TemplateKey::VerifierLoses {
                        prover: op,
                        vmxo: v,
                        verifier: ver,
                    },
                    vl,
                );
            }
        }
    }

    // Force-close per pair of one operator's open kick-off outputs.
    for &op in functionaries {
        for a in 0..vmxo_count {
            for b in (a + 1)..vmxo_count {
                let (va, vb) = (VmxoId(a), VmxoId(b));
                let ka = g.id_of(TemplateKey::Kickoff(op, va)).unwrap();
                let kb = g.id_of(TemplateKey::Kickoff(op, vb)).unwrap();
                let fc = SimTx::new(
                    TemplateKind::ForceClose,
                    vec![
                        TxInput::Spend(OutPoint { tx: ka, index: 0 }),
                        TxInput::Spend(OutPoint { tx: kb, index: 0 }),
                    ],
                    vec![],
                    vbytes::FORCE_CLOSE,
                );
                g.insert(TemplateKey::ForceClose(op, va, vb), fc);
            }
        }
    }

    // Kill-enablers per functionary: every enabler plus the deposit.
    for &f in functionaries {
        let mut inputs: Vec<TxInput> = g
            .enablers
            .iter()
            .filter(|e| e.owner == f)
            .map(|e| TxInput::Spend(e.outpoint))
            .collect();
        let setup = g.id_of(TemplateKey::Setup(f)).unwrap();
        inputs.push(TxInput::Spend(OutPoint {
            tx: setup,
            index: 0,
        }));
        let size = vbytes::KILL_BASE + vbytes::KILL_PER_INPUT * inputs.len() as u64;
        let kill = SimTx::new(
            TemplateKind::KillEnablers,
            inputs,
            vec![
                SimOutput::contract(OutputKind::RewardOut, deposit, BTreeSet::new())
                    .with_predicate("claimable by the winner of the triggering terminal"),
            ],
            size,
        );
        g.insert(TemplateKey::KillEnablers(f), kill);
    }
    Ok(g)
}

impl PacketGraph {
    fn insert(&mut self, key: TemplateKey, tx: SimTx) {
        assert!(
            !self.templates.contains_key(&tx.id),
            "template id collision for {key:?}"
        );
        self.keys_by_id.insert(tx.id, key);
        self.ids_by_key.insert(key, tx.id);
        self.templates.insert(tx.id, tx);
    }

    pub fn deposit(&self) -> Sats {
        self.deposit
    }

    pub fn template(&self, id: &TxId) -> Option<&SimTx> {
        self.templates.get(id)
    }

    pub fn templates(&self) -> impl Iterator<Item = &SimTx> {
        self.templates.values()
    }

    pub fn id_of(&self, key: TemplateKey) -> Option<TxId> {
        self.ids_by_key.get(&key).copied()
    }

    pub fn key_of(&self, id: &TxId) -> Option<TemplateKey> {
        self.keys_by_id.get(id).copied()
    }

    pub fn get(&self, key: TemplateKey) -> Result<&SimTx, GraphError> {
        let id = self.id_of(key).ok_or(GraphError::UnknownKey(key))?;
        Ok(&self.templates[&id])
    }

    pub fn vmxo(&self, id: VmxoId) -> &Vmxo {
        &self.vmxos[id.0 as usize]
    }

    pub fn vmxo_mut(&mut self, id: VmxoId) -> &mut Vmxo {
        &mut self.vmxos[id.0 as usize]
    }

    pub fn key_state(&self, f: FunctionaryId, v: VmxoId) -> KeyState {
        self.key_states[&(f, v)]
    }

    pub fn set_key_state(&mut self, f: FunctionaryId, v: VmxoId, state: KeyState) {
        self.key_states.insert((f, v), state);
    }

    fn enabler_outpoint(
        &self,
        owner: FunctionaryId,
        role: EnablerRole,
        vmxo: VmxoId,
        counterparty: Option<FunctionaryId>,
    ) -> OutPoint {
        self.enablers
            .iter()
            .find(|e| {
                e.owner == owner
                    && e.role == role
                    && e.vmxo == vmxo
                    && e.counterparty == counterparty
            })
            .expect("enabler exists")
            .outpoint
    }

    pub fn enabler(
        &self,
        owner: FunctionaryId,
        role: EnablerRole,
        vmxo: VmxoId,
        counterparty: Option<FunctionaryId>,
    ) -> Option<&Enabler> {
        self.enablers.iter().find(|e| {
            e.owner == owner && e.role == role && e.vmxo == vmxo && e.counterparty == counterparty
        })
    }

    pub fn operator_enabler_live(&self, op: FunctionaryId, vmxo: VmxoId) -> bool {
        self.enabler(op, EnablerRole::Operator, vmxo, None)
            .is_some_and(|e| e.state == EnablerState::Live)
    }

    pub fn verifier_enabler_live(
        &self,
        vmxo: VmxoId,
        verifier: FunctionaryId,
        prover: FunctionaryId,
    ) -> bool {
        self.enabler(verifier, EnablerRole::Verifier, vmxo, Some(prover))
            .is_some_and(|e| e.state == EnablerState::Live)
    }

    pub fn live_enablers(&self, owner: FunctionaryId) -> usize {
        self.enablers
            .iter()
            .filter(|e| e.owner == owner && e.state == EnablerState::Live)
            .count()
    }

    pub fn live_pool(&self) -> usize {
        self.enablers
            .iter()
            .filter(|e| e.state == EnablerState::Live)
            .count()
    }

    /// Adds `signer` to a template's signature set. Idempotent.
    pub fn sign_template(&mut self, id: TxId, signer: FunctionaryId) -> Result<&SimTx, GraphError> {
        if !self.functionaries.contains(&signer) {
            return Err(GraphError::UnknownFunctionary(signer));
        }
        let key = self.key_of(&id).ok_or(GraphError::UnknownTemplate(id))?;
        if let Some(v) = key.vmxo() {
            if self.key_state(signer, v) == KeyState::Deleted {
                return Err(GraphError::KeyDeleted(signer, v));
            }
        }
        let tx = self.templates.get_mut(&id).unwrap();
        tx.signatures.insert(signer);
        Ok(tx)
    }

    pub fn is_complete(&self, id: &TxId) -> bool {
        self.templates
            .get(id)
            .is_some_and(|t| self.functionaries.iter().all(|f| t.signatures.contains(f)))
    }

    /// Every template not bound to a user: all but Locking/Unlocking.
    pub fn sign_setup_templates(&mut self, signer: FunctionaryId) -> Result<(), GraphError> {
        let ids: Vec<TxId> = self
            .ids_by_key
            .iter()
            .filter(|(k, _)| !matches!(k, TemplateKey::Locking(_) | TemplateKey::Unlocking(..)))
            .map(|(_, id)| *id)
            .collect();
        for id in ids {
            self.sign_template(id, signer)?;
        }
        Ok(())
    }

    /// Ids of the templates a key deletion for `vmxo` depends on.
    pub fn binding_templates(&self, vmxo: VmxoId) -> Vec<TxId> {
        let mut ids = vec![self.id_of(TemplateKey::Locking(vmxo)).unwrap()];
        for &op in &self.functionaries {
            ids.push(self.id_of(TemplateKey::Unlocking(op, vmxo)).unwrap());
        }
        ids
    }

    pub fn delete_keys(&mut self, f: FunctionaryId, vmxo: VmxoId) -> Result<KeyState, GraphError> {
        if !self
            .binding_templates(vmxo)
            .iter()
            .all(|id| self.is_complete(id))
        {
            return Err(GraphError::PrematureDeletion(vmxo));
        }
        self.set_key_state(f, vmxo, KeyState::Deleted);
        Ok(KeyState::Deleted)
    }

    /// Rebuilds the Locking template of `vmxo` with the user's funding input.
    /// Returns the ids of all templates whose signatures were invalidated.
    pub fn bind_pegin(&mut self, vmxo: VmxoId, user: u32) -> Vec<TxId> {
        let id = self.id_of(TemplateKey::Locking(vmxo)).unwrap();
        let mut tx = self.templates[&id].clone();
        let amount = self.vmxo(vmxo).amount;
        tx.inputs = vec![TxInput::Wallet {
            account: Account::User(user),
            amount,
        }];
        self.vmxo_mut(vmxo).user = Some(user);
        self.replace_template(id, tx)
    }

    /// Replaces a template and rewires every descendant to the new id.
    /// Rewritten templates lose their signatures. Returns every id that was
    /// replaced (old ids).
    pub fn replace_template(&mut self, old: TxId, mut new: SimTx) -> Vec<TxId> {
        let key = self.keys_by_id[&old];
        new.recompute_id();
        new.signatures.clear();
        let new_id = new.id;
        self.templates.remove(&old);
        self.keys_by_id.remove(&old);
        self.insert(key, new);
        for e in &mut self.enablers {
            if e.outpoint.tx == old {
                e.outpoint.tx = new_id;
            }
        }
        let mut replaced = vec![old];
        let children: Vec<TxId> = self
            .templates
            .values()
            .filter(|t| t.spends().any(|op| op.tx == old))
            .map(|t| t.id)
            .collect();
        for child in children {
            let Some(mut tx) = self.templates.get(&child).cloned() else {
                continue;
            };
            for input in &mut tx.inputs {
                if let TxInput::Spend(op) = input {
                    if op.tx == old {
                        op.tx = new_id;
                    }
                }
            }
            replaced.extend(self.replace_template(child, tx));
        }
        replaced
    }

    /// Checks the structural rules of the packet graph.
    pub fn validate_graph(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let created: BTreeSet<OutPoint> = self
            .templates
            .values()
            .flat_map(|t| (0..t.outputs.len() as u32).map(|i| t.outpoint(i)))
            .collect();
        for t in self.templates.values() {
            for op in t.spends() {
                if !created.contains(op) {
                    out.push(Violation::NonAncestorSpend {
                        tx: t.id,
                        outpoint: *op,
                    });
                }
            }
        }
        for (key, id) in &self.ids_by_key {
            let loser = match *key {
                TemplateKey::ProverLoses { prover, .. } => prover,
                TemplateKey::VerifierLoses { verifier, .. } => verifier,
                TemplateKey::ForceClose(op, ..) => op,
                _ => continue,
            };
            let Some(kill) = self
                .id_of(TemplateKey::KillEnablers(loser))
                .map(|k| &self.templates[&k])
            else {
                out.push(Violation::UnburnableEnabler {
                    terminal: *id,
                    loser,
                    enabler: OutPoint { tx: *id, index: 0 },
                });
                continue;
            };
            let burnable: BTreeSet<&OutPoint> = kill.spends().collect();
            for e in self.enablers.iter().filter(|e| e.owner == loser) {
                if !burnable.contains(&e.outpoint) {
                    out.push(Violation::UnburnableEnabler {
                        terminal: *id,
                        loser,
                        enabler: e.outpoint,
                    });
                }
            }
        }
        for (key, id) in &self.ids_by_key {
            match *key {
                TemplateKey::Unlocking(op, v) => {
                    let t = &self.templates[id];
                    let kickoff = self.id_of(TemplateKey::Kickoff(op, v));
                    let op_enablers = t
                        .spends()
                        .filter(|o| {
                            self.enablers
                                .iter()
                                .any(|e| e.outpoint == **o && e.role == EnablerRole::Operator)
                        })
                        .count();
                    let open = t
                        .spends()
                        .filter(|o| Some(o.tx) == kickoff && o.index == 0)
                        .count();
                    if op_enablers != 1 || open != 1 {
                        out.push(Violation::UnlockingShape { tx: *id });
                    }
                }
                TemplateKey::Kickoff(op, v) => {
                    let t = &self.templates[id];
                    let channels = t
                        .outputs
                        .iter()
                        .filter(|o| o.kind == OutputKind::DisputeChannelOut)
                        .count();
                    let first_open =
                        t.outputs.first().map(|o| o.kind) == Some(OutputKind::OpenKickoff);
                    let verifiers_with_terminals = self
                        .functionaries
                        .iter()
                        .filter(|ver| **ver != op)
                        .filter(|ver| {
                            self.id_of(TemplateKey::ProverLoses {
                                prover: op,
                                vmxo: v,
                                verifier: **ver,
                            })
                            .is_some()
                        })
                        .count();
                    if !first_open
                        || channels != self.functionaries.len() - 1
                        || verifiers_with_terminals != channels
                    {
                        out.push(Violation::KickoffShape { tx: *id });
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Concrete force-close of two open kick-offs of one operator. The
    /// caller confirms it through [`PacketGraph::confirm`].
    pub fn apply_force_close(&self, a: TxId, b: TxId) -> Result<SimTx, GraphError> {
        let (ka, kb) = match (self.key_of(&a), self.key_of(&b)) {
            (Some(TemplateKey::Kickoff(oa, va)), Some(TemplateKey::Kickoff(ob, vb)))
                if oa == ob && va != vb =>
            {
                ((oa, va), (ob, vb))
            }
            _ => return Err(GraphError::NotSameOperator),
        };
        for id in [a, b] {
            let open = OutPoint { tx: id, index: 0 };
            if self.utxos.is_spent(&open) {
                return Err(GraphError::AlreadyClosed);
            }
            if !self.utxos.contains(&open) {
                return Err(GraphError::MissingOutput(open));
            }
        }
        let (lo, hi) = if ka.1 < kb.1 {
            (ka.1, kb.1)
        } else {
            (kb.1, ka.1)
        };
        Ok(self.get(TemplateKey::ForceClose(ka.0, lo, hi))?.clone())
    }

    /// Concrete kill-enablers for `loser`: every live enabler plus the
    /// deposit, paid out as `payouts` (must sum to the deposit).
    pub fn burn_enablers(
        &self,
        loser: FunctionaryId,
        payouts: &[(Account, Sats)],
    ) -> Result<SimTx, GraphError> {
        let template = self.get(TemplateKey::KillEnablers(loser))?;
        let live: BTreeSet<OutPoint> = self
            .enablers
            .iter()
            .filter(|e| e.owner == loser && e.state == EnablerState::Live)
            .map(|e| e.outpoint)
            .collect();
        let deposit = OutPoint {
            tx: self.id_of(TemplateKey::Setup(loser)).unwrap(),
            index: 0,
        };
        let inputs: Vec<TxInput> = template
            .inputs
            .iter()
            .filter(|i| match i {
                TxInput::Spend(op) => {
                    live.contains(op) || (*op == deposit && self.utxos.contains(op))
                }
                TxInput::Wallet { .. } => false,
            })
            .cloned()
            .collect();
        let available: Sats = inputs
            .iter()
            .filter_map(|i| match i {
                TxInput::Spend(op) => self.utxos.get(op).map(|o| o.amount),
                _ => None,
            })
            .sum();
        let mut outputs = Vec::new();
        let mut left = available;
        for (who, amount) in payouts {
            let a = (*amount).min(left);
            if a > 0 {
                outputs.push(SimOutput::pay(OutputKind::RewardOut, a, *who));
            }
            left -= a;
        }
        let size = vbytes::KILL_BASE + vbytes::KILL_PER_INPUT * inputs.len() as u64;
        let mut tx = SimTx::new(TemplateKind::KillEnablers, inputs, outputs, size);
        tx.signatures = template.signatures.clone();
        Ok(tx)
    }

    /// Ad-hoc spend of a Locking output outside the templates. Requires a
    /// usable key from every functionary.
    pub fn attempt_theft(&self, vmxo: VmxoId, thief: Account) -> Result<SimTx, GraphError> {
        let missing: Vec<FunctionaryId> = self
            .functionaries
            .iter()
            .copied()
            .filter(|f| self.key_state(*f, vmxo) == KeyState::Deleted)
            .collect();
        if !missing.is_empty() {
            return Err(GraphError::MissingSignatures(missing));
        }
        let locking = self.id_of(TemplateKey::Locking(vmxo)).unwrap();
        let op = OutPoint {
            tx: locking,
            index: 0,
        };
        let amount = self
            .utxos
            .get(&op)
            .ok_or(GraphError::MissingOutput(op))?
            .amount;
        let mut tx = SimTx::new(
            TemplateKind::Theft,
            vec![TxInput::Spend(op)],
            vec![SimOutput::pay(OutputKind::RewardOut, amount, thief)],
            vbytes::THEFT,
        );
        tx.signatures = all_signers(&self.functionaries);
        Ok(tx)
    }

    /// Kick-off attempt gated on the operator enabler.
    pub fn kickoff(&self, op: FunctionaryId, vmxo: VmxoId) -> Result<SimTx, GraphError> {
        if !self.operator_enabler_live(op, vmxo) {
            return Err(GraphError::NoOperatorEnabler(op, vmxo));
        }
        Ok(self.get(TemplateKey::Kickoff(op, vmxo))?.clone())
    }

    /// Applies a confirmed transaction: UTXO changes, enabler transitions
    /// and VMXO state.
    pub fn confirm(&mut self, tx: &SimTx) -> Result<(), GraphError> {
        self.utxos.apply(tx)?;
        let spent: BTreeSet<OutPoint> = tx.spends().copied().collect();
        let terminal = match tx.template_kind {
            TemplateKind::Unlocking | TemplateKind::ProverLoses => Some(EnablerState::Consumed),
            TemplateKind::KillEnablers | TemplateKind::Withdrawal => Some(EnablerState::Burnt),
            _ => None,
        };
        if let Some(state) = terminal {
            for e in &mut self.enablers {
                if spent.contains(&e.outpoint) && e.state == EnablerState::Live {
                    e.state = state;
                }
            }
        }
        match (tx.template_kind, self.key_of(&tx.id)) {
            (TemplateKind::Kickoff, Some(TemplateKey::Kickoff(op, v))) => {
                let vm = self.vmxo_mut(v);
                match &mut vm.state {
                    VmxoState::KickoffOpen(ops) => {
                        ops.insert(op);
                    }
                    VmxoState::Locked => {
                        vm.state = VmxoState::KickoffOpen([op].into_iter().collect())
                    }
                    _ => {}
                }
            }
            (TemplateKind::Unlocking, Some(TemplateKey::Unlocking(op, v))) => {
                self.vmxo_mut(v).state = VmxoState::Unlocked(op);
            }
            (TemplateKind::ProverLoses, Some(TemplateKey::ProverLoses { prover, vmxo, .. })) => {
                self.close_kickoff(prover, vmxo);
            }
            (TemplateKind::ForceClose, Some(TemplateKey::ForceClose(op, a, b))) => {
                self.close_kickoff(op, a);
                self.close_kickoff(op, b);
            }
            (TemplateKind::Theft, _) => {
                for v in &mut self.vmxos {
                    let op = OutPoint {
                        tx: self.ids_by_key[&TemplateKey::Locking(v.id)],
                        index: 0,
                    };
                    if spent.contains(&op) {
                        v.stolen = true;
                        v.state = VmxoState::Invalidated;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn close_kickoff(&mut self, op: FunctionaryId, v: VmxoId) {
        let vm = self.vmxo_mut(v);
        if let VmxoState::KickoffOpen(ops) = &mut vm.state {
            ops.remove(&op);
            if ops.is_empty() {
                vm.state = VmxoState::Locked;
            }
        }
    }

    /// Setup transaction for `f`, confirmed at packet creation.
    pub fn setup_tx(&self, f: FunctionaryId) -> &SimTx {
        &self.templates[&self.ids_by_key[&TemplateKey::Setup(f)]]
    }

    pub fn template_keys(&self) -> impl Iterator<Item = (&TemplateKey, &TxId)> {
        self.ids_by_key.iter()
    }

    /// Open kick-off output of `(op, vmxo)`.
    pub fn open_kickoff(&self, op: FunctionaryId, vmxo: VmxoId) -> OutPoint {
        OutPoint {
            tx: self.id_of(TemplateKey::Kickoff(op, vmxo)).unwrap(),
            index: 0,
        }
    }

    /// Dispute-channel output of `verifier` on the kick-off of `(op, vmxo)`.
    pub fn channel_outpoint(
        &self,
        op: FunctionaryId,
        vmxo: VmxoId,
        verifier: FunctionaryId,
    ) -> Option<OutPoint> {
        let tx = self.id_of(TemplateKey::Kickoff(op, vmxo))?;
        let idx = self
            .functionaries
            .iter()
            .filter(|f| **f != op)
            .position(|f| *f == verifier)?;
        Some(OutPoint {
            tx,
            index: idx as u32 + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fs(n: u32) -> Vec<FunctionaryId> {
        (0..n).map(FunctionaryId).collect()
    }

    fn packet(n: u32, v: u32) -> PacketGraph {
        build_packet_templates(&fs(n), v, 100_000, 50_000, 10, &CostTable::MEASURED).unwrap()
    }

    fn count(g: &PacketGraph, kind: TemplateKind) -> usize {
        g.templates().filter(|t| t.template_kind == kind).count()
    }

    #[test]
    fn shape_counts() {
        let g = packet(2, 1);
        assert_eq!(count(&g, TemplateKind::Kickoff), 2);
        assert_eq!(count(&g, TemplateKind::Unlocking), 2);
        let channels: usize = g
            .templates()
            .filter(|t| t.template_kind == TemplateKind::Kickoff)
            .map(|t| {
                t.outputs
                    .iter()
                    .filter(|o| o.kind == OutputKind::DisputeChannelOut)
                    .count()
            })
            .sum();
        assert_eq!(channels, 2);
        assert_eq!(g.enablers.len(), 4);
        assert_eq!(
            g.enablers
                .iter()
                .filter(|e| e.role == EnablerRole::Operator)
                .count(),
            2
        );

        let g = packet(3, 1);
        let channels: usize = g
            .templates()
            .filter(|t| t.template_kind == TemplateKind::Kickoff)
            .map(|t| {
                t.outputs
                    .iter()
                    .filter(|o| o.kind == OutputKind::DisputeChannelOut)
                    .count()
            })
            .sum();
        assert_eq!(channels, 6);
    }

    #[test]
    fn enabler_pool_by_enumeration() {
        let g = packet(3, 2);
        let mut n = 0;
        for f in fs(3) {
            for v in 0..2 {
                let mine: Vec<_> = g
                    .enablers
                    .iter()
                    .filter(|e| e.owner == f && e.vmxo == VmxoId(v))
                    .collect();
                assert_eq!(
                    mine.iter()
                        .filter(|e| e.role == EnablerRole::Operator)
                        .count(),
                    1
                );
                assert_eq!(
                    mine.iter()
                        .filter(|e| e.role == EnablerRole::Verifier)
                        .count(),
                    2
                );
                n += mine.len();
            }
        }
        assert_eq!(n, 18);
        assert_eq!(g.enablers.len(), 18);
        // force-close: one pair per operator with two VMXOs
        assert_eq!(count(&g, TemplateKind::ForceClose), 3);
    }

    #[test]
    fn too_few_functionaries() {
        assert_eq!(
            build_packet_templates(&fs(1), 1, 1, 1, 1, &CostTable::MEASURED).unwrap_err(),
            GraphError::TooFewFunctionaries
        );
    }

    #[test]
    fn signing_rules() {
        let mut g = packet(3, 1);
        let lock = g.id_of(TemplateKey::Locking(VmxoId(0))).unwrap();
        g.sign_template(lock, FunctionaryId(0)).unwrap();
        let once = g.template(&lock).unwrap().signatures.clone();
        g.sign_template(lock, FunctionaryId(0)).unwrap();
        assert_eq!(g.template(&lock).unwrap().signatures, once);
        assert!(!g.is_complete(&lock));
        for f in fs(3) {
            g.sign_template(lock, f).unwrap();
        }
        assert!(g.is_complete(&lock));

        assert_eq!(
            g.delete_keys(FunctionaryId(1), VmxoId(0)).unwrap_err(),
            GraphError::PrematureDeletion(VmxoId(0))
        );
        for id in g.binding_templates(VmxoId(0)) {
            for f in fs(3) {
                g.sign_template(id, f).unwrap();
            }
        }
        assert_eq!(
            g.delete_keys(FunctionaryId(1), VmxoId(0)),
            Ok(KeyState::Deleted)
        );
        assert_eq!(
            g.sign_template(lock, FunctionaryId(1)).unwrap_err(),
            GraphError::KeyDeleted(FunctionaryId(1), VmxoId(0))
        );
    }

    fn confirm_setup(g: &mut PacketGraph) {
        for f in g.functionaries.clone() {
            let tx = g.setup_tx(f).clone();
            g.confirm(&tx).unwrap();
        }
    }

    fn lock(g: &mut PacketGraph, v: VmxoId) {
        g.bind_pegin(v, 7);
        let tx = g.get(TemplateKey::Locking(v)).unwrap().clone();
        g.confirm(&tx).unwrap();
        g.vmxo_mut(v).state = VmxoState::Locked;
    }

    #[test]
    fn theft_needs_every_key() {
        let mut g = packet(3, 1);
        confirm_setup(&mut g);
        lock(&mut g, VmxoId(0));
        for id in g.binding_templates(VmxoId(0)) {
            for f in fs(3) {
                g.sign_template(id, f).unwrap();
            }
        }
        for f in fs(3) {
            g.set_key_state(f, VmxoId(0), KeyState::Leaked);
        }
        assert!(g.attempt_theft(VmxoId(0), Account::User(1)).is_ok());
        g.delete_keys(FunctionaryId(2), VmxoId(0)).unwrap();
        assert_eq!(
            g.attempt_theft(VmxoId(0), Account::User(1)).unwrap_err(),
            GraphError::MissingSignatures(vec![FunctionaryId(2)])
        );
        // With one key deleted, the only spends of the Locking output are templates.
        let locking = g.id_of(TemplateKey::Locking(VmxoId(0))).unwrap();
        let spenders: Vec<TemplateKind> = g
            .templates()
            .filter(|t| t.spends().any(|o| o.tx == locking))
            .map(|t| t.template_kind)
            .collect();
        assert_eq!(spenders, vec![TemplateKind::Unlocking; 3]);
    }

    #[test]
    fn fresh_graph_is_valid() {
        assert!(packet(2, 1).validate_graph().is_empty());
        assert!(packet(4, 3).validate_graph().is_empty());
    }

    #[test]
    fn removing_burn_edge_is_caught() {
        let mut g = packet(3, 1);
        let id = g
            .id_of(TemplateKey::KillEnablers(FunctionaryId(1)))
            .unwrap();
        let mut tx = g.template(&id).unwrap().clone();
        tx.inputs.remove(0);
        g.replace_template(id, tx);
        assert!(g
            .validate_graph()
            .iter()
            .any(|v| matches!(v, Violation::UnburnableEnabler { loser, .. } if *loser == FunctionaryId(1))));
    }

    #[test]
    fn unlocking_without_open_kickoff_is_caught() {
        let mut g = packet(3, 1);
        let id = g
            .id_of(TemplateKey::Unlocking(FunctionaryId(0), VmxoId(0)))
            .unwrap();
        let mut tx = g.template(&id).unwrap().clone();
        tx.inputs.remove(1);
        g.replace_template(id, tx);
        assert!(g
            .validate_graph()
            .iter()
            .any(|v| matches!(v, Violation::UnlockingShape { .. })));
    }

    #[test]
    fn force_close_rules() {
        let mut g = packet(3, 2);
        confirm_setup(&mut g);
        lock(&mut g, VmxoId(0));
        lock(&mut g, VmxoId(1));
        let op = FunctionaryId(0);
        let a = g.kickoff(op, VmxoId(0)).unwrap();
        let b = g.kickoff(op, VmxoId(1)).unwrap();
        let other = g.kickoff(FunctionaryId(1), VmxoId(1)).unwrap();
        g.confirm(&a).unwrap();
        assert_eq!(
            g.apply_force_close(a.id, b.id).unwrap_err(),
            GraphError::MissingOutput(OutPoint { tx: b.id, index: 0 })
        );
        g.confirm(&b).unwrap();
        g.confirm(&other).unwrap();
        assert_eq!(
            g.apply_force_close(a.id, other.id).unwrap_err(),
            GraphError::NotSameOperator
        );
        let fc = g.apply_force_close(a.id, b.id).unwrap();
        g.confirm(&fc).unwrap();
        assert_eq!(g.vmxo(VmxoId(0)).state, VmxoState::Locked);
        assert_eq!(
            g.apply_force_close(a.id, b.id).unwrap_err(),
            GraphError::AlreadyClosed
        );
    }

    #[test]
    fn burning_enablers() {
        let mut g = packet(3, 2);
        confirm_setup(&mut g);
        let loser = FunctionaryId(2);
        assert_eq!(g.live_enablers(loser), 6);
        let kill = g
            .burn_enablers(loser, &[(Account::Functionary(FunctionaryId(0)), 50_000)])
            .unwrap();
        g.confirm(&kill).unwrap();
        assert_eq!(g.live_enablers(loser), 0);
        assert_eq!(
            g.enablers
                .iter()
                .filter(|e| e.state == EnablerState::Burnt)
                .count(),
            6
        );
        // repeat: nothing left to spend
        let again = g.burn_enablers(loser, &[]).unwrap();
        assert!(again.inputs.is_empty());
        assert_eq!(
            g.kickoff(loser, VmxoId(0)).unwrap_err(),
            GraphError::NoOperatorEnabler(loser, VmxoId(0))
        );
    }

    #[test]
    fn double_spend_rejected() {
        let mut g = packet(2, 1);
        confirm_setup(&mut g);
        let tx = g.setup_tx(FunctionaryId(0)).clone();
        let kill = g.burn_enablers(FunctionaryId(0), &[]).unwrap();
        g.confirm(&kill).unwrap();
        assert!(matches!(g.confirm(&kill), Err(GraphError::DoubleSpend(_))));
        assert!(g.utxos.is_spent(&tx.outpoint(0)));
    }

    fn descendants(g: &PacketGraph, root: TxId) -> BTreeSet<TxId> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![root];
        while let Some(id) = frontier.pop() {
            for t in g.templates() {
                if t.spends().any(|o| o.tx == id) && out.insert(t.id) {
                    frontier.push(t.id);
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn mutation_cascades_to_descendants(pick in 0usize..1000, delta in 1u64..1000) {
            let mut g = packet(3, 2);
            for f in fs(3) {
                g.sign_setup_templates(f).unwrap();
                for v in 0..2 {
                    for id in g.binding_templates(VmxoId(v)) {
                        g.sign_template(id, f).unwrap();
                    }
                }
            }
            let ids: Vec<TxId> = g.templates().map(|t| t.id).collect();
            let target = ids[pick % ids.len()];
            let desc = descendants(&g, target);
            let untouched: Vec<(TemplateKey, TxId)> = g
                .template_keys()
                .filter(|(_, id)| **id != target && !desc.contains(id))
                .map(|(k, id)| (*k, *id))
                .collect();
            let desc_keys: Vec<TemplateKey> = desc.iter().map(|id| g.key_of(id).unwrap()).collect();

            let mut tx = g.template(&target).unwrap().clone();
            tx.vbytes += delta;
            let replaced = g.replace_template(target, tx);
            for d in &desc {
                prop_assert!(replaced.contains(d));
            }
            for k in desc_keys {
                let now = g.get(k).unwrap();
                prop_assert!(now.signatures.is_empty());
                prop_assert!(!desc.contains(&now.id));
            }
            for (k, id) in untouched {
                let now = g.get(k).unwrap();
                prop_assert_eq!(now.id, id);
                prop_assert_eq!(now.signatures.len(), 3);
            }
        }
    }
}
