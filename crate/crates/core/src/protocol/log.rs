//! Append-only event log, one JSON object per line.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dispute::{MoveKind, Reason};
use crate::ids::{BlockId, FunctionaryId, Sats, Tick, TxId, VmxoId};
use crate::txgraph::{Account, KeyState, OutPoint, TemplateKind};

/// Where satoshis sit.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    Wallet(Account),
    Locked(VmxoId),
    Deposit(FunctionaryId),
    Fees,
}

impl std::fmt::Display for Holder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Holder::Wallet(a) => write!(f, "{a} wallet"),
            Holder::Locked(v) => write!(f, "{v} locked"),
            Holder::Deposit(id) => write!(f, "{id} deposit"),
            Holder::Fees => write!(f, "fees"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Transfer {
    pub from: Holder,
    pub to: Holder,
    pub amount: Sats,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: FunctionaryId,
    pub honest: bool,
    pub strategy: String,
    pub funds: Sats,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Body {
    Roster {
        seed: u64,
        rng: String,
        functionaries: Vec<RosterEntry>,
        users: Vec<(u32, Sats)>,
        fee_rate: u64,
        fee_ppm: u64,
        denomination: Sats,
        vmxos: u32,
        deposit: Sats,
        required_deposit: Sats,
        watch_threshold: u64,
    },
    Transaction {
        template: TemplateKind,
        tx: TxId,
        payer: Account,
        vbytes: u64,
        fee: Sats,
        spends: Vec<OutPoint>,
        transfers: Vec<Transfer>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        vmxo: Option<VmxoId>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        pegout: Option<u32>,
        /// Operator of a kick-off/unlocking, loser of a terminal.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        subject: Option<FunctionaryId>,
        /// Dispute channel the transaction belongs to.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        game: Option<GameRef>,
    },
    KeysSet {
        vmxo: VmxoId,
        functionary: FunctionaryId,
        state: KeyState,
    },
    Minted {
        user: u32,
        vmxo: VmxoId,
        amount: Sats,
    },
    Burned {
        user: u32,
        pegout: u32,
        amount: Sats,
    },
    Linked {
        pegout: u32,
        vmxo: VmxoId,
        operator: FunctionaryId,
    },
    Acked {
        pegout: u32,
        vmxo: VmxoId,
        operator: FunctionaryId,
        block: BlockId,
    },
    GameOpened {
        game: GameRef,
        prover: FunctionaryId,
        verifier: FunctionaryId,
    },
    Move {
        game: GameRef,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        by: Option<FunctionaryId>,
        kind: MoveKind,
    },
    WatchStop {
        game: GameRef,
        party: FunctionaryId,
        interval: u64,
    },
    Outcome {
        game: GameRef,
        prover: FunctionaryId,
        verifier: FunctionaryId,
        winner: FunctionaryId,
        loser: FunctionaryId,
        reason: Reason,
        threshold: u64,
    },
    Moot {
        game: GameRef,
    },
    Slashed {
        loser: FunctionaryId,
        winner: FunctionaryId,
        payouts: Vec<(Account, Sats)>,
        /// Payouts had the deposit been split evenly among all challengers.
        shared_model: Vec<(Account, Sats)>,
    },
    Withdrawn {
        functionary: FunctionaryId,
    },
    Invalidated {
        vmxo: VmxoId,
        pegout: u32,
        operator: FunctionaryId,
    },
    Rejected {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        actor: Option<Account>,
        action: String,
        reason: String,
    },
    Final {
        balances: Vec<(Holder, Sats)>,
        wrapped: Vec<(u32, Sats)>,
    },
}

/// Dispute channel: kick-off, verifier of the outer game, and whether the
/// record belongs to the nested counter-proof game.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct GameRef {
    pub kickoff: TxId,
    pub verifier: FunctionaryId,
    pub nested: bool,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub tick: Tick,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, tick: Tick, body: Body) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, tick, body });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn from_events(events: Vec<Event>) -> EventLog {
        EventLog { events }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses a log; errors carry the 1-based line number.
    pub fn read_jsonl(input: impl BufRead) -> Result<EventLog, (usize, String)> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| (i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?;
            events.push(e);
        }
        Ok(EventLog { events })
    }
}
