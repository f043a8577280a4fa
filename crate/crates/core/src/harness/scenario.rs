//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! name happy-path
//! seed 7
//! functionaries 3
//! fee-rate 5
//! denomination 1000000
//! vmxos 4
//! users 2
//! strategy 2 silent-prover
//! leak 1
//! timing threshold 20
//! censor 0 10 14
//! mode parallel t-sep 5 p-max 2
//! at 1 pegin 0
//! at 30 pegout 0
//! at 40 attack
//! at 50 withdraw 1
//! end 200
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::CensorshipWindow;
use crate::dispute::GameConfig;
use crate::ids::{FunctionaryId, Sats, Tick};
use crate::protocol::{
    BridgeConfig, ConcurrencyMode, DEFAULT_FEE_PPM, DEFAULT_SECONDARY_CONFIRMATIONS,
    DEFAULT_SOURCE_CONFIRMATIONS,
};

use super::strategy::Strategy;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Pegin {
        user: u32,
    },
    Pegout {
        user: u32,
    },
    Withdraw(FunctionaryId),
    /// Adversaries start misbehaving.
    Attack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub window: u64,
    pub threshold: u64,
    pub fronting_deadline: u64,
    pub source_confirmations: u64,
    pub secondary_confirmations: u64,
    pub trace_len: usize,
    pub arity: u64,
    pub fee_ppm: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            window: 20,
            threshold: 20,
            fronting_deadline: 20,
            source_confirmations: DEFAULT_SOURCE_CONFIRMATIONS,
            secondary_confirmations: DEFAULT_SECONDARY_CONFIRMATIONS,
            trace_len: 16,
            arity: 4,
            fee_ppm: DEFAULT_FEE_PPM,
        }
    }
}

const TIMING_KEYS: [&str; 8] = [
    "window",
    "threshold",
    "fronting-deadline",
    "source-confirmations",
    "secondary-confirmations",
    "trace-len",
    "arity",
    "fee-ppm",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub functionaries: u32,
    pub fee_rate: u64,
    pub denomination: Sats,
    pub vmxos: u32,
    pub users: u32,
    pub strategies: BTreeMap<FunctionaryId, Strategy>,
    pub leaked: BTreeSet<FunctionaryId>,
    pub timing: Timing,
    pub censorship: Vec<CensorshipWindow>,
    pub mode: ConcurrencyMode,
    pub actions: Vec<(Tick, Action)>,
    pub end: Tick,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            seed: 0,
            functionaries: 3,
            fee_rate: 5,
            denomination: 1_000_000,
            vmxos: 4,
            users: 2,
            strategies: BTreeMap::new(),
            leaked: BTreeSet::new(),
            timing: Timing::default(),
            censorship: Vec::new(),
            mode: ConcurrencyMode::Base,
            actions: Vec::new(),
            end: 100,
        }
    }
}

impl Scenario {
    pub fn strategy(&self, f: FunctionaryId) -> Strategy {
        self.strategies.get(&f).copied().unwrap_or(Strategy::Honest)
    }

    /// Keys are kept by key leakers and by anyone listed under `leak`.
    pub fn leaks_keys(&self, f: FunctionaryId) -> bool {
        self.leaked.contains(&f) || self.strategy(f) == Strategy::KeyLeaker
    }

    pub fn functionary_ids(&self) -> impl Iterator<Item = FunctionaryId> {
        (0..self.functionaries).map(FunctionaryId)
    }

    pub fn pegins_of(&self, user: u32) -> u64 {
        self.actions
            .iter()
            .filter(|(_, a)| *a == Action::Pegin { user })
            .count() as u64
    }

    pub fn bridge_config(&self) -> BridgeConfig {
        let mut c = BridgeConfig::new(
            self.functionaries,
            self.fee_rate,
            self.denomination,
            self.vmxos,
        );
        c.fee_ppm = self.timing.fee_ppm;
        c.source_confirmations = self.timing.source_confirmations;
        c.secondary_confirmations = self.timing.secondary_confirmations;
        c.game = GameConfig {
            arity: self.timing.arity,
            challenge_window: self.timing.window,
            watch_threshold: self.timing.threshold,
        };
        c.trace_len = self.timing.trace_len;
        c.mode = self.mode;
        c.fronting_deadline = self.timing.fronting_deadline;
        c.users = self.users;
        let most = (0..self.users)
            .map(|u| self.pegins_of(u))
            .max()
            .unwrap_or(0);
        c.user_funds = c.default_user_funds(most);
        c.censorship = self.censorship.clone();
        c.leaked = self
            .functionary_ids()
            .filter(|f| self.leaks_keys(*f))
            .collect();
        c
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.functionaries < 2 {
            return Err(err(0, "at least two functionaries are required"));
        }
        if self.vmxos == 0 {
            return Err(err(0, "at least one VMXO is required"));
        }
        if self.fee_rate == 0 {
            return Err(err(0, "fee rate must be positive"));
        }
        if !(2..=8).contains(&self.timing.arity) {
            return Err(err(0, "arity must be between 2 and 8"));
        }
        if self.timing.trace_len == 0 {
            return Err(err(0, "trace length must be positive"));
        }
        if let Some(f) = self.strategies.keys().find(|f| f.0 >= self.functionaries) {
            return Err(err(0, format!("strategy for unknown functionary {}", f.0)));
        }
        if let Some(f) = self.leaked.iter().find(|f| f.0 >= self.functionaries) {
            return Err(err(0, format!("leak for unknown functionary {}", f.0)));
        }
        for w in &self.censorship {
            if w.party.0 >= self.functionaries {
                return Err(err(
                    0,
                    format!("censorship of unknown functionary {}", w.party.0),
                ));
            }
        }
        for (t, a) in &self.actions {
            match *a {
                Action::Pegin { user } | Action::Pegout { user } if user >= self.users => {
                    return Err(err(
                        0,
                        format!("action at tick {t} names unknown user {user}"),
                    ))
                }
                Action::Withdraw(f) if f.0 >= self.functionaries => {
                    return Err(err(
                        0,
                        format!("action at tick {t} names unknown functionary {}", f.0),
                    ))
                }
                _ => {}
            }
        }
        if self.actions.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(err(0, "action ticks must be non-decreasing"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let num = |idx: usize| -> Result<u64, ScenarioError> {
                let w = words
                    .get(idx)
                    .ok_or_else(|| err(line, format!("`{}` needs more arguments", words[0])))?;
                w.parse()
                    .map_err(|_| err(line, format!("`{w}` is not a number")))
            };
            let arity = |n: usize| -> Result<(), ScenarioError> {
                if words.len() != n {
                    return Err(err(
                        line,
                        format!("`{}` takes {} argument(s)", words[0], n - 1),
                    ));
                }
                Ok(())
            };
            match words[0] {
                "name" => {
                    arity(2)?;
                    s.name = words[1].to_string();
                }
                "seed" => {
                    arity(2)?;
                    s.seed = num(1)?;
                }
                "functionaries" => {
                    arity(2)?;
                    s.functionaries = num(1)? as u32;
                }
                "fee-rate" => {
                    arity(2)?;
                    s.fee_rate = num(1)?;
                }
                "denomination" => {
                    arity(2)?;
                    s.denomination = num(1)?;
                }
                "vmxos" => {
                    arity(2)?;
                    s.vmxos = num(1)? as u32;
                }
                "users" => {
                    arity(2)?;
                    s.users = num(1)? as u32;
                }
                "strategy" => {
                    arity(3)?;
                    let f = FunctionaryId(num(1)? as u32);
                    let kind = Strategy::parse(words[2])
                        .ok_or_else(|| err(line, format!("unknown strategy `{}`", words[2])))?;
                    s.strategies.insert(f, kind);
                }
                "leak" => {
                    arity(2)?;
                    if words[1] == "all" {
                        s.leaked.insert(FunctionaryId(u32::MAX));
                    } else {
                        s.leaked.insert(FunctionaryId(num(1)? as u32));
                    }
                }
                "timing" => {
                    arity(3)?;
                    let v = num(2)?;
                    let t = &mut s.timing;
                    match words[1] {
                        "window" => t.window = v,
                        "threshold" => t.threshold = v,
                        "fronting-deadline" => t.fronting_deadline = v,
                        "source-confirmations" => t.source_confirmations = v,
                        "secondary-confirmations" => t.secondary_confirmations = v,
                        "trace-len" => t.trace_len = v as usize,
                        "arity" => t.arity = v,
                        "fee-ppm" => t.fee_ppm = v,
                        other => {
                            return Err(err(
                                line,
                                format!(
                                    "unknown timing `{other}` (expected one of {})",
                                    TIMING_KEYS.join(", ")
                                ),
                            ))
                        }
                    }
                }
                "censor" => {
                    arity(4)?;
                    let w = CensorshipWindow {
                        party: FunctionaryId(num(1)? as u32),
                        start: num(2)?,
                        end: num(3)?,
                    };
                    if w.end < w.start {
                        return Err(err(line, "censorship window ends before it starts"));
                    }
                    s.censorship.push(w);
                }
                "mode" => match words.get(1).copied() {
                    Some("base") => {
                        arity(2)?;
                        s.mode = ConcurrencyMode::Base;
                    }
                    Some("parallel") => {
                        arity(6)?;
                        if words[2] != "t-sep" || words[4] != "p-max" {
                            return Err(err(line, "expected `mode parallel t-sep X p-max Y`"));
                        }
                        s.mode = ConcurrencyMode::Parallel {
                            t_sep: num(3)?,
                            p_max: num(5)?,
                        };
                    }
                    _ => return Err(err(line, "mode is `base` or `parallel`")),
                },
                "at" => {
                    let tick = num(1)?;
                    let action = match words.get(2).copied() {
                        Some("pegin") => {
                            arity(4)?;
                            Action::Pegin {
                                user: num(3)? as u32,
                            }
                        }
                        Some("pegout") => {
                            arity(4)?;
                            Action::Pegout {
                                user: num(3)? as u32,
                            }
                        }
                        Some("withdraw") => {
                            arity(4)?;
                            Action::Withdraw(FunctionaryId(num(3)? as u32))
                        }
                        Some("attack") => {
                            arity(3)?;
                            Action::Attack
                        }
                        Some(other) => return Err(err(line, format!("unknown action `{other}`"))),
                        None => return Err(err(line, "`at` needs an action")),
                    };
                    if s.actions.last().is_some_and(|(t, _)| *t > tick) {
                        return Err(err(line, "action ticks must be non-decreasing"));
                    }
                    s.actions.push((tick, action));
                }
                "end" => {
                    arity(2)?;
                    s.end = num(1)?;
                }
                other => return Err(err(line, format!("unknown directive `{other}`"))),
            }
        }
        if s.leaked.remove(&FunctionaryId(u32::MAX)) {
            s.leaked = s.functionary_ids().collect();
        }
        s.validate()?;
        Ok(s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "functionaries {}", self.functionaries)?;
        writeln!(f, "fee-rate {}", self.fee_rate)?;
        writeln!(f, "denomination {}", self.denomination)?;
        writeln!(f, "vmxos {}", self.vmxos)?;
        writeln!(f, "users {}", self.users)?;
        for (id, s) in &self.strategies {
            writeln!(f, "strategy {} {}", id.0, s.name())?;
        }
        for id in &self.leaked {
            writeln!(f, "leak {}", id.0)?;
        }
        let t = &self.timing;
        let values = [
            t.window,
            t.threshold,
            t.fronting_deadline,
            t.source_confirmations,
            t.secondary_confirmations,
            t.trace_len as u64,
            t.arity,
            t.fee_ppm,
        ];
        for (k, v) in TIMING_KEYS.iter().zip(values) {
            writeln!(f, "timing {k} {v}")?;
        }
        for w in &self.censorship {
            writeln!(f, "censor {} {} {}", w.party.0, w.start, w.end)?;
        }
        match self.mode {
            ConcurrencyMode::Base => writeln!(f, "mode base")?,
            ConcurrencyMode::Parallel { t_sep, p_max } => {
                writeln!(f, "mode parallel t-sep {t_sep} p-max {p_max}")?
            }
        }
        for (t, a) in &self.actions {
            match a {
                Action::Pegin { user } => writeln!(f, "at {t} pegin {user}")?,
                Action::Pegout { user } => writeln!(f, "at {t} pegout {user}")?,
                Action::Withdraw(id) => writeln!(f, "at {t} withdraw {}", id.0)?,
                Action::Attack => writeln!(f, "at {t} attack")?,
            }
        }
        writeln!(f, "end {}", self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
name sample
seed 9
functionaries 4
fee-rate 2
strategy 3 fork-prover
leak 1
timing threshold 30
censor 0 5 9
mode parallel t-sep 4 p-max 2
at 1 pegin 0
at 1 pegin 1
at 40 pegout 0
at 50 attack
end 300
";

    #[test]
    fn parses_every_directive() {
        let s = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.functionaries, 4);
        assert_eq!(s.strategy(FunctionaryId(3)), Strategy::ForkProver);
        assert_eq!(s.strategy(FunctionaryId(0)), Strategy::Honest);
        assert!(s.leaks_keys(FunctionaryId(1)));
        assert_eq!(s.timing.threshold, 30);
        assert_eq!(s.mode, ConcurrencyMode::Parallel { t_sep: 4, p_max: 2 });
        assert_eq!(s.actions.len(), 4);
        assert_eq!(s.end, 300);
    }

    #[test]
    fn display_round_trips() {
        let s = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(Scenario::parse(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("seed 1\nfunctionaries x\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Scenario::parse("at 5 pegin 0\nat 4 pegin 0\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Scenario::parse("strategy 0 wizard\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(Scenario::parse("at 1 pegin 7\n").is_err());
        assert!(Scenario::parse("functionaries 1\n").is_err());
    }

    #[test]
    fn leak_all_expands() {
        let s = Scenario::parse("functionaries 3\nleak all\n").unwrap();
        assert_eq!(s.leaked.len(), 3);
    }
}
