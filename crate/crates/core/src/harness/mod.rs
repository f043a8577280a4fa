//! Scenario runner, adversarial scenario generator, invariant checker and
//! parameter sweeps.

mod agents;
pub mod checker;
pub mod scenario;
pub mod strategy;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::CensorshipWindow;
use crate::econ::{
    max_parallelism, min_separation, render_deposit_csv, render_deposit_table,
    reproduce_deposit_table, DepositRow, TimingParams,
};
use crate::ids::{FunctionaryId, Sats, Tick};
use crate::protocol::log::{Body, Event, EventLog, Holder, RosterEntry};
use crate::protocol::{Bridge, ProtocolError};
use crate::txgraph::{Account, TemplateKind};

use self::agents::Agents;
use self::checker::{check_invariants, dispute_costs, Verdict};
pub use self::scenario::{Action, Scenario, ScenarioError, Timing};
pub use self::strategy::Strategy;

/// Seeded generator used for every random choice in a run.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3)";
/// Ticks a run may continue past its scripted end to let disputes settle.
pub const DRAIN_TICKS: Tick = 2_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] ScenarioError),
    #[error("bridge setup failed: {0}")]
    Setup(#[from] ProtocolError),
}

/// Executes a scenario and returns its event log.
pub fn simulate(s: &Scenario) -> Result<EventLog, RunError> {
    s.validate()?;
    let config = s.bridge_config();
    let roster = s
        .functionary_ids()
        .map(|f| RosterEntry {
            id: f,
            honest: s.strategy(f).is_honest() && !s.leaks_keys(f),
            strategy: s.strategy(f).name().to_string(),
            funds: config.functionary_funds,
        })
        .collect();
    let mut bridge = Bridge::new(config, roster, s.seed, RNG_ALGORITHM)?;
    let strategies = s.functionary_ids().map(|f| s.strategy(f)).collect();
    let mut agents = Agents::new(strategies, ChaCha8Rng::seed_from_u64(s.seed));
    let mut next = 0;
    loop {
        let now = bridge.now();
        while next < s.actions.len() && s.actions[next].0 <= now {
            apply_action(&mut bridge, &mut agents, s.actions[next].1);
            next += 1;
        }
        agents.act(&mut bridge);
        bridge.step();
        let scripted_done = now >= s.end && next == s.actions.len();
        if (scripted_done && bridge.is_quiescent()) || now >= s.end + DRAIN_TICKS {
            break;
        }
    }
    Ok(bridge.finish())
}

fn apply_action(bridge: &mut Bridge, agents: &mut Agents, a: Action) {
    log::debug!("tick {}: {a:?}", bridge.now());
    let result = match a {
        Action::Pegin { user } => {
            let amount = bridge.config.denomination;
            bridge.request_pegin(user, amount).map(|_| ())
        }
        Action::Pegout { user } => bridge.request_pegout(user).map(|_| ()),
        Action::Withdraw(f) => bridge.withdraw_deposit(f),
        Action::Attack => {
            agents.start_attack();
            Ok(())
        }
    };
    if let Err(e) = result {
        let (actor, action) = match a {
            Action::Pegin { user } => (Account::User(user), "pegin"),
            Action::Pegout { user } => (Account::User(user), "pegout"),
            Action::Withdraw(f) => (Account::Functionary(f), "withdraw"),
            Action::Attack => unreachable!(),
        };
        bridge.reject(Some(actor), action, e);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PegSummary {
    pub kind: String,
    pub id: u32,
    pub user: u32,
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub rng: String,
    pub ticks: Tick,
    pub events: usize,
    pub balances: Vec<(Holder, Sats)>,
    pub pegs: Vec<PegSummary>,
    pub slashed: Vec<FunctionaryId>,
    pub dispute_costs: BTreeMap<FunctionaryId, Sats>,
    pub required_deposit: Sats,
    pub deposit_sufficient: bool,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    /// Builds the report from a log alone.
    pub fn from_log(name: &str, events: &[Event]) -> RunReport {
        let (seed, rng, required_deposit) = match events.first().map(|e| &e.body) {
            Some(Body::Roster {
                seed,
                rng,
                required_deposit,
                ..
            }) => (*seed, rng.clone(), *required_deposit),
            _ => (0, String::new(), 0),
        };
        let mut pegs: Vec<PegSummary> = Vec::new();
        let mut slashed = Vec::new();
        let mut balances = Vec::new();
        for e in events {
            match &e.body {
                Body::Transaction {
                    template: TemplateKind::Locking,
                    payer: Account::User(u),
                    vmxo: Some(v),
                    ..
                } => {
                    pegs.push(PegSummary {
                        kind: "pegin".into(),
                        id: v.0,
                        user: *u,
                        outcome: "locked".into(),
                    });
                }
                Body::Minted { vmxo, .. } => {
                    set_outcome(&mut pegs, "pegin", vmxo.0, "minted".into())
                }
                Body::Burned { user, pegout, .. } => pegs.push(PegSummary {
                    kind: "pegout".into(),
                    id: *pegout,
                    user: *user,
                    outcome: "burned".into(),
                }),
                Body::Transaction {
                    template: TemplateKind::Fronting,
                    pegout: Some(p),
                    subject: Some(op),
                    ..
                } => set_outcome(&mut pegs, "pegout", *p, format!("paid by {op}")),
                Body::Transaction {
                    template: TemplateKind::Unlocking,
                    pegout: Some(p),
                    subject: Some(op),
                    ..
                } => set_outcome(&mut pegs, "pegout", *p, format!("paid by {op}, recovered")),
                Body::Invalidated {
                    pegout, operator, ..
                } => set_outcome(
                    &mut pegs,
                    "pegout",
                    *pegout,
                    format!("paid by {operator}, invalidated"),
                ),
                Body::Slashed { loser, .. } => slashed.push(*loser),
                Body::Final { balances: b, .. } => balances = b.clone(),
                _ => {}
            }
        }
        let verdicts = check_invariants(events);
        let deposit_sufficient = verdicts
            .iter()
            .find(|v| v.name == checker::COST_ATTRIBUTION)
            .is_some_and(|v| v.pass);
        RunReport {
            name: name.to_string(),
            seed,
            rng,
            ticks: events.last().map_or(0, |e| e.tick),
            events: events.len(),
            balances,
            pegs,
            slashed,
            dispute_costs: dispute_costs(events),
            required_deposit,
            deposit_sufficient,
            verdicts,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failed(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| !v.pass).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} seed {} rng {}",
            self.name, self.seed, self.rng
        );
        let _ = writeln!(out, "ticks {} events {}", self.ticks, self.events);
        for p in &self.pegs {
            let _ = writeln!(out, "{} {} user {}: {}", p.kind, p.id, p.user, p.outcome);
        }
        for (h, b) in self.balances.iter().filter(|(_, b)| *b > 0) {
            let _ = writeln!(out, "balance {h}: {b} sats");
        }
        for f in &self.slashed {
            let _ = writeln!(out, "slashed {f}");
        }
        for (f, c) in &self.dispute_costs {
            let _ = writeln!(out, "dispute costs {f}: {c} sats");
        }
        let _ = writeln!(
            out,
            "deposit {} sats, sufficient: {}",
            self.required_deposit,
            if self.deposit_sufficient { "yes" } else { "no" }
        );
        for v in &self.verdicts {
            let _ = writeln!(
                out,
                "{} {}: {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.name,
                v.detail
            );
        }
        out
    }
}

fn set_outcome(pegs: &mut [PegSummary], kind: &str, id: u32, outcome: String) {
    if let Some(p) = pegs.iter_mut().rev().find(|p| p.kind == kind && p.id == id) {
        p.outcome = outcome;
    }
}

pub fn run_scenario(s: &Scenario) -> Result<(RunReport, EventLog), RunError> {
    let log = simulate(s)?;
    Ok((RunReport::from_log(&s.name, log.events()), log))
}

/// Random single-adversary scenario: up to six functionaries, at most four
/// peg operations, censorship windows no longer than the watch threshold.
pub fn generate_scenario(seed: u64, adversary: Option<Strategy>) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let n = rng.gen_range(3..=6u32);
    let mut s = Scenario {
        name: format!("generated-{seed}"),
        seed,
        functionaries: n,
        fee_rate: [1, 5, 10, 20][rng.gen_range(0..4)],
        vmxos: 4,
        users: 2,
        ..Scenario::default()
    };
    let adversary =
        adversary.unwrap_or_else(|| Strategy::ALL[1 + rng.gen_range(0..Strategy::ALL.len() - 1)]);
    let bad = FunctionaryId(rng.gen_range(0..n));
    s.strategies.insert(bad, adversary);
    let ops = rng.gen_range(2..=4usize);
    let pegins = ops
        .div_ceil(2)
        .max(if adversary == Strategy::DoubleOperator {
            2
        } else {
            1
        });
    let pegouts = ops.saturating_sub(pegins);
    let mut actions = Vec::new();
    for i in 0..pegins {
        actions.push((
            1 + rng.gen_range(0..5) as Tick,
            Action::Pegin {
                user: (i % 2) as u32,
            },
        ));
    }
    for i in 0..pegouts {
        actions.push((
            30 + rng.gen_range(0..20) as Tick,
            Action::Pegout {
                user: (i % 2) as u32,
            },
        ));
    }
    actions.push((25 + rng.gen_range(0..30) as Tick, Action::Attack));
    actions.sort_by_key(|(t, _)| *t);
    s.actions = actions;
    let windows = rng.gen_range(0..=2);
    for _ in 0..windows {
        let party = FunctionaryId(rng.gen_range(0..n));
        let start = rng.gen_range(20..80);
        let len = rng.gen_range(1..=s.timing.threshold / 4);
        s.censorship.push(CensorshipWindow {
            party,
            start,
            end: start + len,
        });
    }
    s.end = 120;
    s
}

/// Grid for [`sweep`]: deposit axes and timing axes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub functionaries: Vec<u64>,
    pub fee_rates: Vec<u64>,
    pub t_total: Vec<u64>,
    pub t_min: Vec<u64>,
    pub t_max: Vec<u64>,
    pub t_force: Vec<u64>,
    pub t_safety: Vec<u64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("grid is empty")]
    Empty,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Grid, GridError> {
        let mut g = Grid::default();
        for (i, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            let key = words.next().unwrap();
            let values: Result<Vec<u64>, _> = words.map(str::parse).collect();
            let values = values.map_err(|_| GridError::Syntax {
                line: i + 1,
                message: format!("`{key}` takes whole numbers"),
            })?;
            let slot = match key {
                "functionaries" => &mut g.functionaries,
                "fee-rates" => &mut g.fee_rates,
                "t-total" => &mut g.t_total,
                "t-min" => &mut g.t_min,
                "t-max" => &mut g.t_max,
                "t-force" => &mut g.t_force,
                "t-safety" => &mut g.t_safety,
                other => {
                    return Err(GridError::Syntax {
                        line: i + 1,
                        message: format!("unknown axis `{other}`"),
                    })
                }
            };
            slot.extend(values);
        }
        let deposit = !g.functionaries.is_empty() && !g.fee_rates.is_empty();
        let timing = !g.t_min.is_empty();
        if !deposit && !timing {
            return Err(GridError::Empty);
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingRow {
    pub t_total: u64,
    pub t_min: u64,
    pub t_max: u64,
    pub t_force: u64,
    pub t_safety: u64,
    pub t_sep: Option<u64>,
    pub p_max: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub deposits: Vec<DepositRow>,
    pub timing: Vec<TimingRow>,
}

fn axis(v: &[u64], default: u64) -> Vec<u64> {
    if v.is_empty() {
        vec![default]
    } else {
        v.to_vec()
    }
}

/// Deposit rows over `functionaries × fee_rates` and timing rows over the
/// timing axes. Rows come back in grid order whatever the thread count.
pub fn sweep(grid: &Grid) -> SweepReport {
    let deposits = if grid.functionaries.is_empty() || grid.fee_rates.is_empty() {
        Vec::new()
    } else {
        reproduce_deposit_table(&grid.fee_rates, &grid.functionaries)
    };
    let mut cells = Vec::new();
    if !grid.t_min.is_empty() {
        for &t_total in &axis(&grid.t_total, 0) {
            for &t_min in &grid.t_min {
                for &t_max in &axis(&grid.t_max, t_min) {
                    for &t_force in &axis(&grid.t_force, 0) {
                        for &t_safety in &axis(&grid.t_safety, 0) {
                            cells.push(TimingParams {
                                t_max,
                                t_min,
                                t_force,
                                t_safety,
                                t_total,
                            });
                        }
                    }
                }
            }
        }
    }
    let timing = cells
        .par_iter()
        .map(|t| TimingRow {
            t_total: t.t_total,
            t_min: t.t_min,
            t_max: t.t_max,
            t_force: t.t_force,
            t_safety: t.t_safety,
            t_sep: t.validate().ok().map(|_| min_separation(t)),
            p_max: max_parallelism(t.t_total, t.t_min).ok(),
        })
        .collect();
    SweepReport { deposits, timing }
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.deposits.is_empty() {
            out.push_str(&render_deposit_table(&self.deposits));
            out.push('\n');
            out.push_str(&render_deposit_csv(&self.deposits));
        }
        if !self.timing.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "{:>8} {:>6} {:>6} {:>8} {:>9} {:>6} {:>6}",
                "t_total", "t_min", "t_max", "t_force", "t_safety", "t_sep", "p_max"
            );
            let show = |v: Option<u64>| v.map_or("-".to_string(), |x| x.to_string());
            for r in &self.timing {
                let _ = writeln!(
                    out,
                    "{:>8} {:>6} {:>6} {:>8} {:>9} {:>6} {:>6}",
                    r.t_total,
                    r.t_min,
                    r.t_max,
                    r.t_force,
                    r.t_safety,
                    show(r.t_sep),
                    show(r.p_max)
                );
            }
        }
        out
    }
}

/// Runs many scenarios in parallel; results keep input order.
pub fn run_many(scenarios: &[Scenario]) -> Vec<Result<(RunReport, EventLog), String>> {
    scenarios
        .par_iter()
        .map(|s| run_scenario(s).map_err(|e| e.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g =
            Grid::parse("functionaries 10 25\nfee-rates 5\n# timing\nt-total 50 100\nt-min 10\n")
                .unwrap();
        assert_eq!(g.functionaries, vec![10, 25]);
        assert_eq!(g.t_total, vec![50, 100]);
        assert_eq!(Grid::parse("# nothing\n"), Err(GridError::Empty));
        assert!(matches!(
            Grid::parse("fee-rates x\n"),
            Err(GridError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn single_cell_sweep_has_one_row() {
        let r = sweep(&Grid::parse("functionaries 10\nfee-rates 5\n").unwrap());
        assert_eq!(r.deposits.len(), 1);
        assert!(r.timing.is_empty());
    }

    #[test]
    fn parallelism_sweep() {
        let r = sweep(&Grid::parse("t-total 50 100\nt-min 10\n").unwrap());
        let p: Vec<_> = r.timing.iter().map(|t| t.p_max).collect();
        assert_eq!(p, vec![Some(5), Some(10)]);
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        for seed in 0..50 {
            let a = generate_scenario(seed, None);
            assert_eq!(a, generate_scenario(seed, None));
            a.validate().unwrap();
            assert_eq!(a.strategies.len(), 1);
            assert!(a.functionaries <= 6);
            let ops = a
                .actions
                .iter()
                .filter(|(_, x)| matches!(x, Action::Pegin { .. } | Action::Pegout { .. }))
                .count();
            assert!(ops <= 4);
            assert!(a
                .censorship
                .iter()
                .all(|w| w.end - w.start <= a.timing.threshold));
        }
    }
}
