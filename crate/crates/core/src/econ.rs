//! Security-deposit and parallelism arithmetic.
//!
//! The deposit a functionary must post is the fee cost of the most expensive
//! challenge-response path, times the fee rate, times the number of
//! counterparties that could each force one such game.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::Sats;

pub const SATS_PER_BTC: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EconError {
    #[error("cost table entry `{0}` must be positive")]
    NonPositiveCost(&'static str),
    #[error("at least one functionary is required")]
    NoFunctionaries,
    #[error("fee rate must be positive")]
    ZeroFeeRate,
    #[error("arity must be 2, 4 or 8 (got {0})")]
    BadArity(u32),
    #[error("timing parameters invalid: {0}")]
    BadTiming(&'static str),
}

/// vByte cost of each transaction type in the challenge-response game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub commit_proof: u64,
    pub challenge: u64,
    pub publish_hashes_per_step: u64,
    pub publish_choice_per_step: u64,
    pub publish_full_trace: u64,
    pub publish_read_trace: u64,
    pub sha256_computation: u64,
}

impl CostTable {
    /// Measured sizes for a 4-ary search over the current design's trace bound.
    pub const MEASURED: CostTable = CostTable {
        commit_proof: 2513,
        challenge: 653,
        publish_hashes_per_step: 5118,
        publish_choice_per_step: 205,
        publish_full_trace: 3105,
        publish_read_trace: 1063,
        sha256_computation: 97780,
    };

    pub fn validate(&self) -> Result<(), EconError> {
        let entries = [
            ("commit_proof", self.commit_proof),
            ("challenge", self.challenge),
            ("publish_hashes_per_step", self.publish_hashes_per_step),
            ("publish_choice_per_step", self.publish_choice_per_step),
            ("publish_full_trace", self.publish_full_trace),
            ("publish_read_trace", self.publish_read_trace),
            ("sha256_computation", self.sha256_computation),
        ];
        for (name, v) in entries {
            if v == 0 {
                return Err(EconError::NonPositiveCost(name));
            }
        }
        Ok(())
    }
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::MEASURED
    }
}

/// Search slots per n-ary search in the costed worst case.
pub const DEFAULT_SEARCH_STEPS: u64 = 16;

/// Most expensive path through one challenge-response game: commitment,
/// challenge, the main and read searches, both trace publications and the
/// on-chain hash computation at the end of the read search.
///
/// Hash publications appear `2·hash_steps − 1` times and step choices
/// `2·choice_steps` times.
pub fn worst_case_vbytes(table: &CostTable, hash_steps: u64, choice_steps: u64) -> u64 {
    let hash_rounds = (2 * hash_steps).saturating_sub(1);
    let choice_rounds = 2 * choice_steps;
    table.commit_proof
        + table.challenge
        + table.publish_hashes_per_step * hash_rounds
        + table.publish_choice_per_step * choice_rounds
        + table.publish_full_trace
        + table.publish_read_trace
        + table.sha256_computation
}

/// Number of rounds an `arity`-way search needs over `steps` positions.
pub fn search_rounds(arity: u64, steps: u64) -> u64 {
    assert!(arity >= 2, "arity must be at least 2");
    let mut rounds = 0;
    let mut width = steps.max(1);
    while width > 1 {
        width = width.div_ceil(arity);
        rounds += 1;
    }
    rounds
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositParams {
    pub n_functionaries: u64,
    /// sats per vByte
    pub fee_rate: u64,
    pub arity: u32,
    pub hash_steps: u64,
    pub choice_steps: u64,
}

impl DepositParams {
    pub fn new(n_functionaries: u64, fee_rate: u64) -> DepositParams {
        DepositParams {
            n_functionaries,
            fee_rate,
            arity: 4,
            hash_steps: DEFAULT_SEARCH_STEPS,
            choice_steps: DEFAULT_SEARCH_STEPS,
        }
    }

    pub fn validate(&self) -> Result<(), EconError> {
        if self.n_functionaries == 0 {
            return Err(EconError::NoFunctionaries);
        }
        if self.fee_rate == 0 {
            return Err(EconError::ZeroFeeRate);
        }
        if ![2, 4, 8].contains(&self.arity) {
            return Err(EconError::BadArity(self.arity));
        }
        Ok(())
    }
}

/// Deposit covering `N − 1` worst-case games at the given fee rate.
pub fn required_deposit(params: &DepositParams, table: &CostTable) -> Sats {
    worst_case_vbytes(table, params.hash_steps, params.choice_steps)
        * params.fee_rate
        * params.n_functionaries.saturating_sub(1)
}

/// Count of challenge-response protocols a single functionary could be
/// dragged into across both roles. Informational only; the deposit formula
/// covers `N − 1`.
pub fn protocols_touching_one_functionary(n: u64) -> u64 {
    2 * n.saturating_sub(1)
}

/// Fixed-point BTC rendering with eight decimals.
pub fn format_btc(sats: Sats) -> String {
    format!("{}.{:08}", sats / SATS_PER_BTC, sats % SATS_PER_BTC)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositRow {
    pub functionaries: u64,
    pub fee_rate: u64,
    pub vbytes: u64,
    pub deposit_sats: Sats,
}

impl DepositRow {
    pub fn btc(&self) -> String {
        format_btc(self.deposit_sats)
    }
}

/// One row per `(N, fee rate)`, N-major.
pub fn reproduce_deposit_table(fee_rates: &[u64], ns: &[u64]) -> Vec<DepositRow> {
    let table = CostTable::MEASURED;
    let vbytes = worst_case_vbytes(&table, DEFAULT_SEARCH_STEPS, DEFAULT_SEARCH_STEPS);
    ns.iter()
        .flat_map(|&n| {
            fee_rates.iter().map(move |&x| DepositRow {
                functionaries: n,
                fee_rate: x,
                vbytes,
                deposit_sats: required_deposit(&DepositParams::new(n, x), &table),
            })
        })
        .collect()
}

pub fn render_deposit_table(rows: &[DepositRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>13} | {:>22} | {:>18}",
        "Functionaries", "Fee rate (sats/vByte)", "Total amount (BTC)"
    );
    let _ = writeln!(out, "{}", "-".repeat(13 + 3 + 22 + 3 + 18));
    for r in rows {
        let _ = writeln!(
            out,
            "{:>13} | {:>22} | {:>18}",
            r.functionaries,
            r.fee_rate,
            r.btc()
        );
    }
    out
}

pub fn render_deposit_csv(rows: &[DepositRow]) -> String {
    let mut out = String::from("functionaries,fee_rate,vbytes,deposit_sats,deposit_btc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.functionaries,
            r.fee_rate,
            r.vbytes,
            r.deposit_sats,
            r.btc()
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingParams {
    pub t_max: u64,
    pub t_min: u64,
    pub t_force: u64,
    pub t_safety: u64,
    pub t_total: u64,
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), EconError> {
        if self.t_min == 0 {
            return Err(EconError::BadTiming("t_min must be positive"));
        }
        if self.t_max < self.t_min {
            return Err(EconError::BadTiming("t_max must be at least t_min"));
        }
        Ok(())
    }
}

/// Minimum spacing between an operator's consecutive peg-outs so a
/// force-close on the first lands before the next one matures.
pub fn min_separation(t: &TimingParams) -> u64 {
    (t.t_max - t.t_min) + t.t_force + t.t_safety
}

pub fn max_parallelism(t_total: u64, t_min: u64) -> Result<u64, EconError> {
    if t_min == 0 {
        return Err(EconError::BadTiming("t_min must be positive"));
    }
    Ok(t_total / t_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measured_worst_case() {
        assert_eq!(
            worst_case_vbytes(&CostTable::MEASURED, 16, 16),
            2513 + 653 + 5118 * 31 + 205 * 32 + 3105 + 1063 + 97780
        );
        assert_eq!(worst_case_vbytes(&CostTable::MEASURED, 16, 16), 270_332);
    }

    #[test]
    fn zero_table_costs_nothing() {
        let zero = CostTable {
            commit_proof: 0,
            challenge: 0,
            publish_hashes_per_step: 0,
            publish_choice_per_step: 0,
            publish_full_trace: 0,
            publish_read_trace: 0,
            sha256_computation: 0,
        };
        assert_eq!(worst_case_vbytes(&zero, 16, 16), 0);
        assert_eq!(
            zero.validate(),
            Err(EconError::NonPositiveCost("commit_proof"))
        );
    }

    #[test]
    fn four_step_search() {
        // 7 hash publications, 8 choices.
        let expected = 2513 + 653 + 5118 * 7 + 205 * 8 + 3105 + 1063 + 97780;
        assert_eq!(worst_case_vbytes(&CostTable::MEASURED, 4, 4), expected);
    }

    #[test]
    fn deposit_examples() {
        let t = CostTable::MEASURED;
        assert_eq!(required_deposit(&DepositParams::new(10, 5), &t), 12_164_940);
        assert_eq!(format_btc(12_164_940), "0.12164940");
        assert_eq!(required_deposit(&DepositParams::new(1, 7), &t), 0);
        assert_eq!(
            required_deposit(&DepositParams::new(100, 30), &t),
            802_886_040
        );
        assert_eq!(format_btc(802_886_040), "8.02886040");
    }

    #[test]
    fn deposit_params_validation() {
        assert!(DepositParams::new(3, 5).validate().is_ok());
        assert_eq!(
            DepositParams::new(0, 5).validate(),
            Err(EconError::NoFunctionaries)
        );
        assert_eq!(
            DepositParams::new(3, 0).validate(),
            Err(EconError::ZeroFeeRate)
        );
        let mut p = DepositParams::new(3, 5);
        p.arity = 3;
        assert_eq!(p.validate(), Err(EconError::BadArity(3)));
    }

    #[test]
    fn search_round_counts() {
        assert_eq!(search_rounds(4, 16), 2);
        assert_eq!(search_rounds(2, 64), 6);
        assert_eq!(search_rounds(4, 17), 3);
        assert_eq!(search_rounds(4, 1), 0);
        assert_eq!(search_rounds(4, 4u64.pow(16)), 16);
    }

    #[test]
    fn timing_formulas() {
        let t = |t_max, t_min, t_force, t_safety| TimingParams {
            t_max,
            t_min,
            t_force,
            t_safety,
            t_total: 0,
        };
        assert_eq!(min_separation(&t(10, 4, 2, 1)), 9);
        assert_eq!(min_separation(&t(7, 7, 0, 0)), 0);
        assert_eq!(min_separation(&t(20, 5, 3, 2)), 20);
        assert_eq!(max_parallelism(160, 16), Ok(10));
        assert_eq!(max_parallelism(105, 10), Ok(10));
        assert_eq!(max_parallelism(9, 10), Ok(0));
        assert!(max_parallelism(9, 0).is_err());
        assert!(t(3, 4, 0, 0).validate().is_err());
    }

    #[test]
    fn deposit_rendering() {
        let rows = reproduce_deposit_table(&[5], &[10]);
        assert_eq!(rows.len(), 1);
        assert!(render_deposit_table(&rows).contains("0.12164940"));
        assert!(render_deposit_csv(&rows).contains("10,5,270332,12164940,0.12164940"));
    }
}
