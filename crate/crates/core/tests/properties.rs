mod common;

use proptest::prelude::*;

use common::{open_game, P, V};
use union_core::dispute::{
    griefing_verifier_move, honest_verifier_move, prover_move, ChallengeKind, Corruption, Move, Role,
};
use union_core::econ::{max_parallelism, required_deposit, search_rounds, CostTable, DepositParams};
use union_core::harness::{generate_scenario, run_scenario, Scenario};

fn play(
    mut g: union_core::dispute::DisputeGame,
    local: &union_core::dispute::ExecutionTrace,
    grief: Option<usize>,
) -> union_core::ids::FunctionaryId {
    let mut now = 1;
    g.apply(now, V, Move::Challenge(ChallengeKind::Execution)).unwrap();
    while !g.is_terminal() {
        now += 1;
        let (who, mv) = match g.turn().unwrap() {
            Role::Prover => (P, prover_move(&g).unwrap()),
            Role::Verifier => match grief {
                Some(pick) => (V, griefing_verifier_move(&g, pick.wrapping_mul(now as usize)).unwrap()),
                None => (V, honest_verifier_move(&g, local).unwrap()),
            },
        };
        g.apply(now, who, mv).unwrap();
    }
    g.outcome().unwrap().loser
}

proptest! {
    #[test]
    fn deposit_is_worst_case_times_fee_times_others(n in 1u64..500, x in 1u64..1000) {
        let d = required_deposit(&DepositParams::new(n, x), &CostTable::MEASURED);
        prop_assert_eq!(d, 270_332 * x * (n - 1));
    }

    #[test]
    fn search_rounds_is_smallest_covering_power(arity in 2u64..9, steps in 1u64..100_000) {
        let r = search_rounds(arity, steps) as u32;
        prop_assert!(arity.pow(r) >= steps);
        if r > 0 {
            prop_assert!(arity.pow(r - 1) < steps);
        }
    }

    #[test]
    fn max_parallelism_is_a_floor(t_total in 0u64..10_000, t_min in 1u64..500) {
        let p = max_parallelism(t_total, t_min).unwrap();
        prop_assert!(p * t_min <= t_total && t_total < (p + 1) * t_min);
    }

    #[test]
    fn any_single_corruption_loses(len in 1usize..80, arity in 2u64..6, pos in 1usize..80, read in any::<bool>()) {
        let pos = 1 + (pos - 1) % len;
        let c = if read { Corruption::Read(pos) } else { Corruption::State(pos) };
        let (g, local) = open_game(len, arity, Some(c), 1_000_000);
        prop_assert_eq!(play(g, &local, None), P);
    }

    #[test]
    fn griefing_never_beats_an_honest_trace(len in 1usize..80, arity in 2u64..6, pick in any::<usize>()) {
        let (g, local) = open_game(len, arity, None, 1_000_000);
        prop_assert_eq!(play(g, &local, Some(pick)), V);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_scenarios_keep_every_invariant(seed in any::<u64>()) {
        let s = generate_scenario(seed, None);
        prop_assert_eq!(Scenario::parse(&s.to_string()).unwrap(), s.clone());
        let (report, _) = run_scenario(&s).unwrap();
        prop_assert!(report.passed(), "{}", report.render());
    }
}
