//! Whole-run properties over randomized scenarios in all three modes.

use comma_core::agents::{AttackerStrategy, Discrete, Outcome};
use comma_core::audit::{audit_trace, AuditInput};
use comma_core::chain::{Event, MinerKind};
use comma_core::metrics::{Check, Snapshot};
use comma_core::model::{Amount, ProtocolMode, Ratio};
use comma_core::protocol::RevealRejected;
use comma_core::scenario::{parse_config, run_scenario, validate, ScenarioConfig};
use proptest::prelude::*;

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    let mode = prop_oneof![
        Just(ProtocolMode::Baseline),
        Just(ProtocolMode::CommaV1),
        Just(ProtocolMode::CommaV2)
    ];
    (
        mode,
        any::<u64>(),
        (5u64..25, 0u32..4, 3usize..9),
        (
            10_000u128..2_000_000,
            10_000u128..2_000_000,
            prop_oneof![Just(0u16), Just(30)],
        ),
        (0u128..4, 0u128..4, 0u128..4),
        (
            1u32..5,
            0.2f64..1.0,
            prop_oneof![Just(0.0), Just(0.5), Just(1.0)],
        ),
        (any::<bool>(), 0u8..3, any::<bool>(), any::<bool>()),
    )
        .prop_map(
            |(mode, seed, (blocks, grace, max_txs), (rx, ry, fee_bps), fees, honest, flags)| {
                let (attack, miner, race, reveal_on_miss) = flags;
                let mut cfg = parse_config(br#"{"mode":"baseline"}"#).unwrap();
                cfg.mode = mode;
                cfg.seed = seed;
                cfg.blocks = blocks;
                cfg.grace_blocks = grace;
                cfg.max_block_txs = max_txs;
                cfg.pool.reserve_x = Amount(rx);
                cfg.pool.reserve_y = Amount(ry);
                cfg.pool.fee_bps = fee_bps;
                cfg.fees.direct_swap = Amount(fees.0);
                cfg.fees.order_request = Amount(fees.1);
                cfg.fees.reveal = Amount(fees.2);
                cfg.fee_to_x_rate = if seed % 2 == 0 {
                    Ratio::ONE
                } else {
                    Ratio { num: 3, den: 2 }
                };
                cfg.honest.population = honest.0;
                cfg.honest.order_rate = honest.1;
                cfg.honest.direction_dist = honest.2;
                cfg.honest.amount_dist = Discrete(vec![
                    Outcome {
                        value: Amount(rx / 100 + 1),
                        p: 0.5,
                    },
                    Outcome {
                        value: Amount(rx / 30 + 1),
                        p: 0.5,
                    },
                ]);
                cfg.honest.tolerance_dist = Discrete(vec![
                    Outcome { value: 0, p: 0.25 },
                    Outcome {
                        value: 300,
                        p: 0.25,
                    },
                    Outcome { value: 800, p: 0.5 },
                ]);
                cfg.miner = if miner == 0 {
                    MinerKind::HonestFeePriority
                } else {
                    MinerKind::MevColluding
                };
                if attack {
                    cfg.attacker.strategy = match mode {
                        ProtocolMode::Baseline if seed % 3 == 0 => {
                            AttackerStrategy::BaselineFrontOnly
                        }
                        ProtocolMode::Baseline => AttackerStrategy::BaselineSandwich,
                        ProtocolMode::CommaV1 => AttackerStrategy::CommaV1Adaptive,
                        ProtocolMode::CommaV2 => AttackerStrategy::CommaV2Guessing,
                    };
                    cfg.attacker.wins_inclusion_race =
                        race || cfg.miner == MinerKind::HonestFeePriority;
                    cfg.attacker.reveal_on_miss = reveal_on_miss;
                    cfg.attacker.search_step = Amount(rx / 200 + 1);
                    if mode == ProtocolMode::CommaV2 {
                        cfg.attacker.guess_space = Some(cfg.honest.buckets().len() as u32);
                    }
                }
                validate(&cfg).unwrap();
                cfg
            },
        )
}

/// Sum over accounts and pool of `x * den + y * num`, fees excluded.
fn scaled_value(s: &Snapshot, num: u128, den: u128) -> u128 {
    let pool = s.pool.reserve_x.get() * den + s.pool.reserve_y.get() * num;
    s.accounts
        .values()
        .map(|a| a.balance_x.get() * den + a.balance_y.get() * num)
        .sum::<u128>()
        + pool
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn runs_satisfy_every_invariant(cfg in scenario()) {
        let out = run_scenario(&cfg).unwrap();
        prop_assert_eq!(out.report.conservation_check, Check::Pass);
        let stats = audit_trace(&AuditInput {
            mode: cfg.mode,
            initial_pool: out.initial.pool,
            final_pool: out.last.pool,
            trace: &out.trace,
            reveal_on_miss: cfg.attacker.reveal_on_miss,
        });
        prop_assert!(stats.is_ok(), "{:?}", stats);

        // zero-sum at the reference price, exactly
        let (num, den) = (cfg.pool.reserve_x.get(), cfg.pool.reserve_y.get());
        prop_assert_eq!(scaled_value(&out.initial, num, den), scaled_value(&out.last, num, den));

        // honest traffic alone never trips a commitment check
        if cfg.attacker.strategy == AttackerStrategy::None {
            let mismatch = Event::RevealRejected {
                reason: RevealRejected::CommitMismatch,
            };
            prop_assert!(!out.trace.iter().any(|r| r.event == mismatch));
        }
        if cfg.mode == ProtocolMode::Baseline {
            prop_assert_eq!(out.report.expired_token_count, 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn runs_are_deterministic(cfg in scenario()) {
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        prop_assert_eq!(a.report, b.report);
        prop_assert_eq!(a.trace, b.trace);
    }
}
