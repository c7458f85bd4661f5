//! Randomized operation sequences against the order queue.

use std::collections::{BTreeMap, BTreeSet};

use comma_core::model::{AccountId, Amount, Direction, TradeOrder};
use comma_core::protocol::{compute_commitment, QueueMode, QueueState};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Request {
        who: u8,
    },
    /// `forge` swaps in a different order than the one committed to.
    Reveal {
        seq: u8,
        as_owner: bool,
        forge: bool,
    },
    Advance,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..3).prop_map(|who| Op::Request { who }),
        (0u8..12, any::<bool>(), any::<bool>()).prop_map(|(seq, as_owner, forge)| Op::Reveal {
            seq,
            as_owner,
            forge
        }),
        Just(Op::Advance),
    ]
}

fn account(i: u8) -> AccountId {
    AccountId::new(format!("acct{i}")).unwrap()
}

fn intended(owner: &AccountId, seq: u64) -> TradeOrder {
    TradeOrder::new(
        owner.clone(),
        Direction::XForY,
        Amount(u128::from(seq) + 1),
        Amount(0),
        seq,
    )
    .unwrap()
}

/// Executions as (seq, order) in emission order, plus expired seqs.
#[derive(Default, Debug)]
struct Log {
    executed: Vec<(u64, TradeOrder)>,
    expired: Vec<u64>,
}

fn drive(mode: QueueMode, grace: u32, ops: &[Op]) -> (Log, QueueState) {
    let mut queue = QueueState::new(mode, grace);
    let mut owners: BTreeMap<u64, AccountId> = BTreeMap::new();
    let mut log = Log::default();
    let mut height = 1;
    for op in ops {
        match op {
            Op::Request { who } => {
                let owner = account(*who);
                let seq = queue.next_seq();
                let commitment =
                    (mode == QueueMode::V2).then(|| compute_commitment(&intended(&owner, seq)));
                let token = queue
                    .handle_order_request(&owner, commitment, height)
                    .unwrap();
                assert_eq!(token.seq, seq);
                owners.insert(seq, owner);
            }
            Op::Reveal {
                seq,
                as_owner,
                forge,
            } => {
                let seq = u64::from(*seq);
                let owner = owners.get(&seq).cloned().unwrap_or_else(|| account(9));
                let submitter = if *as_owner { owner.clone() } else { account(7) };
                let mut order = intended(&submitter, seq);
                if *forge {
                    order.amount_in = Amount(999);
                }
                let _ = queue.handle_reveal(&submitter, seq, &order);
            }
            Op::Advance => {
                let out = queue.advance_turn(height);
                log.executed.extend(out.executable);
                log.expired.extend(out.expired);
                height += 1;
            }
        }
        queue.check_invariants().unwrap();
    }
    (log, queue)
}

fn honest_only(ops: &[Op]) -> Vec<Op> {
    ops.iter()
        .map(|op| match op {
            Op::Reveal { seq, .. } => Op::Reveal {
                seq: *seq,
                as_owner: true,
                forge: false,
            },
            other => other.clone(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn execution_is_monotonic_and_unique(
        ops in prop::collection::vec(op(), 0..60),
        grace in 0u32..4,
        v2 in any::<bool>(),
    ) {
        let mode = if v2 { QueueMode::V2 } else { QueueMode::V1 };
        let (log, _) = drive(mode, grace, &ops);
        let seqs: Vec<u64> = log.executed.iter().map(|(s, _)| *s).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
        let expired: BTreeSet<u64> = log.expired.iter().copied().collect();
        prop_assert_eq!(expired.len(), log.expired.len());
        prop_assert!(seqs.iter().all(|s| !expired.contains(s)));
    }

    #[test]
    fn v2_executes_only_committed_orders(
        ops in prop::collection::vec(op(), 0..60),
        grace in 0u32..4,
    ) {
        let (log, queue) = drive(QueueMode::V2, grace, &ops);
        for (seq, order) in &log.executed {
            let token = queue.token(*seq).unwrap();
            prop_assert_eq!(token.commitment, Some(compute_commitment(order)));
            prop_assert_eq!(&order.trader, &token.owner);
        }
    }

    #[test]
    fn v1_and_v2_agree_on_honest_traffic(
        ops in prop::collection::vec(op(), 0..60),
        grace in 0u32..4,
    ) {
        let ops = honest_only(&ops);
        let (a, _) = drive(QueueMode::V1, grace, &ops);
        let (b, _) = drive(QueueMode::V2, grace, &ops);
        prop_assert_eq!(a.executed, b.executed);
        prop_assert_eq!(a.expired, b.expired);
    }
}
