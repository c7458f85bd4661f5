//! Per-run accounting over the event trace: attacker PnL, victim slippage,
//! latency, queue attrition and conservation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::PoolState;
use crate::chain::{Event, TraceRecord};
use crate::model::{
    Account, AccountId, Amount, Height, MathError, ProtocolMode, Ratio, RoleTag, TxId,
};
use crate::protocol::RevealRejected;

/// Marginal price of Y in X (`reserve_x / reserve_y`) fixed at run start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePrice {
    pub num: u128,
    pub den: u128,
}

impl ReferencePrice {
    pub fn of_pool(pool: &PoolState) -> Self {
        Self {
            num: pool.reserve_x.get(),
            den: pool.reserve_y.get(),
        }
    }

    /// X value of `y` units of Y, floored.
    pub fn y_in_x(&self, y: Amount) -> Result<Amount, MathError> {
        Ratio::new(self.num, self.den)?.mul_floor(y)
    }

    /// Y value of `x` units of X, floored.
    pub fn x_in_y(&self, x: Amount) -> Result<Amount, MathError> {
        Ratio::new(self.den, self.num)?.mul_floor(x)
    }
}

/// `balance_x + floor(balance_y * num / den)`. The fee balance is not part
/// of the portfolio.
pub fn value_portfolio(account: &Account, reference: &ReferencePrice) -> Result<i128, MathError> {
    account
        .balance_x
        .checked_add(reference.y_in_x(account.balance_y)?)?
        .to_signed()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Pass,
    Fail,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Check::Pass => "pass",
            Check::Fail => "fail",
        })
    }
}

/// Flat per-run report. Field order is the JSON and CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub seed: u64,
    pub mode: ProtocolMode,
    pub blocks_simulated: u64,
    /// Change in the attacker's X+Y portfolio at the reference price.
    pub attacker_trade_pnl: i128,
    /// Fee denomination spent by the attacker.
    pub attacker_fees_paid: Amount,
    /// `attacker_fees_paid` converted to X at the configured rate.
    pub attacker_fee_spend_x: i128,
    /// Trade PnL minus fee spend.
    pub attacker_pnl: i128,
    pub sandwich_success_count: u64,
    pub honest_orders_executed: u64,
    pub victim_mean_slippage_bps: Option<f64>,
    pub victim_worst_slippage_bps: Option<i128>,
    pub mean_latency_blocks: Option<f64>,
    pub expired_token_count: u64,
    pub rejected_reveal_no_such_token: u64,
    pub rejected_reveal_not_owner: u64,
    pub rejected_reveal_commit_mismatch: u64,
    pub rejected_reveal_already_revealed: u64,
    pub conservation_check: Check,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 19] = [
        "run_id",
        "seed",
        "mode",
        "blocks_simulated",
        "attacker_trade_pnl",
        "attacker_fees_paid",
        "attacker_fee_spend_x",
        "attacker_pnl",
        "sandwich_success_count",
        "honest_orders_executed",
        "victim_mean_slippage_bps",
        "victim_worst_slippage_bps",
        "mean_latency_blocks",
        "expired_token_count",
        "rejected_reveal_no_such_token",
        "rejected_reveal_not_owner",
        "rejected_reveal_commit_mismatch",
        "rejected_reveal_already_revealed",
        "conservation_check",
    ];

    /// Values in [`Self::COLUMNS`] order; `None` becomes an empty cell.
    pub fn csv_values(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        vec![
            self.run_id.clone(),
            self.seed.to_string(),
            self.mode.as_str().to_string(),
            self.blocks_simulated.to_string(),
            self.attacker_trade_pnl.to_string(),
            self.attacker_fees_paid.to_string(),
            self.attacker_fee_spend_x.to_string(),
            self.attacker_pnl.to_string(),
            self.sandwich_success_count.to_string(),
            self.honest_orders_executed.to_string(),
            opt(&self.victim_mean_slippage_bps),
            opt(&self.victim_worst_slippage_bps),
            opt(&self.mean_latency_blocks),
            self.expired_token_count.to_string(),
            self.rejected_reveal_no_such_token.to_string(),
            self.rejected_reveal_not_owner.to_string(),
            self.rejected_reveal_commit_mismatch.to_string(),
            self.rejected_reveal_already_revealed.to_string(),
            self.conservation_check.to_string(),
        ]
    }

    pub fn rejected_reveals(&self, reason: RevealRejected) -> u64 {
        match reason {
            RevealRejected::NoSuchToken => self.rejected_reveal_no_such_token,
            RevealRejected::NotOwner => self.rejected_reveal_not_owner,
            RevealRejected::CommitMismatch => self.rejected_reveal_commit_mismatch,
            RevealRejected::AlreadyRevealed => self.rejected_reveal_already_revealed,
        }
    }
}

/// Balances and pool at one block boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub accounts: BTreeMap<AccountId, Account>,
    pub pool: PoolState,
    pub collected_fees: Amount,
}

impl Snapshot {
    fn totals(&self) -> Option<[u128; 3]> {
        let mut t = [
            self.pool.reserve_x.get(),
            self.pool.reserve_y.get(),
            self.collected_fees.get(),
        ];
        for a in self.accounts.values() {
            t[0] = t[0].checked_add(a.balance_x.get())?;
            t[1] = t[1].checked_add(a.balance_y.get())?;
            t[2] = t[2].checked_add(a.fee_balance.get())?;
        }
        Some(t)
    }
}

pub struct ReportInput<'a> {
    pub run_id: String,
    pub seed: u64,
    pub mode: ProtocolMode,
    pub blocks: u64,
    pub trace: &'a [TraceRecord],
    pub initial: &'a Snapshot,
    pub last: &'a Snapshot,
    pub reference: ReferencePrice,
    pub fee_to_x: Ratio,
    pub attacker: Option<&'a AccountId>,
}

fn bps_shortfall(expected: Amount, realized: Amount) -> Result<i128, MathError> {
    let expected = expected.to_signed()?;
    if expected == 0 {
        return Ok(0);
    }
    let diff = expected - realized.to_signed()?;
    Ok((diff.checked_mul(10_000).ok_or(MathError::Overflow)?).div_euclid(expected))
}

struct Intent {
    height: Height,
    expected_out: Amount,
}

pub fn compute_report(input: &ReportInput<'_>) -> Result<MetricsReport, MetricsError> {
    let mut last_height = 0;
    let mut intents: HashMap<TxId, Intent> = HashMap::new();
    // token seq -> request tx that earned it
    let mut token_request: HashMap<u64, TxId> = HashMap::new();
    // receipts in execution order: (tx_id, role)
    let mut executed: Vec<TxId> = Vec::new();
    let mut plans: Vec<(TxId, TxId, Option<TxId>)> = Vec::new();
    let mut slippages: Vec<i128> = Vec::new();
    let mut latencies: Vec<u64> = Vec::new();
    let mut expired = 0u64;
    let mut rejected: HashMap<RevealRejected, u64> = HashMap::new();

    for rec in input.trace {
        if rec.height < last_height {
            return Err(MetricsError::MalformedTrace(format!(
                "height went backwards at {}",
                rec.height
            )));
        }
        last_height = rec.height;
        match &rec.event {
            Event::OrderIntent { expected_out, .. } => {
                let tx = rec.tx_id.ok_or_else(|| {
                    MetricsError::MalformedTrace("order intent without tx".into())
                })?;
                intents.insert(
                    tx,
                    Intent {
                        height: rec.height,
                        expected_out: *expected_out,
                    },
                );
            }
            Event::TokenIssued { .. } => {
                if let (Some(seq), Some(tx)) = (rec.seq, rec.tx_id) {
                    token_request.insert(seq, tx);
                }
            }
            Event::TokenExpired => expired += 1,
            Event::RevealRejected { reason } => *rejected.entry(*reason).or_default() += 1,
            Event::AttackPlanned {
                target_tx,
                front_tx,
                back_tx,
                ..
            } => plans.push((*front_tx, *target_tx, *back_tx)),
            Event::SwapExecuted { role, receipt } => {
                executed.push(receipt.tx_id);
                if *role != RoleTag::Honest {
                    continue;
                }
                let intent_tx = match receipt.token_seq {
                    Some(seq) => token_request.get(&seq).copied(),
                    None => Some(receipt.tx_id),
                };
                let intent = intent_tx.and_then(|tx| intents.get(&tx)).ok_or_else(|| {
                    MetricsError::MalformedTrace(format!(
                        "honest receipt for tx {} has no intent",
                        receipt.tx_id
                    ))
                })?;
                slippages.push(bps_shortfall(intent.expected_out, receipt.amount_out)?);
                latencies.push(receipt.executed_at.saturating_sub(intent.height));
            }
            _ => {}
        }
    }

    let position: HashMap<TxId, usize> = executed
        .iter()
        .enumerate()
        .map(|(i, tx)| (*tx, i))
        .collect();
    let sandwich_success_count = plans
        .iter()
        .filter(|(front, target, back)| {
            let (Some(f), Some(t)) = (position.get(front), position.get(target)) else {
                return false;
            };
            let back_ok = match back {
                Some(b) => position.get(b) == Some(&(t + 1)),
                None => true,
            };
            *t == f + 1 && back_ok
        })
        .count() as u64;

    let (trade_pnl, fees_paid) = match input.attacker {
        Some(id) => {
            let before = input.initial.accounts.get(id);
            let after = input.last.accounts.get(id);
            match (before, after) {
                (Some(b), Some(a)) => (
                    value_portfolio(a, &input.reference)? - value_portfolio(b, &input.reference)?,
                    b.fee_balance.checked_sub(a.fee_balance)?,
                ),
                _ => {
                    return Err(MetricsError::MalformedTrace(format!(
                        "attacker {id} missing from snapshots"
                    )))
                }
            }
        }
        None => (0, Amount::ZERO),
    };
    let fee_spend_x = input.fee_to_x.mul_floor(fees_paid)?.to_signed()?;

    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let slip_f: Vec<f64> = slippages.iter().map(|s| *s as f64).collect();
    let lat_f: Vec<f64> = latencies.iter().map(|l| *l as f64).collect();
    let conserved = match (input.initial.totals(), input.last.totals()) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };

    Ok(MetricsReport {
        run_id: input.run_id.clone(),
        seed: input.seed,
        mode: input.mode,
        blocks_simulated: input.blocks,
        attacker_trade_pnl: trade_pnl,
        attacker_fees_paid: fees_paid,
        attacker_fee_spend_x: fee_spend_x,
        attacker_pnl: trade_pnl - fee_spend_x,
        sandwich_success_count,
        honest_orders_executed: slippages.len() as u64,
        victim_mean_slippage_bps: mean(&slip_f),
        victim_worst_slippage_bps: slippages.iter().copied().max(),
        mean_latency_blocks: mean(&lat_f),
        expired_token_count: expired,
        rejected_reveal_no_such_token: rejected
            .get(&RevealRejected::NoSuchToken)
            .copied()
            .unwrap_or(0),
        rejected_reveal_not_owner: rejected
            .get(&RevealRejected::NotOwner)
            .copied()
            .unwrap_or(0),
        rejected_reveal_commit_mismatch: rejected
            .get(&RevealRejected::CommitMismatch)
            .copied()
            .unwrap_or(0),
        rejected_reveal_already_revealed: rejected
            .get(&RevealRejected::AlreadyRevealed)
            .copied()
            .unwrap_or(0),
        conservation_check: if conserved { Check::Pass } else { Check::Fail },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amm::SwapReceipt;
    use crate::model::Direction;

    fn id(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    fn acct(x: u128, y: u128, fee: u128) -> Account {
        Account::new(id("oscar"), Amount(x), Amount(y), Amount(fee))
    }

    #[test]
    fn portfolio_valuation() {
        let one = ReferencePrice { num: 1, den: 1 };
        let two = ReferencePrice { num: 2, den: 1 };
        assert_eq!(value_portfolio(&acct(100, 0, 0), &two), Ok(100));
        assert_eq!(value_portfolio(&acct(0, 50, 0), &one), Ok(50));
        assert_eq!(value_portfolio(&acct(10, 30, 9), &two), Ok(70));
        assert_eq!(
            value_portfolio(&acct(0, 5, 0), &ReferencePrice { num: 1, den: 2 }),
            Ok(2)
        );
        assert_eq!(
            value_portfolio(&acct(u128::MAX, 1, 0), &one),
            Err(MathError::Overflow)
        );
    }

    fn snapshot(accounts: Vec<Account>, x: u128, y: u128, fees: u128) -> Snapshot {
        Snapshot {
            accounts: accounts.into_iter().map(|a| (a.id.clone(), a)).collect(),
            pool: PoolState::new(Amount(x), Amount(y), 0).unwrap(),
            collected_fees: Amount(fees),
        }
    }

    fn input<'a>(trace: &'a [TraceRecord], a: &'a Snapshot, b: &'a Snapshot) -> ReportInput<'a> {
        ReportInput {
            run_id: "t".into(),
            seed: 1,
            mode: ProtocolMode::Baseline,
            blocks: 1,
            trace,
            initial: a,
            last: b,
            reference: ReferencePrice { num: 1, den: 1 },
            fee_to_x: Ratio::ONE,
            attacker: None,
        }
    }

    #[test]
    fn quiet_trace_reports_zero() {
        let s = snapshot(vec![acct(10, 10, 10)], 100, 100, 0);
        let r = compute_report(&input(&[], &s, &s)).unwrap();
        assert_eq!(r.attacker_pnl, 0);
        assert_eq!(r.attacker_fees_paid, Amount(0));
        assert_eq!(r.conservation_check, Check::Pass);
        assert_eq!(r.mean_latency_blocks, None);
        assert_eq!(r.csv_values().len(), MetricsReport::COLUMNS.len());
    }

    fn receipt(tx_id: TxId, out: u128, height: Height) -> SwapReceipt {
        SwapReceipt {
            tx_id,
            token_seq: None,
            trader: id("alice"),
            direction: Direction::XForY,
            amount_in: Amount(100),
            amount_out: Amount(out),
            min_amount_out: Amount(0),
            executed_at: height,
            pre_price_num: Amount(1),
            pre_price_den: Amount(1),
            post_price_num: Amount(1),
            post_price_den: Amount(1),
        }
    }

    #[test]
    fn slippage_latency_and_sandwich_detection() {
        let intent = |tx| TraceRecord {
            height: 0,
            tx_id: Some(tx),
            seq: None,
            event: Event::OrderIntent {
                trader: id("alice"),
                nonce: 0,
                direction: Direction::XForY,
                amount_in: Amount(100),
                min_amount_out: Amount(80),
                expected_out: Amount(90),
            },
        };
        let exec = |tx, role, out| TraceRecord {
            height: 1,
            tx_id: Some(tx),
            seq: None,
            event: Event::SwapExecuted {
                role,
                receipt: receipt(tx, out, 1),
            },
        };
        let trace = vec![
            intent(1),
            intent(5),
            TraceRecord {
                height: 0,
                tx_id: None,
                seq: None,
                event: Event::AttackPlanned {
                    target_tx: 1,
                    front_tx: 2,
                    back_tx: Some(3),
                    front_amount: Amount(10),
                    expected_profit: 4,
                },
            },
            exec(2, RoleTag::AttackerFront, 9),
            exec(1, RoleTag::Honest, 81),
            exec(3, RoleTag::AttackerBack, 12),
            exec(5, RoleTag::Honest, 92),
        ];
        let s = snapshot(vec![], 100, 100, 0);
        let r = compute_report(&input(&trace, &s, &s)).unwrap();
        assert_eq!(r.sandwich_success_count, 1);
        assert_eq!(r.honest_orders_executed, 2);
        // (90-81)/90 = 1000 bps; (90-92)/90 = -222.2 -> floor -223
        assert_eq!(r.victim_worst_slippage_bps, Some(1000));
        assert_eq!(r.victim_mean_slippage_bps, Some((1000.0 - 223.0) / 2.0));
        assert_eq!(r.mean_latency_blocks, Some(1.0));
    }

    #[test]
    fn broken_sandwich_is_not_counted() {
        let plan = TraceRecord {
            height: 0,
            tx_id: None,
            seq: None,
            event: Event::AttackPlanned {
                target_tx: 1,
                front_tx: 2,
                back_tx: Some(3),
                front_amount: Amount(10),
                expected_profit: 4,
            },
        };
        let exec = |tx, role| TraceRecord {
            height: 1,
            tx_id: Some(tx),
            seq: None,
            event: Event::SwapExecuted {
                role,
                receipt: receipt(tx, 1, 1),
            },
        };
        // victim first: front-run landed behind it
        let trace = vec![
            plan,
            exec(2, RoleTag::AttackerFront),
            exec(3, RoleTag::AttackerBack),
        ];
        let s = snapshot(vec![], 100, 100, 0);
        let r = compute_report(&input(&trace, &s, &s)).unwrap();
        assert_eq!(r.sandwich_success_count, 0);
    }

    #[test]
    fn honest_receipt_without_intent_is_malformed() {
        let trace = vec![TraceRecord {
            height: 1,
            tx_id: Some(4),
            seq: None,
            event: Event::SwapExecuted {
                role: RoleTag::Honest,
                receipt: receipt(4, 1, 1),
            },
        }];
        let s = snapshot(vec![], 100, 100, 0);
        assert!(matches!(
            compute_report(&input(&trace, &s, &s)),
            Err(MetricsError::MalformedTrace(_))
        ));
    }

    #[test]
    fn attacker_pnl_splits_trade_and_fees() {
        let before = snapshot(vec![acct(1000, 0, 100)], 500, 500, 0);
        let after = snapshot(vec![acct(1010, 4, 94)], 490, 496, 6);
        let oscar = id("oscar");
        let mut inp = input(&[], &before, &after);
        inp.attacker = Some(&oscar);
        inp.fee_to_x = Ratio { num: 3, den: 2 };
        let r = compute_report(&inp).unwrap();
        assert_eq!(r.attacker_trade_pnl, 14);
        assert_eq!(r.attacker_fees_paid, Amount(6));
        assert_eq!(r.attacker_fee_spend_x, 9);
        assert_eq!(r.attacker_pnl, 5);
        assert_eq!(r.conservation_check, Check::Pass);
    }

    #[test]
    fn conservation_failure_is_reported() {
        let before = snapshot(vec![acct(1000, 0, 100)], 500, 500, 0);
        let after = snapshot(vec![acct(1001, 0, 100)], 500, 500, 0);
        let r = compute_report(&input(&[], &before, &after)).unwrap();
        assert_eq!(r.conservation_check, Check::Fail);
    }
}
