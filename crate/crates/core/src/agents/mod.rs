//! Behavioral strategies. Agents read the public chain state and mempool,
//! draw from their own random stream, and return transactions to submit.

mod attacker;
mod honest;

pub use attacker::{Attacker, AttackerConfig, AttackerStrategy};
pub use honest::{HonestTrader, HonestTraderConfig};

use rand::distributions::WeightedIndex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::PoolState;
use crate::chain::{ChainState, Event, Mempool};
use crate::metrics::ReferencePrice;
use crate::model::{
    AccountId, Amount, Asset, Direction, FeeSchedule, MathError, ModelError, ProtocolMode, Ratio,
    TradeOrder, Transaction, TxId, TxKind, TxPayload,
};

/// Everything an agent may look at when deciding. All of it is public.
#[derive(Clone, Copy)]
pub struct AgentView<'a> {
    pub chain: &'a ChainState,
    pub mempool: &'a Mempool,
    pub fees: &'a FeeSchedule,
    pub reference: ReferencePrice,
    pub fee_to_x: Ratio,
}

impl AgentView<'_> {
    pub fn mode(&self) -> ProtocolMode {
        self.chain.mode
    }

    /// Flat fee for `kind`, expressed in `asset` units at the reference price.
    pub fn fee_in(&self, kind: TxKind, asset: Asset) -> Result<Amount, MathError> {
        let x = self.fee_to_x.mul_floor(self.fees.for_kind(kind))?;
        match asset {
            Asset::Y => self.reference.x_in_y(x),
            _ => Ok(x),
        }
    }

    /// Converts `value` in `asset` units to X at the reference price.
    pub fn to_x(&self, value: i128, asset: Asset) -> Result<i128, MathError> {
        match asset {
            Asset::Y => {
                let magnitude = self
                    .reference
                    .y_in_x(Amount(value.unsigned_abs()))?
                    .to_signed()?;
                Ok(if value < 0 { -magnitude } else { magnitude })
            }
            _ => Ok(value),
        }
    }

    /// Seq of the token issued for request `tx_id`, if it was issued.
    pub fn token_for_request(&self, tx_id: TxId) -> Option<u64> {
        self.chain.events_for(tx_id).find_map(|r| match r.event {
            Event::TokenIssued { .. } => r.seq,
            _ => None,
        })
    }
}

/// What an agent hands back to the engine for one block.
#[derive(Debug, Default)]
pub struct AgentOutput {
    pub txs: Vec<Transaction>,
    /// Required block prefix, honored only by a miner with ordering power.
    pub directive: Option<Vec<TxId>>,
    /// Trace records to log, attributed to an optional tx and token seq.
    pub notes: Vec<(Option<TxId>, Option<u64>, Event)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("invalid distribution {name}: {reason}")]
    Distribution { name: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Math(#[from] MathError),
}

impl From<crate::amm::SandwichError> for AgentError {
    fn from(e: crate::amm::SandwichError) -> Self {
        match e {
            crate::amm::SandwichError::Math(m) => AgentError::Math(m),
            crate::amm::SandwichError::ZeroStep => AgentError::Distribution {
                name: "search_step",
                reason: "must be positive".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome<T> {
    pub value: T,
    pub p: f64,
}

/// Finite distribution given as `[{ "value": v, "p": prob }, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Discrete<T>(pub Vec<Outcome<T>>);

const PROBABILITY_SLACK: f64 = 1e-9;

impl<T: Clone + PartialEq> Discrete<T> {
    pub fn point(value: T) -> Self {
        Discrete(vec![Outcome { value, p: 1.0 }])
    }

    pub fn validate(&self, name: &'static str) -> Result<(), AgentError> {
        let fail = |reason: String| Err(AgentError::Distribution { name, reason });
        if self.0.is_empty() {
            return fail("no outcomes".into());
        }
        if let Some(o) = self.0.iter().find(|o| !(0.0..=1.0).contains(&o.p)) {
            return fail(format!("probability {} outside [0, 1]", o.p));
        }
        let sum: f64 = self.0.iter().map(|o| o.p).sum();
        if (sum - 1.0).abs() > PROBABILITY_SLACK {
            return fail(format!("probabilities sum to {sum}, not 1"));
        }
        for (i, a) in self.0.iter().enumerate() {
            if self.0[..i].iter().any(|b| b.value == a.value) {
                return fail("repeated outcome".into());
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let index = WeightedIndex::new(self.0.iter().map(|o| o.p)).expect("validated distribution");
        self.0[rng.sample(index)].value.clone()
    }

    /// Outcomes with positive probability, in declaration order.
    pub fn support(&self) -> impl Iterator<Item = &Outcome<T>> {
        self.0.iter().filter(|o| o.p > 0.0)
    }
}

/// One cell of the honest order space: the attacker's unit of guessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub direction: Direction,
    pub amount_in: Amount,
    pub tolerance_bps: u32,
}

impl Bucket {
    /// The order an honest trader in this bucket would fix against `pool`.
    pub fn order(
        &self,
        pool: &PoolState,
        trader: AccountId,
        nonce: u64,
    ) -> Result<(TradeOrder, Amount), AgentError> {
        let expected = pool.quote(self.direction, self.amount_in)?;
        let min_out = min_out_for(expected, self.tolerance_bps)?;
        let order = TradeOrder::new(trader, self.direction, self.amount_in, min_out, nonce)?;
        Ok((order, expected))
    }
}

/// `floor(expected * (10000 - tol) / 10000)`.
pub fn min_out_for(expected: Amount, tolerance_bps: u32) -> Result<Amount, MathError> {
    let keep = 10_000u128.saturating_sub(u128::from(tolerance_bps));
    Ratio::new(keep, 10_000)?.mul_floor(expected)
}

/// Slack of `order` against `pool` in bps: `(quote - min_out) / quote`,
/// floored. `None` when the quote is zero or below the guard.
pub fn slack_bps(pool: &PoolState, order: &TradeOrder) -> Option<u128> {
    let quote = pool.quote(order.direction, order.amount_in).ok()?;
    if quote.is_zero() || quote < order.min_amount_out {
        return None;
    }
    (quote.get() - order.min_amount_out.get())
        .checked_mul(10_000)
        .map(|v| v / quote.get())
}

/// Pending swaps (DirectSwap in baseline, Reveal under the queue) whose
/// slack is at least `threshold_bps`, by descending slack then arrival.
/// Transactions submitted by `exclude` are skipped.
pub fn bot_scan<'m>(
    mempool: &'m Mempool,
    threshold_bps: u32,
    pool: &PoolState,
    mode: ProtocolMode,
    exclude: Option<&AccountId>,
) -> Vec<(&'m Transaction, u128)> {
    let mut hits: Vec<(&Transaction, u128)> = mempool
        .pending()
        .iter()
        .filter(|tx| Some(&tx.submitter) != exclude)
        .filter(|tx| {
            matches!(
                (&tx.payload, mode),
                (TxPayload::DirectSwap { .. }, ProtocolMode::Baseline)
                    | (
                        TxPayload::Reveal { .. },
                        ProtocolMode::CommaV1 | ProtocolMode::CommaV2
                    )
            )
        })
        .filter_map(|tx| {
            let order = tx.payload.order()?;
            let slack = slack_bps(pool, order)?;
            (slack >= u128::from(threshold_bps)).then_some((tx, slack))
        })
        .collect();
    hits.sort_by_key(|h| std::cmp::Reverse(h.1));
    hits
}
