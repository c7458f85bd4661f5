//! Honest traders: fix an order, then either swap directly or walk it
//! through request and reveal. Orders are never altered once fixed.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentOutput, AgentView, Bucket, Discrete};
use crate::chain::Event;
use crate::model::{
    Account, AccountId, Amount, Direction, ProtocolMode, RoleTag, TradeOrder, TxId, TxIdAllocator,
    TxKind, TxPayload,
};
use crate::protocol::{compute_commitment, TokenState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HonestTraderConfig {
    #[serde(default = "HonestTraderConfig::default_population")]
    pub population: u32,
    /// Chance that an idle trader fixes a new order in a given block.
    #[serde(default = "HonestTraderConfig::default_order_rate")]
    pub order_rate: f64,
    /// Lifetime order cap per trader; unlimited when absent.
    #[serde(default)]
    pub orders_per_trader: Option<u32>,
    #[serde(default = "HonestTraderConfig::default_amounts")]
    pub amount_dist: Discrete<Amount>,
    /// Slippage tolerance in bps.
    #[serde(default = "HonestTraderConfig::default_tolerances")]
    pub tolerance_dist: Discrete<u32>,
    /// Probability that an order sells X for Y.
    #[serde(default = "HonestTraderConfig::default_direction")]
    pub direction_dist: f64,
    #[serde(default = "HonestTraderConfig::default_prefix")]
    pub id_prefix: String,
    #[serde(default = "HonestTraderConfig::default_balance")]
    pub balance_x: Amount,
    #[serde(default = "HonestTraderConfig::default_balance")]
    pub balance_y: Amount,
    #[serde(default = "HonestTraderConfig::default_fee_balance")]
    pub fee_balance: Amount,
}

impl HonestTraderConfig {
    fn default_population() -> u32 {
        4
    }
    fn default_order_rate() -> f64 {
        0.5
    }
    fn default_amounts() -> Discrete<Amount> {
        Discrete::point(Amount(1_000))
    }
    fn default_tolerances() -> Discrete<u32> {
        Discrete::point(100)
    }
    fn default_direction() -> f64 {
        0.5
    }
    fn default_prefix() -> String {
        "trader".into()
    }
    fn default_balance() -> Amount {
        Amount(1_000_000_000)
    }
    fn default_fee_balance() -> Amount {
        Amount(1_000_000)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let prob = |name, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(AgentError::Distribution {
                    name,
                    reason: format!("probability {p} outside [0, 1]"),
                })
            }
        };
        prob("order_rate", self.order_rate)?;
        prob("direction_dist", self.direction_dist)?;
        self.amount_dist.validate("amount_dist")?;
        self.tolerance_dist.validate("tolerance_dist")?;
        if self.amount_dist.0.iter().any(|o| o.value.is_zero()) {
            return Err(AgentError::Distribution {
                name: "amount_dist",
                reason: "amounts must be positive".into(),
            });
        }
        if self.tolerance_dist.0.iter().any(|o| o.value > 10_000) {
            return Err(AgentError::Distribution {
                name: "tolerance_dist",
                reason: "tolerance above 10000 bps".into(),
            });
        }
        for k in 0..self.population {
            AccountId::new(self.trader_id(k))?;
        }
        Ok(())
    }

    pub fn trader_id(&self, index: u32) -> String {
        format!("{}{index}", self.id_prefix)
    }

    pub fn account(&self, index: u32) -> Result<Account, AgentError> {
        Ok(Account::new(
            AccountId::new(self.trader_id(index))?,
            self.balance_x,
            self.balance_y,
            self.fee_balance,
        ))
    }

    fn directions(&self) -> Vec<Direction> {
        let mut out = Vec::new();
        if self.direction_dist > 0.0 {
            out.push(Direction::XForY);
        }
        if self.direction_dist < 1.0 {
            out.push(Direction::YForX);
        }
        out
    }

    /// The order space honest traders draw from, in a fixed order:
    /// direction, then amount, then tolerance. Zero-probability outcomes
    /// are excluded.
    pub fn buckets(&self) -> Vec<Bucket> {
        let mut out = Vec::new();
        for direction in self.directions() {
            for amount in self.amount_dist.support() {
                for tolerance in self.tolerance_dist.support() {
                    out.push(Bucket {
                        direction,
                        amount_in: amount.value,
                        tolerance_bps: tolerance.value,
                    });
                }
            }
        }
        out
    }

    /// Probability of each entry of [`Self::buckets`].
    pub fn bucket_probabilities(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for direction in self.directions() {
            let pd = match direction {
                Direction::XForY => self.direction_dist,
                Direction::YForX => 1.0 - self.direction_dist,
            };
            for amount in self.amount_dist.support() {
                for tolerance in self.tolerance_dist.support() {
                    out.push(pd * amount.p * tolerance.p);
                }
            }
        }
        out
    }

    fn draw_bucket(&self, rng: &mut ChaCha20Rng) -> Bucket {
        let direction = if rng.gen_bool(self.direction_dist) {
            Direction::XForY
        } else {
            Direction::YForX
        };
        Bucket {
            direction,
            amount_in: self.amount_dist.sample(rng),
            tolerance_bps: self.tolerance_dist.sample(rng),
        }
    }
}

impl Default for HonestTraderConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Idle,
    /// Baseline: waiting for the direct swap to land.
    Swapping {
        tx: TxId,
    },
    /// Queue: waiting for the request to be included.
    Requested {
        tx: TxId,
        order: TradeOrder,
    },
    /// Queue: reveal submitted (or due) for token `seq`.
    Revealed {
        seq: u64,
    },
}

#[derive(Debug, Clone)]
pub struct HonestTrader {
    pub id: AccountId,
    rng: ChaCha20Rng,
    phase: Phase,
    orders_placed: u32,
}

impl HonestTrader {
    pub fn new(id: AccountId, rng: ChaCha20Rng) -> Self {
        Self {
            id,
            rng,
            phase: Phase::Idle,
            orders_placed: 0,
        }
    }

    /// One block's worth of behavior.
    pub fn step(
        &mut self,
        cfg: &HonestTraderConfig,
        view: &AgentView<'_>,
        ids: &mut TxIdAllocator,
    ) -> Result<AgentOutput, AgentError> {
        let mut out = AgentOutput::default();
        let height = view.chain.height;
        match self.phase.clone() {
            Phase::Idle => {}
            Phase::Swapping { tx } => {
                if view.chain.was_included(tx) {
                    self.phase = Phase::Idle;
                }
            }
            Phase::Requested { tx, order } => {
                if view.chain.was_included(tx) {
                    match view.token_for_request(tx) {
                        Some(seq) => {
                            let reveal = ids.new_transaction(
                                TxKind::Reveal,
                                TxPayload::Reveal {
                                    token_seq: seq,
                                    order,
                                },
                                view.fees.reveal,
                                self.id.clone(),
                                height,
                                RoleTag::Honest,
                            )?;
                            out.txs.push(reveal);
                            self.phase = Phase::Revealed { seq };
                        }
                        // request refused; the next order is a fresh intent
                        None => self.phase = Phase::Idle,
                    }
                }
                return Ok(out);
            }
            Phase::Revealed { seq } => {
                let done = view
                    .chain
                    .queue
                    .as_ref()
                    .and_then(|q| q.token(seq))
                    .is_none_or(|t| matches!(t.state, TokenState::Executed | TokenState::Expired));
                if done {
                    self.phase = Phase::Idle;
                }
            }
        }
        if self.phase != Phase::Idle {
            return Ok(out);
        }
        if cfg
            .orders_per_trader
            .is_some_and(|cap| self.orders_placed >= cap)
        {
            return Ok(out);
        }
        if !self.rng.gen_bool(cfg.order_rate) {
            return Ok(out);
        }
        let bucket = cfg.draw_bucket(&mut self.rng);
        let nonce: u64 = self.rng.gen();
        let (order, expected_out) = bucket.order(&view.chain.pool, self.id.clone(), nonce)?;
        self.orders_placed += 1;
        let tx = match view.mode() {
            ProtocolMode::Baseline => {
                let tx = ids.new_transaction(
                    TxKind::DirectSwap,
                    TxPayload::DirectSwap {
                        order: order.clone(),
                    },
                    view.fees.direct_swap,
                    self.id.clone(),
                    height,
                    RoleTag::Honest,
                )?;
                self.phase = Phase::Swapping { tx: tx.tx_id };
                tx
            }
            mode => {
                let commitment =
                    (mode == ProtocolMode::CommaV2).then(|| compute_commitment(&order));
                let tx = ids.new_transaction(
                    TxKind::OrderRequest,
                    TxPayload::OrderRequest {
                        requester: self.id.clone(),
                        commitment,
                    },
                    view.fees.order_request,
                    self.id.clone(),
                    height,
                    RoleTag::Honest,
                )?;
                self.phase = Phase::Requested {
                    tx: tx.tx_id,
                    order: order.clone(),
                };
                tx
            }
        };
        out.notes.push((
            Some(tx.tx_id),
            None,
            Event::OrderIntent {
                trader: self.id.clone(),
                nonce,
                direction: order.direction,
                amount_in: order.amount_in,
                min_amount_out: order.min_amount_out,
                expected_out,
            },
        ));
        out.txs.push(tx);
        Ok(out)
    }
}
