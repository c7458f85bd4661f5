//! Constant-product AMM pool.
//!
//! All amounts are integers in base units. The input fee is taken by flooring
//! the effective input, and the post-swap reserve on the output side is
//! rounded up, so every swap leaves `reserve_x * reserve_y` no smaller than
//! before.

mod sandwich;

pub use sandwich::{
    optimal_sandwich, sandwich_grid, Exit, SandwichCandidate, SandwichError, SandwichSearch,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccountId, Amount, Direction, Height, MathError, TradeOrder, TxId};

pub const BPS_DENOMINATOR: u128 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("pool reserves must both be positive")]
    EmptyReserve,
    #[error("fee_bps {0} exceeds 10000")]
    FeeOutOfRange(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SwapError {
    #[error("slippage guard fired: quoted {quoted}, minimum {min_amount_out}")]
    SlippageExceeded {
        quoted: Amount,
        min_amount_out: Amount,
    },
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolState {
    pub reserve_x: Amount,
    pub reserve_y: Amount,
    pub fee_bps: u16,
}

impl PoolState {
    pub fn new(reserve_x: Amount, reserve_y: Amount, fee_bps: u16) -> Result<Self, PoolError> {
        if reserve_x.is_zero() || reserve_y.is_zero() {
            return Err(PoolError::EmptyReserve);
        }
        if u128::from(fee_bps) > BPS_DENOMINATOR {
            return Err(PoolError::FeeOutOfRange(fee_bps));
        }
        Ok(Self {
            reserve_x,
            reserve_y,
            fee_bps,
        })
    }

    /// `(reserve_in, reserve_out)` for a swap in `direction`.
    pub fn reserves_for(&self, direction: Direction) -> (Amount, Amount) {
        match direction {
            Direction::XForY => (self.reserve_x, self.reserve_y),
            Direction::YForX => (self.reserve_y, self.reserve_x),
        }
    }

    pub fn product(&self) -> Result<u128, MathError> {
        self.reserve_x
            .get()
            .checked_mul(self.reserve_y.get())
            .ok_or(MathError::Overflow)
    }

    /// Output of swapping `amount_in` in `direction`. Pure.
    pub fn quote(&self, direction: Direction, amount_in: Amount) -> Result<Amount, MathError> {
        quote_swap(self, direction, amount_in)
    }

    /// Executes a swap against a copy of the pool, enforcing `min_amount_out`.
    /// The full input, fee portion included, stays in the pool.
    pub fn swap(
        &self,
        direction: Direction,
        amount_in: Amount,
        min_amount_out: Amount,
    ) -> Result<(PoolState, Amount), SwapError> {
        let quoted = quote_swap(self, direction, amount_in)?;
        if quoted < min_amount_out {
            return Err(SwapError::SlippageExceeded {
                quoted,
                min_amount_out,
            });
        }
        let mut next = *self;
        match direction {
            Direction::XForY => {
                next.reserve_x = self.reserve_x.checked_add(amount_in)?;
                next.reserve_y = self.reserve_y.checked_sub(quoted)?;
            }
            Direction::YForX => {
                next.reserve_y = self.reserve_y.checked_add(amount_in)?;
                next.reserve_x = self.reserve_x.checked_sub(quoted)?;
            }
        }
        Ok((next, quoted))
    }
}

/// Constant-product quote with pool-favoring rounding:
/// `in_eff = floor(in * (10000 - fee) / 10000)`,
/// `out = r_out - ceil(r_in * r_out / (r_in + in_eff))`.
pub fn quote_swap(
    pool: &PoolState,
    direction: Direction,
    amount_in: Amount,
) -> Result<Amount, MathError> {
    let (reserve_in, reserve_out) = pool.reserves_for(direction);
    let (r_in, r_out) = (reserve_in.get(), reserve_out.get());
    let fee_keep = BPS_DENOMINATOR - u128::from(pool.fee_bps);
    let in_eff = amount_in
        .get()
        .checked_mul(fee_keep)
        .ok_or(MathError::Overflow)?
        / BPS_DENOMINATOR;
    let k = r_in.checked_mul(r_out).ok_or(MathError::Overflow)?;
    let new_in = r_in.checked_add(in_eff).ok_or(MathError::Overflow)?;
    let new_out = ceil_div(k, new_in)?;
    Ok(Amount(r_out - new_out))
}

pub(crate) fn ceil_div(num: u128, den: u128) -> Result<u128, MathError> {
    if den == 0 {
        return Err(MathError::DivisionByZero);
    }
    Ok(num / den + u128::from(!num.is_multiple_of(den)))
}

/// Identifies what a swap executed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapContext {
    pub tx_id: TxId,
    pub token_seq: Option<u64>,
    pub height: Height,
}

/// Record of one executed swap. Prices are `reserve_x / reserve_y`, the
/// price of Y in X, kept as unreduced integer pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapReceipt {
    pub tx_id: TxId,
    pub token_seq: Option<u64>,
    pub trader: AccountId,
    pub direction: Direction,
    pub amount_in: Amount,
    pub amount_out: Amount,
    pub min_amount_out: Amount,
    pub executed_at: Height,
    pub pre_price_num: Amount,
    pub pre_price_den: Amount,
    pub post_price_num: Amount,
    pub post_price_den: Amount,
}

/// Applies `order` to `pool`. On `SlippageExceeded` or arithmetic failure the
/// caller keeps the original pool.
pub fn apply_swap(
    pool: &PoolState,
    order: &TradeOrder,
    ctx: SwapContext,
) -> Result<(PoolState, SwapReceipt), SwapError> {
    let (next, amount_out) = pool.swap(order.direction, order.amount_in, order.min_amount_out)?;
    let receipt = SwapReceipt {
        tx_id: ctx.tx_id,
        token_seq: ctx.token_seq,
        trader: order.trader.clone(),
        direction: order.direction,
        amount_in: order.amount_in,
        amount_out,
        min_amount_out: order.min_amount_out,
        executed_at: ctx.height,
        pre_price_num: pool.reserve_x,
        pre_price_den: pool.reserve_y,
        post_price_num: next.reserve_x,
        post_price_den: next.reserve_y,
    };
    Ok((next, receipt))
}
