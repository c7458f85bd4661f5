//! Grid-search planner for front-run / back-run pairs around a victim swap.
//!
//! The front-run trades in the victim's direction; the back-run sells exactly
//! the front-run proceeds back, so the attacker ends flat in the out-asset and
//! profit is measured in the victim's input asset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PoolState, SwapError};
use crate::model::{Amount, MathError, TradeOrder};

/// How the attacker unwinds the front-run position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    /// Sell the front-run proceeds right after the victim (full sandwich).
    BackRun,
    /// Keep the position and mark it at the pool's marginal price right
    /// after the victim trade (front-run only).
    HoldAtMarket,
}

impl Exit {
    fn tx_count(self) -> i128 {
        match self {
            Exit::BackRun => 2,
            Exit::HoldAtMarket => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SandwichSearch {
    /// Per-transaction fee, already converted into the victim's input asset.
    pub fee_per_tx: Amount,
    pub step: Amount,
    /// Largest front-run size considered.
    pub max_front: Amount,
    pub exit: Exit,
}

impl SandwichSearch {
    pub fn new(fee_per_tx: Amount, step: Amount, max_front: Amount) -> Self {
        Self {
            fee_per_tx,
            step,
            max_front,
            exit: Exit::BackRun,
        }
    }

    pub fn with_exit(mut self, exit: Exit) -> Self {
        self.exit = exit;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SandwichError {
    #[error("search step must be positive")]
    ZeroStep,
    #[error(transparent)]
    Math(#[from] MathError),
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandwichCandidate {
    pub front_amount: Amount,
    pub front_out: Amount,
    pub victim_out: Amount,
    /// Back-run output, or the marked value of the held position.
    pub exit_value: Amount,
    /// `exit_value - front_amount - fees`, in the victim's input asset.
    pub net_profit: i128,
}

/// Evaluates `front ∈ {0, step, 2·step, …}` up to `max_front`, stopping at
/// the first size for which the victim's slippage guard would fire. Every
/// returned candidate leaves the victim's `min_amount_out` satisfied.
pub fn sandwich_grid(
    pool: &PoolState,
    victim: &TradeOrder,
    search: &SandwichSearch,
) -> Result<Vec<SandwichCandidate>, SandwichError> {
    if search.step.is_zero() {
        return Err(SandwichError::ZeroStep);
    }
    let fees = fees_of(search)?;
    let mut grid = Vec::new();
    let mut front = Amount::ZERO;
    while front <= search.max_front {
        match evaluate(pool, victim, front, fees, search.exit) {
            Ok(Some(candidate)) => grid.push(candidate),
            Ok(None) => break,
            // an overflowing front-run is as far as the grid can go
            Err(MathError::Overflow) => break,
            Err(e) => return Err(e.into()),
        }
        front = match front.checked_add(search.step) {
            Ok(next) => next,
            Err(_) => break,
        };
    }
    Ok(grid)
}

/// Argmax of [`sandwich_grid`], ties going to the smaller front-run.
pub fn optimal_sandwich(
    pool: &PoolState,
    victim: &TradeOrder,
    search: &SandwichSearch,
) -> Result<SandwichCandidate, SandwichError> {
    let grid = sandwich_grid(pool, victim, search)?;
    let mut best: Option<SandwichCandidate> = None;
    for candidate in grid {
        if best.is_none_or(|b| candidate.net_profit > b.net_profit) {
            best = Some(candidate);
        }
    }
    // the zero front-run is always feasible when the victim is executable
    // at all; otherwise report the abstention value
    Ok(best.unwrap_or(SandwichCandidate {
        front_amount: Amount::ZERO,
        front_out: Amount::ZERO,
        victim_out: Amount::ZERO,
        exit_value: Amount::ZERO,
        net_profit: -fees_of(search)?,
    }))
}

fn fees_of(search: &SandwichSearch) -> Result<i128, MathError> {
    search
        .fee_per_tx
        .to_signed()?
        .checked_mul(search.exit.tx_count())
        .ok_or(MathError::Overflow)
}

fn evaluate(
    pool: &PoolState,
    victim: &TradeOrder,
    front: Amount,
    fees: i128,
    exit: Exit,
) -> Result<Option<SandwichCandidate>, MathError> {
    let dir = victim.direction;
    let (after_front, front_out) = pool.swap(dir, front, Amount::ZERO).map_err(math)?;
    let (after_victim, victim_out) =
        match after_front.swap(dir, victim.amount_in, victim.min_amount_out) {
            Ok(ok) => ok,
            Err(SwapError::SlippageExceeded { .. }) => return Ok(None),
            Err(SwapError::Math(e)) => return Err(e),
        };
    let exit_value = match exit {
        Exit::BackRun => {
            let (_, back_out) = after_victim
                .swap(dir.opposite(), front_out, Amount::ZERO)
                .map_err(math)?;
            back_out
        }
        Exit::HoldAtMarket => {
            // value of the out-asset position in input-asset units
            let (r_in, r_out) = after_victim.reserves_for(dir);
            Amount(
                front_out
                    .get()
                    .checked_mul(r_in.get())
                    .ok_or(MathError::Overflow)?
                    / r_out.get(),
            )
        }
    };
    let net_profit = exit_value
        .to_signed()?
        .checked_sub(front.to_signed()?)
        .and_then(|v| v.checked_sub(fees))
        .ok_or(MathError::Overflow)?;
    Ok(Some(SandwichCandidate {
        front_amount: front,
        front_out,
        victim_out,
        exit_value,
        net_profit,
    }))
}

fn math(e: SwapError) -> MathError {
    match e {
        SwapError::Math(m) => m,
        // unreachable with a zero guard
        SwapError::SlippageExceeded { .. } => MathError::Underflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccountId, Direction};

    fn pool(x: u128, y: u128) -> PoolState {
        PoolState::new(Amount(x), Amount(y), 0).unwrap()
    }

    fn victim(amount_in: u128, min_out: u128) -> TradeOrder {
        TradeOrder {
            trader: AccountId::new("alice").unwrap(),
            direction: Direction::XForY,
            amount_in: Amount(amount_in),
            min_amount_out: Amount(min_out),
            nonce: 1,
        }
    }

    #[test]
    fn zero_slack_victim_forces_null_sandwich() {
        let best = optimal_sandwich(
            &pool(1000, 1000),
            &victim(100, 90),
            &SandwichSearch::new(Amount(0), Amount(100), Amount(1000)),
        )
        .unwrap();
        assert_eq!((best.front_amount, best.net_profit), (Amount(0), 0));
    }

    #[test]
    fn five_percent_slack_victim() {
        // Frozen from an independent integer oracle.
        let search = SandwichSearch::new(Amount(0), Amount(100), Amount(1_000_000));
        let best =
            optimal_sandwich(&pool(1_000_000, 1_000_000), &victim(10_000, 9_405), &search).unwrap();
        assert_eq!((best.front_amount, best.net_profit), (Amount(26_100), 504));
        let grid =
            sandwich_grid(&pool(1_000_000, 1_000_000), &victim(10_000, 9_405), &search).unwrap();
        assert_eq!(grid.len(), 262);
        assert!(grid.iter().all(|c| c.victim_out >= Amount(9_405)));
    }

    #[test]
    fn flat_fee_shifts_profit_not_argmax() {
        let search = SandwichSearch::new(Amount(5), Amount(100), Amount(1_000_000));
        let best =
            optimal_sandwich(&pool(1_000_000, 1_000_000), &victim(10_000, 9_405), &search).unwrap();
        assert_eq!((best.front_amount, best.net_profit), (Amount(26_100), 494));
    }

    #[test]
    fn unbounded_tolerance_runs_to_search_bound() {
        let search = SandwichSearch::new(Amount(0), Amount(100), Amount(1_000_000));
        let best =
            optimal_sandwich(&pool(1_000_000, 1_000_000), &victim(10_000, 0), &search).unwrap();
        assert_eq!(
            (best.front_amount, best.net_profit),
            (Amount(1_000_000), 7_505)
        );
    }

    #[test]
    fn null_sandwich_pays_fees_when_nothing_is_feasible() {
        // victim already unexecutable: 90 < 95
        let best = optimal_sandwich(
            &pool(1000, 1000),
            &victim(100, 95),
            &SandwichSearch::new(Amount(3), Amount(10), Amount(1000)),
        )
        .unwrap();
        assert_eq!((best.front_amount, best.net_profit), (Amount(0), -6));
    }

    #[test]
    fn front_only_pays_one_fee() {
        let search = SandwichSearch::new(Amount(4), Amount(100), Amount(1_000_000))
            .with_exit(Exit::HoldAtMarket);
        let grid =
            sandwich_grid(&pool(1_000_000, 1_000_000), &victim(10_000, 9_405), &search).unwrap();
        assert_eq!(grid[0].net_profit, -4);
        let best =
            optimal_sandwich(&pool(1_000_000, 1_000_000), &victim(10_000, 9_405), &search).unwrap();
        assert!(best.net_profit > 0);
        assert!(best.front_amount > Amount(0));
    }

    #[test]
    fn zero_step_rejected() {
        let err = sandwich_grid(
            &pool(10, 10),
            &victim(1, 0),
            &SandwichSearch::new(Amount(0), Amount(0), Amount(10)),
        )
        .unwrap_err();
        assert_eq!(err, SandwichError::ZeroStep);
    }
}
