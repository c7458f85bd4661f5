//! Replays an event trace and checks it against the run's invariants. The
//! replay recomputes swap outputs and commitments with its own arithmetic
//! and hashing, so it does not trust the engine that wrote the trace.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::amm::PoolState;
use crate::chain::{Event, TraceRecord};
use crate::model::{Direction, Height, ProtocolMode, RoleTag, TradeOrder, TxId};
use crate::protocol::RevealRejected;

/// How many times each check ran over a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditStats {
    pub swaps_replayed: u64,
    pub turns_checked: u64,
    pub commitments_checked: u64,
    pub expiries_checked: u64,
    pub decisions_checked: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct AuditInput<'a> {
    pub mode: ProtocolMode,
    pub initial_pool: PoolState,
    pub final_pool: PoolState,
    pub trace: &'a [TraceRecord],
    /// Whether the attacker was allowed to reveal losing guesses.
    pub reveal_on_miss: bool,
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a / b + u128::from(!a.is_multiple_of(b))
}

/// Constant-product output with the fee taken from the input.
fn replay_out(reserve_in: u128, reserve_out: u128, fee_bps: u16, amount_in: u128) -> Option<u128> {
    let effective = amount_in.checked_mul(10_000 - u128::from(fee_bps))? / 10_000;
    let k = reserve_in.checked_mul(reserve_out)?;
    Some(reserve_out - ceil_div(k, reserve_in.checked_add(effective)?))
}

fn digest(order: &TradeOrder) -> [u8; 32] {
    let code = match order.direction {
        Direction::XForY => "XY",
        Direction::YForX => "YX",
    };
    let preimage = format!(
        "{}|{}|{}|{}|{}",
        order.trader, code, order.amount_in, order.min_amount_out, order.nonce
    );
    Sha256::digest(preimage.as_bytes()).into()
}

/// Checks, over the whole trace:
/// - every receipt matches an independent replay of the pool, honors its
///   guard, and never lowers the reserve product;
/// - the replayed pool ends where the run's pool ended;
/// - queue turns execute in strictly increasing seq, each at most once,
///   never for an expired token, and each swap has exactly one turn;
/// - under commitments, each executed order hashes to its token's commitment
///   issued at an earlier height;
/// - no transaction produces two receipts;
/// - honest reveals are never rejected for a commitment mismatch;
/// - attack plans and blind slot grabs carry a positive expected value.
pub fn audit_trace(input: &AuditInput<'_>) -> Result<AuditStats, String> {
    let mut stats = AuditStats::default();
    let mut rx = input.initial_pool.reserve_x.get();
    let mut ry = input.initial_pool.reserve_y.get();
    let fee = input.initial_pool.fee_bps;

    let mut issued: BTreeMap<u64, (Height, Option<[u8; 32]>)> = BTreeMap::new();
    let mut expired: BTreeSet<u64> = BTreeSet::new();
    let mut turned: BTreeSet<u64> = BTreeSet::new();
    let mut last_turn: Option<u64> = None;
    let mut open_turn: Option<(u64, TxId)> = None;
    let mut receipts: BTreeSet<TxId> = BTreeSet::new();
    let mut payer: BTreeMap<TxId, String> = BTreeMap::new();
    let mut honest: BTreeSet<String> = BTreeSet::new();

    for rec in input.trace {
        let fail = |what: String| Err(format!("height {} tx {:?}: {what}", rec.height, rec.tx_id));
        if open_turn.is_some()
            && !matches!(
                rec.event,
                Event::SwapExecuted { .. } | Event::SwapFailed { .. } | Event::TxRejected { .. }
            )
        {
            return fail(format!("turn {open_turn:?} has no execution outcome"));
        }
        match &rec.event {
            Event::FeePaid { account, .. } | Event::FeeSkipped { account, .. } => {
                if let Some(tx) = rec.tx_id {
                    payer.insert(tx, account.to_string());
                }
            }
            Event::OrderIntent { trader, .. } => {
                honest.insert(trader.to_string());
            }
            Event::TokenIssued { commitment, .. } => {
                let Some(seq) = rec.seq else {
                    return fail("token without seq".into());
                };
                if issued
                    .insert(seq, (rec.height, commitment.map(|c| *c.as_bytes())))
                    .is_some()
                {
                    return fail(format!("seq {seq} issued twice"));
                }
            }
            Event::TokenExpired => {
                let Some(seq) = rec.seq else {
                    return fail("expiry without seq".into());
                };
                stats.expiries_checked += 1;
                if turned.contains(&seq) || !expired.insert(seq) {
                    return fail(format!("seq {seq} expired after executing or twice"));
                }
            }
            Event::TurnExecuted { order } => {
                let (Some(seq), Some(tx)) = (rec.seq, rec.tx_id) else {
                    return fail("turn without seq or tx".into());
                };
                stats.turns_checked += 1;
                if last_turn.is_some_and(|last| seq <= last) {
                    return fail(format!("turn {seq} after {last_turn:?}"));
                }
                if expired.contains(&seq) || !turned.insert(seq) {
                    return fail(format!("seq {seq} executed after expiry or twice"));
                }
                let Some((issued_at, commitment)) = issued.get(&seq) else {
                    return fail(format!("seq {seq} executed without issuance"));
                };
                if input.mode == ProtocolMode::CommaV2 {
                    stats.commitments_checked += 1;
                    if *commitment != Some(digest(order)) {
                        return fail(format!("seq {seq} executed an uncommitted order"));
                    }
                    if *issued_at >= rec.height {
                        return fail(format!(
                            "seq {seq} committed at {issued_at}, not before execution"
                        ));
                    }
                }
                last_turn = Some(seq);
                open_turn = Some((seq, tx));
            }
            Event::SwapExecuted { receipt, .. } => {
                if input.mode != ProtocolMode::Baseline {
                    match (open_turn.take(), receipt.token_seq) {
                        (Some((seq, tx)), Some(s)) if seq == s && tx == receipt.tx_id => {}
                        other => return fail(format!("swap outside its turn: {other:?}")),
                    }
                }
                if !receipts.insert(receipt.tx_id) {
                    return fail(format!("tx {} executed twice", receipt.tx_id));
                }
                stats.swaps_replayed += 1;
                if (receipt.pre_price_num.get(), receipt.pre_price_den.get()) != (rx, ry) {
                    return fail("receipt pre-price disagrees with replayed pool".into());
                }
                let before = rx.checked_mul(ry).ok_or("product overflow")?;
                let (rin, rout) = match receipt.direction {
                    Direction::XForY => (rx, ry),
                    Direction::YForX => (ry, rx),
                };
                let out =
                    replay_out(rin, rout, fee, receipt.amount_in.get()).ok_or("replay overflow")?;
                if out != receipt.amount_out.get() {
                    return fail(format!("out {} but replay gives {out}", receipt.amount_out));
                }
                if receipt.amount_out < receipt.min_amount_out {
                    return fail("receipt below its guard".into());
                }
                let (nin, nout) = (rin + receipt.amount_in.get(), rout - out);
                (rx, ry) = match receipt.direction {
                    Direction::XForY => (nin, nout),
                    Direction::YForX => (nout, nin),
                };
                if rx.checked_mul(ry).ok_or("product overflow")? < before {
                    return fail("reserve product decreased".into());
                }
                if (receipt.post_price_num.get(), receipt.post_price_den.get()) != (rx, ry) {
                    return fail("receipt post-price disagrees with replayed pool".into());
                }
            }
            Event::SwapFailed { .. } | Event::TxRejected { .. } => {
                open_turn = None;
            }
            Event::RevealRejected { reason } => {
                let who = rec.tx_id.and_then(|tx| payer.get(&tx));
                if *reason == RevealRejected::CommitMismatch
                    && who.is_some_and(|w| honest.contains(w))
                {
                    return fail("honest reveal failed its own commitment".into());
                }
            }
            Event::AttackPlanned {
                expected_profit, ..
            } => {
                stats.decisions_checked += 1;
                if *expected_profit <= 0 && !input.reveal_on_miss {
                    return fail(format!("plan with expected profit {expected_profit}"));
                }
            }
            Event::SlotGrab {
                guess: None,
                expected_value,
                ..
            } => {
                stats.decisions_checked += 1;
                if expected_value.is_none_or(|v| v <= 0) {
                    return fail(format!("slot grab with expected value {expected_value:?}"));
                }
            }
            _ => {}
        }
    }
    if open_turn.is_some() {
        return Err("trace ends inside a turn".into());
    }
    if (rx, ry)
        != (
            input.final_pool.reserve_x.get(),
            input.final_pool.reserve_y.get(),
        )
    {
        return Err(format!(
            "replayed pool ({rx}, {ry}) differs from final pool {:?}",
            input.final_pool
        ));
    }
    Ok(stats)
}

/// Whether any executed trade in the trace belongs to the attacker.
pub fn attacker_traded(trace: &[TraceRecord]) -> bool {
    trace
        .iter()
        .any(|r| matches!(r.event, Event::SwapExecuted { role, .. } if role != RoleTag::Honest))
}
