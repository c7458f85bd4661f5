//! Blockchain substrate: a fully visible mempool, block proposal and block
//! execution against the pool, the order queue and account balances.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{apply_swap, PoolState, SwapContext, SwapError, SwapReceipt};
use crate::model::{
    Account, AccountId, Amount, Asset, Block, Direction, Height, MathError, ModelError,
    ProtocolMode, RoleTag, TradeOrder, Transaction, TxId, TxPayload,
};
use crate::protocol::{Commitment, QueueState, RequestRejected, RevealDisposition, RevealRejected};

/// Aborts a run. Anything here is a simulator bug or an arithmetic limit,
/// never an ordinary transaction outcome.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimFault {
    #[error("block height {got} does not extend chain at {tip}")]
    HeightMismatch { tip: Height, got: Height },
    #[error("transaction {0} included twice")]
    DuplicateInclusion(TxId),
    #[error("arithmetic failure during execution: {0}")]
    Arithmetic(#[from] MathError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("transaction {0} is already in the mempool")]
    DuplicateTx(TxId),
    #[error("planned transaction {0} is not pending")]
    PlanNotInMempool(TxId),
    #[error("plan of {plan} transactions exceeds block capacity {capacity}")]
    PlanExceedsCapacity { plan: usize, capacity: usize },
    #[error("only a colluding miner follows an attacker plan")]
    UnexpectedPlan,
    #[error("duplicate account {0}")]
    DuplicateAccount(AccountId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pending transactions in arrival order. Every agent sees all of it.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    pending: Vec<Transaction>,
    ids: HashSet<TxId>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<(), ChainError> {
        if !self.ids.insert(tx.tx_id) {
            return Err(ChainError::DuplicateTx(tx.tx_id));
        }
        self.pending.push(tx);
        Ok(())
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn contains(&self, tx_id: TxId) -> bool {
        self.ids.contains(&tx_id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Empties the pool, e.g. at the end of a scenario.
    pub fn drain(&mut self) -> Vec<Transaction> {
        self.ids.clear();
        std::mem::take(&mut self.pending)
    }

    fn take(&mut self, selected: &[TxId]) -> Vec<Transaction> {
        let mut by_id: BTreeMap<TxId, Transaction> = BTreeMap::new();
        let wanted: HashSet<TxId> = selected.iter().copied().collect();
        self.pending.retain(|tx| {
            if wanted.contains(&tx.tx_id) {
                by_id.insert(tx.tx_id, tx.clone());
                false
            } else {
                true
            }
        });
        for id in selected {
            self.ids.remove(id);
        }
        selected.iter().filter_map(|id| by_id.remove(id)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinerKind {
    HonestFeePriority,
    MevColluding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerStrategy {
    pub kind: MinerKind,
    pub colluding_with: Option<AccountId>,
}

impl MinerStrategy {
    pub fn honest() -> Self {
        Self {
            kind: MinerKind::HonestFeePriority,
            colluding_with: None,
        }
    }

    pub fn colluding(attacker: AccountId) -> Self {
        Self {
            kind: MinerKind::MevColluding,
            colluding_with: Some(attacker),
        }
    }

    pub fn colludes_with(&self, account: &AccountId) -> bool {
        self.kind == MinerKind::MevColluding && self.colluding_with.as_ref() == Some(account)
    }
}

fn fee_priority(txs: &mut [&Transaction]) {
    txs.sort_by(|a, b| b.fee.cmp(&a.fee).then(a.tx_id.cmp(&b.tx_id)));
}

/// Builds the next block from the mempool and removes the selected
/// transactions from it. A colluding miner places `plan` first, contiguously
/// and in the given order, then fills the rest by fee priority.
pub fn propose_block(
    strategy: &MinerStrategy,
    proposer: &AccountId,
    mempool: &mut Mempool,
    height: Height,
    max_txs: usize,
    plan: Option<&[TxId]>,
) -> Result<Block, ChainError> {
    let plan = plan.unwrap_or(&[]);
    if !plan.is_empty() && strategy.kind != MinerKind::MevColluding {
        return Err(ChainError::UnexpectedPlan);
    }
    if plan.len() > max_txs {
        return Err(ChainError::PlanExceedsCapacity {
            plan: plan.len(),
            capacity: max_txs,
        });
    }
    if let Some(missing) = plan.iter().find(|id| !mempool.contains(**id)) {
        return Err(ChainError::PlanNotInMempool(*missing));
    }
    let planned: HashSet<TxId> = plan.iter().copied().collect();
    let mut rest: Vec<&Transaction> = mempool
        .pending()
        .iter()
        .filter(|tx| !planned.contains(&tx.tx_id))
        .collect();
    fee_priority(&mut rest);
    let selected: Vec<TxId> = plan
        .iter()
        .copied()
        .chain(rest.iter().map(|tx| tx.tx_id))
        .take(max_txs)
        .collect();
    Ok(Block {
        height,
        proposer: proposer.clone(),
        txs: mempool.take(&selected),
    })
}

/// Why a transaction had no effect beyond its fee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxRejection {
    /// Direct pool swaps are refused while the order queue is active.
    DirectSwapInQueueMode,
    /// Request and reveal transactions need an order queue.
    NoQueue,
    /// The payload names an account other than the submitter.
    SubmitterMismatch,
    UnknownAccount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapFailure {
    SlippageExceeded,
    InsufficientBalance,
}

/// One trace entry payload. Serialized as `"kind"` plus a `"detail"` object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Event {
    FeePaid {
        account: AccountId,
        fee: Amount,
    },
    FeeSkipped {
        account: AccountId,
        fee: Amount,
    },
    TxRejected {
        reason: TxRejection,
    },
    TokenIssued {
        owner: AccountId,
        commitment: Option<Commitment>,
    },
    RequestRejected {
        reason: RequestRejected,
    },
    RevealAccepted {
        disposition: RevealDisposition,
    },
    RevealRejected {
        reason: RevealRejected,
    },
    TokenExpired,
    /// The queue handed this token's order to the pool.
    TurnExecuted {
        order: TradeOrder,
    },
    SwapExecuted {
        role: RoleTag,
        receipt: SwapReceipt,
    },
    SwapFailed {
        role: RoleTag,
        trader: AccountId,
        direction: Direction,
        amount_in: Amount,
        min_amount_out: Amount,
        reason: SwapFailure,
    },
    /// An honest trader fixed an order; `expected_out` is the unattacked
    /// quote at that moment.
    OrderIntent {
        trader: AccountId,
        nonce: u64,
        direction: Direction,
        amount_in: Amount,
        min_amount_out: Amount,
        expected_out: Amount,
    },
    /// Attacker released transactions; `expected_profit` is the planner's
    /// value in the victim's input asset at decision time.
    AttackPlanned {
        target_tx: TxId,
        front_tx: TxId,
        back_tx: Option<TxId>,
        front_amount: Amount,
        expected_profit: i128,
    },
    AttackAbstained {
        target_tx: TxId,
        reason: String,
        expected_profit: i128,
    },
    /// Attacker requested the queue slots around a victim request.
    SlotGrab {
        target_tx: TxId,
        request_txs: Vec<TxId>,
        guess: Option<usize>,
        expected_value: Option<i128>,
    },
    SlotGrabFailed {
        target_tx: TxId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub height: Height,
    pub tx_id: Option<TxId>,
    pub seq: Option<u64>,
    pub event: Event,
}

/// Complete simulation state at a block boundary.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub mode: ProtocolMode,
    pub height: Height,
    pub pool: PoolState,
    pub queue: Option<QueueState>,
    pub accounts: BTreeMap<AccountId, Account>,
    pub receipts: Vec<SwapReceipt>,
    pub events: Vec<TraceRecord>,
    pub collected_fees: Amount,
    included: HashSet<TxId>,
    /// reveal transaction behind each accepted reveal, by token seq
    revealed_by: BTreeMap<u64, (TxId, RoleTag)>,
    totals: [u128; 3],
}

impl ChainState {
    pub fn new(
        mode: ProtocolMode,
        pool: PoolState,
        grace_blocks: u32,
        accounts: impl IntoIterator<Item = Account>,
    ) -> Result<Self, ChainError> {
        let mut map = BTreeMap::new();
        for account in accounts {
            if map.contains_key(&account.id) {
                return Err(ChainError::DuplicateAccount(account.id));
            }
            map.insert(account.id.clone(), account);
        }
        let mut state = Self {
            mode,
            height: 0,
            pool,
            queue: mode.queue_mode().map(|m| QueueState::new(m, grace_blocks)),
            accounts: map,
            receipts: Vec::new(),
            events: Vec::new(),
            collected_fees: Amount::ZERO,
            included: HashSet::new(),
            revealed_by: BTreeMap::new(),
            totals: [0; 3],
        };
        state.totals = state.asset_totals().map_err(ModelError::from)?;
        Ok(state)
    }

    pub fn account(&self, id: &AccountId) -> Option<&Account> {
        self.accounts.get(id)
    }

    /// Totals of X, Y and the fee denomination, counting pool reserves and
    /// collected fees.
    pub fn asset_totals(&self) -> Result<[u128; 3], MathError> {
        let mut totals = [
            self.pool.reserve_x.get(),
            self.pool.reserve_y.get(),
            self.collected_fees.get(),
        ];
        for a in self.accounts.values() {
            for (slot, v) in totals
                .iter_mut()
                .zip([a.balance_x, a.balance_y, a.fee_balance])
            {
                *slot = slot.checked_add(v.get()).ok_or(MathError::Overflow)?;
            }
        }
        Ok(totals)
    }

    pub fn was_included(&self, tx_id: TxId) -> bool {
        self.included.contains(&tx_id)
    }

    fn log(&mut self, tx_id: Option<TxId>, seq: Option<u64>, event: Event) {
        self.events.push(TraceRecord {
            height: self.height,
            tx_id,
            seq,
            event,
        });
    }

    /// Appends an agent-side record at the current height.
    pub fn record(&mut self, tx_id: Option<TxId>, seq: Option<u64>, event: Event) {
        self.log(tx_id, seq, event);
    }

    /// Applies `block` and advances the height.
    pub fn execute_block(&mut self, block: &Block) -> Result<(), SimFault> {
        if block.height != self.height + 1 {
            return Err(SimFault::HeightMismatch {
                tip: self.height,
                got: block.height,
            });
        }
        self.height = block.height;
        for tx in &block.txs {
            if !self.included.insert(tx.tx_id) {
                return Err(SimFault::DuplicateInclusion(tx.tx_id));
            }
            self.execute_tx(tx)?;
        }
        if let Some(queue) = self.queue.as_mut() {
            let outcome = queue.advance_turn(self.height);
            for seq in outcome.expired {
                self.log(None, Some(seq), Event::TokenExpired);
            }
            for (seq, order) in outcome.executable {
                let (tx_id, role) = self
                    .revealed_by
                    .remove(&seq)
                    .ok_or_else(|| SimFault::Invariant(format!("token {seq} has no reveal")))?;
                self.log(
                    Some(tx_id),
                    Some(seq),
                    Event::TurnExecuted {
                        order: order.clone(),
                    },
                );
                self.execute_order(&order, tx_id, Some(seq), role)?;
            }
        }
        self.check_invariants()
    }

    fn execute_tx(&mut self, tx: &Transaction) -> Result<(), SimFault> {
        let id = Some(tx.tx_id);
        let Some(payer) = self.accounts.get_mut(&tx.submitter) else {
            self.log(
                id,
                None,
                Event::TxRejected {
                    reason: TxRejection::UnknownAccount,
                },
            );
            return Ok(());
        };
        if payer.debit(Asset::Fee, tx.fee).is_err() {
            let account = tx.submitter.clone();
            self.log(
                id,
                None,
                Event::FeeSkipped {
                    account,
                    fee: tx.fee,
                },
            );
            return Ok(());
        }
        self.collected_fees = self.collected_fees.checked_add(tx.fee)?;
        self.log(
            id,
            None,
            Event::FeePaid {
                account: tx.submitter.clone(),
                fee: tx.fee,
            },
        );

        if tx.payload.order().is_some_and(|o| o.trader != tx.submitter) {
            self.log(
                id,
                None,
                Event::TxRejected {
                    reason: TxRejection::SubmitterMismatch,
                },
            );
            return Ok(());
        }
        match (&tx.payload, self.queue.as_mut()) {
            (TxPayload::DirectSwap { order }, None) => {
                self.execute_order(order, tx.tx_id, None, tx.role_tag)?;
            }
            (TxPayload::DirectSwap { .. }, Some(_)) => {
                self.log(
                    id,
                    None,
                    Event::TxRejected {
                        reason: TxRejection::DirectSwapInQueueMode,
                    },
                );
            }
            (TxPayload::OrderRequest { .. } | TxPayload::Reveal { .. }, None) => {
                self.log(
                    id,
                    None,
                    Event::TxRejected {
                        reason: TxRejection::NoQueue,
                    },
                );
            }
            (
                TxPayload::OrderRequest {
                    requester,
                    commitment,
                },
                Some(queue),
            ) => {
                if requester != &tx.submitter {
                    self.log(
                        id,
                        None,
                        Event::TxRejected {
                            reason: TxRejection::SubmitterMismatch,
                        },
                    );
                    return Ok(());
                }
                match queue.handle_order_request(requester, *commitment, self.height) {
                    Ok(token) => self.log(
                        id,
                        Some(token.seq),
                        Event::TokenIssued {
                            owner: token.owner,
                            commitment: token.commitment,
                        },
                    ),
                    Err(reason) => self.log(id, None, Event::RequestRejected { reason }),
                }
            }
            (TxPayload::Reveal { token_seq, order }, Some(queue)) => {
                let seq = Some(*token_seq);
                match queue.handle_reveal(&tx.submitter, *token_seq, order) {
                    Ok(disposition) => {
                        self.revealed_by.insert(*token_seq, (tx.tx_id, tx.role_tag));
                        self.log(id, seq, Event::RevealAccepted { disposition });
                    }
                    Err(reason) => self.log(id, seq, Event::RevealRejected { reason }),
                }
            }
        }
        Ok(())
    }

    fn execute_order(
        &mut self,
        order: &TradeOrder,
        tx_id: TxId,
        seq: Option<u64>,
        role: RoleTag,
    ) -> Result<(), SimFault> {
        let failed = |reason| Event::SwapFailed {
            role,
            trader: order.trader.clone(),
            direction: order.direction,
            amount_in: order.amount_in,
            min_amount_out: order.min_amount_out,
            reason,
        };
        let Some(trader) = self.accounts.get(&order.trader) else {
            self.log(
                Some(tx_id),
                seq,
                Event::TxRejected {
                    reason: TxRejection::UnknownAccount,
                },
            );
            return Ok(());
        };
        if trader.balance(order.direction.input_asset()) < order.amount_in {
            self.log(Some(tx_id), seq, failed(SwapFailure::InsufficientBalance));
            return Ok(());
        }
        let ctx = SwapContext {
            tx_id,
            token_seq: seq,
            height: self.height,
        };
        match apply_swap(&self.pool, order, ctx) {
            Ok((pool, receipt)) => {
                let trader = self.accounts.get_mut(&order.trader).expect("checked above");
                trader
                    .debit(order.direction.input_asset(), receipt.amount_in)
                    .map_err(|e| SimFault::Invariant(e.to_string()))?;
                trader
                    .credit(order.direction.output_asset(), receipt.amount_out)
                    .map_err(|e| SimFault::Invariant(e.to_string()))?;
                self.pool = pool;
                self.receipts.push(receipt.clone());
                self.log(Some(tx_id), seq, Event::SwapExecuted { role, receipt });
            }
            Err(SwapError::SlippageExceeded { .. }) => {
                self.log(Some(tx_id), seq, failed(SwapFailure::SlippageExceeded));
            }
            Err(SwapError::Math(e)) => return Err(e.into()),
        }
        Ok(())
    }

    /// Conservation of all three denominations, positive reserves and the
    /// queue's structural invariants.
    pub fn check_invariants(&self) -> Result<(), SimFault> {
        let totals = self.asset_totals()?;
        if totals != self.totals {
            return Err(SimFault::Invariant(format!(
                "conservation broken at height {}: {:?} != {:?}",
                self.height, totals, self.totals
            )));
        }
        if self.pool.reserve_x.is_zero() || self.pool.reserve_y.is_zero() {
            return Err(SimFault::Invariant("pool reserve reached zero".into()));
        }
        if let Some(queue) = &self.queue {
            queue.check_invariants().map_err(SimFault::Invariant)?;
        }
        Ok(())
    }

    /// Trace records that reference `tx_id`.
    pub fn events_for(&self, tx_id: TxId) -> impl Iterator<Item = &TraceRecord> {
        self.events.iter().filter(move |r| r.tx_id == Some(tx_id))
    }
}
