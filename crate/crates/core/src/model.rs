//! Shared domain vocabulary: amounts, accounts, orders, transactions and blocks.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Block height.
pub type Height = u64;

/// Globally unique, monotonically assigned transaction identifier.
pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MathError {
    #[error("arithmetic overflow")]
    Overflow,
    #[error("arithmetic underflow")]
    Underflow,
    #[error("division by zero")]
    DivisionByZero,
}

/// An amount in base units of one denomination. Arithmetic is exact and
/// checked; nothing wraps.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(pub u128);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn new(value: u128) -> Self {
        Amount(value)
    }

    pub const fn get(self) -> u128 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Amount) -> Result<Amount, MathError> {
        self.0
            .checked_add(other.0)
            .map(Amount)
            .ok_or(MathError::Overflow)
    }

    pub fn checked_sub(self, other: Amount) -> Result<Amount, MathError> {
        self.0
            .checked_sub(other.0)
            .map(Amount)
            .ok_or(MathError::Underflow)
    }

    pub fn checked_mul(self, other: Amount) -> Result<Amount, MathError> {
        self.0
            .checked_mul(other.0)
            .map(Amount)
            .ok_or(MathError::Overflow)
    }

    /// Signed view, failing if the value does not fit in an `i128`.
    pub fn to_signed(self) -> Result<i128, MathError> {
        i128::try_from(self.0).map_err(|_| MathError::Overflow)
    }
}

impl From<u128> for Amount {
    fn from(value: u128) -> Self {
        Amount(value)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The three denominations tracked by the simulator. `Fee` is used only to
/// pay transaction fees and never touches the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asset {
    X,
    Y,
    Fee,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("account id must not be empty")]
    EmptyAccountId,
    #[error("account id {0:?} contains the reserved '|' separator")]
    ReservedCharacter(String),
    #[error("order amount_in must be positive")]
    ZeroAmountIn,
    #[error("payload variant {payload:?} does not match transaction kind {kind:?}")]
    MalformedPayload { kind: TxKind, payload: TxKind },
    #[error("insufficient {asset:?} balance on {account}: have {have}, need {need}")]
    InsufficientBalance {
        account: AccountId,
        asset: Asset,
        have: Amount,
        need: Amount,
    },
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Which transaction regime a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    /// Swaps go straight to the pool in block order.
    Baseline,
    /// Request/reveal queue without commitments.
    CommaV1,
    /// Request/reveal queue with hash commitments checked at reveal.
    CommaV2,
}

impl ProtocolMode {
    pub fn queue_mode(self) -> Option<crate::protocol::QueueMode> {
        match self {
            ProtocolMode::Baseline => None,
            ProtocolMode::CommaV1 => Some(crate::protocol::QueueMode::V1),
            ProtocolMode::CommaV2 => Some(crate::protocol::QueueMode::V2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolMode::Baseline => "baseline",
            ProtocolMode::CommaV1 => "comma_v1",
            ProtocolMode::CommaV2 => "comma_v2",
        }
    }
}

/// Non-negative rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u128, den: u128) -> Result<Self, MathError> {
        if den == 0 {
            return Err(MathError::DivisionByZero);
        }
        Ok(Self { num, den })
    }

    /// `floor(amount * num / den)`.
    pub fn mul_floor(self, amount: Amount) -> Result<Amount, MathError> {
        if self.den == 0 {
            return Err(MathError::DivisionByZero);
        }
        amount
            .get()
            .checked_mul(self.num)
            .map(|v| Amount(v / self.den))
            .ok_or(MathError::Overflow)
    }

    pub fn inverse(self) -> Result<Ratio, MathError> {
        Ratio::new(self.den, self.num)
    }
}

/// Flat per-transaction fees, by kind, in the fee denomination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeeSchedule {
    #[serde(default = "FeeSchedule::default_fee")]
    pub direct_swap: Amount,
    #[serde(default = "FeeSchedule::default_fee")]
    pub order_request: Amount,
    #[serde(default = "FeeSchedule::default_fee")]
    pub reveal: Amount,
}

impl FeeSchedule {
    fn default_fee() -> Amount {
        Amount(1)
    }

    pub fn for_kind(&self, kind: TxKind) -> Amount {
        match kind {
            TxKind::DirectSwap => self.direct_swap,
            TxKind::OrderRequest => self.order_request,
            TxKind::Reveal => self.reveal,
        }
    }
}

impl Default for FeeSchedule {
    fn default() -> Self {
        Self {
            direct_swap: Amount(1),
            order_request: Amount(1),
            reveal: Amount(1),
        }
    }
}

/// Opaque actor identifier. Never empty and never contains `|`, which keeps
/// the commitment preimage encoding injective.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyAccountId);
        }
        if id.contains('|') {
            return Err(ModelError::ReservedCharacter(id));
        }
        Ok(AccountId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AccountId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        AccountId::new(value)
    }
}

impl From<AccountId> for String {
    fn from(value: AccountId) -> Self {
        value.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub balance_x: Amount,
    pub balance_y: Amount,
    pub fee_balance: Amount,
}

impl Account {
    pub fn new(id: AccountId, balance_x: Amount, balance_y: Amount, fee_balance: Amount) -> Self {
        Self {
            id,
            balance_x,
            balance_y,
            fee_balance,
        }
    }

    pub fn balance(&self, asset: Asset) -> Amount {
        match asset {
            Asset::X => self.balance_x,
            Asset::Y => self.balance_y,
            Asset::Fee => self.fee_balance,
        }
    }

    fn slot(&mut self, asset: Asset) -> &mut Amount {
        match asset {
            Asset::X => &mut self.balance_x,
            Asset::Y => &mut self.balance_y,
            Asset::Fee => &mut self.fee_balance,
        }
    }

    /// Debits `amount`, leaving the account untouched if the balance is short.
    pub fn debit(&mut self, asset: Asset, amount: Amount) -> Result<(), ModelError> {
        let have = self.balance(asset);
        let next = have
            .checked_sub(amount)
            .map_err(|_| ModelError::InsufficientBalance {
                account: self.id.clone(),
                asset,
                have,
                need: amount,
            })?;
        *self.slot(asset) = next;
        Ok(())
    }

    pub fn credit(&mut self, asset: Asset, amount: Amount) -> Result<(), ModelError> {
        let next = self.balance(asset).checked_add(amount)?;
        *self.slot(asset) = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    XForY,
    YForX,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::XForY => Direction::YForX,
            Direction::YForX => Direction::XForY,
        }
    }

    pub fn input_asset(self) -> Asset {
        match self {
            Direction::XForY => Asset::X,
            Direction::YForX => Asset::Y,
        }
    }

    pub fn output_asset(self) -> Asset {
        self.opposite().input_asset()
    }

    /// Two-letter tag used in the commitment preimage.
    pub fn code(self) -> &'static str {
        match self {
            Direction::XForY => "XY",
            Direction::YForX => "YX",
        }
    }
}

/// A trader's intended swap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TradeOrder {
    pub trader: AccountId,
    pub direction: Direction,
    pub amount_in: Amount,
    /// Slippage guard: the swap fails rather than deliver less than this.
    pub min_amount_out: Amount,
    pub nonce: u64,
}

impl TradeOrder {
    pub fn new(
        trader: AccountId,
        direction: Direction,
        amount_in: Amount,
        min_amount_out: Amount,
        nonce: u64,
    ) -> Result<Self, ModelError> {
        if amount_in.is_zero() {
            return Err(ModelError::ZeroAmountIn);
        }
        Ok(Self {
            trader,
            direction,
            amount_in,
            min_amount_out,
            nonce,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    OrderRequest,
    Reveal,
    DirectSwap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPayload {
    OrderRequest {
        requester: AccountId,
        commitment: Option<crate::protocol::Commitment>,
    },
    Reveal {
        token_seq: u64,
        order: TradeOrder,
    },
    DirectSwap {
        order: TradeOrder,
    },
}

impl TxPayload {
    pub fn kind(&self) -> TxKind {
        match self {
            TxPayload::OrderRequest { .. } => TxKind::OrderRequest,
            TxPayload::Reveal { .. } => TxKind::Reveal,
            TxPayload::DirectSwap { .. } => TxKind::DirectSwap,
        }
    }

    /// The swap carried by this payload, if any.
    pub fn order(&self) -> Option<&TradeOrder> {
        match self {
            TxPayload::OrderRequest { .. } => None,
            TxPayload::Reveal { order, .. } | TxPayload::DirectSwap { order } => Some(order),
        }
    }
}

/// Metrics-only annotation of who submitted a transaction and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Honest,
    AttackerFront,
    AttackerBack,
    AttackerRequest,
}

impl RoleTag {
    pub fn is_attacker(self) -> bool {
        !matches!(self, RoleTag::Honest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub payload: TxPayload,
    pub fee: Amount,
    pub submitter: AccountId,
    pub submitted_at: Height,
    pub role_tag: RoleTag,
}

impl Transaction {
    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }
}

/// Hands out transaction ids in submission order. One allocator per run.
#[derive(Debug, Clone, Default)]
pub struct TxIdAllocator {
    next: TxId,
}

impl TxIdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peek(&self) -> TxId {
        self.next
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_transaction(
        &mut self,
        kind: TxKind,
        payload: TxPayload,
        fee: Amount,
        submitter: AccountId,
        height: Height,
        role_tag: RoleTag,
    ) -> Result<Transaction, ModelError> {
        if payload.kind() != kind {
            return Err(ModelError::MalformedPayload {
                kind,
                payload: payload.kind(),
            });
        }
        let tx_id = self.next;
        self.next += 1;
        Ok(Transaction {
            tx_id,
            payload,
            fee,
            submitter,
            submitted_at: height,
            role_tag,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: Height,
    pub proposer: AccountId,
    pub txs: Vec<Transaction>,
}
