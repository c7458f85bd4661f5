//! DEX-side order queue for the two-phase request/reveal protocol.
//!
//! Phase one: a request transaction earns an [`OrderToken`] holding a queue
//! position (and in V2 a [`Commitment`] to the order). Phase two: the owner
//! reveals the order; it executes only when its token reaches the head of
//! the queue. A head token that sees no valid reveal for more than
//! `grace_blocks` blocks loses its turn.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AccountId, Height, TradeOrder};

/// SHA-256 digest binding a token to one exact order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Commitment([u8; 32]);

impl Commitment {
    pub fn from_bytes(digest: [u8; 32]) -> Self {
        Commitment(digest)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut digest = [0u8; 32];
        hex::decode_to_slice(s, &mut digest)?;
        Ok(Commitment(digest))
    }
}

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", self.to_hex())
    }
}

impl Serialize for Commitment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Commitment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Commitment::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// `trader|XY|amount_in|min_amount_out|nonce`, numbers in minimal decimal.
pub fn canonical_preimage(order: &TradeOrder) -> Vec<u8> {
    format!(
        "{}|{}|{}|{}|{}",
        order.trader,
        order.direction.code(),
        order.amount_in,
        order.min_amount_out,
        order.nonce
    )
    .into_bytes()
}

pub fn compute_commitment(order: &TradeOrder) -> Commitment {
    let digest = Sha256::digest(canonical_preimage(order));
    Commitment(digest.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    V1,
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenState {
    Pending,
    Revealed,
    Executed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderToken {
    pub seq: u64,
    pub owner: AccountId,
    pub commitment: Option<Commitment>,
    pub issued_at: Height,
    pub state: TokenState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestRejected {
    #[error("v2 order request carries no commitment")]
    MissingCommitment,
    #[error("v1 order request carries a commitment")]
    UnexpectedCommitment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealRejected {
    #[error("no live token with that sequence number")]
    NoSuchToken,
    #[error("reveal not submitted by the token owner")]
    NotOwner,
    #[error("revealed order does not match the stored commitment")]
    CommitMismatch,
    #[error("token already revealed")]
    AlreadyRevealed,
}

impl RevealRejected {
    pub const ALL: [RevealRejected; 4] = [
        RevealRejected::NoSuchToken,
        RevealRejected::NotOwner,
        RevealRejected::CommitMismatch,
        RevealRejected::AlreadyRevealed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealDisposition {
    /// Accepted ahead of its turn; held until the token reaches the head.
    Buffered,
    ReadyToExecute,
}

/// Tokens leaving the queue during one [`QueueState::advance_turn`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TurnOutcome {
    pub expired: Vec<u64>,
    /// Orders to execute now, ascending by seq.
    pub executable: Vec<(u64, TradeOrder)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    mode: QueueMode,
    next_seq: u64,
    head_seq: u64,
    head_since: Height,
    tokens: BTreeMap<u64, OrderToken>,
    buffered_reveals: BTreeMap<u64, TradeOrder>,
    grace_blocks: u32,
}

impl QueueState {
    pub fn new(mode: QueueMode, grace_blocks: u32) -> Self {
        Self {
            mode,
            next_seq: 0,
            head_seq: 0,
            head_since: 0,
            tokens: BTreeMap::new(),
            buffered_reveals: BTreeMap::new(),
            grace_blocks,
        }
    }

    pub fn mode(&self) -> QueueMode {
        self.mode
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn head_seq(&self) -> u64 {
        self.head_seq
    }

    pub fn head_since(&self) -> Height {
        self.head_since
    }

    pub fn grace_blocks(&self) -> u32 {
        self.grace_blocks
    }

    pub fn token(&self, seq: u64) -> Option<&OrderToken> {
        self.tokens.get(&seq)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &OrderToken> {
        self.tokens.values()
    }

    pub fn buffered(&self, seq: u64) -> Option<&TradeOrder> {
        self.buffered_reveals.get(&seq)
    }

    /// Issues the next token to `requester`.
    pub fn handle_order_request(
        &mut self,
        requester: &AccountId,
        commitment: Option<Commitment>,
        height: Height,
    ) -> Result<OrderToken, RequestRejected> {
        match (self.mode, commitment.is_some()) {
            (QueueMode::V2, false) => return Err(RequestRejected::MissingCommitment),
            (QueueMode::V1, true) => return Err(RequestRejected::UnexpectedCommitment),
            _ => {}
        }
        if self.head_seq == self.next_seq {
            // an idle queue starts the new head's turn now
            self.head_since = height;
        }
        let token = OrderToken {
            seq: self.next_seq,
            owner: requester.clone(),
            commitment,
            issued_at: height,
            state: TokenState::Pending,
        };
        self.tokens.insert(token.seq, token.clone());
        self.next_seq += 1;
        Ok(token)
    }

    /// Accepts the order for `token_seq`. In V2 the order must hash to the
    /// token's commitment; a mismatch burns the slot.
    pub fn handle_reveal(
        &mut self,
        submitter: &AccountId,
        token_seq: u64,
        order: &TradeOrder,
    ) -> Result<RevealDisposition, RevealRejected> {
        let token = self
            .tokens
            .get_mut(&token_seq)
            .ok_or(RevealRejected::NoSuchToken)?;
        match token.state {
            TokenState::Executed | TokenState::Expired => return Err(RevealRejected::NoSuchToken),
            TokenState::Revealed => return Err(RevealRejected::AlreadyRevealed),
            TokenState::Pending => {}
        }
        if &token.owner != submitter || &order.trader != submitter {
            return Err(RevealRejected::NotOwner);
        }
        if self.mode == QueueMode::V2 && token.commitment != Some(compute_commitment(order)) {
            token.state = TokenState::Expired;
            return Err(RevealRejected::CommitMismatch);
        }
        token.state = TokenState::Revealed;
        self.buffered_reveals.insert(token_seq, order.clone());
        if token_seq == self.head_seq {
            Ok(RevealDisposition::ReadyToExecute)
        } else {
            Ok(RevealDisposition::Buffered)
        }
    }

    /// Drains the head of the queue. Called once per block after the block's
    /// transactions have been processed.
    pub fn advance_turn(&mut self, height: Height) -> TurnOutcome {
        let mut outcome = TurnOutcome::default();
        while self.head_seq < self.next_seq {
            let seq = self.head_seq;
            let token = self
                .tokens
                .get_mut(&seq)
                .expect("every seq below next_seq has a token");
            if token.state == TokenState::Expired {
                // burned by a commitment mismatch
            } else if let Some(order) = self.buffered_reveals.remove(&seq) {
                token.state = TokenState::Executed;
                outcome.executable.push((seq, order));
            } else if height.saturating_sub(self.head_since) > u64::from(self.grace_blocks) {
                token.state = TokenState::Expired;
                outcome.expired.push(seq);
            } else {
                break;
            }
            self.head_seq += 1;
            self.head_since = height;
        }
        outcome
    }

    /// Structural invariants of the queue.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.head_seq > self.next_seq {
            return Err(format!(
                "head {} beyond next {}",
                self.head_seq, self.next_seq
            ));
        }
        if self.tokens.len() as u64 != self.next_seq
            || self.tokens.keys().copied().ne(0..self.next_seq)
        {
            return Err("token seqs are not consecutive from 0".into());
        }
        for token in self.tokens.values() {
            if token.commitment.is_some() != (self.mode == QueueMode::V2) {
                return Err(format!(
                    "token {} commitment presence wrong for mode",
                    token.seq
                ));
            }
            if token.seq < self.head_seq
                && !matches!(token.state, TokenState::Executed | TokenState::Expired)
            {
                return Err(format!(
                    "token {} behind head in state {:?}",
                    token.seq, token.state
                ));
            }
        }
        for seq in self.buffered_reveals.keys() {
            if *seq < self.head_seq
                || self.tokens.get(seq).map(|t| t.state) != Some(TokenState::Revealed)
            {
                return Err(format!(
                    "buffered reveal {seq} has no revealed token at/after head"
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Amount, Direction};

    fn id(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    fn order(
        trader: &str,
        direction: Direction,
        amount_in: u128,
        min: u128,
        nonce: u64,
    ) -> TradeOrder {
        TradeOrder {
            trader: id(trader),
            direction,
            amount_in: Amount(amount_in),
            min_amount_out: Amount(min),
            nonce,
        }
    }

    #[test]
    fn preimage_encoding() {
        assert_eq!(
            canonical_preimage(&order("alice", Direction::XForY, 100, 90, 42)),
            b"alice|XY|100|90|42".to_vec()
        );
        assert_eq!(
            canonical_preimage(&order("bob", Direction::YForX, 1, 0, 0)),
            b"bob|YX|1|0|0".to_vec()
        );
        assert_ne!(
            canonical_preimage(&order("bob", Direction::YForX, 1, 0, 0)),
            canonical_preimage(&order("bob", Direction::YForX, 1, 0, 1))
        );
    }

    #[test]
    fn commitment_golden_vector() {
        // SHA-256 of the bytes `alice|XY|100|90|42`, from an independent implementation.
        let c = compute_commitment(&order("alice", Direction::XForY, 100, 90, 42));
        assert_eq!(
            c.to_hex(),
            "e6e12ffa45c9947656a29bb2c997b034b7ad80cdc7af7d69d414a09d68195bba"
        );
        let c = compute_commitment(&order("bob", Direction::YForX, 1, 0, 0));
        assert_eq!(
            c.to_hex(),
            "32f75ad9a635c3b2baa43d101aca844f77c715fb4706b315157ba78301e402d4"
        );
    }

    #[test]
    fn commitment_determinism_and_sensitivity() {
        let base = order("alice", Direction::XForY, 100, 90, 42);
        assert_eq!(compute_commitment(&base), compute_commitment(&base.clone()));
        let variants = [
            order("alicf", Direction::XForY, 100, 90, 42),
            order("alice", Direction::YForX, 100, 90, 42),
            order("alice", Direction::XForY, 101, 90, 42),
            order("alice", Direction::XForY, 100, 91, 42),
            order("alice", Direction::XForY, 100, 90, 43),
        ];
        for v in variants {
            assert_ne!(compute_commitment(&v), compute_commitment(&base));
        }
    }

    #[test]
    fn commitment_hex_roundtrip() {
        let c = compute_commitment(&order("alice", Direction::XForY, 100, 90, 42));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Commitment>(&json).unwrap(), c);
        assert!(Commitment::from_hex("abcd").is_err());
    }

    #[test]
    fn v2_issues_token_with_commitment() {
        let mut q = QueueState::new(QueueMode::V2, 2);
        let c = compute_commitment(&order("alice", Direction::XForY, 1, 0, 0));
        let t = q.handle_order_request(&id("alice"), Some(c), 4).unwrap();
        assert_eq!(t.seq, 0);
        assert_eq!(t.commitment, Some(c));
        assert_eq!(t.state, TokenState::Pending);
        assert_eq!(t.issued_at, 4);
        assert_eq!(q.head_since(), 4);
        assert_eq!(
            q.handle_order_request(&id("alice"), None, 4),
            Err(RequestRejected::MissingCommitment)
        );
    }

    #[test]
    fn v1_rejects_commitment() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        let c = compute_commitment(&order("alice", Direction::XForY, 1, 0, 0));
        assert_eq!(
            q.handle_order_request(&id("alice"), Some(c), 0),
            Err(RequestRejected::UnexpectedCommitment)
        );
        assert_eq!(q.next_seq(), 0);
    }

    #[test]
    fn consecutive_issuance() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        let seqs: Vec<u64> = ["a", "b", "c"]
            .iter()
            .map(|who| q.handle_order_request(&id(who), None, 1).unwrap().seq)
            .collect();
        assert_eq!(seqs, vec![0, 1, 2]);
        q.check_invariants().unwrap();
    }

    #[test]
    fn v2_matching_reveal_at_head() {
        let o = order("alice", Direction::XForY, 100, 90, 7);
        let mut q = QueueState::new(QueueMode::V2, 2);
        q.handle_order_request(&id("alice"), Some(compute_commitment(&o)), 0)
            .unwrap();
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &o),
            Ok(RevealDisposition::ReadyToExecute)
        );
        assert_eq!(q.token(0).unwrap().state, TokenState::Revealed);
        q.check_invariants().unwrap();
    }

    #[test]
    fn v2_mismatch_burns_slot() {
        let o = order("alice", Direction::XForY, 100, 90, 7);
        let forged = order("alice", Direction::XForY, 100, 10, 7);
        let mut q = QueueState::new(QueueMode::V2, 2);
        q.handle_order_request(&id("alice"), Some(compute_commitment(&o)), 0)
            .unwrap();
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &forged),
            Err(RevealRejected::CommitMismatch)
        );
        assert_eq!(q.token(0).unwrap().state, TokenState::Expired);
        // burned: even the genuine order cannot use it now
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &o),
            Err(RevealRejected::NoSuchToken)
        );
        let out = q.advance_turn(1);
        assert!(out.executable.is_empty() && out.expired.is_empty());
        assert_eq!(q.head_seq(), 1);
        q.check_invariants().unwrap();
    }

    #[test]
    fn v1_accepts_any_order_from_owner() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        q.handle_order_request(&id("alice"), None, 0).unwrap();
        let whatever = order("alice", Direction::YForX, 999, 0, 1);
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &whatever),
            Ok(RevealDisposition::ReadyToExecute)
        );
    }

    #[test]
    fn reveal_rejections() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        q.handle_order_request(&id("alice"), None, 0).unwrap();
        q.handle_order_request(&id("bob"), None, 0).unwrap();
        let a = order("alice", Direction::XForY, 10, 0, 0);
        assert_eq!(
            q.handle_reveal(&id("alice"), 5, &a),
            Err(RevealRejected::NoSuchToken)
        );
        assert_eq!(
            q.handle_reveal(&id("alice"), 1, &a),
            Err(RevealRejected::NotOwner)
        );
        // owner submitting someone else's order is also not the owner's trade
        let b_for_alice = order("alice", Direction::XForY, 10, 0, 0);
        assert_eq!(
            q.handle_reveal(&id("bob"), 1, &b_for_alice),
            Err(RevealRejected::NotOwner)
        );
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &a),
            Ok(RevealDisposition::ReadyToExecute)
        );
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &a),
            Err(RevealRejected::AlreadyRevealed)
        );
        let b = order("bob", Direction::XForY, 10, 0, 0);
        assert_eq!(
            q.handle_reveal(&id("bob"), 1, &b),
            Ok(RevealDisposition::Buffered)
        );
        let out = q.advance_turn(1);
        assert_eq!(
            out.executable.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(
            q.handle_reveal(&id("alice"), 0, &a),
            Err(RevealRejected::NoSuchToken)
        );
    }

    #[test]
    fn consecutive_drain() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        for who in ["a", "b"] {
            q.handle_order_request(&id(who), None, 0).unwrap();
        }
        q.handle_reveal(&id("b"), 1, &order("b", Direction::XForY, 1, 0, 0))
            .unwrap();
        q.handle_reveal(&id("a"), 0, &order("a", Direction::XForY, 1, 0, 0))
            .unwrap();
        let out = q.advance_turn(1);
        assert_eq!(out.executable.len(), 2);
        assert_eq!(out.executable[0].0, 0);
        assert_eq!(out.executable[1].0, 1);
        assert_eq!(q.head_seq(), 2);
        assert_eq!(q.head_since(), 1);
    }

    #[test]
    fn head_expires_after_grace() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        q.handle_order_request(&id("a"), None, 5).unwrap();
        assert_eq!(q.head_since(), 5);
        assert_eq!(q.advance_turn(6), TurnOutcome::default());
        assert_eq!(q.advance_turn(7), TurnOutcome::default());
        let out = q.advance_turn(8);
        assert_eq!(out.expired, vec![0]);
        assert_eq!(q.head_seq(), 1);
        assert_eq!(q.token(0).unwrap().state, TokenState::Expired);
    }

    #[test]
    fn head_blocks_later_reveals() {
        let mut q = QueueState::new(QueueMode::V1, 2);
        q.handle_order_request(&id("a"), None, 0).unwrap();
        q.handle_order_request(&id("b"), None, 0).unwrap();
        q.handle_reveal(&id("b"), 1, &order("b", Direction::XForY, 1, 0, 0))
            .unwrap();
        assert_eq!(q.advance_turn(1), TurnOutcome::default());
        assert_eq!(q.head_seq(), 0);
        // once the head expires, the buffered reveal behind it drains in
        // the same turn
        let out = q.advance_turn(3);
        assert_eq!(out.expired, vec![0]);
        assert_eq!(out.executable.len(), 1);
        assert_eq!(out.executable[0].0, 1);
    }
}
