//! The attacker. In baseline it sandwiches visible swaps; under the queue it
//! grabs the slots around a victim's request and, once the victim reveals,
//! either sandwiches (no commitments) or plays its pre-committed guess.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::honest::HonestTraderConfig;
use super::{bot_scan, slack_bps, AgentError, AgentOutput, AgentView, Bucket};
use crate::amm::PoolState;
use crate::amm::{optimal_sandwich, Exit, SandwichCandidate, SandwichSearch};
use crate::chain::Event;
use crate::model::{
    Account, AccountId, Amount, Direction, Height, ProtocolMode, RoleTag, TradeOrder, Transaction,
    TxId, TxIdAllocator, TxKind, TxPayload,
};
use crate::protocol::{compute_commitment, TokenState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerStrategy {
    #[serde(alias = "None")]
    None,
    #[serde(alias = "BaselineSandwich")]
    BaselineSandwich,
    #[serde(alias = "BaselineFrontOnly")]
    BaselineFrontOnly,
    #[serde(alias = "CommaV1Adaptive")]
    CommaV1Adaptive,
    #[serde(alias = "CommaV2Guessing")]
    CommaV2Guessing,
}

impl AttackerStrategy {
    /// The only protocol mode the strategy can run under.
    pub fn required_mode(self) -> Option<ProtocolMode> {
        match self {
            AttackerStrategy::None => None,
            AttackerStrategy::BaselineSandwich | AttackerStrategy::BaselineFrontOnly => {
                Some(ProtocolMode::Baseline)
            }
            AttackerStrategy::CommaV1Adaptive => Some(ProtocolMode::CommaV1),
            AttackerStrategy::CommaV2Guessing => Some(ProtocolMode::CommaV2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerConfig {
    #[serde(default = "AttackerConfig::default_strategy")]
    pub strategy: AttackerStrategy,
    #[serde(default = "AttackerConfig::default_id")]
    pub id: String,
    /// Minimum victim slack, in bps, worth attacking.
    #[serde(default = "AttackerConfig::default_threshold")]
    pub detection_threshold_bps: u32,
    /// Number of equiprobable candidate orders guessed from.
    #[serde(default)]
    pub guess_space: Option<u32>,
    /// Whether a non-colluding miner still lands the attacker's ordering.
    #[serde(default)]
    pub wins_inclusion_race: bool,
    /// Reveal committed orders even when the guess missed.
    #[serde(default)]
    pub reveal_on_miss: bool,
    /// Front-run grid step.
    #[serde(default = "AttackerConfig::default_step")]
    pub search_step: Amount,
    #[serde(default = "AttackerConfig::default_balance")]
    pub balance_x: Amount,
    #[serde(default = "AttackerConfig::default_balance")]
    pub balance_y: Amount,
    #[serde(default = "AttackerConfig::default_fee_balance")]
    pub fee_balance: Amount,
}

impl AttackerConfig {
    fn default_strategy() -> AttackerStrategy {
        AttackerStrategy::None
    }
    fn default_id() -> String {
        "oscar".into()
    }
    fn default_threshold() -> u32 {
        1
    }
    fn default_step() -> Amount {
        Amount(100)
    }
    fn default_balance() -> Amount {
        Amount(1_000_000_000)
    }
    fn default_fee_balance() -> Amount {
        Amount(1_000_000)
    }

    pub fn account(&self) -> Result<Account, AgentError> {
        Ok(Account::new(
            AccountId::new(self.id.clone())?,
            self.balance_x,
            self.balance_y,
            self.fee_balance,
        ))
    }
}

impl Default for AttackerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Orders committed to at slot-grab time against a guessed victim.
#[derive(Debug, Clone)]
struct Committed {
    /// Direction, amount and guard the guessed victim order carries.
    guess: (Direction, Amount, Amount),
    front: TradeOrder,
    back: TradeOrder,
}

#[derive(Debug, Clone)]
enum Campaign {
    Idle,
    Requested {
        target_tx: TxId,
        front_req: TxId,
        back_req: TxId,
        committed: Option<Committed>,
        since: Height,
    },
    Holding {
        target_tx: TxId,
        front_seq: u64,
        target_seq: u64,
        back_seq: u64,
        committed: Option<Committed>,
    },
}

#[derive(Debug, Clone)]
pub struct Attacker {
    pub id: AccountId,
    rng: ChaCha20Rng,
    campaign: Campaign,
    /// Targets already evaluated; each is decided on once.
    seen: BTreeSet<TxId>,
}

impl Attacker {
    pub fn new(id: AccountId, rng: ChaCha20Rng) -> Self {
        Self {
            id,
            rng,
            campaign: Campaign::Idle,
            seen: BTreeSet::new(),
        }
    }

    pub fn step(
        &mut self,
        cfg: &AttackerConfig,
        honest: &HonestTraderConfig,
        view: &AgentView<'_>,
        ids: &mut TxIdAllocator,
    ) -> Result<AgentOutput, AgentError> {
        let mut ctx = Ctx {
            id: &self.id,
            cfg,
            view,
            ids,
            rng: &mut self.rng,
            out: AgentOutput::default(),
        };
        match cfg.strategy {
            AttackerStrategy::None => {}
            AttackerStrategy::BaselineSandwich => ctx.baseline(&mut self.seen, Exit::BackRun)?,
            AttackerStrategy::BaselineFrontOnly => {
                ctx.baseline(&mut self.seen, Exit::HoldAtMarket)?
            }
            AttackerStrategy::CommaV1Adaptive | AttackerStrategy::CommaV2Guessing => {
                let next = ctx.queue_campaign(self.campaign.clone(), &mut self.seen, honest)?;
                self.campaign = next;
            }
        }
        Ok(ctx.out)
    }
}

struct Ctx<'a, 'v> {
    id: &'a AccountId,
    cfg: &'a AttackerConfig,
    view: &'a AgentView<'v>,
    ids: &'a mut TxIdAllocator,
    rng: &'a mut ChaCha20Rng,
    out: AgentOutput,
}

impl Ctx<'_, '_> {
    fn height(&self) -> Height {
        self.view.chain.height
    }

    fn note(&mut self, tx: Option<TxId>, event: Event) {
        self.out.notes.push((tx, None, event));
    }

    fn abstain(&mut self, target_tx: TxId, reason: &str, expected_profit: i128) {
        self.note(
            Some(target_tx),
            Event::AttackAbstained {
                target_tx,
                reason: reason.into(),
                expected_profit,
            },
        );
    }

    fn submit(
        &mut self,
        kind: TxKind,
        payload: TxPayload,
        role: RoleTag,
    ) -> Result<TxId, AgentError> {
        let tx: Transaction = self.ids.new_transaction(
            kind,
            payload,
            self.view.fees.for_kind(kind),
            self.id.clone(),
            self.height(),
            role,
        )?;
        let id = tx.tx_id;
        self.out.txs.push(tx);
        Ok(id)
    }

    /// Optimal sandwich against `victim` on `pool`, paying `kind` fees.
    fn size(
        &self,
        pool: &PoolState,
        victim: &TradeOrder,
        kind: TxKind,
        exit: Exit,
    ) -> Result<SandwichCandidate, AgentError> {
        let input = victim.direction.input_asset();
        let (reserve_in, _) = pool.reserves_for(victim.direction);
        let balance = self
            .view
            .chain
            .account(self.id)
            .map_or(Amount::ZERO, |a| a.balance(input));
        let search = SandwichSearch::new(
            self.view.fee_in(kind, input)?,
            self.cfg.search_step,
            balance.min(reserve_in),
        )
        .with_exit(exit);
        Ok(optimal_sandwich(pool, victim, &search)?)
    }

    fn legs(
        &mut self,
        direction: Direction,
        plan: &SandwichCandidate,
    ) -> Result<(TradeOrder, TradeOrder), AgentError> {
        let front = TradeOrder::new(
            self.id.clone(),
            direction,
            plan.front_amount,
            plan.front_out,
            self.rng.gen(),
        )?;
        let back = TradeOrder::new(
            self.id.clone(),
            direction.opposite(),
            plan.front_out,
            plan.exit_value,
            self.rng.gen(),
        )?;
        Ok((front, back))
    }

    fn baseline(&mut self, seen: &mut BTreeSet<TxId>, exit: Exit) -> Result<(), AgentError> {
        let pool = self.view.chain.pool;
        let hits = bot_scan(
            self.view.mempool,
            self.cfg.detection_threshold_bps,
            &pool,
            ProtocolMode::Baseline,
            Some(self.id),
        );
        let targets: Vec<(TxId, TradeOrder)> = hits
            .into_iter()
            .filter_map(|(tx, _)| Some((tx.tx_id, tx.payload.order()?.clone())))
            .collect();
        for (target_tx, victim) in targets {
            if !seen.insert(target_tx) {
                continue;
            }
            let plan = self.size(&pool, &victim, TxKind::DirectSwap, exit)?;
            if plan.net_profit <= 0 {
                self.abstain(target_tx, "no_profit", plan.net_profit);
                continue;
            }
            let (front, back) = self.legs(victim.direction, &plan)?;
            let front_tx = self.submit(
                TxKind::DirectSwap,
                TxPayload::DirectSwap { order: front },
                RoleTag::AttackerFront,
            )?;
            let mut directive = vec![front_tx, target_tx];
            let back_tx = match exit {
                Exit::BackRun => {
                    let tx = self.submit(
                        TxKind::DirectSwap,
                        TxPayload::DirectSwap { order: back },
                        RoleTag::AttackerBack,
                    )?;
                    directive.push(tx);
                    Some(tx)
                }
                Exit::HoldAtMarket => None,
            };
            self.note(
                Some(target_tx),
                Event::AttackPlanned {
                    target_tx,
                    front_tx,
                    back_tx,
                    front_amount: plan.front_amount,
                    expected_profit: plan.net_profit,
                },
            );
            self.out.directive = Some(directive);
            // one ordered triple per block
            break;
        }
        Ok(())
    }

    fn queue_campaign(
        &mut self,
        campaign: Campaign,
        seen: &mut BTreeSet<TxId>,
        honest: &HonestTraderConfig,
    ) -> Result<Campaign, AgentError> {
        match campaign {
            Campaign::Idle => self.grab(seen, honest),
            Campaign::Requested {
                target_tx,
                front_req,
                back_req,
                committed,
                since,
            } => match self.check_slots(target_tx, front_req, back_req, committed, since) {
                // the victim may reveal in the same block its token lands
                held @ Campaign::Holding { .. } => self.queue_campaign(held, seen, honest),
                other => Ok(other),
            },
            Campaign::Holding {
                target_tx,
                front_seq,
                target_seq,
                back_seq,
                committed,
            } => self.play(target_tx, front_seq, target_seq, back_seq, committed),
        }
    }

    /// Stage 1: request the slots on both sides of a pending victim request.
    fn grab(
        &mut self,
        seen: &mut BTreeSet<TxId>,
        honest: &HonestTraderConfig,
    ) -> Result<Campaign, AgentError> {
        let target = self
            .view
            .mempool
            .pending()
            .iter()
            .filter(|tx| tx.submitter != *self.id && tx.kind() == TxKind::OrderRequest)
            .map(|tx| tx.tx_id)
            .find(|id| !seen.contains(id));
        let Some(target_tx) = target else {
            return Ok(Campaign::Idle);
        };
        seen.insert(target_tx);
        let pool = self.view.chain.pool;
        let buckets = honest.buckets();
        let req_fee_x = self
            .view
            .fee_in(TxKind::OrderRequest, crate::model::Asset::X)?
            .to_signed()?;

        let (committed, expected_value, guess) = match self.cfg.strategy {
            AttackerStrategy::CommaV2Guessing => {
                let g = self.rng.gen_range(0..buckets.len());
                let (guess_order, _) = buckets[g].order(&pool, self.id.clone(), 0)?;
                let plan = self.size(&pool, &guess_order, TxKind::Reveal, Exit::BackRun)?;
                if plan.net_profit <= 0 {
                    self.abstain(target_tx, "unprofitable_guess", plan.net_profit);
                    return Ok(Campaign::Idle);
                }
                let (front, back) = self.legs(guess_order.direction, &plan)?;
                let net_x = self
                    .view
                    .to_x(plan.net_profit, guess_order.direction.input_asset())?;
                let ev = net_x / buckets.len() as i128 - 2 * req_fee_x;
                let committed = Committed {
                    guess: (
                        guess_order.direction,
                        guess_order.amount_in,
                        guess_order.min_amount_out,
                    ),
                    front,
                    back,
                };
                (Some(committed), ev, Some(g))
            }
            _ => {
                let ev = self.bucket_expectation(&pool, &buckets, honest)? - 2.0 * req_fee_x as f64;
                let ev_floor = ev.floor() as i128;
                if ev_floor <= 0 {
                    self.abstain(target_tx, "negative_expected_value", ev_floor);
                    return Ok(Campaign::Idle);
                }
                (None, ev_floor, None)
            }
        };

        let commitment = |o: Option<&TradeOrder>| o.map(compute_commitment);
        let front_req = self.submit(
            TxKind::OrderRequest,
            TxPayload::OrderRequest {
                requester: self.id.clone(),
                commitment: commitment(committed.as_ref().map(|c| &c.front)),
            },
            RoleTag::AttackerRequest,
        )?;
        let back_req = self.submit(
            TxKind::OrderRequest,
            TxPayload::OrderRequest {
                requester: self.id.clone(),
                commitment: commitment(committed.as_ref().map(|c| &c.back)),
            },
            RoleTag::AttackerRequest,
        )?;
        self.note(
            Some(target_tx),
            Event::SlotGrab {
                target_tx,
                request_txs: vec![front_req, back_req],
                guess,
                expected_value: Some(expected_value),
            },
        );
        self.out.directive = Some(vec![front_req, target_tx, back_req]);
        Ok(Campaign::Requested {
            target_tx,
            front_req,
            back_req,
            committed,
            since: self.height(),
        })
    }

    /// Probability-weighted positive part of the sandwich value over the
    /// honest order space, in X, before request fees.
    fn bucket_expectation(
        &self,
        pool: &PoolState,
        buckets: &[Bucket],
        honest: &HonestTraderConfig,
    ) -> Result<f64, AgentError> {
        let mut ev = 0.0;
        for (bucket, p) in buckets.iter().zip(honest.bucket_probabilities()) {
            let (order, _) = bucket.order(pool, self.id.clone(), 0)?;
            if slack_bps(pool, &order)
                .is_none_or(|s| s < u128::from(self.cfg.detection_threshold_bps))
            {
                continue;
            }
            let plan = self.size(pool, &order, TxKind::Reveal, Exit::BackRun)?;
            if plan.net_profit > 0 {
                ev += p * self
                    .view
                    .to_x(plan.net_profit, order.direction.input_asset())?
                    as f64;
            }
        }
        Ok(ev)
    }

    fn check_slots(
        &mut self,
        target_tx: TxId,
        front_req: TxId,
        back_req: TxId,
        committed: Option<Committed>,
        since: Height,
    ) -> Campaign {
        let chain = self.view.chain;
        let all_in = [front_req, target_tx, back_req]
            .iter()
            .all(|id| chain.was_included(*id));
        if !all_in {
            let patience = u64::from(chain.queue.as_ref().map_or(0, |q| q.grace_blocks())) + 1;
            if self.height().saturating_sub(since) > patience {
                self.note(Some(target_tx), Event::SlotGrabFailed { target_tx });
                return Campaign::Idle;
            }
            return Campaign::Requested {
                target_tx,
                front_req,
                back_req,
                committed,
                since,
            };
        }
        let seqs = (
            self.view.token_for_request(front_req),
            self.view.token_for_request(target_tx),
            self.view.token_for_request(back_req),
        );
        match seqs {
            (Some(f), Some(t), Some(b)) if t == f + 1 && b == t + 1 => Campaign::Holding {
                target_tx,
                front_seq: f,
                target_seq: t,
                back_seq: b,
                committed,
            },
            _ => {
                self.note(Some(target_tx), Event::SlotGrabFailed { target_tx });
                Campaign::Idle
            }
        }
    }

    /// The victim's reveal for `seq`: pending in the mempool or already
    /// accepted on chain.
    fn victim_reveal(&self, seq: u64) -> Option<(TxId, TradeOrder, bool)> {
        let queue = self.view.chain.queue.as_ref()?;
        let owner = &queue.token(seq)?.owner;
        let pending = self
            .view
            .mempool
            .pending()
            .iter()
            .find_map(|tx| match &tx.payload {
                TxPayload::Reveal { token_seq, order }
                    if *token_seq == seq && &tx.submitter == owner && &order.trader == owner =>
                {
                    Some((tx.tx_id, order.clone(), true))
                }
                _ => None,
            });
        pending.or_else(|| {
            let order = queue.buffered(seq)?.clone();
            let tx = self
                .view
                .chain
                .events
                .iter()
                .rev()
                .find_map(|r| match r.event {
                    Event::RevealAccepted { .. } if r.seq == Some(seq) => r.tx_id,
                    _ => None,
                })?;
            Some((tx, order, false))
        })
    }

    /// Pool as it should stand once every token ahead of `seq` has run,
    /// as far as their orders are known.
    fn projected_pool(&self, seq: u64) -> PoolState {
        let mut pool = self.view.chain.pool;
        let Some(queue) = self.view.chain.queue.as_ref() else {
            return pool;
        };
        for s in queue.head_seq()..seq {
            match queue.token(s).map(|t| t.state) {
                Some(TokenState::Expired | TokenState::Executed) => continue,
                None => break,
                _ => {}
            }
            let Some((_, order, _)) = self.victim_reveal(s) else {
                break;
            };
            if let Ok((next, _)) = pool.swap(order.direction, order.amount_in, order.min_amount_out)
            {
                pool = next;
            }
        }
        pool
    }

    /// Stage 2: reacts to the victim's reveal.
    fn play(
        &mut self,
        target_tx: TxId,
        front_seq: u64,
        target_seq: u64,
        back_seq: u64,
        committed: Option<Committed>,
    ) -> Result<Campaign, AgentError> {
        let holding = Campaign::Holding {
            target_tx,
            front_seq,
            target_seq,
            back_seq,
            committed: committed.clone(),
        };
        let Some(queue) = self.view.chain.queue.as_ref() else {
            return Ok(Campaign::Idle);
        };
        let pending = |s| {
            queue
                .token(s)
                .is_some_and(|t| t.state == TokenState::Pending)
        };
        if !pending(front_seq) || !pending(back_seq) {
            return Ok(Campaign::Idle);
        }
        let Some((reveal_tx, victim, in_mempool)) = self.victim_reveal(target_seq) else {
            return Ok(if pending(target_seq) {
                holding
            } else {
                Campaign::Idle
            });
        };
        let pool = self.projected_pool(front_seq);
        let reveal_fee_x = self
            .view
            .fee_in(TxKind::Reveal, crate::model::Asset::X)?
            .to_signed()?;

        let (front, back, expected) = match committed {
            None => {
                if slack_bps(&pool, &victim)
                    .is_none_or(|s| s < u128::from(self.cfg.detection_threshold_bps))
                {
                    self.abstain(reveal_tx, "below_threshold", 0);
                    return Ok(Campaign::Idle);
                }
                let plan = self.size(&pool, &victim, TxKind::Reveal, Exit::BackRun)?;
                if plan.net_profit <= 0 {
                    self.abstain(reveal_tx, "no_profit", plan.net_profit);
                    return Ok(Campaign::Idle);
                }
                let (front, back) = self.legs(victim.direction, &plan)?;
                (front, back, plan.net_profit)
            }
            Some(c) => {
                let matched =
                    c.guess == (victim.direction, victim.amount_in, victim.min_amount_out);
                let expected = match simulate(&pool, &c.front, &victim, &c.back) {
                    Some(gross) => {
                        self.view.to_x(gross, c.front.direction.input_asset())? - 2 * reveal_fee_x
                    }
                    None => -2 * reveal_fee_x,
                };
                let go = (matched && expected > 0) || self.cfg.reveal_on_miss;
                if !go {
                    let reason = if matched { "no_profit" } else { "guess_missed" };
                    self.abstain(reveal_tx, reason, expected);
                    return Ok(Campaign::Idle);
                }
                (c.front, c.back, expected)
            }
        };

        let front_amount = front.amount_in;
        let front_tx = self.submit(
            TxKind::Reveal,
            TxPayload::Reveal {
                token_seq: front_seq,
                order: front,
            },
            RoleTag::AttackerFront,
        )?;
        let back_tx = self.submit(
            TxKind::Reveal,
            TxPayload::Reveal {
                token_seq: back_seq,
                order: back,
            },
            RoleTag::AttackerBack,
        )?;
        self.note(
            Some(reveal_tx),
            Event::AttackPlanned {
                target_tx: reveal_tx,
                front_tx,
                back_tx: Some(back_tx),
                front_amount,
                expected_profit: expected,
            },
        );
        let directive = if in_mempool {
            vec![front_tx, reveal_tx, back_tx]
        } else {
            vec![front_tx, back_tx]
        };
        self.out.directive = Some(directive);
        Ok(Campaign::Idle)
    }
}

/// Gross result of front, victim, back on `pool` in the front's input
/// asset, or `None` if any leg's guard fires.
fn simulate(
    pool: &PoolState,
    front: &TradeOrder,
    victim: &TradeOrder,
    back: &TradeOrder,
) -> Option<i128> {
    let (p1, f_out) = pool
        .swap(front.direction, front.amount_in, front.min_amount_out)
        .ok()?;
    let (p2, _) = p1
        .swap(victim.direction, victim.amount_in, victim.min_amount_out)
        .ok()?;
    let (_, b_out) = p2
        .swap(back.direction, back.amount_in, back.min_amount_out)
        .ok()?;
    if back.amount_in > f_out {
        return None;
    }
    Some(b_out.to_signed().ok()? - front.amount_in.to_signed().ok()?)
}
