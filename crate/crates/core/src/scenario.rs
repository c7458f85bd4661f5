//! Scenario configuration and the block loop that drives agents, miner and
//! chain, plus multi-seed sweeps.
//!
//! Randomness: one ChaCha20 generator (`rand_chacha::ChaCha20Rng`) keyed by
//! `seed_from_u64(seed)`. Agent `i` draws from the same key on stream `i`,
//! where the attacker is stream 0 and honest trader `k` is stream `k + 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentView, Attacker, AttackerConfig, AttackerStrategy, HonestTrader, HonestTraderConfig,
};
use crate::amm::PoolState;
use crate::chain::{
    propose_block, ChainError, ChainState, Mempool, MinerKind, MinerStrategy, SimFault, TraceRecord,
};
use crate::metrics::{
    compute_report, MetricsError, MetricsReport, ReferencePrice, ReportInput, Snapshot,
};
use crate::model::{AccountId, Amount, FeeSchedule, ProtocolMode, Ratio, TxIdAllocator};

/// Exit status of a run: success, configuration error, invariant fault.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub reserve_x: Amount,
    pub reserve_y: Amount,
    #[serde(default)]
    pub fee_bps: u16,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            reserve_x: Amount(1_000_000),
            reserve_y: Amount(1_000_000),
            fee_bps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ProtocolMode,
    #[serde(default = "ScenarioConfig::default_blocks")]
    pub blocks: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub fees: FeeSchedule,
    #[serde(default = "ScenarioConfig::default_max_block_txs")]
    pub max_block_txs: usize,
    #[serde(default = "ScenarioConfig::default_grace")]
    pub grace_blocks: u32,
    #[serde(default = "ScenarioConfig::default_miner")]
    pub miner: MinerKind,
    #[serde(default = "ScenarioConfig::default_miner_id")]
    pub miner_id: String,
    #[serde(default)]
    pub honest: HonestTraderConfig,
    #[serde(default)]
    pub attacker: AttackerConfig,
    #[serde(default = "ScenarioConfig::default_rate")]
    pub fee_to_x_rate: Ratio,
}

impl ScenarioConfig {
    fn default_blocks() -> u64 {
        100
    }
    fn default_max_block_txs() -> usize {
        16
    }
    fn default_grace() -> u32 {
        2
    }
    fn default_miner() -> MinerKind {
        MinerKind::HonestFeePriority
    }
    fn default_miner_id() -> String {
        "miner".into()
    }
    fn default_rate() -> Ratio {
        Ratio::ONE
    }

    /// Every default, as documented in the CLI help.
    pub const DEFAULTS_HELP: &'static str = "\
Config defaults (only `mode` is required):
  blocks 100, seed 0, pool {reserve_x 1000000, reserve_y 1000000, fee_bps 30},
  fees {direct_swap 1, order_request 1, reveal 1}, max_block_txs 16,
  grace_blocks 2, miner honest_fee_priority, miner_id \"miner\",
  fee_to_x_rate {num 1, den 1}
  honest: population 4, order_rate 0.5, orders_per_trader unlimited,
    amount_dist [{value 1000, p 1}], tolerance_dist [{value 100, p 1}],
    direction_dist 0.5, id_prefix \"trader\", balance_x/balance_y 1000000000,
    fee_balance 1000000
  attacker: strategy none, id \"oscar\", detection_threshold_bps 1,
    guess_space unset, wins_inclusion_race false, reveal_on_miss false,
    search_step 100, balance_x/balance_y 1000000000, fee_balance 1000000";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_config(bytes: &[u8]) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_slice(bytes).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    PoolState::new(cfg.pool.reserve_x, cfg.pool.reserve_y, cfg.pool.fee_bps)
        .map_err(|e| ConfigError::invalid("pool", e.to_string()))?;
    if cfg.max_block_txs == 0 {
        return Err(ConfigError::invalid("max_block_txs", "must be positive"));
    }
    if cfg.fee_to_x_rate.den == 0 {
        return Err(ConfigError::invalid(
            "fee_to_x_rate.den",
            "must be positive",
        ));
    }
    cfg.honest
        .validate()
        .map_err(|e| ConfigError::invalid("honest", e.to_string()))?;
    let attacker = &cfg.attacker;
    let attacker_id = AccountId::new(attacker.id.clone())
        .map_err(|e| ConfigError::invalid("attacker.id", e.to_string()))?;
    let miner_id = AccountId::new(cfg.miner_id.clone())
        .map_err(|e| ConfigError::invalid("miner_id", e.to_string()))?;
    for k in 0..cfg.honest.population {
        let id = cfg.honest.trader_id(k);
        if id == attacker_id.as_str() || id == miner_id.as_str() {
            return Err(ConfigError::invalid(
                "honest.id_prefix",
                format!("trader id {id:?} collides with another account"),
            ));
        }
    }
    if attacker.search_step.is_zero() {
        return Err(ConfigError::invalid(
            "attacker.search_step",
            "must be positive",
        ));
    }
    let strategy = attacker.strategy;
    if let Some(required) = strategy.required_mode() {
        if required != cfg.mode {
            return Err(ConfigError::invalid(
                "attacker.strategy",
                format!(
                    "{strategy:?} is incompatible with mode {}; it requires {}",
                    cfg.mode.as_str(),
                    required.as_str()
                ),
            ));
        }
        if cfg.miner != MinerKind::MevColluding && !attacker.wins_inclusion_race {
            return Err(ConfigError::invalid(
                "attacker.strategy",
                format!("{strategy:?} needs miner mev_colluding or wins_inclusion_race"),
            ));
        }
        if cfg.max_block_txs < 3 {
            return Err(ConfigError::invalid(
                "max_block_txs",
                "an attack plan needs room for 3 transactions",
            ));
        }
    }
    let space = cfg.honest.buckets().len();
    match (strategy, attacker.guess_space) {
        (AttackerStrategy::CommaV2Guessing, None) => {
            return Err(ConfigError::invalid(
                "attacker.guess_space",
                "required for CommaV2Guessing",
            ))
        }
        (AttackerStrategy::CommaV2Guessing, Some(g)) if g == 0 || g as usize != space => {
            return Err(ConfigError::invalid(
                "attacker.guess_space",
                format!("must equal the honest order space size {space}, got {g}"),
            ))
        }
        (AttackerStrategy::CommaV2Guessing, _) => {}
        (_, Some(_)) => {
            return Err(ConfigError::invalid(
                "attacker.guess_space",
                "only meaningful for CommaV2Guessing",
            ))
        }
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("invariant fault: {0}")]
    Fault(#[from] SimFault),
    #[error("invariant fault: block building failed: {0}")]
    Chain(#[from] ChainError),
    #[error("invariant fault: agent failed: {0}")]
    Agent(String),
    #[error("invariant fault: {0}")]
    Metrics(#[from] MetricsError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAULT,
        }
    }
}

impl From<crate::agents::AgentError> for RunError {
    fn from(e: crate::agents::AgentError) -> Self {
        RunError::Agent(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Vec<TraceRecord>,
    /// Balances and pool before the first block.
    pub initial: Snapshot,
    /// Balances and pool after the last block.
    pub last: Snapshot,
}

/// Independent generator for agent stream `index`.
pub fn agent_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn snapshot(chain: &ChainState) -> Snapshot {
    Snapshot {
        accounts: chain.accounts.clone(),
        pool: chain.pool,
        collected_fees: chain.collected_fees,
    }
}

/// Runs `cfg` to completion with its own seed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    validate(cfg)?;
    let seed = cfg.seed;
    let pool = PoolState::new(cfg.pool.reserve_x, cfg.pool.reserve_y, cfg.pool.fee_bps)
        .map_err(|e| ConfigError::invalid("pool", e.to_string()))?;
    let reference = ReferencePrice::of_pool(&pool);

    let attacker_enabled = cfg.attacker.strategy != AttackerStrategy::None;
    let mut accounts = Vec::new();
    let mut traders = Vec::new();
    for k in 0..cfg.honest.population {
        let account = cfg.honest.account(k)?;
        traders.push(HonestTrader::new(
            account.id.clone(),
            agent_rng(seed, u64::from(k) + 1),
        ));
        accounts.push(account);
    }
    let mut attacker = None;
    if attacker_enabled {
        let account = cfg.attacker.account()?;
        attacker = Some(Attacker::new(account.id.clone(), agent_rng(seed, 0)));
        accounts.push(account);
    }
    let mut chain = ChainState::new(cfg.mode, pool, cfg.grace_blocks, accounts)?;
    let initial = snapshot(&chain);

    let miner_id = AccountId::new(cfg.miner_id.clone()).map_err(crate::agents::AgentError::from)?;
    let attacker_id = attacker.as_ref().map(|a: &Attacker| a.id.clone());
    let miner = match (cfg.miner, &attacker_id) {
        (MinerKind::MevColluding, Some(id)) => MinerStrategy::colluding(id.clone()),
        (MinerKind::MevColluding, None) => MinerStrategy {
            kind: MinerKind::MevColluding,
            colluding_with: None,
        },
        (MinerKind::HonestFeePriority, _) => MinerStrategy::honest(),
    };
    let race_winner = match (&attacker_id, cfg.attacker.wins_inclusion_race) {
        (Some(id), true) => Some(MinerStrategy::colluding(id.clone())),
        _ => None,
    };

    let mut mempool = Mempool::new();
    let mut ids = TxIdAllocator::new();
    for height in 1..=cfg.blocks {
        let mut directive = None;
        for trader in traders.iter_mut() {
            let view = AgentView {
                chain: &chain,
                mempool: &mempool,
                fees: &cfg.fees,
                reference,
                fee_to_x: cfg.fee_to_x_rate,
            };
            let out = trader.step(&cfg.honest, &view, &mut ids)?;
            for (tx, seq, event) in out.notes {
                chain.record(tx, seq, event);
            }
            for tx in out.txs {
                mempool.submit(tx)?;
            }
        }
        if let Some(attacker) = attacker.as_mut() {
            let view = AgentView {
                chain: &chain,
                mempool: &mempool,
                fees: &cfg.fees,
                reference,
                fee_to_x: cfg.fee_to_x_rate,
            };
            let out = attacker.step(&cfg.attacker, &cfg.honest, &view, &mut ids)?;
            for (tx, seq, event) in out.notes {
                chain.record(tx, seq, event);
            }
            for tx in out.txs {
                mempool.submit(tx)?;
            }
            directive = out.directive;
        }
        let builder = match (&directive, &attacker_id) {
            (Some(_), Some(id)) if miner.colludes_with(id) => &miner,
            (Some(_), Some(_)) => race_winner.as_ref().unwrap_or(&miner),
            _ => &miner,
        };
        let plan = directive
            .as_deref()
            .filter(|_| builder.kind == MinerKind::MevColluding);
        let block = propose_block(
            builder,
            &miner_id,
            &mut mempool,
            height,
            cfg.max_block_txs,
            plan,
        )?;
        chain.execute_block(&block)?;
    }

    let last = snapshot(&chain);
    let report = compute_report(&ReportInput {
        run_id: format!("{}-{}", cfg.mode.as_str(), seed),
        seed,
        mode: cfg.mode,
        blocks: cfg.blocks,
        trace: &chain.events,
        initial: &initial,
        last: &last,
        reference,
        fee_to_x: cfg.fee_to_x_rate,
        attacker: attacker_id.as_ref(),
    })?;
    Ok(RunOutput {
        report,
        trace: chain.events,
        initial,
        last,
    })
}

/// One sweep row: the report, or the fault that stopped the run.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub seed: u64,
    pub outcome: Result<MetricsReport, RunError>,
}

impl SweepRow {
    pub fn exit_code(&self) -> i32 {
        match &self.outcome {
            Ok(_) => EXIT_OK,
            Err(e) => e.exit_code(),
        }
    }
}

/// Runs `cfg` once per seed, in parallel. Rows are sorted by seed.
pub fn sweep(cfg: &ScenarioConfig, seeds: &[u64]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ScenarioConfig {
                seed,
                ..cfg.clone()
            };
            SweepRow {
                seed,
                outcome: run_scenario(&cfg).map(|out| out.report),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.seed);
    rows
}
