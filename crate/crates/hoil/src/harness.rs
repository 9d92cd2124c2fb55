//! Experiment configuration, seeded multi-trial execution, evaluation,
//! metric persistence, plot emission, and the support-overlap report.
//!
//! Every metric file is a pure function of (config, seed): trial randomness
//! flows through tagged streams derived from the environment seed, and
//! wallclock goes to a separate run log so reruns are byte-identical.

use crate::baselines::{self, BaselineKind};
use crate::data::{
    collect_evolving_data, dataset_container, rollout, rollout_greedy, support_sets, Dataset,
    DatasetHeader, DualInstance, Instance, SupportPartition,
};
use crate::env::{
    auxiliary_policy, expert_policy, make_dual_grid, make_dual_pointmass, DualObsEnv, Policy,
    SpaceTag,
};
use crate::error::{HoilError, Result};
use crate::iwre::{
    pretrain_with_evolving, train, CheckpointCtx, IwreConfig, QueryBudget, TrainOptions,
};
use crate::plot::{line_chart, Series};
use crate::rejection::RejectionConfig;
use crate::rng::{self, Rng};
use rand::Rng as _;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvFamily {
    Grid,
    Pointmass,
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub family: EnvFamily,
    pub size: usize,
    pub goal: (usize, usize),
    pub blocked: Vec<(usize, usize)>,
    pub seed: u64,
    pub epsilon: f64,
    pub gamma: Option<f64>,
    pub arena_half_width: f64,
    pub rotation_e: f64,
    pub rotation_l: f64,
    pub action_grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Ratio(f64),
    Unlimited,
}

impl Budget {
    pub fn to_query_budget(self, total_steps: usize) -> QueryBudget {
        match self {
            Budget::Unlimited => QueryBudget::unlimited(),
            Budget::Ratio(r) => QueryBudget::capped((r * total_steps as f64).round() as u64),
        }
    }

    fn label(self) -> String {
        match self {
            Budget::Unlimited => "unlimited".to_string(),
            Budget::Ratio(r) => format!("{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Iwre,
    Baseline(BaselineKind),
}

impl Method {
    pub fn parse(name: &str) -> Option<Method> {
        if name == "iwre" {
            return Some(Method::Iwre);
        }
        BaselineKind::parse(name).map(Method::Baseline)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Iwre => write!(f, "iwre"),
            Method::Baseline(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub method: Method,
    pub total_steps: usize,
    pub budget: Budget,
    pub n_demo_trajectories: usize,
    pub n_seeds: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    pub target_coverage: f64,
    pub penalty_weight: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub update_ratio: usize,
    pub buffer: usize,
    pub entropy_coef: f64,
    pub clip_ratio: f64,
    pub pretrain_epochs: usize,
    pub bc_init_epochs: usize,
    /// Epochs for the behavior-cloning baseline.
    pub bc_epochs: usize,
    /// Feed teacher-confirmed latent-demonstration queries back into the
    /// weighted demonstration pool.
    pub queried_to_weighted: bool,
    /// Uniform exploration mixed into the behavior policy during collection.
    pub exploration_mix: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvSpec {
                family: EnvFamily::Grid,
                size: 5,
                goal: crate::fixtures::CORRIDOR_GOAL,
                blocked: crate::fixtures::CORRIDOR_BLOCKED.to_vec(),
                seed: 7,
                epsilon: crate::fixtures::CORRIDOR_EPSILON,
                gamma: None,
                arena_half_width: 1.0,
                rotation_e: 0.0,
                rotation_l: 0.9,
                action_grid: 3,
            },
            method: Method::Iwre,
            total_steps: 60_000,
            budget: Budget::Unlimited,
            n_demo_trajectories: 20,
            n_seeds: 5,
            eval_interval: 6000,
            eval_episodes: 20,
            out_dir: PathBuf::from("runs/out"),
            target_coverage: 0.8,
            penalty_weight: 1.0,
            lr: 3e-4,
            batch_size: 256,
            update_ratio: 3,
            buffer: 5000,
            entropy_coef: 0.01,
            clip_ratio: 0.2,
            pretrain_epochs: 100,
            bc_init_epochs: 100,
            bc_epochs: 400,
            queried_to_weighted: false,
            exploration_mix: 0.0,
        }
    }
}

impl ExperimentConfig {
    /// The corridor comparison setup used by the acceptance suite: the same
    /// appendix-style hyperparameters rescaled to the 5x5 task.
    pub fn corridor_task(method: Method, budget: Budget) -> Self {
        ExperimentConfig {
            method,
            budget,
            total_steps: 60_000,
            batch_size: 128,
            lr: 1e-3,
            eval_interval: 6000,
            pretrain_epochs: 400,
            buffer: 32,
            entropy_coef: 0.02,
            queried_to_weighted: true,
            exploration_mix: 0.05,
            ..ExperimentConfig::default()
        }
    }

    /// Parse the plain-text key=value format. `[section]` headers prefix the
    /// keys that follow; the `env` section maps to `env.*` keys and other
    /// sections flatten to bare keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut prefix = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                prefix = if section == "env" {
                    "env.".to_string()
                } else {
                    String::new()
                };
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HoilError::Parse {
                location: format!("line {}", lineno + 1),
                message: format!("expected key = value, got `{line}`"),
            })?;
            let full = format!("{prefix}{}", key.trim());
            cfg.apply_override(&full, value.trim())
                .map_err(|e| HoilError::Parse {
                    location: format!("line {}", lineno + 1),
                    message: e.to_string(),
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |m: String| HoilError::InvalidConfig(m);
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| bad(format!("expected an integer, got `{v}`")))
        };
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| bad(format!("expected a number, got `{v}`")))
        };
        let parse_cell = |v: &str| -> Result<(usize, usize)> {
            let (r, c) = v
                .split_once(',')
                .ok_or_else(|| bad(format!("expected row,col, got `{v}`")))?;
            Ok((
                r.trim()
                    .parse()
                    .map_err(|_| bad(format!("bad row in `{v}`")))?,
                c.trim()
                    .parse()
                    .map_err(|_| bad(format!("bad col in `{v}`")))?,
            ))
        };
        match key {
            "env.family" => {
                self.env.family = match value {
                    "grid" => EnvFamily::Grid,
                    "pointmass" => EnvFamily::Pointmass,
                    other => return Err(bad(format!("unknown env family `{other}`"))),
                }
            }
            "env.size" => self.env.size = parse_usize(value)?,
            "env.goal" => self.env.goal = parse_cell(value)?,
            "env.blocked" => {
                self.env.blocked = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(';')
                        .map(|cell| parse_cell(cell.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "env.seed" => {
                self.env.seed = value
                    .parse()
                    .map_err(|_| bad(format!("expected an integer seed, got `{value}`")))?
            }
            "env.epsilon" => self.env.epsilon = parse_f64(value)?,
            "env.gamma" => self.env.gamma = Some(parse_f64(value)?),
            "env.arena" => self.env.arena_half_width = parse_f64(value)?,
            "env.rotation_e" => self.env.rotation_e = parse_f64(value)?,
            "env.rotation_l" => self.env.rotation_l = parse_f64(value)?,
            "env.action_grid" => self.env.action_grid = parse_usize(value)?,
            "method" => {
                self.method = Method::parse(value)
                    .ok_or_else(|| bad(format!("unknown method `{value}`")))?
            }
            "total_steps" => self.total_steps = parse_usize(value)?,
            "budget_ratio" => {
                self.budget = if value == "unlimited" {
                    Budget::Unlimited
                } else {
                    let r = parse_f64(value)?;
                    if !(0.0..=1.0).contains(&r) {
                        return Err(bad(format!("budget ratio {r} outside [0,1]")));
                    }
                    Budget::Ratio(r)
                }
            }
            "n_demo_trajectories" => self.n_demo_trajectories = parse_usize(value)?,
            "seeds" => self.n_seeds = parse_usize(value)?,
            "eval_interval" => self.eval_interval = parse_usize(value)?,
            "eval_episodes" => self.eval_episodes = parse_usize(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "c" => self.target_coverage = parse_f64(value)?,
            "lambda" => self.penalty_weight = parse_f64(value)?,
            "lr" => self.lr = parse_f64(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "update_ratio" => self.update_ratio = parse_usize(value)?,
            "buffer" => self.buffer = parse_usize(value)?,
            "entropy_coef" => self.entropy_coef = parse_f64(value)?,
            "clip_ratio" => self.clip_ratio = parse_f64(value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_usize(value)?,
            "bc_init_epochs" => self.bc_init_epochs = parse_usize(value)?,
            "bc_epochs" => self.bc_epochs = parse_usize(value)?,
            "exploration_mix" => self.exploration_mix = parse_f64(value)?,
            "queried_to_weighted" => {
                self.queried_to_weighted = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(bad(format!("expected true/false, got `{other}`"))),
                }
            }
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HoilError::InvalidConfig(m.to_string()));
        if self.total_steps == 0
            || self.n_seeds == 0
            || self.eval_interval == 0
            || self.eval_episodes == 0
            || self.batch_size == 0
            || self.update_ratio == 0
            || self.buffer == 0
            || self.n_demo_trajectories == 0
        {
            return bad("all counts must be positive");
        }
        RejectionConfig {
            target_coverage: self.target_coverage,
            penalty_weight: self.penalty_weight,
        }
        .validate()?;
        Ok(())
    }

    pub fn build_env(&self) -> Result<DualObsEnv> {
        let env = match self.env.family {
            EnvFamily::Grid => make_dual_grid(
                self.env.size,
                self.env.size,
                self.env.goal,
                &self.env.blocked,
                self.env.seed,
            )?,
            EnvFamily::Pointmass => make_dual_pointmass(
                self.env.arena_half_width,
                self.env.rotation_e,
                self.env.rotation_l,
                self.env.action_grid,
                self.env.seed,
            )?,
        };
        Ok(match self.env.gamma {
            Some(g) => env.with_gamma(g),
            None => env,
        })
    }

    pub fn to_iwre_config(&self) -> IwreConfig {
        IwreConfig {
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            update_ratio: self.update_ratio,
            lr: self.lr,
            entropy_coef: self.entropy_coef,
            clip_ratio: self.clip_ratio,
            n_evolving_trajectories: 20,
            pretrain_epochs: self.pretrain_epochs,
            bc_init_epochs: self.bc_init_epochs,
            buffer_capacity: self.buffer,
            calibration_epochs: 4,
            rejection: RejectionConfig {
                target_coverage: self.target_coverage,
                penalty_weight: self.penalty_weight,
            },
            eval_interval: self.eval_interval,
            queried_into_weighted_set: self.queried_to_weighted,
            exploration_mix: self.exploration_mix,
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Mean and standard deviation of undiscounted true-reward returns over
/// greedy episodes.
pub fn evaluate(
    policy: &Policy,
    env: &DualObsEnv,
    n_episodes: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    assert!(n_episodes >= 1);
    let returns: Vec<f64> = (0..n_episodes)
        .map(|_| rollout_greedy(env, policy, rng).episode_return)
        .collect();
    mean_std(&returns)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Per-checkpoint metric record. Wallclock stays in memory and the run log;
/// it is excluded from metric files so reruns are byte-identical.
#[derive(Debug, Clone)]
pub struct MetricRecord {
    pub step: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub queries_used: u64,
    pub coverage: f64,
    pub h_visit_fraction: f64,
    pub wallclock: f64,
}

pub const METRICS_HEADER: &str = "step,mean_return,std_return,queries_used,coverage,h_visit_fraction";

impl MetricRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.mean_return,
            self.std_return,
            self.queries_used,
            self.coverage,
            self.h_visit_fraction
        )
    }
}

/// Fraction of the ground-truth latent-demonstration pairs visited by the
/// given trajectories; NaN when the latent set is empty.
pub fn h_visit_fraction(
    partition: &SupportPartition,
    trajectories: &[crate::data::Trajectory<Instance>],
) -> f64 {
    if partition.h.is_empty() {
        return f64::NAN;
    }
    let visited: std::collections::BTreeSet<(usize, usize)> = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|i| (i.latent_state, i.action)))
        .collect();
    partition.h.intersection(&visited).count() as f64 / partition.h.len() as f64
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

struct SeedOutcome {
    rows: Vec<MetricRecord>,
    fixture_hash: u64,
    final_policy: Policy,
    wallclock: f64,
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub per_seed_finals: Vec<Option<f64>>,
    pub mean_final: f64,
    pub std_final: f64,
    pub expert_return: f64,
    pub pi1_return: f64,
    pub fixture_hashes: Vec<Option<u64>>,
    pub failures: Vec<(usize, String)>,
}

fn fnv_hash(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fixture_hash(env: &DualObsEnv, seed: u64, demos: &[Instance], evolving: &[DualInstance]) -> u64 {
    let header = DatasetHeader {
        env_id: env.id().to_string(),
        obs_dim_e: env.obs_dim(SpaceTag::E),
        obs_dim_l: env.obs_dim(SpaceTag::L),
        gamma: env.gamma(),
        seed,
    };
    let mut bytes = dataset_container(&header, &Dataset::Single(demos.to_vec())).to_bytes();
    bytes.extend(dataset_container(&header, &Dataset::Dual(evolving.to_vec())).to_bytes());
    fnv_hash(&bytes)
}

/// Expert demonstrations: trajectories of the expert policy, flattened to
/// expert-space instances.
pub fn collect_demos(
    env: &DualObsEnv,
    pi_e: &Policy,
    n_trajectories: usize,
    rng: &mut Rng,
) -> Vec<Instance> {
    (0..n_trajectories)
        .flat_map(|_| rollout(env, pi_e, rng).steps)
        .collect()
}

fn run_seed(
    config: &ExperimentConfig,
    env: &DualObsEnv,
    pi_e: &Policy,
    pi_1: &Policy,
    partition: &SupportPartition,
    seed_index: usize,
) -> Result<SeedOutcome> {
    let start = Instant::now();
    let trial_seed: u64 = rng::derived(config.env.seed, &format!("trial-{seed_index}")).random();
    let mut demo_rng = rng::derived(trial_seed, "demos");
    let demos = collect_demos(env, pi_e, config.n_demo_trajectories, &mut demo_rng);
    let mut evolving_rng = rng::derived(trial_seed, "evolving");
    let evolving = collect_evolving_data(env, pi_1, 20, &mut evolving_rng);
    let hash = fixture_hash(env, trial_seed, &demos, &evolving);
    let iwre_cfg = config.to_iwre_config();

    let mut rows: Vec<MetricRecord> = Vec::new();
    {
        let mut hook = |ctx: &CheckpointCtx| {
            let mut eval_rng = rng::derived(trial_seed, &format!("eval-{}", ctx.env_steps));
            let trajs: Vec<_> = (0..config.eval_episodes)
                .map(|_| rollout_greedy(env, ctx.policy, &mut eval_rng))
                .collect();
            let returns: Vec<f64> = trajs.iter().map(|t| t.episode_return).collect();
            let (mean_return, std_return) = mean_std(&returns);
            rows.push(MetricRecord {
                step: ctx.env_steps,
                mean_return,
                std_return,
                queries_used: ctx.queries_used,
                coverage: ctx.coverage,
                h_visit_fraction: h_visit_fraction(partition, &trajs),
                wallclock: start.elapsed().as_secs_f64(),
            });
        };

        let mut train_rng = rng::derived(trial_seed, "train");
        let final_policy: Policy = match config.method {
            Method::Iwre => {
                let mut pretrain_rng = rng::derived(trial_seed, "pretrain");
                let pretrained = pretrain_with_evolving(
                    env,
                    evolving.clone(),
                    &demos,
                    &iwre_cfg,
                    &mut pretrain_rng,
                )?;
                let budget = config.budget.to_query_budget(config.total_steps);
                train(
                    env,
                    &pretrained,
                    &iwre_cfg,
                    TrainOptions::iwre(budget),
                    &mut train_rng,
                    Some(&mut hook),
                )?
                .policy
            }
            Method::Baseline(BaselineKind::Iw) => {
                let mut pretrain_rng = rng::derived(trial_seed, "pretrain");
                let pretrained = pretrain_with_evolving(
                    env,
                    evolving.clone(),
                    &demos,
                    &iwre_cfg,
                    &mut pretrain_rng,
                )?;
                baselines::iw_train(env, &pretrained, &iwre_cfg, &mut train_rng, Some(&mut hook))?
                    .policy
            }
            Method::Baseline(BaselineKind::Gail) => {
                baselines::gail_train(env, &evolving, &iwre_cfg, &mut train_rng, Some(&mut hook))?
                    .policy
            }
            Method::Baseline(BaselineKind::Lbc) => {
                baselines::lbc_train(env, pi_1, &iwre_cfg, &mut train_rng, Some(&mut hook))?.policy
            }
            Method::Baseline(BaselineKind::RlOracle) => {
                baselines::rl_oracle_train(env, &iwre_cfg, &mut train_rng, Some(&mut hook))?
            }
            Method::Baseline(BaselineKind::Bc) => {
                let policy = baselines::bc_train(
                    &evolving,
                    env.action_count(),
                    config.bc_epochs,
                    config.batch_size,
                    config.lr,
                    &mut train_rng,
                )?;
                hook(&CheckpointCtx {
                    env_steps: config.total_steps,
                    policy: &policy,
                    queries_used: 0,
                    coverage: f64::NAN,
                });
                policy
            }
        };

        Ok(SeedOutcome {
            rows,
            fixture_hash: hash,
            final_policy,
            wallclock: start.elapsed().as_secs_f64(),
        })
    }
}

/// Run every seed of the experiment (in parallel), write one metrics file
/// per seed plus the aggregate, the run metadata, and the final policy
/// checkpoints. A failing seed is recorded and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let env = config.build_env()?;
    let pi_e = expert_policy(&env)?;
    let pi_1 = auxiliary_policy(&env, config.env.epsilon)?;
    let partition = support_sets(&env, &pi_e, &pi_1);
    let expert_return = evaluate(
        &pi_e,
        &env,
        config.eval_episodes,
        &mut rng::derived(config.env.seed, "expert-eval"),
    )
    .0;
    let pi1_return = evaluate(
        &pi_1,
        &env,
        config.eval_episodes,
        &mut rng::derived(config.env.seed, "pi1-eval"),
    )
    .0;

    let outcomes: Vec<Result<SeedOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_seeds)
            .map(|i| {
                let env = &env;
                let pi_e = &pi_e;
                let pi_1 = &pi_1;
                let partition = &partition;
                scope.spawn(move || run_seed(config, env, pi_e, pi_1, partition, i))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });

    let mut per_seed_finals = Vec::new();
    let mut fixture_hashes = Vec::new();
    let mut failures = Vec::new();
    let mut aggregate = String::from("seed,final_return,queries_used,fixture_hash,status\n");
    let mut run_log = String::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(seed_run) => {
                let mut text = String::from(METRICS_HEADER);
                text.push('\n');
                for row in &seed_run.rows {
                    text.push_str(&row.csv_row());
                    text.push('\n');
                }
                fs::write(config.out_dir.join(format!("seed_{i}.csv")), text)?;
                if let Some(net) = seed_run.final_policy.net() {
                    net.save(
                        config.out_dir.join(format!("seed_{i}_policy.bin")),
                        "policy",
                    )?;
                }
                let last = seed_run.rows.last();
                let final_return = last.map(|r| r.mean_return);
                let queries = last.map(|r| r.queries_used).unwrap_or(0);
                per_seed_finals.push(final_return);
                fixture_hashes.push(Some(seed_run.fixture_hash));
                let _ = writeln!(
                    aggregate,
                    "{i},{},{queries},{:016x},ok",
                    final_return.unwrap_or(f64::NAN),
                    seed_run.fixture_hash
                );
                let _ = writeln!(run_log, "seed {i}: {:.3}s", seed_run.wallclock);
            }
            Err(e) => {
                per_seed_finals.push(None);
                fixture_hashes.push(None);
                failures.push((i, e.to_string()));
                let _ = writeln!(aggregate, "{i},NaN,0,0000000000000000,error: {e}");
                let _ = writeln!(run_log, "seed {i}: failed: {e}");
            }
        }
    }
    let finals: Vec<f64> = per_seed_finals.iter().flatten().copied().collect();
    let (mean_final, std_final) = if finals.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&finals)
    };
    fs::write(config.out_dir.join("aggregate.csv"), aggregate)?;
    fs::write(config.out_dir.join("run_log.txt"), run_log)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "method={}", config.method);
    let _ = writeln!(meta, "budget_ratio={}", config.budget.label());
    let _ = writeln!(meta, "env_id={}", env.id());
    let _ = writeln!(meta, "total_steps={}", config.total_steps);
    let _ = writeln!(meta, "n_seeds={}", config.n_seeds);
    let _ = writeln!(meta, "eval_interval={}", config.eval_interval);
    let _ = writeln!(meta, "eval_episodes={}", config.eval_episodes);
    let _ = writeln!(meta, "expert_return={expert_return}");
    let _ = writeln!(meta, "pi1_return={pi1_return}");
    let _ = writeln!(meta, "mean_final={mean_final}");
    let _ = writeln!(meta, "std_final={std_final}");
    fs::write(config.out_dir.join("meta.txt"), meta)?;

    Ok(RunSummary {
        out_dir: config.out_dir.clone(),
        per_seed_finals,
        mean_final,
        std_final,
        expert_return,
        pi1_return,
        fixture_hashes,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Support-overlap report
// ---------------------------------------------------------------------------

/// For each checkpoint policy: the fraction of ground-truth latent pairs
/// visited, the fraction of observed pairs visited, and the fraction of the
/// policy's visits that land outside the expert support (over-exploration).
/// Rollouts sample the policy's own action distribution.
pub fn support_overlap_report(
    env: &DualObsEnv,
    pi_e: &Policy,
    pi_1: &Policy,
    checkpoints: &[(String, Policy)],
    n_episodes: usize,
    seed: u64,
) -> Result<String> {
    if env.state_count() == 0 {
        return Err(HoilError::UnsupportedReport("empty environment".into()));
    }
    let partition = support_sets(env, pi_e, pi_1);
    let mut out = String::from("checkpoint,h_visited_fraction,o_visited_fraction,n_visit_fraction\n");
    let mut reference: Vec<(String, &Policy)> = vec![
        ("expert".to_string(), pi_e),
        ("pi1".to_string(), pi_1),
    ];
    for (label, policy) in checkpoints {
        reference.push((label.clone(), policy));
    }
    for (label, policy) in reference {
        let mut rng = rng::derived(seed, &format!("overlap-{label}"));
        let mut visited = std::collections::BTreeSet::new();
        let mut n_instances = 0usize;
        let mut n_in_n = 0usize;
        for _ in 0..n_episodes {
            for step in rollout(env, policy, &mut rng).steps {
                let key = (step.latent_state, step.action);
                visited.insert(key);
                n_instances += 1;
                if partition.n.contains(&key) {
                    n_in_n += 1;
                }
            }
        }
        let frac = |set: &std::collections::BTreeSet<(usize, usize)>| {
            if set.is_empty() {
                f64::NAN
            } else {
                set.intersection(&visited).count() as f64 / set.len() as f64
            }
        };
        let n_visit = if n_instances == 0 {
            f64::NAN
        } else {
            n_in_n as f64 / n_instances as f64
        };
        let _ = writeln!(
            out,
            "{label},{},{},{n_visit}",
            frac(&partition.h),
            frac(&partition.o)
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Plot emission
// ---------------------------------------------------------------------------

struct RunData {
    name: String,
    method: String,
    budget_ratio: Option<f64>,
    expert_return: Option<f64>,
    pi1_return: Option<f64>,
    /// step -> per-seed final returns at that step.
    curve: BTreeMap<usize, Vec<f64>>,
}

fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

fn read_run_dir(dir: &Path, warnings: &mut Vec<String>) -> Option<RunData> {
    let name = dir.file_name()?.to_string_lossy().to_string();
    let meta = match read_meta(&dir.join("meta.txt")) {
        Ok(m) => m,
        Err(e) => {
            warnings.push(format!("{name}: skipped ({e})"));
            return None;
        }
    };
    let mut curve: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut seed_files = 0;
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("seed_") && n.ends_with(".csv")
                })
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in entries {
        let Ok(text) = fs::read_to_string(&path) else {
            warnings.push(format!("{name}: unreadable {}", path.display()));
            continue;
        };
        seed_files += 1;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 2 {
                warnings.push(format!("{name}: malformed row `{line}`"));
                continue;
            }
            let (Ok(step), Ok(ret)) = (cols[0].parse::<usize>(), cols[1].parse::<f64>()) else {
                warnings.push(format!("{name}: malformed row `{line}`"));
                continue;
            };
            curve.entry(step).or_default().push(ret);
        }
    }
    if seed_files == 0 {
        warnings.push(format!("{name}: no seed files"));
        return None;
    }
    Some(RunData {
        name,
        method: meta.get("method").cloned().unwrap_or_else(|| "?".into()),
        budget_ratio: meta.get("budget_ratio").and_then(|v| v.parse().ok()),
        expert_return: meta.get("expert_return").and_then(|v| v.parse().ok()),
        pi1_return: meta.get("pi1_return").and_then(|v| v.parse().ok()),
        curve,
    })
}

/// Scan a directory of run outputs and write learning-curve and budget-sweep
/// charts plus their exact data files and a warning manifest.
pub fn emit_plots(metrics_dir: &Path) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(metrics_dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let runs: Vec<RunData> = dirs
        .iter()
        .filter_map(|d| read_run_dir(d, &mut warnings))
        .collect();
    if runs.is_empty() {
        warnings.push("no usable run directories".to_string());
    }

    // Learning curves.
    let mut series = Vec::new();
    let mut curves_csv = String::from("run,step,mean_return,std_return\n");
    for run in &runs {
        let mut points = Vec::new();
        for (step, values) in &run.curve {
            let (m, s) = mean_std(values);
            points.push((*step as f64, m, s));
            let _ = writeln!(curves_csv, "{},{step},{m},{s}", run.name);
        }
        series.push(Series {
            label: run.name.clone(),
            points,
        });
    }
    if let Some(reference) = runs.iter().find_map(|r| r.expert_return) {
        let x_max = runs
            .iter()
            .flat_map(|r| r.curve.keys())
            .max()
            .copied()
            .unwrap_or(1);
        series.push(Series {
            label: "expert".to_string(),
            points: vec![(0.0, reference, 0.0), (x_max as f64, reference, 0.0)],
        });
        if let Some(pi1) = runs.iter().find_map(|r| r.pi1_return) {
            series.push(Series {
                label: "pi1".to_string(),
                points: vec![(0.0, pi1, 0.0), (x_max as f64, pi1, 0.0)],
            });
        }
    }
    if !series.is_empty() {
        fs::write(
            metrics_dir.join("learning_curves.svg"),
            line_chart("mean return over training", "environment steps", "return", &series),
        )?;
        fs::write(metrics_dir.join("learning_curves.csv"), curves_csv)?;
    }

    // Budget sweep: final return versus budget ratio, grouped by method.
    let mut sweep: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut sweep_csv = String::from("method,budget_ratio,final_mean,final_std\n");
    for run in &runs {
        let Some(ratio) = run.budget_ratio else {
            continue;
        };
        let Some((_, finals)) = run.curve.iter().next_back() else {
            continue;
        };
        let (m, s) = mean_std(finals);
        sweep.entry(run.method.clone()).or_default().push((ratio, m, s));
        let _ = writeln!(sweep_csv, "{},{ratio},{m},{s}", run.method);
    }
    if !sweep.is_empty() {
        let mut sweep_series = Vec::new();
        for (method, mut points) in sweep {
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            sweep_series.push(Series {
                label: method,
                points,
            });
        }
        fs::write(
            metrics_dir.join("budget_sweep.svg"),
            line_chart("final return by query budget", "budget ratio", "return", &sweep_series),
        )?;
        fs::write(metrics_dir.join("budget_sweep.csv"), sweep_csv)?;
    }

    let mut manifest = String::new();
    for w in &warnings {
        let _ = writeln!(manifest, "warning: {w}");
    }
    let _ = writeln!(manifest, "runs: {}", runs.len());
    fs::write(metrics_dir.join("plots_manifest.txt"), manifest)?;
    Ok(warnings)
}
