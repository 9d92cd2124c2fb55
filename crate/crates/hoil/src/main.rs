use clap::{Args, Parser, Subcommand};
use hoil::approx::{self, Approximator, Head};
use hoil::data::{self, Dataset, DatasetHeader};
use hoil::density::{self, Discriminator};
use hoil::env::{auxiliary_policy, expert_policy, Policy, SpaceTag};
use hoil::error::Result;
use hoil::harness::{emit_plots, run_experiment, support_overlap_report, ExperimentConfig};
use hoil::rejection::{self, RejectionConfig, RejectionHead};
use hoil::{fixtures, rng};
use rand::Rng as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hoil",
    about = "Dual-observation imitation learning laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file (built-in corridor defaults when
    /// omitted), honoring CLI overrides.
    Run(RunArgs),
    /// Render learning-curve and budget-sweep charts from run directories.
    Plot {
        /// Directory containing run subdirectories.
        metrics_dir: PathBuf,
    },
    /// Write the support-overlap report for the checkpoints of a finished run.
    Report(ReportArgs),
    /// Run the gradient and oracle self-test battery.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    config: Option<PathBuf>,
    /// Raw key=value overrides (any config key, e.g. env.family=grid).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    total_steps: Option<String>,
    #[arg(long)]
    budget_ratio: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    eval_interval: Option<String>,
    #[arg(long)]
    eval_episodes: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    update_ratio: Option<String>,
    #[arg(long)]
    buffer: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Config that defines the environment of the run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding seed_<i>_policy.bin checkpoints.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let mut config = match &args.config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            let flat: [(&str, &Option<String>); 13] = [
                ("method", &args.method),
                ("total_steps", &args.total_steps),
                ("budget_ratio", &args.budget_ratio),
                ("seeds", &args.seeds),
                ("eval_interval", &args.eval_interval),
                ("eval_episodes", &args.eval_episodes),
                ("out_dir", &args.out_dir),
                ("c", &args.c),
                ("lambda", &args.lambda),
                ("lr", &args.lr),
                ("batch_size", &args.batch_size),
                ("update_ratio", &args.update_ratio),
                ("buffer", &args.buffer),
            ];
            for (key, value) in flat {
                if let Some(v) = value {
                    config.apply_override(key, v)?;
                }
            }
            for pair in &args.set {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    hoil::HoilError::InvalidConfig(format!("--set expects key=value, got `{pair}`"))
                })?;
                config.apply_override(key.trim(), value.trim())?;
            }
            let summary = run_experiment(&config)?;
            println!(
                "method {} | mean final return {:.4} (std {:.4}) over {} seeds",
                config.method, summary.mean_final, summary.std_final, config.n_seeds
            );
            println!(
                "expert {:.4} | pi1 {:.4} | outputs in {}",
                summary.expert_return,
                summary.pi1_return,
                summary.out_dir.display()
            );
            for (seed, error) in &summary.failures {
                eprintln!("seed {seed} failed: {error}");
            }
            Ok(if summary.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Plot { metrics_dir } => {
            let warnings = emit_plots(&metrics_dir)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            println!("plots written to {}", metrics_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report(args) => {
            let config = match &args.config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            let env = config.build_env()?;
            let pi_e = expert_policy(&env)?;
            let pi_1 = auxiliary_policy(&env, config.env.epsilon)?;
            let mut checkpoints = Vec::new();
            for i in 0..config.n_seeds {
                let path = args.run_dir.join(format!("seed_{i}_policy.bin"));
                if path.exists() {
                    let (net, _) = Approximator::load(&path)?;
                    checkpoints.push((format!("seed_{i}"), Policy::from_net(net, SpaceTag::L)));
                }
            }
            let report = support_overlap_report(
                &env,
                &pi_e,
                &pi_1,
                &checkpoints,
                args.episodes,
                args.seed,
            )?;
            let out = args.run_dir.join("support_overlap.csv");
            std::fs::write(&out, &report)?;
            print!("{report}");
            println!("written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let mut all_ok = true;
            for (name, outcome) in run_checks() {
                match outcome {
                    Ok(detail) => println!("PASS {name}: {detail}"),
                    Err(detail) => {
                        all_ok = false;
                        println!("FAIL {name}: {detail}");
                    }
                }
            }
            Ok(if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

type CheckOutcome = std::result::Result<String, String>;

fn run_checks() -> Vec<(&'static str, CheckOutcome)> {
    vec![
        ("adversarial-loss-gradient", check_gail_gradient()),
        ("weighted-loss-gradient", check_weighted_gradient()),
        ("rejection-loss-gradient", check_rejection_gradient()),
        ("policy-surrogate-gradient", check_surrogate_gradient()),
        ("occupancy-estimator", check_occupancy()),
        ("support-partition", check_support()),
        ("dataset-round-trip", check_dataset()),
    ]
}

fn gate(name: &str, err: f64, bound: f64) -> CheckOutcome {
    if err < bound {
        Ok(format!("{name} {err:.3e} < {bound:.0e}"))
    } else {
        Err(format!("{name} {err:.3e} >= {bound:.0e}"))
    }
}

fn random_instances(
    n: usize,
    dim: usize,
    actions: usize,
    tag: SpaceTag,
    seed: u64,
) -> Vec<data::Instance> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| data::Instance {
            obs: (0..dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
            action: i % actions,
            space_tag: tag,
            latent_state: 0,
            time_index: 0,
        })
        .collect()
}

fn check_gail_gradient() -> CheckOutcome {
    let mut r = rng::seeded(101);
    let d = Discriminator::new(4, 2, SpaceTag::E, &mut r);
    let pos = random_instances(8, 4, 2, SpaceTag::E, 102);
    let neg = random_instances(8, 4, 2, SpaceTag::E, 103);
    let pos_refs: Vec<&data::Instance> = pos.iter().collect();
    let neg_refs: Vec<&data::Instance> = neg.iter().collect();
    let lg = density::gail_loss(&d, &pos_refs, &neg_refs).map_err(|e| e.to_string())?;
    let err = approx::finite_diff_check(
        d.net(),
        &lg.grad,
        |net| {
            let mut probe = d.clone();
            *probe.net_mut() = net.clone();
            density::gail_loss(&probe, &pos_refs, &neg_refs).unwrap().loss
        },
        1e-5,
    );
    gate("max relative error", err, 1e-4)
}

fn check_weighted_gradient() -> CheckOutcome {
    let mut r = rng::seeded(104);
    let d2 = Discriminator::new(3, 2, SpaceTag::L, &mut r);
    let pos = random_instances(6, 3, 2, SpaceTag::L, 105);
    let neg = random_instances(6, 3, 2, SpaceTag::L, 106);
    let alphas: Vec<f64> = (0..6).map(|_| r.random_range(0.1..10.0)).collect();
    let pos_refs: Vec<&data::Instance> = pos.iter().collect();
    let neg_refs: Vec<&data::Instance> = neg.iter().collect();
    let lg = density::weighted_adversarial_loss(&d2, &pos_refs, &neg_refs, Some(&alphas))
        .map_err(|e| e.to_string())?;
    let err = approx::finite_diff_check(
        d2.net(),
        &lg.grad,
        |net| {
            let mut probe = d2.clone();
            *probe.net_mut() = net.clone();
            density::weighted_adversarial_loss(&probe, &pos_refs, &neg_refs, Some(&alphas))
                .unwrap()
                .loss
        },
        1e-5,
    );
    gate("max relative error", err, 1e-4)
}

fn check_rejection_gradient() -> CheckOutcome {
    let mut r = rng::seeded(107);
    let d = Discriminator::new(3, 2, SpaceTag::E, &mut r);
    let g = RejectionHead::new(3, 2, SpaceTag::E, &mut r);
    let batch = random_instances(8, 3, 2, SpaceTag::E, 108);
    let examples: Vec<rejection::RoleExample> = batch
        .iter()
        .enumerate()
        .map(|(i, x)| (x, f64::from(i % 2 == 0)))
        .collect();
    let cfg = RejectionConfig {
        target_coverage: 0.9,
        penalty_weight: 1.3,
    };
    let out = rejection::rejection_loss(&d, &g, &examples, &cfg).map_err(|e| e.to_string())?;
    let err_d = approx::finite_diff_check(
        d.net(),
        &out.d_grad,
        |net| {
            let mut probe = d.clone();
            *probe.net_mut() = net.clone();
            rejection::rejection_loss(&probe, &g, &examples, &cfg).unwrap().loss
        },
        1e-5,
    );
    let err_g = approx::finite_diff_check(
        g.net(),
        &out.g_grad,
        |net| {
            let mut probe = g.clone();
            *probe.net_mut() = net.clone();
            rejection::rejection_loss(&d, &probe, &examples, &cfg).unwrap().loss
        },
        1e-5,
    );
    gate("max relative error", err_d.max(err_g), 1e-4)
}

fn check_surrogate_gradient() -> CheckOutcome {
    let mut r = rng::seeded(109);
    let net = Approximator::new(&[3, 12, 4], Head::Softmax, &mut r);
    let observations: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..3).map(|_| r.random::<f64>() - 0.5).collect())
        .collect();
    let actions: Vec<usize> = (0..6).map(|i| i % 4).collect();
    let old_log_probs: Vec<f64> = observations
        .iter()
        .zip(actions.iter())
        .map(|(o, &a)| net.forward(o)[a].ln() - 0.02 * (r.random::<f64>() - 0.5))
        .collect();
    let batch = hoil::iwre::PolicyBatch {
        observations,
        actions,
        advantages: (0..6).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
        old_log_probs,
    };
    let (_, grad) =
        hoil::iwre::clipped_surrogate_loss(&net, &batch, 0.2, 0.01).map_err(|e| e.to_string())?;
    let err = approx::finite_diff_check(
        &net,
        &grad,
        |m| hoil::iwre::clipped_surrogate_loss(m, &batch, 0.2, 0.01).unwrap().0,
        1e-5,
    );
    gate("max relative error", err, 1e-4)
}

fn check_occupancy() -> CheckOutcome {
    let env = fixtures::drift_env();
    let policy = fixtures::drift_policy(&env);
    let analytic = data::analytic_occupancy(&env, &policy);
    let samples = data::sample_occupancy(&env, &policy, 50_000, &mut rng::seeded(110));
    let empirical = data::empirical_occupancy(&env, &samples);
    let tv = data::tv_distance(&empirical, &analytic);
    gate("tv distance", tv, 0.05)
}

fn check_support() -> CheckOutcome {
    let env = fixtures::corridor_env(7);
    let pi_e = expert_policy(&env).map_err(|e| e.to_string())?;
    let pi_1 = auxiliary_policy(&env, fixtures::CORRIDOR_EPSILON).map_err(|e| e.to_string())?;
    let partition = data::support_sets(&env, &pi_e, &pi_1);
    let expected: std::collections::BTreeSet<(usize, usize)> =
        [(5, 1), (10, 1), (15, 1)].into_iter().collect();
    if partition.h == expected && partition.o.len() == 1 && partition.total() == 100 {
        Ok(format!(
            "|H|={} |O|={} |N|={}",
            partition.h.len(),
            partition.o.len(),
            partition.n.len()
        ))
    } else {
        Err(format!("unexpected partition: H={:?}", partition.h))
    }
}

fn check_dataset() -> CheckOutcome {
    let env = fixtures::corridor_env(7);
    let pi_1 = auxiliary_policy(&env, fixtures::CORRIDOR_EPSILON).map_err(|e| e.to_string())?;
    let evolving = data::collect_evolving_data(&env, &pi_1, 5, &mut rng::seeded(111));
    let header = DatasetHeader {
        env_id: env.id().to_string(),
        obs_dim_e: env.obs_dim(SpaceTag::E),
        obs_dim_l: env.obs_dim(SpaceTag::L),
        gamma: env.gamma(),
        seed: 111,
    };
    let dir = std::env::temp_dir().join("hoil-check");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("roundtrip.bin");
    data::save_dataset(&path, &header, &Dataset::Dual(evolving.clone()))
        .map_err(|e| e.to_string())?;
    let (h2, d2) = data::load_dataset(&path).map_err(|e| e.to_string())?;
    if h2 == header && d2 == Dataset::Dual(evolving) {
        Ok("bit-exact".to_string())
    } else {
        Err("round trip differs".to_string())
    }
}
