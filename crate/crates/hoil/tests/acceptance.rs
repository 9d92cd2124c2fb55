//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `--nocapture` to see them). The corridor comparison runs are
//! shared across criteria through a lazily initialized bundle.

use hoil::approx::{finite_diff_check, Approximator, Head};
use hoil::data::{
    analytic_occupancy, collect_evolving_data, empirical_occupancy, load_dataset, rollout,
    sample_occupancy, save_dataset, support_sets, Dataset, DatasetHeader, Instance,
    SupportPartition,
};
use hoil::density::{
    gail_loss, optimal_discriminator, sample_mixture_occupancy, train_discriminator,
    weighted_adversarial_loss, Discriminator,
};
use hoil::env::{auxiliary_policy, expert_policy, DualObsEnv, Policy, SpaceTag};
use hoil::fixtures;
use hoil::harness::{
    collect_demos, evaluate, run_experiment, Budget, ExperimentConfig, Method, RunSummary,
};
use hoil::iwre::{clipped_surrogate_loss, pretrain_with_evolving, PolicyBatch, PretrainOutput};
use hoil::rejection::{
    coverage_penalty, empirical_coverage, label_instance, rejection_loss, selective_risk,
    RejectionConfig, RejectionHead, RoleExample, TernaryLabel,
};
use hoil::rng;
use rand::Rng as _;
use std::path::PathBuf;
use std::sync::OnceLock;

fn tmp_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn e_instance(env: &DualObsEnv, s: usize, a: usize) -> Instance {
    Instance {
        obs: env.observe(SpaceTag::E, s).to_vec(),
        action: a,
        space_tag: SpaceTag::E,
        latent_state: s,
        time_index: 0,
    }
}

// ---------------------------------------------------------------------------
// Shared corridor comparison bundle (criteria 6-9)
// ---------------------------------------------------------------------------

struct CorridorBundle {
    expert_return: f64,
    pi1_return: f64,
    gail: RunSummary,
    iw: RunSummary,
    iwre_05: RunSummary,
    iwre_20: RunSummary,
    iwre_full: RunSummary,
    partition: SupportPartition,
    iwre_full_rows: Vec<Vec<(usize, f64, u64, f64)>>,
}

fn corridor_config(method: Method, budget: Budget, out: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::corridor_task(method, budget);
    cfg.out_dir = tmp_dir(out);
    cfg
}

fn read_rows(dir: &std::path::Path, n_seeds: usize) -> Vec<Vec<(usize, f64, u64, f64)>> {
    (0..n_seeds)
        .map(|i| {
            let text = std::fs::read_to_string(dir.join(format!("seed_{i}.csv"))).unwrap();
            text.lines()
                .skip(1)
                .map(|line| {
                    let cols: Vec<&str> = line.split(',').collect();
                    (
                        cols[0].parse::<usize>().unwrap(),
                        cols[1].parse::<f64>().unwrap(),
                        cols[3].parse::<u64>().unwrap(),
                        cols[5].parse::<f64>().unwrap(),
                    )
                })
                .collect()
        })
        .collect()
}

static CORRIDOR: OnceLock<CorridorBundle> = OnceLock::new();

fn corridor_bundle() -> &'static CorridorBundle {
    CORRIDOR.get_or_init(|| {
        let gail_cfg = corridor_config(
            Method::Baseline(hoil::baselines::BaselineKind::Gail),
            Budget::Ratio(0.0),
            "corridor-gail",
        );
        let gail = run_experiment(&gail_cfg).unwrap();
        let iw = run_experiment(&corridor_config(
            Method::Baseline(hoil::baselines::BaselineKind::Iw),
            Budget::Ratio(0.0),
            "corridor-iw",
        ))
        .unwrap();
        let iwre_05 = run_experiment(&corridor_config(
            Method::Iwre,
            Budget::Ratio(0.05),
            "corridor-iwre-05",
        ))
        .unwrap();
        let iwre_20 = run_experiment(&corridor_config(
            Method::Iwre,
            Budget::Ratio(0.2),
            "corridor-iwre-20",
        ))
        .unwrap();
        let full_cfg = corridor_config(Method::Iwre, Budget::Ratio(1.0), "corridor-iwre-full");
        let iwre_full = run_experiment(&full_cfg).unwrap();
        let env = full_cfg.build_env().unwrap();
        let pi_e = expert_policy(&env).unwrap();
        let pi_1 = auxiliary_policy(&env, full_cfg.env.epsilon).unwrap();
        let partition = support_sets(&env, &pi_e, &pi_1);
        let iwre_full_rows = read_rows(&full_cfg.out_dir, full_cfg.n_seeds);
        CorridorBundle {
            expert_return: gail.expert_return,
            pi1_return: gail.pi1_return,
            gail,
            iw,
            iwre_05,
            iwre_20,
            iwre_full,
            partition,
            iwre_full_rows,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness of every differentiable loss
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_correctness() {
    let mut r = rng::seeded(901);
    let mut worst: f64 = 0.0;

    // Adversarial loss.
    let d = Discriminator::new(4, 3, SpaceTag::E, &mut r);
    let mk = |r: &mut rng::Rng, n: usize, tag: SpaceTag| -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                obs: (0..4).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
                action: i % 3,
                space_tag: tag,
                latent_state: 0,
                time_index: 0,
            })
            .collect()
    };
    let pos = mk(&mut r, 6, SpaceTag::E);
    let neg = mk(&mut r, 6, SpaceTag::E);
    let pos_refs: Vec<&Instance> = pos.iter().collect();
    let neg_refs: Vec<&Instance> = neg.iter().collect();
    let lg = gail_loss(&d, &pos_refs, &neg_refs).unwrap();
    worst = worst.max(finite_diff_check(
        d.net(),
        &lg.grad,
        |net| {
            let mut probe = d.clone();
            *probe.net_mut() = net.clone();
            gail_loss(&probe, &pos_refs, &neg_refs).unwrap().loss
        },
        1e-5,
    ));

    // Weighted loss with random weights in [0.1, 10].
    let d2 = Discriminator::new(4, 3, SpaceTag::L, &mut r);
    let pos_l = mk(&mut r, 5, SpaceTag::L);
    let neg_l = mk(&mut r, 5, SpaceTag::L);
    let alphas: Vec<f64> = (0..5).map(|_| r.random_range(0.1..10.0)).collect();
    let pos_l_refs: Vec<&Instance> = pos_l.iter().collect();
    let neg_l_refs: Vec<&Instance> = neg_l.iter().collect();
    let wl = weighted_adversarial_loss(&d2, &pos_l_refs, &neg_l_refs, Some(&alphas)).unwrap();
    worst = worst.max(finite_diff_check(
        d2.net(),
        &wl.grad,
        |net| {
            let mut probe = d2.clone();
            *probe.net_mut() = net.clone();
            weighted_adversarial_loss(&probe, &pos_l_refs, &neg_l_refs, Some(&alphas))
                .unwrap()
                .loss
        },
        1e-5,
    ));

    // Selective risk and full rejection loss, both parameter sets.
    let g = RejectionHead::new(4, 3, SpaceTag::E, &mut r);
    let batch = mk(&mut r, 8, SpaceTag::E);
    let examples: Vec<RoleExample> = batch
        .iter()
        .enumerate()
        .map(|(i, x)| (x, f64::from(i % 2 == 0)))
        .collect();
    let risk = selective_risk(&d, &g, &examples).unwrap();
    worst = worst.max(finite_diff_check(
        d.net(),
        &risk.d_grad,
        |net| {
            let mut probe = d.clone();
            *probe.net_mut() = net.clone();
            selective_risk(&probe, &g, &examples).unwrap().value
        },
        1e-5,
    ));
    worst = worst.max(finite_diff_check(
        g.net(),
        &risk.g_grad,
        |net| {
            let mut probe = g.clone();
            *probe.net_mut() = net.clone();
            selective_risk(&d, &probe, &examples).unwrap().value
        },
        1e-5,
    ));
    let cfg = RejectionConfig {
        target_coverage: 0.9,
        penalty_weight: 1.5,
    };
    let rej = rejection_loss(&d, &g, &examples, &cfg).unwrap();
    worst = worst.max(finite_diff_check(
        d.net(),
        &rej.d_grad,
        |net| {
            let mut probe = d.clone();
            *probe.net_mut() = net.clone();
            rejection_loss(&probe, &g, &examples, &cfg).unwrap().loss
        },
        1e-5,
    ));
    worst = worst.max(finite_diff_check(
        g.net(),
        &rej.g_grad,
        |net| {
            let mut probe = g.clone();
            *probe.net_mut() = net.clone();
            rejection_loss(&d, &probe, &examples, &cfg).unwrap().loss
        },
        1e-5,
    ));

    // Policy surrogate with entropy.
    let net = Approximator::new(&[3, 16, 4], Head::Softmax, &mut r);
    let observations: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..3).map(|_| r.random::<f64>() - 0.5).collect())
        .collect();
    let actions: Vec<usize> = (0..6).map(|i| i % 4).collect();
    let old_log_probs: Vec<f64> = observations
        .iter()
        .zip(actions.iter())
        .map(|(o, &a)| net.forward(o)[a].ln() - 0.02 * (r.random::<f64>() - 0.5))
        .collect();
    let batch = PolicyBatch {
        observations,
        actions,
        advantages: (0..6).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
        old_log_probs,
    };
    let (_, grad) = clipped_surrogate_loss(&net, &batch, 0.2, 0.01).unwrap();
    worst = worst.max(finite_diff_check(
        &net,
        &grad,
        |m| clipped_surrogate_loss(m, &batch, 0.2, 0.01).unwrap().0,
        1e-5,
    ));

    report(
        "1 (gradient correctness)",
        worst < 1e-4,
        &format!("max relative error {worst:.3e} over all losses"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 2 and 3: closed-form discriminator and density-ratio recovery
// ---------------------------------------------------------------------------

struct MixtureTrained {
    env: DualObsEnv,
    d1: Discriminator,
    analytic_mixture: Vec<f64>,
    analytic_expert: Vec<f64>,
}

static MIXTURE: OnceLock<MixtureTrained> = OnceLock::new();

fn mixture_trained() -> &'static MixtureTrained {
    MIXTURE.get_or_init(|| {
        let env = fixtures::mixture_chain();
        let spec = fixtures::mixture_spec(&env);
        let mut r = rng::seeded(777);
        let mixture = sample_mixture_occupancy(&env, &spec, 100_000, &mut r);
        let expert = sample_occupancy(&env, &spec.expert, 100_000, &mut r);
        let mut d1 = Discriminator::new(env.obs_dim(SpaceTag::E), env.action_count(), SpaceTag::E, &mut r);
        train_discriminator(&mut d1, &mixture, &expert, 5000, 256, 3e-4, &mut r).unwrap();
        MixtureTrained {
            analytic_mixture: fixtures::mixture_analytic_occupancy(&env, &spec),
            analytic_expert: analytic_occupancy(&env, &spec.expert),
            env,
            d1,
        }
    })
}

#[test]
fn criterion_02_closed_form_discriminator() {
    let trained = mixture_trained();
    let env = &trained.env;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for s in 0..env.state_count() {
        for a in 0..env.action_count() {
            let idx = s * env.action_count() + a;
            let (rho_1, rho_e) = (trained.analytic_mixture[idx], trained.analytic_expert[idx]);
            if rho_1 + rho_e <= 0.0 {
                continue;
            }
            let target = optimal_discriminator(rho_1, rho_e).unwrap();
            let got = trained.d1.output(&e_instance(env, s, a));
            worst = worst.max((got - target).abs());
            checked += 1;
        }
    }
    report(
        "2 (closed-form discriminator)",
        worst < 0.05 && checked >= 6,
        &format!("max |D - rho1/(rho1+rhoE)| = {worst:.4} over {checked} support points"),
    );
}

#[test]
fn criterion_03_density_ratio_recovery() {
    let trained = mixture_trained();
    let env = &trained.env;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in 0..env.state_count() {
        for a in 0..env.action_count() {
            let idx = s * env.action_count() + a;
            let rho_1 = trained.analytic_mixture[idx];
            if rho_1 <= 0.0 {
                continue;
            }
            let analytic_alpha = trained.analytic_expert[idx] / rho_1;
            let estimated = hoil::density::importance_weight(&trained.d1, &e_instance(env, s, a));
            total += (estimated - analytic_alpha).abs();
            count += 1;
        }
    }
    let mae = total / count as f64;
    report(
        "3 (density-ratio recovery)",
        mae < 0.1,
        &format!("mean |alpha_est - alpha| = {mae:.4} over {count} support points"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: labeling accuracy and the coverage constraint
// ---------------------------------------------------------------------------

struct PretrainedCorridor {
    env: DualObsEnv,
    pi_1: Policy,
    pretrained: PretrainOutput,
    partition: SupportPartition,
}

static PRETRAINED: OnceLock<PretrainedCorridor> = OnceLock::new();

fn pretrained_corridor() -> &'static PretrainedCorridor {
    PRETRAINED.get_or_init(|| {
        let config = ExperimentConfig::corridor_task(Method::Iwre, Budget::Unlimited);
        let env = config.build_env().unwrap();
        let pi_e = expert_policy(&env).unwrap();
        let pi_1 = auxiliary_policy(&env, config.env.epsilon).unwrap();
        let partition = support_sets(&env, &pi_e, &pi_1);
        let demos = collect_demos(&env, &pi_e, 20, &mut rng::seeded(811));
        let evolving = collect_evolving_data(&env, &pi_1, 20, &mut rng::seeded(812));
        let pretrained = pretrain_with_evolving(
            &env,
            evolving,
            &demos,
            &config.to_iwre_config(),
            &mut rng::seeded(813),
        )
        .unwrap();
        PretrainedCorridor {
            env,
            pi_1,
            pretrained,
            partition,
        }
    })
}

#[test]
fn criterion_04_hon_labeling_balanced_accuracy() {
    let ctx = pretrained_corridor();
    let env = &ctx.env;
    let mut correct = [0usize; 3];
    let mut total = [0usize; 3];
    for s in 0..env.state_count() {
        for a in 0..env.action_count() {
            let truth = match ctx.partition.classify(s, a) {
                hoil::data::SupportClass::Latent => 0,
                hoil::data::SupportClass::Observed => 1,
                hoil::data::SupportClass::NonExpert => 2,
            };
            let predicted = match label_instance(
                &ctx.pretrained.d1,
                &ctx.pretrained.g1,
                &e_instance(env, s, a),
            ) {
                TernaryLabel::H => 0,
                TernaryLabel::O => 1,
                TernaryLabel::N => 2,
            };
            total[truth] += 1;
            if predicted == truth {
                correct[truth] += 1;
            }
        }
    }
    let recalls: Vec<f64> = (0..3)
        .map(|c| correct[c] as f64 / total[c] as f64)
        .collect();
    let balanced = recalls.iter().sum::<f64>() / 3.0;
    report(
        "4 (H/O/N labeling)",
        balanced >= 0.9,
        &format!(
            "balanced accuracy {balanced:.3} (recall H {:.2} of {}, O {:.2} of {}, N {:.2} of {})",
            recalls[0], total[0], recalls[1], total[1], recalls[2], total[2]
        ),
    );
}

#[test]
fn criterion_05_coverage_constraint() {
    let ctx = pretrained_corridor();
    let env = &ctx.env;
    // Held-out union batch: fresh demonstrations and evolving data.
    let pi_e = expert_policy(env).unwrap();
    let held_demos = collect_demos(env, &pi_e, 20, &mut rng::seeded(814));
    let held_evolving = collect_evolving_data(env, &ctx.pi_1, 20, &mut rng::seeded(815));
    let union: Vec<Instance> = held_demos
        .into_iter()
        .chain(held_evolving.iter().map(|d| d.side(SpaceTag::E)))
        .collect();
    let refs: Vec<&Instance> = union.iter().collect();
    let phi = empirical_coverage(&ctx.pretrained.g1, &refs);

    // Bit-level hinge identity.
    let cfg = RejectionConfig::default();
    let exact_zero = coverage_penalty(&cfg, 0.8) == 0.0
        && coverage_penalty(&cfg, 0.80001) == 0.0
        && coverage_penalty(&cfg, 1.0) == 0.0
        && coverage_penalty(&cfg, 0.799) > 0.0;
    report(
        "5 (coverage constraint)",
        phi >= 0.7 && exact_zero,
        &format!("held-out coverage {phi:.3} (target 0.8), hinge exactly zero above target: {exact_zero}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: budget safety and zero-budget equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_budget_safety_and_zero_budget_identity() {
    let bundle = corridor_bundle();
    // queries_used <= budget at every logged step, and never decreasing.
    let mut safe = true;
    for (name, summary, ratio) in [
        ("iwre-05", &bundle.iwre_05, 0.05),
        ("iwre-20", &bundle.iwre_20, 0.2),
    ] {
        let cap = (ratio * 60_000f64).round() as u64;
        let rows = read_rows(&summary.out_dir, 5);
        for seed_rows in &rows {
            let mut last = 0u64;
            for &(_, _, queries, _) in seed_rows {
                if queries > cap || queries < last {
                    safe = false;
                    println!("budget violation in {name}: {queries} (cap {cap})");
                }
                last = queries;
            }
        }
    }

    // Zero-budget pipeline is bit-identical to the importance-only baseline.
    let mut zero_cfg = corridor_config(Method::Iwre, Budget::Ratio(0.0), "corridor-iwre-zero");
    zero_cfg.n_seeds = 2;
    zero_cfg.total_steps = 30_000;
    let mut iw_cfg = corridor_config(
        Method::Baseline(hoil::baselines::BaselineKind::Iw),
        Budget::Ratio(0.0),
        "corridor-iw-small",
    );
    iw_cfg.n_seeds = 2;
    iw_cfg.total_steps = 30_000;
    run_experiment(&zero_cfg).unwrap();
    run_experiment(&iw_cfg).unwrap();
    let mut identical = true;
    for i in 0..2 {
        let a = std::fs::read(zero_cfg.out_dir.join(format!("seed_{i}.csv"))).unwrap();
        let b = std::fs::read(iw_cfg.out_dir.join(format!("seed_{i}.csv"))).unwrap();
        identical &= a == b;
    }
    report(
        "6 (budget safety)",
        safe && identical,
        &format!("caps respected: {safe}; zero-budget metric stream bit-identical to IW: {identical}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: method ordering on the corridor task
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_method_ordering() {
    let bundle = corridor_bundle();
    let expert = bundle.expert_return;
    let pi1 = bundle.pi1_return;
    let iwre = bundle.iwre_full.mean_final;
    let iw = bundle.iw.mean_final;
    let gail = bundle.gail.mean_final;
    let pass = iwre >= 0.9 * expert
        && (iw - pi1).abs() <= 0.15 * expert
        && (gail - pi1).abs() <= 0.15 * expert
        && iwre - gail >= 0.2 * expert;
    report(
        "7 (method ordering)",
        pass,
        &format!(
            "expert {expert:.2}, pi1 {pi1:.2}, iwre {iwre:.2}, iw {iw:.2}, gail {gail:.2}"
        ),
    );
    // All methods consumed identical fixtures, seed for seed.
    for summary in [&bundle.iw, &bundle.gail, &bundle.iwre_05, &bundle.iwre_20] {
        assert_eq!(summary.fixture_hashes, bundle.iwre_full.fixture_hashes);
    }
}

// ---------------------------------------------------------------------------
// Criterion 8: budget sweep shape
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_budget_sweep() {
    let bundle = corridor_bundle();
    let expert = bundle.expert_return;
    let sweep = [
        ("0", bundle.iw.mean_final),
        ("0.05", bundle.iwre_05.mean_final),
        ("0.2", bundle.iwre_20.mean_final),
        ("1.0", bundle.iwre_full.mean_final),
    ];
    let non_decreasing = sweep.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
    let gap = bundle.iwre_20.mean_final - bundle.iw.mean_final;
    report(
        "8 (budget sweep)",
        non_decreasing && gap >= 0.1 * expert,
        &format!(
            "finals {:?}, ratio-0.2 gap over zero budget {gap:.2}",
            sweep.map(|(k, v)| format!("{k}:{v:.2}"))
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: support-mismatch resolution
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_support_mismatch_resolution() {
    let bundle = corridor_bundle();
    let finals: Vec<f64> = bundle
        .iwre_full_rows
        .iter()
        .map(|rows| rows.last().unwrap().3)
        .collect();
    let seeds_covered = finals.iter().filter(|v| **v >= 0.8).count();

    // The auxiliary policy never visits the latent set, by construction.
    let ctx = pretrained_corridor();
    let mut pi1_visits_h = 0usize;
    let mut r = rng::seeded(816);
    for _ in 0..50 {
        for step in rollout(&ctx.env, &ctx.pi_1, &mut r).steps {
            if ctx
                .partition
                .h
                .contains(&(step.latent_state, step.action))
            {
                pi1_visits_h += 1;
            }
        }
    }
    report(
        "9 (support-mismatch resolution)",
        seeds_covered >= 4 && pi1_visits_h == 0,
        &format!(
            "final H-visit fraction >= 0.8 in {seeds_covered}/5 seeds ({finals:?}); pi1 H visits: {pi1_visits_h}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: occupancy estimator consistency
// ---------------------------------------------------------------------------

/// Infinite-horizon occupancy from (I - gamma P_pi)^-1, by Gaussian
/// elimination; independent of the library's truncated power sum.
fn occupancy_by_inversion(env: &DualObsEnv, policy: &Policy) -> Vec<f64> {
    let n = env.state_count();
    let mut p = vec![vec![0.0; n]; n];
    for s in 0..n {
        let probs = policy.action_probs(env.observe(SpaceTag::E, s));
        for (a, pa) in probs.iter().enumerate() {
            for &(next, pr) in env.kernel(s, a) {
                p[s][next] += pa * pr;
            }
        }
    }
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = f64::from(i == j) - env.gamma() * p[j][i];
        }
    }
    m[env.start_state()][n] = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let diag = m[col][col];
        for j in col..=n {
            m[col][j] /= diag;
        }
        for row in 0..n {
            if row != col && m[row][col] != 0.0 {
                let factor = m[row][col];
                for j in col..=n {
                    m[row][j] -= factor * m[col][j];
                }
            }
        }
    }
    let mut occ = vec![0.0; n * env.action_count()];
    for s in 0..n {
        let probs = policy.action_probs(env.observe(SpaceTag::E, s));
        for (a, pa) in probs.iter().enumerate() {
            occ[s * env.action_count() + a] = m[s][n] * pa;
        }
    }
    occ
}

#[test]
fn criterion_10_occupancy_estimator() {
    let env = fixtures::drift_env();
    let policy = fixtures::drift_policy(&env);
    let oracle = occupancy_by_inversion(&env, &policy);
    let samples = sample_occupancy(&env, &policy, 100_000, &mut rng::seeded(820));
    let tv = hoil::data::tv_distance(&empirical_occupancy(&env, &samples), &oracle);
    // The library's analytic route agrees with the independent inversion.
    let tv_routes = hoil::data::tv_distance(&analytic_occupancy(&env, &policy), &oracle);
    report(
        "10 (occupancy estimator)",
        tv < 0.05 && tv_routes < 1e-8,
        &format!("TV(empirical, inversion) = {tv:.4} at 1e5 samples; TV(power-sum, inversion) = {tv_routes:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: determinism and persistence
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_determinism_and_persistence() {
    // Byte-identical reruns of a small experiment.
    let mut cfg = corridor_config(
        Method::Baseline(hoil::baselines::BaselineKind::Gail),
        Budget::Ratio(0.0),
        "determinism-a",
    );
    cfg.n_seeds = 2;
    cfg.total_steps = 10_000;
    cfg.eval_interval = 5_000;
    run_experiment(&cfg).unwrap();
    let mut cfg_b = cfg.clone();
    cfg_b.out_dir = tmp_dir("determinism-b");
    run_experiment(&cfg_b).unwrap();
    let mut identical = true;
    for file in ["seed_0.csv", "seed_1.csv", "aggregate.csv", "meta.txt"] {
        let a = std::fs::read(cfg.out_dir.join(file)).unwrap();
        let b = std::fs::read(cfg_b.out_dir.join(file)).unwrap();
        identical &= a == b;
    }

    // Dataset persistence round-trips bit-exactly.
    let env = fixtures::corridor_env(7);
    let pi_1 = auxiliary_policy(&env, fixtures::CORRIDOR_EPSILON).unwrap();
    let evolving = collect_evolving_data(&env, &pi_1, 20, &mut rng::seeded(821));
    let header = DatasetHeader {
        env_id: env.id().to_string(),
        obs_dim_e: env.obs_dim(SpaceTag::E),
        obs_dim_l: env.obs_dim(SpaceTag::L),
        gamma: env.gamma(),
        seed: 821,
    };
    let path = tmp_dir("persistence").join("evolving.bin");
    save_dataset(&path, &header, &Dataset::Dual(evolving.clone())).unwrap();
    let first_bytes = std::fs::read(&path).unwrap();
    let (h2, d2) = load_dataset(&path).unwrap();
    save_dataset(&path, &h2, &d2).unwrap();
    let round_trip =
        h2 == header && d2 == Dataset::Dual(evolving) && std::fs::read(&path).unwrap() == first_bytes;

    report(
        "11 (determinism and persistence)",
        identical && round_trip,
        &format!("rerun byte-identical: {identical}; dataset round-trip bit-exact: {round_trip}"),
    );
}

// ---------------------------------------------------------------------------
// Harness sanity riding along with the bundle: evaluation protocol agreement
// ---------------------------------------------------------------------------

#[test]
fn reference_returns_match_value_iteration() {
    let config = ExperimentConfig::corridor_task(Method::Iwre, Budget::Unlimited);
    let env = config.build_env().unwrap();
    let pi_e = expert_policy(&env).unwrap();
    let (expert_return, expert_std) = evaluate(&pi_e, &env, 20, &mut rng::seeded(830));
    assert_eq!(expert_return, 1.0);
    assert_eq!(expert_std, 0.0);
    let pi_1 = auxiliary_policy(&env, config.env.epsilon).unwrap();
    let (pi1_return, _) = evaluate(&pi_1, &env, 20, &mut rng::seeded(831));
    assert_eq!(pi1_return, 0.0, "the detour policy cannot reach the goal in time");
}

// ---------------------------------------------------------------------------
// Module invariants that ride along with the corridor bundle
// ---------------------------------------------------------------------------

#[test]
fn iw_matches_or_beats_gail_on_most_seeds() {
    let bundle = corridor_bundle();
    let wins = bundle
        .iw
        .per_seed_finals
        .iter()
        .zip(bundle.gail.per_seed_finals.iter())
        .filter(|(iw, gail)| iw.unwrap_or(0.0) >= gail.unwrap_or(0.0))
        .count();
    assert!(wins >= 3, "importance weighting should not trail: {wins}/5");
}

#[test]
fn latent_coverage_grows_across_checkpoints() {
    let bundle = corridor_bundle();
    let monotone_seeds = bundle
        .iwre_full_rows
        .iter()
        .filter(|rows| {
            rows.windows(2)
                .all(|w| w[1].3 >= w[0].3 - 1e-12 || w[1].3.is_nan())
        })
        .count();
    assert!(
        monotone_seeds >= 4,
        "H-visit fraction should be non-decreasing in at least 4 of 5 seeds, got {monotone_seeds}"
    );
}

#[test]
fn latent_partition_is_frozen_for_the_bundle() {
    let bundle = corridor_bundle();
    let expected: std::collections::BTreeSet<(usize, usize)> =
        [(5, 1), (10, 1), (15, 1)].into_iter().collect();
    assert_eq!(bundle.partition.h, expected);
    assert_eq!(bundle.partition.o.len(), 1);
    assert_eq!(bundle.partition.total(), 100);
}
