//! Scratch driver for sizing the acceptance protocols. Not part of the test
//! suite; run with e.g. `cargo run -p bexplore --example pilot -- ac1 0`.

use std::time::Instant;

use bexplore::agents::{PpoAgent, PpoConfig, RandomAgent, SacAgent, SacConfig};
use bexplore::dynamics::{DeepEnsembleModel, DynamicsModel, EnsembleConfig};
use bexplore::envs::mountain_car::{MountainCarEnv, NoiseMode};
use bexplore::envs::maze::MazeEnv;
use bexplore::envs::unichain::UnichainEnv;
use bexplore::envs::{ActionSpec, Environment};
use bexplore::harness::{compute_metrics, ModelSpec};
use bexplore::intrinsic::{BonusKind, BonusSpec};
use bexplore::planner::{run, ImaginedExtrinsic, PlannerConfig, PlannerMode, RunTrace};
use bexplore::numerics::rng::Rng;
use bexplore::Vector;

fn probe_ensemble() -> EnsembleConfig {
    let get = |name: &str, fallback: f64| {
        std::env::var(name)
            .ok()
            .map_or(fallback, |v| v.parse().unwrap())
    };
    EnsembleConfig {
        lr: get("PILOT_LR", 1e-3),
        first_fit_epochs: get("PILOT_FFE", 50.0) as usize,
        epochs: get("PILOT_EPOCHS", 10.0) as usize,
        log_var_hi: get("PILOT_LVHI", 4.0),
        ..EnsembleConfig::default()
    }
}

fn mc_probe_run(seed: u64, noise: NoiseMode, updates: usize) -> RunTrace {
    let mut env = MountainCarEnv::new(noise);
    let root = Rng::new(seed);
    let mut model = DeepEnsembleModel::new(3, 3, probe_ensemble(), &root);
    let mut agent = RandomAgent::new(env.action_spec().clone());
    let config = PlannerConfig {
        total_steps: 64 * updates,
        warmup_steps: 10,
        policy_period: 64,
        model_period: 64,
        bonus: BonusSpec::new(BonusKind::Eig),
        mode: PlannerMode::PtsBe,
        ..PlannerConfig::default()
    };
    run(env_mut(&mut env), Some(&mut model), &mut agent, &config, &root).unwrap()
}

fn env_mut<E: Environment>(env: &mut E) -> &mut dyn Environment {
    env
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn pilot_noise() -> NoiseMode {
    let get = |name: &str, fallback: f64| {
        std::env::var(name)
            .ok()
            .map_or(fallback, |v| v.parse().unwrap())
    };
    NoiseMode::Heteroskedastic {
        sigma_base: get("PILOT_SIGMA", 0.005),
        c_v: get("PILOT_CV", 2.0),
        c_p: get("PILOT_CP", 2.0),
        width: 0.05,
    }
}

fn ac1(seed: u64, updates: usize, verbose: bool) {
    let t0 = Instant::now();
    let trace = mc_probe_run(seed, pilot_noise(), updates);
    if verbose {
        println!("update,eig,pred_err,entropy_pow,entropy,loss");
        for (i, u) in trace.model_updates.iter().enumerate() {
            println!(
                "{},{:.5},{:.5},{:.5},{:.5},{:.5}",
                i + 1,
                u.probe_eig,
                u.probe_pred_error,
                u.probe_entropy_power,
                u.probe_entropy,
                u.loss
            );
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let eig: Vec<f64> = trace.model_updates.iter().map(|u| u.probe_eig).collect();
    let pe: Vec<f64> = trace.model_updates.iter().map(|u| u.probe_pred_error).collect();
    let ep: Vec<f64> = trace.model_updates.iter().map(|u| u.probe_entropy_power).collect();
    let h: Vec<f64> = trace.model_updates.iter().map(|u| u.probe_entropy).collect();
    let head = 20.min(eig.len());
    let tail = eig.len().saturating_sub(20);
    let eig_early_max = eig[..head].iter().cloned().fold(f64::MIN, f64::max);
    let mut eig_tail: Vec<f64> = eig[tail..].to_vec();
    let eig_final = median(&mut eig_tail);
    println!(
        "seed {seed}: {:.1}s, {} updates | eig early max {eig_early_max:.4} final med {eig_final:.4} ratio {:.3}",
        secs,
        eig.len(),
        eig_final / eig_early_max
    );
    for (name, series) in [("pred_err", &pe), ("entropy_pow", &ep), ("entropy", &h)] {
        let early_max = series[..head].iter().cloned().fold(f64::MIN, f64::max);
        let mut t: Vec<f64> = series[tail..].to_vec();
        let final_med = median(&mut t);
        println!(
            "  {name}: early max {early_max:.4} final med {final_med:.4} ratio {:.3}",
            final_med / early_max
        );
    }
}

fn unichain_run(seed: u64, model_spec: Option<&ModelSpec>, mode: PlannerMode) -> (f64, f64) {
    let t0 = Instant::now();
    let mut env = UnichainEnv::new(50).unwrap();
    let root = Rng::new(seed);
    let mut model = model_spec.map(|s| s.build(2, 2, &root));
    let ppo = PpoConfig {
        lr: env_f64("PILOT_PLR", 3e-4),
        c_entropy: env_f64("PILOT_CENT", 0.01),
        ..PpoConfig::default()
    };
    let mut agent = PpoAgent::discrete(1, 3, ppo, &root);
    let config = PlannerConfig {
        total_steps: 400,
        warmup_steps: 10,
        policy_period: env_f64("PILOT_PPERIOD", 64.0) as usize,
        model_period: env_f64("PILOT_MPERIOD", 64.0) as usize,
        rollouts: env_f64("PILOT_K", 10.0) as usize,
        horizon: env_f64("PILOT_J", 100.0) as usize,
        policy_epochs: env_f64("PILOT_PEPOCHS", 10.0) as usize,
        bonus: BonusSpec {
            jsd_samples: env_f64("PILOT_JSD", 32.0) as usize,
            ..BonusSpec::new(BonusKind::Eig).with_eta(env_f64("PILOT_ETA", 1.0))
        },
        mode,
        imagined_extrinsic: ImaginedExtrinsic::Predicted,
    };
    let trace = run(
        env_mut(&mut env),
        model.as_mut().map(|m| m.as_mut() as &mut dyn DynamicsModel),
        &mut agent,
        &config,
        &root,
    )
    .unwrap();
    let metrics = compute_metrics(&trace, &env);
    (
        metrics.coverage.last().copied().unwrap(),
        t0.elapsed().as_secs_f64(),
    )
}

fn parse_model(name: &str) -> Option<ModelSpec> {
    let lvlo = env_f64("PILOT_LVLO", -10.0);
    let text = match name {
        "de" => format!("kind = \"ensemble\"\n[config]\nlog_var_lo = {lvlo}"),
        "detanh" => {
            format!("kind = \"ensemble\"\n[config]\nactivation = \"tanh\"\nlog_var_lo = {lvlo}")
        }
        "de10" => format!(
            "kind = \"ensemble\"\n[config]\nactivation = \"tanh\"\nmembers = 10\nlog_var_lo = {lvlo}"
        ),
        "gp" => "kind = \"gp\"".to_string(),
        "dk" => "kind = \"deep_kernel\"".to_string(),
        "none" => return None,
        other => panic!("unknown model {other}"),
    };
    Some(toml::from_str(&text).unwrap())
}

fn env_f64(name: &str, fallback: f64) -> f64 {
    std::env::var(name)
        .ok()
        .map_or(fallback, |v| v.parse().unwrap())
}

fn ac3(seed: u64, model_name: &str) {
    let (mode, spec) = if model_name == "none" {
        (PlannerMode::Vanilla, None)
    } else {
        (PlannerMode::PtsBe, parse_model(model_name))
    };
    let (cov, secs) = unichain_run(seed, spec.as_ref(), mode);
    println!("seed {seed} {model_name}: coverage {cov:.3} in {secs:.1}s");
}

fn ac3_detail(seed: u64, model_name: &str) {
    let mut env = UnichainEnv::new(50).unwrap();
    let root = Rng::new(seed);
    let spec = parse_model(model_name);
    let mut model = spec.as_ref().map(|s| s.build(2, 2, &root));
    let mut agent = PpoAgent::discrete(1, 3, PpoConfig::default(), &root);
    let config = PlannerConfig {
        total_steps: 400,
        warmup_steps: 10,
        policy_period: 64,
        model_period: 64,
        rollouts: 10,
        horizon: 100,
        policy_epochs: 10,
        bonus: BonusSpec::new(BonusKind::Eig),
        mode: PlannerMode::PtsBe,
        imagined_extrinsic: ImaginedExtrinsic::Predicted,
    };
    let trace = run(
        env_mut(&mut env),
        model.as_mut().map(|m| m.as_mut() as &mut dyn DynamicsModel),
        &mut agent,
        &config,
        &root,
    )
    .unwrap();
    println!("policy updates (step, mean_ext, mean_bonus, policy_loss, entropy):");
    for u in &trace.policy_updates {
        println!(
            "  {} {:+.5} {:.5} {:+.4} {:.3}",
            u.step, u.mean_extrinsic, u.mean_bonus, u.policy_loss, u.entropy
        );
    }
    let metrics = compute_metrics(&trace, &env);
    println!("coverage {:.3}", metrics.coverage.last().unwrap());
    if let Some(m) = &model {
        use bexplore::intrinsic::eig_bonus;
        let mut rng = root.stream("probe-grid");
        let right = env.action_spec().encode(&bexplore::envs::Action::Discrete(2)).unwrap();
        println!("eig(cell, action=right) profile:");
        for cell in (0..50).step_by(2) {
            let raw = Vector::from_vec(vec![cell as f64]);
            let s = env.encode_state(&raw);
            let mut input = Vector::zeros(s.len() + right.len());
            for (i, v) in s.iter().chain(right.iter()).enumerate() {
                input[i] = *v;
            }
            let pp = m.predict(&input).unwrap();
            let mean = pp.mean();
            let e = eig_bonus(&pp.marginal(1..2), 256, &mut rng);
            println!("  cell {cell:2}: eig {e:.4} next_mean {:+.3}", mean[1]);
        }
    }
}

fn ac4(seed: u64, bonus: &str, noise: &str) {
    let t0 = Instant::now();
    let noise_mode = match noise {
        "hetero" => NoiseMode::heteroskedastic_default(),
        "homo" => NoiseMode::homoskedastic_default(),
        other => panic!("unknown noise {other}"),
    };
    let kind = match bonus {
        "eig" => BonusKind::Eig,
        "entropy" => BonusKind::Entropy,
        other => panic!("unknown bonus {other}"),
    };
    let mut env = MountainCarEnv::new(noise_mode);
    let root = Rng::new(seed);
    let mut model = DeepEnsembleModel::new(3, 3, EnsembleConfig::default(), &root);
    let mut agent = PpoAgent::discrete(2, 3, PpoConfig::default(), &root);
    let config = PlannerConfig {
        total_steps: 1000,
        warmup_steps: 10,
        policy_period: 64,
        model_period: 64,
        rollouts: 10,
        horizon: 100,
        policy_epochs: 10,
        bonus: BonusSpec::new(kind),
        mode: PlannerMode::PtsBe,
        imagined_extrinsic: ImaginedExtrinsic::Predicted,
    };
    let trace = run(env_mut(&mut env), Some(&mut model), &mut agent, &config, &root).unwrap();
    let metrics = compute_metrics(&trace, &env);
    println!(
        "seed {seed} {bonus} {noise}: solved {:?} coverage {:.3} in {:.1}s",
        trace.solved_at,
        metrics.coverage.last().unwrap(),
        t0.elapsed().as_secs_f64()
    );
}

fn ac5(seed: u64, arm: &str) {
    let t0 = Instant::now();
    let mut env = MazeEnv::from_layout_name("u_shape").unwrap();
    let root = Rng::new(seed);
    let mut model = DeepEnsembleModel::new(6, 5, EnsembleConfig::default(), &root);
    let (low, high) = match env.action_spec() {
        ActionSpec::Continuous { low, high } => (low.clone(), high.clone()),
        _ => unreachable!(),
    };
    let mut sac = SacAgent::new(4, low, high, SacConfig::default(), &root);
    let mode = match arm {
        "be" => PlannerMode::PtsBe,
        "eta0" => PlannerMode::PtsExtrinsicOnly,
        "vanilla" => PlannerMode::Vanilla,
        other => panic!("unknown arm {other}"),
    };
    let config = PlannerConfig {
        total_steps: 5000,
        warmup_steps: 10,
        policy_period: 64,
        model_period: 64,
        rollouts: 16,
        horizon: 64,
        policy_epochs: 10,
        bonus: BonusSpec {
            jsd_samples: 16,
            ..BonusSpec::new(BonusKind::Eig)
        },
        mode,
        imagined_extrinsic: ImaginedExtrinsic::Predicted,
    };
    let model_opt = if mode == PlannerMode::Vanilla {
        None
    } else {
        Some(&mut model as &mut dyn DynamicsModel)
    };
    let trace = run(env_mut(&mut env), model_opt, &mut sac, &config, &root).unwrap();
    let metrics = compute_metrics(&trace, &env);
    println!(
        "seed {seed} {arm}: solved {:?} coverage {:.3} min_goal_dist {:.3} in {:.1}s",
        trace.solved_at,
        metrics.coverage.last().unwrap(),
        metrics
            .min_goal_distance
            .as_ref()
            .and_then(|d| d.last())
            .copied()
            .unwrap_or(f64::NAN),
        t0.elapsed().as_secs_f64()
    );
}

fn series(trace: &RunTrace, f: impl Fn(&bexplore::planner::ModelUpdateRecord) -> f64) -> Vec<f64> {
    trace.model_updates.iter().map(f).collect()
}

fn early_max(xs: &[f64]) -> f64 {
    xs[..20.min(xs.len())].iter().cloned().fold(f64::MIN, f64::max)
}

fn final_median(xs: &[f64]) -> f64 {
    let mut tail: Vec<f64> = xs[xs.len().saturating_sub(20)..].to_vec();
    median(&mut tail)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ac1_sweep(updates: usize) {
    let t0 = Instant::now();
    let mut passes = 0;
    let mut entropy_wins = 0;
    let mut het_eig_means = Vec::new();
    let mut hom_eig_means = Vec::new();
    for seed in 0..10u64 {
        let het = mc_probe_run(seed, pilot_noise(), updates);
        let sigma = match pilot_noise() {
            NoiseMode::Heteroskedastic { sigma_base, .. } => sigma_base,
            _ => unreachable!(),
        };
        let hom = mc_probe_run(seed, NoiseMode::Homoskedastic { sigma }, updates);
        let eig = series(&het, |u| u.probe_eig);
        let pe = series(&het, |u| u.probe_pred_error);
        let ep = series(&het, |u| u.probe_entropy_power);
        let r_eig = final_median(&eig) / early_max(&eig);
        let r_pe = final_median(&pe) / early_max(&pe);
        let r_ep = final_median(&ep) / early_max(&ep);
        let ok = r_eig < 0.2 && r_pe > 0.5 && r_ep > 0.5;
        passes += ok as u32;
        let h_het = mean(&series(&het, |u| u.probe_entropy));
        let h_hom = mean(&series(&hom, |u| u.probe_entropy));
        entropy_wins += (h_het > h_hom) as u32;
        het_eig_means.push(mean(&series(&het, |u| u.probe_eig)));
        hom_eig_means.push(mean(&series(&hom, |u| u.probe_eig)));
        println!(
            "seed {seed}: eig {r_eig:.3} pe {r_pe:.3} ep {r_ep:.3} {} | H het {h_het:.3} hom {h_hom:.3}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    let he = mean(&het_eig_means);
    let ho = mean(&hom_eig_means);
    println!(
        "ac1 passes {passes}/10 | ac2 entropy wins {entropy_wins}/10, eig het {he:.4} hom {ho:.4} rel diff {:.3} | {:.0}s total",
        (he - ho).abs() / ho,
        t0.elapsed().as_secs_f64()
    );
}

const BAND: f64 = 0.3;
const SIGMA_IN: f64 = 0.3;
const SIGMA_OUT: f64 = 0.02;

fn band_dataset(seed: u64, n_in: usize, n_out: usize) -> bexplore::dynamics::TrainSet {
    let mut rng = Rng::new(seed).stream("band");
    let mut data = bexplore::dynamics::TrainSet::new();
    for i in 0..(n_in + n_out) {
        let x = if i < n_in {
            rng.uniform(-BAND, BAND)
        } else {
            let side = if rng.f64() < 0.5 { -1.0 } else { 1.0 };
            side * rng.uniform(BAND, 1.0)
        };
        let sigma = if x.abs() <= BAND { SIGMA_IN } else { SIGMA_OUT };
        let y = (3.0 * x).sin() + sigma * rng.normal();
        data.push(Vector::from_vec(vec![x]), Vector::from_vec(vec![y]));
    }
    data
}

fn ac2b(n_in: usize, n_out: usize) {
    use bexplore::intrinsic::{entropy_bonus, eig_bonus};
    let t0 = Instant::now();
    let mut wins = 0;
    for seed in 0..10u64 {
        let data = band_dataset(seed, n_in, n_out);
        let root = Rng::new(1000 + seed);
        let mut model = DeepEnsembleModel::new(1, 1, probe_ensemble(), &root);
        let mut fit_rng = root.stream("fit");
        model.fit(&data, &mut fit_rng).unwrap();
        let mut bonus_rng = root.stream("bonus");
        let grid: Vec<f64> = (0..81).map(|i| -1.0 + 2.0 * i as f64 / 80.0).collect();
        let (mut best_eig, mut eig_x) = (f64::MIN, 0.0);
        let (mut best_h, mut h_x) = (f64::MIN, 0.0);
        for &x in &grid {
            let pp = model.predict(&Vector::from_vec(vec![x])).unwrap();
            let e = eig_bonus(&pp, 64, &mut bonus_rng);
            let h = entropy_bonus(&pp, 64, &mut bonus_rng);
            if e > best_eig {
                best_eig = e;
                eig_x = x;
            }
            if h > best_h {
                best_h = h;
                h_x = x;
            }
        }
        let ok = eig_x.abs() > BAND && h_x.abs() <= BAND;
        wins += ok as u32;
        println!(
            "seed {seed}: eig argmax {eig_x:.2} entropy argmax {h_x:.2} {}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("ac2b {wins}/10 in {:.0}s", t0.elapsed().as_secs_f64());
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    match args.first().map(String::as_str) {
        Some("ac1") => {
            let updates = args.get(2).map_or(200, |s| s.parse().unwrap());
            ac1(seed, updates, args.iter().any(|a| a == "-v"));
        }
        Some("ac1sweep") => {
            let updates = args.get(2).map_or(200, |s| s.parse().unwrap());
            ac1_sweep(updates);
        }
        Some("ac2b") => ac2b(
            args.get(1).map_or(150, |s| s.parse().unwrap()),
            args.get(2).map_or(40, |s| s.parse().unwrap()),
        ),
        Some("ac3") => ac3(seed, args.get(2).map_or("de", String::as_str)),
        Some("ac3d") => ac3_detail(seed, args.get(2).map_or("de", String::as_str)),
        Some("ac4") => ac4(
            seed,
            args.get(2).map_or("eig", String::as_str),
            args.get(3).map_or("hetero", String::as_str),
        ),
        Some("ac5") => ac5(seed, args.get(2).map_or("be", String::as_str)),
        other => panic!("unknown pilot {other:?}"),
    }
}
