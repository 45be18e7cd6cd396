use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scdrl_core::drl::{run_baseline, Discounting, Environment, EpisodeSummary};
use scdrl_core::envs::traces::JobTraceParams;
use scdrl_core::envs::{
    grid_power, server_power, CloudConfig, CloudEnv, GridConfig, GridEnv, HvacConfig, HvacEnv,
    IDLE_POWER_W, PEAK_POWER_W,
};

fn small_cloud() -> CloudEnv {
    CloudEnv::new(CloudConfig {
        trace: JobTraceParams {
            jobs: 30,
            ..JobTraceParams::default()
        },
        ..CloudConfig::default()
    })
    .unwrap()
}

fn small_grid() -> GridEnv {
    GridEnv::new(GridConfig {
        tasks: 30,
        ..GridConfig::default()
    })
    .unwrap()
}

/// Plays random admissible actions; returns the summary and the sum of
/// undiscounted per-controller rewards.
fn random_episode(env: &mut dyn Environment, seed: u64) -> (EpisodeSummary, f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    env.reset(seed).unwrap();
    let mut total = 0.0;
    let mut rewards = Vec::new();
    while let Some(obs) = env.observe() {
        let actions: Vec<usize> = obs.controllers.iter().map(|c| rng.gen_range(0..c.len())).collect();
        for (c, feats) in obs.controllers.iter().enumerate() {
            assert!(!feats.is_empty(), "controller {c} has no admissible action");
            for f in feats {
                assert_eq!(f.len(), env.feature_width());
                assert!(f.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-9), "{f:?}");
            }
        }
        let out = env.step(&actions).unwrap();
        for segs in &out.rewards {
            let r = Discounting::Discrete { gamma: 0.0 }.accumulate(segs);
            total += r;
            rewards.push(r);
        }
    }
    (env.summary(), total, rewards)
}

#[test]
fn power_model_is_monotone_on_a_fine_grid() {
    assert_eq!(server_power(0.0).unwrap(), IDLE_POWER_W);
    assert_eq!(server_power(1.0).unwrap(), PEAK_POWER_W);
    let mut last = f64::MIN;
    for k in 0..=1000 {
        let p = server_power(k as f64 / 1000.0).unwrap();
        assert!(p >= last, "u = {}", k as f64 / 1000.0);
        assert!((IDLE_POWER_W..=PEAK_POWER_W).contains(&p));
        last = p;
    }
    assert!(server_power(1.0001).is_err());
    assert!(server_power(-0.01).is_err());
}

#[test]
fn grid_power_is_net_of_pv() {
    assert_eq!(grid_power(3.0, 1.0).unwrap(), 2.0);
    assert_eq!(grid_power(1.0, 3.0).unwrap(), 0.0);
    assert!(grid_power(-1.0, 0.0).is_err());
}

#[test]
fn environments_are_deterministic_per_seed() {
    let mut envs: Vec<Box<dyn Environment>> = vec![
        Box::new(small_cloud()),
        Box::new(small_grid()),
        Box::new(HvacEnv::new(HvacConfig::default()).unwrap()),
    ];
    for env in envs.iter_mut() {
        let a = random_episode(env.as_mut(), 7);
        let b = random_episode(env.as_mut(), 7);
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
        let base1 = run_baseline(env.as_mut(), 7).unwrap();
        let base2 = run_baseline(env.as_mut(), 7).unwrap();
        assert_eq!(base1, base2);
        let other = run_baseline(env.as_mut(), 8).unwrap();
        assert_ne!(base1.energy_or_cost, other.energy_or_cost);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_schedules_are_feasible(seed in any::<u64>()) {
        let mut env = small_grid();
        env.reset(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = env.config().slots;
        let mut k = 0;
        while let Some(obs) = env.observe() {
            let dur = env.tasks()[k].dur;
            prop_assert_eq!(obs.controllers[0].len(), slots - dur + 1);
            let a = rng.gen_range(0..obs.controllers[0].len());
            env.step(&[a]).unwrap();
            k += 1;
        }
        prop_assert_eq!(k, env.tasks().len());
        for (t, &start) in env.tasks().iter().zip(env.starts()) {
            prop_assert!(start + t.dur <= slots);
        }
        // slot loads add the task energy exactly once
        let base: f64 = (0..slots).map(|s| env.config().base_load_kw[s]).sum();
        let load: f64 = (0..slots).map(|s| env.load_kw(s)).sum();
        let tasks: f64 = env.tasks().iter().map(|t| t.kw * t.dur as f64).sum();
        prop_assert!((load - base - tasks).abs() < 1e-9);
    }

    #[test]
    fn grid_rewards_sum_to_cost_increase(seed in any::<u64>()) {
        let mut env = small_grid();
        env.reset(seed).unwrap();
        let base = env.energy_cost();
        let (summary, total, _) = random_episode(&mut env, seed);
        prop_assert!((-total - (env.total_cost() - base)).abs() < 1e-9 * (1.0 + total.abs()));
        prop_assert_eq!(summary.energy_or_cost, env.total_cost());
    }

    #[test]
    fn hvac_rewards_are_never_positive(seed in any::<u64>()) {
        let mut env = HvacEnv::new(HvacConfig::default()).unwrap();
        let (summary, _, rewards) = random_episode(&mut env, seed);
        prop_assert!(rewards.iter().all(|&r| r <= 0.0));
        prop_assert_eq!(summary.steps, env.horizon());
        prop_assert!((0.0..=1.0).contains(&summary.violations));
    }

    #[test]
    fn cloud_jobs_are_conserved(seed in any::<u64>()) {
        let mut env = small_cloud();
        let (summary, _, _) = random_episode(&mut env, seed);
        prop_assert_eq!(summary.steps, 30);
        for j in env.jobs() {
            let start = j.start_s.expect("every job starts");
            let end = j.completion_s.expect("every job finishes");
            prop_assert!(start >= j.arrival_s);
            prop_assert!((end - start - j.duration_s).abs() < 1e-9);
        }
        // the episode ends with the whole cluster asleep
        prop_assert!(env.servers().iter().all(|s| s.running() == 0 && s.queued() == 0));
        prop_assert!(env.energy_j() > 0.0);
        prop_assert!((summary.energy_or_cost - env.energy_j()).abs() < 1e-6);
    }
}

#[test]
fn cloud_energy_is_bounded_by_always_on_cluster() {
    let mut env = small_cloud();
    let (_, _, _) = random_episode(&mut env, 3);
    let servers = env.config().servers as f64;
    assert!(env.energy_j() <= servers * PEAK_POWER_W * env.now() + 1e-6);
}
