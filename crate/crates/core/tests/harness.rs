use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleet_noise::fusion::FilterModel;
use fleet_noise::harness::emit::{load_summary, BANDWIDTH_FILE, METRICS_FILE, SUMMARY_FILE};
use fleet_noise::harness::{emit, run_scenario, Family, RunConfig};
use fleet_noise::sensing::{sense, NoiseCov};
use fleet_noise::tracking::{Tracker, TrackerConfig};
use fleet_noise::world::{generate_world, step_world, WorldConfig};

fn desk(duration_s: f64) -> RunConfig {
    let mut cfg = RunConfig { duration_s, t0s: vec![1.0], ..Default::default() };
    cfg.world.f_sim = 10.0;
    cfg
}

fn emitted(cfg: &RunConfig) -> Vec<Vec<u8>> {
    let out = run_scenario(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&out.series, &out.summary, &out.ledger, out.trace.as_deref(), dir.path()).unwrap();
    [METRICS_FILE, SUMMARY_FILE, BANDWIDTH_FILE].iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect()
}

#[test]
fn outputs_are_byte_identical_across_worker_counts() {
    let base = RunConfig { workers: 1, ..desk(3.0) };
    let reference = emitted(&base);
    for workers in [1, 2, 4] {
        assert_eq!(emitted(&RunConfig { workers, ..base.clone() }), reference, "{workers} workers");
    }
}

#[test]
fn metrics_csv_has_one_row_per_tick_and_family() {
    let cfg = desk(2.0);
    let out = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&out.series, &out.summary, &out.ledger, None, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), cfg.ticks() as usize * Family::ALL.len() + 1);
    assert_eq!(text.lines().next(), Some("tick,time_s,family,value"));
    assert_eq!(load_summary(&dir.path().join(SUMMARY_FILE)).unwrap(), out.summary);
}

#[test]
fn ten_seconds_at_50_hz_is_500_ticks() {
    let mut cfg = desk(10.0);
    cfg.world.f_sim = 50.0;
    assert_eq!(cfg.ticks(), 500);
    cfg.world.f_sim = 10.0;
    assert_eq!(cfg.ticks(), 100);
}

#[test]
fn noiseless_world_gives_identical_associations_for_any_assumed_r() {
    let wc = WorldConfig { sigma_min: 0.0, sigma_max: 0.0, q: 0.0, ..Default::default() };
    let mut world = generate_world(&wc).unwrap();
    let model = FilterModel::constant_velocity(wc.dt(), wc.q);
    let mut assumed = Tracker::new(TrackerConfig::default(), model);
    let mut exact = Tracker::new(TrackerConfig::default(), model);
    let wide = NoiseCov::isotropic(2.5).unwrap();
    let tight = NoiseCov::isotropic(1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sensed = world.clone();
    for tick in 0..50 {
        let lists: Vec<_> = world.cav_ids().map(|i| sense(&world, i, &mut rng).unwrap()).collect();
        let a = assumed.step(tick, &lists, &|_| wide).unwrap();
        let b = exact.step(tick, &lists, &|_| tight).unwrap();
        let key = |r: &fleet_noise::tracking::StepReport| {
            let mut v: Vec<_> = r.associations.iter().map(|&(_, o, t)| (o, t)).collect();
            v.sort();
            v
        };
        assert_eq!(key(&a), key(&b), "tick {tick}");
        sensed = world.clone();
        world = step_world(&world, &wc, &mut rng);
    }
    let confirmed = exact.confirmed_positions();
    assert!(!confirmed.is_empty());
    for (target, p) in confirmed {
        let truth = sensed.position(target).unwrap();
        assert!((p - truth).norm() < 1e-2, "{target}: {p} vs {truth}");
    }
}

#[test]
fn ledger_conserves_bytes_and_schedule_is_followed() {
    let cfg = RunConfig { f_upl: 5.0, f_sub: 2.0, ..desk(4.0) };
    let out = run_scenario(&cfg).unwrap();
    let totals = out.ledger.totals();
    assert_eq!(totals.values().map(|c| c.uplink).sum::<u64>(), out.ledger.edge_received());
    assert_eq!(totals.values().map(|c| c.downlink).sum::<u64>(), out.ledger.edge_sent());
    let bucketed: u64 = out.ledger.buckets().map(|(_, c)| c.uplink).sum();
    assert_eq!(bucketed, out.ledger.edge_received());
    assert_eq!(out.uploads_sent.len(), cfg.world.n_cavs as usize);
    // Registration takes the first tick; every later slot is served.
    for (&v, &n) in &out.uploads_sent {
        let expected = (cfg.duration_s * cfg.f_upl).floor() as usize;
        assert!(n == expected || n + 1 == expected, "{v}: {n} uploads");
    }
    for (&v, &n) in &out.publishes_received {
        let expected = (cfg.duration_s * cfg.f_sub).floor() as usize;
        assert!(n == expected || n + 1 == expected, "{v}: {n} publishes");
    }
    assert!(out.summary.paired_inputs_identical);
}

#[test]
fn without_subscription_the_improvement_is_zero() {
    let cfg = RunConfig { f_sub: 0.0, ..desk(3.0) };
    let out = run_scenario(&cfg).unwrap();
    assert!(out.publishes_received.values().all(|&n| n == 0));
    let deltas: Vec<f64> = out.series.series(Family::DeltaGt).into_iter().flatten().collect();
    assert!(!deltas.is_empty());
    assert!(deltas.iter().all(|&d| d == 0.0));
}

#[test]
fn zero_communication_range_still_runs() {
    let mut cfg = desk(2.0);
    cfg.world.r_com = 0.0;
    let out = run_scenario(&cfg).unwrap();
    assert_eq!(out.series.records.len(), cfg.ticks() as usize);
    assert!(out.summary.paired_inputs_identical);
}

#[test]
fn noise_estimates_improve_over_a_run() {
    let cfg = desk(20.0);
    let out = run_scenario(&cfg).unwrap();
    let mse = |from: f64, to: f64| {
        let v = out.series.values_between(Family::NoiseMse, from, to);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (first, last) = (mse(0.0, 5.0), mse(15.0, 20.0));
    assert!(last < first, "first quarter {first}, last quarter {last}");
    for (v, (est, _, truth)) in &out.noise {
        assert!(est.min_eigenvalue() > 0.0, "{v}: {} vs {truth}", est.matrix());
    }
}
