use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Matrix2;
use rand::Rng;
use rayon::prelude::*;

use crate::bifnoe::Bifnoe;
use crate::error::{Error, Result};
use crate::protocol::{
    encode, encode_fused, BandwidthLedger, Bus, Direction, Edge, Endpoint, Envelope, Outgoing, Schedule,
    VehicleAgent,
};
use crate::rng::{Domain, SeedTree};
use crate::sensing::NoiseCov;
use crate::tracking::Tracker;
use crate::world::{generate_world, neighbors, step_world, VehicleId, World};

use super::config::{Pooling, RunConfig};
use super::metrics::{frobenius_sq, improvement_rate, ErrorPool, Family, MetricSeries, TickRecord};
use super::summary::{summarize, BandwidthSummary, ImprovementSummary, RunSummary};

/// Floor applied to a true covariance before a filter inverts it; a
/// generated noise axis may have zero variance.
const TRUE_NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: MetricSeries,
    pub ledger: BandwidthLedger,
    pub summary: RunSummary,
    /// One line per message when tracing is enabled.
    pub trace: Option<String>,
    /// Final noise estimate, ground-truth-limit estimate and true covariance
    /// per CAV, keyed by world id.
    pub noise: BTreeMap<VehicleId, (NoiseCov, NoiseCov, Matrix2<f64>)>,
    /// NoisePublish messages delivered to each CAV.
    pub publishes_received: BTreeMap<VehicleId, usize>,
    /// Uploads sent by each CAV.
    pub uploads_sent: BTreeMap<VehicleId, usize>,
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    schedule: Schedule,
    seeds: SeedTree,
    world: World,
    edge: Edge,
    agents: Vec<VehicleAgent>,
    bus: Bus,
    ledger: BandwidthLedger,
    central_default: Tracker,
    central_limit: Option<Tracker>,
    default_r: NoiseCov,
    /// Registered id → world id.
    world_of: BTreeMap<VehicleId, VehicleId>,
    /// Registered id → floored true covariance.
    true_noise: BTreeMap<VehicleId, NoiseCov>,
    trace: Option<String>,
    publishes_received: BTreeMap<VehicleId, usize>,
    uploads_sent: BTreeMap<VehicleId, usize>,
}

fn at_tick(tick: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("tick {tick}: {m}")),
        Error::Protocol(m) => Error::Protocol(format!("tick {tick}: {m}")),
        other => other,
    }
}

fn endpoint_name(e: Endpoint) -> String {
    match e {
        Endpoint::Edge => "edge".into(),
        Endpoint::Vehicle(v) => format!("v{v}"),
    }
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.world.seed);
        let world = generate_world(&cfg.world)?;
        let model = cfg.model();
        let default_r = cfg.default_noise()?;
        let bifnoe = Bifnoe::new(cfg.bifnoe.clone(), cfg.edge_tracker.clone(), model, default_r, cfg.world.f_sim)?;
        let schedule = cfg.schedule();
        let agents = world
            .cav_ids()
            .map(|id| {
                let token = seeds.stream(Domain::Token, id.0 as u64, 0).random::<u64>();
                VehicleAgent::new(
                    id,
                    token,
                    schedule.subscription_enabled(),
                    default_r,
                    cfg.tracker.clone(),
                    model,
                    cfg.limits,
                )
            })
            .collect();
        let mut ledger = BandwidthLedger::new(cfg.world.f_sim);
        let seconds = (cfg.duration_s).ceil() as u64;
        for id in world.cav_ids() {
            ledger.register(id, seconds);
        }
        Ok(Sim {
            cfg,
            schedule,
            seeds,
            world,
            edge: Edge::new(bifnoe),
            agents,
            bus: Bus::new(cfg.latency_ticks),
            ledger,
            central_default: Tracker::new(cfg.edge_tracker.clone(), model),
            central_limit: cfg.limits.then(|| Tracker::new(cfg.edge_tracker.clone(), model)),
            default_r,
            world_of: BTreeMap::new(),
            true_noise: BTreeMap::new(),
            trace: cfg.trace.then(|| String::from("tick\tdirection\tfrom\tto\ttype\tbytes\n")),
            publishes_received: BTreeMap::new(),
            uploads_sent: BTreeMap::new(),
        })
    }

    fn send(&mut self, from: Endpoint, out: Outgoing, tick: u64) -> Result<()> {
        let len = encode(&out.msg)?.len();
        let direction = match (from, out.to) {
            (Endpoint::Vehicle(v), Endpoint::Edge) => {
                self.ledger.account(v, Direction::Uplink, len, tick);
                if matches!(out.msg, crate::protocol::ProtocolMessage::Upload { .. }) {
                    *self.uploads_sent.entry(v).or_default() += 1;
                }
                "ul"
            }
            (Endpoint::Edge, Endpoint::Vehicle(v)) => {
                self.ledger.account(v, Direction::Downlink, len, tick);
                "dl"
            }
            _ => "v2v",
        };
        if let Some(trace) = &mut self.trace {
            let _ = writeln!(
                trace,
                "{tick}\t{direction}\t{}\t{}\t{}\t{len}",
                endpoint_name(from),
                endpoint_name(out.to),
                out.msg.kind()
            );
        }
        self.bus.send(Envelope { from, to: out.to, sent_at: tick, msg: out.msg, len, truth: out.truth });
        Ok(())
    }

    /// Delivers everything due by `tick`, including replies to replies.
    fn pump(&mut self, tick: u64) -> Result<()> {
        loop {
            let due = self.bus.deliver(tick);
            if due.is_empty() {
                return Ok(());
            }
            for env in due {
                match env.to {
                    Endpoint::Edge => {
                        let truth = env.truth.as_deref().map(Vec::as_slice);
                        if let Some(reply) = self.edge.handle(&env.msg, truth)? {
                            self.send(Endpoint::Edge, Outgoing { to: env.from, msg: reply, truth: None }, tick)?;
                        }
                    }
                    Endpoint::Vehicle(v) => {
                        if matches!(env.msg, crate::protocol::ProtocolMessage::NoisePublish { .. }) {
                            *self.publishes_received.entry(v).or_default() += 1;
                        }
                        let replies = self.agents[v.0 as usize].receive(&env);
                        for r in replies {
                            self.send(Endpoint::Vehicle(v), r, tick)?;
                        }
                    }
                }
            }
        }
    }

    fn refresh_registry(&mut self) -> Result<()> {
        if self.world_of.len() == self.agents.iter().filter(|a| a.registered().is_some()).count() {
            return Ok(());
        }
        for a in &self.agents {
            if let Some(r) = a.registered() {
                self.world_of.insert(r, a.id());
                let truth = self.world.cav(a.id())?.noise;
                self.true_noise.insert(r, NoiseCov::with_eigen_floor(truth, TRUE_NOISE_FLOOR)?);
            }
        }
        Ok(())
    }

    fn tick(&mut self, pool: &rayon::ThreadPool, series: &mut MetricSeries) -> Result<()> {
        let tick = self.world.tick;

        let control: Vec<(VehicleId, Vec<Outgoing>)> =
            self.agents.iter_mut().map(|a| (a.id(), a.control())).collect();
        for (id, outs) in control {
            for o in outs {
                self.send(Endpoint::Vehicle(id), o, tick)?;
            }
        }
        self.pump(tick)?;
        self.refresh_registry()?;

        let (world, schedule, seeds, r_com) = (&self.world, &self.schedule, &self.seeds, self.cfg.world.r_com);
        let outboxes: Vec<(VehicleId, Vec<Outgoing>)> = pool.install(|| {
            self.agents
                .par_iter_mut()
                .map(|a| {
                    let nb = neighbors(world, a.id(), r_com)?;
                    let mut rng = seeds.stream(Domain::Sense, a.id().0 as u64, tick);
                    Ok((a.id(), a.begin_tick(tick, world, &nb, schedule, &mut rng)?))
                })
                .collect::<Result<_>>()
        })?;
        for (id, outs) in outboxes {
            for o in outs {
                self.send(Endpoint::Vehicle(id), o, tick)?;
            }
        }
        self.pump(tick)?;

        let mut record = TickRecord::new(tick);
        if self.schedule.upload_at(tick) {
            let world = &self.world;
            let truth = |v: VehicleId| world.position(v);
            let outcome = self.edge.process(tick, &truth).map_err(at_tick(tick))?;
            let lists = self.edge.uploads_at(tick);
            let default_r = self.default_r;
            self.central_default.step(tick, &lists, &|_| default_r).map_err(at_tick(tick))?;
            if let Some(limit) = &mut self.central_limit {
                let true_noise = &self.true_noise;
                limit
                    .step(tick, &lists, &|v| true_noise.get(&v).copied().unwrap_or(default_r))
                    .map_err(at_tick(tick))?;
            }
            if let Some(w) = outcome.windows {
                record.set(Family::WindowITicks, Some(w.t1 as f64));
                record.set(Family::WindowIiTicks, Some(w.t2 as f64));
            }
            self.central_metrics(&mut record);
        }

        if self.schedule.publish_at(tick) && !self.edge.subscribers().is_empty() {
            let msg = self.edge.publish(tick);
            let fused = encode_fused(&self.edge.fused_tracks(tick))?.len();
            let subscribers: Vec<VehicleId> = self.edge.subscribers().iter().copied().collect();
            for r in subscribers {
                let w = self.world_of[&r];
                self.ledger.account_baseline(w, fused, tick);
                self.send(Endpoint::Edge, Outgoing { to: Endpoint::Vehicle(w), msg: msg.clone(), truth: None }, tick)?;
            }
        }
        self.pump(tick)?;

        let true_noise = &self.true_noise;
        pool.install(|| {
            self.agents
                .par_iter_mut()
                .try_for_each(|a| a.finish_tick(tick, &|v| true_noise.get(&v).copied()))
        })
        .map_err(at_tick(tick))?;

        self.distributed_metrics(&mut record);
        series.records.push(record);

        let mut rng = self.seeds.stream(Domain::Motion, tick, 0);
        self.world = step_world(&self.world, &self.cfg.world, &mut rng);
        Ok(())
    }

    fn distributed_metrics(&self, record: &mut TickRecord) {
        let (mut gt_sub, mut gt_def, mut gt_lim, mut lim_sub, mut lim_def) = Default::default();
        for a in &self.agents {
            let sub = a.subscribed_stack().confirmed_positions();
            let def = a.default_stack().confirmed_positions();
            let lim = a.limit_stack().map(|s| s.confirmed_positions());
            for (target, p_sub) in &sub {
                let Some(truth) = self.world.position(*target) else { continue };
                let Some(p_def) = def.get(target) else { continue };
                let p_lim = match &lim {
                    Some(l) => match l.get(target) {
                        Some(p) => Some(*p),
                        None => continue,
                    },
                    None => None,
                };
                ErrorPool::add(&mut gt_sub, a.id(), *p_sub, truth);
                ErrorPool::add(&mut gt_def, a.id(), *p_def, truth);
                if let Some(p_lim) = p_lim {
                    ErrorPool::add(&mut gt_lim, a.id(), p_lim, truth);
                    ErrorPool::add(&mut lim_sub, a.id(), *p_sub, p_lim);
                    ErrorPool::add(&mut lim_def, a.id(), *p_def, p_lim);
                }
            }
        }
        let pooling = self.cfg.pooling;
        let mse = |p: &ErrorPool| p.mse(pooling);
        record.set(Family::DkfMseGtSubscribed, mse(&gt_sub));
        record.set(Family::DkfMseGtDefault, mse(&gt_def));
        record.set(Family::DkfMseGtLimit, mse(&gt_lim));
        record.set(Family::DkfMseLimSubscribed, mse(&lim_sub));
        record.set(Family::DkfMseLimDefault, mse(&lim_def));
        record.set(Family::DeltaGt, improvement_rate(&[mse(&gt_def)], &[mse(&gt_sub)])[0]);
        record.set(Family::DeltaLim, improvement_rate(&[mse(&lim_def)], &[mse(&lim_sub)])[0]);
    }

    fn central_metrics(&self, record: &mut TickRecord) {
        let bif = self.edge.bifnoe().tracker().confirmed_positions();
        let def = self.central_default.confirmed_positions();
        let lim = self.central_limit.as_ref().map(|t| t.confirmed_positions());
        let (mut p_bif, mut p_def, mut p_lim) = (ErrorPool::default(), ErrorPool::default(), ErrorPool::default());
        let edge = VehicleId(0);
        for (target, b) in &bif {
            let (Some(truth), Some(d)) = (self.world.position(*target), def.get(target)) else { continue };
            if let Some(l) = &lim {
                let Some(l) = l.get(target) else { continue };
                p_lim.add(edge, *l, truth);
            }
            p_bif.add(edge, *b, truth);
            p_def.add(edge, *d, truth);
        }
        record.set(Family::CkfMseGtBifnoe, p_bif.mse(Pooling::Pairs));
        record.set(Family::CkfMseGtDefault, p_def.mse(Pooling::Pairs));
        record.set(Family::CkfMseGtLimit, p_lim.mse(Pooling::Pairs));

        let bifnoe = self.edge.bifnoe();
        let (mut est, mut lim, mut n) = (0.0, 0.0, 0usize);
        for (r, w) in &self.world_of {
            let Ok(cav) = self.world.cav(*w) else { continue };
            est += frobenius_sq(bifnoe.noise(*r).matrix(), &cav.noise);
            let limit = bifnoe.limit_estimates().get(r).map_or(self.default_r, |e| e.r);
            lim += frobenius_sq(limit.matrix(), &cav.noise);
            n += 1;
        }
        if n > 0 {
            record.set(Family::NoiseMse, Some(est / n as f64));
            record.set(Family::NoiseMseLimit, Some(lim / n as f64));
        }
    }

    fn paired_inputs_identical(&self) -> bool {
        let stacks_agree = self.agents.iter().all(|a| {
            let d = a.subscribed_stack().input_digest();
            a.default_stack().input_digest() == d && a.limit_stack().is_none_or(|l| l.input_digest() == d)
        });
        let d = self.edge.bifnoe().tracker().input_digest();
        let central_agree = self.central_default.input_digest() == d
            && self.central_limit.as_ref().is_none_or(|l| l.input_digest() == d);
        stacks_agree && central_agree
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))
}

/// Runs one seeded scenario end to end.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunOutput> {
    let pool = thread_pool(cfg.workers)?;
    let mut sim = Sim::new(cfg)?;
    let mut series = MetricSeries::new(cfg.world.f_sim);
    for _ in 0..cfg.ticks() {
        sim.tick(&pool, &mut series)?;
    }

    let buckets = summarize(&series, &cfg.t0s)?;
    let summary = RunSummary {
        seed: cfg.world.seed,
        repeats: 1,
        paired_inputs_identical: sim.paired_inputs_identical(),
        improvement: ImprovementSummary { r_com: cfg.world.r_com, f_sub: cfg.f_sub, f_upl: cfg.f_upl, buckets },
        bandwidth: BandwidthSummary::from_ledger(&sim.ledger, cfg.duration_s),
        config: RunConfig { workers: 0, ..cfg.clone() },
    };
    let bifnoe = sim.edge.bifnoe();
    let noise = sim
        .world_of
        .iter()
        .filter_map(|(r, w)| {
            let cav = sim.world.cav(*w).ok()?;
            let limit = bifnoe.limit_estimates().get(r).map_or(sim.default_r, |e| e.r);
            Some((*w, (bifnoe.noise(*r), limit, cav.noise)))
        })
        .collect();
    Ok(RunOutput {
        series,
        ledger: sim.ledger,
        summary,
        trace: sim.trace,
        noise,
        publishes_received: sim.publishes_received,
        uploads_sent: sim.uploads_sent,
    })
}

/// Runs `repeats` scenarios on consecutive seeds and averages their metric
/// series tick by tick. Bandwidth and final noise come from the first run.
pub fn run_repeated(cfg: &RunConfig, repeats: usize) -> Result<RunOutput> {
    let repeats = repeats.max(1);
    let mut runs = Vec::with_capacity(repeats);
    for k in 0..repeats {
        let mut c = cfg.clone();
        c.world.seed = cfg.world.seed.wrapping_add(k as u64);
        runs.push(run_scenario(&c)?);
    }
    if repeats == 1 {
        return Ok(runs.pop().expect("one run"));
    }
    let series = MetricSeries::average(&runs.iter().map(|r| r.series.clone()).collect::<Vec<_>>());
    let paired = runs.iter().all(|r| r.summary.paired_inputs_identical);
    let mut out = runs.swap_remove(0);
    out.summary.improvement.buckets = summarize(&series, &cfg.t0s)?;
    out.summary.repeats = repeats;
    out.summary.paired_inputs_identical = paired;
    out.series = series;
    Ok(out)
}
