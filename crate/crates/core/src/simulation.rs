//! One full-day replication: trains, commuters and stations driven by the
//! event scheduler, summarised in a [`MetricsReport`].

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    dwell_time, gate_tap_in, Action, AgentError, CommuterAgent, CommuterId, CommuterState, CrowdLimit, DispatchSchedule,
    GateDecision, PlatformQueue, StationOccupancy, TrainAgent, TrainId, TrainState, Trigger,
};
use crate::demand::JourneyRecord;
use crate::des::{DesError, RngStream, Scheduler, Secs, DEFAULT_HORIZON};
use crate::metrics::DurationsByOd;
use crate::network::{Direction, LineIdx, Network, StationIdx};
use crate::routing::{sample_route, Route, RouteChoiceTable, RoutingError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Des(#[from] DesError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Hard stop for the event loop.
    pub horizon: Secs,
    pub schedule: DispatchSchedule,
    pub psi: CrowdLimit,
    /// Multiplies every train capacity (rounded, at least 1).
    pub capacity_scale: f64,
    /// Overrides the network's walk-time spread when set.
    pub walk_sd_fraction: Option<f64>,
    /// Route choice per O-D; pairs missing from it (or all pairs, when
    /// `None`) use the shortest route.
    pub routes: Option<Arc<RouteChoiceTable>>,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: DEFAULT_HORIZON,
            schedule: DispatchSchedule::default(),
            psi: CrowdLimit::Unlimited,
            capacity_scale: 1.0,
            walk_sd_fraction: None,
            routes: None,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.schedule.validate()?;
        if !(self.capacity_scale > 0.0 && self.capacity_scale.is_finite()) {
            return Err(SimError::Config("capacity scale must be positive".into()));
        }
        if let Some(f) = self.walk_sd_fraction {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(SimError::Config("walk sd fraction must be non-negative".into()));
            }
        }
        if self.horizon < self.schedule.last_train {
            return Err(SimError::Config("horizon ends before the last train".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub t: Secs,
    pub kind: &'static str,
    pub agent_id: u32,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub commuters: usize,
    pub admitted: usize,
    pub departed: usize,
    pub rejected: usize,
    /// Admitted commuters still inside the system when the run ended.
    pub stranded: usize,
    /// Commuters who missed at least one train.
    pub commuters_missed: usize,
    /// One per commuter left behind per departure.
    pub missed_events: u64,
    pub trains_dispatched: usize,
    pub mean_duration: f64,
    pub end_time: Secs,
    pub events_fired: u64,
    /// Travel durations of departed commuters per O-D pair.
    pub durations: BTreeMap<(StationIdx, StationIdx), Vec<Secs>>,
    /// Indexed by station.
    pub max_crowdedness: Vec<u32>,
    pub station_missed_events: Vec<u64>,
    pub occupancy_series: Vec<Vec<(Secs, u32)>>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    SpawnTrain { line: LineIdx, direction: Direction },
    TrainArrive(TrainId),
    TrainDepart(TrainId),
    TapIn(CommuterId),
    WalkDone(CommuterId),
}

struct World<'a> {
    net: &'a Network,
    config: &'a SimConfig,
    records: &'a [JourneyRecord],
    routes: Vec<Route>,
    commuters: Vec<CommuterAgent>,
    commuter_streams: RngStream,
    trains: Vec<TrainAgent>,
    train_streams: RngStream,
    queues: Vec<PlatformQueue>,
    occupancy: Vec<StationOccupancy>,
    station_missed: Vec<u64>,
    missed_events: u64,
    admitted: usize,
    rejected: usize,
    departed: usize,
    durations: BTreeMap<(StationIdx, StationIdx), Vec<Secs>>,
    trace: Vec<TraceEvent>,
}

impl<'a> World<'a> {
    fn note(&mut self, t: Secs, kind: &'static str, agent_id: u32, location: impl FnOnce() -> String) {
        if self.config.trace {
            self.trace.push(TraceEvent {
                t,
                kind,
                agent_id,
                location: location(),
            });
        }
    }

    fn commuter_step(&mut self, id: CommuterId, now: Secs, trigger: Trigger) -> Result<Action, AgentError> {
        let c = &mut self.commuters[id as usize];
        let stream = self.commuter_streams.child(u64::from(id));
        c.step(now, trigger, self.net, &self.routes[c.route as usize], &stream)
    }

    fn follow(&mut self, sched: &mut Scheduler<Ev>, id: CommuterId, action: Action) -> Result<(), SimError> {
        match action {
            Action::None => {}
            Action::WalkUntil(t) => {
                sched.schedule(t, Ev::WalkDone(id))?;
            }
            Action::JoinQueue(p) => self.queues[p.index()].join(id),
            Action::TapOut { duration } => {
                let now = sched.now();
                let rec = self.records[id as usize];
                self.occupancy[rec.destination.index()].leave(now, 1)?;
                let c = &self.commuters[id as usize];
                if c.account.total() != duration || duration == 0 {
                    return Err(SimError::Invariant(format!(
                        "commuter {id}: duration {duration} != components {:?}",
                        c.account
                    )));
                }
                self.departed += 1;
                self.durations.entry((rec.origin, rec.destination)).or_default().push(duration);
                let net = self.net;
                self.note(now, "tap_out", id, || net.station(rec.destination).id.clone());
            }
        }
        Ok(())
    }

    fn handle(&mut self, sched: &mut Scheduler<Ev>, ev: Ev) -> Result<(), SimError> {
        let now = sched.now();
        let net = self.net;
        match ev {
            Ev::SpawnTrain { line, direction } => {
                let id = self.trains.len() as TrainId;
                let kind = net.line(line).kind;
                let capacity = ((f64::from(kind.capacity()) * self.config.capacity_scale).round() as u32).max(1);
                self.trains.push(TrainAgent::new(id, line, direction, capacity));
                self.note(now, "spawn_train", id, || net.platform(net.line(line).origin_terminus(direction)).id.clone());
                sched.schedule(now, Ev::TrainArrive(id))?;
            }
            Ev::TrainArrive(id) => {
                let train = &mut self.trains[id as usize];
                train.state = TrainState::Dwelling;
                let p = train.platform(net);
                let station = net.platform(p).station;
                let mut alighting = Vec::new();
                let commuters = &self.commuters;
                let routes = &self.routes;
                train.onboard.retain(|&c| {
                    let agent = &commuters[c as usize];
                    let off = agent.alight_platform(&routes[agent.route as usize]) == p;
                    if off {
                        alighting.push(c);
                    }
                    !off
                });
                let dwell_served = train.dwell_served;
                let terminus = train.position + 1 == net.line(train.line).platforms(train.direction).len();
                if terminus {
                    if !train.onboard.is_empty() {
                        return Err(SimError::Invariant(format!("train {id} reached its terminus with riders aboard")));
                    }
                    train.state = TrainState::Retired;
                } else {
                    let mut s = self.train_streams.child(u64::from(id)).child(train.position as u64);
                    let dwell = dwell_time(net.station(station), &mut s);
                    train.dwell_served += dwell;
                    sched.schedule(now + dwell, Ev::TrainDepart(id))?;
                }
                self.note(now, "train_arrive", id, || net.platform(p).id.clone());
                if !alighting.is_empty() {
                    self.occupancy[station.index()].enter(now, alighting.len() as u32);
                }
                for c in alighting {
                    let action = self.commuter_step(c, now, Trigger::Alight { dwell_served })?;
                    self.follow(sched, c, action)?;
                }
                if terminus {
                    self.note(now, "train_retire", id, || net.platform(p).id.clone());
                }
            }
            Ev::TrainDepart(id) => {
                let train = &mut self.trains[id as usize];
                let p = train.platform(net);
                let station = net.platform(p).station;
                let out = self.queues[p.index()].board(train.free_capacity());
                let dwell_served = train.dwell_served;
                train.onboard.extend(out.boarded.iter().map(|&(c, _)| c));
                train.check_capacity()?;
                train.state = TrainState::Moving;
                let (next, ride) = net.next_stop(p).ok_or_else(|| {
                    SimError::Invariant(format!("train {id} departing from terminus {}", net.platform(p).id))
                })?;
                train.position += 1;
                debug_assert_eq!(train.platform(net), next);
                sched.schedule(now + ride, Ev::TrainArrive(id))?;
                self.missed_events += out.missed as u64;
                self.station_missed[station.index()] += out.missed as u64;
                if !out.boarded.is_empty() {
                    self.occupancy[station.index()].leave(now, out.boarded.len() as u32)?;
                }
                self.note(now, "train_depart", id, || net.platform(p).id.clone());
                for (c, missed) in out.boarded {
                    self.commuters[c as usize].missed_count += missed;
                    self.commuter_step(c, now, Trigger::Board { dwell_served })?;
                }
            }
            Ev::TapIn(id) => {
                let origin = self.records[id as usize].origin;
                let decision = gate_tap_in(
                    &mut self.occupancy[origin.index()],
                    net.station(origin),
                    self.config.psi,
                    now,
                );
                let admitted = decision == GateDecision::Admitted;
                if admitted {
                    self.admitted += 1;
                } else {
                    self.rejected += 1;
                }
                self.note(now, if admitted { "tap_in" } else { "reject" }, id, || net.station(origin).id.clone());
                let action = self.commuter_step(id, now, Trigger::TapIn { admitted })?;
                self.follow(sched, id, action)?;
            }
            Ev::WalkDone(id) => {
                let action = self.commuter_step(id, now, Trigger::WalkDone)?;
                if let Action::JoinQueue(p) = action {
                    self.note(now, "join_queue", id, || net.platform(p).id.clone());
                }
                self.follow(sched, id, action)?;
            }
        }
        Ok(())
    }
}

/// Route indices and probabilities per O-D pair, built on first use.
struct RoutePlanner<'a> {
    net: &'a Network,
    table: Option<&'a RouteChoiceTable>,
    routes: Vec<Route>,
    by_od: HashMap<(StationIdx, StationIdx), Vec<(u32, f64)>>,
}

impl<'a> RoutePlanner<'a> {
    fn choose(&mut self, rec: &JourneyRecord, stream: &mut RngStream) -> Result<u32, SimError> {
        let od = (rec.origin, rec.destination);
        if !self.by_od.contains_key(&od) {
            let entry: Vec<(Route, f64)> = match self.table.and_then(|t| t.get(od.0, od.1)) {
                Some(e) => e.to_vec(),
                None => vec![(self.net.shortest_route(od.0, od.1)?, 1.0)],
            };
            let mut indexed = Vec::with_capacity(entry.len());
            for (route, p) in entry {
                indexed.push((self.routes.len() as u32, p));
                self.routes.push(route);
            }
            self.by_od.insert(od, indexed);
        }
        let entry = &self.by_od[&od];
        if entry.len() == 1 {
            return Ok(entry[0].0);
        }
        let as_routes: Vec<(Route, f64)> = entry.iter().map(|&(i, p)| (self.routes[i as usize].clone(), p)).collect();
        let chosen = sample_route(&as_routes, stream);
        let k = as_routes
            .iter()
            .position(|(r, _)| std::ptr::eq(r, chosen))
            .expect("sampled from entry");
        Ok(entry[k].0)
    }
}

/// Runs one replication to completion (or the horizon).
pub fn run_replication(net: &Network, config: &SimConfig, records: &[JourneyRecord]) -> Result<MetricsReport, SimError> {
    config.validate()?;
    let adjusted;
    let net = match config.walk_sd_fraction {
        Some(f) if f != net.walk_times().walk_sd_fraction => {
            let mut n = net.clone();
            n.set_walk_sd_fraction(f);
            adjusted = n;
            &adjusted
        }
        _ => net,
    };
    if records.len() > CommuterId::MAX as usize {
        return Err(SimError::Config("too many journeys for one replication".into()));
    }
    let n_stations = net.stations().len();
    if let Some(r) = records.iter().find(|r| {
        r.origin.index() >= n_stations || r.destination.index() >= n_stations || !r.is_valid()
    }) {
        return Err(SimError::Config(format!("journey record {r:?} does not fit the network")));
    }

    let mut planner = RoutePlanner {
        net,
        table: config.routes.as_deref(),
        routes: Vec::new(),
        by_od: HashMap::new(),
    };
    let route_streams = RngStream::new(config.seed, "route-choice");
    let mut commuters = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let route = planner.choose(rec, &mut route_streams.child(i as u64))?;
        commuters.push(CommuterAgent::new(i as CommuterId, route));
    }

    let mut sched: Scheduler<Ev> = Scheduler::new();
    let dispatch = RngStream::new(config.seed, "dispatch");
    let mut stream_index = 0;
    for (l, line) in net.lines().iter().enumerate() {
        for direction in Direction::BOTH {
            let mut s = dispatch.child(stream_index);
            stream_index += 1;
            if line.stations.len() < 2 {
                continue;
            }
            for t in config.schedule.generate_trains(&mut s) {
                sched.schedule(
                    t,
                    Ev::SpawnTrain {
                        line: LineIdx(l as u32),
                        direction,
                    },
                )?;
            }
        }
    }
    // Tap-ins are scheduled in tap-in order so that simultaneous ones keep
    // their record order.
    let mut order: Vec<u32> = (0..records.len() as u32).collect();
    order.sort_by_key(|&i| records[i as usize].tap_in);
    for i in order {
        sched.schedule(records[i as usize].tap_in, Ev::TapIn(i))?;
    }

    let mut world = World {
        net,
        config,
        records,
        routes: planner.routes,
        commuters,
        commuter_streams: RngStream::new(config.seed, "commuter"),
        trains: Vec::new(),
        train_streams: RngStream::new(config.seed, "train"),
        queues: vec![PlatformQueue::default(); net.platforms().len()],
        occupancy: vec![StationOccupancy::default(); n_stations],
        station_missed: vec![0; n_stations],
        missed_events: 0,
        admitted: 0,
        rejected: 0,
        departed: 0,
        durations: BTreeMap::new(),
        trace: Vec::new(),
    };
    let mut end_time = 0;
    while let Some(ev) = sched.pop_until(config.horizon) {
        end_time = ev.fire_time;
        world.handle(&mut sched, ev.kind)?;
    }

    // Missed trains of commuters still waiting when service ended.
    for q in &world.queues {
        for (c, missed) in q.waiting() {
            world.commuters[c as usize].missed_count += missed;
        }
    }
    let stranded = world
        .commuters
        .iter()
        .filter(|c| !c.is_resolved() && c.state != CommuterState::Pending)
        .count();
    let never_tapped = world.commuters.iter().filter(|c| c.state == CommuterState::Pending).count();
    let in_stations: u64 = world.occupancy.iter().map(|o| u64::from(o.current)).sum();
    let aboard: u64 = world.trains.iter().map(|t| t.onboard.len() as u64).sum();
    let checks = [
        (world.admitted + world.rejected + never_tapped == records.len(), "every commuter created is tapped in, rejected, or pending"),
        (world.admitted == world.departed + stranded, "admitted = departed + stranded"),
        (in_stations + aboard == stranded as u64, "commuters in stations and on trains = stranded"),
        (world.durations.values().map(Vec::len).sum::<usize>() == world.departed, "one duration per departure"),
    ];
    if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
        return Err(SimError::Invariant((*what).to_string()));
    }
    for o in &world.occupancy {
        if o.series.iter().map(|s| s.1).max().unwrap_or(0) != o.max_today {
            return Err(SimError::Invariant("occupancy maximum missing from series".into()));
        }
    }

    let total: u64 = world.durations.values().flatten().map(|&d| u64::from(d)).sum();
    Ok(MetricsReport {
        seed: config.seed,
        commuters: records.len(),
        admitted: world.admitted,
        departed: world.departed,
        rejected: world.rejected,
        stranded: stranded + never_tapped,
        commuters_missed: world.commuters.iter().filter(|c| c.missed_count > 0).count(),
        missed_events: world.missed_events,
        trains_dispatched: world.trains.len(),
        mean_duration: if world.departed == 0 {
            0.0
        } else {
            total as f64 / world.departed as f64
        },
        end_time,
        events_fired: sched.fired(),
        durations: world.durations,
        max_crowdedness: world.occupancy.iter().map(|o| o.max_today).collect(),
        station_missed_events: world.station_missed,
        occupancy_series: world.occupancy.into_iter().map(|o| o.series).collect(),
        trace: world.trace,
    })
}

/// Runs `n_runs` replications with seeds `seed, seed + 1, ...` on up to
/// `max_parallel` threads. Reports come back in seed order.
pub fn run_replications(
    net: &Network,
    config: &SimConfig,
    records: &[JourneyRecord],
    n_runs: usize,
    max_parallel: usize,
) -> Result<Vec<MetricsReport>, SimError> {
    if n_runs == 0 {
        return Err(SimError::Config("at least one run is required".into()));
    }
    let run = |i: usize| {
        let cfg = SimConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        run_replication(net, &cfg, records)
    };
    if max_parallel <= 1 {
        return (0..n_runs).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_parallel)
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    pool.install(|| (0..n_runs).into_par_iter().map(run).collect())
}

/// Pools per-O-D durations across reports.
pub fn pooled_durations(reports: &[MetricsReport]) -> DurationsByOd {
    let mut out = DurationsByOd::new();
    for r in reports {
        for (od, ds) in &r.durations {
            out.entry(*od).or_default().extend(ds.iter().map(|&d| f64::from(d)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: usize,
    pub seed: u64,
    pub commuters: usize,
    pub admitted: usize,
    pub departed: usize,
    pub rejected: usize,
    pub stranded: usize,
    pub commuters_missed: usize,
    pub missed_events: u64,
    pub trains_dispatched: usize,
    pub mean_duration_s: f64,
    pub end_time_s: Secs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub origin: String,
    pub destination: String,
    pub duration_s: Secs,
    pub run_id: usize,
}

/// Per-station figures averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdednessRow {
    pub station_id: String,
    pub max_crowdedness: f64,
    pub missed_events: f64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

pub fn report_rows(reports: &[MetricsReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| ReportRow {
            run_id: i,
            seed: r.seed,
            commuters: r.commuters,
            admitted: r.admitted,
            departed: r.departed,
            rejected: r.rejected,
            stranded: r.stranded,
            commuters_missed: r.commuters_missed,
            missed_events: r.missed_events,
            trains_dispatched: r.trains_dispatched,
            mean_duration_s: r.mean_duration,
            end_time_s: r.end_time,
        })
        .collect()
}

pub fn crowdedness_rows(net: &Network, reports: &[MetricsReport]) -> Vec<CrowdednessRow> {
    let n = reports.len().max(1) as f64;
    net.stations()
        .iter()
        .enumerate()
        .map(|(s, st)| CrowdednessRow {
            station_id: st.id.clone(),
            max_crowdedness: reports.iter().map(|r| f64::from(r.max_crowdedness[s])).sum::<f64>() / n,
            missed_events: reports.iter().map(|r| r.station_missed_events[s] as f64).sum::<f64>() / n,
        })
        .collect()
}

/// Writes `report.csv`, `durations.csv` and `crowdedness.csv` into `dir`,
/// plus `events.log` when any report carries a trace.
pub fn write_outputs(dir: &Path, net: &Network, reports: &[MetricsReport]) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_rows(&dir.join("report.csv"), report_rows(reports))?;
    let durations = reports.iter().enumerate().flat_map(|(run_id, r)| {
        r.durations.iter().flat_map(move |(&(o, d), ds)| {
            ds.iter().map(move |&duration_s| DurationRow {
                origin: net.station(o).id.clone(),
                destination: net.station(d).id.clone(),
                duration_s,
                run_id,
            })
        })
    });
    write_rows(&dir.join("durations.csv"), durations)?;
    write_rows(&dir.join("crowdedness.csv"), crowdedness_rows(net, reports))?;
    if reports.iter().any(|r| !r.trace.is_empty()) {
        let path = dir.join("events.log");
        let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut put = |line: String| w.write_all(line.as_bytes()).map_err(|e| io_err(&path, e));
        put("run_id,t,kind,agent_id,station_or_edge\n".into())?;
        for (run_id, r) in reports.iter().enumerate() {
            for e in &r.trace {
                put(format!("{run_id},{},{},{},{}\n", e.t, e.kind, e.agent_id, e.location))?;
            }
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRow>, SimError> {
    read_rows(path)
}

pub fn read_crowdedness(path: &Path) -> Result<Vec<CrowdednessRow>, SimError> {
    read_rows(path)
}

pub fn read_duration_rows(path: &Path) -> Result<Vec<DurationRow>, SimError> {
    read_rows(path)
}

/// Reads `durations.csv` pooled over runs, keyed by O-D.
pub fn read_durations(path: &Path, net: &Network) -> Result<DurationsByOd, SimError> {
    let mut out = DurationsByOd::new();
    for row in read_duration_rows(path)? {
        let station = |id: &str| net.station_idx(id).map_err(|e| io_err(path, e));
        out.entry((station(&row.origin)?, station(&row.destination)?))
            .or_default()
            .push(f64::from(row.duration_s));
    }
    Ok(out)
}
