//! Train and commuter agents, dispatch generation, platform queues and
//! station occupancy.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::des::{RngStream, Secs};
use crate::network::{sample_walk_time, Direction, LineIdx, Network, PlatformIdx, Station};
use crate::routing::Route;

pub type CommuterId = u32;
pub type TrainId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("invalid dispatch schedule: {0}")]
    BadSchedule(String),
    #[error("commuter {commuter}: illegal transition {trigger:?} from {state:?}")]
    IllegalTransition {
        commuter: CommuterId,
        state: CommuterState,
        trigger: Trigger,
    },
    #[error("train {train} over capacity: {onboard} aboard, capacity {capacity}")]
    CapacityExceeded { train: TrainId, onboard: usize, capacity: u32 },
    #[error("station occupancy would drop below zero")]
    NegativeOccupancy,
}

/// Truncated-normal headway parameters in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayParams {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl HeadwayParams {
    pub const PEAK: Self = Self {
        mean: 180.0,
        sd: 45.0,
        lo: 90.0,
        hi: 270.0,
    };
    pub const OFF_PEAK: Self = Self {
        mean: 360.0,
        sd: 45.0,
        lo: 270.0,
        hi: 450.0,
    };

    fn sample(&self, stream: &mut RngStream) -> Secs {
        let h = stream
            .truncated_normal(self.mean, self.sd, self.lo, self.hi)
            .expect("validated bounds");
        (h.round() as Secs).max(1)
    }
}

const H: Secs = 3600;

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSchedule {
    pub first_train: Secs,
    pub last_train: Secs,
    /// Half-open `[start, end)` windows using peak headways.
    pub peak_windows: Vec<(Secs, Secs)>,
    pub peak: HeadwayParams,
    pub off_peak: HeadwayParams,
}

impl Default for DispatchSchedule {
    fn default() -> Self {
        Self {
            first_train: 5 * H + 30 * 60,
            last_train: 23 * H + 45 * 60,
            peak_windows: vec![(7 * H + 30 * 60, 9 * H + 30 * 60), (17 * H + 30 * 60, 19 * H + 30 * 60)],
            peak: HeadwayParams::PEAK,
            off_peak: HeadwayParams::OFF_PEAK,
        }
    }
}

impl DispatchSchedule {
    /// Peak service widened to 06:00–11:00 and 16:00–21:00.
    pub fn with_expanded_peaks(mut self) -> Self {
        self.peak_windows = vec![(6 * H, 11 * H), (16 * H, 21 * H)];
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::BadSchedule(m.into()));
        if self.first_train > self.last_train {
            return bad("first train after last train");
        }
        let mut w = self.peak_windows.clone();
        w.sort_unstable();
        if w.iter().any(|(a, b)| a >= b) {
            return bad("empty peak window");
        }
        if w.windows(2).any(|p| p[0].1 > p[1].0) {
            return bad("overlapping peak windows");
        }
        for h in [self.peak, self.off_peak] {
            if !(h.lo < h.hi && h.lo >= 1.0 && h.sd >= 0.0) {
                return bad("headway bounds must satisfy 1 <= lo < hi");
            }
        }
        Ok(())
    }

    pub fn is_peak(&self, t: Secs) -> bool {
        self.peak_windows.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// Spawn times: the first train, then cumulative headways (drawn for the
    /// window containing the previous spawn) up to and including the last.
    pub fn generate_trains(&self, stream: &mut RngStream) -> Vec<Secs> {
        let mut out = vec![self.first_train];
        let mut t = self.first_train;
        loop {
            let params = if self.is_peak(t) { &self.peak } else { &self.off_peak };
            t += params.sample(stream);
            if t > self.last_train {
                return out;
            }
            out.push(t);
        }
    }
}

/// Uniform whole-second dwell over the station's range.
pub fn dwell_time(station: &Station, stream: &mut RngStream) -> Secs {
    let (lo, hi) = station.dwell_range();
    stream.rng().gen_range(lo..=hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainState {
    Dwelling,
    Moving,
    Retired,
}

#[derive(Debug, Clone)]
pub struct TrainAgent {
    pub id: TrainId,
    pub line: LineIdx,
    pub direction: Direction,
    pub capacity: u32,
    pub onboard: Vec<CommuterId>,
    /// Index into the line's platform list for `direction`.
    pub position: usize,
    pub state: TrainState,
    /// Total dwell served so far, used to split in-train time.
    pub dwell_served: Secs,
}

impl TrainAgent {
    pub fn new(id: TrainId, line: LineIdx, direction: Direction, capacity: u32) -> Self {
        Self {
            id,
            line,
            direction,
            capacity,
            onboard: Vec::new(),
            position: 0,
            state: TrainState::Dwelling,
            dwell_served: 0,
        }
    }

    pub fn platform(&self, net: &Network) -> PlatformIdx {
        net.line(self.line).platforms(self.direction)[self.position]
    }

    pub fn free_capacity(&self) -> u32 {
        self.capacity.saturating_sub(self.onboard.len() as u32)
    }

    pub fn check_capacity(&self) -> Result<(), AgentError> {
        if self.onboard.len() > self.capacity as usize {
            return Err(AgentError::CapacityExceeded {
                train: self.id,
                onboard: self.onboard.len(),
                capacity: self.capacity,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommuterState {
    /// Created, tap-in not yet processed.
    Pending,
    WalkingToPlatform,
    WaitingOnPlatform,
    OnTrain,
    WalkingTransfer,
    WalkingToGate,
    Departed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    TapIn { admitted: bool },
    WalkDone,
    Board { dwell_served: Secs },
    Alight { dwell_served: Secs },
}

/// What the engine must do after a commuter transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    None,
    WalkUntil(Secs),
    JoinQueue(PlatformIdx),
    TapOut { duration: Secs },
}

/// Where a departed commuter's time went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeAccount {
    pub walk: Secs,
    pub wait: Secs,
    pub ride: Secs,
    pub dwell: Secs,
}

impl TimeAccount {
    pub fn total(&self) -> Secs {
        self.walk + self.wait + self.ride + self.dwell
    }
}

#[derive(Debug, Clone)]
pub struct CommuterAgent {
    pub id: CommuterId,
    pub route: u32,
    pub state: CommuterState,
    pub leg: usize,
    pub missed_count: u32,
    pub tap_in_actual: Secs,
    pub tap_out_actual: Secs,
    pub account: TimeAccount,
    walks: u32,
    mark: Secs,
    dwell_mark: Secs,
}

impl CommuterAgent {
    pub fn new(id: CommuterId, route: u32) -> Self {
        Self {
            id,
            route,
            state: CommuterState::Pending,
            leg: 0,
            missed_count: 0,
            tap_in_actual: 0,
            tap_out_actual: 0,
            account: TimeAccount::default(),
            walks: 0,
            mark: 0,
            dwell_mark: 0,
        }
    }

    fn walk(&mut self, now: Secs, mean: Secs, net: &Network, stream: &RngStream) -> Action {
        let mut s = stream.child(u64::from(self.walks));
        self.walks += 1;
        let w = sample_walk_time(&mut s, mean, net.walk_times().walk_sd_fraction);
        self.account.walk += w;
        Action::WalkUntil(now + w)
    }

    /// Advances the state machine. `stream` is this commuter's own stream;
    /// each walk leg draws from a separate child of it.
    pub fn step(
        &mut self,
        now: Secs,
        trigger: Trigger,
        net: &Network,
        route: &Route,
        stream: &RngStream,
    ) -> Result<Action, AgentError> {
        use CommuterState::*;
        let action = match (self.state, trigger) {
            (Pending, Trigger::TapIn { admitted: false }) => {
                self.state = Rejected;
                Action::None
            }
            (Pending, Trigger::TapIn { admitted: true }) => {
                self.tap_in_actual = now;
                self.state = WalkingToPlatform;
                let mean = net.walk_times().gate(route.legs[0].board);
                self.walk(now, mean, net, stream)
            }
            (WalkingToPlatform | WalkingTransfer, Trigger::WalkDone) => {
                self.state = WaitingOnPlatform;
                self.mark = now;
                Action::JoinQueue(route.legs[self.leg].board)
            }
            (WaitingOnPlatform, Trigger::Board { dwell_served }) => {
                self.account.wait += now - self.mark;
                self.state = OnTrain;
                self.mark = now;
                self.dwell_mark = dwell_served;
                Action::None
            }
            (OnTrain, Trigger::Alight { dwell_served }) => {
                let leg = &route.legs[self.leg];
                let dwell = dwell_served - self.dwell_mark;
                self.account.ride += leg.ride_time;
                self.account.dwell += dwell;
                debug_assert_eq!(now - self.mark, leg.ride_time + dwell);
                self.leg += 1;
                match route.legs.get(self.leg) {
                    Some(next) => {
                        self.state = WalkingTransfer;
                        let mean = net
                            .walk_times()
                            .transfer(leg.alight, next.board)
                            .expect("route validated transfers");
                        self.walk(now, mean, net, stream)
                    }
                    None => {
                        self.state = WalkingToGate;
                        let mean = net.walk_times().gate(leg.alight);
                        self.walk(now, mean, net, stream)
                    }
                }
            }
            (WalkingToGate, Trigger::WalkDone) => {
                self.state = Departed;
                self.tap_out_actual = now;
                Action::TapOut {
                    duration: now - self.tap_in_actual,
                }
            }
            (state, trigger) => {
                return Err(AgentError::IllegalTransition {
                    commuter: self.id,
                    state,
                    trigger,
                })
            }
        };
        Ok(action)
    }

    pub fn alight_platform(&self, route: &Route) -> PlatformIdx {
        route.legs[self.leg].alight
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self.state, CommuterState::Departed | CommuterState::Rejected)
    }
}

/// FIFO queue of commuters waiting on one platform.
///
/// Missed trains are counted lazily: each entry remembers how many
/// departures had happened when it joined.
#[derive(Debug, Clone, Default)]
pub struct PlatformQueue {
    waiting: VecDeque<(CommuterId, u64)>,
    departures: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoardOutcome {
    /// Boarded commuters with the number of trains each missed here.
    pub boarded: Vec<(CommuterId, u32)>,
    /// Commuters left behind by this departure.
    pub missed: usize,
}

impl PlatformQueue {
    pub fn join(&mut self, id: CommuterId) {
        self.waiting.push_back((id, self.departures));
    }

    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    /// Waiting commuters with the trains each has missed so far.
    pub fn waiting(&self) -> impl Iterator<Item = (CommuterId, u32)> + '_ {
        self.waiting.iter().map(move |&(id, at)| (id, (self.departures - at) as u32))
    }

    /// Boards up to `capacity_left` commuters in arrival order as a train
    /// departs; everyone left behind has missed it.
    pub fn board(&mut self, capacity_left: u32) -> BoardOutcome {
        let k = (capacity_left as usize).min(self.waiting.len());
        let boarded = self
            .waiting
            .drain(..k)
            .map(|(id, at)| (id, (self.departures - at) as u32))
            .collect();
        self.departures += 1;
        BoardOutcome {
            boarded,
            missed: self.waiting.len(),
        }
    }
}

/// Number of commuters inside one station, including those on platforms but
/// not those aboard trains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationOccupancy {
    pub current: u32,
    pub max_today: u32,
    /// `(time, count)` samples at most one per minute, plus every new maximum.
    pub series: Vec<(Secs, u32)>,
}

pub const OCCUPANCY_SAMPLE_S: Secs = 60;

impl StationOccupancy {
    fn record(&mut self, t: Secs) {
        let new_max = self.current > self.max_today;
        let new_minute = self
            .series
            .last()
            .map_or(true, |&(last, _)| t / OCCUPANCY_SAMPLE_S > last / OCCUPANCY_SAMPLE_S);
        if new_max {
            self.max_today = self.current;
        }
        if new_max || new_minute {
            self.series.push((t, self.current));
        }
    }

    pub fn enter(&mut self, t: Secs, n: u32) {
        self.current += n;
        self.record(t);
    }

    pub fn leave(&mut self, t: Secs, n: u32) -> Result<(), AgentError> {
        self.current = self.current.checked_sub(n).ok_or(AgentError::NegativeOccupancy)?;
        self.record(t);
        Ok(())
    }
}

/// Station crowdedness limit; interchanges get three times the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrowdLimit {
    Finite(u32),
    Unlimited,
}

impl CrowdLimit {
    pub fn for_station(self, station: &Station) -> Option<u32> {
        match self {
            CrowdLimit::Unlimited => None,
            CrowdLimit::Finite(psi) if station.is_interchange => Some(psi.saturating_mul(3)),
            CrowdLimit::Finite(psi) => Some(psi),
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        match self {
            CrowdLimit::Unlimited => self,
            CrowdLimit::Finite(psi) => CrowdLimit::Finite(((f64::from(psi) * factor).round() as u32).max(1)),
        }
    }
}

impl fmt::Display for CrowdLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrowdLimit::Finite(psi) => write!(f, "{psi}"),
            CrowdLimit::Unlimited => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for CrowdLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(CrowdLimit::Unlimited),
            v => match v.parse::<u32>() {
                Ok(0) | Err(_) => Err(format!("crowd limit must be a positive integer or `inf`, got `{v}`")),
                Ok(n) => Ok(CrowdLimit::Finite(n)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Admitted,
    Rejected,
}

/// Admits a tapping-in commuter unless the station is at its limit.
pub fn gate_tap_in(occupancy: &mut StationOccupancy, station: &Station, psi: CrowdLimit, now: Secs) -> GateDecision {
    match psi.for_station(station) {
        Some(limit) if occupancy.current >= limit => GateDecision::Rejected,
        _ => {
            occupancy.enter(now, 1);
            GateDecision::Admitted
        }
    }
}
