//! Static transit world: stations, lines, platforms, directed edges and walk times.
//!
//! A network is read from a directory holding three CSV files (plus an
//! optional `lines.csv` giving the rolling-stock kind of each line):
//!
//! ```text
//! stations.csv   station_id,name,line_ids            (line ids ';'-separated)
//! edges.csv      line_id,direction,from_station,to_station,ride_time_s
//! walktimes.csv  kind,station_id,platform_a,platform_b,mean_s
//! lines.csv      line_id,kind                         (MRT | LRT, optional)
//! ```
//!
//! Platform ids have the form `STATION:LINE:up` / `STATION:LINE:down`. Gate
//! rows in `walktimes.csv` leave `platform_a` empty.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{RngStream, Secs};
use crate::routing::{Route, RoutingError};

pub const DEFAULT_WALK_SD_FRACTION: f64 = 0.15;

/// Dwell interval in seconds at interchanges.
pub const DWELL_INTERCHANGE: (Secs, Secs) = (55, 65);
/// Dwell interval in seconds at all other stations.
pub const DWELL_REGULAR: (Secs, Secs) = (30, 40);

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}, record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: u64,
        message: String,
    },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("no path from {from} to {to}")]
    NoPath { from: String, to: String },
}

macro_rules! index_type {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

index_type!(StationIdx);
index_type!(LineIdx);
index_type!(PlatformIdx);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Up, Direction::Down];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    #[serde(rename = "MRT")]
    Mrt,
    #[serde(rename = "LRT")]
    Lrt,
}

impl LineKind {
    /// Commuters per train.
    pub fn capacity(self) -> u32 {
        match self {
            LineKind::Mrt => 1920,
            LineKind::Lrt => 105,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LineKind::Mrt => "MRT",
            LineKind::Lrt => "LRT",
        }
    }
}

impl FromStr for LineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MRT" => Ok(LineKind::Mrt),
            "LRT" => Ok(LineKind::Lrt),
            other => Err(format!("unknown line kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub name: String,
    pub line_ids: BTreeSet<String>,
    pub is_interchange: bool,
}

impl Station {
    pub fn dwell_range(&self) -> (Secs, Secs) {
        if self.is_interchange {
            DWELL_INTERCHANGE
        } else {
            DWELL_REGULAR
        }
    }

    pub fn dwell_midpoint(&self) -> Secs {
        let (lo, hi) = self.dwell_range();
        (lo + hi) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub kind: LineKind,
    /// Stations in `up` travel order; `down` runs the reverse.
    pub stations: Vec<StationIdx>,
    up_platforms: Vec<PlatformIdx>,
    down_platforms: Vec<PlatformIdx>,
}

impl Line {
    /// Platforms in travel order for `direction`.
    pub fn platforms(&self, direction: Direction) -> &[PlatformIdx] {
        match direction {
            Direction::Up => &self.up_platforms,
            Direction::Down => &self.down_platforms,
        }
    }

    pub fn origin_terminus(&self, direction: Direction) -> PlatformIdx {
        self.platforms(direction)[0]
    }

    pub fn final_terminus(&self, direction: Direction) -> PlatformIdx {
        *self.platforms(direction).last().expect("line has stations")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Platform {
    pub id: String,
    pub station: StationIdx,
    pub line: LineIdx,
    pub direction: Direction,
    /// Position along the line in travel order.
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: PlatformIdx,
    pub to: PlatformIdx,
    pub ride_time: Secs,
}

/// Mean walking times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTimeTable {
    pub gate_to_platform: HashMap<PlatformIdx, Secs>,
    pub platform_to_platform: HashMap<(PlatformIdx, PlatformIdx), Secs>,
    pub walk_sd_fraction: f64,
}

impl WalkTimeTable {
    pub fn gate(&self, platform: PlatformIdx) -> Secs {
        self.gate_to_platform[&platform]
    }

    pub fn transfer(&self, from: PlatformIdx, to: PlatformIdx) -> Option<Secs> {
        self.platform_to_platform.get(&(from, to)).copied()
    }
}

/// Walk duration drawn from a normal centred on `mean` with sd
/// `sd_fraction * mean`, truncated to [0.5, 1.5] x mean and rounded to whole
/// seconds.
pub fn sample_walk_time(stream: &mut RngStream, mean: Secs, sd_fraction: f64) -> Secs {
    let m = f64::from(mean);
    let x = stream
        .truncated_normal(m, sd_fraction * m, 0.5 * m, 1.5 * m)
        .expect("walk bounds are ordered for positive means");
    (x.round() as Secs).max(1)
}

/// Raw rows as they appear on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkSource {
    pub stations: Vec<StationRow>,
    pub edges: Vec<EdgeRow>,
    pub walks: Vec<WalkRow>,
    pub line_kinds: Vec<LineRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRow {
    pub station_id: String,
    pub name: String,
    pub line_ids: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub line_id: String,
    pub direction: Direction,
    pub from_station: String,
    pub to_station: String,
    pub ride_time_s: Secs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkKind {
    Gate,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRow {
    pub kind: WalkKind,
    pub station_id: String,
    pub platform_a: String,
    pub platform_b: String,
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRow {
    pub line_id: String,
    pub kind: LineKind,
}

pub fn platform_id(station: &str, line: &str, direction: Direction) -> String {
    format!("{station}:{line}:{direction}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    stations: Vec<Station>,
    lines: Vec<Line>,
    platforms: Vec<Platform>,
    edges: Vec<Edge>,
    walk: WalkTimeTable,
    station_lookup: HashMap<String, StationIdx>,
    platform_lookup: HashMap<String, PlatformIdx>,
    /// Outgoing ride edge per platform (None at the final terminus).
    next: Vec<Option<(PlatformIdx, Secs)>>,
    station_platforms: Vec<Vec<PlatformIdx>>,
}

fn invalid(msg: impl Into<String>) -> NetworkError {
    NetworkError::Validation(msg.into())
}

impl Network {
    /// Builds and validates a network from raw rows.
    pub fn from_source(src: &NetworkSource) -> Result<Self, NetworkError> {
        // Stations, sorted by id.
        let mut station_rows: Vec<&StationRow> = src.stations.iter().collect();
        station_rows.sort_by(|a, b| a.station_id.cmp(&b.station_id));
        let mut stations = Vec::with_capacity(station_rows.len());
        let mut station_lookup = HashMap::new();
        for (i, row) in station_rows.iter().enumerate() {
            let id = row.station_id.trim().to_string();
            if id.is_empty() {
                return Err(invalid("empty station id"));
            }
            if station_lookup.insert(id.clone(), StationIdx(i as u32)).is_some() {
                return Err(invalid(format!("duplicate station `{id}`")));
            }
            let line_ids: BTreeSet<String> = row
                .line_ids
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            stations.push(Station {
                is_interchange: line_ids.len() >= 2,
                id,
                name: row.name.clone(),
                line_ids,
            });
        }

        // Edges grouped per (line, direction).
        let mut by_line: BTreeMap<String, BTreeMap<Direction, Vec<(StationIdx, StationIdx, Secs)>>> =
            BTreeMap::new();
        for e in &src.edges {
            let from = *station_lookup
                .get(e.from_station.trim())
                .ok_or_else(|| invalid(format!("edge references unknown station `{}`", e.from_station)))?;
            let to = *station_lookup
                .get(e.to_station.trim())
                .ok_or_else(|| invalid(format!("edge references unknown station `{}`", e.to_station)))?;
            if from == to {
                return Err(invalid(format!("self-loop edge at `{}`", e.from_station)));
            }
            if e.ride_time_s == 0 {
                return Err(invalid(format!(
                    "edge {}->{} on {} has zero ride time",
                    e.from_station, e.to_station, e.line_id
                )));
            }
            by_line
                .entry(e.line_id.trim().to_string())
                .or_default()
                .entry(e.direction)
                .or_default()
                .push((from, to, e.ride_time_s));
        }

        let mut kinds: HashMap<String, LineKind> = HashMap::new();
        for row in &src.line_kinds {
            if !by_line.contains_key(row.line_id.trim()) {
                return Err(invalid(format!("lines.csv names unknown line `{}`", row.line_id)));
            }
            kinds.insert(row.line_id.trim().to_string(), row.kind);
        }

        // Each direction must be one simple path; down must mirror up.
        let mut line_paths = Vec::new();
        for (line_id, dirs) in &by_line {
            let up = dirs
                .get(&Direction::Up)
                .ok_or_else(|| invalid(format!("line {line_id} has no up edges")))?;
            let down = dirs
                .get(&Direction::Down)
                .ok_or_else(|| invalid(format!("line {line_id} has no down edges")))?;
            let (up_seq, up_times) = chain(line_id, Direction::Up, up)?;
            let (down_seq, down_times) = chain(line_id, Direction::Down, down)?;
            let mut reversed = up_seq.clone();
            reversed.reverse();
            if reversed != down_seq {
                return Err(invalid(format!(
                    "line {line_id}: down stations are not the reverse of up stations"
                )));
            }
            line_paths.push((line_id.clone(), up_seq, up_times, down_times));
        }

        // Station line memberships must agree with the edges.
        let mut members: Vec<BTreeSet<String>> = vec![BTreeSet::new(); stations.len()];
        for (line_id, up_seq, _, _) in &line_paths {
            for s in up_seq {
                members[s.index()].insert(line_id.clone());
            }
        }
        for (station, actual) in stations.iter().zip(&members) {
            if &station.line_ids != actual {
                return Err(invalid(format!(
                    "station {} lists lines {:?} but edges place it on {:?}",
                    station.id, station.line_ids, actual
                )));
            }
        }

        // Platforms: two per (station, line), indexed in id order.
        let mut plat_specs: Vec<(String, StationIdx, LineIdx, Direction, usize)> = Vec::new();
        for (li, (line_id, up_seq, _, _)) in line_paths.iter().enumerate() {
            let n = up_seq.len();
            for (pos, s) in up_seq.iter().enumerate() {
                let sid = &stations[s.index()].id;
                plat_specs.push((platform_id(sid, line_id, Direction::Up), *s, LineIdx(li as u32), Direction::Up, pos));
                plat_specs.push((
                    platform_id(sid, line_id, Direction::Down),
                    *s,
                    LineIdx(li as u32),
                    Direction::Down,
                    n - 1 - pos,
                ));
            }
        }
        plat_specs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut platform_lookup = HashMap::new();
        let mut platforms = Vec::with_capacity(plat_specs.len());
        for (i, (id, station, line, direction, position)) in plat_specs.into_iter().enumerate() {
            platform_lookup.insert(id.clone(), PlatformIdx(i as u32));
            platforms.push(Platform {
                id,
                station,
                line,
                direction,
                position,
            });
        }

        let mut lines = Vec::new();
        let mut next = vec![None; platforms.len()];
        let mut edges = Vec::new();
        for (line_id, up_seq, up_times, down_times) in &line_paths {
            let lookup = |s: StationIdx, d: Direction| platform_lookup[&platform_id(&stations[s.index()].id, line_id, d)];
            let up_platforms: Vec<PlatformIdx> = up_seq.iter().map(|&s| lookup(s, Direction::Up)).collect();
            let down_platforms: Vec<PlatformIdx> = up_seq.iter().rev().map(|&s| lookup(s, Direction::Down)).collect();
            for (plats, times) in [(&up_platforms, up_times), (&down_platforms, down_times)] {
                for (w, &t) in plats.windows(2).zip(times.iter()) {
                    next[w[0].index()] = Some((w[1], t));
                    edges.push(Edge {
                        from: w[0],
                        to: w[1],
                        ride_time: t,
                    });
                }
            }
            lines.push(Line {
                id: line_id.clone(),
                kind: kinds.get(line_id).copied().unwrap_or(LineKind::Mrt),
                stations: up_seq.clone(),
                up_platforms,
                down_platforms,
            });
        }

        let mut station_platforms = vec![Vec::new(); stations.len()];
        for (i, p) in platforms.iter().enumerate() {
            station_platforms[p.station.index()].push(PlatformIdx(i as u32));
        }

        let walk = build_walks(&src.walks, &stations, &station_lookup, &platforms, &platform_lookup, &station_platforms)?;

        Ok(Network {
            stations,
            lines,
            platforms,
            edges,
            walk,
            station_lookup,
            platform_lookup,
            next,
            station_platforms,
        })
    }

    /// Reads `stations.csv`, `edges.csv`, `walktimes.csv` and (if present)
    /// `lines.csv` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let dir = dir.as_ref();
        let lines_path = dir.join("lines.csv");
        let src = NetworkSource {
            stations: read_rows(&dir.join("stations.csv"))?,
            edges: read_rows(&dir.join("edges.csv"))?,
            walks: read_rows(&dir.join("walktimes.csv"))?,
            line_kinds: if lines_path.exists() {
                read_rows(&lines_path)?
            } else {
                Vec::new()
            },
        };
        Self::from_source(&src)
    }

    /// Serialized form that [`Network::from_source`] maps back to `self`.
    pub fn to_source(&self) -> NetworkSource {
        let stations = self
            .stations
            .iter()
            .map(|s| StationRow {
                station_id: s.id.clone(),
                name: s.name.clone(),
                line_ids: s.line_ids.iter().cloned().collect::<Vec<_>>().join(";"),
            })
            .collect();
        let mut edges = Vec::new();
        for line in &self.lines {
            for dir in Direction::BOTH {
                for w in line.platforms(dir).windows(2) {
                    let (_, t) = self.next[w[0].index()].expect("interior platform has an edge");
                    edges.push(EdgeRow {
                        line_id: line.id.clone(),
                        direction: dir,
                        from_station: self.station(self.platforms[w[0].index()].station).id.clone(),
                        to_station: self.station(self.platforms[w[1].index()].station).id.clone(),
                        ride_time_s: t,
                    });
                }
            }
        }
        let mut walks = Vec::new();
        for (i, p) in self.platforms.iter().enumerate() {
            let pi = PlatformIdx(i as u32);
            walks.push(WalkRow {
                kind: WalkKind::Gate,
                station_id: self.station(p.station).id.clone(),
                platform_a: String::new(),
                platform_b: p.id.clone(),
                mean_s: f64::from(self.walk.gate(pi)),
            });
        }
        let mut transfers: Vec<_> = self.walk.platform_to_platform.iter().collect();
        transfers.sort();
        for (&(a, b), &mean) in transfers {
            walks.push(WalkRow {
                kind: WalkKind::Transfer,
                station_id: self.station(self.platform(a).station).id.clone(),
                platform_a: self.platform(a).id.clone(),
                platform_b: self.platform(b).id.clone(),
                mean_s: f64::from(mean),
            });
        }
        let line_kinds = self
            .lines
            .iter()
            .map(|l| LineRow {
                line_id: l.id.clone(),
                kind: l.kind,
            })
            .collect();
        NetworkSource {
            stations,
            edges,
            walks,
            line_kinds,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), NetworkError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| NetworkError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let src = self.to_source();
        write_rows(&dir.join("stations.csv"), &src.stations)?;
        write_rows(&dir.join("edges.csv"), &src.edges)?;
        write_rows(&dir.join("walktimes.csv"), &src.walks)?;
        write_rows(&dir.join("lines.csv"), &src.line_kinds)?;
        Ok(())
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn station(&self, idx: StationIdx) -> &Station {
        &self.stations[idx.index()]
    }

    pub fn station_idx(&self, id: &str) -> Result<StationIdx, NetworkError> {
        self.station_lookup
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownStation(id.to_string()))
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, idx: LineIdx) -> &Line {
        &self.lines[idx.index()]
    }

    pub fn platforms(&self) -> &[Platform] {
        &self.platforms
    }

    pub fn platform(&self, idx: PlatformIdx) -> &Platform {
        &self.platforms[idx.index()]
    }

    pub fn platform_idx(&self, id: &str) -> Option<PlatformIdx> {
        self.platform_lookup.get(id).copied()
    }

    pub fn platforms_at(&self, station: StationIdx) -> &[PlatformIdx] {
        &self.station_platforms[station.index()]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The ride edge leaving `platform`, if it is not a final terminus.
    pub fn next_stop(&self, platform: PlatformIdx) -> Option<(PlatformIdx, Secs)> {
        self.next[platform.index()]
    }

    pub fn walk_times(&self) -> &WalkTimeTable {
        &self.walk
    }

    pub fn set_walk_sd_fraction(&mut self, fraction: f64) {
        self.walk.walk_sd_fraction = fraction;
    }

    /// Number of distinct adjacent stations.
    pub fn station_degree(&self, station: StationIdx) -> usize {
        let mut adjacent = BTreeSet::new();
        for &p in self.platforms_at(station) {
            if let Some((q, _)) = self.next_stop(p) {
                adjacent.insert(self.platform(q).station);
            }
        }
        adjacent.len()
    }

    /// Minimum expected-time route from `origin` to `destination`.
    ///
    /// Time is the sum of ride times, dwell midpoints at stops passed through
    /// while aboard, and mean transfer walks. Ties go to the route whose
    /// platform-id sequence sorts first.
    pub fn shortest_route(&self, origin: StationIdx, destination: StationIdx) -> Result<Route, RoutingError> {
        if origin == destination {
            return Err(RoutingError::SameStation(self.station(origin).id.clone()));
        }
        // State: (platform, aboard). Waiting states sit on a platform before
        // boarding; aboard states have just arrived at the platform by train.
        let n = self.platforms.len();
        let mut settled = vec![[false; 2]; n];
        let mut heap: BinaryHeap<Reverse<(u64, Vec<PlatformIdx>, bool)>> = BinaryHeap::new();
        for &p in self.platforms_at(origin) {
            if self.next_stop(p).is_some() {
                heap.push(Reverse((0, vec![p], false)));
            }
        }
        while let Some(Reverse((cost, path, aboard))) = heap.pop() {
            let here = *path.last().expect("non-empty path");
            if settled[here.index()][aboard as usize] {
                continue;
            }
            settled[here.index()][aboard as usize] = true;
            let station = self.platform(here).station;
            if aboard && station == destination {
                return Route::from_platforms(self, path);
            }
            if let Some((next, ride)) = self.next_stop(here) {
                let dwell = if aboard { self.station(station).dwell_midpoint() } else { 0 };
                if !settled[next.index()][1] {
                    let mut p = path.clone();
                    p.push(next);
                    heap.push(Reverse((cost + u64::from(dwell) + u64::from(ride), p, true)));
                }
            }
            if aboard {
                let line = self.platform(here).line;
                for &q in self.platforms_at(station) {
                    if self.platform(q).line == line || settled[q.index()][0] || self.next_stop(q).is_none() {
                        continue;
                    }
                    if let Some(walk) = self.walk.transfer(here, q) {
                        let mut p = path.clone();
                        p.push(q);
                        heap.push(Reverse((cost + u64::from(walk), p, false)));
                    }
                }
            }
        }
        Err(RoutingError::NoPath {
            from: self.station(origin).id.clone(),
            to: self.station(destination).id.clone(),
        })
    }
}

type Chain = (Vec<StationIdx>, Vec<Secs>);

fn chain(line: &str, dir: Direction, edges: &[(StationIdx, StationIdx, Secs)]) -> Result<Chain, NetworkError> {
    let mut succ: HashMap<StationIdx, (StationIdx, Secs)> = HashMap::new();
    let mut has_pred: BTreeSet<StationIdx> = BTreeSet::new();
    for &(a, b, t) in edges {
        if succ.insert(a, (b, t)).is_some() {
            return Err(invalid(format!("line {line} {dir}: station has two outgoing edges")));
        }
        if !has_pred.insert(b) {
            return Err(invalid(format!("line {line} {dir}: station has two incoming edges")));
        }
    }
    let starts: Vec<StationIdx> = succ.keys().filter(|s| !has_pred.contains(s)).copied().collect();
    if starts.len() != 1 {
        return Err(invalid(format!("line {line} {dir}: edges do not form a single linear path")));
    }
    let mut seq = vec![starts[0]];
    let mut times = Vec::new();
    let mut cur = starts[0];
    while let Some(&(nxt, t)) = succ.get(&cur) {
        seq.push(nxt);
        times.push(t);
        cur = nxt;
        if seq.len() > edges.len() + 1 {
            return Err(invalid(format!("line {line} {dir}: cycle in edges")));
        }
    }
    if times.len() != edges.len() {
        return Err(invalid(format!("line {line} {dir}: edges do not form a single linear path")));
    }
    Ok((seq, times))
}

fn build_walks(
    rows: &[WalkRow],
    stations: &[Station],
    station_lookup: &HashMap<String, StationIdx>,
    platforms: &[Platform],
    platform_lookup: &HashMap<String, PlatformIdx>,
    station_platforms: &[Vec<PlatformIdx>],
) -> Result<WalkTimeTable, NetworkError> {
    let mut gate = HashMap::new();
    let mut transfer = HashMap::new();
    let resolve = |station: StationIdx, id: &str| -> Result<PlatformIdx, NetworkError> {
        let p = *platform_lookup
            .get(id.trim())
            .ok_or_else(|| invalid(format!("walk time references unknown platform `{id}`")))?;
        if platforms[p.index()].station != station {
            return Err(invalid(format!(
                "platform {id} is not at station {}",
                stations[station.index()].id
            )));
        }
        Ok(p)
    };
    for row in rows {
        let station = *station_lookup
            .get(row.station_id.trim())
            .ok_or_else(|| invalid(format!("walk time references unknown station `{}`", row.station_id)))?;
        if !(row.mean_s > 0.0) || !row.mean_s.is_finite() {
            return Err(invalid(format!("non-positive walk time at {}", row.station_id)));
        }
        let mean = (row.mean_s.round() as Secs).max(1);
        match row.kind {
            WalkKind::Gate => {
                if !row.platform_a.trim().is_empty() {
                    return Err(invalid("gate walk rows must leave platform_a empty"));
                }
                let p = resolve(station, &row.platform_b)?;
                if gate.insert(p, mean).is_some() {
                    return Err(invalid(format!("duplicate gate walk for {}", row.platform_b)));
                }
            }
            WalkKind::Transfer => {
                let a = resolve(station, &row.platform_a)?;
                let b = resolve(station, &row.platform_b)?;
                if a == b {
                    return Err(invalid(format!("transfer walk from {} to itself", row.platform_a)));
                }
                if transfer.insert((a, b), mean).is_some() {
                    return Err(invalid(format!(
                        "duplicate transfer walk {} -> {}",
                        row.platform_a, row.platform_b
                    )));
                }
            }
        }
    }
    for (i, p) in platforms.iter().enumerate() {
        if !gate.contains_key(&PlatformIdx(i as u32)) {
            return Err(invalid(format!("missing gate walk time for platform {}", p.id)));
        }
    }
    for (s, plats) in stations.iter().zip(station_platforms) {
        if !s.is_interchange {
            continue;
        }
        for &a in plats {
            for &b in plats {
                if a != b && !transfer.contains_key(&(a, b)) {
                    return Err(invalid(format!(
                        "missing transfer walk {} -> {}",
                        platforms[a.index()].id,
                        platforms[b.index()].id
                    )));
                }
            }
        }
    }
    Ok(WalkTimeTable {
        gate_to_platform: gate,
        platform_to_platform: transfer,
        walk_sd_fraction: DEFAULT_WALK_SD_FRACTION,
    })
}

pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, NetworkError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| NetworkError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| NetworkError::Parse {
            path: path.to_path_buf(),
            record: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), NetworkError> {
    let io = |e: csv::Error| NetworkError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer.flush().map_err(|e| NetworkError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
