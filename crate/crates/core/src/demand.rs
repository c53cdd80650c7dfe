//! Journey records: ingestion, synthetic generation, Monte Carlo population
//! scaling and temporal reshaping of peak demand.

use std::collections::HashMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::des::{RngStream, Secs};
use crate::network::{Network, StationIdx};

pub const SECONDS_PER_DAY: Secs = 86_400;

/// Morning window whose tap-ins may move earlier, and its destination.
pub const AM_RESHAPE_FROM: (Secs, Secs) = (7 * 3600, 9 * 3600);
pub const AM_RESHAPE_TO: (Secs, Secs) = (6 * 3600, 7 * 3600);
/// Evening window whose tap-ins may move later, and its destination.
pub const PM_RESHAPE_FROM: (Secs, Secs) = (18 * 3600, 20 * 3600);
pub const PM_RESHAPE_TO: (Secs, Secs) = (20 * 3600, 21 * 3600);

/// Journeys in the reference Monday.
pub const MONDAY_JOURNEYS: usize = 2_078_010;
/// Share of Monday tap-ins inside the reshaping windows.
pub const MONDAY_ELIGIBLE_FRACTION: f64 = 0.402;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}, line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}, line {line}: unknown station `{station}`")]
    UnknownStation { path: String, line: u64, station: String },
    #[error("cannot resample an empty journey list")]
    EmptySource,
    #[error("invalid demand profile: {0}")]
    BadProfile(String),
    #[error("participation ratio {0} outside [0, 1]")]
    BadPhi(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JourneyRecord {
    pub origin: StationIdx,
    pub destination: StationIdx,
    pub tap_in: Secs,
    /// Observed tap-out minus tap-in; never given to the simulator.
    pub observed_duration: Option<Secs>,
}

impl JourneyRecord {
    pub fn is_valid(&self) -> bool {
        self.origin != self.destination
            && self.tap_in < SECONDS_PER_DAY
            && self.observed_duration.map_or(true, |d| d > 0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedJourneys {
    pub records: Vec<JourneyRecord>,
    /// Rows skipped for violating record invariants.
    pub malformed: usize,
}

/// Reads `origin,destination,tap_in_s,observed_duration_s` rows, resolving
/// station ids against `net`. The duration column may be absent or empty.
pub fn parse_journeys(path: &Path, net: &Network) -> Result<ParsedJourneys, DemandError> {
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DemandError::Io {
            path: shown.clone(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| DemandError::Io {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let expected = ["origin", "destination", "tap_in_s"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(DemandError::Parse {
            path: shown,
            line: 1,
            message: format!("expected header starting with {}", expected.join(",")),
        });
    }
    let mut cache: HashMap<Vec<u8>, StationIdx> = HashMap::new();
    let mut out = ParsedJourneys::default();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(DemandError::Parse {
                    path: shown,
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| DemandError::Parse {
            path: shown.clone(),
            line,
            message,
        };
        if record.len() < 3 || record.len() > 4 {
            return Err(parse_err(format!("expected 3 or 4 fields, found {}", record.len())));
        }
        let mut station = |field: &[u8]| -> Result<StationIdx, DemandError> {
            if let Some(&s) = cache.get(field) {
                return Ok(s);
            }
            let id = String::from_utf8_lossy(field);
            let s = net.station_idx(&id).map_err(|_| DemandError::UnknownStation {
                path: shown.clone(),
                line,
                station: id.to_string(),
            })?;
            cache.insert(field.to_vec(), s);
            Ok(s)
        };
        let origin = station(&record[0])?;
        let destination = station(&record[1])?;
        let number = |field: &[u8], name: &str| -> Result<Secs, DemandError> {
            std::str::from_utf8(field)
                .ok()
                .and_then(|s| s.parse::<Secs>().ok())
                .ok_or_else(|| parse_err(format!("{name} `{}` is not a whole number of seconds", String::from_utf8_lossy(field))))
        };
        let tap_in = number(&record[2], "tap_in_s")?;
        let observed_duration = match record.get(3) {
            Some(f) if !f.is_empty() => Some(number(f, "observed_duration_s")?),
            _ => None,
        };
        let rec = JourneyRecord {
            origin,
            destination,
            tap_in,
            observed_duration,
        };
        if rec.is_valid() {
            out.records.push(rec);
        } else {
            out.malformed += 1;
        }
    }
    Ok(out)
}

pub fn write_journeys(path: &Path, net: &Network, records: &[JourneyRecord]) -> Result<(), DemandError> {
    let io = |e: &dyn std::fmt::Display| DemandError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    w.write_record(["origin", "destination", "tap_in_s", "observed_duration_s"])
        .map_err(|e| io(&e))?;
    let mut buf = itoa_buf();
    for r in records {
        let dur = r.observed_duration.map(|d| d.to_string()).unwrap_or_default();
        buf.clear();
        buf.push_str(&r.tap_in.to_string());
        w.write_record([
            net.station(r.origin).id.as_str(),
            net.station(r.destination).id.as_str(),
            buf.as_str(),
            dur.as_str(),
        ])
        .map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

fn itoa_buf() -> String {
    String::with_capacity(16)
}

/// Share of records whose tap-in falls in a reshaping window.
pub fn eligible_fraction(records: &[JourneyRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| reshape_target(r.tap_in).is_some()).count() as f64 / records.len() as f64
}

fn reshape_target(tap_in: Secs) -> Option<(Secs, Secs)> {
    let inside = |(lo, hi): (Secs, Secs)| tap_in >= lo && tap_in < hi;
    if inside(AM_RESHAPE_FROM) {
        Some(AM_RESHAPE_TO)
    } else if inside(PM_RESHAPE_FROM) {
        Some(PM_RESHAPE_TO)
    } else {
        None
    }
}

/// A Gaussian peak in tap-in intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub centre: f64,
    pub sd: f64,
    pub share: f64,
}

/// Tap-in time distribution: Gaussian peaks plus a uniform base, all
/// confined to the service window.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProfile {
    pub service_start: Secs,
    pub service_end: Secs,
    pub peaks: Vec<Peak>,
}

impl TimeProfile {
    fn base_share(&self) -> f64 {
        1.0 - self.peaks.iter().map(|p| p.share).sum::<f64>()
    }

    fn validate(&self) -> Result<(), DemandError> {
        if self.service_start >= self.service_end || self.service_end > SECONDS_PER_DAY {
            return Err(DemandError::BadProfile("service window must lie within one day".into()));
        }
        let base = self.base_share();
        if self.peaks.iter().any(|p| !(p.share >= 0.0) || !(p.sd > 0.0)) || base < -1e-12 {
            return Err(DemandError::BadProfile("peak shares must be non-negative and sum to at most 1".into()));
        }
        Ok(())
    }

    /// Probability that a tap-in lands in `[lo, hi)`.
    pub fn mass_in(&self, lo: Secs, hi: Secs) -> f64 {
        let (s, e) = (f64::from(self.service_start), f64::from(self.service_end));
        let (lo, hi) = (f64::from(lo).max(s), f64::from(hi).min(e));
        if lo >= hi {
            return 0.0;
        }
        let mut mass = self.base_share() * (hi - lo) / (e - s);
        for p in &self.peaks {
            let n = Normal::new(p.centre, p.sd).expect("sd > 0");
            let window = n.cdf(e) - n.cdf(s);
            mass += p.share * (n.cdf(hi) - n.cdf(lo)) / window;
        }
        mass
    }

    /// Expected share of tap-ins inside the reshaping windows.
    pub fn eligible_mass(&self) -> f64 {
        self.mass_in(AM_RESHAPE_FROM.0, AM_RESHAPE_FROM.1) + self.mass_in(PM_RESHAPE_FROM.0, PM_RESHAPE_FROM.1)
    }

    pub fn sample(&self, stream: &mut RngStream) -> Secs {
        let (s, e) = (f64::from(self.service_start), f64::from(self.service_end));
        let mut u = stream.uniform();
        for p in &self.peaks {
            if u < p.share {
                let x = stream.truncated_normal(p.centre, p.sd, s, e).expect("service window is ordered");
                return (x.floor() as Secs).min(self.service_end - 1);
            }
            u -= p.share;
        }
        stream.rng().gen_range(self.service_start..self.service_end)
    }

    /// Two equal-share peaks (08:30 and 18:30), shares chosen so the expected
    /// reshaping-eligible fraction equals `eligible`.
    pub fn calibrated_weekday(eligible: f64) -> Self {
        let am = Peak {
            centre: 8.5 * 3600.0,
            sd: 45.0 * 60.0,
            share: 0.5,
        };
        let pm = Peak {
            centre: 18.5 * 3600.0,
            sd: 50.0 * 60.0,
            share: 0.5,
        };
        let mut profile = Self {
            service_start: 20_700,
            service_end: 84_600,
            peaks: vec![am, pm],
        };
        let peaks_only = profile.eligible_mass();
        profile.peaks.iter_mut().for_each(|p| p.share = 0.0);
        let base_only = profile.eligible_mass();
        // Mass is linear in the per-peak share s: base + 2s * (peaks - base).
        let share = (eligible - base_only) / (2.0 * (peaks_only - base_only));
        profile.peaks.iter_mut().for_each(|p| p.share = share);
        profile
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Normalised origin-destination weights.
    pub od_weights: Vec<((StationIdx, StationIdx), f64)>,
    /// Applied to every origin-destination pair.
    pub time_profile: TimeProfile,
}

impl DemandProfile {
    pub fn new(weights: Vec<((StationIdx, StationIdx), f64)>, time_profile: TimeProfile) -> Result<Self, DemandError> {
        time_profile.validate()?;
        if weights.iter().any(|((o, d), w)| o == d || !(*w >= 0.0) || !w.is_finite()) {
            return Err(DemandError::BadProfile("weights must be finite, non-negative, and off-diagonal".into()));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(DemandError::BadProfile("weights sum to zero".into()));
        }
        Ok(Self {
            od_weights: weights.into_iter().map(|(od, w)| (od, w / total)).collect(),
            time_profile,
        })
    }

    /// Gravity weights: `(rank(o) * rank(d))^exponent`, where stations are
    /// ranked 1..=n by ascending degree (ties by id).
    pub fn gravity(net: &Network, exponent: f64, time_profile: TimeProfile) -> Result<Self, DemandError> {
        let n = net.stations().len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (net.station_degree(StationIdx(i as u32)), i));
        let mut rank = vec![0.0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = (r + 1) as f64;
        }
        let mut weights = Vec::with_capacity(n * n.saturating_sub(1));
        for o in 0..n {
            for d in 0..n {
                if o != d {
                    weights.push(((StationIdx(o as u32), StationIdx(d as u32)), (rank[o] * rank[d]).powf(exponent)));
                }
            }
        }
        Self::new(weights, time_profile)
    }

    /// Product-of-masses weights with heavy "hub" stations: every interchange
    /// plus the next station up each of its lines.
    pub fn hubs(net: &Network, hub_mass: f64, time_profile: TimeProfile) -> Result<Self, DemandError> {
        let n = net.stations().len();
        let mut mass = vec![1.0; n];
        for (i, s) in net.stations().iter().enumerate() {
            if !s.is_interchange {
                continue;
            }
            mass[i] = hub_mass;
            for &p in net.platforms_at(StationIdx(i as u32)) {
                if net.platform(p).direction == crate::network::Direction::Up {
                    if let Some((q, _)) = net.next_stop(p) {
                        mass[net.platform(q).station.index()] = hub_mass;
                    }
                }
            }
        }
        let mut weights = Vec::new();
        for o in 0..n {
            for d in 0..n {
                if o != d {
                    weights.push(((StationIdx(o as u32), StationIdx(d as u32)), mass[o] * mass[d]));
                }
            }
        }
        Self::new(weights, time_profile)
    }

    /// Monday-shaped profile: degree-rank gravity with peaks calibrated so
    /// 40.2% of tap-ins fall in the reshaping windows.
    pub fn monday(net: &Network) -> Result<Self, DemandError> {
        Self::gravity(net, 1.0, TimeProfile::calibrated_weekday(MONDAY_ELIGIBLE_FRACTION))
    }

    /// Desk-scale profile for the 20-station city: strong hubs and sharp peaks.
    pub fn desk(net: &Network) -> Result<Self, DemandError> {
        let time = TimeProfile {
            service_start: 20_700,
            service_end: 84_600,
            peaks: vec![
                Peak {
                    centre: 8.25 * 3600.0,
                    sd: 30.0 * 60.0,
                    share: 0.3,
                },
                Peak {
                    centre: 18.5 * 3600.0,
                    sd: 30.0 * 60.0,
                    share: 0.3,
                },
            ],
        };
        Self::hubs(net, 10.0, time)
    }
}

/// Draws `n` journeys: origin-destination from the profile weights, tap-in
/// time from its time profile.
pub fn synthesize_demand(profile: &DemandProfile, n: usize, stream: &mut RngStream) -> Vec<JourneyRecord> {
    if n == 0 {
        return Vec::new();
    }
    let index = WeightedIndex::new(profile.od_weights.iter().map(|(_, w)| *w)).expect("validated weights");
    (0..n)
        .map(|_| {
            let (origin, destination) = profile.od_weights[index.sample(stream.rng())].0;
            JourneyRecord {
                origin,
                destination,
                tap_in: profile.time_profile.sample(stream),
                observed_duration: None,
            }
        })
        .collect()
}

/// Uniform resampling with replacement to `target_n` journeys. Observed
/// durations are dropped. Draws are sequential, so a larger target extends a
/// smaller one drawn from the same stream state.
pub fn scale_population(
    records: &[JourneyRecord],
    target_n: usize,
    stream: &mut RngStream,
) -> Result<Vec<JourneyRecord>, DemandError> {
    if records.is_empty() {
        return Err(DemandError::EmptySource);
    }
    let n = records.len();
    Ok((0..target_n)
        .map(|_| JourneyRecord {
            observed_duration: None,
            ..records[stream.rng().gen_range(0..n)]
        })
        .collect())
}

/// Moves each tap-in in 07:00–09:00 to a uniform time in 06:00–07:00, and
/// each in 18:00–20:00 to 20:00–21:00, with probability `phi`.
///
/// Every eligible record consumes the same two draws whatever `phi` is, so
/// the records moved at a smaller `phi` are a subset of those moved at a
/// larger one.
pub fn reshape_demand(records: &[JourneyRecord], phi: f64, stream: &mut RngStream) -> Result<Vec<JourneyRecord>, DemandError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(DemandError::BadPhi(phi));
    }
    Ok(records
        .iter()
        .map(|r| {
            let Some((lo, hi)) = reshape_target(r.tap_in) else { return *r };
            let u = stream.uniform();
            let new_time = stream.rng().gen_range(lo..hi);
            if u < phi {
                JourneyRecord { tap_in: new_time, ..*r }
            } else {
                *r
            }
        })
        .collect())
}
