//! Population sweeps under crowd limits (scenario A) and under peak-demand
//! reshaping (scenario B).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::CrowdLimit;
use crate::demand::{reshape_demand, scale_population, DemandError, JourneyRecord};
use crate::des::RngStream;
use crate::network::Network;
use crate::simulation::{run_replications, MetricsReport, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    BadSpec(String),
    #[error("need at least 5 populations to locate a critical point, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    A,
    B,
}

impl std::str::FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(ScenarioKind::A),
            "B" | "b" => Ok(ScenarioKind::B),
            other => Err(ScenarioError::BadSpec(format!("unknown scenario kind `{other}`"))),
        }
    }
}

/// A crowd limit as written in spec files: a positive number or `"inf"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum LimitValue {
    Number(u32),
    Text(String),
}

impl TryFrom<LimitValue> for CrowdLimit {
    type Error = String;

    fn try_from(v: LimitValue) -> Result<Self, Self::Error> {
        match v {
            LimitValue::Number(n) => n.to_string().parse(),
            LimitValue::Text(s) => s.parse(),
        }
    }
}

fn limits<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<CrowdLimit>, D::Error> {
    Vec::<LimitValue>::deserialize(d)?
        .into_iter()
        .map(|v| CrowdLimit::try_from(v).map_err(serde::de::Error::custom))
        .collect()
}

fn limit<'de, D: serde::Deserializer<'de>>(d: D) -> Result<CrowdLimit, D::Error> {
    CrowdLimit::try_from(LimitValue::deserialize(d)?).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub population_start: usize,
    pub population_end: usize,
    pub population_step: usize,
    #[serde(deserialize_with = "limits")]
    pub psi_values: Vec<CrowdLimit>,
    pub phi_values: Vec<f64>,
    /// Crowd limit held fixed while `phi` varies.
    #[serde(deserialize_with = "limit")]
    pub psi: CrowdLimit,
    pub runs: usize,
    pub seed: u64,
    /// Peak headways over 06:00–11:00 and 16:00–21:00.
    pub expanded_peaks: bool,
    pub capacity_scale: f64,
    pub max_parallel: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            population_start: 2_078_010,
            population_end: 6_078_010,
            population_step: 100_000,
            psi_values: vec![
                CrowdLimit::Unlimited,
                CrowdLimit::Finite(9000),
                CrowdLimit::Finite(7000),
                CrowdLimit::Finite(5000),
                CrowdLimit::Finite(3000),
            ],
            phi_values: vec![0.0, 0.05, 0.10, 0.20, 0.30],
            psi: CrowdLimit::Finite(3000),
            runs: 3,
            seed: 0,
            expanded_peaks: true,
            capacity_scale: 1.0,
            max_parallel: 1,
        }
    }
}

impl ScenarioSpec {
    /// The 20-station city sweep: 10K to 200K commuters, capacities at a
    /// tenth, crowd limits scaled to match.
    pub fn desk() -> Self {
        Self {
            population_start: 10_000,
            population_end: 200_000,
            population_step: 10_000,
            psi_values: vec![CrowdLimit::Unlimited, CrowdLimit::Finite(600)],
            psi: CrowdLimit::Finite(600),
            capacity_scale: 0.1,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::BadSpec(e.to_string()))
    }

    pub fn populations(&self) -> Vec<usize> {
        if self.population_step == 0 || self.population_start > self.population_end {
            return Vec::new();
        }
        (self.population_start..=self.population_end)
            .step_by(self.population_step)
            .collect()
    }

    pub fn validate(&self, kind: ScenarioKind) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::BadSpec(m.into()));
        if self.population_step == 0 {
            return bad("population_step must be positive");
        }
        if self.population_start > self.population_end {
            return bad("population_start exceeds population_end");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if !(self.capacity_scale > 0.0 && self.capacity_scale.is_finite()) {
            return bad("capacity_scale must be positive");
        }
        match kind {
            ScenarioKind::A if self.psi_values.is_empty() => bad("psi_values is empty"),
            ScenarioKind::B if self.phi_values.is_empty() => bad("phi_values is empty"),
            ScenarioKind::B if self.phi_values.iter().any(|p| !(0.0..=1.0).contains(p)) => {
                bad("phi values must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }

    fn sim_config(&self, template: &SimConfig, psi: CrowdLimit) -> SimConfig {
        let mut schedule = template.schedule.clone();
        if self.expanded_peaks {
            schedule = schedule.with_expanded_peaks();
        }
        SimConfig {
            seed: self.seed,
            psi,
            capacity_scale: self.capacity_scale,
            schedule,
            trace: false,
            ..template.clone()
        }
    }

    fn population_draw(&self, base: &[JourneyRecord], population: usize) -> Result<Vec<JourneyRecord>, ScenarioError> {
        // The same stream for every population: smaller populations are
        // prefixes of larger ones.
        Ok(scale_population(base, population, &mut RngStream::new(self.seed, "scale-population"))?)
    }
}

/// Averages over one cell's replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCell {
    pub population: usize,
    pub psi: CrowdLimit,
    pub phi: Option<f64>,
    pub mean_duration: f64,
    pub commuters_missed: f64,
    pub missed_events: f64,
    pub rejected: f64,
}

impl ScenarioCell {
    fn from_reports(population: usize, psi: CrowdLimit, phi: Option<f64>, reports: &[MetricsReport]) -> Self {
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            population,
            psi,
            phi,
            mean_duration: avg(|r| r.mean_duration),
            commuters_missed: avg(|r| r.commuters_missed as f64),
            missed_events: avg(|r| r.missed_events as f64),
            rejected: avg(|r| r.rejected as f64),
        }
    }
}

/// Every population crossed with every crowd limit. Cells at one population
/// share the same scaled demand and replication seeds.
pub fn run_scenario_a(
    net: &Network,
    base: &[JourneyRecord],
    spec: &ScenarioSpec,
    template: &SimConfig,
) -> Result<Vec<ScenarioCell>, ScenarioError> {
    spec.validate(ScenarioKind::A)?;
    let mut cells = Vec::new();
    for population in spec.populations() {
        let demand = spec.population_draw(base, population)?;
        for &psi in &spec.psi_values {
            let reports = run_replications(net, &spec.sim_config(template, psi), &demand, spec.runs, spec.max_parallel)?;
            cells.push(ScenarioCell::from_reports(population, psi, None, &reports));
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReshapeCell {
    pub cell: ScenarioCell,
    pub delta_mean_duration: f64,
    pub delta_commuters_missed: f64,
    pub delta_missed_events: f64,
}

/// Every population crossed with every participation ratio at a fixed crowd
/// limit, with differences against no reshaping at the same population.
pub fn run_scenario_b(
    net: &Network,
    base: &[JourneyRecord],
    spec: &ScenarioSpec,
    template: &SimConfig,
) -> Result<Vec<ReshapeCell>, ScenarioError> {
    spec.validate(ScenarioKind::B)?;
    let config = spec.sim_config(template, spec.psi);
    let mut out = Vec::new();
    for population in spec.populations() {
        let scaled = spec.population_draw(base, population)?;
        let run = |phi: f64| -> Result<ScenarioCell, ScenarioError> {
            let demand = reshape_demand(&scaled, phi, &mut RngStream::new(spec.seed, "reshape"))?;
            let reports = run_replications(net, &config, &demand, spec.runs, spec.max_parallel)?;
            Ok(ScenarioCell::from_reports(population, spec.psi, Some(phi), &reports))
        };
        let baseline = run(0.0)?;
        for &phi in &spec.phi_values {
            let cell = if phi == 0.0 { baseline.clone() } else { run(phi)? };
            out.push(ReshapeCell {
                delta_mean_duration: cell.mean_duration - baseline.mean_duration,
                delta_commuters_missed: cell.commuters_missed - baseline.commuters_missed,
                delta_missed_events: cell.missed_events - baseline.missed_events,
                cell,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalPoint {
    Knee { index: usize, population: usize },
    NoKnee,
}

/// Second differences this small count as straight lines.
pub const KNEE_TOLERANCE: f64 = 1e-9;

/// Population at which `ln(1 + value)` bends upward most sharply.
pub fn detect_critical_point(populations: &[usize], values: &[f64]) -> Result<CriticalPoint, ScenarioError> {
    assert_eq!(populations.len(), values.len());
    if values.len() < 5 {
        return Err(ScenarioError::TooFewPoints(values.len()));
    }
    let y: Vec<f64> = values.iter().map(|v| v.max(0.0).ln_1p()).collect();
    let x: Vec<f64> = populations.iter().map(|&p| p as f64).collect();
    let mut best = (0, KNEE_TOLERANCE);
    for i in 1..y.len() - 1 {
        let left = (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
        let right = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        // Scaled by the mean spacing so the tolerance is in log units.
        let bend = (right - left) * 0.5 * (x[i + 1] - x[i - 1]);
        if bend > best.1 {
            best = (i, bend);
        }
    }
    Ok(match best.0 {
        0 => CriticalPoint::NoKnee,
        index => CriticalPoint::Knee {
            index,
            population: populations[index],
        },
    })
}

/// Centred three-point moving average; the end points average two values.
pub fn smooth3(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn is_non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioARow {
    pub population: usize,
    pub psi: String,
    pub mean_duration_s: f64,
    pub commuters_missed: f64,
    pub missed_events: f64,
    pub rejected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBRow {
    pub population: usize,
    pub psi: String,
    pub phi: f64,
    pub mean_duration_s: f64,
    pub commuters_missed: f64,
    pub missed_events: f64,
    pub rejected: f64,
    pub delta_mean_duration_s: f64,
    pub delta_commuters_missed: f64,
    pub delta_missed_events: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointRow {
    /// `psi=...` or `phi=...`.
    pub setting: String,
    pub indicator: String,
    /// Empty when no knee was found.
    pub knee_population: Option<usize>,
}

pub fn scenario_a_rows(cells: &[ScenarioCell]) -> Vec<ScenarioARow> {
    cells
        .iter()
        .map(|c| ScenarioARow {
            population: c.population,
            psi: c.psi.to_string(),
            mean_duration_s: c.mean_duration,
            commuters_missed: c.commuters_missed,
            missed_events: c.missed_events,
            rejected: c.rejected,
        })
        .collect()
}

pub fn scenario_b_rows(cells: &[ReshapeCell]) -> Vec<ScenarioBRow> {
    cells
        .iter()
        .map(|r| ScenarioBRow {
            population: r.cell.population,
            psi: r.cell.psi.to_string(),
            phi: r.cell.phi.unwrap_or(0.0),
            mean_duration_s: r.cell.mean_duration,
            commuters_missed: r.cell.commuters_missed,
            missed_events: r.cell.missed_events,
            rejected: r.cell.rejected,
            delta_mean_duration_s: r.delta_mean_duration,
            delta_commuters_missed: r.delta_commuters_missed,
            delta_missed_events: r.delta_missed_events,
        })
        .collect()
}

/// Knee per setting and indicator. Columns with fewer than five
/// populations are skipped.
pub fn critical_points<'a>(cells: impl IntoIterator<Item = &'a ScenarioCell>) -> Vec<CriticalPointRow> {
    let mut columns: Vec<(String, Vec<&ScenarioCell>)> = Vec::new();
    for c in cells {
        let key = match c.phi {
            Some(phi) => format!("phi={phi}"),
            None => format!("psi={}", c.psi),
        };
        match columns.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(c),
            None => columns.push((key, vec![c])),
        }
    }
    let indicators: [(&str, fn(&ScenarioCell) -> f64); 3] = [
        ("mean_duration_s", |c| c.mean_duration),
        ("commuters_missed", |c| c.commuters_missed),
        ("missed_events", |c| c.missed_events),
    ];
    let mut rows = Vec::new();
    for (setting, column) in &columns {
        let pops: Vec<usize> = column.iter().map(|c| c.population).collect();
        for (name, f) in indicators {
            let values: Vec<f64> = column.iter().map(|c| f(c)).collect();
            if let Ok(point) = detect_critical_point(&pops, &values) {
                rows.push(CriticalPointRow {
                    setting: setting.clone(),
                    indicator: name.to_string(),
                    knee_population: match point {
                        CriticalPoint::Knee { population, .. } => Some(population),
                        CriticalPoint::NoKnee => None,
                    },
                });
            }
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ScenarioError> {
    let io = |e: csv::Error| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| io(e.into()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ScenarioError> {
    let io = |e: csv::Error| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().collect::<Result<_, _>>().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{synthesize_demand, DemandProfile};
    use crate::fixtures;

    #[test]
    fn knee_is_found_where_injected() {
        for k in 2..8 {
            let pops: Vec<usize> = (1..=10).map(|i| i * 1000).collect();
            let values: Vec<f64> = (0..10)
                .map(|i| if i < k { 500.0 } else { 500.0 * (0.8 * (i - k) as f64).exp() })
                .collect();
            match detect_critical_point(&pops, &values).unwrap() {
                CriticalPoint::Knee { index, .. } => assert!(index.abs_diff(k) <= 1, "{index} vs {k}"),
                CriticalPoint::NoKnee => panic!("missed knee at {k}"),
            }
        }
    }

    #[test]
    fn straight_and_flat_columns_have_no_knee() {
        let pops: Vec<usize> = (1..=8).map(|i| i * 10).collect();
        let linear: Vec<f64> = pops.iter().map(|&p| 3.0 * p as f64 + 7.0).collect();
        assert_eq!(detect_critical_point(&pops, &linear).unwrap(), CriticalPoint::NoKnee);
        assert_eq!(detect_critical_point(&pops, &[42.0; 8]).unwrap(), CriticalPoint::NoKnee);
        assert!(matches!(
            detect_critical_point(&pops[..4], &linear[..4]),
            Err(ScenarioError::TooFewPoints(4))
        ));
    }

    #[test]
    fn smoothing_and_monotonicity() {
        assert_eq!(smooth3(&[1.0, 2.0, 3.0]), vec![1.5, 2.0, 2.5]);
        assert!(is_non_decreasing(&smooth3(&[1.0, 3.0, 2.0, 4.0, 5.0])));
        assert!(!is_non_decreasing(&[2.0, 1.0]));
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec = ScenarioSpec::from_toml(
            "population_start = 1000\npopulation_end = 3000\npopulation_step = 1000\npsi_values = [\"inf\", 600]\nphi_values = [0.0, 0.2]\nruns = 2\n",
        )
        .unwrap();
        assert_eq!(spec.populations(), vec![1000, 2000, 3000]);
        assert_eq!(spec.psi_values, vec![CrowdLimit::Unlimited, CrowdLimit::Finite(600)]);
        assert_eq!(spec.runs, 2);
        assert!(ScenarioSpec::from_toml("bogus = 1").is_err());
        assert!(ScenarioSpec::from_toml("psi_values = [0]").is_err());
        let zero_step = ScenarioSpec {
            population_step: 0,
            ..ScenarioSpec::default()
        };
        assert!(zero_step.validate(ScenarioKind::A).is_err());
    }

    fn tiny() -> (Network, Vec<JourneyRecord>, ScenarioSpec) {
        let net = fixtures::city20();
        let base = synthesize_demand(&DemandProfile::desk(&net).unwrap(), 2_000, &mut RngStream::new(1, "s"));
        let spec = ScenarioSpec {
            population_start: 1_000,
            population_end: 3_000,
            population_step: 1_000,
            psi_values: vec![CrowdLimit::Unlimited, CrowdLimit::Finite(20)],
            phi_values: vec![0.0, 0.05, 0.3],
            psi: CrowdLimit::Finite(20),
            runs: 2,
            capacity_scale: 0.01,
            ..ScenarioSpec::desk()
        };
        (net, base, spec)
    }

    #[test]
    fn scenario_a_grid_is_complete() {
        let (net, base, spec) = tiny();
        let cells = run_scenario_a(&net, &base, &spec, &SimConfig::default()).unwrap();
        assert_eq!(cells.len(), 3 * 2);
        for pair in cells.chunks(2) {
            assert_eq!(pair[0].rejected, 0.0);
            assert!(pair[1].missed_events <= pair[0].missed_events);
        }
        let rows = scenario_a_rows(&cells);
        assert_eq!(rows[0].psi, "inf");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scenario_a.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_csv::<ScenarioARow>(&p).unwrap(), rows);
    }

    #[test]
    fn scenario_b_deltas_are_relative_to_no_reshaping() {
        let (net, base, spec) = tiny();
        let cells = run_scenario_b(&net, &base, &spec, &SimConfig::default()).unwrap();
        assert_eq!(cells.len(), 3 * 3);
        for r in cells.iter().filter(|r| r.cell.phi == Some(0.0)) {
            assert_eq!(
                (r.delta_mean_duration, r.delta_commuters_missed, r.delta_missed_events),
                (0.0, 0.0, 0.0)
            );
        }
        let rows = scenario_b_rows(&cells);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scenario_b.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_csv::<ScenarioBRow>(&p).unwrap(), rows);
    }

    #[test]
    fn identity_configuration_matches_plain_replications() {
        let (net, base, _) = tiny();
        let spec = ScenarioSpec {
            population_start: base.len(),
            population_end: base.len(),
            population_step: 1,
            psi_values: vec![CrowdLimit::Unlimited],
            runs: 2,
            expanded_peaks: false,
            capacity_scale: 1.0,
            ..ScenarioSpec::default()
        };
        let cells = run_scenario_a(&net, &base, &spec, &SimConfig::default()).unwrap();
        let scaled = scale_population(&base, base.len(), &mut RngStream::new(0, "scale-population")).unwrap();
        let reports = run_replications(&net, &SimConfig::default(), &scaled, 2, 1).unwrap();
        assert_eq!(cells[0], ScenarioCell::from_reports(base.len(), CrowdLimit::Unlimited, None, &reports));
        let plain = run_replications(&net, &SimConfig::default(), &base, 2, 1).unwrap();
        let plain_mean = plain.iter().map(|r| r.mean_duration).sum::<f64>() / 2.0;
        assert!((cells[0].mean_duration - plain_mean).abs() / plain_mean < 0.05);
    }
}
