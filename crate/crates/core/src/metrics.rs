//! Goodness-of-fit measures between travel-duration distributions, and the
//! log-normal fit for station crowdedness.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::network::{Network, StationIdx};

pub const KDE_GRID_POINTS: usize = 512;
/// O-D pairs with fewer empirical journeys are left out of validation.
pub const DEFAULT_MIN_OD_DEMAND: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} non-constant samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("value {0} is not positive")]
    NonPositiveValue(f64),
    #[error("no origin-destination pair reaches the minimum demand of {0}")]
    NoQualifyingPairs(usize),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// A density tabulated on an increasing grid. Between grid points it is
/// linear; outside the grid it is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Wraps raw tabulated values without normalising them.
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        assert!(grid.windows(2).all(|w| w[0] < w[1]), "grid must increase");
        Self {
            grid,
            values,
            bandwidth: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&v| v <= x);
        if i == g.len() {
            return self.values[g.len() - 1];
        }
        let (x0, x1) = (g[i - 1], g[i]);
        let t = (x - x0) / (x1 - x0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Grid point with the highest density.
    pub fn mode(&self) -> f64 {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        self.grid[i]
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Gaussian kernel density estimate with Silverman's bandwidth, tabulated
/// on 512 points spanning three bandwidths beyond the data.
pub fn kde(samples: &[f64]) -> Result<DensityEstimate, MetricsError> {
    let insufficient = MetricsError::InsufficientData {
        needed: 2,
        got: samples.len(),
    };
    if samples.len() < 2 {
        return Err(insufficient);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(insufficient);
    }
    let (_, sd) = mean_sd(&sorted);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (sorted.len() as f64).powf(-0.2);

    // Kernels are summed once per distinct value.
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &x in &sorted {
        match atoms.last_mut() {
            Some((v, w)) if *v == x => *w += 1.0,
            _ => atoms.push((x, 1.0)),
        }
    }
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| a + step * i as f64).collect();
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 8.0 * h;
    let mut values: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let start = atoms.partition_point(|&(v, _)| v < g - reach);
            atoms[start..]
                .iter()
                .take_while(|&&(v, _)| v <= g + reach)
                .map(|&(v, w)| w * (-0.5 * ((g - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    let total = trapezoid(&grid, &values);
    values.iter_mut().for_each(|v| *v /= total);
    Ok(DensityEstimate {
        grid,
        values,
        bandwidth: h,
    })
}

/// Both densities evaluated on the union of their grids.
fn common_grid(p: &DensityEstimate, q: &DensityEstimate) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut grid: Vec<f64> = p.grid.iter().chain(&q.grid).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let pv = grid.iter().map(|&x| p.eval(x)).collect();
    let qv = grid.iter().map(|&x| q.eval(x)).collect();
    (grid, pv, qv)
}

pub fn bhattacharyya(p: &DensityEstimate, q: &DensityEstimate) -> f64 {
    let (grid, pv, qv) = common_grid(p, q);
    let prod: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a * b).sqrt()).collect();
    trapezoid(&grid, &prod)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linfoot {
    /// Fidelity.
    pub f: f64,
    /// Structural content.
    pub c: f64,
    /// Correlation quantity.
    pub q: f64,
}

/// Linfoot's criteria with `p` as the reference density.
pub fn linfoot(p: &DensityEstimate, q: &DensityEstimate) -> Linfoot {
    let (grid, pv, qv) = common_grid(p, q);
    let integral = |f: &dyn Fn(f64, f64) -> f64| {
        let y: Vec<f64> = pv.iter().zip(&qv).map(|(&a, &b)| f(a, b)).collect();
        trapezoid(&grid, &y)
    };
    let pp = integral(&|a, _| a * a);
    let qq = integral(&|_, b| b * b);
    let pq = integral(&|a, b| a * b);
    let diff = integral(&|a, b| (b - a) * (b - a));
    Linfoot {
        f: 1.0 - diff / pp,
        c: qq / pp,
        q: pq / pp,
    }
}

fn resample_sorted(sorted: &[f64], m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![quantile(sorted, 0.5)];
    }
    (0..m).map(|i| quantile(sorted, i as f64 / (m - 1) as f64)).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(MetricsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of paired order statistics. The larger sample is resampled
/// to the smaller one's size by interpolating its order statistics.
pub fn ppcc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let m = x.len().min(y.len());
    if m < 2 {
        return Err(MetricsError::InsufficientData { needed: 2, got: m });
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (xs, ys) = (sort(x), sort(y));
    let xs = if xs.len() > m { resample_sorted(&xs, m) } else { xs };
    let ys = if ys.len() > m { resample_sorted(&ys, m) } else { ys };
    pearson(&xs, &ys)
}

/// Filliben's approximation to standard-normal order-statistic medians.
pub fn normal_order_medians(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let last = 0.5f64.powf(1.0 / nf);
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    (1..=n)
        .map(|i| {
            let m = if i == n {
                last
            } else if i == 1 {
                1.0 - last
            } else {
                (i as f64 - 0.3175) / (nf + 0.365)
            };
            z.inverse_cdf(m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub ppcc: f64,
}

/// Log-normal parameters from the moments of `ln(values)`, with the
/// probability-plot correlation against normal order-statistic medians.
pub fn fit_lognormal_ppcc(values: &[f64]) -> Result<LogNormalFit, MetricsError> {
    if let Some(&v) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(MetricsError::NonPositiveValue(v));
    }
    if values.len() < 3 {
        return Err(MetricsError::InsufficientData {
            needed: 3,
            got: values.len(),
        });
    }
    let mut logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    logs.sort_by(f64::total_cmp);
    if logs[0] == logs[logs.len() - 1] {
        return Err(MetricsError::ZeroVariance);
    }
    let (mu, sigma) = mean_sd(&logs);
    let ppcc = pearson(&logs, &normal_order_medians(logs.len()))?;
    Ok(LogNormalFit { mu, sigma, ppcc })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofReport {
    pub bc: f64,
    pub ppcc: f64,
    pub f: f64,
    pub c: f64,
    pub q: f64,
}

/// Compares simulated durations against empirical (reference) ones.
pub fn goodness_of_fit(empirical: &[f64], simulated: &[f64]) -> Result<GofReport, MetricsError> {
    let p = kde(empirical)?;
    let q = kde(simulated)?;
    let l = linfoot(&p, &q);
    Ok(GofReport {
        bc: bhattacharyya(&p, &q),
        ppcc: ppcc(empirical, simulated)?,
        f: l.f,
        c: l.c,
        q: l.q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub day: String,
    pub origin: String,
    pub destination: String,
    pub n_empirical: usize,
    pub n_sim: usize,
    #[serde(rename = "BC")]
    pub bc: f64,
    #[serde(rename = "PPCC")]
    pub ppcc: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofSummary {
    pub day: String,
    pub od_pairs: usize,
    #[serde(rename = "mean_BC")]
    pub mean_bc: f64,
    #[serde(rename = "mean_PPCC")]
    pub mean_ppcc: f64,
    #[serde(rename = "mean_F")]
    pub mean_f: f64,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    #[serde(rename = "mean_Q")]
    pub mean_q: f64,
}

pub type DurationsByOd = BTreeMap<(StationIdx, StationIdx), Vec<f64>>;

/// One row per O-D pair with at least `min_od_demand` empirical journeys
/// and two or more simulated ones.
pub fn validate_durations(
    net: &Network,
    day: &str,
    empirical: &DurationsByOd,
    simulated: &DurationsByOd,
    min_od_demand: usize,
) -> Result<Vec<GofRow>, MetricsError> {
    let mut rows = Vec::new();
    for (&(o, d), emp) in empirical {
        if emp.len() < min_od_demand.max(2) {
            continue;
        }
        let Some(sim) = simulated.get(&(o, d)).filter(|s| s.len() >= 2) else { continue };
        let g = goodness_of_fit(emp, sim)?;
        rows.push(GofRow {
            day: day.to_string(),
            origin: net.station(o).id.clone(),
            destination: net.station(d).id.clone(),
            n_empirical: emp.len(),
            n_sim: sim.len(),
            bc: g.bc,
            ppcc: g.ppcc,
            f: g.f,
            c: g.c,
            q: g.q,
        });
    }
    if rows.is_empty() {
        return Err(MetricsError::NoQualifyingPairs(min_od_demand));
    }
    Ok(rows)
}

pub fn summarize(day: &str, rows: &[GofRow]) -> GofSummary {
    let n = rows.len() as f64;
    let mean = |f: fn(&GofRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    GofSummary {
        day: day.to_string(),
        od_pairs: rows.len(),
        mean_bc: mean(|r| r.bc),
        mean_ppcc: mean(|r| r.ppcc),
        mean_f: mean(|r| r.f),
        mean_c: mean(|r| r.c),
        mean_q: mean(|r| r.q),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), MetricsError> {
    let io = |e: csv::Error| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| io(e.into()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let io = |e: csv::Error| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().collect::<Result<_, _>>().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::des::RngStream;
    use proptest::prelude::*;

    fn normal_samples(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        let mut s = RngStream::new(seed, "m");
        (0..n).map(|_| mean + sd * s.standard_normal()).collect()
    }

    fn gaussian_on_grid(mean: f64, sd: f64) -> DensityEstimate {
        let grid: Vec<f64> = (0..4001).map(|i| -10.0 + i as f64 * 0.005).collect();
        let n = Normal::new(mean, sd).unwrap();
        let values = grid.iter().map(|&x| statrs::distribution::Continuous::pdf(&n, x)).collect();
        DensityEstimate::from_values(grid, values)
    }

    #[test]
    fn kde_peak_and_normalisation() {
        let d = kde(&normal_samples(1, 10_000, 600.0, 60.0)).unwrap();
        assert!((d.mode() - 600.0).abs() <= 10.0, "{}", d.mode());
        assert!((d.integral() - 1.0).abs() < 1e-6);
        assert_eq!(d.grid.len(), KDE_GRID_POINTS);
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn kde_rejects_degenerate_input() {
        assert!(matches!(kde(&[5.0, 5.0]), Err(MetricsError::InsufficientData { .. })));
        assert!(matches!(kde(&[5.0]), Err(MetricsError::InsufficientData { .. })));
    }

    #[test]
    fn kde_matches_direct_sum_oracle() {
        let xs = [1.0, 2.0, 2.0, 7.5, 3.25];
        let d = kde(&xs).unwrap();
        let h = d.bandwidth;
        let direct = |g: f64| {
            xs.iter()
                .map(|x| (-0.5 * ((g - x) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()))
                .sum::<f64>()
                / xs.len() as f64
        };
        let raw: Vec<f64> = d.grid.iter().map(|&g| direct(g)).collect();
        let scale = trapezoid(&d.grid, &raw);
        for (g, v) in d.grid.iter().zip(&d.values) {
            assert!((v - direct(*g) / scale).abs() < 1e-12);
        }
    }

    #[test]
    fn bc_identities() {
        let p = kde(&normal_samples(2, 2_000, 0.0, 1.0)).unwrap();
        assert!((bhattacharyya(&p, &p) - 1.0).abs() < 1e-6);
        let far = kde(&normal_samples(3, 2_000, 1_000.0, 1.0)).unwrap();
        assert!(bhattacharyya(&p, &far).abs() < 1e-6);
    }

    #[test]
    fn bc_gaussian_closed_form() {
        let expected = (-1.0f64 / 8.0).exp();
        let exact = bhattacharyya(&gaussian_on_grid(0.0, 1.0), &gaussian_on_grid(1.0, 1.0));
        assert!((exact - expected).abs() < 1e-4, "{exact}");
        let p = kde(&normal_samples(4, 10_000, 0.0, 1.0)).unwrap();
        let q = kde(&normal_samples(5, 10_000, 1.0, 1.0)).unwrap();
        assert!((bhattacharyya(&p, &q) - expected).abs() < 0.01);
    }

    #[test]
    fn linfoot_identity_and_self() {
        let p = kde(&normal_samples(6, 1_000, 0.0, 1.0)).unwrap();
        let l = linfoot(&p, &p);
        for v in [l.f, l.c, l.q] {
            assert!((v - 1.0).abs() < 1e-6);
        }
        let zero = DensityEstimate::from_values(p.grid.clone(), vec![0.0; p.grid.len()]);
        assert_eq!(linfoot(&p, &zero), Linfoot { f: 0.0, c: 0.0, q: 0.0 });
    }

    #[test]
    fn ppcc_affine_invariance() {
        let x = normal_samples(7, 500, 10.0, 3.0);
        assert!((ppcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 5.0).collect();
        assert!((ppcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ppcc(&[1.0, 1.0, 1.0], &x), Err(MetricsError::ZeroVariance));
    }

    #[test]
    fn ppcc_matches_quantile_oracle_for_uniform_samples() {
        let mut s = RngStream::new(8, "u");
        let x: Vec<f64> = (0..10_000).map(|_| s.uniform()).collect();
        let y: Vec<f64> = (0..7_000).map(|_| s.uniform()).collect();
        // Oracle: correlate y's order statistics with x's empirical quantile
        // function evaluated at the same plotting positions.
        let mut xs = x.clone();
        xs.sort_by(f64::total_cmp);
        let mut ys = y.clone();
        ys.sort_by(f64::total_cmp);
        let m = ys.len();
        let qx: Vec<f64> = (0..m)
            .map(|i| {
                let pos = i as f64 * (xs.len() - 1) as f64 / (m - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(xs.len() - 1);
                xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
            })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&qx), mean(&ys));
        let cov: f64 = qx.iter().zip(&ys).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = qx.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = ys.iter().map(|b| (b - mb).powi(2)).sum();
        let oracle = cov / (va * vb).sqrt();
        let got = ppcc(&x, &y).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!(got > 0.999);
    }

    #[test]
    fn order_medians_are_symmetric() {
        let m = normal_order_medians(11);
        assert!(m[5].abs() < 1e-12);
        for i in 0..11 {
            assert!((m[i] + m[10 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lognormal_fit_recovers_parameters() {
        let mut s = RngStream::new(9, "ln");
        let v: Vec<f64> = (0..121).map(|_| (5.513 + 1.319 * s.standard_normal()).exp()).collect();
        let fit = fit_lognormal_ppcc(&v).unwrap();
        assert!((fit.mu - 5.513).abs() < 0.25);
        assert!((fit.sigma - 1.319).abs() < 0.2);
        assert!(fit.ppcc >= 0.95);

        let big: Vec<f64> = (0..10_000).map(|_| (1.0 + 0.5 * s.standard_normal()).exp()).collect();
        assert!(fit_lognormal_ppcc(&big).unwrap().ppcc >= 0.999);
    }

    #[test]
    fn lognormal_fit_errors() {
        assert_eq!(fit_lognormal_ppcc(&[1.0, 0.0, 2.0]), Err(MetricsError::NonPositiveValue(0.0)));
        assert_eq!(fit_lognormal_ppcc(&[3.0; 10]), Err(MetricsError::ZeroVariance));
        assert!(matches!(fit_lognormal_ppcc(&[1.0, 2.0]), Err(MetricsError::InsufficientData { .. })));
    }

    #[test]
    fn shifted_durations_keep_ppcc_but_lose_overlap() {
        let x = normal_samples(10, 3_000, 900.0, 120.0);
        let y: Vec<f64> = x.iter().map(|v| v + 60.0).collect();
        let g = goodness_of_fit(&x, &y).unwrap();
        assert!((g.ppcc - 1.0).abs() < 1e-12);
        assert!(g.bc < 1.0);
        let same = goodness_of_fit(&x, &x).unwrap();
        for v in [same.bc, same.f, same.c, same.q] {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn identities_hold_on_random_pairs(
            a in proptest::collection::vec(0.0f64..1_000.0, 3..60),
            b in proptest::collection::vec(0.0f64..1_000.0, 3..60),
        ) {
            let (Ok(p), Ok(q)) = (kde(&a), kde(&b)) else { return Ok(()) };
            let l = linfoot(&p, &q);
            prop_assert!((l.f - (2.0 * l.q - l.c)).abs() < 1e-9);
            prop_assert_eq!(bhattacharyya(&p, &q), bhattacharyya(&q, &p));
            let bc = bhattacharyya(&p, &q);
            prop_assert!((-1e-12..=1.0 + 1e-9).contains(&bc));
            prop_assert!((p.integral() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn ppcc_affine_property(
            a in proptest::collection::vec(-100.0f64..100.0, 3..80),
            b in proptest::collection::vec(-100.0f64..100.0, 3..80),
            scale in 0.01f64..100.0,
            shift in -1e3f64..1e3,
        ) {
            if let Ok(r) = ppcc(&a, &b) {
                let t: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
                prop_assert!((ppcc(&t, &b).unwrap() - r).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
