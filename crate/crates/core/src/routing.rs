//! Route choice: candidate enumeration, Gumbel-mixture fitting of observed
//! travel durations, matching of mixture components to routes, and
//! probabilistic route assignment.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{RngStream, Secs};
use crate::network::{read_rows, write_rows, LineIdx, Network, NetworkError, PlatformIdx, StationIdx};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("origin and destination are both `{0}`")]
    SameStation(String),
    #[error("no path from {from} to {to}")]
    NoPath { from: String, to: String },
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("need at least {needed} durations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("mixture fit degenerated: {0}")]
    DegenerateFit(String),
    #[error("{components} components cannot be matched to {routes} routes")]
    MoreComponentsThanRoutes { components: usize, routes: usize },
    #[error("route probabilities for {0} do not sum to 1")]
    BadProbabilities(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One continuous ride on a single line and direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Leg {
    pub line: LineIdx,
    pub board: PlatformIdx,
    pub alight: PlatformIdx,
    pub hops: usize,
    pub ride_time: Secs,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Route {
    /// Every platform visited, in order; a transfer appears as two
    /// consecutive platforms at the same station.
    pub platforms: Vec<PlatformIdx>,
    pub legs: Vec<Leg>,
    pub transfers: usize,
    /// Station hops.
    pub path_distance: usize,
    /// Ride time plus dwell midpoints passed aboard plus mean transfer walks.
    pub expected_time: Secs,
}

impl Route {
    /// Rebuilds a route from its platform sequence, validating every step.
    pub fn from_platforms(net: &Network, platforms: Vec<PlatformIdx>) -> Result<Route, RoutingError> {
        let bad = |m: String| RoutingError::InvalidRoute(m);
        if platforms.len() < 2 {
            return Err(bad("a route needs at least two platforms".into()));
        }
        let mut legs = Vec::new();
        let mut expected: Secs = 0;
        let mut leg_start = platforms[0];
        let mut hops = 0usize;
        let mut ride: Secs = 0;
        for w in platforms.windows(2) {
            let (a, b) = (w[0], w[1]);
            if net.next_stop(a).map(|(n, _)| n) == Some(b) {
                if a != leg_start {
                    expected += net.station(net.platform(a).station).dwell_midpoint();
                }
                let t = net.next_stop(a).expect("checked").1;
                ride += t;
                expected += t;
                hops += 1;
                continue;
            }
            let (pa, pb) = (net.platform(a), net.platform(b));
            let walk = net.walk_times().transfer(a, b);
            if pa.station != pb.station || pa.line == pb.line || walk.is_none() || hops == 0 {
                return Err(bad(format!("{} -> {} is neither a ride nor a transfer", pa.id, pb.id)));
            }
            legs.push(Leg {
                line: pa.line,
                board: leg_start,
                alight: a,
                hops,
                ride_time: ride,
            });
            expected += walk.expect("checked");
            leg_start = b;
            hops = 0;
            ride = 0;
        }
        if hops == 0 {
            return Err(bad("route ends with a transfer".into()));
        }
        let last = *platforms.last().expect("non-empty");
        legs.push(Leg {
            line: net.platform(last).line,
            board: leg_start,
            alight: last,
            hops,
            ride_time: ride,
        });
        Ok(Route {
            transfers: legs.len() - 1,
            path_distance: legs.iter().map(|l| l.hops).sum(),
            expected_time: expected,
            platforms,
            legs,
        })
    }

    pub fn origin(&self, net: &Network) -> StationIdx {
        net.platform(self.platforms[0]).station
    }

    pub fn destination(&self, net: &Network) -> StationIdx {
        net.platform(*self.platforms.last().expect("non-empty")).station
    }

    pub fn platform_ids(&self, net: &Network) -> Vec<String> {
        self.platforms.iter().map(|&p| net.platform(p).id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateConstraints {
    /// Candidates may take at most this multiple of the shortest time.
    pub detour_factor: f64,
    pub max_transfers: usize,
}

impl Default for CandidateConstraints {
    fn default() -> Self {
        Self {
            detour_factor: 1.5,
            max_transfers: 2,
        }
    }
}

/// All station-simple routes within the detour and transfer limits, sorted by
/// expected time (then platform ids). The shortest route is always included.
pub fn enumerate_candidates(
    net: &Network,
    origin: StationIdx,
    destination: StationIdx,
    constraints: CandidateConstraints,
) -> Result<Vec<Route>, RoutingError> {
    let shortest = net.shortest_route(origin, destination)?;
    let bound = (f64::from(shortest.expected_time) * constraints.detour_factor).floor() as u64;
    let lower = ride_lower_bounds(net, destination);

    struct Search<'a> {
        net: &'a Network,
        destination: StationIdx,
        bound: u64,
        max_transfers: usize,
        lower: Vec<u64>,
        visited: Vec<bool>,
        path: Vec<PlatformIdx>,
        found: Vec<Vec<PlatformIdx>>,
    }

    impl Search<'_> {
        // `here` is the last platform of the path; `aboard` says whether the
        // commuter arrived there by train (so staying aboard costs a dwell).
        fn go(&mut self, cost: u64, aboard: bool, transfers: usize) {
            let here = *self.path.last().expect("non-empty");
            let Some((next, ride)) = self.net.next_stop(here) else { return };
            let ns = self.net.platform(next).station;
            if self.visited[ns.index()] {
                return;
            }
            let dwell = if aboard {
                u64::from(self.net.station(self.net.platform(here).station).dwell_midpoint())
            } else {
                0
            };
            let c = cost + dwell + u64::from(ride);
            if c + self.lower[ns.index()] > self.bound {
                return;
            }
            self.visited[ns.index()] = true;
            self.path.push(next);
            if ns == self.destination {
                self.found.push(self.path.clone());
            } else {
                self.go(c, true, transfers);
                if transfers < self.max_transfers {
                    let line = self.net.platform(next).line;
                    for &q in self.net.platforms_at(ns) {
                        if self.net.platform(q).line == line {
                            continue;
                        }
                        if let Some(w) = self.net.walk_times().transfer(next, q) {
                            self.path.push(q);
                            self.go(c + u64::from(w), false, transfers + 1);
                            self.path.pop();
                        }
                    }
                }
            }
            self.path.pop();
            self.visited[ns.index()] = false;
        }
    }

    let mut search = Search {
        net,
        destination,
        bound,
        max_transfers: constraints.max_transfers,
        lower,
        visited: vec![false; net.stations().len()],
        path: Vec::new(),
        found: Vec::new(),
    };
    search.visited[origin.index()] = true;
    for &p in net.platforms_at(origin) {
        search.path.clear();
        search.path.push(p);
        search.go(0, false, 0);
    }
    let mut routes = search
        .found
        .into_iter()
        .map(|p| Route::from_platforms(net, p))
        .collect::<Result<Vec<_>, _>>()?;
    if !routes.contains(&shortest) {
        routes.push(shortest);
    }
    routes.sort_by(|a, b| (a.expected_time, &a.platforms).cmp(&(b.expected_time, &b.platforms)));
    Ok(routes)
}

/// Minimum pure ride time from every station to `destination`; an admissible
/// bound for pruning.
fn ride_lower_bounds(net: &Network, destination: StationIdx) -> Vec<u64> {
    let n = net.stations().len();
    let mut incoming: Vec<Vec<(StationIdx, u64)>> = vec![Vec::new(); n];
    for e in net.edges() {
        let a = net.platform(e.from).station;
        let b = net.platform(e.to).station;
        incoming[b.index()].push((a, u64::from(e.ride_time)));
    }
    let mut dist = vec![u64::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[destination.index()] = 0;
    heap.push(Reverse((0u64, destination)));
    while let Some(Reverse((d, s))) = heap.pop() {
        if d > dist[s.index()] {
            continue;
        }
        for &(prev, t) in &incoming[s.index()] {
            if d + t < dist[prev.index()] {
                dist[prev.index()] = d + t;
                heap.push(Reverse((d + t, prev)));
            }
        }
    }
    dist
}

/// A Gumbel (maximum) component: density `exp(-(z + exp(-z))) / scale` with
/// `z = (x - location) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelComponent {
    pub location: f64,
    pub scale: f64,
    pub weight: f64,
}

impl GumbelComponent {
    pub fn mean(&self) -> f64 {
        self.location + EULER_GAMMA * self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        -self.scale.ln() - z - (-z).exp()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (-(-(x - self.location) / self.scale).exp()).exp()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        self.location - self.scale * (-u.ln()).ln()
    }
}

pub fn mixture_pdf(components: &[GumbelComponent], x: f64) -> f64 {
    components.iter().map(|c| c.weight * c.pdf(x)).sum()
}

pub fn mixture_log_likelihood(components: &[GumbelComponent], xs: &[f64]) -> f64 {
    xs.iter().map(|&x| mixture_pdf(components, x).ln()).sum()
}

#[derive(Debug, Clone)]
pub struct GumbelFitOptions {
    pub restarts: usize,
    /// EM iterations given to each restart before the best is kept.
    pub restart_iterations: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-sample log-likelihood change.
    pub tolerance: f64,
    pub min_scale: f64,
    pub seed: u64,
}

impl Default for GumbelFitOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            restart_iterations: 5,
            max_iterations: 1_000,
            tolerance: 1e-10,
            min_scale: 1.0,
            seed: 0x6d69_7874_7572_6521,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    /// Sorted by mean.
    pub components: Vec<GumbelComponent>,
    pub log_likelihood: f64,
    pub bic: f64,
    /// Log-likelihood after each EM iteration of the final run.
    pub trace: Vec<f64>,
}

pub const MIN_FIT_SAMPLES: usize = 30;

/// Fits mixtures with 1..=k_max components by EM and keeps the lowest BIC.
pub fn fit_gumbel_mixture(durations: &[f64], k_max: usize) -> Result<Vec<GumbelComponent>, RoutingError> {
    Ok(fit_gumbel_mixture_with(durations, k_max, &GumbelFitOptions::default())?.components)
}

pub fn fit_gumbel_mixture_with(
    durations: &[f64],
    k_max: usize,
    opts: &GumbelFitOptions,
) -> Result<MixtureFit, RoutingError> {
    if durations.len() < MIN_FIT_SAMPLES {
        return Err(RoutingError::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: durations.len(),
        });
    }
    let k_max = k_max.max(1);
    let mut best: Option<MixtureFit> = None;
    let mut first_err = None;
    for k in 1..=k_max {
        match fit_k(durations, k, opts) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.bic < b.bic) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one k attempted"))
}

/// EM for a fixed number of components.
pub fn fit_k(xs: &[f64], k: usize, opts: &GumbelFitOptions) -> Result<MixtureFit, RoutingError> {
    let n = xs.len();
    let mut em = Em::new(xs, k);
    let mut rng = RngStream::new(opts.seed, "gumbel-em").child(k as u64);
    let restarts = if k == 1 { 1 } else { opts.restarts.max(1) };
    let mut best: Option<(f64, Vec<GumbelComponent>)> = None;
    for _ in 0..restarts {
        let Some(init) = kmeans_init(xs, k, &mut rng) else { continue };
        let mut comps = init;
        let mut ll = f64::NEG_INFINITY;
        let mut ok = true;
        for _ in 0..opts.restart_iterations {
            match em.step(&mut comps, opts.min_scale) {
                Some(v) => ll = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && ll.is_finite() && best.as_ref().map_or(true, |(b, _)| ll > *b) {
            best = Some((ll, comps));
        }
    }
    let (_, mut comps) = best.ok_or_else(|| RoutingError::DegenerateFit(format!("no valid {k}-component start")))?;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..opts.max_iterations {
        let ll = em
            .step(&mut comps, opts.min_scale)
            .ok_or_else(|| RoutingError::DegenerateFit(format!("{k}-component scale collapsed below {} s", opts.min_scale)))?;
        trace.push(ll);
        if (ll - prev).abs() <= opts.tolerance * n as f64 {
            break;
        }
        prev = ll;
    }
    // The trace holds the likelihood of the parameters entering each step;
    // score the final parameters directly.
    let ll = mixture_log_likelihood(&comps, xs);
    trace.push(ll);
    comps.sort_by(|a, b| a.mean().total_cmp(&b.mean()));
    let params = (3 * k - 1) as f64;
    Ok(MixtureFit {
        components: comps,
        log_likelihood: ll,
        bic: -2.0 * ll + params * (n as f64).ln(),
        trace,
    })
}

struct Em<'a> {
    xs: &'a [f64],
    k: usize,
    resp: Vec<f64>,
}

impl<'a> Em<'a> {
    fn new(xs: &'a [f64], k: usize) -> Self {
        Self {
            xs,
            k,
            resp: vec![0.0; xs.len() * k],
        }
    }

    /// One EM iteration. Returns the log-likelihood of the parameters it
    /// started from, or None if a component degenerated.
    fn step(&mut self, comps: &mut [GumbelComponent], min_scale: f64) -> Option<f64> {
        let k = self.k;
        let mut ll = 0.0;
        let log_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
        let mut buf = vec![0.0; k];
        for (i, &x) in self.xs.iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                buf[j] = log_w[j] + comps[j].ln_pdf(x);
                max = max.max(buf[j]);
            }
            if !max.is_finite() {
                return None;
            }
            let mut sum = 0.0;
            for v in buf.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            ll += max + sum.ln();
            for j in 0..k {
                self.resp[i * k + j] = buf[j] / sum;
            }
        }
        let n = self.xs.len() as f64;
        for (j, comp) in comps.iter_mut().enumerate() {
            let weights = self.resp.iter().skip(j).step_by(k);
            let (fitted, total) = weighted_gumbel_mle(self.xs, weights, comp.scale)?;
            if fitted.1 < min_scale || total <= 1e-9 * n {
                return None;
            }
            *comp = GumbelComponent {
                location: fitted.0,
                scale: fitted.1,
                weight: total / n,
            };
        }
        Some(ll)
    }
}

/// Weighted maximum-likelihood Gumbel fit. Solves the scale equation by
/// safeguarded Newton iteration, then the location in closed form.
fn weighted_gumbel_mle<'w>(
    xs: &[f64],
    weights: impl Iterator<Item = &'w f64> + Clone,
    start_scale: f64,
) -> Option<((f64, f64), f64)> {
    let mut total = 0.0;
    let mut centre = 0.0;
    for (&x, &w) in xs.iter().zip(weights.clone()) {
        total += w;
        centre += w * x;
    }
    if total <= 0.0 {
        return None;
    }
    centre /= total;
    let ys: Vec<(f64, f64)> = xs.iter().zip(weights).map(|(&x, &w)| (x - centre, w)).collect();

    // g(b) = b + sum(w y e^{-y/b}) / sum(w e^{-y/b}); increasing in b.
    let eval = |b: f64| -> (f64, f64, f64) {
        let amax = ys
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(y, _)| -y / b)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &(y, w) in &ys {
            if w == 0.0 {
                continue;
            }
            let e = w * (-y / b - amax).exp();
            s0 += e;
            s1 += e * y;
            s2 += e * y * y;
        }
        let m1 = s1 / s0;
        let var = (s2 / s0 - m1 * m1).max(0.0);
        let g = b + m1;
        let dg = 1.0 + var / (b * b);
        (g, dg, amax + s0.ln())
    };

    let spread = (ys.iter().map(|(y, w)| w * y * y).sum::<f64>() / total).sqrt();
    if !(spread > 1e-12) {
        return Some(((centre, 0.0), total));
    }
    let mut lo = 1e-9 * spread;
    let mut hi = 10.0 * spread;
    while eval(hi).0 < 0.0 {
        hi *= 2.0;
    }
    let mut b = if start_scale.is_finite() && start_scale > lo && start_scale < hi {
        start_scale
    } else {
        0.78 * spread
    };
    for _ in 0..200 {
        let (g, dg, _) = eval(b);
        if g.abs() <= 1e-12 * spread.max(1.0) {
            break;
        }
        if g > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let newton = b - g / dg;
        b = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let (_, _, log_s0) = eval(b);
    let location = centre - b * (log_s0 - total.ln());
    Some(((location, b), total))
}

/// k-means++ seeded Lloyd iterations in one dimension; clusters give the
/// starting locations, scales and weights.
fn kmeans_init(xs: &[f64], k: usize, rng: &mut RngStream) -> Option<Vec<GumbelComponent>> {
    let n = xs.len();
    let mut centres = Vec::with_capacity(k);
    centres.push(xs[rng.rng().gen_range(0..n)]);
    let mut d2: Vec<f64> = xs.iter().map(|&x| (x - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.uniform() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = xs[pick];
        centres.push(c);
        for (d, &x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(xs) {
            let j = (0..k)
                .min_by(|&i, &j| (x - centres[i]).abs().total_cmp(&(x - centres[j]).abs()))
                .expect("k >= 1");
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0usize); k];
        for (&a, &x) in assign.iter().zip(xs) {
            sums[a].0 += x;
            sums[a].1 += 1;
        }
        for (c, &(s, m)) in centres.iter_mut().zip(&sums) {
            if m > 0 {
                *c = s / m as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(&x, _)| x).collect();
        if members.len() < 2 {
            return None;
        }
        let m = members.len() as f64;
        let mean = members.iter().sum::<f64>() / m;
        let sd = (members.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let scale = (sd * 6f64.sqrt() / std::f64::consts::PI).max(1.0);
        comps.push(GumbelComponent {
            location: mean - EULER_GAMMA * scale,
            scale,
            weight: m / n as f64,
        });
    }
    Some(comps)
}

/// Assigns each component to a distinct route, minimising the total absolute
/// gap between component mean and route time (plus `access_overhead`), subject
/// to longer-mean components never taking a route with fewer station hops than
/// a shorter-mean component. Routes receive their component's weight as
/// probability; unmatched routes get 0. Output follows canonical route order
/// (expected time, then platform ids).
pub fn match_components_to_routes(
    components: &[GumbelComponent],
    routes: &[Route],
    access_overhead: f64,
) -> Result<Vec<(Route, f64)>, RoutingError> {
    if components.len() > routes.len() {
        return Err(RoutingError::MoreComponentsThanRoutes {
            components: components.len(),
            routes: routes.len(),
        });
    }
    let mut routes: Vec<Route> = routes.to_vec();
    routes.sort_by(|a, b| (a.expected_time, &a.platforms).cmp(&(b.expected_time, &b.platforms)));
    let mut comps = components.to_vec();
    comps.sort_by(|a, b| a.mean().total_cmp(&b.mean()));

    fn search(
        comps: &[GumbelComponent],
        routes: &[Route],
        overhead: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<usize>,
        cost: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let i = current.len();
        if let Some((b, _)) = best {
            if cost > *b + 1e-9 {
                return;
            }
        }
        if i == comps.len() {
            let better = match best {
                None => true,
                Some((b, assignment)) => cost < *b - 1e-9 || ((cost - *b).abs() <= 1e-9 && current < assignment),
            };
            if better {
                *best = Some((cost, current.clone()));
            }
            return;
        }
        let min_hops = current.last().map_or(0, |&r| routes[r].path_distance);
        for r in 0..routes.len() {
            if used[r] || routes[r].path_distance < min_hops {
                continue;
            }
            let gap = (comps[i].mean() - (f64::from(routes[r].expected_time) + overhead)).abs();
            used[r] = true;
            current.push(r);
            search(comps, routes, overhead, used, current, cost + gap, best);
            current.pop();
            used[r] = false;
        }
    }

    let mut best = None;
    search(
        &comps,
        &routes,
        access_overhead,
        &mut vec![false; routes.len()],
        &mut Vec::new(),
        0.0,
        &mut best,
    );
    let (_, assignment) = best.expect("sorting routes by hops always yields a consistent assignment");
    let total_weight: f64 = comps.iter().map(|c| c.weight).sum();
    let mut probs = vec![0.0; routes.len()];
    for (c, &r) in comps.iter().zip(&assignment) {
        probs[r] = c.weight / total_weight;
    }
    Ok(routes.into_iter().zip(probs).collect())
}

/// Categorical draw over a route-choice entry.
pub fn sample_route<'a>(entry: &'a [(Route, f64)], stream: &mut RngStream) -> &'a Route {
    let u = stream.uniform();
    let mut acc = 0.0;
    let mut last_positive = &entry[0].0;
    for (route, p) in entry {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = route;
        if u < acc {
            return route;
        }
    }
    last_positive
}

/// Route choice per origin-destination pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteChoiceTable {
    entries: BTreeMap<(StationIdx, StationIdx), Vec<(Route, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRow {
    pub origin: String,
    pub destination: String,
    pub route_rank: usize,
    pub probability: f64,
    pub transfers: usize,
    pub expected_time_s: Secs,
    pub platform_sequence: String,
}

impl RouteChoiceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        origin: StationIdx,
        destination: StationIdx,
        entry: Vec<(Route, f64)>,
    ) -> Result<(), RoutingError> {
        let sum: f64 = entry.iter().map(|(_, p)| p).sum();
        if entry.is_empty() || (sum - 1.0).abs() > 1e-9 || entry.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(RoutingError::BadProbabilities(format!("{origin:?}->{destination:?}")));
        }
        self.entries.insert((origin, destination), entry);
        Ok(())
    }

    pub fn get(&self, origin: StationIdx, destination: StationIdx) -> Option<&[(Route, f64)]> {
        self.entries.get(&(origin, destination)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(StationIdx, StationIdx), &Vec<(Route, f64)>)> {
        self.entries.iter()
    }

    pub fn to_rows(&self, net: &Network) -> Vec<RouteRow> {
        let mut rows = Vec::new();
        for (&(o, d), entry) in &self.entries {
            for (rank, (route, p)) in entry.iter().enumerate() {
                rows.push(RouteRow {
                    origin: net.station(o).id.clone(),
                    destination: net.station(d).id.clone(),
                    route_rank: rank + 1,
                    probability: *p,
                    transfers: route.transfers,
                    expected_time_s: route.expected_time,
                    platform_sequence: route.platform_ids(net).join(";"),
                });
            }
        }
        rows
    }

    pub fn from_rows(net: &Network, rows: &[RouteRow]) -> Result<Self, RoutingError> {
        let mut grouped: BTreeMap<(StationIdx, StationIdx), Vec<(usize, Route, f64)>> = BTreeMap::new();
        for row in rows {
            let o = net.station_idx(&row.origin)?;
            let d = net.station_idx(&row.destination)?;
            let platforms = row
                .platform_sequence
                .split(';')
                .map(|id| {
                    net.platform_idx(id.trim())
                        .ok_or_else(|| RoutingError::InvalidRoute(format!("unknown platform `{id}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let route = Route::from_platforms(net, platforms)?;
            if route.origin(net) != o || route.destination(net) != d {
                return Err(RoutingError::InvalidRoute(format!(
                    "route for {}->{} does not connect them",
                    row.origin, row.destination
                )));
            }
            grouped.entry((o, d)).or_default().push((row.route_rank, route, row.probability));
        }
        let mut table = Self::new();
        for ((o, d), mut entry) in grouped {
            entry.sort_by_key(|(rank, _, _)| *rank);
            table.insert(o, d, entry.into_iter().map(|(_, r, p)| (r, p)).collect())?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, net: &Network, path: &Path) -> Result<(), RoutingError> {
        Ok(write_rows(path, &self.to_rows(net))?)
    }

    pub fn read_csv(net: &Network, path: &Path) -> Result<Self, RoutingError> {
        let rows: Vec<RouteRow> = read_rows(path)?;
        Self::from_rows(net, &rows)
    }
}

/// Settings for building a route-choice table from observed durations.
#[derive(Debug, Clone)]
pub struct RouteFitOptions {
    pub k_max: usize,
    pub constraints: CandidateConstraints,
    /// Added to route times before matching (gate walks, waiting).
    pub access_overhead: f64,
    pub gumbel: GumbelFitOptions,
}

impl Default for RouteFitOptions {
    fn default() -> Self {
        Self {
            k_max: 3,
            constraints: CandidateConstraints::default(),
            access_overhead: 0.0,
            gumbel: GumbelFitOptions::default(),
        }
    }
}

/// O-D pairs left out of a fitted table, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPair {
    pub origin: StationIdx,
    pub destination: StationIdx,
    pub reason: String,
}

/// Fits a mixture per O-D pair and matches it to candidate routes. Pairs
/// that cannot be fitted are reported and left to the shortest-route
/// fallback.
pub fn fit_route_choice(
    net: &Network,
    durations: &BTreeMap<(StationIdx, StationIdx), Vec<f64>>,
    opts: &RouteFitOptions,
) -> Result<(RouteChoiceTable, Vec<SkippedPair>), RoutingError> {
    use rayon::prelude::*;
    let fit_one = |(&(o, d), xs): (&(StationIdx, StationIdx), &Vec<f64>)| {
        let result = (|| {
            let routes = enumerate_candidates(net, o, d, opts.constraints)?;
            let k_max = opts.k_max.min(routes.len()).max(1);
            let fit = fit_gumbel_mixture_with(xs, k_max, &opts.gumbel)?;
            match_components_to_routes(&fit.components, &routes, opts.access_overhead)
        })();
        ((o, d), result)
    };
    let fitted: Vec<_> = durations.par_iter().map(fit_one).collect();
    let mut table = RouteChoiceTable::new();
    let mut skipped = Vec::new();
    for ((o, d), result) in fitted {
        match result {
            Ok(entry) => table.insert(o, d, entry)?,
            Err(e @ (RoutingError::InsufficientData { .. } | RoutingError::DegenerateFit(_))) => {
                skipped.push(SkippedPair {
                    origin: o,
                    destination: d,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((table, skipped))
}
