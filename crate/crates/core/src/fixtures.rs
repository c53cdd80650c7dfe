//! Synthetic networks used by tests, examples and the bundled `fixtures/` data.
//!
//! Both topologies are invented. `sg121` only matches the headline size of
//! the Singapore network (121 stations, 412 directed edges, 7 lines); walk
//! times are flat defaults (60 s gate, 90 s transfer), not measurements.

use std::collections::{BTreeMap, BTreeSet};

use crate::des::Secs;
use crate::network::{
    platform_id, Direction, EdgeRow, LineKind, LineRow, Network, NetworkSource, StationRow, WalkKind, WalkRow,
};

pub const GATE_WALK_S: f64 = 60.0;
pub const TRANSFER_WALK_S: f64 = 90.0;

/// Builds a symmetric network from line station lists.
pub fn build(lines: &[(String, LineKind, Vec<String>)], ride: impl Fn(&str, usize) -> Secs) -> Network {
    Network::from_source(&source(lines, ride)).expect("fixture network is valid")
}

fn source(lines: &[(String, LineKind, Vec<String>)], ride: impl Fn(&str, usize) -> Secs) -> NetworkSource {
    let mut members: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut edges = Vec::new();
    for (line, _, seq) in lines {
        for s in seq {
            members.entry(s).or_default().insert(line);
        }
        for (i, w) in seq.windows(2).enumerate() {
            let t = ride(line, i);
            for (dir, a, b) in [(Direction::Up, &w[0], &w[1]), (Direction::Down, &w[1], &w[0])] {
                edges.push(EdgeRow {
                    line_id: line.clone(),
                    direction: dir,
                    from_station: a.clone(),
                    to_station: b.clone(),
                    ride_time_s: t,
                });
            }
        }
    }
    let stations = members
        .iter()
        .map(|(s, ls)| StationRow {
            station_id: s.to_string(),
            name: format!("{s} station"),
            line_ids: ls.iter().copied().collect::<Vec<_>>().join(";"),
        })
        .collect();
    let mut walks = Vec::new();
    for (s, ls) in &members {
        let plats: Vec<String> = ls
            .iter()
            .flat_map(|l| Direction::BOTH.map(|d| platform_id(s, l, d)))
            .collect();
        for p in &plats {
            walks.push(WalkRow {
                kind: WalkKind::Gate,
                station_id: s.to_string(),
                platform_a: String::new(),
                platform_b: p.clone(),
                mean_s: GATE_WALK_S,
            });
        }
        if ls.len() > 1 {
            for a in &plats {
                for b in plats.iter().filter(|b| *b != a) {
                    walks.push(WalkRow {
                        kind: WalkKind::Transfer,
                        station_id: s.to_string(),
                        platform_a: a.clone(),
                        platform_b: b.clone(),
                        mean_s: TRANSFER_WALK_S,
                    });
                }
            }
        }
    }
    let line_kinds = lines
        .iter()
        .map(|(l, k, _)| LineRow {
            line_id: l.clone(),
            kind: *k,
        })
        .collect();
    NetworkSource {
        stations,
        edges,
        walks,
        line_kinds,
    }
}

fn seq(prefix: &str, range: std::ops::RangeInclusive<u32>) -> Vec<String> {
    range.map(|i| format!("{prefix}{i:02}")).collect()
}

/// Deterministic ride time in `[lo, lo + span)` varying along the line.
fn ride_pattern(line: &str, hop: usize, lo: Secs, span: Secs) -> Secs {
    let salt: u32 = line.bytes().map(u32::from).sum();
    lo + ((hop as u32 * 37 + salt * 11) % span)
}

/// Desk-scale city: two MRT lines crossing at one interchange `X`, 20 stations.
pub fn city20() -> Network {
    let a: Vec<String> = [seq("A", 1..=4), vec!["X".into()], seq("A", 5..=9)].concat();
    let b: Vec<String> = [seq("B", 1..=5), vec!["X".into()], seq("B", 6..=10)].concat();
    build(
        &[("A".into(), LineKind::Mrt, a), ("B".into(), LineKind::Mrt, b)],
        |line, hop| ride_pattern(line, hop, 90, 61),
    )
}

/// 121 stations, 412 directed edges, 7 lines (six MRT, one LRT). Branches
/// are separate line records sharing their trunk stations.
pub fn sg121() -> Network {
    let ns = seq("NS", 1..=20);
    let ew: Vec<String> = [
        seq("EW", 1..=9),
        vec!["NS06".into()],
        seq("EW", 10..=28),
        vec!["NS14".into()],
        seq("EW", 29..=40),
    ]
    .concat();
    let cg: Vec<String> = [ew[..40].to_vec(), seq("CG", 1..=2)].concat();
    let ne: Vec<String> = [
        seq("NE", 1..=4),
        vec!["NS10".into()],
        seq("NE", 5..=9),
        vec!["EW20".into()],
        seq("NE", 10..=13),
        vec!["EW33".into()],
    ]
    .concat();
    let cc: Vec<String> = [
        seq("CC", 1..=5),
        vec!["NS03".into()],
        seq("CC", 6..=11),
        vec!["EW15".into()],
        seq("CC", 12..=17),
        vec!["NE07".into()],
        seq("CC", 18..=23),
        vec!["NS17".into()],
        seq("CC", 24..=29),
        vec!["EW36".into()],
        seq("CC", 30..=34),
        vec!["NE11".into()],
        seq("CC", 35..=36),
    ]
    .concat();
    let ce: Vec<String> = [cc[..40].to_vec(), seq("CE", 1..=2)].concat();
    let lr: Vec<String> = [vec!["NE13".into()], seq("LR", 1..=8)].concat();
    build(
        &[
            ("NS".into(), LineKind::Mrt, ns),
            ("EW".into(), LineKind::Mrt, ew),
            ("CG".into(), LineKind::Mrt, cg),
            ("NE".into(), LineKind::Mrt, ne),
            ("CC".into(), LineKind::Mrt, cc),
            ("CE".into(), LineKind::Mrt, ce),
            ("LR".into(), LineKind::Lrt, lr),
        ],
        |line, hop| {
            if line == "LR" {
                ride_pattern(line, hop, 60, 31)
            } else {
                ride_pattern(line, hop, 90, 91)
            }
        },
    )
}
