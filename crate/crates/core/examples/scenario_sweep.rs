//! Desk-scale population sweeps: crowd limits (A) and demand reshaping (B).
//!
//! cargo run --release --example scenario_sweep -- [a|b]

use rts_sim::demand::{synthesize_demand, DemandProfile};
use rts_sim::des::RngStream;
use rts_sim::fixtures;
use rts_sim::scenarios::{critical_points, run_scenario_a, run_scenario_b, ScenarioSpec};
use rts_sim::simulation::SimConfig;

fn main() -> anyhow::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "a".into());
    let net = fixtures::city20();
    let base = synthesize_demand(&DemandProfile::desk(&net)?, 50_000, &mut RngStream::new(1, "demand"));
    let spec = ScenarioSpec::desk();
    let template = SimConfig::default();

    if kind == "b" {
        let cells = run_scenario_b(&net, &base, &spec, &template)?;
        println!("{:>10} {:>5} {:>12} {:>14} {:>14}", "population", "phi", "mean_s", "missed_events", "delta_missed");
        for r in &cells {
            println!(
                "{:>10} {:>5.2} {:>12.1} {:>14.0} {:>14.0}",
                r.cell.population,
                r.cell.phi.unwrap_or(0.0),
                r.cell.mean_duration,
                r.cell.missed_events,
                r.delta_missed_events
            );
        }
        return Ok(());
    }
    let cells = run_scenario_a(&net, &base, &spec, &template)?;
    println!("{:>10} {:>5} {:>12} {:>10} {:>14} {:>9}", "population", "psi", "mean_s", "missed", "missed_events", "rejected");
    for c in &cells {
        println!(
            "{:>10} {:>5} {:>12.1} {:>10.0} {:>14.0} {:>9.0}",
            c.population, c.psi.to_string(), c.mean_duration, c.commuters_missed, c.missed_events, c.rejected
        );
    }
    for row in critical_points(&cells) {
        let knee = row.knee_population.map_or("none".to_string(), |p| p.to_string());
        println!("critical point {} {}: {knee}", row.setting, row.indicator);
    }
    Ok(())
}
