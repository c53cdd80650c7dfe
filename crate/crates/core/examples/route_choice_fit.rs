//! Fits route-choice probabilities from simulated durations, then reruns the
//! day with the fitted table.
//!
//! cargo run --release --example route_choice_fit

use rts_sim::demand::{synthesize_demand, DemandProfile};
use rts_sim::des::RngStream;
use rts_sim::fixtures;
use rts_sim::routing::{fit_route_choice, RouteFitOptions};
use rts_sim::simulation::{pooled_durations, run_replication, SimConfig};

fn main() -> anyhow::Result<()> {
    let net = fixtures::city20();
    let records = synthesize_demand(&DemandProfile::desk(&net)?, 50_000, &mut RngStream::new(1, "demand"));
    let config = SimConfig {
        capacity_scale: 0.1,
        ..SimConfig::default()
    };
    let observed = pooled_durations(&[run_replication(&net, &config, &records)?]);

    let opts = RouteFitOptions {
        access_overhead: 120.0,
        ..RouteFitOptions::default()
    };
    let (table, skipped) = fit_route_choice(&net, &observed, &opts)?;
    println!("fitted {} O-D pairs, skipped {}", table.len(), skipped.len());
    for ((o, d), entry) in table.iter().take(5) {
        println!("{} -> {}", net.station(*o).id, net.station(*d).id);
        for (route, p) in entry {
            println!("  {:.3}  {}", p, route.platform_ids(&net).join(" "));
        }
    }

    let with_table = SimConfig {
        routes: Some(table.into()),
        ..config
    };
    let report = run_replication(&net, &with_table, &records)?;
    println!("mean duration with fitted routes {:.1} s", report.mean_duration);
    Ok(())
}
