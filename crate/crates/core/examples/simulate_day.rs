//! One simulated day on the 20-station city with 50,000 synthetic journeys.
//!
//! cargo run --release --example simulate_day -- [N] [CAPACITY_SCALE]

use std::time::Instant;

use rts_sim::demand::{synthesize_demand, DemandProfile};
use rts_sim::des::RngStream;
use rts_sim::fixtures;
use rts_sim::simulation::{run_replication, SimConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(50_000), |s| s.parse())?;
    let capacity_scale: f64 = args.next().map_or(Ok(0.1), |s| s.parse())?;

    let net = fixtures::city20();
    let profile = DemandProfile::desk(&net)?;
    let records = synthesize_demand(&profile, n, &mut RngStream::new(1, "demand"));
    let config = SimConfig {
        seed: 7,
        capacity_scale,
        ..SimConfig::default()
    };
    let started = Instant::now();
    let report = run_replication(&net, &config, &records)?;
    println!("simulated {n} journeys in {:.2?}", started.elapsed());
    println!("trains dispatched   {}", report.trains_dispatched);
    println!("departed            {}", report.departed);
    println!("stranded            {}", report.stranded);
    println!("mean duration       {:.1} s", report.mean_duration);
    println!("commuters missed    {}", report.commuters_missed);
    println!("missed-train events {}", report.missed_events);
    let busiest = report
        .max_crowdedness
        .iter()
        .enumerate()
        .max_by_key(|(_, m)| **m)
        .map(|(s, m)| (net.stations()[s].id.as_str(), *m));
    if let Some((id, m)) = busiest {
        println!("most crowded        {id} ({m} commuters)");
    }
    Ok(())
}
