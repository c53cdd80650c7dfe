//! Monday-shaped demand: peak eligibility, population scaling and reshaping.
//!
//! cargo run --release --example demand_reshape -- [PHI]

use rts_sim::demand::{
    eligible_fraction, reshape_demand, scale_population, synthesize_demand, DemandProfile, MONDAY_JOURNEYS,
};
use rts_sim::des::RngStream;
use rts_sim::fixtures;

fn hourly(records: &[rts_sim::JourneyRecord]) -> [usize; 24] {
    let mut h = [0; 24];
    for r in records {
        h[(r.tap_in / 3600).min(23) as usize] += 1;
    }
    h
}

fn main() -> anyhow::Result<()> {
    let phi: f64 = std::env::args().nth(1).map_or(Ok(0.2), |s| s.parse())?;
    let net = fixtures::sg121();
    let monday = synthesize_demand(&DemandProfile::monday(&net)?, MONDAY_JOURNEYS, &mut RngStream::new(0, "monday"));
    println!("{} journeys, eligible fraction {:.4}", monday.len(), eligible_fraction(&monday));

    let scaled = scale_population(&monday, 3_000_000, &mut RngStream::new(0, "scale-population"))?;
    let reshaped = reshape_demand(&scaled, phi, &mut RngStream::new(0, "reshape"))?;
    println!("scaled to {}, eligible after phi={phi}: {:.4}", scaled.len(), eligible_fraction(&reshaped));
    println!("{:>4} {:>9} {:>9}", "hour", "before", "after");
    for (hour, (b, a)) in hourly(&scaled).iter().zip(hourly(&reshaped)).enumerate() {
        if *b > 0 || a > 0 {
            println!("{hour:>4} {b:>9} {a:>9}");
        }
    }
    Ok(())
}
