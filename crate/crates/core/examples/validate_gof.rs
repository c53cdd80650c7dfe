//! Goodness of fit between one replication and thirty pooled ones.
//!
//! cargo run --release --example validate_gof

use rts_sim::demand::{synthesize_demand, DemandProfile};
use rts_sim::des::RngStream;
use rts_sim::fixtures;
use rts_sim::metrics::{summarize, validate_durations, DEFAULT_MIN_OD_DEMAND};
use rts_sim::simulation::{pooled_durations, run_replications, SimConfig};

fn main() -> anyhow::Result<()> {
    let net = fixtures::city20();
    let records = synthesize_demand(&DemandProfile::desk(&net)?, 50_000, &mut RngStream::new(1, "demand"));
    let config = SimConfig {
        capacity_scale: 0.1,
        ..SimConfig::default()
    };
    let pooled = pooled_durations(&run_replications(&net, &config, &records, 30, 4)?);
    let reference = SimConfig { seed: 1_000, ..config };
    let reference = pooled_durations(&run_replications(&net, &reference, &records, 1, 1)?);

    let rows = validate_durations(&net, "reference", &reference, &pooled, DEFAULT_MIN_OD_DEMAND)?;
    println!("{:>4} {:>4} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}", "o", "d", "n", "BC", "PPCC", "F", "C", "Q");
    for r in &rows {
        println!(
            "{:>4} {:>4} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            r.origin, r.destination, r.n_empirical, r.bc, r.ppcc, r.f, r.c, r.q
        );
    }
    let s = summarize("reference", &rows);
    println!("{} pairs, mean BC {:.4}, mean PPCC {:.4}", s.od_pairs, s.mean_bc, s.mean_ppcc);
    Ok(())
}
