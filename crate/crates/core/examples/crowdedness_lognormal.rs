//! Log-normal fit to peak station crowdedness on the 121-station network.
//!
//! cargo run --release --example crowdedness_lognormal -- [N]

use rts_sim::demand::{synthesize_demand, DemandProfile};
use rts_sim::des::RngStream;
use rts_sim::fixtures;
use rts_sim::metrics::fit_lognormal_ppcc;
use rts_sim::simulation::{run_replication, SimConfig};

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(Ok(200_000), |s| s.parse())?;
    let net = fixtures::sg121();
    let records = synthesize_demand(&DemandProfile::monday(&net)?, n, &mut RngStream::new(3, "demand"));
    let report = run_replication(&net, &SimConfig::default(), &records)?;
    let peaks: Vec<f64> = report
        .max_crowdedness
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| f64::from(m))
        .collect();
    let fit = fit_lognormal_ppcc(&peaks)?;
    println!("{} stations with commuters", peaks.len());
    println!("mu {:.3}  sigma {:.3}  ppcc {:.4}", fit.mu, fit.sigma, fit.ppcc);
    Ok(())
}
