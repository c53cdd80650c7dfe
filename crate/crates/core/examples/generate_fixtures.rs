//! Writes the bundled city20 and sg121 networks as CSV directories.
//!
//! cargo run --example generate_fixtures -- [OUT_DIR]

use std::path::PathBuf;

use rts_sim::fixtures;

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    for (name, net) in [("city20", fixtures::city20()), ("sg121", fixtures::sg121())] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        net.save(&dir)?;
        println!(
            "{}: {} stations, {} directed edges, {} lines",
            dir.display(),
            net.stations().len(),
            net.edges().len(),
            net.lines().len()
        );
    }
    Ok(())
}
