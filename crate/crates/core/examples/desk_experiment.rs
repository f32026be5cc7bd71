//! Runs the default desk experiment and prints the report as JSON.

use energy_ood::pipeline::{run_experiment, temperature_sweep, ExperimentConfig};

fn main() -> energy_ood::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path).expect("read config"))?,
        None => ExperimentConfig::default(),
    };
    let out = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&out.report)?);
    let data = energy_ood::bench::generate(&cfg.bench)?;
    for row in temperature_sweep(
        &out.pretrained,
        &data.test_in,
        &data.test_out,
        &[1.0, 2.0, 5.0, 10.0, 100.0, 1000.0],
        cfg.tpr,
    )? {
        println!("{}", row.csv_row());
    }
    Ok(())
}
