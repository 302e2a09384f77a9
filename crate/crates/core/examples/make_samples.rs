//! Writes the bundled synthetic price series under `data/samples/`.
//!
//! cargo run --release -p ntband --example make_samples

use std::fs::File;
use std::path::Path;

use ntband::market_data::{synthesize_series, ContractMeta, SyntheticSeries};
use ntband::models::Coupling;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/samples");
    std::fs::create_dir_all(&dir)?;
    let meta = ContractMeta::new(1000.0)?;
    let samples = [
        ("trend_linear.csv", 0.1, Coupling::Identity, 7),
        ("trend_tanh.csv", 0.3, Coupling::Tanh2, 8),
    ];
    for (name, beta, coupling, seed) in samples {
        let spec = SyntheticSeries {
            beta,
            decay: 0.05,
            sigma: 1.0,
            coupling,
            n_steps: 9_999,
            start_price: 500.0,
            seed,
        };
        let raw = synthesize_series(&spec, meta)?;
        let series = raw.with_prices(raw.prices().iter().map(|p| (p * 100.0).round() / 100.0).collect())?;
        let (lo, hi) = series
            .prices()
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        series.write_csv(File::create(dir.join(name))?)?;
        println!("{name}: {} rows, price range [{lo:.2}, {hi:.2}]", series.len());
    }
    Ok(())
}
