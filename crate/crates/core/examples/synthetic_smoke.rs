//! Trains the reduced model on a synthetic corpus and prints test metrics.
//!
//! Usage: `cargo run --release --example synthetic_smoke [combined|text-only|codes-only] [seed]`

use std::time::Instant;

use landscaper::nn::ModelVariant;
use landscaper::synth::{run_smoke, SmokeConfig};

fn main() -> landscaper::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: ModelVariant = args.next().as_deref().unwrap_or("combined").parse()?;
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let start = Instant::now();
    let run = run_smoke(&SmokeConfig::reduced(variant, seed), |s| {
        println!(
            "epoch {} loss {:.5} validation AP {:?} ({:.1?})",
            s.epoch,
            s.train_loss,
            s.validation_ap,
            start.elapsed()
        );
    })?;
    println!("dataset {:?} positives {:?}", run.dataset.sizes(), run.dataset.positives);
    println!(
        "test AP {:.4} F1 {:.4} (best epoch {}, {:.1?})",
        run.test.average_precision,
        run.test.f1,
        run.best_epoch,
        start.elapsed()
    );
    Ok(())
}
