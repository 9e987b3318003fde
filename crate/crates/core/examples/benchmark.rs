//! Runs the default benchmark once and prints the method table.
//!
//! cargo run --release -p cvgl-core --example benchmark -- [seed] [n_synth]

fn main() -> Result<(), cvgl::Error> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let config = cvgl::eval::BenchmarkConfig {
        seed,
        ..Default::default()
    };
    let report = cvgl::eval::run_benchmark(&config, n, &[])?;
    print!("{}", report.table());
    for (stage, secs) in &report.stage_secs {
        println!("{stage:<16} {secs:8.2} s");
    }
    println!("training graphs: {}", report.n_train_graphs);
    Ok(())
}
