//! Library surface of the experiment harness; the binary in `main.rs` is a
//! thin argument-parsing wrapper around these runners.

pub mod config;
pub mod csvio;
pub mod runner;
pub mod synthetic;

/// Configure the global worker pool from the `DLRA_WORKERS` environment
/// variable (default: available parallelism). Safe to call more than once;
/// later calls are ignored.
pub fn init_workers() {
    if let Ok(value) = std::env::var("DLRA_WORKERS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
