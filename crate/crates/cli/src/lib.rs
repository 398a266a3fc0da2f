//! Command-line orchestration of the transport pipeline.

pub mod commands;
pub mod config;

/// Caps the global rayon pool at `TRANSPORTLAB_THREADS` when it is set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("TRANSPORTLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("TRANSPORTLAB_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            anyhow::bail!("TRANSPORTLAB_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
