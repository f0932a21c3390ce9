//! Writes the end-to-end fixture files into the directory given as the
//! first argument (default `fixtures`).

use newswatch::synth::{fixture, FixtureConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let fx = fixture(&FixtureConfig::default())?;
    fx.write_to(std::path::Path::new(&dir))?;
    println!("wrote fixture to {dir}");
    Ok(())
}
