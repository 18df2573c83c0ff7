//! Writes a deterministic synthetic image corpus, for trying out the CLI
//! without any image data at hand.
//!
//! Usage: cargo run -p phsar-core --example gen_corpus -- <dir> <count> [size] [seed]

use phsar_core::synth::write_corpus;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: gen_corpus <dir> <count> [size] [seed]");
        std::process::exit(2);
    }
    let dir = std::path::PathBuf::from(&args[1]);
    let count: usize = args[2].parse().expect("count");
    let size: usize = args.get(3).map_or(160, |s| s.parse().expect("size"));
    let seed: u64 = args.get(4).map_or(0, |s| s.parse().expect("seed"));
    let paths = write_corpus(&dir, count, size, size, seed).expect("write corpus");
    eprintln!("wrote {} images of {size}x{size} to {}", paths.len(), dir.display());
}
