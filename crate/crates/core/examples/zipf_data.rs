//! Write the default synthetic Zipf interaction log to stdout.
//!
//! Run: `cargo run --example zipf_data > zipf.tsv`

use fairrank::synthetic::{to_tsv, zipf_interactions, ZipfSpec};

fn main() {
    print!("{}", to_tsv(&zipf_interactions(&ZipfSpec::default())));
}
