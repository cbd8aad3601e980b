//! Shared fixtures for the criterion benchmarks.

use geotopic_core::synthetic::{generate, SynthSpec};
use geotopic_core::Corpus;

/// Standard synthetic corpus scaled to `n` posts.
pub fn corpus(n: usize) -> Corpus {
    let spec = SynthSpec {
        n,
        ..SynthSpec::standard()
    };
    generate(&spec).expect("standard spec is valid").0
}
