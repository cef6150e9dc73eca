//! Shared fixtures for the criterion benchmarks in `benches/`.

use instasplat::pipeline::{synth_benchmark, SynthBenchmark};
use instasplat::synth::{Corruption, SynthSpec};

/// The default five-object scene with permuted, split and dropped masks.
pub fn corrupted_scene(seed: u64) -> SynthBenchmark {
    let spec = SynthSpec {
        corruption: Corruption {
            permute_ids: true,
            split_prob: 0.3,
            drop_prob: 0.1,
            dilation_px: 0,
        },
        seed,
        ..SynthSpec::default()
    };
    synth_benchmark(&spec).expect("default spec is valid")
}
