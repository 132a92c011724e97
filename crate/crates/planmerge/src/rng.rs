//! Deterministic random streams.
//!
//! Every source of randomness in a run is a ChaCha12 stream derived from the
//! run seed plus a stream label. Streams never share state, so adding draws to
//! one agent cannot shift the values another agent sees. All helpers consume a
//! fixed number of 64-bit words per call; draw counts are part of the public
//! contract because reproducibility depends on them.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Stream labels. The numeric values are arbitrary but frozen: changing them
/// changes every simulation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// World construction: node attributes, operator specialties, initial
    /// plans, and the pre-run shakedown executions.
    Init,
    /// Per-node runtime stream, indexed by agent id.
    Node,
    /// Per-operator runtime stream, indexed by agent id.
    Operator,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 0x696e_6974,
            StreamKind::Node => 0x6e6f_6465,
            StreamKind::Operator => 0x6f70_6572,
        }
    }
}

/// SplitMix64 finalizer, used only to spread seed material before keying
/// ChaCha. Stable across platforms by construction.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the stream for `(seed, kind, index)`.
pub fn stream(seed: u64, kind: StreamKind, index: u64) -> SimRng {
    let a = splitmix64(seed ^ kind.tag());
    let b = splitmix64(a ^ index.wrapping_mul(0xd134_2543_de82_ef95));
    SimRng::seed_from_u64(b)
}

/// Uniform index in `0..n`. Consumes exactly one 64-bit word.
///
/// Uses the widening-multiply reduction; the bias is below `n / 2^64` and is
/// irrelevant at the scales used here, while keeping the one-word contract
/// that rejection sampling would break.
pub fn draw_index(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n >= 1);
    let x = rng.next_u64();
    ((x as u128 * n as u128) >> 64) as usize
}

/// Uniform value in `[0, 1)`. Consumes exactly one 64-bit word.
pub fn draw_unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Normal sample via the Box-Muller transform. Consumes exactly two 64-bit
/// words. `libm` supplies ln and cos so results are bit-identical across
/// platforms regardless of the host libm.
pub fn draw_normal(rng: &mut impl RngCore, mean: f64, stddev: f64) -> f64 {
    let u1 = 1.0 - draw_unit(rng); // (0, 1]; keeps ln finite
    let u2 = draw_unit(rng);
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let z = r * libm::cos(std::f64::consts::TAU * u2);
    mean + stddev * z
}
