//! Seeded random-number substreams.
//!
//! All randomness in the crate flows from a single 64-bit root seed. A job
//! identified by a textual label (for example `"fit/uni_spatial/GSV"` or
//! `"predict/stand/S017"`) draws from
//!
//! ```text
//! ChaCha20(seed_from_u64(root_seed)) with stream = fnv1a64(label)
//! ```
//!
//! ChaCha streams with distinct ids are independent, so jobs can run in any
//! order or in parallel and still reproduce bit-for-bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a label.
pub fn stream_id(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Generator for the substream `label` under `seed`.
pub fn substream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    rng
}

/// Child root seed for a nested job (first word of its substream).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    substream(seed, label).next_u64()
}
