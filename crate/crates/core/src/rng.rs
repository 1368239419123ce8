//! Reproducible random streams.
//!
//! Every Monte Carlo path draws from its own ChaCha8 stream. A stream is
//! identified by a master seed, a subsystem label and a path index, so the
//! numbers a path sees do not depend on how paths are scheduled over worker
//! threads. Separate labels keep the chain clock and the Brownian noise
//! statistically independent by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Label of the stream feeding the Poisson clock of the coupled chains.
pub const CHAIN_CLOCK: &str = "chain-clock";
/// Label of the stream feeding Brownian increments.
pub const BROWNIAN: &str = "brownian";
/// Label of the stream feeding Brownian-bridge refinements at jump epochs.
pub const BRIDGE: &str = "brownian-bridge";
/// Label of the stream feeding plain (uncoupled) chain simulation.
pub const GILLESPIE: &str = "gillespie";

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derives a subsystem seed from the master seed by labeled hashing.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(label))
}

/// Identifies one path's stream within a subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }

    /// Opens the stream for `label`. The ChaCha key comes from the labeled
    /// seed and the path index selects the ChaCha stream, so two keys only
    /// share numbers if they are equal.
    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, label));
        rng.set_stream(self.path);
        rng
    }
}
