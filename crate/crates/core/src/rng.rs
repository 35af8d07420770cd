//! Counter-based random streams.
//!
//! Every independent unit of Monte Carlo work (a trajectory, a block of
//! samples) owns the ChaCha stream selected by its index under a key derived
//! from the master seed. Results therefore do not depend on execution order
//! or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
