use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Seeded ChaCha20 generator on an explicit stream, so independent
/// consumers of one seed never share draws.
pub fn seeded(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
