use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible random stream addressed by a base seed and a path of
/// stream ids (for example `[epoch, sample, view]`).
///
/// The same seed and path always yield the same draws, no matter which
/// other streams were consumed before.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream with `id` appended to the path.
    pub fn derive(&self, id: u64) -> Self {
        let mut path = self.path.clone();
        path.push(id);
        Self { seed: self.seed, path }
    }

    pub fn derive_all(&self, ids: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(ids);
        Self { seed: self.seed, path }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut stream = splitmix64(0x5EED);
        for &id in &self.path {
            stream = splitmix64(stream ^ splitmix64(id));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}
