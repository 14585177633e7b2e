use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams used for different purposes apart even when the
/// numeric keys coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Augment = 0x4155_4721,
    Shuffle = 0x5348_5546,
    Synthetic = 0x5359_4e54,
    Probe = 0x5052_4f42,
    Model = 0x4d4f_444c,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a root seed and a key path into a 64-bit stream seed.
pub fn derive_seed(root: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ stream as u64);
    for &k in path {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

/// Counter-based generator for `(root, stream, path)`.
pub fn stream_rng(root: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    let h = derive_seed(root, stream, path);
    let mut seed = [0u8; 32];
    let mut s = h;
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Address of the randomness used to augment one view of one sample.
///
/// Distinct `(sample_id, epoch, view)` triples give independent streams; the
/// same triple always reproduces the same draws, on any worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngPath {
    pub seed: u64,
    pub sample_id: u64,
    pub epoch: u64,
    pub view: u64,
}

impl RngPath {
    pub fn new(seed: u64, sample_id: u64, epoch: u64, view: u64) -> Self {
        Self { seed, sample_id, epoch, view }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, Stream::Augment, &[self.sample_id, self.epoch, self.view])
    }
}
