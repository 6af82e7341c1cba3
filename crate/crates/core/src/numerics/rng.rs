use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Counter-based deterministic random stream.
///
/// The output sequence is a pure function of `(seed, counter)`: the stream is
/// a ChaCha8 keystream keyed by `seed` and positioned at word `counter`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Re-creates a stream at an arbitrary position.
    pub fn at(seed: u64, counter: u64) -> Self {
        let mut s = Self::new(seed);
        s.inner.set_word_pos(u128::from(counter));
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    /// Child stream whose seed mixes this stream's seed with `label`.
    ///
    /// Independent of how much of the parent has been consumed.
    pub fn derive(&self, label: &str) -> RngStream {
        derive_stream(self, label.as_bytes())
    }
}

pub(crate) fn derive_stream(parent: &RngStream, label: &[u8]) -> RngStream {
    let mut h = Sha256::new();
    h.update(parent.seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label);
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    RngStream::new(u64::from_le_bytes(bytes))
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
