//! Named random streams derived from a single root seed.
//!
//! Every consumer of randomness asks for a stream by (tag, indices), so a
//! particle's perturbation at a given iteration does not depend on how many
//! other draws happened before it or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    DataNoise,
    InitialEnsemble,
    Perturbations,
    ModelErrorSampling,
    Study,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::DataNoise => 0x6461_7461,
            StreamTag::InitialEnsemble => 0x696e_6974,
            StreamTag::Perturbations => 0x7065_7274,
            StreamTag::ModelErrorSampling => 0x6d65_7272,
            StreamTag::Study => 0x7374_7564,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root seed plus the tag of one sub-stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    pub root: u64,
    pub tag: StreamTag,
}

impl SeedStream {
    pub fn new(root: u64, tag: StreamTag) -> Self {
        Self { root, tag }
    }

    /// Independent generator for the given index path.
    pub fn rng(&self, indices: &[u64]) -> StreamRng {
        let mut h = splitmix(self.root ^ splitmix(self.tag.code()));
        for &i in indices {
            h = splitmix(h ^ splitmix(i.wrapping_add(0x5851_f42d_4c95_7f2d)));
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}
