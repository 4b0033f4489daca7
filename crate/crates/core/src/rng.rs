//! Deterministic random-stream derivation.
//!
//! Every random draw in a run descends from the single experiment seed. A
//! [`SeedTree`] node is split into children by a fixed `(label, index)` pair,
//! so each consumer (parameter sampling, a single rollout, bandit exploration,
//! ...) owns an independent stream whose contents do not depend on how many
//! threads are used or in which order work is scheduled.
//!
//! Labels used by the pipeline:
//!
//! | label        | index            | consumer                               |
//! |--------------|------------------|----------------------------------------|
//! | `init`       | 0                | initial policy weights                 |
//! | `warm`       | 0                | warm-start iteration                   |
//! | `iter`       | iteration number | one generator call                     |
//! | `params`     | 0                | parameters drawn from the source dist  |
//! | `rollout`    | batch position   | one trajectory                         |
//! | `bandit`     | 0                | Thompson-sampling perturbations        |
//! | `learn`      | round            | a bandit learning-phase trajectory     |
//! | `candidates` | 0                | phase-2 candidate parameters           |
//! | `selected`   | candidate index  | a phase-2 output trajectory            |
//! | `surface`    | iteration number | ground-truth surface evaluation        |
//! | `sweep`      | grid index       | performance sweep point                |
//! | `point`      | grid index       | one surface point                      |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree {
            key: splitmix64(seed),
        }
    }

    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        let k = splitmix64(self.key ^ fnv1a(label));
        SeedTree {
            key: splitmix64(k.wrapping_add(splitmix64(index))),
        }
    }

    pub fn stream(&self) -> Stream {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
