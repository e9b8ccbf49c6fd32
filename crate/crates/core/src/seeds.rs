//! Deterministic seed streams for replicates.

/// Which random stream a seed feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Queries = 1,
    Defense = 2,
    Attack = 3,
    Test = 4,
    Validation = 5,
    Calibration = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(state: u64, word: u64) -> u64 {
    splitmix64(state ^ splitmix64(word))
}

/// Seed for one `(n, U_n, replicate)` cell and role. The defense is not part
/// of the key, so every defense sees the same queries and test points.
pub fn replicate_seed(master: u64, n: usize, budget: f64, replicate: usize, role: Role) -> u64 {
    [n as u64, budget.to_bits(), replicate as u64, role as u64].into_iter().fold(splitmix64(master), mix)
}
