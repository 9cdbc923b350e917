//! Hash-based reference embedder.
//!
//! Each lowercased whitespace token seeds a splitmix64 stream with its
//! FNV-1a 64-bit hash; the stream's first `dim` outputs, mapped to [-1, 1),
//! form the token vector. A sentence is the L2-normalized mean of its token
//! vectors. No model weights are involved, so vectors are identical on every
//! platform and run.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stand-in token for sentences without any tokens.
pub const EMPTY_TOKEN: &str = "\u{2205}";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }
}

impl Iterator for SplitMix64 {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Some(z ^ (z >> 31))
    }
}

fn unit_interval(u: u64) -> f64 {
    u as f64 / 9_223_372_036_854_775_808.0 - 1.0
}

/// Embeds one sentence. `dim` must be at least 2.
pub fn reference_embed(sentence: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= 2, "reference embedder needs dim >= 2");
    let lowered = sentence.to_lowercase();
    let mut tokens: Vec<&str> = lowered.split_whitespace().collect();
    if tokens.is_empty() {
        tokens.push(EMPTY_TOKEN);
    }
    let mut acc = vec![0.0f64; dim];
    for tok in &tokens {
        let stream = SplitMix64::new(fnv1a64(tok.as_bytes()));
        for (a, u) in acc.iter_mut().zip(stream) {
            *a += unit_interval(u);
        }
    }
    let count = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    acc.iter().map(|a| (a / norm) as f32).collect()
}
