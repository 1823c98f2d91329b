use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Octave counts for the position and direction encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            position_frequencies: 6,
            direction_frequencies: 4,
        }
    }
}

impl EncodingConfig {
    pub fn position_dim(&self) -> usize {
        encoded_len(self.position_frequencies)
    }

    pub fn direction_dim(&self) -> usize {
        encoded_len(self.direction_frequencies)
    }
}

pub fn encoded_len(frequencies: usize) -> usize {
    3 + 6 * frequencies
}

/// `γ_L(v)`: the raw vector followed by `sin(2ᵏπv), cos(2ᵏπv)` blocks for
/// `k = 0..L`, each block holding the three components.
pub fn positional_encode(v: &[f64; 3], frequencies: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(frequencies)];
    encode_into(v, frequencies, &mut out);
    out
}

pub(crate) fn encode_into(v: &[f64; 3], frequencies: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_len(frequencies));
    out[..3].copy_from_slice(v);
    let mut scale = PI;
    for k in 0..frequencies {
        let base = 3 + 6 * k;
        for c in 0..3 {
            let (s, co) = (scale * v[c]).sin_cos();
            out[base + c] = s;
            out[base + 3 + c] = co;
        }
        scale *= 2.0;
    }
}
