use serde::{Deserialize, Serialize};

use super::GroundingError;
use crate::worldsim::normalize_name;

pub const EMBED_DIM: usize = 64;

/// Unit-norm text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Accepts a stored vector, renormalizing it; `None` if the length is wrong
    /// or the vector is zero.
    pub fn from_vec(v: Vec<f64>) -> Option<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (v.len() == EMBED_DIM && n > 0.0 && n.is_finite()).then(|| Embedding(v.into_iter().map(|x| x / n).collect()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed character-trigram hashing into [`EMBED_DIM`] buckets.
///
/// Case-insensitive; `_` and runs of whitespace are a single space.
pub fn embed_text(label: &str) -> Result<Embedding, GroundingError> {
    let norm = normalize_name(label);
    if norm.is_empty() {
        return Err(GroundingError::EmptyLabel);
    }
    let padded: Vec<char> = format!(" {norm} ").chars().collect();
    let mut v = vec![0.0f64; EMBED_DIM];
    let mut buf = [0u8; 12];
    for w in padded.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    }
    if v.iter().all(|&x| x == 0.0) {
        // every trigram cancelled; fall back to the whole-string bucket
        v[(fnv1a(norm.as_bytes()) % EMBED_DIM as u64) as usize] = 1.0;
    }
    Ok(Embedding::from_vec(v).expect("non-zero vector"))
}
