//! Text encoders. The hashing encoder is a bag-of-words feature hasher:
//! lowercase, split on non-alphanumeric characters, FNV-1a each token into one
//! of `dim` buckets, count, then L2-normalize.

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("empty text")]
    EmptyText,
    #[error("text has no alphanumeric tokens")]
    NoTokens,
    #[error("encoder returned dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("encoder returned a zero or non-finite vector")]
    Degenerate,
    #[error("encoder transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
}

pub trait TextEncoder: Send + Sync {
    fn identifier(&self) -> String;
    fn dim(&self) -> usize;
    /// Returns a unit-norm vector of length `dim()`.
    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError>;
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }

    /// Raw term-frequency counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        v
    }
}

impl TextEncoder for HashingEncoder {
    fn identifier(&self) -> String {
        format!("hash-fnv1a64-d{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        if text.trim().is_empty() {
            return Err(EncodeError::EmptyText);
        }
        crate::linalg::normalized(self.counts(text)).ok_or(EncodeError::NoTokens)
    }
}

/// Encodes `text`, rejecting empty input and checking the encoder contract.
pub fn embed_text(text: &str, encoder: &dyn TextEncoder) -> Result<Vec<f64>, EncodeError> {
    if text.trim().is_empty() {
        return Err(EncodeError::EmptyText);
    }
    let v = encoder.encode(text)?;
    if v.len() != encoder.dim() {
        return Err(EncodeError::Dimension { expected: encoder.dim(), got: v.len() });
    }
    if !crate::linalg::is_unit(&v, 1e-6) {
        return Err(EncodeError::Degenerate);
    }
    Ok(v)
}
