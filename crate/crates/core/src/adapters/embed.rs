use sha2::{Digest, Sha256};

use super::ProviderError;
use crate::text::tokenize;

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

impl<E: EmbeddingProvider + ?Sized> EmbeddingProvider for &E {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
}

/// Deterministic hashed bag-of-tokens vectors, L2-normalized. Entries are non-negative.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfTokens {
    pub dim: usize,
}

impl Default for HashedBagOfTokens {
    fn default() -> Self {
        HashedBagOfTokens { dim: DEFAULT_EMBEDDING_DIM }
    }
}

impl HashedBagOfTokens {
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) % self.dim as u64) as usize
    }
}

impl EmbeddingProvider for HashedBagOfTokens {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if self.dim == 0 {
            return Err(ProviderError::Config("embedding dimension must be positive".into()));
        }
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let e = HashedBagOfTokens::default();
        let a = e.embed("Open the Settings menu").unwrap();
        assert_eq!(a, e.embed("open the settings MENU").unwrap());
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|x| *x >= 0.0));
        assert!(e.embed("").unwrap().iter().all(|x| *x == 0.0));
        assert!(HashedBagOfTokens { dim: 0 }.embed("x").is_err());
    }
}
