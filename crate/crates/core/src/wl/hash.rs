use sha2::{Digest, Sha256};

/// A 128-bit history token (truncated SHA-256).
pub type Token = u128;

/// Incremental builder for tokens. Every field is length- or tag-prefixed so
/// distinct inputs cannot collide by concatenation.
pub struct TokenHasher {
    inner: Sha256,
}

impl TokenHasher {
    pub fn new(domain: &str) -> Self {
        let mut inner = Sha256::new();
        inner.update((domain.len() as u64).to_le_bytes());
        inner.update(domain.as_bytes());
        TokenHasher { inner }
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn token(&mut self, t: Token) -> &mut Self {
        self.inner.update(t.to_le_bytes());
        self
    }

    /// Floats hash by bit pattern with `-0.0` folded onto `0.0`.
    pub fn f64(&mut self, v: f64) -> &mut Self {
        let v = if v == 0.0 { 0.0 } else { v };
        self.u64(v.to_bits())
    }

    /// Length-prefixed token list, hashed in the given order.
    pub fn tokens(&mut self, ts: &[Token]) -> &mut Self {
        self.u64(ts.len() as u64);
        for &t in ts {
            self.token(t);
        }
        self
    }

    pub fn finish(self) -> Token {
        let out = self.inner.finalize();
        let mut b = [0u8; 16];
        b.copy_from_slice(&out[..16]);
        u128::from_le_bytes(b)
    }
}

/// Hash of the sorted multiset `ts` (sorted in place).
pub fn multiset(domain: &str, ts: &mut [Token]) -> Token {
    ts.sort_unstable();
    let mut h = TokenHasher::new(domain);
    h.tokens(ts);
    h.finish()
}
