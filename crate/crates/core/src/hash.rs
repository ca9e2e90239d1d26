use sha2::{Digest, Sha256};

/// Incremental SHA-256 over little-endian numeric data, rendered as hex.
#[derive(Default, Clone)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update(b);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(&(s.len() as u64).to_le_bytes()).bytes(s.as_bytes())
    }

    pub fn f64s(mut self, v: &[f64]) -> Self {
        for x in v {
            self.0.update(x.to_le_bytes());
        }
        self
    }

    pub fn f32s(mut self, v: &[f32]) -> Self {
        for x in v {
            self.0.update(x.to_le_bytes());
        }
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn hex(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Fingerprint::new().bytes(bytes).hex()
}
