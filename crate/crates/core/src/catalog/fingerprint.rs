use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

/// Size and md5 digest of a serialized spec.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub byte_size: u64,
    pub md5_hex: String,
}

pub fn fingerprint(bytes: &[u8]) -> Fingerprint {
    let digest = Md5::digest(bytes);
    let md5_hex = digest.iter().map(|b| format!("{b:02x}")).collect();
    Fingerprint { byte_size: bytes.len() as u64, md5_hex }
}

/// Outcome of comparing two fingerprints, recording which test decided it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    /// Sizes differ; the digests were never consulted.
    SizeDiffers,
    /// Sizes match but digests differ.
    Md5Differs,
    Unchanged,
}

impl Comparison {
    pub fn changed(self) -> bool {
        self != Comparison::Unchanged
    }

    pub fn md5_consulted(self) -> bool {
        self != Comparison::SizeDiffers
    }
}

/// Size first; digests only when sizes are equal.
pub fn compare_fingerprints(old: &Fingerprint, new: &Fingerprint) -> Comparison {
    if old.byte_size != new.byte_size {
        Comparison::SizeDiffers
    } else if old.md5_hex != new.md5_hex {
        Comparison::Md5Differs
    } else {
        Comparison::Unchanged
    }
}

pub fn specs_changed(old: &Fingerprint, new: &Fingerprint) -> bool {
    compare_fingerprints(old, new).changed()
}
