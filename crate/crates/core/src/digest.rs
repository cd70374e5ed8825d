//! Content digests for the artifact provenance chain.
//!
//! Each stage artifact records the SHA-256 of the upstream files it consumed;
//! consumers recompute and refuse to run on a mismatch, so a tampered or
//! regenerated upstream file cannot silently feed a downstream stage.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex-encoded SHA-256 of a file's exact bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Verify that `path` still hashes to `expected`; `artifact` names the file
/// in the error message.
pub fn verify_digest(path: &Path, expected: &str, artifact: &str) -> Result<()> {
    let actual = file_digest(path)?;
    if actual != expected {
        return Err(PipelineError::DigestMismatch {
            artifact: artifact.to_string(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        // SHA-256 of the empty string, a published constant.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_ne!(sha256_hex(b"a"), sha256_hex(b"b"));
    }

    #[test]
    fn verify_rejects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.jsonl");
        fs::write(&path, b"line one\n").unwrap();
        let digest = file_digest(&path).unwrap();
        verify_digest(&path, &digest, "artifact").unwrap();

        fs::write(&path, b"line one tampered\n").unwrap();
        let err = verify_digest(&path, &digest, "artifact").unwrap_err();
        assert!(matches!(err, PipelineError::DigestMismatch { .. }));
    }
}
