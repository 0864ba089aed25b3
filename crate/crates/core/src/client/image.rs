//! Image references: resolution to wire form and content hashing.

use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use sha2::{Digest, Sha256};

use super::ClientError;

/// An image reference resolved for transmission and hashing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedImage {
    /// Value for the `image_url.url` field.
    pub url: String,
    /// SHA-256 of the image bytes (or of the URL for remote images, which
    /// are not fetched).
    pub content_hash: [u8; 32],
}

/// Media type from leading magic bytes.
pub fn sniff_media_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        [b'B', b'M', ..] => "image/bmp",
        _ => "application/octet-stream",
    }
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn resolve_image(reference: &str) -> Result<ResolvedImage, ClientError> {
    if let Some(rest) = reference.strip_prefix("data:") {
        let (_, payload) = rest
            .split_once(";base64,")
            .ok_or_else(|| ClientError::Image {
                path: reference.chars().take(48).collect(),
                message: "data URI is not base64-encoded".into(),
            })?;
        let bytes = BASE64
            .decode(payload.trim())
            .map_err(|e| ClientError::Image {
                path: reference.chars().take(48).collect(),
                message: e.to_string(),
            })?;
        return Ok(ResolvedImage {
            url: reference.to_string(),
            content_hash: sha256(&bytes),
        });
    }
    if reference.starts_with("http://") || reference.starts_with("https://") {
        let mut h = Sha256::new();
        h.update(b"url:");
        h.update(reference.as_bytes());
        return Ok(ResolvedImage {
            url: reference.to_string(),
            content_hash: h.finalize().into(),
        });
    }
    let path = PathBuf::from(reference.strip_prefix("file://").unwrap_or(reference));
    let bytes = std::fs::read(&path).map_err(|e| ClientError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(ResolvedImage {
        url: format!(
            "data:{};base64,{}",
            sniff_media_type(&bytes),
            BASE64.encode(&bytes)
        ),
        content_hash: sha256(&bytes),
    })
}

/// Content hash of an image without building its wire form.
pub fn image_content_hash(reference: &str) -> Result<[u8; 32], ClientError> {
    if reference.starts_with("data:")
        || reference.starts_with("http://")
        || reference.starts_with("https://")
    {
        return resolve_image(reference).map(|r| r.content_hash);
    }
    let path = reference.strip_prefix("file://").unwrap_or(reference);
    std::fs::read(path)
        .map(|b| sha256(&b))
        .map_err(|e| ClientError::Image {
            path: path.to_string(),
            message: e.to_string(),
        })
}
