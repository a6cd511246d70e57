//! Content digests shared by the response cache and the mock server.
//!
//! Images are digested over their decoded RGB content rather than their PNG
//! encoding, so the same pixels always hash the same regardless of encoder.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use sha2::{Digest, Sha256};

use crate::frame::Frame;

use super::{GatewayError, RequestKind};

fn feed(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

fn finish(h: Sha256) -> String {
    hex::encode(h.finalize())
}

/// SHA-256 over `(width, height, rgb24 pixels)`.
pub fn rgb_digest(width: u32, height: u32, pixels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(b"rgb24");
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    feed(&mut h, pixels);
    finish(h)
}

/// Digest of one model request's content. Length-prefixing every field keeps
/// distinct requests from colliding by concatenation.
pub fn request_digest(
    kind: RequestKind,
    image_digest: Option<&str>,
    text: Option<&str>,
    choices: Option<&[String]>,
) -> String {
    let mut h = Sha256::new();
    feed(&mut h, kind.as_str().as_bytes());
    match image_digest {
        Some(d) => {
            h.update([1]);
            feed(&mut h, d.as_bytes());
        }
        None => h.update([0]),
    }
    match text {
        Some(t) => {
            h.update([1]);
            feed(&mut h, t.as_bytes());
        }
        None => h.update([0]),
    }
    match choices {
        Some(cs) => {
            h.update([1]);
            h.update((cs.len() as u64).to_le_bytes());
            for c in cs {
                feed(&mut h, c.as_bytes());
            }
        }
        None => h.update([0]),
    }
    finish(h)
}

/// Identifies one cached response.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub endpoint_name: String,
    pub kind: RequestKind,
    pub content_digest: String,
}

impl CacheKey {
    pub fn new(endpoint_name: &str, kind: RequestKind, content_digest: String) -> Self {
        Self {
            endpoint_name: endpoint_name.to_string(),
            kind,
            content_digest,
        }
    }

    /// Hex file stem for the on-disk entry.
    pub fn stem(&self) -> String {
        let mut h = Sha256::new();
        feed(&mut h, self.endpoint_name.as_bytes());
        feed(&mut h, self.kind.as_str().as_bytes());
        feed(&mut h, self.content_digest.as_bytes());
        finish(h)
    }
}

/// An image ready to cross the wire: PNG bytes plus the content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub digest: String,
    pub png: Vec<u8>,
}

impl EncodedImage {
    pub fn from_frame(frame: &Frame) -> Result<Self, GatewayError> {
        let digest = rgb_digest(frame.width(), frame.height(), frame.pixels());
        let mut png = Vec::new();
        frame
            .clone()
            .into_rgb_image()
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| GatewayError::Image(e.to_string()))?;
        Ok(Self { digest, png })
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let img = image::open(path)
            .map_err(|e| GatewayError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let frame = Frame::from_rgb_image(img).map_err(|e| GatewayError::Image(e.to_string()))?;
        Self::from_frame(&frame)
    }

    pub fn base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.png)
    }

    /// Decodes a base64 PNG back into its RGB content digest.
    pub fn digest_of_base64(b64: &str) -> Result<String, GatewayError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| GatewayError::Image(format!("bad base64: {e}")))?;
        let img = image::load_from_memory(&bytes)
            .map_err(|e| GatewayError::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(rgb_digest(w, h, img.as_raw()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_separate_fields() {
        let a = request_digest(RequestKind::Vqa, Some("d"), Some("ab"), Some(&["c".into()]));
        let b = request_digest(RequestKind::Vqa, Some("d"), Some("a"), Some(&["bc".into()]));
        let c = request_digest(RequestKind::Vqa, Some("d"), Some("ab"), None);
        let d = request_digest(
            RequestKind::Caption,
            Some("d"),
            Some("ab"),
            Some(&["c".into()]),
        );
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(
            a,
            request_digest(RequestKind::Vqa, Some("d"), Some("ab"), Some(&["c".into()]))
        );
    }

    #[test]
    fn image_round_trip_keeps_digest() {
        let f = Frame::from_fn(7, 5, |x, y| [x as u8 * 30, y as u8 * 40, 9]).unwrap();
        let img = EncodedImage::from_frame(&f).unwrap();
        assert_eq!(
            EncodedImage::digest_of_base64(&img.base64()).unwrap(),
            img.digest
        );
        let mut g = f.pixels().to_vec();
        g[0] ^= 1;
        assert_ne!(rgb_digest(7, 5, &g), img.digest);
    }

    #[test]
    fn cache_key_stem_depends_on_endpoint() {
        let a = CacheKey::new("vlm-a", RequestKind::Caption, "x".into());
        let b = CacheKey::new("vlm-b", RequestKind::Caption, "x".into());
        assert_ne!(a.stem(), b.stem());
        assert_eq!(a.stem().len(), 64);
    }
}
