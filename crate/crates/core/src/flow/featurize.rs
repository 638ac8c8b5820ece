//! Surrogate image featurizer: non-overlapping patches through a fixed
//! seed-derived linear map. Real encoder embeddings can be ingested from
//! files instead; this keeps the conditioning path self-contained.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mat::Mat;
use super::{ConditionSource, ConditionTokens, FlowError};
use crate::voxel::BinaryMask;

/// Grayscale raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn constant(width: u32, height: u32, value: f64) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        GrayImage {
            width: mask.width,
            height: mask.height,
            pixels: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Minimal binary PGM (P5, maxval 255) reader.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, FlowError> {
        let mut fields = Vec::new();
        let mut pos = 0usize;
        while fields.len() < 4 && pos < bytes.len() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(&bytes[start..pos]);
        }
        if fields.len() < 4 || fields[0] != b"P5" {
            return Err(FlowError::Format("not a binary PGM (P5)".into()));
        }
        let parse = |b: &[u8]| -> Result<u32, FlowError> {
            std::str::from_utf8(b)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FlowError::Format("bad PGM header field".into()))
        };
        let width = parse(fields[1])?;
        let height = parse(fields[2])?;
        let maxval = parse(fields[3])?;
        if maxval == 0 || maxval > 255 {
            return Err(FlowError::Format(format!("unsupported PGM maxval {maxval}")));
        }
        pos += 1; // single whitespace after maxval
        let need = (width * height) as usize;
        if bytes.len() < pos + need {
            return Err(FlowError::Format("truncated PGM body".into()));
        }
        let pixels = bytes[pos..pos + need]
            .iter()
            .map(|&b| b as f64 / maxval as f64)
            .collect();
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Splits the image into non-overlapping `patch x patch` tiles (row-major)
/// and maps each flattened tile through a fixed seed-derived linear map to
/// a d_cond-dimensional token.
pub fn featurize_image(
    image: &GrayImage,
    patch: u32,
    d_cond: usize,
    seed: u64,
    source: ConditionSource,
) -> Result<ConditionTokens, FlowError> {
    if patch == 0 || image.width % patch != 0 || image.height % patch != 0 {
        return Err(FlowError::IndivisiblePatch {
            width: image.width,
            height: image.height,
            patch,
        });
    }
    let patch_dim = (patch * patch) as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x4645_4154);
    let normal = StandardNormal;
    let scale = 1.0 / patch as f64;
    let projection = Mat::from_fn(patch_dim, d_cond, |_, _| {
        let v: f64 = normal.sample(&mut rng);
        v * scale
    });

    let tiles_x = image.width / patch;
    let tiles_y = image.height / patch;
    let mut tokens = Mat::zeros((tiles_x * tiles_y) as usize, d_cond);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let mut flat = Mat::zeros(1, patch_dim);
            for py in 0..patch {
                for px in 0..patch {
                    flat.data[(py * patch + px) as usize] =
                        image.get(tx * patch + px, ty * patch + py);
                }
            }
            let tok = flat.matmul(&projection);
            let row = (ty * tiles_x + tx) as usize;
            tokens.row_mut(row).copy_from_slice(&tok.data);
        }
    }
    ConditionTokens::new(tokens, source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_equal_tokens() {
        let img = GrayImage::constant(8, 8, 0.5);
        let toks = featurize_image(&img, 4, 6, 3, ConditionSource::Top).unwrap();
        assert_eq!(toks.tokens.rows, 4);
        for r in 1..4 {
            assert_eq!(toks.tokens.row(r), toks.tokens.row(0));
        }
    }

    #[test]
    fn permuting_patches_permutes_tokens() {
        let mut img = GrayImage::constant(4, 2, 0.0);
        // Two 2x2 patches with distinct content.
        img.pixels[0] = 1.0; // patch 0
        img.pixels[3] = 0.25; // patch 1 area
        let a = featurize_image(&img, 2, 5, 7, ConditionSource::Top).unwrap();
        // Swap the two patches.
        let mut swapped = GrayImage::constant(4, 2, 0.0);
        swapped.pixels[2] = 1.0;
        swapped.pixels[1] = 0.25;
        let b = featurize_image(&swapped, 2, 5, 7, ConditionSource::Top).unwrap();
        assert_eq!(a.tokens.row(0), b.tokens.row(1));
        assert_eq!(a.tokens.row(1), b.tokens.row(0));
    }

    #[test]
    fn deterministic_per_seed() {
        let img = GrayImage::constant(8, 8, 0.7);
        let a = featurize_image(&img, 2, 4, 11, ConditionSource::Frontal).unwrap();
        let b = featurize_image(&img, 2, 4, 11, ConditionSource::Frontal).unwrap();
        assert_eq!(a, b);
        let c = featurize_image(&img, 2, 4, 12, ConditionSource::Frontal).unwrap();
        assert_ne!(a.tokens, c.tokens);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = GrayImage::constant(6, 8, 0.0);
        assert!(featurize_image(&img, 4, 4, 0, ConditionSource::Top).is_err());
    }

    #[test]
    fn pgm_round_trip_via_mask() {
        let mut mask = BinaryMask::new(4, 4, 1.0);
        mask.set(1, 2, true);
        let img = GrayImage::from_pgm(&mask.to_pgm()).unwrap();
        assert_eq!(img.width, 4);
        assert_eq!(img.get(1, 2), 1.0);
        assert_eq!(img.get(0, 0), 0.0);
    }
}
