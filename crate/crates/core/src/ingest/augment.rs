use rand::Rng;

use crate::data::{validate_dataset, Dataset, LabelMap, LabeledImage, UNLABELED};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_str, rng_for};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    /// Augmented copies per original image.
    pub n_copies: usize,
    pub scale_range: (f64, f64),
    pub rotation_range_deg: (f64, f64),
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            n_copies: 5,
            scale_range: (0.9, 1.1),
            rotation_range_deg: (-8.0, 8.0),
            flip_probability: 0.5,
            seed: 0,
        }
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        rotation_deg: 0.0,
        flip: false,
    };
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// The transform for `(seed, image id, copy)`; no other state feeds the stream.
pub fn draw_params(cfg: &AugmentationConfig, image_id: &str, copy_index: usize) -> AugmentParams {
    let base = derive_seed(cfg.seed, "augment", hash_str(image_id));
    let mut rng = rng_for(base, "copy", copy_index as u64);
    let scale = uniform(&mut rng, cfg.scale_range);
    let rotation_deg = uniform(&mut rng, cfg.rotation_range_deg);
    let flip = rng.gen::<f64>() < cfg.flip_probability;
    AugmentParams {
        scale,
        rotation_deg,
        flip,
    }
}

pub fn augment_image(
    img: &LabeledImage,
    cfg: &AugmentationConfig,
    copy_index: usize,
) -> Result<LabeledImage> {
    if copy_index >= cfg.n_copies {
        return Err(Error::InvalidArgument(format!(
            "copy index {copy_index} not below {} copies",
            cfg.n_copies
        )));
    }
    let params = draw_params(cfg, &img.id, copy_index);
    Ok(transform_image(img, params, format!("{}@aug{copy_index}", img.id)))
}

/// Scales, rotates about the centre and optionally mirrors an image.
///
/// The output is `round(H*s) x round(W*s)`. Each output pixel is mapped back
/// into the source; the raster is sampled bilinearly and the label map by
/// nearest neighbour. Pixels whose nearest source pixel lies outside the
/// image become `UNLABELED` and take the image mean colour.
pub fn transform_image(img: &LabeledImage, params: AugmentParams, id: String) -> LabeledImage {
    let (h, w) = (img.height(), img.width());
    let out_h = ((h as f64 * params.scale).round() as usize).max(1);
    let out_w = ((w as f64 * params.scale).round() as usize).max(1);
    let mean = img.channel_mean();
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let in_center = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let out_center = ((out_h as f64 - 1.0) / 2.0, (out_w as f64 - 1.0) / 2.0);

    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    let mut labels = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let dy = r as f64 - out_center.0;
            let mut dx = c as f64 - out_center.1;
            if params.flip {
                dx = -dx;
            }
            let x = (cos * dx + sin * dy) / params.scale;
            let y = (-sin * dx + cos * dy) / params.scale;
            let sr = in_center.0 + y;
            let sc = in_center.1 + x;
            let (nr, nc) = (sr.round(), sc.round());
            if nr >= 0.0 && nc >= 0.0 && (nr as usize) < h && (nc as usize) < w {
                labels.push(img.labels().get(nr as usize, nc as usize));
                pixels.extend_from_slice(&bilinear(img, sr, sc));
            } else {
                labels.push(UNLABELED);
                pixels.extend_from_slice(&mean);
            }
        }
    }
    let labels = LabelMap::new(out_h, out_w, labels).expect("sized above");
    LabeledImage::new(id, out_h, out_w, pixels, labels, img.scene_name.clone())
        .expect("convex combinations stay in range")
}

fn bilinear(img: &LabeledImage, sr: f64, sc: f64) -> [f64; 3] {
    let sr = sr.clamp(0.0, (img.height() - 1) as f64);
    let sc = sc.clamp(0.0, (img.width() - 1) as f64);
    let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
    let (fr, fc) = (sr - r0 as f64, sc - c0 as f64);
    let r1 = (r0 + 1).min(img.height() - 1);
    let c1 = (c0 + 1).min(img.width() - 1);
    let (p00, p01, p10, p11) = (img.pixel(r0, c0), img.pixel(r0, c1), img.pixel(r1, c0), img.pixel(r1, c1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let v = (1.0 - fr) * (1.0 - fc) * p00[ch]
            + (1.0 - fr) * fc * p01[ch]
            + fr * (1.0 - fc) * p10[ch]
            + fr * fc * p11[ch];
        out[ch] = v.clamp(0.0, 1.0);
    }
    out
}

/// Originals followed by `n_copies` augmented versions of each.
pub fn augment_dataset(ds: &Dataset, cfg: &AugmentationConfig) -> Result<Dataset> {
    let mut images = ds.images().to_vec();
    for img in ds.images() {
        for k in 0..cfg.n_copies {
            images.push(augment_image(img, cfg, k)?);
        }
    }
    validate_dataset(images, ds.catalog().clone())
}
