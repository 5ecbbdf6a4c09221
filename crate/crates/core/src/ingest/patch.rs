use crate::data::LabeledImage;

/// A square crop in channel-major layout (`3 x S x S`).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<f64>,
    /// `S x S`; false where the crop fell outside the image.
    pub valid_mask: Vec<bool>,
}

impl Patch {
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

/// Crops an `S x S` window centred on `center`; positions outside the image
/// hold `mean`. For even `S` the window extends one pixel further up/left.
pub fn extract_patch(img: &LabeledImage, center: (usize, usize), size: usize, mean: [f64; 3]) -> Patch {
    let plane = size * size;
    let mut pixels = vec![0.0; 3 * plane];
    let mut valid_mask = vec![false; plane];
    let top = center.0 as isize - (size / 2) as isize;
    let left = center.1 as isize - (size / 2) as isize;
    for pr in 0..size {
        let r = top + pr as isize;
        for pc in 0..size {
            let c = left + pc as isize;
            let idx = pr * size + pc;
            let inside = r >= 0 && c >= 0 && (r as usize) < img.height() && (c as usize) < img.width();
            let px = if inside {
                valid_mask[idx] = true;
                img.pixel(r as usize, c as usize)
            } else {
                mean
            };
            for ch in 0..3 {
                pixels[ch * plane + idx] = px[ch];
            }
        }
    }
    Patch {
        size,
        pixels,
        valid_mask,
    }
}
