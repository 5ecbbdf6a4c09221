use crate::data::{Dataset, LabeledImage, TrainingSample, UNLABELED};
use crate::error::{Error, Result};

/// Grid stride giving roughly `target_pixels_per_cell` pixels per cell.
pub fn grid_stride(target_pixels_per_cell: usize) -> usize {
    ((target_pixels_per_cell as f64).sqrt().round() as usize).max(1)
}

fn axis_positions(len: usize, stride: usize) -> Vec<usize> {
    if len < stride {
        return vec![len / 2];
    }
    let n = len / stride;
    let offset = (len - n * stride) / 2 + stride / 2;
    (0..n).map(|i| offset + i * stride).collect()
}

/// Patch centres on a regular grid, dropping those that land on unlabelled
/// pixels. Stands in for one sample per superpixel.
pub fn sample_centers(img: &LabeledImage, target_pixels_per_cell: usize) -> Result<Vec<(usize, usize)>> {
    if target_pixels_per_cell == 0 {
        return Err(Error::InvalidArgument("target pixels per cell must be >= 1".into()));
    }
    let stride = grid_stride(target_pixels_per_cell);
    let rows = axis_positions(img.height(), stride);
    let cols = axis_positions(img.width(), stride);
    let labels = img.labels();
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .filter(|&(r, c)| labels.get(r, c) != UNLABELED)
        .collect())
}

/// Every grid sample of every image, in dataset order, without subclass labels.
pub fn collect_samples(ds: &Dataset, target_pixels_per_cell: usize) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (i, img) in ds.images().iter().enumerate() {
        for center in sample_centers(img, target_pixels_per_cell)? {
            out.push(TrainingSample {
                image: i,
                center,
                class_label: img.labels().get(center.0, center.1) as usize,
                subclass_label: None,
            });
        }
    }
    Ok(out)
}

/// Samples per class; the stand-in for superpixel counts.
pub fn class_counts(samples: &[TrainingSample], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for s in samples {
        counts[s.class_label] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelMap;

    fn uniform(h: usize, w: usize, label: u16) -> LabeledImage {
        LabeledImage::new("u", h, w, vec![0.0; h * w * 3], LabelMap::filled(h, w, label), None).unwrap()
    }

    #[test]
    fn siftflow_sized_grid() {
        assert_eq!(grid_stride(300), 17);
        let centers = sample_centers(&uniform(256, 256, 0), 300).unwrap();
        assert_eq!(centers.len(), 225);
    }

    #[test]
    fn unlabeled_image_has_no_centers() {
        assert!(sample_centers(&uniform(64, 64, UNLABELED), 300).unwrap().is_empty());
    }

    #[test]
    fn tiny_image_gets_single_center() {
        assert_eq!(sample_centers(&uniform(10, 10, 1), 300).unwrap(), vec![(5, 5)]);
    }

    #[test]
    fn zero_density_is_rejected() {
        assert!(sample_centers(&uniform(10, 10, 1), 0).is_err());
    }

    #[test]
    fn centers_are_inside_bounds() {
        for h in 1..70 {
            for t in [1, 2, 9, 50, 300, 1000] {
                for (r, c) in sample_centers(&uniform(h, 71 - h, 0), t).unwrap() {
                    assert!(r < h && c < 71 - h);
                }
            }
        }
    }
}
