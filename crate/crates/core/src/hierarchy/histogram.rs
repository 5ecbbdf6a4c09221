use crate::data::{LabelMap, Roi, UNLABELED};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum HistogramDescriptor {
    /// The window held no labelled pixel.
    Empty,
    /// L2-normalised label histogram.
    Unit(Vec<f64>),
}

impl HistogramDescriptor {
    pub fn as_unit(&self) -> Option<&[f64]> {
        match self {
            HistogramDescriptor::Unit(v) => Some(v),
            HistogramDescriptor::Empty => None,
        }
    }
}

/// Raw label counts in the ROI around `center`, clipped to the map.
pub fn window_label_counts(labels: &LabelMap, center: (usize, usize), roi: Roi, num_classes: usize) -> Result<Vec<u64>> {
    let (h, w) = (labels.height(), labels.width());
    if center.0 >= h || center.1 >= w {
        return Err(Error::InvalidArgument(format!("center {center:?} outside {h}x{w} label map")));
    }
    let (r0, r1, c0, c1) = match roi {
        Roi::Whole => (0, h, 0, w),
        Roi::Window(side) => {
            let half = side / 2;
            (
                center.0.saturating_sub(half),
                (center.0 + half + 1).min(h),
                center.1.saturating_sub(half),
                (center.1 + half + 1).min(w),
            )
        }
    };
    let mut counts = vec![0u64; num_classes];
    for r in r0..r1 {
        for c in c0..c1 {
            let l = labels.get(r, c);
            if l != UNLABELED {
                debug_assert!((l as usize) < num_classes);
                counts[l as usize] += 1;
            }
        }
    }
    Ok(counts)
}

/// Label histogram of the ROI around a patch centre, normalised to unit
/// Euclidean length so clipped windows compare with interior ones.
pub fn compute_label_histogram(
    labels: &LabelMap,
    center: (usize, usize),
    roi: Roi,
    num_classes: usize,
) -> Result<HistogramDescriptor> {
    let counts = window_label_counts(labels, center, roi, num_classes)?;
    let norm = counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(HistogramDescriptor::Empty);
    }
    Ok(HistogramDescriptor::Unit(counts.iter().map(|&c| c as f64 / norm).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_map_gives_basis_vector() {
        let map = LabelMap::filled(50, 50, 0);
        for roi in [Roi::Window(3), Roi::Window(129), Roi::Whole] {
            for center in [(25, 25), (0, 0), (49, 0)] {
                let h = compute_label_histogram(&map, center, roi, 3).unwrap();
                assert_eq!(h, HistogramDescriptor::Unit(vec![1.0, 0.0, 0.0]));
            }
        }
    }

    #[test]
    fn three_by_three_example() {
        let map = LabelMap::new(3, 3, vec![0, 0, 1, 0, 1, 1, 1, 1, 1]).unwrap();
        let counts = window_label_counts(&map, (1, 1), Roi::Window(3), 2).unwrap();
        assert_eq!(counts, vec![3, 6]);
        let h = compute_label_histogram(&map, (1, 1), Roi::Window(3), 2).unwrap();
        let s = 45f64.sqrt();
        let v = h.as_unit().unwrap();
        assert!((v[0] - 3.0 / s).abs() < 1e-15 && (v[1] - 6.0 / s).abs() < 1e-15);
    }

    #[test]
    fn unlabeled_window_is_empty() {
        let mut map = LabelMap::filled(9, 9, UNLABELED);
        map.set(8, 8, 1);
        assert_eq!(compute_label_histogram(&map, (1, 1), Roi::Window(3), 2).unwrap(), HistogramDescriptor::Empty);
        assert!(compute_label_histogram(&map, (1, 1), Roi::Whole, 2).unwrap().as_unit().is_some());
    }

    #[test]
    fn center_outside_is_rejected() {
        assert!(compute_label_histogram(&LabelMap::filled(4, 4, 0), (4, 0), Roi::Whole, 1).is_err());
    }

    proptest! {
        #[test]
        fn relabeling_permutes_bins(seed in any::<u64>(), r in 0usize..12, c in 0usize..12, side in 0usize..8) {
            let n = 4;
            let data: Vec<u16> = (0..144u64).map(|i| ((i.wrapping_mul(2654435761).wrapping_add(seed) >> 7) % 5) as u16).map(|v| if v == 4 { UNLABELED } else { v }).collect();
            let perm = [2u16, 0, 3, 1];
            let permuted: Vec<u16> = data.iter().map(|&v| if v == UNLABELED { v } else { perm[v as usize] }).collect();
            let roi = Roi::Window(2 * side + 1);
            let a = compute_label_histogram(&LabelMap::new(12, 12, data).unwrap(), (r, c), roi, n).unwrap();
            let b = compute_label_histogram(&LabelMap::new(12, 12, permuted).unwrap(), (r, c), roi, n).unwrap();
            match (a, b) {
                (HistogramDescriptor::Unit(a), HistogramDescriptor::Unit(b)) => {
                    for j in 0..n {
                        prop_assert_eq!(a[j], b[perm[j] as usize]);
                    }
                }
                (HistogramDescriptor::Empty, HistogramDescriptor::Empty) => {}
                _ => prop_assert!(false, "emptiness differs"),
            }
        }
    }
}
