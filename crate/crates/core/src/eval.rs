//! Dense prediction and per-pixel / per-class accuracy.

use std::fmt::Write as _;

use crate::data::{LabelMap, Label, LabeledImage, UNLABELED};
use crate::error::{Error, Result};
use crate::hierarchy::DensePredictor;
use crate::ingest::extract_patch;
use crate::network::Model;

/// Rows are ground truth, columns are predictions. Unlabelled ground-truth
/// pixels are only counted in `ignored`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            ignored: 0,
        }
    }

    /// From row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::InvalidArgument(format!("{} counts for {num_classes} classes", counts.len())));
        }
        Ok(Self {
            num_classes,
            counts,
            ignored: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn add(&mut self, truth: &LabelMap, predicted: &LabelMap) -> Result<()> {
        if truth.height() != predicted.height() || truth.width() != predicted.width() {
            return Err(Error::InvalidArgument("prediction and ground truth differ in size".into()));
        }
        for (&t, &p) in truth.as_slice().iter().zip(predicted.as_slice()) {
            if t == UNLABELED {
                self.ignored += 1;
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.num_classes || p >= self.num_classes {
                return Err(Error::InvalidArgument(format!("label pair ({t}, {p}) out of range")));
            }
            self.counts[t * self.num_classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::CatalogMismatch {
                expected: self.num_classes,
                found: other.num_classes,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.ignored += other.ignored;
        Ok(())
    }

    pub fn counted(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixel count of each class.
    pub fn support(&self) -> Vec<u64> {
        self.counts.chunks_exact(self.num_classes).map(|r| r.iter().sum()).collect()
    }

    /// Recall of each class; `None` where the class never occurs in the ground truth.
    pub fn class_accuracies(&self) -> Vec<Option<f64>> {
        self.support()
            .iter()
            .enumerate()
            .map(|(j, &t)| (t > 0).then(|| self.get(j, j) as f64 / t as f64))
            .collect()
    }

    /// CSV with class names as the header row and first column.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("truth\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (j, row) in self.counts.chunks_exact(self.num_classes).enumerate() {
            out.push_str(&names[j]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClassAverage {
    /// Average over classes that occur in the ground truth.
    #[default]
    PresentOnly,
    /// Divide by the full class count; absent classes contribute zero.
    AllClasses,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub per_pixel: f64,
    pub per_class: f64,
}

pub fn accuracy(conf: &ConfusionMatrix, average: ClassAverage) -> Result<Accuracy> {
    let total = conf.counted();
    if total == 0 {
        return Err(Error::NoCountedPixels);
    }
    let trace: u64 = (0..conf.num_classes).map(|j| conf.get(j, j)).sum();
    let recalls = conf.class_accuracies();
    let sum: f64 = recalls.iter().flatten().sum();
    let denom = match average {
        ClassAverage::PresentOnly => recalls.iter().flatten().count(),
        ClassAverage::AllClasses => conf.num_classes,
    };
    Ok(Accuracy {
        per_pixel: trace as f64 / total as f64,
        per_class: sum / denom as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassDelta {
    pub class: usize,
    pub delta: f64,
}

/// Recall of `b` minus recall of `a` for every class present in both ground
/// truths, largest gain first (ties by class index).
pub fn per_class_delta(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<Vec<ClassDelta>> {
    if a.num_classes != b.num_classes {
        return Err(Error::CatalogMismatch {
            expected: a.num_classes,
            found: b.num_classes,
        });
    }
    let mut out: Vec<ClassDelta> = a
        .class_accuracies()
        .into_iter()
        .zip(b.class_accuracies())
        .enumerate()
        .filter_map(|(class, pair)| match pair {
            (Some(x), Some(y)) => Some(ClassDelta { class, delta: y - x }),
            _ => None,
        })
        .collect();
    out.sort_by(|p, q| q.delta.total_cmp(&p.delta).then(p.class.cmp(&q.class)));
    Ok(out)
}

pub fn delta_csv(deltas: &[ClassDelta], names: &[String]) -> String {
    let mut out = String::from("class,name,delta\n");
    for d in deltas {
        let _ = writeln!(out, "{},{},{}", d.class, names[d.class], d.delta);
    }
    out
}

/// Grid positions along an axis: `stride / 2`, then every `stride` pixels.
fn axis_centers(len: usize, stride: usize) -> Vec<usize> {
    let start = (stride / 2).min(len - 1);
    (start..len).step_by(stride).collect()
}

/// For each coordinate, the index of the nearest grid position (lower on ties).
fn nearest_index(len: usize, centers: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut k = 0;
    for x in 0..len {
        while k + 1 < centers.len() && centers[k + 1].abs_diff(x) < centers[k].abs_diff(x) {
            k += 1;
        }
        out.push(k);
    }
    out
}

/// Classifies patches on a stride grid and gives every pixel the label of its
/// nearest grid centre. Stride 1 classifies every pixel.
pub fn predict_label_map(model: &Model, img: &LabeledImage, stride: usize) -> Result<LabelMap> {
    if model.steps() == 0 {
        return Err(Error::UntrainedModel);
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let (h, w) = (img.height(), img.width());
    let rows = axis_centers(h, stride);
    let cols = axis_centers(w, stride);
    let mean = img.channel_mean();
    let mut grid = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let patch = extract_patch(img, (r, c), model.input_size(), mean);
            grid.push(model.predict_class(&patch.pixels)? as Label);
        }
    }
    let near_r = nearest_index(h, &rows);
    let near_c = nearest_index(w, &cols);
    let mut data = Vec::with_capacity(h * w);
    for &i in &near_r {
        for &j in &near_c {
            data.push(grid[i * cols.len() + j]);
        }
    }
    LabelMap::new(h, w, data)
}

/// Wraps a trained model as a dense predictor for infill.
pub struct DenseLabeler<'a> {
    pub model: &'a Model,
    pub stride: usize,
}

impl DensePredictor for DenseLabeler<'_> {
    fn ensure_ready(&self) -> Result<()> {
        if self.model.steps() == 0 {
            return Err(Error::UntrainedModel);
        }
        self.model
            .num_class_outputs()
            .map(|_| ())
            .ok_or_else(|| Error::InvalidArgument("model does not predict original classes".into()))
    }

    fn predict_dense(&self, img: &LabeledImage) -> Result<LabelMap> {
        predict_label_map(self.model, img, self.stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_worked_confusion() {
        let conf = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 4]).unwrap();
        let acc = accuracy(&conf, ClassAverage::PresentOnly).unwrap();
        assert_eq!((acc.per_pixel, acc.per_class), (0.875, 0.875));
    }

    #[test]
    fn absent_classes_and_full_average() {
        let conf = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 1, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(accuracy(&conf, ClassAverage::PresentOnly).unwrap().per_class, 0.75);
        assert_eq!(accuracy(&conf, ClassAverage::AllClasses).unwrap().per_class, 0.5);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let mut conf = ConfusionMatrix::new(2);
        conf.add(&LabelMap::filled(2, 2, UNLABELED), &LabelMap::filled(2, 2, 0)).unwrap();
        assert_eq!(conf.ignored, 4);
        assert!(matches!(accuracy(&conf, ClassAverage::PresentOnly), Err(Error::NoCountedPixels)));
    }

    #[test]
    fn deltas_are_sorted_and_local() {
        let a = ConfusionMatrix::from_counts(3, vec![5, 5, 0, 0, 10, 0, 1, 0, 9]).unwrap();
        assert!(per_class_delta(&a, &a).unwrap().iter().all(|d| d.delta == 0.0));
        let b = ConfusionMatrix::from_counts(3, vec![8, 2, 0, 0, 10, 0, 1, 0, 9]).unwrap();
        let d = per_class_delta(&a, &b).unwrap();
        assert_eq!(d[0].class, 0);
        assert!((d[0].delta - 0.3).abs() < 1e-12);
        assert_eq!(d.iter().filter(|x| x.delta > 0.0).count(), 1);
        assert_eq!(d[1].class, 1);
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        assert!(delta_csv(&d, &names).starts_with("class,name,delta\n0,x,"));
        assert!(matches!(per_class_delta(&a, &ConfusionMatrix::new(2)), Err(Error::CatalogMismatch { .. })));
    }

    #[test]
    fn nearest_grid_index_matches_brute_force() {
        for len in 1..20 {
            for stride in 1..7 {
                let centers = axis_centers(len, stride);
                let near = nearest_index(len, &centers);
                for x in 0..len {
                    let best = (0..centers.len()).min_by_key(|&k| (centers[k].abs_diff(x), k)).unwrap();
                    assert_eq!(near[x], best, "len {len} stride {stride} x {x}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn per_pixel_matches_pixel_count(seed in any::<u64>(), h in 1usize..8, w in 1usize..8) {
            let gen = |salt: u64| -> Vec<u16> {
                (0..(h * w) as u64)
                    .map(|i| ((i.wrapping_mul(0x9e3779b97f4a7c15) ^ seed.wrapping_add(salt)).wrapping_mul(0xbf58476d1ce4e5b9) >> 60) as u16 % 4)
                    .map(|v| if v == 3 { UNLABELED } else { v })
                    .collect()
            };
            let truth = LabelMap::new(h, w, gen(1)).unwrap();
            let pred = LabelMap::new(h, w, gen(2).into_iter().map(|v| if v == UNLABELED { 0 } else { v }).collect()).unwrap();
            let mut conf = ConfusionMatrix::new(3);
            conf.add(&truth, &pred).unwrap();
            let labelled = truth.as_slice().iter().filter(|&&t| t != UNLABELED).count();
            prop_assert_eq!(conf.ignored as usize, h * w - labelled);
            prop_assert_eq!(conf.counted() + conf.ignored, (h * w) as u64);
            if labelled > 0 {
                let hits = truth.as_slice().iter().zip(pred.as_slice()).filter(|(t, p)| t == p).count();
                let acc = accuracy(&conf, ClassAverage::PresentOnly).unwrap();
                prop_assert!((acc.per_pixel - hits as f64 / labelled as f64).abs() < 1e-15);
            }
        }
    }
}
