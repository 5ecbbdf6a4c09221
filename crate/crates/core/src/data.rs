//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Class index stored in a label map.
pub type Label = u16;

/// Sentinel for pixels without ground truth. Never a valid class index.
pub const UNLABELED: Label = Label::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<Label>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<Label>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "label map of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Label {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: Label) {
        self.data[row * self.width + col] = label;
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.data
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.labeled_count() as f64 / self.data.len() as f64
    }
}

/// An RGB raster with intensities in `[0, 1]` (row-major, channels interleaved)
/// and its pixel label map.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    labels: LabelMap,
    pub scene_name: Option<String>,
}

impl LabeledImage {
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        labels: LabelMap,
        scene_name: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch {
                image: id,
                detail: "image has zero area".into(),
            });
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                image: id,
                detail: format!(
                    "raster has {} values, expected {height}x{width}x3",
                    pixels.len()
                ),
            });
        }
        if labels.height() != height || labels.width() != width {
            return Err(Error::ShapeMismatch {
                image: id,
                detail: format!(
                    "label map is {}x{}, raster is {height}x{width}",
                    labels.height(),
                    labels.width()
                ),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch {
                image: id,
                detail: format!("intensity {v} outside [0, 1]"),
            });
        }
        Ok(Self {
            id,
            height,
            width,
            pixels,
            labels,
            scene_name,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Replaces the label map, keeping the raster.
    pub fn with_labels(mut self, labels: LabelMap) -> Result<Self> {
        if labels.height() != self.height || labels.width() != self.width {
            return Err(Error::ShapeMismatch {
                image: self.id,
                detail: "replacement label map has different size".into(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn channel_mean(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        let n = (self.height * self.width) as f64;
        sum.map(|s| s / n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
    superpixel_counts: Vec<u64>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>, superpixel_counts: Vec<u64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidCatalog("no classes".into()));
        }
        if names.len() >= UNLABELED as usize {
            return Err(Error::InvalidCatalog(format!(
                "{} classes exceed the label range",
                names.len()
            )));
        }
        if superpixel_counts.len() != names.len() {
            return Err(Error::InvalidCatalog(format!(
                "{} names but {} counts",
                names.len(),
                superpixel_counts.len()
            )));
        }
        let unique: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidCatalog("class names are not unique".into()));
        }
        Ok(Self {
            names,
            superpixel_counts,
        })
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        Self::new(names, vec![0; n])
    }

    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self> {
        Self::new(self.names.clone(), counts)
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn superpixel_counts(&self) -> &[u64] {
        &self.superpixel_counts
    }
}

/// One training patch: where it is centred and what it is labelled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    /// Index into the owning [`Dataset`].
    pub image: usize,
    pub center: (usize, usize),
    pub class_label: usize,
    pub subclass_label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    SceneName(String),
    Cluster(Vec<f64>),
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subclass {
    pub parent: usize,
    pub provenance: Provenance,
}

/// Two-level map from subclasses to original classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelHierarchy {
    num_classes: usize,
    subclasses: Vec<Subclass>,
    common: BTreeSet<usize>,
    rare: BTreeSet<usize>,
}

impl LabelHierarchy {
    pub fn new(
        num_classes: usize,
        subclasses: Vec<Subclass>,
        common: BTreeSet<usize>,
        rare: BTreeSet<usize>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidHierarchy(msg));
        if num_classes == 0 {
            return bad("no classes".into());
        }
        if common.intersection(&rare).next().is_some() {
            return bad("common and rare sets overlap".into());
        }
        if common.len() + rare.len() != num_classes
            || common.iter().chain(&rare).any(|&c| c >= num_classes)
        {
            return bad("common and rare sets do not partition the classes".into());
        }
        let mut per_class = vec![0usize; num_classes];
        for (s, sub) in subclasses.iter().enumerate() {
            if sub.parent >= num_classes {
                return bad(format!("subclass {s} has parent {} out of range", sub.parent));
            }
            per_class[sub.parent] += 1;
            if let Provenance::Cluster(center) = &sub.provenance {
                if center.len() != num_classes {
                    return bad(format!("subclass {s} center has {} bins", center.len()));
                }
                let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return bad(format!("subclass {s} center has norm {norm}"));
                }
            }
        }
        if let Some(j) = per_class.iter().position(|&n| n == 0) {
            return bad(format!("class {j} has no subclass"));
        }
        for &j in &rare {
            let ok = per_class[j] == 1
                && subclasses
                    .iter()
                    .any(|s| s.parent == j && s.provenance == Provenance::Identity);
            if !ok {
                return bad(format!("rare class {j} must have exactly one identity subclass"));
            }
        }
        let names: BTreeSet<&str> = subclasses
            .iter()
            .filter_map(|s| match &s.provenance {
                Provenance::SceneName(n) => Some(n.as_str()),
                _ => None,
            })
            .collect();
        if !names.is_empty() && subclasses.len() > num_classes * names.len() {
            return bad(format!(
                "{} subclasses exceed {num_classes} classes x {} scene names",
                subclasses.len(),
                names.len()
            ));
        }
        Ok(Self {
            num_classes,
            subclasses,
            common,
            rare,
        })
    }

    /// One identity subclass per class; every class is common.
    pub fn identity(num_classes: usize) -> Self {
        let subclasses = (0..num_classes)
            .map(|parent| Subclass {
                parent,
                provenance: Provenance::Identity,
            })
            .collect();
        Self {
            num_classes,
            subclasses,
            common: (0..num_classes).collect(),
            rare: BTreeSet::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_subclasses(&self) -> usize {
        self.subclasses.len()
    }

    pub fn subclasses(&self) -> &[Subclass] {
        &self.subclasses
    }

    pub fn parent(&self, subclass: usize) -> usize {
        self.subclasses[subclass].parent
    }

    pub fn parents(&self) -> Vec<usize> {
        self.subclasses.iter().map(|s| s.parent).collect()
    }

    pub fn subclasses_of(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.subclasses
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.parent == class)
            .map(|(i, _)| i)
    }

    pub fn common(&self) -> &BTreeSet<usize> {
        &self.common
    }

    pub fn rare(&self) -> &BTreeSet<usize> {
        &self.rare
    }
}

/// The `L x n` matrix that sums subclass scores into class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationMatrix {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    pub(crate) weights: Vec<f64>,
    parents: Vec<usize>,
    pub trainable: bool,
}

impl AggregationMatrix {
    /// A `rows x parents.len()` matrix with arbitrary weights; `parents[s]`
    /// records the class subclass `s` was built under.
    pub fn from_parts(
        rows: usize,
        parents: Vec<usize>,
        weights: Vec<f64>,
        trainable: bool,
    ) -> Result<Self> {
        let cols = parents.len();
        if weights.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "aggregation weights have {} entries, expected {rows}x{cols}",
                weights.len()
            )));
        }
        if parents.iter().any(|&p| p >= rows) {
            return Err(Error::InvalidArgument("aggregation parent out of range".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            parents,
            trainable,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Parent class of every subclass column, fixed at construction.
    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    /// `W . p`
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        debug_assert_eq!(p.len(), self.cols);
        self.weights
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(p).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `W^T . g`
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, gj) in self.weights.chunks_exact(self.cols).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gj;
            }
        }
        out
    }

    /// True while every entry still equals its constructed 0/1 value.
    pub fn is_structural(&self) -> bool {
        (0..self.rows).all(|j| {
            (0..self.cols).all(|s| self.get(j, s) == if self.parents[s] == j { 1.0 } else { 0.0 })
        })
    }
}

/// Side length of the label-histogram region around a patch centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Roi {
    /// Odd side length in pixels.
    Window(usize),
    /// The whole label map.
    Whole,
}

impl Roi {
    pub fn window(side: usize) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "ROI side must be a positive odd number, got {side}"
            )));
        }
        Ok(Roi::Window(side))
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Roi::Window(r) => write!(f, "{r}"),
            Roi::Whole => f.write_str("inf"),
        }
    }
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Roi::Whole);
        }
        let side = s
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad ROI `{s}`")))?;
        Roi::window(side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Fraction of superpixel mass that the common classes must exceed.
    pub rho: f64,
    pub roi: Roi,
    /// Weight of the class cross-entropy in the joint loss.
    pub alpha: f64,
    /// Weight-decay coefficient.
    pub beta: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_step: u64,
    pub lr_factor: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            rho: 0.93,
            roi: Roi::Window(129),
            alpha: 1.0,
            beta: 0.00025,
            patch_size: 227,
            batch_size: 64,
            lr0: 0.001,
            lr_step: 20_000,
            lr_factor: 10.0,
        }
    }
}

impl Hyperparameters {
    /// Step schedule: `lr0 / lr_factor^floor(iter / lr_step)`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let drops = iteration / self.lr_step.max(1);
        self.lr0 / self.lr_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("rho {} not in (0, 1]", self.rho)));
        }
        if self.patch_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("patch and batch sizes must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_factor > 0.0) || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// A validated set of labelled images plus its class catalog.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<LabeledImage>,
    catalog: ClassCatalog,
    labeled_fractions: Vec<f64>,
    channel_mean: [f64; 3],
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn image(&self, index: usize) -> &LabeledImage {
        &self.images[index]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn num_classes(&self) -> usize {
        self.catalog.num_classes()
    }

    /// Labelled-pixel fraction of each image, in dataset order.
    pub fn labeled_fractions(&self) -> &[f64] {
        &self.labeled_fractions
    }

    /// Mean intensity per channel over every pixel of every image.
    pub fn channel_mean(&self) -> [f64; 3] {
        self.channel_mean
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn with_catalog(mut self, catalog: ClassCatalog) -> Result<Self> {
        if catalog.num_classes() != self.catalog.num_classes() {
            return Err(Error::CatalogMismatch {
                expected: self.catalog.num_classes(),
                found: catalog.num_classes(),
            });
        }
        self.catalog = catalog;
        Ok(self)
    }

    pub fn into_images(self) -> Vec<LabeledImage> {
        self.images
    }
}

/// Checks every image against the catalog and builds a [`Dataset`].
///
/// Acceptance does not depend on image order. When several images are bad,
/// the reported one is the smallest id, so the error is order-independent too.
pub fn validate_dataset(images: Vec<LabeledImage>, catalog: ClassCatalog) -> Result<Dataset> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = catalog.num_classes();
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| images[a].id.cmp(&images[b].id));
    for w in order.windows(2) {
        if images[w[0]].id == images[w[1]].id {
            return Err(Error::DuplicateImage(images[w[0]].id.clone()));
        }
    }
    for &i in &order {
        let img = &images[i];
        let labels = img.labels();
        for row in 0..labels.height() {
            for col in 0..labels.width() {
                let v = labels.get(row, col);
                if v != UNLABELED && v as usize >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        image: img.id.clone(),
                        row,
                        col,
                        value: v,
                        num_classes,
                    });
                }
            }
        }
    }

    let labeled_fractions = images.iter().map(|im| im.labels().labeled_fraction()).collect();
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for im in &images {
        for px in im.pixels().chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        count += im.height() * im.width();
    }
    let channel_mean = sum.map(|s| s / count as f64);
    let index = images
        .iter()
        .enumerate()
        .map(|(i, im)| (im.id.clone(), i))
        .collect();
    Ok(Dataset {
        images,
        catalog,
        labeled_fractions,
        channel_mean,
        index,
    })
}
