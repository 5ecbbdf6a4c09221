use crate::data::{validate_dataset, Dataset, LabelMap, LabeledImage, UNLABELED};
use crate::error::{Error, Result};

/// Images at or above this labelled fraction are left alone.
pub const DEFAULT_LABELED_THRESHOLD: f64 = 0.9;

/// Anything that can label every pixel of an image.
pub trait DensePredictor {
    /// Fails when the predictor has not been trained.
    fn ensure_ready(&self) -> Result<()>;
    fn predict_dense(&self, img: &LabeledImage) -> Result<LabelMap>;
}

#[derive(Clone, Debug)]
pub struct InfillOutcome {
    pub dataset: Dataset,
    /// Ids of images whose label maps were filled.
    pub filled: Vec<String>,
}

/// Replaces unlabelled pixels with predictions in every image whose labelled
/// fraction is below `threshold`. Labelled pixels are never touched.
pub fn infill_unlabeled(ds: &Dataset, predictor: &dyn DensePredictor, threshold: f64) -> Result<InfillOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("labelled threshold {threshold} not in [0, 1]")));
    }
    predictor.ensure_ready()?;
    let num_classes = ds.num_classes();
    let mut images = Vec::with_capacity(ds.len());
    let mut filled = Vec::new();
    for (img, &fraction) in ds.images().iter().zip(ds.labeled_fractions()) {
        if fraction >= threshold {
            images.push(img.clone());
            continue;
        }
        let predicted = predictor.predict_dense(img)?;
        if predicted.height() != img.height() || predicted.width() != img.width() {
            return Err(Error::ShapeMismatch {
                image: img.id.clone(),
                detail: format!(
                    "prediction is {}x{}, image is {}x{}",
                    predicted.height(),
                    predicted.width(),
                    img.height(),
                    img.width()
                ),
            });
        }
        let mut labels = img.labels().clone();
        for r in 0..img.height() {
            for c in 0..img.width() {
                if labels.get(r, c) == UNLABELED {
                    let p = predicted.get(r, c);
                    if p == UNLABELED || p as usize >= num_classes {
                        return Err(Error::LabelOutOfRange {
                            image: img.id.clone(),
                            row: r,
                            col: c,
                            value: p,
                            num_classes,
                        });
                    }
                    labels.set(r, c, p);
                }
            }
        }
        filled.push(img.id.clone());
        images.push(img.clone().with_labels(labels)?);
    }
    Ok(InfillOutcome {
        dataset: validate_dataset(images, ds.catalog().clone())?,
        filled,
    })
}
