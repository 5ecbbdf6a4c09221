//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.tsv` and `classes.txt`. Each manifest
//! line is `image_id<TAB>image_path<TAB>labelmap_path<TAB>scene_name` with `-`
//! for a missing scene name; paths are relative to the manifest. Class ids are
//! line indices in `classes.txt`.
//!
//! Images are 8-bit RGB PNG. Label maps are either 8-bit grayscale PNG (value =
//! class id, 255 = unlabelled) or `.txt` grids of whitespace-separated integers
//! with -1 for unlabelled.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::data::{validate_dataset, ClassCatalog, Dataset, Label, LabelMap, LabeledImage, UNLABELED};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CLASSES_FILE: &str = "classes.txt";
const PNG_UNLABELED: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    pub labelmap_path: PathBuf,
    pub scene_name: Option<String>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(path, i + 1, format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        entries.push(ManifestEntry {
            image_id: fields[0].to_string(),
            image_path: base.join(fields[1]),
            labelmap_path: base.join(fields[2]),
            scene_name: (fields[3] != "-").then(|| fields[3].to_string()),
        });
    }
    Ok(entries)
}

/// Writes a manifest whose paths are stored relative to `dir` when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    for e in entries {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.image_id,
            rel(&e.image_path),
            rel(&e.labelmap_path),
            e.scene_name.as_deref().unwrap_or("-")
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end().to_string()).filter(|l| !l.is_empty()).collect())
}

pub fn write_class_list(path: &Path, names: &[String]) -> Result<()> {
    let mut out = names.join("\n");
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok((h as usize, w as usize, pixels))
}

pub fn write_image(path: &Path, img: &LabeledImage) -> Result<()> {
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for r in 0..img.height() {
        for c in 0..img.width() {
            let px = img.pixel(r, c).map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
            out.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    out.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt"))
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    if is_text(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<Label>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| match tok.parse::<i64>() {
                    Ok(-1) => Ok(UNLABELED),
                    Ok(v) if (0..UNLABELED as i64).contains(&v) => Ok(v as Label),
                    _ => Err(Error::format(path, i + 1, format!("bad label `{tok}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::format(path, i + 1, "ragged label grid"));
                }
            }
            rows.push(row);
        }
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        LabelMap::new(h, w, rows.concat())
    } else {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| if v == PNG_UNLABELED { UNLABELED } else { v as Label })
            .collect();
        LabelMap::new(h as usize, w as usize, data)
    }
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    if is_text(path) {
        let mut out = String::new();
        for r in 0..labels.height() {
            let row: Vec<String> = (0..labels.width())
                .map(|c| match labels.get(r, c) {
                    UNLABELED => "-1".to_string(),
                    v => v.to_string(),
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    } else {
        let mut out = GrayImage::new(labels.width() as u32, labels.height() as u32);
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                let v = match labels.get(r, c) {
                    UNLABELED => PNG_UNLABELED,
                    v if v < PNG_UNLABELED as Label => v as u8,
                    v => {
                        return Err(Error::InvalidArgument(format!(
                            "label {v} does not fit an 8-bit PNG label map; use .txt"
                        )))
                    }
                };
                out.put_pixel(c as u32, r as u32, Luma([v]));
            }
        }
        out.save(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }
}

/// Loads `manifest.tsv` and `classes.txt` from `dir` and validates the result.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let names = read_class_list(&dir.join(CLASSES_FILE))?;
    let catalog = ClassCatalog::from_names(names)?;
    let entries = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut images = Vec::with_capacity(entries.len());
    for e in entries {
        let (h, w, pixels) = read_image(&e.image_path)?;
        let labels = read_label_map(&e.labelmap_path)?;
        images.push(LabeledImage::new(e.image_id, h, w, pixels, labels, e.scene_name)?);
    }
    validate_dataset(images, catalog)
}

/// Writes every image as `images/<id>.png` and `labels/<id>.png` plus the
/// manifest and class list.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    for sub in ["images", "labels"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(ds.len());
    for img in ds.images() {
        let image_path = dir.join("images").join(format!("{}.png", img.id));
        let labelmap_path = dir.join("labels").join(format!("{}.png", img.id));
        write_image(&image_path, img)?;
        write_label_map(&labelmap_path, img.labels())?;
        entries.push(ManifestEntry {
            image_id: img.id.clone(),
            image_path,
            labelmap_path,
            scene_name: img.scene_name.clone(),
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    write_class_list(&dir.join(CLASSES_FILE), ds.catalog().names())
}
