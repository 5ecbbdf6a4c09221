//! Hierarchy, subclass-frequency and sample-list files.
//!
//! The hierarchy is pretty-printed JSON with a format tag and version. Floats
//! are written with shortest round-trip formatting, so `read(write(h)) == h`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, LabelHierarchy, Provenance, Subclass, TrainingSample};
use crate::error::{Error, Result};

const FORMAT: &str = "semctx-hierarchy";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    format: String,
    version: u32,
    num_classes: usize,
    n_subclasses: usize,
    common: Vec<usize>,
    rare: Vec<usize>,
    subclasses: Vec<SubclassEntry>,
}

#[derive(Serialize, Deserialize)]
struct SubclassEntry {
    id: usize,
    parent: usize,
    provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_name: Option<String>,
}

pub fn hierarchy_to_string(h: &LabelHierarchy) -> String {
    let subclasses = h
        .subclasses()
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let (provenance, center, scene_name) = match &s.provenance {
                Provenance::Cluster(c) => ("cluster", Some(c.clone()), None),
                Provenance::SceneName(n) => ("scene-name", None, Some(n.clone())),
                Provenance::Identity => ("identity", None, None),
            };
            SubclassEntry {
                id,
                parent: s.parent,
                provenance: provenance.into(),
                center,
                scene_name,
            }
        })
        .collect();
    let file = HierarchyFile {
        format: FORMAT.into(),
        version: VERSION,
        num_classes: h.num_classes(),
        n_subclasses: h.num_subclasses(),
        common: h.common().iter().copied().collect(),
        rare: h.rare().iter().copied().collect(),
        subclasses,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("hierarchy serializes");
    text.push('\n');
    text
}

pub fn hierarchy_from_str(text: &str) -> std::result::Result<LabelHierarchy, String> {
    let file: HierarchyFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(format!("unsupported format {} v{}", file.format, file.version));
    }
    if file.n_subclasses != file.subclasses.len() {
        return Err(format!("n_subclasses is {} but {} entries follow", file.n_subclasses, file.subclasses.len()));
    }
    let mut subclasses = Vec::with_capacity(file.subclasses.len());
    for (i, e) in file.subclasses.into_iter().enumerate() {
        if e.id != i {
            return Err(format!("subclass entry {i} has id {}", e.id));
        }
        let provenance = match (e.provenance.as_str(), e.center, e.scene_name) {
            ("cluster", Some(c), None) => Provenance::Cluster(c),
            ("scene-name", None, Some(n)) => Provenance::SceneName(n),
            ("identity", None, None) => Provenance::Identity,
            (tag, ..) => return Err(format!("subclass {i}: bad provenance `{tag}` or fields")),
        };
        subclasses.push(Subclass {
            parent: e.parent,
            provenance,
        });
    }
    let common: BTreeSet<usize> = file.common.into_iter().collect();
    let rare: BTreeSet<usize> = file.rare.into_iter().collect();
    LabelHierarchy::new(file.num_classes, subclasses, common, rare).map_err(|e| e.to_string())
}

pub fn write_hierarchy(path: &Path, h: &LabelHierarchy) -> Result<()> {
    fs::write(path, hierarchy_to_string(h)).map_err(|e| Error::io(path, e))
}

pub fn read_hierarchy(path: &Path) -> Result<LabelHierarchy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    hierarchy_from_str(&text).map_err(|detail| Error::format(path, 0, detail))
}

/// Hex SHA-256 of the serialized hierarchy; identifies the hierarchy a model
/// was trained against.
pub fn hierarchy_digest(h: &LabelHierarchy) -> String {
    Sha256::digest(hierarchy_to_string(h).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `subclass,parent,count` rows sorted by count, most frequent first (ties by
/// subclass id).
pub fn frequency_csv(h: &LabelHierarchy, samples: &[TrainingSample]) -> String {
    let mut counts = vec![0usize; h.num_subclasses()];
    for s in samples {
        if let Some(sub) = s.subclass_label {
            counts[sub] += 1;
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut out = String::from("subclass,parent,count\n");
    for s in order {
        out.push_str(&format!("{s},{},{}\n", h.parent(s), counts[s]));
    }
    out
}

/// One line per sample: `image_id  row  col  class  subclass-or-"-"`.
pub fn write_samples(path: &Path, ds: &Dataset, samples: &[TrainingSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        let sub = s.subclass_label.map_or("-".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            ds.image(s.image).id,
            s.center.0,
            s.center.1,
            s.class_label,
            sub
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path, ds: &Dataset) -> Result<Vec<TrainingSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |d: &str| Error::format(path, i + 1, d.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let image = ds.index_of(f[0]).ok_or_else(|| Error::UnknownImage(f[0].to_string()))?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer `{s}`")));
        let center = (num(f[1])?, num(f[2])?);
        let img = ds.image(image);
        if center.0 >= img.height() || center.1 >= img.width() {
            return Err(bad("center outside the image"));
        }
        let class_label = num(f[3])?;
        if class_label >= ds.num_classes() {
            return Err(bad("class out of range"));
        }
        let subclass_label = if f[4] == "-" { None } else { Some(num(f[4])?) };
        out.push(TrainingSample {
            image,
            center,
            class_label,
            subclass_label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_hierarchy(center: Vec<f64>) -> LabelHierarchy {
        let subs = vec![
            Subclass {
                parent: 0,
                provenance: Provenance::Cluster(center.clone()),
            },
            Subclass {
                parent: 0,
                provenance: Provenance::Cluster(center.iter().rev().copied().collect()),
            },
            Subclass {
                parent: 1,
                provenance: Provenance::Identity,
            },
            Subclass {
                parent: 2,
                provenance: Provenance::Identity,
            },
        ];
        LabelHierarchy::new(3, subs, BTreeSet::from([0, 1]), BTreeSet::from([2])).unwrap()
    }

    proptest! {
        #[test]
        fn round_trips_exactly(a in 0.01f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let n = (a * a + b * b + c * c).sqrt();
            let h = sample_hierarchy(vec![a / n, b / n, c / n]);
            let text = hierarchy_to_string(&h);
            prop_assert_eq!(hierarchy_from_str(&text).unwrap(), h.clone());
            prop_assert_eq!(hierarchy_to_string(&hierarchy_from_str(&text).unwrap()), text);
        }
    }

    #[test]
    fn scene_names_round_trip() {
        let subs = vec![
            Subclass {
                parent: 0,
                provenance: Provenance::SceneName("coast".into()),
            },
            Subclass {
                parent: 0,
                provenance: Provenance::SceneName("forest".into()),
            },
            Subclass {
                parent: 1,
                provenance: Provenance::Identity,
            },
        ];
        let h = LabelHierarchy::new(2, subs, BTreeSet::from([0]), BTreeSet::from([1])).unwrap();
        assert_eq!(hierarchy_from_str(&hierarchy_to_string(&h)).unwrap(), h);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let h = sample_hierarchy(vec![1.0, 0.0, 0.0]);
        let text = hierarchy_to_string(&h);
        assert!(hierarchy_from_str(&text.replace("\"identity\"", "\"bogus\"")).is_err());
        assert!(hierarchy_from_str(&text.replace("\"n_subclasses\": 4", "\"n_subclasses\": 5")).is_err());
        assert!(hierarchy_from_str("{").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = sample_hierarchy(vec![1.0, 0.0, 0.0]);
        let b = sample_hierarchy(vec![0.0, 1.0, 0.0]);
        assert_eq!(hierarchy_digest(&a), hierarchy_digest(&a.clone()));
        assert_ne!(hierarchy_digest(&a), hierarchy_digest(&b));
        assert_eq!(hierarchy_digest(&a).len(), 64);
    }

    #[test]
    fn frequency_rows_sorted_descending() {
        let h = sample_hierarchy(vec![1.0, 0.0, 0.0]);
        let labels = [1, 1, 3, 1, 0, 3];
        let samples: Vec<TrainingSample> = labels
            .iter()
            .map(|&s| TrainingSample {
                image: 0,
                center: (0, 0),
                class_label: h.parent(s),
                subclass_label: Some(s),
            })
            .collect();
        assert_eq!(frequency_csv(&h, &samples), "subclass,parent,count\n1,0,3\n3,2,2\n0,0,1\n2,1,0\n");
    }
}
