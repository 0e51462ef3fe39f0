//! Dataset layout: `<root>/images/<split>/<index>.png` plus one JSON
//! annotation document per split at `<root>/annotations/<split>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{ObjectInstance, SceneSample};
use super::mask::BinaryMask;
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    schema_version: u32,
    samples: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    index: usize,
    image: String,
    objects: Vec<ObjectInstance>,
    masks: Vec<BinaryMask>,
    head_box: BoxXyxy,
    gaze_vector: [f64; 2],
    gaze_point: [f64; 2],
    gaze_object_id: usize,
}

fn annotation_path(root: &Path, split: &str) -> PathBuf {
    root.join("annotations").join(format!("{split}.json"))
}

pub fn write_dataset(samples: &[SceneSample], root: &Path, split: &str) -> Result<()> {
    let image_dir = root.join("images").join(split);
    fs::create_dir_all(&image_dir)?;
    fs::create_dir_all(root.join("annotations"))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("images/{split}/{}.png", s.index);
        s.image.save(root.join(&rel))?;
        records.push(Record {
            index: s.index,
            image: rel,
            objects: s.objects.clone(),
            masks: s.object_masks.clone(),
            head_box: s.head_box,
            gaze_vector: s.gaze_vector,
            gaze_point: s.gaze_point,
            gaze_object_id: s.gaze_object_id,
        });
    }
    let doc = Document { schema_version: SCHEMA_VERSION, samples: records };
    fs::write(annotation_path(root, split), serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

pub fn read_dataset(root: &Path, split: &str) -> Result<Vec<SceneSample>> {
    let path = annotation_path(root, split);
    let bytes = fs::read(&path).map_err(|e| Error::Dataset { path: path.clone(), msg: e.to_string() })?;
    let doc: Document =
        serde_json::from_slice(&bytes).map_err(|e| Error::Dataset { path: path.clone(), msg: e.to_string() })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: doc.schema_version, expected: SCHEMA_VERSION });
    }
    doc.samples
        .into_iter()
        .map(|r| {
            let image_path = root.join(&r.image);
            let image = image::open(&image_path)
                .map_err(|e| Error::Dataset { path: image_path.clone(), msg: e.to_string() })?
                .to_rgb8();
            if r.gaze_object_id >= r.objects.len() || r.masks.len() != r.objects.len() {
                return Err(Error::Dataset { path: path.clone(), msg: format!("sample {} is inconsistent", r.index) });
            }
            Ok(SceneSample {
                index: r.index,
                image,
                objects: r.objects,
                head_box: r.head_box,
                gaze_vector: r.gaze_vector,
                gaze_point: r.gaze_point,
                gaze_object_id: r.gaze_object_id,
                object_masks: r.masks,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig { seed: 3, ..Default::default() };
        let samples: Vec<_> = (0..8).map(|i| generate_scene(&cfg, i).unwrap()).collect();
        write_dataset(&samples, dir.path(), "train").unwrap();
        let back = read_dataset(dir.path(), "train").unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert_eq!(a.image.as_raw(), b.image.as_raw());
            assert_eq!(a.objects, b.objects);
            assert_eq!(a.object_masks, b.object_masks);
            assert_eq!(a.head_box, b.head_box);
            assert_eq!(a.gaze_vector, b.gaze_vector);
            assert_eq!(a.gaze_point, b.gaze_point);
            assert_eq!(a.gaze_object_id, b.gaze_object_id);
            for k in 0..2 {
                assert_eq!(format!("{:.6}", a.gaze_point[k]), format!("{:.6}", b.gaze_point[k]));
            }
        }
    }

    #[test]
    fn unknown_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("annotations")).unwrap();
        fs::write(annotation_path(dir.path(), "x"), r#"{"schema_version": 9, "samples": []}"#).unwrap();
        assert!(matches!(read_dataset(dir.path(), "x"), Err(Error::SchemaVersion { found: 9, .. })));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path(), "nope"), Err(Error::Dataset { .. })));
    }
}
