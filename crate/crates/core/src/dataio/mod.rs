//! Dataset container: samples, their eye images, and the on-disk layout
//!
//! ```text
//! root/manifest.json     image dims, channels, format version, generator hash
//! root/index.jsonl       one Sample per line, angles in radians
//! root/images/<id>.pgm   P5 for 1-channel datasets, P6 (.ppm) for RGB
//! ```

mod container;
mod ingest;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterId;
use crate::error::{Error, Result};
use crate::geometry::{mirror_sample, Angles};
use crate::image::EyeImage;

pub use container::{read_dataset, write_dataset, INDEX_FILE, MANIFEST_FILE};
pub use ingest::{ingest_external, AngleUnits, ColumnMapping, IngestSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EyeSide {
    L,
    R,
}

/// One labeled eye image. `eye` is the side as captured; `mirrored` marks samples that
/// were flipped into the left-eye frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub subject: String,
    pub eye: EyeSide,
    pub head: Angles,
    pub gaze: Angles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterId>,
    /// Root-relative path with forward slashes.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illum: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub mirrored: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Sample {
    pub fn new(id: impl Into<String>, subject: impl Into<String>, head: Angles, gaze: Angles) -> Self {
        Sample {
            id: id.into(),
            subject: subject.into(),
            eye: EyeSide::L,
            head,
            gaze,
            cluster: None,
            image: String::new(),
            illum: None,
            mirrored: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_config_hash: Option<String>,
    /// Original `(width, height)` when images were resampled after capture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resized_from: Option<(usize, usize)>,
}

/// Validated, id-ordered collection of samples and images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    samples: Vec<Sample>,
    images: Vec<EyeImage>,
}

/// SHA-256 (hex) of the compact JSON form of a configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(cfg).expect("configuration serializes to JSON");
    hex::encode(Sha256::digest(&json))
}

pub(crate) fn image_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
        && !id.starts_with('.')
}

impl Dataset {
    /// Builds a dataset, sorting by id and assigning canonical image paths.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        entries: Vec<(Sample, EyeImage)>,
    ) -> Result<Self> {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let ext = image_extension(channels);
        let mut samples = Vec::with_capacity(entries.len());
        let mut images = Vec::with_capacity(entries.len());
        for (mut s, img) in entries {
            s.image = format!("images/{}.{ext}", s.id);
            samples.push(s);
            images.push(img);
        }
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            width,
            height,
            channels,
            count: samples.len(),
            generator_config_hash: None,
            resized_from: None,
        };
        Self::from_parts(manifest, samples, images)
    }

    pub(crate) fn from_parts(
        manifest: DatasetManifest,
        samples: Vec<Sample>,
        images: Vec<EyeImage>,
    ) -> Result<Self> {
        let ds = Dataset {
            manifest,
            samples,
            images,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.channels != 1 && m.channels != 3 {
            return Err(Error::InvalidInput(format!(
                "unsupported channel count {}",
                m.channels
            )));
        }
        if m.count != self.samples.len() || self.samples.len() != self.images.len() {
            return Err(Error::InvalidInput(format!(
                "manifest count {} vs {} samples / {} images",
                m.count,
                self.samples.len(),
                self.images.len()
            )));
        }
        let mut prev: Option<&str> = None;
        for (s, img) in self.samples.iter().zip(&self.images) {
            if !valid_id(&s.id) {
                return Err(Error::InvalidInput(format!("invalid sample id `{}`", s.id)));
            }
            if let Some(p) = prev {
                if p == s.id {
                    return Err(Error::InvalidInput(format!("duplicate sample id `{}`", s.id)));
                }
                if p > s.id.as_str() {
                    return Err(Error::InvalidInput(format!(
                        "samples not ordered by id at `{}`",
                        s.id
                    )));
                }
            }
            prev = Some(&s.id);
            s.head
                .validate()
                .map_err(|e| Error::InvalidInput(format!("sample `{}` head: {e}", s.id)))?;
            s.gaze
                .validate()
                .map_err(|e| Error::InvalidInput(format!("sample `{}` gaze: {e}", s.id)))?;
            if (img.width(), img.height(), img.channels()) != (m.width, m.height, m.channels) {
                return Err(Error::Shape(format!(
                    "sample `{}` image is {}x{}x{}, dataset declares {}x{}x{}",
                    s.id,
                    img.width(),
                    img.height(),
                    img.channels(),
                    m.width,
                    m.height,
                    m.channels
                )));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn width(&self) -> usize {
        self.manifest.width
    }

    pub fn height(&self) -> usize {
        self.manifest.height
    }

    pub fn channels(&self) -> usize {
        self.manifest.channels
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn images(&self) -> &[EyeImage] {
        &self.images
    }

    pub fn get(&self, i: usize) -> (&Sample, &EyeImage) {
        (&self.samples[i], &self.images[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, &EyeImage)> {
        self.samples.iter().zip(&self.images)
    }

    pub fn with_generator_hash(mut self, hash: impl Into<String>) -> Self {
        self.manifest.generator_config_hash = Some(hash.into());
        self
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.subject.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn indices_of_subject(&self, subject: &str) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].subject == subject)
            .collect()
    }

    /// New dataset holding the given rows (order normalized by id).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let entries = indices
            .iter()
            .map(|&i| (self.samples[i].clone(), self.images[i].clone()))
            .collect();
        let mut ds = Dataset::new(self.width(), self.height(), self.channels(), entries)?;
        ds.manifest.generator_config_hash = self.manifest.generator_config_hash.clone();
        ds.manifest.resized_from = self.manifest.resized_from;
        Ok(ds)
    }

    pub fn filter_subjects(&self, keep: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.samples[i].subject))
            .collect();
        self.subset(&idx)
    }

    /// Same dataset with `cluster` set on every sample.
    pub fn with_clusters(&self, clusters: &[ClusterId]) -> Result<Dataset> {
        if clusters.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} cluster ids for {} samples",
                clusters.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (s, &c) in out.samples.iter_mut().zip(clusters) {
            s.cluster = Some(c);
        }
        Ok(out)
    }

    /// Flips every right-eye sample into the left-eye frame.
    pub fn mirror_right_eyes(&self) -> Dataset {
        let mut out = self.clone();
        for (s, img) in out.samples.iter_mut().zip(out.images.iter_mut()) {
            if s.eye == EyeSide::R && !s.mirrored {
                let (m, h, g) = mirror_sample(img, s.head, s.gaze);
                *img = m;
                s.head = h;
                s.gaze = g;
                s.mirrored = true;
            }
        }
        out
    }

    /// Resamples all images to `width x height`, recording the original size.
    pub fn resized(&self, width: usize, height: usize) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .map(|img| img.resized(width, height))
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.resized_from = manifest
            .resized_from
            .or(Some((self.width(), self.height())));
        manifest.width = width;
        manifest.height = height;
        Dataset::from_parts(manifest, self.samples.clone(), images)
    }

    /// Concatenates two datasets with the same image format; ids must not collide.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if (self.width(), self.height(), self.channels())
            != (other.width(), other.height(), other.channels())
        {
            return Err(Error::Shape("cannot concatenate datasets of different image formats".into()));
        }
        let entries = self
            .iter()
            .chain(other.iter())
            .map(|(s, i)| (s.clone(), i.clone()))
            .collect();
        Dataset::new(self.width(), self.height(), self.channels(), entries)
    }
}
