use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, DatasetManifest, Sample, DATASET_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::image::EyeImage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.jsonl";

/// Writes the container under `root`, creating directories as needed.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(ds.manifest())
        .map_err(|e| Error::json("serializing dataset manifest", e))?;
    fs::write(&manifest_path, manifest + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let index_path = root.join(INDEX_FILE);
    let file = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut w = BufWriter::new(file);
    for (s, img) in ds.iter() {
        let line = serde_json::to_string(s).map_err(|e| Error::json("serializing sample", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(&index_path, e))?;
        img.write_pnm(&root.join(&s.image))?;
    }
    w.flush().map_err(|e| Error::io(&index_path, e))?;
    Ok(())
}

/// Reads and fully validates a container.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::json(format!("{}", manifest_path.display()), e))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }

    let index_path = root.join(INDEX_FILE);
    let file = fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut samples = Vec::new();
    let mut images = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", index_path.display(), lineno + 1))
        })?;
        if sample.image.contains('\\') || sample.image.starts_with('/') || sample.image.contains("..") {
            return Err(Error::Format(format!(
                "{}:{}: image path `{}` must be root-relative with forward slashes",
                index_path.display(),
                lineno + 1,
                sample.image
            )));
        }
        let img = EyeImage::read_pnm(&root.join(&sample.image))
            .map_err(|e| Error::Format(format!("sample `{}`: {e}", sample.id)))?;
        samples.push(sample);
        images.push(img);
    }
    if manifest.count != samples.len() {
        return Err(Error::Format(format!(
            "manifest declares {} samples, index has {}",
            manifest.count,
            samples.len()
        )));
    }
    Dataset::from_parts(manifest, samples, images)
}
