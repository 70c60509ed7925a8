//! Model files: a JSON manifest (`model.json`) next to a raw little-endian `f32` blob
//! (`model.bin`). The manifest lists every tensor with its shape and byte offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BranchedNet, NetConfig, Tensor};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "gazebranch-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format: String,
    version: u32,
    config: NetConfig,
    blob: String,
    blob_bytes: u64,
    tensors: Vec<TensorEntry>,
}

/// Outcome of [`partial_load`]; names are target names except `unmatched`, which
/// lists donor names with no counterpart in the target net.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub transferred: Vec<String>,
    pub skipped_shape_mismatch: Vec<String>,
    pub unmatched: Vec<String>,
    /// Target tensors no donor tensor was mapped to.
    pub untouched: Vec<String>,
}

fn blob_path(manifest: &Path) -> Result<PathBuf> {
    if manifest.extension().is_some_and(|e| e == "bin") {
        return Err(Error::InvalidInput(format!(
            "{} would collide with its own blob; use a .json manifest path",
            manifest.display()
        )));
    }
    Ok(manifest.with_extension("bin"))
}

fn read_manifest(path: &Path) -> Result<(ModelManifest, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if m.format != MODEL_FORMAT {
        return Err(Error::Format(format!("{}: not a {MODEL_FORMAT} file", path.display())));
    }
    if m.version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            path.display(),
            m.version
        )));
    }
    if m.blob.contains(['/', '\\']) {
        return Err(Error::Format(format!("blob name `{}` must be a bare file name", m.blob)));
    }
    let bp = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if blob.len() as u64 != m.blob_bytes {
        return Err(Error::Format(format!(
            "{}: blob has {} bytes, manifest says {}",
            bp.display(),
            blob.len(),
            m.blob_bytes
        )));
    }
    Ok((m, blob))
}

fn check_layout(m: &ModelManifest) -> Result<()> {
    let mut end = 0u64;
    for t in &m.tensors {
        let bytes = 4 * t.shape.iter().product::<usize>() as u64;
        if t.offset != end || t.offset + bytes > m.blob_bytes {
            return Err(Error::Format(format!(
                "tensor `{}` at offset {} does not fit the blob layout",
                t.name, t.offset
            )));
        }
        end += bytes;
    }
    if end != m.blob_bytes {
        return Err(Error::Format(format!("tensors cover {end} of {} blob bytes", m.blob_bytes)));
    }
    Ok(())
}

fn decode(entry: &TensorEntry, blob: &[u8]) -> Result<Tensor<f32>> {
    let n: usize = entry.shape.iter().product();
    let start = entry.offset as usize;
    let data = blob[start..start + 4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(entry.shape.clone(), data)
}

impl BranchedNet<f32> {
    /// Writes `path` (manifest) and `path.with_extension("bin")` (blob).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bp = blob_path(path)?;
        let mut blob = Vec::with_capacity(self.num_params() * 4);
        let mut tensors = Vec::new();
        for (name, t) in self.tensors() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            config: self.config().clone(),
            blob: bp
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::InvalidInput(format!("bad model path {}", path.display())))?
                .to_string(),
            blob_bytes: blob.len() as u64,
            tensors,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("model manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, blob) = read_manifest(path)?;
        let mut net = BranchedNet::<f32>::zeros(m.config.clone())?;
        let entries: BTreeMap<&str, &TensorEntry> = m.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if entries.len() != m.tensors.len() {
            return Err(Error::Format("duplicate tensor names in manifest".into()));
        }
        let expected = net.tensors().len();
        for (name, t) in net.tensors() {
            if let Some(e) = entries.get(name.as_str()) {
                if e.shape != t.shape() {
                    return Err(Error::Shape(format!(
                        "tensor `{name}` has shape {:?} in the file, config implies {:?}",
                        e.shape,
                        t.shape()
                    )));
                }
            }
        }
        check_layout(&m)?;
        for (name, t) in net.tensors_mut() {
            let e = entries
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("tensor `{name}` missing from {}", path.display())))?;
            *t = decode(e, &blob)?;
        }
        if entries.len() != expected {
            return Err(Error::Format(format!(
                "{} lists {} tensors, config implies {expected}",
                path.display(),
                entries.len()
            )));
        }
        Ok(net)
    }
}

/// Copies every donor tensor whose (mapped) name exists in `net` with the same shape.
/// `name_map` renames donor tensors; names absent from the map keep their own name.
pub fn partial_load(net: &mut BranchedNet<f32>, path: &Path, name_map: &BTreeMap<String, String>) -> Result<LoadReport> {
    let (m, blob) = read_manifest(path)?;
    check_layout(&m)?;
    let mut report = LoadReport::default();
    let mut targets: BTreeMap<String, &mut Tensor<f32>> = net.tensors_mut().into_iter().collect();
    let mut touched = Vec::new();
    for e in &m.tensors {
        let target = name_map.get(&e.name).cloned().unwrap_or_else(|| e.name.clone());
        match targets.get_mut(&target) {
            None => report.unmatched.push(e.name.clone()),
            Some(t) if t.shape() != e.shape.as_slice() => report.skipped_shape_mismatch.push(target),
            Some(t) => {
                **t = decode(e, &blob)?;
                touched.push(target.clone());
                report.transferred.push(target);
            }
        }
    }
    report.untouched = targets.into_keys().filter(|n| !touched.contains(n)).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterId;
    use crate::geometry::Angles;

    fn net(seed: u64) -> BranchedNet<f32> {
        BranchedNet::new(NetConfig::tiny(), seed).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a/model.json");
        let b = dir.path().join("b/model.json");
        let n = net(1);
        n.save(&a).unwrap();
        let back = BranchedNet::load(&a).unwrap();
        assert_eq!(back, n);
        back.save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(a.with_extension("bin")).unwrap(), fs::read(b.with_extension("bin")).unwrap());
        assert!(n.save(&dir.path().join("x.bin")).is_err());
    }

    #[test]
    fn manifest_lists_one_pair_per_head() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        net(2).save(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        let names: Vec<&str> = v["tensors"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
        let fc7 = names.iter().filter(|n| n.starts_with("fc7_") && n.ends_with(".weight")).count();
        let fc8 = names.iter().filter(|n| n.starts_with("fc8_") && n.ends_with(".weight")).count();
        assert_eq!((fc7, fc8), (3, 3));
        assert_eq!(v["version"], 1);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        net(3).save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["tensors"][0]["shape"] = serde_json::json!([3, 1, 3, 2]);
        fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(BranchedNet::load(&p), Err(Error::Shape(_))));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(7);
        fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(BranchedNet::load(&p), Err(Error::Format(_))));

        fs::write(&p, &text).unwrap();
        let bp = p.with_extension("bin");
        let mut blob = fs::read(&bp).unwrap();
        blob.pop();
        fs::write(&bp, &blob).unwrap();
        assert!(matches!(BranchedNet::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn partial_load_reports() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("donor.json");
        let donor = net(4);
        donor.save(&p).unwrap();

        let mut same = net(5);
        let r = partial_load(&mut same, &p, &BTreeMap::new()).unwrap();
        assert_eq!(r.transferred.len(), donor.tensors().len());
        assert!(r.skipped_shape_mismatch.is_empty() && r.unmatched.is_empty() && r.untouched.is_empty());
        assert_eq!(same, donor);

        let mut wider_cfg = NetConfig::tiny();
        wider_cfg.fc6_dim = 9;
        wider_cfg.k = 4;
        let mut wider = BranchedNet::<f32>::new(wider_cfg, 6).unwrap();
        let r = partial_load(&mut wider, &p, &BTreeMap::new()).unwrap();
        assert!(r.transferred.iter().filter(|n| n.starts_with("conv")).count() == 10);
        for n in ["fc6.weight", "fc6.bias", "skip.weight", "fc7_1.weight"] {
            assert!(r.skipped_shape_mismatch.contains(&n.to_string()), "{n}");
        }
        assert!(r.transferred.contains(&"fc8_1.weight".to_string()));
        assert!(r.untouched.contains(&"fc7_4.weight".to_string()));

        let map = BTreeMap::from([("fc7_1.weight".to_string(), "renamed".to_string())]);
        let mut again = net(7);
        let r = partial_load(&mut again, &p, &map).unwrap();
        assert_eq!(r.unmatched, vec!["fc7_1.weight".to_string()]);
        assert_eq!(r.untouched, vec!["fc7_1.weight".to_string()]);
    }

    #[test]
    fn donor_trunk_with_zero_heads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("donor.json");
        let donor = net(8);
        donor.save(&p).unwrap();
        let map: BTreeMap<String, String> = donor
            .tensors()
            .into_iter()
            .filter(|(n, _)| n.starts_with("fc7_") || n.starts_with("fc8_"))
            .map(|(n, _)| (n, "dropped".to_string()))
            .collect();
        let mut target = BranchedNet::<f32>::zeros(NetConfig::tiny()).unwrap();
        partial_load(&mut target, &p, &map).unwrap();
        let x = Tensor::new(vec![1, 1, 6, 8], (0..48).map(|i| (i as f32 * 0.3).sin()).collect()).unwrap();
        let h = [Angles { pitch: 0.1, yaw: 0.2 }];
        let id = ClusterId::new(2).unwrap();
        let a = donor.forward_cached(&x, &h, id).unwrap();
        let b = target.forward_cached(&x, &h, id).unwrap();
        assert_eq!(a.fc6(), b.fc6());
        assert_eq!(b.outputs(), &[[0.0, 0.0]]);
    }
}
