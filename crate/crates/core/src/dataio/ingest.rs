use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_dataset, Dataset, EyeSide, Sample, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::geometry::Angles;
use crate::image::EyeImage;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnits {
    #[default]
    Radians,
    Degrees,
}

/// Column names in the source table for each sample field. `eye` and `illum` are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub id: Option<String>,
    pub subject: Option<String>,
    pub image: Option<String>,
    pub head_pitch: Option<String>,
    pub head_yaw: Option<String>,
    pub gaze_pitch: Option<String>,
    pub gaze_yaw: Option<String>,
    #[serde(default)]
    pub eye: Option<String>,
    #[serde(default)]
    pub illum: Option<String>,
}

/// How to read an external directory of normalized eye crops plus a label table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    /// Label table path relative to the source directory.
    pub table: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub columns: ColumnMapping,
    #[serde(default)]
    pub units: AngleUnits,
    /// Flip right-eye crops into the left-eye frame.
    #[serde(default)]
    pub mirror_right: bool,
    /// Resample every crop to `(width, height)`; recorded in the manifest.
    #[serde(default)]
    pub resize: Option<(usize, usize)>,
}

fn default_delimiter() -> char {
    ','
}

/// Converts an external dataset into the native container.
///
/// With `spec == None` the directory must already be a native container, which is
/// returned unchanged.
pub fn ingest_external(dir: &Path, spec: Option<&IngestSpec>) -> Result<Dataset> {
    let Some(spec) = spec else {
        if dir.join(MANIFEST_FILE).exists() {
            return read_dataset(dir);
        }
        return Err(Error::InvalidInput(format!(
            "{} is not a native container and no column mapping was given",
            dir.display()
        )));
    };

    let cols = &spec.columns;
    let required = [
        ("id", &cols.id),
        ("subject", &cols.subject),
        ("image", &cols.image),
        ("head_pitch", &cols.head_pitch),
        ("head_yaw", &cols.head_yaw),
        ("gaze_pitch", &cols.gaze_pitch),
        ("gaze_yaw", &cols.gaze_yaw),
    ];
    for (field, col) in required {
        if col.is_none() {
            return Err(Error::InvalidInput(format!("unmapped required field `{field}`")));
        }
    }
    if !spec.delimiter.is_ascii() {
        return Err(Error::InvalidInput("delimiter must be an ASCII character".into()));
    }

    let table_path = dir.join(&spec.table);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(&table_path)
        .map_err(|e| Error::Format(format!("{}: {e}", table_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", table_path.display())))?
        .clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => position
                .get(n.as_str())
                .copied()
                .map(Some)
                .ok_or_else(|| Error::InvalidInput(format!("column `{n}` not found in {}", table_path.display()))),
        }
    };
    let c_id = column(&cols.id)?.unwrap();
    let c_subject = column(&cols.subject)?.unwrap();
    let c_image = column(&cols.image)?.unwrap();
    let c_hp = column(&cols.head_pitch)?.unwrap();
    let c_hy = column(&cols.head_yaw)?.unwrap();
    let c_gp = column(&cols.gaze_pitch)?.unwrap();
    let c_gy = column(&cols.gaze_yaw)?.unwrap();
    let c_eye = column(&cols.eye)?;
    let c_illum = column(&cols.illum)?;

    let mut entries = Vec::new();
    let mut format: Option<(usize, usize, usize)> = None;
    let mut original_size: Option<(usize, usize)> = None;
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::Format(format!("{}:{line}: {e}", table_path.display())))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let angle = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i);
            let v: f64 = raw.parse().map_err(|_| {
                Error::Format(format!("{}:{line}: `{raw}` is not a number ({name})", table_path.display()))
            })?;
            match spec.units {
                AngleUnits::Radians => {
                    if v.abs() > PI {
                        return Err(Error::UnitMismatch {
                            column: headers.get(i).unwrap_or(name).to_string(),
                            value: v,
                        });
                    }
                    Ok(v)
                }
                AngleUnits::Degrees => Ok(v.to_radians()),
            }
        };
        let head = Angles::new(angle(c_hp, "head_pitch")?, angle(c_hy, "head_yaw")?)?;
        let gaze = Angles::new(angle(c_gp, "gaze_pitch")?, angle(c_gy, "gaze_yaw")?)?;
        let mut sample = Sample::new(field(c_id), field(c_subject), head, gaze);
        if let Some(ce) = c_eye {
            sample.eye = match field(ce).to_ascii_lowercase().as_str() {
                "l" | "left" => EyeSide::L,
                "r" | "right" => EyeSide::R,
                other => {
                    return Err(Error::Format(format!(
                        "{}:{line}: unknown eye side `{other}`",
                        table_path.display()
                    )))
                }
            };
        }
        if let Some(ci) = c_illum {
            let raw = field(ci);
            if !raw.is_empty() {
                sample.illum = Some(raw.parse().map_err(|_| {
                    Error::Format(format!("{}:{line}: bad illum `{raw}`", table_path.display()))
                })?);
            }
        }
        let mut img = EyeImage::read_pnm(&dir.join(field(c_image)))
            .map_err(|e| Error::Format(format!("sample `{}`: {e}", sample.id)))?;
        if let Some((w, h)) = spec.resize {
            original_size.get_or_insert((img.width(), img.height()));
            img = img.resized(w, h)?;
        }
        let f = (img.width(), img.height(), img.channels());
        match format {
            None => format = Some(f),
            Some(prev) if prev != f => {
                return Err(Error::Shape(format!(
                    "sample `{}` image is {}x{}x{}, earlier images are {}x{}x{}",
                    sample.id, f.0, f.1, f.2, prev.0, prev.1, prev.2
                )))
            }
            _ => {}
        }
        entries.push((sample, img));
    }

    let (w, h, c) = format.unwrap_or((1, 1, 1));
    let mut ds = Dataset::new(w, h, c, entries)?;
    ds.manifest.resized_from = original_size;
    Ok(if spec.mirror_right {
        ds.mirror_right_eyes()
    } else {
        ds
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn mapping() -> ColumnMapping {
        ColumnMapping {
            id: Some("name".into()),
            subject: Some("person".into()),
            image: Some("file".into()),
            head_pitch: Some("hp".into()),
            head_yaw: Some("hy".into()),
            gaze_pitch: Some("gp".into()),
            gaze_yaw: Some("gy".into()),
            eye: Some("side".into()),
            illum: None,
        }
    }

    fn fixture(dir: &Path, yaw_value: &str) {
        fs::create_dir_all(dir.join("crops")).unwrap();
        let mut csv = String::from("name,person,side,file,hp,hy,gp,gy\n");
        for i in 0..6u8 {
            let img = EyeImage::from_raw(3, 2, 1, vec![i, i + 10, i + 20, i + 30, i + 40, i + 50]).unwrap();
            img.write_pnm(&dir.join(format!("crops/{i}.pgm"))).unwrap();
            let side = if i % 2 == 0 { "L" } else { "R" };
            let yaw = if i == 0 { yaw_value.to_string() } else { format!("0.{i}") };
            csv.push_str(&format!("e{i},p{},{side},crops/{i}.pgm,-0.1,{yaw},0.05,-0.{i}\n", i / 3));
        }
        fs::write(dir.join("labels.csv"), csv).unwrap();
    }

    fn spec() -> IngestSpec {
        IngestSpec {
            table: "labels.csv".into(),
            delimiter: ',',
            columns: mapping(),
            units: AngleUnits::Radians,
            mirror_right: false,
            resize: None,
        }
    }

    #[test]
    fn toy_tree_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0.0");
        let ds = ingest_external(dir.path(), Some(&spec())).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.subjects(), vec!["p0".to_string(), "p1".to_string()]);
        let (s, img) = ds.get(3);
        assert_eq!(s.id, "e3");
        assert_eq!(s.subject, "p1");
        assert_eq!(s.eye, EyeSide::R);
        assert_eq!(s.head, Angles { pitch: -0.1, yaw: 0.3 });
        assert_eq!(s.gaze, Angles { pitch: 0.05, yaw: -0.3 });
        assert_eq!(img.data(), &[3, 13, 23, 33, 43, 53]);
        assert!(!s.mirrored);
    }

    #[test]
    fn mirroring_flips_right_eyes() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0.0");
        let mut sp = spec();
        sp.mirror_right = true;
        let ds = ingest_external(dir.path(), Some(&sp)).unwrap();
        let (s, img) = ds.get(3);
        assert!(s.mirrored);
        assert_eq!(s.eye, EyeSide::R);
        assert_eq!(s.head.yaw, -0.3);
        assert_eq!(s.gaze.yaw, 0.3);
        assert_eq!(img.data(), &[23, 13, 3, 53, 43, 33]);
        let (l, _) = ds.get(2);
        assert!(!l.mirrored);
    }

    #[test]
    fn degrees_are_guarded() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "30.0");
        let err = ingest_external(dir.path(), Some(&spec())).unwrap_err();
        assert!(matches!(err, Error::UnitMismatch { .. }), "{err}");

        let mut sp = spec();
        sp.units = AngleUnits::Degrees;
        let ds = ingest_external(dir.path(), Some(&sp)).unwrap();
        assert!((ds.get(0).0.head.yaw - 30f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn unmapped_field_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0.0");
        let mut sp = spec();
        sp.columns.gaze_yaw = None;
        let err = ingest_external(dir.path(), Some(&sp)).unwrap_err().to_string();
        assert!(err.contains("gaze_yaw"), "{err}");
        sp.columns.gaze_yaw = Some("nope".into());
        assert!(ingest_external(dir.path(), Some(&sp)).is_err());
    }

    #[test]
    fn native_container_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0.0");
        let ds = ingest_external(dir.path(), Some(&spec())).unwrap();
        let native = tempfile::tempdir().unwrap();
        crate::dataio::write_dataset(&ds, native.path()).unwrap();
        let again = ingest_external(native.path(), None).unwrap();
        assert_eq!(again, ds);
    }
}
