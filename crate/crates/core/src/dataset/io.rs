//! CSV persistence with a sibling JSON manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub generator_params: Map<String, Value>,
    pub intrinsic_dim: Option<usize>,
    pub seed: Option<u64>,
}

/// `points.csv` -> `points.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    csv.with_file_name(format!("{stem}.manifest.json"))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for p in ds.rows() {
        line.clear();
        for (j, v) in p.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            // 17 significant digits round-trip every f64
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let manifest = Manifest {
        name: ds.name.clone(),
        generator_params: ds.generator_params.clone(),
        intrinsic_dim: ds.intrinsic_dim,
        seed: ds.seed,
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: mpath.clone(), source: e })?;
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

/// Loads a dataset CSV. A missing manifest is not an error: metadata is left
/// empty and `manifest_missing` is set.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let d = rdr.headers().map_err(|e| csv_error(path, 0, e))?.len();
    let mut pts = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, row, e))?;
        if rec.len() != d {
            return Err(Error::Csv { path: path.into(), row, msg: format!("{} fields, expected {d}", rec.len()) });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                path: path.into(),
                row,
                msg: format!("not a number: {field:?}"),
            })?;
            pts.push(v);
        }
    }
    let mut ds = Dataset::new(pts, d)?;
    let mpath = manifest_path(path);
    match std::fs::read_to_string(&mpath) {
        Ok(text) => {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json { path: mpath, source: e })?;
            ds.name = m.name;
            ds.generator_params = m.generator_params;
            ds.intrinsic_dim = m.intrinsic_dim;
            ds.seed = m.seed;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("{}: no manifest, loading without metadata", path.display());
            ds.manifest_missing = true;
        }
        Err(e) => return Err(Error::io(mpath, e)),
    }
    Ok(ds)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => return Error::io(path, io),
            _ => unreachable!(),
        }
    }
    Error::Csv { path: path.into(), row, msg: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TargetSpec;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roll.csv");
        let mut ds = TargetSpec::SwissRoll2d.sample(200, 3).unwrap();
        // awkward values
        ds = ds.map_points(|a, b| {
            b[0] = a[0] * 1e-300;
            b[1] = a[1] / 3.0;
        }).unwrap();
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(
            ds.points().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.points().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.name, "swiss_roll_2d");
        assert_eq!(back.intrinsic_dim, Some(1));
        assert_eq!(back.seed, Some(3));
        assert!(!back.manifest_missing);
    }

    #[test]
    fn missing_manifest_sets_flag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.csv");
        std::fs::write(&p, "x0,x1\n1,2\n3,4\n").unwrap();
        let ds = load_dataset(&p).unwrap();
        assert!(ds.manifest_missing);
        assert_eq!(ds.name, "");
        assert_eq!(ds.points(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn malformed_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x0,x1\n1,2\n3,oops\n").unwrap();
        match load_dataset(&p) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "x0,x1\n1,2\n3\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Csv { row: 1, .. })));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_dataset(Path::new("/nonexistent/q.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/q.csv"));
    }
}
