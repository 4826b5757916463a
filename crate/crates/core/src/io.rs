//! Dataset CSV files and run configuration.
//!
//! Data files have the header `x,y,value` with an optional `holdout`
//! column; row order is the observation index order. Target files need
//! only `x,y`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::blocks_for_size;
use crate::kernels::KernelSpec;
use crate::optimizer::TrustRegionConfig;
use crate::scaling::ScalingConfig;
use crate::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub coords: Vec<Point>,
    pub values: Vec<f64>,
    pub holdout: Option<Vec<bool>>,
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" | "" => Ok(false),
        other => Err(invalid(format!("holdout flag must be 0/1 or true/false, got {other:?}"))),
    }
}

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| invalid(format!("row {row}: cannot parse {what} {s:?}")))
}

/// Opens `path`, naming it in the error.
fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

impl Dataset {
    pub fn new(coords: Vec<Point>, values: Vec<f64>, holdout: Option<Vec<bool>>) -> Result<Self> {
        let d = Dataset { coords, values, holdout };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(invalid("dataset has no rows"));
        }
        if self.coords.len() != self.values.len() {
            return Err(invalid("coordinates and values differ in length"));
        }
        if self.coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if self.values.iter().any(|v| v.is_nan()) {
            return Err(invalid("values must not be NaN"));
        }
        if let Some(m) = &self.holdout {
            if m.len() != self.coords.len() {
                return Err(invalid("holdout mask length differs from the number of rows"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_mask = match names.as_slice() {
            ["x", "y", "value"] => false,
            ["x", "y", "value", "holdout"] => true,
            _ => return Err(invalid(format!("expected header x,y,value[,holdout], got {}", names.join(",")))),
        };
        let mut coords = Vec::new();
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            coords.push([parse_f64(&rec[0], "x", row)?, parse_f64(&rec[1], "y", row)?]);
            values.push(parse_f64(&rec[2], "value", row)?);
            if with_mask {
                mask.push(parse_flag(&rec[3])?);
            }
        }
        Dataset::new(coords, values, with_mask.then_some(mask))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(open(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.holdout.is_some() {
            w.write_record(["x", "y", "value", "holdout"])?;
        } else {
            w.write_record(["x", "y", "value"])?;
        }
        for i in 0..self.len() {
            let mut rec = vec![fmt(self.coords[i][0]), fmt(self.coords[i][1]), fmt(self.values[i])];
            if let Some(m) = &self.holdout {
                rec.push(if m[i] { "1".into() } else { "0".into() });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Splits into (training, held-out) subsets. Without a mask everything
    /// is training data.
    pub fn split(&self) -> (Dataset, Dataset) {
        let mask = self.holdout.clone().unwrap_or_else(|| vec![false; self.len()]);
        let pick = |keep: bool| {
            let idx: Vec<usize> = (0..self.len()).filter(|&i| mask[i] == keep).collect();
            Dataset {
                coords: idx.iter().map(|&i| self.coords[i]).collect(),
                values: idx.iter().map(|&i| self.values[i]).collect(),
                holdout: None,
            }
        };
        (pick(false), pick(true))
    }
}

/// Target locations from a CSV file with `x` and `y` columns. An empty file
/// or a header-only file gives no targets.
pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let (cx, cy) = match (column(&headers, "x"), column(&headers, "y")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(invalid("target file needs x and y columns")),
    };
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let p = [parse_f64(&rec[cx], "x", row)?, parse_f64(&rec[cy], "y", row)?];
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(invalid(format!("row {row}: coordinates must be finite")));
        }
        out.push(p);
    }
    Ok(out)
}

/// Shortest representation that parses back to the same value.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a numeric table with the given header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|v| fmt(*v)).collect()).collect();
    write_records(path, header, &text)
}

pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}

pub fn holdout_mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(invalid("prediction and truth differ in length"));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    /// Fitted parameters (a fit report or a bare kernel spec).
    pub params: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Kernel used directly by prediction, simulation and diagnostics, and
    /// as the starting point of stationary fits.
    pub kernel: KernelSpec,
    /// Target block size used when `num_blocks` is not given.
    pub block_size: usize,
    pub num_blocks: Option<usize>,
    pub num_landmarks: usize,
    /// Number of regions for local fits, and of anisotropy centers.
    pub num_centers: usize,
    /// Nugget as a fraction of the variance in nonstationary fits.
    pub nugget_ratio: f64,
    pub trust_region: TrustRegionConfig,
    /// Seed for data generation and simulation.
    pub seed: u64,
    /// Draws written by `simulate`.
    pub num_draws: usize,
    /// Eigenpairs used by `diagnose`.
    pub num_eigenpairs: usize,
    pub bench: ScalingConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelSpec::stationary(1.0, 0.1, 1.0, 1e-4),
            block_size: 128,
            num_blocks: None,
            num_landmarks: 32,
            num_centers: 4,
            nugget_ratio: 1e-2,
            trust_region: TrustRegionConfig::default(),
            seed: 0,
            num_draws: 100,
            num_eigenpairs: 100,
            bench: ScalingConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.trust_region.validate()?;
        if self.block_size == 0 {
            return Err(invalid("block_size must be positive"));
        }
        if self.num_blocks == Some(0) {
            return Err(invalid("num_blocks must be positive"));
        }
        if self.num_centers == 0 {
            return Err(invalid("num_centers must be positive"));
        }
        if !(self.nugget_ratio >= 0.0) {
            return Err(invalid("nugget_ratio must be nonnegative"));
        }
        if self.num_eigenpairs == 0 {
            return Err(invalid("num_eigenpairs must be positive"));
        }
        if self.bench.sizes.is_empty() || self.bench.block_size == 0 {
            return Err(invalid("bench needs at least one size and a positive block_size"));
        }
        Ok(())
    }

    pub fn blocks_for(&self, n: usize) -> usize {
        self.num_blocks.unwrap_or_else(|| blocks_for_size(n, self.block_size))
    }

    /// Copy with every data-dependent default filled in for `n` rows.
    pub fn resolved(&self, n: usize) -> RunConfig {
        let mut c = self.clone();
        c.num_blocks = Some(self.blocks_for(n));
        c.num_landmarks = self.num_landmarks.min(n);
        c.num_eigenpairs = self.num_eigenpairs.min(n);
        c
    }
}

/// JSON Schema of [`RunConfig`].
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip() {
        let text = "x,y,value,holdout\n0.1,0.2,1.5,0\n0.3,0.4,-2,1\n";
        let d = Dataset::from_reader(text.as_bytes()).unwrap();
        assert_eq!(d.coords, vec![[0.1, 0.2], [0.3, 0.4]]);
        assert_eq!(d.holdout, Some(vec![false, true]));
        let (tr, ho) = d.split();
        assert_eq!((tr.len(), ho.len()), (1, 1));
        let dir = std::env::temp_dir().join(format!("bfsa-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("d.csv");
        d.write(&p).unwrap();
        assert_eq!(Dataset::read(&p).unwrap(), d);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Dataset::from_reader("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(Dataset::from_reader("x,y,value\n".as_bytes()).is_err());
        assert!(Dataset::from_reader("x,y,value\nnan,1,2\n".as_bytes()).is_err());
        assert!(RunConfig::from_json(r#"{"block_size": 64, "bogus": 1}"#).is_err());
        let c = RunConfig::from_json(r#"{"block_size": 64}"#).unwrap();
        assert_eq!(c.block_size, 64);
        assert_eq!(c.num_landmarks, 32);
        assert_eq!(c.resolved(1000).num_blocks, Some(blocks_for_size(1000, 64)));
    }
}
