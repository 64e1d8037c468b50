//! File formats: PGM images, raw tensors, sphere CSVs, summary grids and JSON records.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};
use crate::partition::Dataset;
use crate::sphere::geometry::{normalize, Vec3};

pub const TENSOR_MAGIC: &[u8; 4] = b"UHWT";
pub const SUMMARY_MAGIC: &[u8; 4] = b"UHWS";

/// Row-major array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if size != values.len() {
            return Err(UhwtError::DimensionMismatch { expected: size, found: values.len() });
        }
        Ok(Tensor { shape, values })
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::grid(&self.shape, self.values.clone())
    }
}

/// Tokens of a PGM header, skipping `#` comments.
fn pgm_header(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(UhwtError::TruncatedPayload);
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| UhwtError::Parse(format!("expected an integer, got {s:?}")))
}

/// PGM (P2 or P5) with values rescaled to [0, 1].
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'2' || bytes[1] == b'5') {
        return Err(UhwtError::BadMagic);
    }
    let (head, end) = pgm_header(&bytes[2..], 3)?;
    let (cols, rows, maxval) = (parse_usize(&head[0])?, parse_usize(&head[1])?, parse_usize(&head[2])?);
    if maxval == 0 || maxval > 65535 {
        return Err(UhwtError::Parse(format!("PGM maxval {maxval} out of range")));
    }
    let n = rows * cols;
    let scale = maxval as f64;
    let body = &bytes[2 + end..];
    let values: Vec<f64> = if bytes[1] == b'2' {
        let text = String::from_utf8_lossy(body);
        let v: Vec<f64> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| parse_usize(t).map(|x| x as f64 / scale))
            .collect::<Result<_>>()?;
        if v.len() < n {
            return Err(UhwtError::TruncatedPayload);
        }
        v
    } else {
        // Exactly one whitespace byte separates the header from binary data.
        let data = body.get(1..).ok_or(UhwtError::TruncatedPayload)?;
        let width = if maxval > 255 { 2 } else { 1 };
        if data.len() < n * width {
            return Err(UhwtError::TruncatedPayload);
        }
        (0..n)
            .map(|k| {
                let raw = if width == 1 { data[k] as f64 } else { u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as f64 };
                raw / scale
            })
            .collect()
    };
    Tensor::new(vec![rows, cols], values)
}

/// Binary 8-bit PGM of values clamped to [0, 1].
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    if t.shape.len() != 2 {
        return Err(UhwtError::DimensionMismatch { expected: 2, found: t.shape.len() });
    }
    let mut out = format!("P5\n{} {}\n255\n", t.shape[1], t.shape[0]).into_bytes();
    out.extend(t.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn parse_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(UhwtError::BadMagic);
    }
    let (shape, offset) = read_shape(bytes, 4)?;
    let (values, _) = read_f64s(bytes, offset, shape.iter().product())?;
    Tensor::new(shape, values)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = TENSOR_MAGIC.to_vec();
    write_shape(&mut out, &t.shape);
    for v in &t.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or(UhwtError::TruncatedPayload)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_shape(bytes: &[u8], at: usize) -> Result<(Vec<usize>, usize)> {
    let d = read_u32(bytes, at)? as usize;
    if d == 0 {
        return Err(UhwtError::DimensionMismatch { expected: 1, found: 0 });
    }
    let shape = (0..d).map(|k| read_u32(bytes, at + 4 + 4 * k).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    Ok((shape, at + 4 + 4 * d))
}

fn write_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &s in shape {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], at: usize, n: usize) -> Result<(Vec<f64>, usize)> {
    let body = bytes.get(at..at + 8 * n).ok_or(UhwtError::TruncatedPayload)?;
    let v = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((v, at + 8 * n))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    parse_tensor(&fs::read(path)?)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_tensor(t))?)
}

pub fn save_pgm(path: &Path, t: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_pgm(t)?)?)
}

/// Grid data from a PGM or tensor file, chosen by magic bytes.
pub fn load_grid_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        parse_tensor(&bytes)
    } else {
        parse_pgm(&bytes)
    }
}

pub fn load_grid(path: &Path) -> Result<Dataset> {
    load_grid_tensor(path)?.to_dataset()
}

/// Per-location posterior summaries on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryGrid {
    pub shape: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub width: Vec<f64>,
}

pub fn encode_summary(s: &SummaryGrid) -> Vec<u8> {
    let mut out = SUMMARY_MAGIC.to_vec();
    write_shape(&mut out, &s.shape);
    for v in s.mean.iter().chain(&s.sd).chain(&s.width) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_summary(bytes: &[u8]) -> Result<SummaryGrid> {
    if bytes.len() < 4 || &bytes[..4] != SUMMARY_MAGIC {
        return Err(UhwtError::BadMagic);
    }
    let (shape, at) = read_shape(bytes, 4)?;
    let n = shape.iter().product();
    let (mean, at) = read_f64s(bytes, at, n)?;
    let (sd, at) = read_f64s(bytes, at, n)?;
    let (width, _) = read_f64s(bytes, at, n)?;
    Ok(SummaryGrid { shape, mean, sd, width })
}

fn csv_rows(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < cols {
            return Err(UhwtError::Parse(format!("row {} has {} columns, expected {cols}", k + 1, rec.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().take(cols).map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => out.push(v),
            // A non-numeric first row is a header.
            Err(_) if k == 0 => continue,
            Err(e) => return Err(UhwtError::Parse(format!("row {}: {e}", k + 1))),
        }
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> UhwtError {
    UhwtError::Parse(e.to_string())
}

/// `x,y,z,value` rows; points are renormalized onto the unit sphere.
pub fn load_sphere_csv(path: &Path) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let rows = csv_rows(path, 4)?;
    let pts = rows.iter().map(|r| normalize(&[r[0], r[1], r[2]])).collect();
    Ok((pts, rows.iter().map(|r| r[3]).collect()))
}

pub fn lonlat_to_xyz(lon_deg: f64, lat_deg: f64) -> Vec3 {
    let (lam, phi) = (lon_deg.to_radians(), lat_deg.to_radians());
    [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
}

/// `lon,lat,value` rows in degrees.
pub fn load_lonlat_csv(path: &Path) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let rows = csv_rows(path, 3)?;
    Ok((rows.iter().map(|r| lonlat_to_xyz(r[0], r[1])).collect(), rows.iter().map(|r| r[2]).collect()))
}

pub fn load_sphere_dataset(path: &Path) -> Result<Dataset> {
    let (p, v) = load_sphere_csv(path)?;
    Dataset::sphere(&p, v)
}

/// `x,y,z,pred` rows.
pub fn save_sphere_predictions(path: &Path, points: &[Vec3], preds: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "z", "pred"]).map_err(csv_err)?;
    for (p, v) in points.iter().zip(preds) {
        w.write_record([p[0].to_string(), p[1].to_string(), p[2].to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub runtime_s: f64,
    /// Command-specific values.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub command: String,
    pub config: serde_json::Value,
    pub metrics: Metrics,
}

impl ResultRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Metrics with the wall-clock time removed, for reproducibility checks.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut m = self.metrics.clone();
        m.runtime_s = 0.0;
        let r = ResultRecord { command: self.command.clone(), config: self.config.clone(), metrics: m };
        Ok(serde_json::to_string(&r)?)
    }
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm() {
        let t = parse_pgm(b"P2\n# tiny\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.values, vec![0.0, 1.0, 1.0, 0.0]);
        let d = t.to_dataset().unwrap();
        assert_eq!(d.responses(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn binary_pgm_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let back = parse_pgm(&encode_pgm(&t).unwrap()).unwrap();
        assert_eq!(back.shape, t.shape);
        for (a, b) in back.values.iter().zip(&t.values) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn sixteen_bit_pgm() {
        let mut bytes = b"P5 1 2 65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF, 0x00, 0x00]);
        assert_eq!(parse_pgm(&bytes).unwrap().values, vec![1.0, 0.0]);
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let vals: Vec<f64> = (0..64).map(|i| (i as f64).sin() * 1e-300 + i as f64 / 7.0).collect();
        let t = Tensor::new(vec![4, 4, 4], vals).unwrap();
        let back = parse_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.shape, vec![4, 4, 4]);
        assert!(back.values.iter().zip(&t.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.to_dataset().unwrap().n(), 64);
    }

    #[test]
    fn tensor_errors() {
        assert!(matches!(parse_tensor(b"NOPE"), Err(UhwtError::BadMagic)));
        let t = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let bytes = encode_tensor(&t);
        assert!(matches!(parse_tensor(&bytes[..bytes.len() - 3]), Err(UhwtError::TruncatedPayload)));
        assert!(matches!(Tensor::new(vec![2, 2], vec![1.0; 3]), Err(UhwtError::DimensionMismatch { .. })));
        assert!(matches!(parse_pgm(b"P6 1 1 255\n\0"), Err(UhwtError::BadMagic)));
    }

    #[test]
    fn summary_round_trip() {
        let s = SummaryGrid { shape: vec![1, 2], mean: vec![1.0, 2.0], sd: vec![0.1, 0.2], width: vec![0.4, 0.8] };
        assert_eq!(parse_summary(&encode_summary(&s)).unwrap(), s);
    }

    #[test]
    fn lonlat_conversion() {
        let p = lonlat_to_xyz(90.0, 0.0);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
        assert!((lonlat_to_xyz(10.0, 90.0)[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "x,y,z,value\n0,0,1,3.5\n1,0,0,-1\n").unwrap();
        let (pts, v) = load_sphere_csv(&p).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(v, vec![3.5, -1.0]);
    }
}
