//! File formats: point clouds and sparse plans as CSV, images as binary PPM.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the one written (never more than 17
//! significant digits).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::apps::color::ImageRGB;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn located(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: `{field}` is not a number")))
}

fn is_numeric_record(rec: &csv::StringRecord) -> bool {
    rec.iter().all(|f| f.trim().parse::<f64>().is_ok())
}

/// Reads a point cloud. An optional header row is recognised by containing a
/// non-numeric field; if its last column is named `weight`, that column holds
/// the weights, otherwise the weights are uniform.
pub fn read_point_cloud_from<R: Read>(reader: R) -> Result<DiscreteMeasure> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut weighted = false;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let line = idx + 1;
        if idx == 0 && !is_numeric_record(&rec) {
            weighted = rec.iter().next_back().map(|h| h.trim().eq_ignore_ascii_case("weight")).unwrap_or(false);
            continue;
        }
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let row = rec.iter().map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!("line {line}: expected {} fields, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no points".into()));
    }
    let width = rows[0].len();
    let dim = if weighted { width - 1 } else { width };
    if dim == 0 {
        return Err(Error::Format("no coordinate columns".into()));
    }
    let n = rows.len();
    let points = Array2::from_shape_fn((n, dim), |(i, j)| rows[i][j]);
    if weighted {
        let weights = Array1::from_iter(rows.iter().map(|r| r[dim]));
        DiscreteMeasure::new(points, weights).map_err(|e| Error::Format(e.to_string()))
    } else {
        DiscreteMeasure::uniform(points).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn read_point_cloud(path: &Path) -> Result<DiscreteMeasure> {
    read_point_cloud_from(BufReader::new(open(path)?)).map_err(|e| located(path, e))
}

/// Writes `x0,x1,...[,weight]` with a header row.
pub fn write_point_cloud_to<W: Write>(writer: W, measure: &DiscreteMeasure, with_weights: bool) -> Result<()> {
    let mut out = BufWriter::new(writer);
    let mut header: Vec<String> = (0..measure.dim()).map(|d| format!("x{d}")).collect();
    if with_weights {
        header.push("weight".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (row, w) in measure.points().outer_iter().zip(measure.weights()) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if with_weights {
            fields.push(w.to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_point_cloud(path: &Path, measure: &DiscreteMeasure, with_weights: bool) -> Result<()> {
    write_point_cloud_to(create(path)?, measure, with_weights)
}

/// Writes `i,j,mass` rows for every entry above `threshold`, row-major.
pub fn write_triplets_to<W: Write>(writer: W, matrix: &Array2<f64>, threshold: f64) -> Result<()> {
    let mut out = BufWriter::new(writer);
    writeln!(out, "i,j,mass")?;
    for ((i, j), &v) in matrix.indexed_iter() {
        if v > threshold {
            writeln!(out, "{i},{j},{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_triplets(path: &Path, matrix: &Array2<f64>, threshold: f64) -> Result<()> {
    write_triplets_to(create(path)?, matrix, threshold)
}

/// Reads an `i,j,mass` file into a dense `rows x cols` matrix.
pub fn read_triplets_from<R: Read>(reader: R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Array2::zeros((rows, cols));
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let line = idx + 2;
        if rec.len() != 3 {
            return Err(Error::Format(format!("line {line}: expected i,j,mass")));
        }
        let index = |f: &str| {
            f.parse::<usize>().map_err(|_| Error::Format(format!("line {line}: bad index `{f}`")))
        };
        let (i, j) = (index(&rec[0])?, index(&rec[1])?);
        if i >= rows || j >= cols {
            return Err(Error::Format(format!("line {line}: index ({i}, {j}) outside {rows}x{cols}")));
        }
        out[[i, j]] += parse_f64(&rec[2], line)?;
    }
    Ok(out)
}

pub fn read_triplets(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    read_triplets_from(BufReader::new(open(path)?), rows, cols).map_err(|e| located(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Rows of a CSV table from serialisable records (header from field names).
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in records {
        wtr.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decodes a binary PPM (`P6`, maxval 255).
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRGB> {
    let mut pos = 0;
    if ppm_token(bytes, &mut pos)? != "P6" {
        return Err(Error::Format("not a binary PPM (magic P6)".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = ppm_token(bytes, &mut pos)?;
        t.parse().map_err(|_| Error::Format(format!("bad PPM {what} `{t}`")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = width * height * 3;
    if width == 0 || height == 0 || bytes.len() < pos + len {
        return Err(Error::Format("truncated PPM raster".into()));
    }
    let pixels = bytes[pos..pos + len]
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    ImageRGB::new(width, height, pixels)
}

/// Encodes as binary PPM, rounding each channel to the nearest byte.
pub fn encode_ppm(image: &ImageRGB) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for px in image.pixels() {
        for &c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn read_ppm(path: &Path) -> Result<ImageRGB> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    decode_ppm(&bytes).map_err(|e| located(path, e))
}

pub fn write_ppm(path: &Path, image: &ImageRGB) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}
