//! Plain-text file formats.
//!
//! - instance: header `n,m,q`, then `n + m` pool lines `lat,lon,truth`, then
//!   `q` evaluation lines `lat,lon,truth`
//! - seed readings: `lat,lon,value` per line
//! - polygon: `lat,lon` per vertex, ring implicitly closed
//!
//! Blank lines and lines starting with `#` are skipped when reading.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{FieldModel, Location, Polygon, ProblemInstance, SensorReading};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Yields `(1-based line number, trimmed content)` for meaningful lines.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<const N: usize>(path: &Path, line: usize, text: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(parse_err(
            path,
            line,
            format!("expected {N} comma-separated fields, found {}", parts.len()),
        ));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        let v: f64 = part
            .parse()
            .map_err(|_| parse_err(path, line, format!("not a number: {part:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line, format!("non-finite value: {part:?}")));
        }
        *slot = v;
    }
    Ok(out)
}

pub fn parse_readings(path: &Path, text: &str) -> Result<Vec<SensorReading>> {
    data_lines(text)
        .map(|(no, l)| {
            let [x, y, z] = parse_fields::<3>(path, no, l)?;
            Ok(SensorReading::new(Location::new(x, y), z))
        })
        .collect()
}

pub fn read_field(path: &Path) -> Result<FieldModel> {
    let text = fs::read_to_string(path)?;
    let readings = parse_readings(path, &text)?;
    FieldModel::new(readings).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn read_polygon(path: &Path) -> Result<Polygon> {
    let text = fs::read_to_string(path)?;
    let vertices = data_lines(&text)
        .map(|(no, l)| {
            let [x, y] = parse_fields::<2>(path, no, l)?;
            Ok(Location::new(x, y))
        })
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(vertices).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn format_instance(inst: &ProblemInstance) -> String {
    let mut s = String::new();
    writeln!(s, "{},{},{}", inst.n(), inst.m(), inst.q()).unwrap();
    for (p, z) in inst.locations().iter().zip(inst.truth()) {
        writeln!(s, "{},{},{}", p.x, p.y, z).unwrap();
    }
    for e in inst.eval_points() {
        writeln!(s, "{},{},{}", e.location.x, e.location.y, e.value).unwrap();
    }
    s
}

pub fn parse_instance(path: &Path, text: &str) -> Result<ProblemInstance> {
    let mut lines = data_lines(text);
    let (hdr_no, hdr) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing `n,m,q` header"))?;
    let dims: Vec<usize> = hdr
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_err(path, hdr_no, format!("bad header {hdr:?}, expected `n,m,q`")))?;
    let [n, m, q] = dims[..] else {
        return Err(parse_err(path, hdr_no, format!("bad header {hdr:?}, expected `n,m,q`")));
    };
    let mut locs = Vec::with_capacity(n + m);
    let mut truth = Vec::with_capacity(n + m);
    let mut eval = Vec::with_capacity(q);
    let mut last = hdr_no;
    for (no, l) in lines.by_ref() {
        last = no;
        let [x, y, z] = parse_fields::<3>(path, no, l)?;
        if locs.len() < n + m {
            locs.push(Location::new(x, y));
            truth.push(z);
        } else if eval.len() < q {
            eval.push(SensorReading::new(Location::new(x, y), z));
        } else {
            return Err(parse_err(path, no, format!("more than {} data lines", n + m + q)));
        }
    }
    if locs.len() + eval.len() != n + m + q {
        return Err(parse_err(
            path,
            last,
            format!("expected {} data lines, found {}", n + m + q, locs.len() + eval.len()),
        ));
    }
    ProblemInstance::new(locs, truth, eval, n).map_err(|e| parse_err(path, hdr_no, e.to_string()))
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path)?;
    parse_instance(path, &text)
}

pub fn write_instance(path: &Path, inst: &ProblemInstance) -> Result<()> {
    fs::write(path, format_instance(inst))?;
    Ok(())
}

/// Instance files in `dir`, sorted by file name.
pub fn list_instance_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_instance_dir(dir: &Path) -> Result<Vec<ProblemInstance>> {
    list_instance_files(dir)?.iter().map(|p| read_instance(p)).collect()
}
