//! CSV readers and writers for datasets, contamination tags and weights.
//!
//! Dataset files carry a header with a response column `y` and feature
//! columns `x1..xp`; feature order follows the header.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{param, QomError, Result};
use crate::types::{ContaminationTags, Dataset, ResponseKind, Tag, WeightVector};

pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.response(i).to_string()];
        rec.extend(data.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset. For [`ResponseKind::Label`], responses coded `{0, 1}`
/// are mapped to `{−1, +1}`.
pub fn read_dataset<R: Read>(input: R, kind: ResponseKind) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let y_col = match header.iter().position(|h| h == "y") {
        Some(c) => c,
        None => return param("dataset header lacks a 'y' column"),
    };
    let p = header.len() - 1;
    let mut features = Vec::new();
    let mut responses = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| QomError::Parameter(format!("row {}: '{field}' is not a number", line + 1)))?;
            if c == y_col {
                responses.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if kind == ResponseKind::Label && responses.iter().all(|&y| y == 0.0 || y == 1.0) {
        for y in &mut responses {
            *y = 2.0 * *y - 1.0;
        }
    }
    Dataset::from_flat(features, responses, p, kind)
}

pub fn write_tags<W: Write>(out: W, tags: &ContaminationTags) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "tag"])?;
    for (i, t) in tags.tags().iter().enumerate() {
        w.write_record([i.to_string().as_str(), t.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tags<R: Read>(input: R) -> Result<ContaminationTags> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut tags = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let tag = match rec.get(1) {
            Some("inlier") => Tag::Inlier,
            Some("outlier") => Tag::Outlier,
            other => return param(format!("bad tag {other:?}")),
        };
        tags.push(tag);
    }
    Ok(ContaminationTags::new(tags))
}

pub fn write_weights<W: Write>(out: W, w: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["index", "weight"])?;
    for (j, v) in w.iter().enumerate() {
        wr.write_record([j.to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(input: R) -> Result<WeightVector> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut w = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec.get(1).unwrap_or("");
        w.push(v.parse().map_err(|_| QomError::Parameter(format!("bad weight '{v}'")))?);
    }
    WeightVector::new(w)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_dataset(File::create(path)?, data)
}

pub fn load_dataset(path: impl AsRef<Path>, kind: ResponseKind) -> Result<Dataset> {
    read_dataset(File::open(path)?, kind)
}

pub fn save_tags(path: impl AsRef<Path>, tags: &ContaminationTags) -> Result<()> {
    write_tags(File::create(path)?, tags)
}

pub fn load_tags(path: impl AsRef<Path>) -> Result<ContaminationTags> {
    read_tags(File::open(path)?)
}

pub fn save_weights(path: impl AsRef<Path>, w: &[f64]) -> Result<()> {
    write_weights(File::create(path)?, w)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightVector> {
    read_weights(File::open(path)?)
}
