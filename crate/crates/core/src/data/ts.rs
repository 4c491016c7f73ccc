//! Reader for the equal-length, fully observed subset of the UEA `.ts`
//! text format.

use std::fs;
use std::path::{Path, PathBuf};

use super::{SeriesDataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Header {
    name: Option<String>,
    dimensions: Option<usize>,
    series_length: Option<usize>,
    labels: Vec<String>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_ts_file(path: &Path, split: Split) -> Result<SeriesDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ts_str(&text, path, split)
}

pub fn parse_ts_str(text: &str, path: &Path, split: Split) -> Result<SeriesDataset> {
    let mut header = Header::default();
    let mut in_data = false;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut shape: Option<(usize, usize)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or("").to_ascii_lowercase();
            let rest: Vec<&str> = parts.collect();
            let flag = || rest.first().map(|v| v.eq_ignore_ascii_case("true"));
            match tag.as_str() {
                "@problemname" => header.name = rest.first().map(|s| s.to_string()),
                "@timestamps" if flag() == Some(true) => {
                    return Err(Error::Unsupported("time-stamped .ts series".into()));
                }
                "@missing" if flag() == Some(true) => {
                    return Err(Error::Unsupported(".ts files with missing values".into()));
                }
                "@equallength" if flag() == Some(false) => {
                    return Err(Error::Unsupported("variable-length .ts series".into()));
                }
                "@dimensions" | "@serieslength" => {
                    let v = rest.first().and_then(|v| v.parse().ok()).ok_or_else(|| {
                        parse_err(path, line_no, format!("{tag} needs an integer"))
                    })?;
                    if tag == "@dimensions" {
                        header.dimensions = Some(v);
                    } else {
                        header.series_length = Some(v);
                    }
                }
                "@classlabel" => {
                    if flag() != Some(true) {
                        return Err(Error::Unsupported(".ts files without class labels".into()));
                    }
                    header.labels = rest[1..].iter().map(|s| s.to_string()).collect();
                }
                "@targetlabel" if flag() == Some(true) => {
                    return Err(Error::Unsupported("regression targets in .ts files".into()));
                }
                "@data" => in_data = true,
                t if t.starts_with('@') => {}
                _ => return Err(parse_err(path, line_no, "data line before @data")),
            }
            continue;
        }

        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(parse_err(
                path,
                line_no,
                "case needs at least one dimension and a label",
            ));
        }
        let (dims, label) = fields.split_at(fields.len() - 1);
        let label = label[0].trim();
        let class = header
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| {
                parse_err(
                    path,
                    line_no,
                    format!("label `{label}` not declared in @classLabel"),
                )
            })?;
        let mut len = None;
        for dim in dims {
            let values = dim
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    if v == "?" || v.eq_ignore_ascii_case("nan") {
                        return Err(Error::Unsupported(format!(
                            "{}:{line_no}: missing values",
                            path.display()
                        )));
                    }
                    v.parse::<f64>().map_err(|_| {
                        parse_err(path, line_no, format!("value `{v}` is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if *len.get_or_insert(values.len()) != values.len() {
                return Err(Error::Unsupported(format!(
                    "{}:{line_no}: dimensions of unequal length",
                    path.display()
                )));
            }
            x.extend(values);
        }
        let case_shape = (dims.len(), len.unwrap_or(0));
        match shape {
            None => shape = Some(case_shape),
            Some(s) if s != case_shape => {
                return Err(Error::Unsupported(format!(
                    "{}:{line_no}: case shape {case_shape:?} differs from {s:?}",
                    path.display()
                )));
            }
            _ => {}
        }
        y.push(class);
    }

    if !in_data {
        return Err(parse_err(path, text.lines().count(), "no @data section"));
    }
    let (c, l) = shape.unwrap_or((
        header.dimensions.unwrap_or(1),
        header.series_length.unwrap_or(0),
    ));
    if header.dimensions.is_some_and(|d| d != c) {
        return Err(Error::Integrity(format!(
            "{}: @dimensions {} but cases have {c}",
            path.display(),
            header.dimensions.unwrap_or(0)
        )));
    }
    if header.series_length.is_some_and(|s| s != l) {
        return Err(Error::Integrity(format!(
            "{}: @seriesLength {} but cases have {l}",
            path.display(),
            header.series_length.unwrap_or(0)
        )));
    }
    let name = header.name.unwrap_or_else(|| "unnamed".into());
    SeriesDataset::new(name, split, c, l, header.labels.len(), x, y)
}

fn find_with_suffix(dir: &Path, suffix: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.to_ascii_uppercase().ends_with(suffix))
        })
        .collect();
    hits.sort();
    hits.into_iter()
        .next()
        .ok_or_else(|| Error::NotFound(dir.join(format!("*{suffix}"))))
}

/// Loads `<Name>_TRAIN.ts` and `<Name>_TEST.ts` from a directory.
pub fn load_ts_dir(dir: &Path) -> Result<(SeriesDataset, SeriesDataset)> {
    let train = parse_ts_file(&find_with_suffix(dir, "_TRAIN.TS")?, Split::Train)?;
    let test = parse_ts_file(&find_with_suffix(dir, "_TEST.TS")?, Split::Test)?;
    if (train.channels, train.length, train.classes) != (test.channels, test.length, test.classes) {
        return Err(Error::Integrity(format!(
            "train (C={}, L={}, K={}) and test (C={}, L={}, K={}) disagree",
            train.channels, train.length, train.classes, test.channels, test.length, test.classes
        )));
    }
    Ok((train, test))
}
