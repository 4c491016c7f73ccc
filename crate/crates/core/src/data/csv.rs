//! Native dataset directory: `meta.json` plus long-format `train.csv` and
//! `test.csv` with header `sample,channel,label,t0,...,t{L-1}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SeriesDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "L")]
    pub length: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub precision: Precision,
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn load_dataset_dir(dir: &Path) -> Result<(SeriesDataset, SeriesDataset)> {
    let meta = read_meta(dir)?;
    let train = read_split(&dir.join("train.csv"), &meta, Split::Train)?;
    let test = read_split(&dir.join("test.csv"), &meta, Split::Test)?;
    Ok((train, test))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

/// Reads one split; samples keep their order of first appearance.
pub fn read_split(path: &Path, meta: &Meta, split: Split) -> Result<SeriesDataset> {
    let (c, l) = (meta.channels, meta.length);
    let mut reader = ::csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let expected: Vec<String> = ["sample", "channel", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..l).map(|t| format!("t{t}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            path,
            1,
            format!(
                "header must be sample,channel,label,t0..t{}",
                l.saturating_sub(1)
            ),
        ));
    }

    let mut order: HashMap<u64, usize> = HashMap::new();
    let mut rows: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 + l {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", 3 + l, record.len()),
            ));
        }
        let int = |i: usize, what: &str| -> Result<u64> {
            record[i].trim().parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("{what} `{}` is not a non-negative integer", &record[i]),
                )
            })
        };
        let sample = int(0, "sample")?;
        let channel = int(1, "channel")? as usize;
        let label = int(2, "label")? as usize;
        if channel >= c {
            return Err(parse_err(
                path,
                line,
                format!("channel {channel} outside 0..{c}"),
            ));
        }
        if label >= meta.classes {
            return Err(Error::Label {
                label,
                classes: meta.classes,
            });
        }
        let values = (3..3 + l)
            .map(|i| {
                record[i].trim().parse::<f64>().map_err(|_| {
                    parse_err(
                        path,
                        line,
                        format!("value `{}` is not a number", &record[i]),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let idx = *order.entry(sample).or_insert_with(|| {
            rows.push(vec![None; c]);
            labels.push(label);
            rows.len() - 1
        });
        if labels[idx] != label {
            return Err(Error::Integrity(format!(
                "{}: sample {sample} has conflicting labels {} and {label}",
                path.display(),
                labels[idx]
            )));
        }
        if rows[idx][channel].replace(values).is_some() {
            return Err(Error::Integrity(format!(
                "{}: sample {sample} repeats channel {channel}",
                path.display()
            )));
        }
    }

    let mut x = Vec::with_capacity(rows.len() * c * l);
    let mut ids: Vec<(u64, usize)> = order.into_iter().collect();
    ids.sort_by_key(|&(_, i)| i);
    for (sample, idx) in ids {
        for (ch, row) in rows[idx].iter().enumerate() {
            let row = row.as_ref().ok_or_else(|| {
                Error::Integrity(format!(
                    "{}: sample {sample} lacks channel {ch}",
                    path.display()
                ))
            })?;
            x.extend_from_slice(row);
        }
    }
    SeriesDataset::new(meta.name.clone(), split, c, l, meta.classes, x, labels)
}

/// Writes one split; values use the shortest text that parses back exactly.
pub fn write_split(path: &Path, ds: &SeriesDataset) -> Result<()> {
    let io_err = |e: ::csv::Error| match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Integrity(format!("{}: {other:?}", path.display())),
    };
    let mut w = ::csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["sample".to_string(), "channel".into(), "label".into()];
    header.extend((0..ds.length).map(|t| format!("t{t}")));
    w.write_record(&header).map_err(io_err)?;
    for (s, &label) in ds.labels().iter().enumerate() {
        let sample = ds.sample(s)?;
        for (ch, row) in sample.chunks(ds.length).enumerate() {
            let mut rec = vec![s.to_string(), ch.to_string(), label.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset_dir(
    dir: &Path,
    train: &SeriesDataset,
    test: &SeriesDataset,
    precision: Precision,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        name: train.name.clone(),
        channels: train.channels,
        length: train.length,
        classes: train.classes,
        precision,
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    write_split(&dir.join("train.csv"), train)?;
    write_split(&dir.join("test.csv"), test)
}
