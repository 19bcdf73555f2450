use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AssetSeries, FeatureMatrix, ReturnsFrame, VolSeries};
use crate::{CoreError, Result};

/// Layout of a price file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    /// `date,<asset1>,<asset2>,...`
    #[default]
    Wide,
    /// `date,asset_id,price`
    Long,
}

impl FromStr for CsvSchema {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wide" => Ok(Self::Wide),
            "long" => Ok(Self::Long),
            other => Err(CoreError::InvalidArgument(format!("unknown csv schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub assets: Vec<AssetSeries>,
    /// Price cells dropped for being non-numeric or non-positive.
    pub dropped: usize,
}

/// Reads a price file. Assets come back in order of first appearance, each
/// sorted by date.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Loaded> {
    let file = std::fs::File::open(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);
    let csv_err = |e: csv::Error| CoreError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();

    let mut builder = Builder::default();
    match schema {
        CsvSchema::Wide => {
            if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
                return Err(CoreError::Row {
                    row: 1,
                    message: "wide header must be `date,<asset>,...`".into(),
                });
            }
            let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
            for record in reader.records() {
                let record = record.map_err(csv_err)?;
                let row = line_of(&record);
                let date = parse_date(&record[0], row)?;
                for (name, cell) in names.iter().zip(record.iter().skip(1)) {
                    if cell.is_empty() {
                        continue;
                    }
                    builder.push(name, date, cell, row)?;
                }
            }
        }
        CsvSchema::Long => {
            let cols: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
            if cols != ["date", "asset_id", "price"] {
                return Err(CoreError::Row {
                    row: 1,
                    message: "long header must be `date,asset_id,price`".into(),
                });
            }
            for record in reader.records() {
                let record = record.map_err(csv_err)?;
                let row = line_of(&record);
                let date = parse_date(&record[0], row)?;
                builder.push(&record[1], date, &record[2], row)?;
            }
        }
    }
    builder.finish()
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_date(cell: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(cell, "%Y-%m-%d").map_err(|e| CoreError::Row {
        row,
        message: format!("unparseable date `{cell}`: {e}"),
    })
}

#[derive(Default)]
struct Builder {
    order: Vec<String>,
    points: HashMap<String, BTreeMap<NaiveDate, f64>>,
    dropped: usize,
}

impl Builder {
    fn push(&mut self, asset: &str, date: NaiveDate, cell: &str, row: usize) -> Result<()> {
        if asset.is_empty() {
            return Err(CoreError::Row {
                row,
                message: "empty asset id".into(),
            });
        }
        if !self.points.contains_key(asset) {
            self.order.push(asset.to_string());
        }
        let series = self.points.entry(asset.to_string()).or_default();
        if series.contains_key(&date) {
            return Err(CoreError::DuplicateDate {
                row,
                asset: asset.to_string(),
                date,
            });
        }
        match cell.parse::<f64>() {
            Ok(p) if p > 0.0 && p.is_finite() => {
                series.insert(date, p);
            }
            _ => self.dropped += 1,
        }
        Ok(())
    }

    fn finish(self) -> Result<Loaded> {
        if self.order.is_empty() {
            return Err(CoreError::EmptySeries);
        }
        let mut points = self.points;
        let assets = self
            .order
            .into_iter()
            .map(|id| {
                let series = points.remove(&id).unwrap_or_default();
                let (dates, prices) = series.into_iter().unzip();
                AssetSeries::new(id, dates, prices)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Loaded {
            assets,
            dropped: self.dropped,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `date,asset_id,f1..f8,valid`; invalid rows leave feature cells empty.
pub fn write_features_csv(features: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let e = io_err(path);
    writeln!(w, "date,asset_id,f1,f2,f3,f4,f5,f6,f7,f8,valid").map_err(&e)?;
    for asset in &features.assets {
        for ((date, row), valid) in asset.dates.iter().zip(&asset.rows).zip(&asset.valid) {
            write!(w, "{date},{}", asset.asset_id).map_err(&e)?;
            for v in row {
                if *valid {
                    write!(w, ",{v}").map_err(&e)?;
                } else {
                    write!(w, ",").map_err(&e)?;
                }
            }
            writeln!(w, ",{}", u8::from(*valid)).map_err(&e)?;
        }
    }
    w.flush().map_err(&e)
}

/// `date,asset_id,ret_1d,ret_21d,ret_63d,ret_126d,ret_252d,next_ret`.
pub fn write_returns_csv(returns: &ReturnsFrame, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let e = io_err(path);
    writeln!(w, "date,asset_id,ret_1d,ret_21d,ret_63d,ret_126d,ret_252d,next_ret").map_err(&e)?;
    for asset in &returns.assets {
        for (t, date) in asset.dates.iter().enumerate() {
            write!(w, "{date},{}", asset.asset_id).map_err(&e)?;
            for h in &asset.horizons {
                write!(w, ",{}", fmt_opt(h[t])).map_err(&e)?;
            }
            writeln!(w, ",{}", fmt_opt(asset.next[t])).map_err(&e)?;
        }
    }
    w.flush().map_err(&e)
}

/// `date,asset_id,sigma,valid`.
pub fn write_vol_csv(vols: &VolSeries, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let e = io_err(path);
    writeln!(w, "date,asset_id,sigma,valid").map_err(&e)?;
    for asset in &vols.assets {
        for (date, s) in asset.dates.iter().zip(&asset.sigma) {
            writeln!(w, "{date},{},{},{}", asset.asset_id, fmt_opt(*s), u8::from(s.is_some()))
                .map_err(&e)?;
        }
    }
    w.flush().map_err(&e)
}
