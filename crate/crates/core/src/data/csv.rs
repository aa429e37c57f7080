//! CSV ingestion into fixed-length windows.
//!
//! Two layouts are understood: long (`entity_id,timestamp,feature,value`, one
//! observation per row) and wide (`entity_id,timestamp,f1,...,fD`). Empty
//! fields, `NA` and `NaN` mark missing values. Rows of each entity are sorted
//! by timestamp and cut into non-overlapping windows; a trailing partial
//! window is padded with fully missing steps one time unit apart.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};

use super::SeriesBatch;
use crate::error::{Error, Result};
use crate::tensor::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Long,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimestampSpec {
    /// Numeric value or `YYYY-MM-DD[ HH:MM:SS]` date-time (converted to hours).
    Column(String),
    /// Calendar parts spread over four integer columns, converted to hours.
    Parts {
        year: String,
        month: String,
        day: String,
        hour: String,
    },
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub layout: Layout,
    /// `None` treats the whole file as a single entity.
    pub entity_column: Option<String>,
    pub timestamp: TimestampSpec,
    /// Wide: the feature columns (`None` = every other column). Long: the
    /// accepted feature names (`None` = discovered in order of appearance).
    pub features: Option<Vec<String>>,
    /// Columns present in the file that carry no numeric feature.
    pub ignore: Vec<String>,
    pub window: usize,
}

impl CsvSchema {
    pub fn long(window: usize) -> Self {
        CsvSchema {
            layout: Layout::Long,
            entity_column: Some("entity_id".into()),
            timestamp: TimestampSpec::Column("timestamp".into()),
            features: None,
            ignore: Vec::new(),
            window,
        }
    }

    pub fn wide(window: usize) -> Self {
        CsvSchema {
            layout: Layout::Wide,
            ..Self::long(window)
        }
    }

    /// Beijing multi-site air-quality files (one file per station, or the
    /// concatenation of several).
    pub fn beijing_air(window: usize) -> Self {
        let features = [
            "PM2.5", "PM10", "SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "RAIN", "WSPM",
        ];
        CsvSchema {
            layout: Layout::Wide,
            entity_column: Some("station".into()),
            timestamp: TimestampSpec::Parts {
                year: "year".into(),
                month: "month".into(),
                day: "day".into(),
                hour: "hour".into(),
            },
            features: Some(features.iter().map(|s| s.to_string()).collect()),
            ignore: vec!["No".into(), "wd".into()],
            window,
        }
    }

    /// UCI metro interstate traffic volume file.
    pub fn uci_traffic(window: usize) -> Self {
        let features = ["temp", "rain_1h", "snow_1h", "clouds_all", "traffic_volume"];
        CsvSchema {
            layout: Layout::Wide,
            entity_column: None,
            timestamp: TimestampSpec::Column("date_time".into()),
            features: Some(features.iter().map(|s| s.to_string()).collect()),
            ignore: vec![
                "holiday".into(),
                "weather_main".into(),
                "weather_description".into(),
            ],
            window,
        }
    }

    /// Looks up a schema by name: `long`, `wide`, `air` or `traffic`.
    pub fn by_name(name: &str, window: usize) -> Result<Self> {
        match name {
            "long" => Ok(Self::long(window)),
            "wide" => Ok(Self::wide(window)),
            "air" => Ok(Self::beijing_air(window)),
            "traffic" => Ok(Self::uci_traffic(window)),
            other => Err(Error::InvalidArgument(format!(
                "unknown schema `{other}` (expected long, wide, air or traffic)"
            ))),
        }
    }
}

struct Entity {
    name: String,
    rows: Vec<(f64, Vec<f64>)>,
    by_stamp: HashMap<u64, usize>,
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<SeriesBatch> {
    if schema.window == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing column `{name}`"),
            })
    };

    let entity_col = schema.entity_column.as_deref().map(col).transpose()?;
    let stamp_cols: Vec<usize> = match &schema.timestamp {
        TimestampSpec::Column(c) => vec![col(c)?],
        TimestampSpec::Parts {
            year,
            month,
            day,
            hour,
        } => vec![col(year)?, col(month)?, col(day)?, col(hour)?],
    };
    let mut known: Vec<usize> = stamp_cols.clone();
    known.extend(entity_col);
    for c in &schema.ignore {
        if let Some(i) = header.iter().position(|h| h == c) {
            known.push(i);
        }
    }

    // Long layout: (feature column, value column). Wide: feature column indices.
    let mut feature_names: Vec<String>;
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    let (long_cols, wide_cols) = match schema.layout {
        Layout::Long => {
            let fc = col("feature")?;
            let vc = col("value")?;
            known.extend([fc, vc]);
            feature_names = schema.features.clone().unwrap_or_default();
            for (i, f) in feature_names.iter().enumerate() {
                feature_index.insert(f.clone(), i);
            }
            (Some((fc, vc)), Vec::new())
        }
        Layout::Wide => {
            let cols: Vec<usize> = match &schema.features {
                Some(fs) => fs.iter().map(|f| col(f)).collect::<Result<_>>()?,
                None => (0..header.len()).filter(|i| !known.contains(i)).collect(),
            };
            known.extend(&cols);
            feature_names = cols.iter().map(|&i| header[i].clone()).collect();
            (None, cols)
        }
    };
    if let Some(extra) = (0..header.len()).find(|i| !known.contains(i)) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unknown column `{}`", header[extra]),
        });
    }

    let mut entities: Vec<Entity> = Vec::new();
    let mut entity_index: HashMap<String, usize> = HashMap::new();
    let mut record = ::csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let name = entity_col.map_or("all", |c| &record[c]).to_string();
        let stamp = parse_stamp(&record, &stamp_cols).map_err(bad)?;
        let ei = *entity_index.entry(name.clone()).or_insert_with(|| {
            entities.push(Entity {
                name,
                rows: Vec::new(),
                by_stamp: HashMap::new(),
            });
            entities.len() - 1
        });
        let entity = &mut entities[ei];
        match long_cols {
            Some((fc, vc)) => {
                let feature = &record[fc];
                let fi = match feature_index.get(feature) {
                    Some(&i) => i,
                    None if schema.features.is_none() => {
                        feature_names.push(feature.to_string());
                        feature_index.insert(feature.to_string(), feature_names.len() - 1);
                        feature_names.len() - 1
                    }
                    None => return Err(bad(format!("unknown feature `{feature}`"))),
                };
                let value = parse_value(&record[vc]).map_err(bad)?;
                let ri = *entity.by_stamp.entry(stamp.to_bits()).or_insert_with(|| {
                    entity.rows.push((stamp, Vec::new()));
                    entity.rows.len() - 1
                });
                let row = &mut entity.rows[ri].1;
                if row.len() <= fi {
                    row.resize(fi + 1, f64::NAN);
                }
                if !row[fi].is_nan() && !value.is_nan() {
                    return Err(bad(format!(
                        "duplicate value for feature `{feature}` at timestamp {stamp}"
                    )));
                }
                if !value.is_nan() {
                    row[fi] = value;
                }
            }
            None => {
                let values = wide_cols
                    .iter()
                    .map(|&c| parse_value(&record[c]))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(bad)?;
                entity.rows.push((stamp, values));
            }
        }
    }

    let d = feature_names.len();
    if d == 0 {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }
    let t = schema.window;
    let mut raw = Vec::new();
    let mut stamps = Vec::new();
    for entity in &mut entities {
        entity
            .rows
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite timestamps"));
        log::debug!("entity {}: {} rows", entity.name, entity.rows.len());
        for window in entity.rows.chunks(t) {
            for (stamp, row) in window {
                stamps.push(*stamp);
                raw.extend((0..d).map(|f| row.get(f).copied().unwrap_or(f64::NAN)));
            }
            let last = window.last().expect("non-empty chunk").0;
            for k in 1..=(t - window.len()) {
                stamps.push(last + k as f64);
                raw.extend(std::iter::repeat_n(f64::NAN, d));
            }
        }
    }
    let n = stamps.len() / t;
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let raw = Array::new(&[n, t, d], raw)?;
    let stamps = Array::new(&[n, t], stamps)?;
    SeriesBatch::from_raw(&raw, stamps, feature_names)
}

fn csv_error(path: &Path, e: ::csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        ::csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => Error::Csv {
            path: PathBuf::from(path),
            line,
            msg: e.to_string(),
        },
    }
}

fn parse_value(field: &str) -> std::result::Result<f64, String> {
    match field {
        "" | "NA" | "NaN" | "nan" | "NAN" => Ok(f64::NAN),
        s => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("cannot parse value `{s}`")),
        },
    }
}

fn parse_stamp(record: &::csv::StringRecord, cols: &[usize]) -> std::result::Result<f64, String> {
    if let [c] = cols {
        let s = &record[*c];
        if let Ok(v) = s.parse::<f64>() {
            return if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite timestamp `{s}`"))
            };
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(dt.and_utc().timestamp() as f64 / 3600.0);
            }
        }
        if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            let dt = date.and_hms_opt(0, 0, 0).expect("midnight");
            return Ok(dt.and_utc().timestamp() as f64 / 3600.0);
        }
        return Err(format!("cannot parse timestamp `{s}`"));
    }
    let part = |i: usize| -> std::result::Result<i64, String> {
        record[cols[i]]
            .parse::<i64>()
            .map_err(|_| format!("cannot parse timestamp part `{}`", &record[cols[i]]))
    };
    let (y, m, d, h) = (part(0)?, part(1)?, part(2)?, part(3)?);
    let date = NaiveDate::from_ymd_opt(y as i32, m as u32, d as u32)
        .ok_or_else(|| format!("invalid date {y}-{m}-{d}"))?;
    let secs = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    Ok(secs as f64 / 3600.0 + h as f64)
}
