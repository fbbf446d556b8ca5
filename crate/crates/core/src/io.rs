//! Field container format.
//!
//! A record is one UTF-8 header line of `key:value` pairs separated by `;`
//!
//! ```text
//! format_version:1;n:2;points_per_axis:16;field_name:u[;extra keys...]\n
//! ```
//!
//! followed by `points_per_axis^(2n)` little-endian `f64` values in the grid's
//! row-major order. A file may hold several records back to back (used for
//! tabulated frames and cached bracket fields).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{DhymError, Result};
use crate::grid::{GridSpec, ScalarField};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldRecord {
    pub name: String,
    pub field: ScalarField,
    /// Header keys beyond the four mandatory ones, in file order.
    pub extra: Vec<(String, String)>,
}

impl FieldRecord {
    pub fn new(name: impl Into<String>, field: ScalarField) -> Self {
        FieldRecord {
            name: name.into(),
            field,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.extra.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .get(key)
            .ok_or_else(|| DhymError::Format(format!("missing header key `{key}`")))?;
        raw.parse()
            .map_err(|_| DhymError::Format(format!("header key `{key}`: bad number `{raw}`")))
    }
}

fn check_token(s: &str) -> Result<()> {
    if s.contains([';', '\n', '\r']) {
        return Err(DhymError::Format(format!(
            "header token `{s}` contains a reserved character"
        )));
    }
    Ok(())
}

pub fn write_record<W: Write>(w: &mut W, record: &FieldRecord) -> Result<()> {
    let spec = record.field.spec();
    let mut header = format!(
        "format_version:{FORMAT_VERSION};n:{};points_per_axis:{};field_name:{}",
        spec.n(),
        spec.points_per_axis(),
        record.name
    );
    check_token(&record.name)?;
    for (k, v) in &record.extra {
        check_token(k)?;
        check_token(v)?;
        if k.contains(':') {
            return Err(DhymError::Format(format!("header key `{k}` contains `:`")));
        }
        header.push(';');
        header.push_str(k);
        header.push(':');
        header.push_str(v);
    }
    header.push('\n');
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(record.field.values().len() * 8);
    for v in record.field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads the next record, or `None` at a clean end of input.
pub fn read_record<R: BufRead>(r: &mut R) -> Result<Option<FieldRecord>> {
    let mut line = Vec::new();
    let read = r.read_until(b'\n', &mut line)?;
    if read == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(DhymError::Format("truncated header line".into()));
    }
    line.pop();
    let header = String::from_utf8(line)
        .map_err(|_| DhymError::Format("header is not valid UTF-8".into()))?;

    let mut version = None;
    let mut n = None;
    let mut points = None;
    let mut name = None;
    let mut extra = Vec::new();
    for item in header.split(';') {
        let (k, v) = item
            .split_once(':')
            .ok_or_else(|| DhymError::Format(format!("malformed header item `{item}`")))?;
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| DhymError::Format(format!("header key `{k}`: bad integer `{v}`")))
        };
        match k {
            "format_version" => version = Some(parse_usize(v)?),
            "n" => n = Some(parse_usize(v)?),
            "points_per_axis" => points = Some(parse_usize(v)?),
            "field_name" => name = Some(v.to_string()),
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    let missing = |k: &str| DhymError::Format(format!("missing header key `{k}`"));
    let version = version.ok_or_else(|| missing("format_version"))?;
    if version != FORMAT_VERSION as usize {
        return Err(DhymError::Format(format!(
            "unsupported format_version {version}"
        )));
    }
    let spec = GridSpec::new(
        n.ok_or_else(|| missing("n"))?,
        points.ok_or_else(|| missing("points_per_axis"))?,
    )?;
    let name = name.ok_or_else(|| missing("field_name"))?;

    let mut bytes = vec![0u8; spec.len() * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| DhymError::Format(format!("payload of `{name}` is truncated")))?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Some(FieldRecord {
        name,
        field: ScalarField::new(spec, values)?,
        extra,
    }))
}

pub fn save_records(path: impl AsRef<Path>, records: &[FieldRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        write_record(&mut w, rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<FieldRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        out.push(rec);
    }
    Ok(out)
}

pub fn save_field(path: impl AsRef<Path>, name: &str, field: &ScalarField) -> Result<()> {
    save_records(path, &[FieldRecord::new(name, field.clone())])
}

/// Loads the first record of a file.
pub fn load_field(path: impl AsRef<Path>) -> Result<FieldRecord> {
    let path = path.as_ref();
    load_records(path)?
        .into_iter()
        .next()
        .ok_or_else(|| DhymError::Format(format!("{} holds no field record", path.display())))
}
