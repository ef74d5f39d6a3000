use std::path::{Path, PathBuf};

use cutlayer::formats::{write_pgm, GrayImage};
use cutlayer::partition::PartitionMasks;
use cutlayer::Error;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. } | Error::Singular(_) => Self::numerical(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|_| Failure::input(format!("{} is not UTF-8 text", path.display())))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

/// `<prefix><suffix>`, e.g. `out/seg` + `_mask0.pgm`.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// JSON object with `schema_version` first, followed by the fields of `body`.
pub fn versioned<T: Serialize>(body: &T) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    match serde_json::to_value(body).expect("report serializes") {
        serde_json::Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("data".into(), other);
        }
    }
    serde_json::Value::Object(map)
}

/// Prints the report and, with a prefix, writes it to `<prefix><suffix>`.
pub fn emit<T: Serialize>(body: &T, out: Option<(&Path, &str)>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(&versioned(body)).expect("report serializes");
    println!("{text}");
    if let Some((prefix, suffix)) = out {
        write(&with_suffix(prefix, suffix), format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

/// One `<prefix>_mask<i>.pgm` per mask, values `round(255·m)`, and
/// `<prefix>_argmax.pgm` holding the per-pixel index of the largest mask.
pub fn write_masks(prefix: &Path, masks: &PartitionMasks) -> Result<Vec<PathBuf>, Failure> {
    let (h, w) = (masks.height(), masks.width());
    let mut written = Vec::new();
    for i in 0..masks.k() {
        let path = with_suffix(prefix, &format!("_mask{i}.pgm"));
        write(&path, &write_pgm(&GrayImage::from_unit(h, w, masks.mask(i))?))?;
        written.push(path);
    }
    let index: Vec<u8> = masks.argmax().iter().map(|&i| i.min(255) as u8).collect();
    let path = with_suffix(prefix, "_argmax.pgm");
    write(&path, &write_pgm(&GrayImage::new(h, w, index)?))?;
    written.push(path);
    Ok(written)
}
