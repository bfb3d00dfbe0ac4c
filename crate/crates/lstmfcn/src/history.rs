//! Per-epoch training history as CSV.

use std::path::Path;

use lstmfcn_core::train::EpochRecord;

use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["epoch", "train_loss", "val_accuracy", "lr", "batch_size"];

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        let row = [r.epoch.to_string(), r.train_loss.to_string(), r.val_accuracy.to_string(), r.lr.to_string(), r.batch_size.to_string()];
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("expected header {}", HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = i as u64 + 2;
        let field = |c: usize| -> Result<&str> {
            row.get(c).ok_or_else(|| Error::Parse { path: path.to_path_buf(), line, column: c + 1, message: "missing field".into() })
        };
        let bad = |c: usize, v: &str| Error::Parse { path: path.to_path_buf(), line, column: c + 1, message: format!("cannot parse {v:?}") };
        let int = |c: usize| field(c).and_then(|v| v.parse::<usize>().map_err(|_| bad(c, v)));
        let real = |c: usize| field(c).and_then(|v| v.parse::<f64>().map_err(|_| bad(c, v)));
        out.push(EpochRecord { epoch: int(0)?, train_loss: real(1)?, val_accuracy: real(2)?, lr: real(3)?, batch_size: int(4)? });
    }
    Ok(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse { path: path.to_path_buf(), line, column: 0, message: format!("{kind:?}") },
    }
}
