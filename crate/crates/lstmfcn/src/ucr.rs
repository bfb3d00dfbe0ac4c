//! UCR flat files: one series per line, the raw class label first, values
//! separated by commas or tabs.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use lstmfcn_core::data::{label_map, Dataset, Split};

use crate::error::{Error, Result};

/// Tab when the first line contains one, comma otherwise.
pub fn detect_delimiter(first_line: &str) -> u8 {
    if first_line.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Dataset name from a file name such as `CBF_TRAIN.tsv`.
pub fn dataset_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let upper = stem.to_ascii_uppercase();
    for suffix in ["_TRAIN", "_TEST"] {
        if upper.ends_with(suffix) {
            return stem[..stem.len() - suffix.len()].to_string();
        }
    }
    stem
}

fn first_line(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    while line.trim().is_empty() {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
    }
    Ok(line)
}

fn parse_field(path: &Path, line: u64, column: usize, token: &str) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: format!("{token:?} is not a number"),
    })
}

/// Reads `(raw label, values)` rows with their line numbers, enforcing one
/// common series length.
pub fn read_rows(path: &Path) -> Result<Vec<(u64, f64, Vec<f64>)>> {
    let delimiter = detect_delimiter(&first_line(path)?);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                column: record.len().min(expected) + 1,
                message: format!("expected {expected} fields like the first row, found {}", record.len()),
            });
        }
        if expected < 2 {
            return Err(Error::Parse { path: path.to_path_buf(), line, column: 2, message: "row holds a label but no values".into() });
        }
        let label = parse_field(path, line, 1, &record[0])?;
        let values = record.iter().enumerate().skip(1).map(|(i, tok)| parse_field(path, line, i + 1, tok)).collect::<Result<Vec<_>>>()?;
        rows.push((line, label, values));
    }
    if rows.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), message: "no series found".into() });
    }
    Ok(rows)
}

/// Loads a UCR file. Labels are mapped through `label_values` (the training
/// split's map) when given, otherwise through the file's own sorted labels.
pub fn load_ucr(path: &Path, split: Split, label_values: Option<&[f64]>) -> Result<Dataset> {
    let rows = read_rows(path)?;
    if let Some(map) = label_values {
        if let Some((line, label, _)) = rows.iter().find(|(_, l, _)| !map.contains(l)) {
            return Err(Error::UnknownLabel { path: path.to_path_buf(), line: *line, label: *label });
        }
    }
    let map = match label_values {
        Some(m) => m.to_vec(),
        None => label_map(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
    };
    let rows = rows.into_iter().map(|(_, label, values)| (label, values)).collect();
    Ok(Dataset::from_raw(dataset_name(path), split, rows, Some(&map))?)
}

/// Loads a train/test pair; the test labels go through the training map.
pub fn load_pair(train: &Path, test: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_ucr(train, Split::Train, None)?;
    let test = load_ucr(test, Split::Test, Some(train.label_values()))?;
    Ok((train, test))
}

/// Writes `dataset` in the UCR layout with raw labels. Values are printed in
/// shortest round-trip form, so loading the file back is bit-exact.
pub fn save_ucr(path: &Path, dataset: &Dataset, delimiter: u8) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    for (i, series) in dataset.series().iter().enumerate() {
        let row = std::iter::once(dataset.raw_label(i)).chain(series.data().iter().copied()).map(|v| v.to_string());
        writer.write_record(row).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_line_example() {
        let f = file("2,0.1,0.2\n");
        let d = load_ucr(f.path(), Split::Train, None).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels(), &[0]);
        assert_eq!(d.series()[0].data(), &[0.1, 0.2]);
    }

    #[test]
    fn tabs_are_detected() {
        let f = file("-1\t1.5\t2\n1\t3\t4.25\n");
        let d = load_ucr(f.path(), Split::Train, None).unwrap();
        assert_eq!(d.labels(), &[0, 1]);
        assert_eq!(d.label_values(), &[-1.0, 1.0]);
        assert_eq!(d.series()[1].data(), &[3.0, 4.25]);
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let f = file("1,0.1,0.2\n2,0.3\n");
        match load_ucr(f.path(), Split::Train, None).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_token_reports_line_and_column() {
        let f = file("1,0.1,0.2\n2,0.3,abc\n");
        let err = load_ucr(f.path(), Split::Train, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 3, .. }), "{err}");
        assert!(err.to_string().contains("\"abc\""));
    }

    #[test]
    fn unseen_test_label_is_a_label_error() {
        let f = file("1,0.1\n3,0.2\n");
        let err = load_ucr(f.path(), Split::Test, Some(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { line: 2, label, .. } if label == 3.0), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = file("\n\n");
        assert!(matches!(load_ucr(f.path(), Split::Train, None), Err(Error::Format { .. })));
    }

    #[test]
    fn names_drop_the_split_suffix() {
        assert_eq!(dataset_name(Path::new("/x/CBF_TRAIN.tsv")), "CBF");
        assert_eq!(dataset_name(Path::new("Coffee_TEST")), "Coffee");
        assert_eq!(dataset_name(Path::new("plain.csv")), "plain");
    }
}
