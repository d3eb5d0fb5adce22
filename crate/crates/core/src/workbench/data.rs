//! CSV ingestion: numeric columns, label last, optional header row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{Dataset, Scaler};

use super::config::DataFormat;

/// Raw numeric table with 1-based source line numbers per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    pub width: usize,
}

fn is_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

/// Parses CSV text. The first record is a header if any of its cells is not a
/// number. Every other cell must parse as a finite number and every row must
/// have the same width.
pub fn parse_csv(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line()) as usize;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if k == 0 && header.is_none() && rows.is_empty() && record.iter().any(|c| !is_numeric(c)) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse { line, message: format!("expected {w} columns, found {}", record.len()) });
            }
            None => width = Some(record.len()),
            _ => {}
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, message: format!("column {}: `{cell}` is not a finite number", c + 1) }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows, width: width.unwrap_or(0) })
}

/// Features are every column but the last, which is the label.
pub fn dataset_from_table(table: &Table, subset: Option<usize>) -> Result<(Dataset, Scaler)> {
    if table.width < 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("need at least one feature column and a label column, found {} columns", table.width),
        });
    }
    let keep = subset.map_or(table.rows.len(), |m| m.min(table.rows.len()));
    if keep < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 data rows, found {keep}")));
    }
    let d = table.width - 1;
    let mut x = Vec::with_capacity(keep * d);
    let mut y = Vec::with_capacity(keep);
    for row in &table.rows[..keep] {
        x.extend_from_slice(&row[..d]);
        y.push(row[d]);
    }
    Dataset::standardized(x, y, d)
}

/// Loads and standardizes a dataset file.
pub fn load_dataset(path: &Path, format: DataFormat, subset: Option<usize>) -> Result<(Dataset, Scaler)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    match format {
        DataFormat::Csv => {
            let table = parse_csv(&text).map_err(|e| e.context(path.display().to_string()))?;
            dataset_from_table(&table, subset).map_err(|e| e.context(path.display().to_string()))
        }
    }
}

/// Test inputs in original units, standardized with `scaler`. A trailing
/// column beyond the `d` features is returned separately as labels.
pub fn load_inputs(path: &Path, scaler: &Scaler) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    let table = parse_csv(&text).map_err(|e| e.context(path.display().to_string()))?;
    let d = scaler.x_mean.len();
    let labelled = match table.width {
        w if w == d => false,
        w if w == d + 1 => true,
        w => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: expected {d} or {} columns, found {w}", path.display(), d + 1),
            })
        }
    };
    let inputs = table.rows.iter().map(|r| scaler.standardize_input(&r[..d])).collect();
    let labels = labelled.then(|| table.rows.iter().map(|r| r[d]).collect());
    Ok((inputs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_standardize_by_hand() {
        let (data, scaler) = dataset_from_table(&parse_csv("1,10,5\n2,20,7\n3,30,9\n").unwrap(), None).unwrap();
        // Column means 2 and 20, sample stds 1 and 10; labels mean 7, std 2.
        assert_eq!(scaler.x_mean, vec![2.0, 20.0]);
        assert_eq!(scaler.x_std, vec![1.0, 10.0]);
        assert_eq!((scaler.y_mean, scaler.y_std), (7.0, 2.0));
        assert_eq!(data.x(), &[-1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(data.y(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn header_is_detected() {
        let a = parse_csv("cement,water,strength\n1,2,3\n4,5,6\n").unwrap();
        let b = parse_csv("1,2,3\n4,5,6\n").unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.header.as_ref().unwrap()[2], "strength");
        assert!(b.header.is_none());
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse_csv("a,b,c\n1,2,3\n4,5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_line_and_column() {
        let err = parse_csv("1,2,3\n4,x,6\n").unwrap_err();
        let Error::Parse { line, message } = err else { panic!() };
        assert_eq!(line, 2);
        assert!(message.contains("column 2"));
    }

    #[test]
    fn too_few_rows() {
        assert!(dataset_from_table(&parse_csv("x,y\n1,2\n").unwrap(), None).is_err());
        assert!(dataset_from_table(&parse_csv("1,2\n3,4\n5,6\n").unwrap(), Some(1)).is_err());
    }

    #[test]
    fn test_inputs_use_training_scaler() {
        let (_, scaler) = dataset_from_table(&parse_csv("1,10,5\n2,20,7\n3,30,9\n").unwrap(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "4,40\n2,20\n").unwrap();
        let (x, labels) = load_inputs(&p, &scaler).unwrap();
        assert_eq!(x, vec![vec![2.0, 2.0], vec![0.0, 0.0]]);
        assert!(labels.is_none());
    }
}
