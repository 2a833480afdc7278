//! CSV input and output. Files have a header row, one observation per row
//! and one feature per column, with `.` as the decimal separator.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DataMatrix, FeatureCovariance};

/// A numeric table with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::invalid(format!("data row {} column {} is not a number: '{field}'", i + 1, j + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::invalid(format!("data row {} has {} fields, header has {}", i + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_table_path(path: &Path) -> Result<Table> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_table(file)
}

/// Integers print without a fraction; everything else uses the shortest
/// round-trip form, which switches to an exponent for tiny or huge values.
fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:?}")
    }
}

pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| format_value(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_data_matrix(path: &Path) -> Result<DataMatrix> {
    DataMatrix::from_rows(&read_table_path(path)?.rows)
}

/// A `q x q` covariance file with a header row.
pub fn read_covariance(path: &Path) -> Result<FeatureCovariance> {
    FeatureCovariance::from_rows(&read_table_path(path)?.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let header = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.5, -2.0], vec![0.1, 3e-9], vec![f64::NAN, 1e300]];
        let mut buf = Vec::new();
        write_table(&mut buf, &header, &rows).unwrap();
        let back = read_table(buf.as_slice()).unwrap();
        assert_eq!(back.header, header);
        assert!(back.rows[2][0].is_nan());
        assert_eq!(back.rows[..2], rows[..2]);
        assert_eq!(back.rows[2][1], 1e300);
    }

    #[test]
    fn rejects_text_and_ragged_rows() {
        assert!(read_table("a,b\n1,x\n".as_bytes()).is_err());
        assert!(read_table("a,b\n1,2,3\n".as_bytes()).is_err());
        let t = read_table("a, b\n 1 , 2\n".as_bytes()).unwrap();
        assert_eq!(t.rows, vec![vec![1.0, 2.0]]);
    }
}
