//! Column-major tables of draws with named columns and CSV I/O.
//!
//! CSV layout: optional metadata lines `# key=value`, one header row, then one
//! row per draw. Values use Rust's shortest round-trip `f64` formatting, so
//! reading a written file reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
    metadata: Vec<(String, String)>,
}

impl Dataset {
    /// Builds a dataset from equally long columns.
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if let Some(bad) = columns.iter().position(|c| c.len() != first.len()) {
                return Err(Error::Dimension(format!(
                    "column `{}` has {} rows, expected {}",
                    labels[bad],
                    columns[bad].len(),
                    first.len()
                )));
            }
        }
        Ok(Self {
            labels,
            columns,
            metadata: Vec::new(),
        })
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, label: &str) -> Result<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownColumn(label.to_string()))
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (key, value) in &self.metadata {
            writeln!(out, "# {key}={value}")?;
        }
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&self.labels)?;
        let mut record = Vec::with_capacity(self.n_cols());
        for row in 0..self.n_rows() {
            record.clear();
            record.extend(self.columns.iter().map(|c| c[row].to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;

        let mut metadata = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if let Some((k, v)) = body.split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let labels: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); labels.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            for (col, field) in record.iter().enumerate() {
                let value = field.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "row {}: column `{}`: `{field}` is not a number",
                        row + 1,
                        labels[col]
                    ))
                })?;
                columns[col].push(value);
            }
        }
        let mut data = Self::new(labels, columns)?;
        data.metadata = metadata;
        Ok(data)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_column_is_reported_by_name() {
        let data = Dataset::new(vec!["x".into()], vec![vec![1.0]]).unwrap();
        assert!(matches!(data.column("y"), Err(Error::UnknownColumn(c)) if c == "y"));
    }

    #[test]
    fn ragged_columns_are_rejected() {
        let err = Dataset::new(vec!["x".into(), "y".into()], vec![vec![1.0], vec![]]);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn metadata_survives_csv() {
        let data = Dataset::new(vec!["a1".into(), "a2".into()], vec![vec![0.5], vec![-1.5]])
            .unwrap()
            .with_metadata("a", -1.0);
        let text = data.to_csv_string().unwrap();
        assert!(text.starts_with("# a=-1\na1,a2\n"));
        let back = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.metadata_value("a"), Some("-1"));
        assert_eq!(back, data);
    }

    #[test]
    fn empty_dataset_keeps_header() {
        let data = Dataset::new(vec!["i1".into(), "y".into()], vec![vec![], vec![]]).unwrap();
        let text = data.to_csv_string().unwrap();
        assert_eq!(text, "i1,y\n");
        let back = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.labels(), data.labels());
        assert_eq!(back.n_rows(), 0);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
            let other: Vec<f64> = values.iter().map(|v| -v / 3.0).collect();
            let data = Dataset::new(vec!["u".into(), "y".into()], vec![values, other]).unwrap();
            let back = Dataset::read_csv(data.to_csv_string().unwrap().as_bytes()).unwrap();
            for (a, b) in data.columns().iter().zip(back.columns()) {
                let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
