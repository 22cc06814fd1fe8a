use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub model_hash: String,
    pub n_samples: usize,
}

/// `N x n` observations with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub meta: DatasetMeta,
    /// Error-free values `X~`, when known.
    pub latent: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn from_values(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() != labels.len() {
            return Err(Error::Config("dataset needs rows and one label per column".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset contains non-finite entries".into()));
        }
        let n_samples = values.nrows();
        Ok(Dataset {
            values,
            labels,
            meta: DatasetMeta { seed: 0, model_hash: String::new(), n_samples },
            latent: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::sample_covariance(&self.values)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels)?;
        let mut buf = Vec::with_capacity(self.n_vars());
        for row in self.values.row_iter() {
            buf.clear();
            buf.extend(row.iter().map(|v| format!("{v}")));
            out.write_record(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != labels.len() {
                return Err(Error::Config(format!("row {} has {} fields", rows + 1, rec.len())));
            }
            for f in rec.iter() {
                data.push(f.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number '{f}': {e}")))?);
            }
            rows += 1;
        }
        Self::from_values(DMatrix::from_row_slice(rows, labels.len(), &data), labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = Dataset::from_values(
            DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 0.125, 3.0]),
            vec!["X1".into(), "X2".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "X1,X2\n1.5,-2\n0.125,3\n");
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap().values, d.values);
    }

    #[test]
    fn rejects_missing_entries() {
        assert!(Dataset::read_csv("a,b\n1,\n".as_bytes()).is_err());
    }
}
