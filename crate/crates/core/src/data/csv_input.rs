use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{NlcError, Result};
use crate::tensor::Matrix;

/// Unprocessed inputs (`d_raw x N`) and integer labels.
#[derive(Clone, Debug)]
pub struct RawData {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    /// Original label strings; label `i` stands for `class_names[i]`.
    pub class_names: Vec<String>,
}

impl RawData {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Writes the data as CSV with a header and the label in the last column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.inputs.nrows();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (j, &y) in self.labels.iter().enumerate() {
            let mut rec: Vec<String> = self.inputs.column(j).iter().map(|v| v.to_string()).collect();
            rec.push(self.class_names[y].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

/// Reads a rectangular numeric CSV. Rows and columns in errors are 1-based
/// and count the header line when present. Label strings are mapped to
/// classes in sorted order unless `classes` fixes the allowed set.
pub fn load_csv(
    path: &Path,
    label: &LabelColumn,
    has_header: bool,
    classes: Option<&[String]>,
) -> Result<RawData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header_offset = usize::from(has_header);
    let label_idx = |width: usize, headers: Option<&csv::StringRecord>| -> Result<usize> {
        match label {
            LabelColumn::Index(i) if *i < width => Ok(*i),
            LabelColumn::Index(i) => Err(NlcError::Configuration(format!(
                "label column {i} out of range for {width} columns"
            ))),
            LabelColumn::Last => Ok(width - 1),
            LabelColumn::Name(n) => headers
                .and_then(|h| h.iter().position(|c| c == n))
                .ok_or_else(|| NlcError::Configuration(format!("no column named '{n}'"))),
        }
    };
    let headers = if has_header {
        Some(rdr.headers()?.clone())
    } else {
        None
    };
    let mut width = headers.as_ref().map(|h| h.len());
    let mut lab_col = match width {
        Some(w) => Some(label_idx(w, headers.as_ref())?),
        None => None,
    };
    let mut values = Vec::new();
    let mut label_strings = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1 + header_offset;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(NlcError::Parse {
                row,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let lc = match lab_col {
            Some(c) => c,
            None => *lab_col.insert(label_idx(w, None)?),
        };
        for (c, cell) in rec.iter().enumerate() {
            if c == lc {
                label_strings.push((row, c + 1, cell.to_string()));
            } else {
                let v: f64 = cell.parse().map_err(|_| NlcError::Parse {
                    row,
                    column: c + 1,
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(NlcError::Parse {
                        row,
                        column: c + 1,
                        message: "non-finite value".into(),
                    });
                }
                values.push(v);
            }
        }
    }
    let n = label_strings.len();
    let w = width.unwrap_or(0);
    if n == 0 || w < 2 {
        return Err(NlcError::Parse {
            row: 1,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let class_names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut set: Vec<String> = label_strings.iter().map(|(_, _, s)| s.clone()).collect();
            set.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
                _ => a.cmp(b),
            });
            set.dedup();
            set
        }
    };
    let lookup: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut labels = Vec::with_capacity(n);
    for (row, column, s) in &label_strings {
        labels.push(*lookup.get(s.as_str()).ok_or_else(|| NlcError::Parse {
            row: *row,
            column: *column,
            message: format!("unknown label '{s}'"),
        })?);
    }
    // Row-major values: one record per column of the input matrix.
    let inputs = Matrix::from_column_slice(w - 1, n, &values);
    Ok(RawData {
        inputs,
        labels,
        class_names,
    })
}
