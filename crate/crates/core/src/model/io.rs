//! Dataset readers and writers.
//!
//! Two interchangeable formats:
//! - long CSV with header `obs_id,t1,...,td,value`, one row per point;
//! - JSON lines, one observation per line with `grid` and `values` arrays
//!   (`grid` entries are numbers for d = 1 or coordinate arrays for d > 1).
//!
//! All floating-point output is written with 17 significant digits so files
//! round-trip losslessly.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Observation};

/// 17 significant digits, enough to reconstruct any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let d = data
        .observations
        .first()
        .map(|o| o.points.ncols())
        .unwrap_or(1);
    let mut header = String::from("obs_id");
    for j in 1..=d {
        header.push_str(&format!(",t{j}"));
    }
    header.push_str(",value");
    writeln!(w, "{header}")?;
    for (i, obs) in data.observations.iter().enumerate() {
        for l in 0..obs.values.len() {
            let mut row = format!("{}", i + 1);
            for j in 0..d {
                row.push(',');
                row.push_str(&fmt_f64(obs.points[(l, j)]));
            }
            row.push(',');
            row.push_str(&fmt_f64(obs.values[l]));
            writeln!(w, "{row}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::DataFormat("empty CSV".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "obs_id" || *cols.last().unwrap() != "value" {
        return Err(Error::DataFormat(format!(
            "expected header obs_id,t1,...,td,value, got {header:?}"
        )));
    }
    let d = cols.len() - 2;
    // Group rows by obs_id in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)> =
        std::collections::HashMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::DataFormat(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::DataFormat(format!("line {}: bad number {s:?}", lineno + 2)))
        };
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        for f in &fields[1..=d] {
            entry.0.push(parse(f)?);
        }
        entry.1.push(parse(fields[d + 1])?);
    }
    let mut observations = Vec::with_capacity(order.len());
    for id in order {
        let (coords, values) = groups.remove(&id).unwrap();
        let n = values.len();
        let points = DMatrix::from_row_iterator(n, d, coords);
        observations.push(Observation {
            points,
            values: DVector::from_vec(values),
        });
    }
    let data = Dataset { observations };
    data.validate()?;
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct JsonObs {
    grid: serde_json::Value,
    values: Vec<f64>,
}

pub fn write_dataset_jsonl<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for obs in &data.observations {
        let d = obs.points.ncols();
        let grid: serde_json::Value = if d == 1 {
            serde_json::json!(obs.points.column(0).iter().copied().collect::<Vec<f64>>())
        } else {
            let rows: Vec<Vec<f64>> = (0..obs.points.nrows())
                .map(|l| obs.points.row(l).iter().copied().collect())
                .collect();
            serde_json::json!(rows)
        };
        let rec = JsonObs {
            grid,
            values: obs.values.iter().copied().collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_jsonl<R: Read>(reader: R) -> Result<Dataset> {
    let mut observations = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonObs = serde_json::from_str(&line)
            .map_err(|e| Error::DataFormat(format!("line {}: {e}", lineno + 1)))?;
        let points = parse_grid(&rec.grid, lineno + 1)?;
        if points.nrows() != rec.values.len() {
            return Err(Error::DataFormat(format!(
                "line {}: grid has {} points but values has {}",
                lineno + 1,
                points.nrows(),
                rec.values.len()
            )));
        }
        observations.push(Observation {
            points,
            values: DVector::from_vec(rec.values),
        });
    }
    let data = Dataset { observations };
    data.validate()?;
    Ok(data)
}

fn parse_grid(value: &serde_json::Value, lineno: usize) -> Result<DMatrix<f64>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::DataFormat(format!("line {lineno}: grid must be an array")))?;
    if arr.is_empty() {
        return Err(Error::DataFormat(format!("line {lineno}: empty grid")));
    }
    if arr[0].is_number() {
        let coords: Option<Vec<f64>> = arr.iter().map(|v| v.as_f64()).collect();
        let coords =
            coords.ok_or_else(|| Error::DataFormat(format!("line {lineno}: bad grid entry")))?;
        Ok(DMatrix::from_iterator(coords.len(), 1, coords))
    } else {
        let rows: Option<Vec<Vec<f64>>> = arr
            .iter()
            .map(|v| {
                v.as_array()
                    .map(|inner| inner.iter().filter_map(|x| x.as_f64()).collect::<Vec<f64>>())
            })
            .collect();
        let rows =
            rows.ok_or_else(|| Error::DataFormat(format!("line {lineno}: bad grid entry")))?;
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DataFormat(format!(
                "line {lineno}: inconsistent grid coordinate counts"
            )));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            d,
            rows.into_iter().flatten(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_dataset() -> Dataset {
        Dataset {
            observations: vec![
                Observation {
                    points: DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]),
                    values: DVector::from_vec(vec![1.5, -2.25, 0.125]),
                },
                Observation {
                    points: DMatrix::from_column_slice(2, 1, &[0.25, 0.75]),
                    values: DVector::from_vec(vec![0.1, 0.9]),
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let data = sample_dataset();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_round_trip_multidim() {
        let data = Dataset {
            observations: vec![Observation {
                points: DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
                values: DVector::from_vec(vec![1.0, -2.0, 3.5]),
            }],
        };
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("obs_id,t1,t2,value"));
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn jsonl_round_trip_multidim() {
        let data = Dataset {
            observations: vec![Observation {
                points: DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
                values: DVector::from_vec(vec![5.0, 6.0]),
            }],
        };
        let mut buf = Vec::new();
        write_dataset_jsonl(&data, &mut buf).unwrap();
        let back = read_dataset_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn bad_header_rejected() {
        let res = read_dataset_csv("a,b,c\n1,2,3\n".as_bytes());
        assert!(matches!(res, Err(Error::DataFormat(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(raw in proptest::collection::vec(
            (proptest::num::f64::NORMAL, -1e6f64..1e6f64), 1..40)
        ) {
            let n = raw.len();
            let points = DMatrix::from_iterator(n, 1, raw.iter().map(|r| r.1));
            let values = DVector::from_iterator(n, raw.iter().map(|r| r.0));
            let data = Dataset { observations: vec![Observation { points, values }] };
            let mut csv = Vec::new();
            write_dataset_csv(&data, &mut csv).unwrap();
            prop_assert_eq!(&read_dataset_csv(csv.as_slice()).unwrap(), &data);
            let mut jsonl = Vec::new();
            write_dataset_jsonl(&data, &mut jsonl).unwrap();
            prop_assert_eq!(&read_dataset_jsonl(jsonl.as_slice()).unwrap(), &data);
        }
    }
}
