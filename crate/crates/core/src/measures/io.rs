//! JSON-lines persistence for clouds and data sets.
//!
//! Layout: one header object carrying the format tag and dimensions,
//! followed by one JSON array per atom (or per sample, `[x_1, ..., x_q, y]`).
//! Numbers are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DataSet, ParticleCloud};
use crate::error::{Error, Result};

pub const CLOUD_FORMAT: &str = "particle-cloud";
pub const DATA_FORMAT: &str = "data-set";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudHeader {
    pub format: String,
    pub dim: usize,
    pub count: usize,
    /// Free-form metadata (scenario tags, configs) carried alongside the atoms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataHeader {
    pub format: String,
    pub input_dim: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

fn push_row(buf: &mut String, values: impl Iterator<Item = f64>) {
    buf.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            buf.push(',');
        }
        write!(buf, "{v:.16e}").expect("writing to a String cannot fail");
    }
    buf.push_str("]\n");
}

pub fn write_cloud<W: Write>(
    mut out: W,
    cloud: &ParticleCloud,
    meta: Option<serde_json::Value>,
) -> Result<()> {
    let header = CloudHeader {
        format: CLOUD_FORMAT.into(),
        dim: cloud.dim(),
        count: cloud.len(),
        meta,
    };
    let mut buf = serde_json::to_string(&header)?;
    buf.push('\n');
    for atom in cloud.atoms() {
        push_row(&mut buf, atom.iter().copied());
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn write_dataset<W: Write>(
    mut out: W,
    data: &DataSet,
    meta: Option<serde_json::Value>,
) -> Result<()> {
    let header = DataHeader {
        format: DATA_FORMAT.into(),
        input_dim: data.input_dim(),
        count: data.len(),
        meta,
    };
    let mut buf = serde_json::to_string(&header)?;
    buf.push('\n');
    for z in data.samples() {
        push_row(&mut buf, z.x.iter().copied().chain(std::iter::once(z.y)));
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

struct LineReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    fn next_line(&mut self) -> Result<&str> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Err(Error::Parse {
                    line: self.line_no,
                    message: "unexpected end of input".into(),
                });
            }
            if !self.buf.trim().is_empty() {
                return Ok(self.buf.trim());
            }
        }
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let line_no = self.line_no + 1;
        let line = self.next_line()?;
        let inner = line
            .strip_prefix('[')
            .and_then(|l| l.strip_suffix(']'))
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected a JSON array of numbers".into(),
            })?;
        let values = inner
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if values.len() != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {width} values, found {}", values.len()),
            });
        }
        Ok(values)
    }
}

/// Reads one cloud (header plus atoms) from the current position of `input`.
pub fn read_cloud<R: BufRead>(input: R) -> Result<(CloudHeader, ParticleCloud)> {
    let mut lines = LineReader {
        inner: input,
        line_no: 0,
        buf: String::new(),
    };
    read_cloud_from(&mut lines)
}

fn read_cloud_from<R: BufRead>(lines: &mut LineReader<R>) -> Result<(CloudHeader, ParticleCloud)> {
    let line_no = lines.line_no + 1;
    let header: CloudHeader = serde_json::from_str(lines.next_line()?)?;
    if header.format != CLOUD_FORMAT {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected format `{CLOUD_FORMAT}`, found `{}`", header.format),
        });
    }
    let mut coords = Vec::with_capacity(header.dim * header.count);
    for _ in 0..header.count {
        coords.extend(lines.row(header.dim)?);
    }
    let cloud = ParticleCloud::new(header.dim, coords)?;
    Ok((header, cloud))
}

/// Reads several consecutive clouds; `line_offset` lines were already consumed.
pub(crate) fn read_clouds<R: BufRead>(
    input: R,
    count: usize,
    line_offset: usize,
) -> Result<Vec<(CloudHeader, ParticleCloud)>> {
    let mut lines = LineReader {
        inner: input,
        line_no: line_offset,
        buf: String::new(),
    };
    (0..count).map(|_| read_cloud_from(&mut lines)).collect()
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<(DataHeader, DataSet)> {
    let mut lines = LineReader {
        inner: input,
        line_no: 0,
        buf: String::new(),
    };
    let header: DataHeader = serde_json::from_str(lines.next_line()?)?;
    if header.format != DATA_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected format `{DATA_FORMAT}`, found `{}`", header.format),
        });
    }
    let q = header.input_dim;
    let mut xs = Vec::with_capacity(q * header.count);
    let mut ys = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let mut row = lines.row(q + 1)?;
        ys.push(row.pop().expect("row has q + 1 values"));
        xs.extend(row);
    }
    let data = DataSet::new(q, xs, ys)?;
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cloud_round_trip_is_bit_exact(coords in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let cloud = ParticleCloud::new(1, coords).unwrap();
            let mut buf = Vec::new();
            write_cloud(&mut buf, &cloud, None).unwrap();
            let (_, back) = read_cloud(buf.as_slice()).unwrap();
            let a: Vec<u64> = cloud.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let data = DataSet::new(2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0], vec![std::f64::consts::PI, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data, Some(serde_json::json!({"task": "toy"}))).unwrap();
        let (header, back) = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(header.count, 2);
        assert_eq!(back, data);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let text = "{\"format\":\"particle-cloud\",\"dim\":2,\"count\":1}\n[1.0]\n";
        match read_cloud(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
