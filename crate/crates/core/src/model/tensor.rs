//! Named dense tensors and the on-disk tensor container.
//!
//! Container layout (all header text is ASCII, one record per line):
//!
//! ```text
//! MULTIAUG-TENSORS v1
//! meta <key> <value>                  (zero or more)
//! tensor <name> <d0>x<d1>x... <offset> (one per tensor, offsets in bytes from payload start)
//! data
//! <payload: every tensor as little-endian f64, in header order>
//! ```
//!
//! A scalar tensor has the shape token `scalar`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "MULTIAUG-TENSORS v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format {
            what: "tensor container",
            message: format!("missing tensor {name:?}"),
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            let shape = if t.shape.is_empty() {
                "scalar".to_string()
            } else {
                t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            header.push_str(&format!("tensor {} {shape} {offset}\n", t.name));
            offset += t.data.len() * 8;
        }
        header.push_str("data\n");
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(offset);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "tensor container",
            message,
        };
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        let next_line = |reader: &mut BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            let n = reader
                .read_line(line)
                .map_err(|e| bad(format!("header read failed: {e}")))?;
            if n == 0 {
                return Err(bad("unexpected end of header".into()));
            }
            while line.ends_with('\n') || line.ends_with('\r') {
                line.pop();
            }
            Ok(())
        };
        next_line(&mut reader, &mut line)?;
        if line != MAGIC {
            return Err(bad(format!("bad magic line {line:?}")));
        }
        let mut meta = BTreeMap::new();
        let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
        loop {
            next_line(&mut reader, &mut line)?;
            let mut parts = line.splitn(2, ' ');
            match parts.next() {
                Some("data") => break,
                Some("meta") => {
                    let rest = parts.next().unwrap_or("");
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                Some("tensor") => {
                    let fields: Vec<&str> = parts.next().unwrap_or("").split(' ').collect();
                    if fields.len() != 3 {
                        return Err(bad(format!("bad tensor record {line:?}")));
                    }
                    let shape = if fields[1] == "scalar" {
                        vec![]
                    } else {
                        fields[1]
                            .split('x')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| bad(format!("bad shape in {line:?}: {e}")))?
                    };
                    let offset = fields[2]
                        .parse::<usize>()
                        .map_err(|e| bad(format!("bad offset in {line:?}: {e}")))?;
                    specs.push((fields[0].to_string(), shape, offset));
                }
                _ => return Err(bad(format!("unexpected header line {line:?}"))),
            }
        }
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| bad(format!("payload read failed: {e}")))?;
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, offset) in specs {
            let count: usize = shape.iter().product();
            let end = offset + count * 8;
            if end > payload.len() {
                return Err(bad(format!("tensor {name:?} runs past the payload")));
            }
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Self { meta, tensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}
