//! Minimal binary little-endian PLY support for vertex-only files.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            ScalarType::I8 => out.push(v.round().clamp(-128.0, 127.0) as i8 as u8),
            ScalarType::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            ScalarType::I16 => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
            ScalarType::U16 => out.extend_from_slice(&(v.round() as u16).to_le_bytes()),
            ScalarType::I32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
            ScalarType::U32 => out.extend_from_slice(&(v.round() as u32).to_le_bytes()),
            ScalarType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub ty: ScalarType,
}

impl Property {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Property { name: name.into(), ty }
    }
}

/// Vertex element of a PLY file, row-major values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexTable {
    pub properties: Vec<Property>,
    pub values: Vec<f64>,
}

impl VertexTable {
    pub fn len(&self) -> usize {
        if self.properties.is_empty() {
            0
        } else {
            self.values.len() / self.properties.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.index_of(name).ok_or_else(|| Error::Format(format!("PLY property `{name}` missing")))?;
        let w = self.properties.len();
        Ok((0..self.len()).map(|r| self.values[r * w + k]).collect())
    }

    /// Names with `prefix` followed by a decimal index, sorted by that index.
    pub fn indexed_names(&self, prefix: &str) -> Vec<String> {
        let mut found: Vec<(usize, String)> = self
            .properties
            .iter()
            .filter_map(|p| p.name.strip_prefix(prefix).and_then(|rest| rest.parse::<usize>().ok()).map(|i| (i, p.name.clone())))
            .collect();
        found.sort();
        found.into_iter().map(|(_, n)| n).collect()
    }
}

pub fn read_vertices<R: BufRead>(mut reader: R) -> Result<VertexTable> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut reader)? != "ply" {
        return Err(Error::Format("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next_line(&mut reader)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!("unsupported PLY format `{fmt}`")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad vertex count `{n}`")))?);
                } else if count.is_none() {
                    return Err(Error::Format("vertex element must come first".into()));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Format("list properties on vertices are not supported".into()));
            }
            ["property", ty, name] if in_vertex => {
                let ty = ScalarType::parse(ty).ok_or_else(|| Error::Format(format!("unknown PLY type `{ty}`")))?;
                properties.push(Property::new(*name, ty));
            }
            ["property", ..] => {}
            _ => return Err(Error::Format(format!("unrecognized PLY header line `{l}`"))),
        }
    }
    let n = count.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    let stride: usize = properties.iter().map(|p| p.ty.size()).sum();
    let mut raw = vec![0u8; n * stride];
    reader.read_exact(&mut raw)?;
    let mut values = Vec::with_capacity(n * properties.len());
    for row in raw.chunks_exact(stride.max(1)).take(n) {
        let mut off = 0;
        for p in &properties {
            values.push(p.ty.decode(&row[off..]));
            off += p.ty.size();
        }
    }
    Ok(VertexTable { properties, values })
}

pub fn write_vertices<W: Write>(mut w: W, table: &VertexTable) -> Result<()> {
    let n = table.len();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {n}\n"));
    for p in &table.properties {
        header.push_str(&format!("property {} {}\n", p.ty.name(), p.name));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let width = table.properties.len();
    let mut buf = Vec::with_capacity(n * width * 4);
    for r in 0..n {
        for (k, p) in table.properties.iter().enumerate() {
            p.ty.encode(table.values[r * width + k], &mut buf);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}
