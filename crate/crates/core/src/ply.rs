//! PLY reading and writing for colored point clouds.
//!
//! Reads ASCII and binary little-endian files, keeping only the `x y z` and
//! `red green blue` vertex properties. Other elements (faces, edges) are
//! parsed past and discarded. Writes are always ASCII with a fixed header.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::cloud::{CloudError, PointCloud, Rgb};
use crate::Point;

#[derive(Error, Debug)]
pub enum PlyError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),

    #[error("vertex element is missing property `{0}`")]
    MissingProperty(String),

    #[error("vertex {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },

    #[error("malformed PLY body: {0}")]
    MalformedBody(String),

    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    /// Divisor mapping a stored color value onto `[0, 1]`.
    fn color_range(self) -> Option<f64> {
        match self {
            Scalar::I8 | Scalar::U8 => Some(255.0),
            Scalar::I16 | Scalar::U16 => Some(65535.0),
            Scalar::F32 | Scalar::F64 => Some(1.0),
            Scalar::I32 | Scalar::U32 => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(PlyError::MalformedHeader("missing end_header".into()));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| PlyError::MalformedHeader("header is not valid UTF-8".into()))?
            .trim_end_matches('\r')
            .to_string();
        offset += nl + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }

    let mut iter = lines.iter();
    if iter.next().map(|l| l.trim()) != Some("ply") {
        return Err(PlyError::MalformedHeader("first line must be `ply`".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in iter {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(PlyError::MalformedHeader(format!(
                            "unsupported format `{other}`"
                        )))
                    }
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| {
                    PlyError::MalformedHeader(format!("bad element count `{count}`"))
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let element = elements.last_mut().ok_or_else(|| {
                    PlyError::MalformedHeader("property before any element".into())
                })?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| PlyError::MalformedHeader(format!("unknown type `{count}`")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| PlyError::MalformedHeader(format!("unknown type `{item}`")))?;
                element.properties.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let element = elements.last_mut().ok_or_else(|| {
                    PlyError::MalformedHeader("property before any element".into())
                })?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| PlyError::MalformedHeader(format!("unknown type `{ty}`")))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => {
                return Err(PlyError::MalformedHeader(format!(
                    "unrecognized header line `{line}`"
                )))
            }
        }
    }
    let format = format.ok_or_else(|| PlyError::MalformedHeader("missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Sequential value source over either body encoding.
trait ValueReader {
    fn next(&mut self, ty: Scalar) -> Result<f64, PlyError>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueReader for AsciiReader<'_> {
    fn next(&mut self, _ty: Scalar) -> Result<f64, PlyError> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| PlyError::MalformedBody("unexpected end of data".into()))?;
        tok.parse::<f64>()
            .map_err(|_| PlyError::MalformedBody(format!("bad numeric token `{tok}`")))
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        let end = self.pos + ty.size();
        if end > self.bytes.len() {
            return Err(PlyError::MalformedBody("unexpected end of data".into()));
        }
        let v = ty.read_le(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }
}

fn prop_index(element: &Element, name: &str) -> Result<usize, PlyError> {
    element
        .properties
        .iter()
        .position(|p| matches!(p, Property::Scalar { .. }) && p.name() == name)
        .ok_or_else(|| PlyError::MissingProperty(name.to_string()))
}

fn read_body(header: &Header, reader: &mut dyn ValueReader, id: &str) -> Result<PointCloud, PlyError> {
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no vertex element".into()))?;
    let coord_idx = [
        prop_index(vertex, "x")?,
        prop_index(vertex, "y")?,
        prop_index(vertex, "z")?,
    ];
    let color_idx = [
        prop_index(vertex, "red")?,
        prop_index(vertex, "green")?,
        prop_index(vertex, "blue")?,
    ];
    let mut color_range = [1.0; 3];
    for (range, &i) in color_range.iter_mut().zip(&color_idx) {
        let Property::Scalar { ty, name } = &vertex.properties[i] else {
            unreachable!()
        };
        *range = ty.color_range().ok_or_else(|| {
            PlyError::MalformedHeader(format!("unsupported color type for `{name}`"))
        })?;
    }

    let mut vertices = Vec::with_capacity(vertex.count);
    let mut colors = Vec::with_capacity(vertex.count);
    let mut row = vec![0.0; vertex.properties.len()];
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        for _ in 0..element.count {
            for (slot, prop) in row.iter_mut().zip(&element.properties) {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = reader.next(*ty)?;
                        if is_vertex {
                            *slot = v;
                        }
                    }
                    Property::List { count, item, .. } => {
                        let n = reader.next(*count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(PlyError::MalformedBody(format!("bad list length {n}")));
                        }
                        for _ in 0..n as usize {
                            reader.next(*item)?;
                        }
                    }
                }
            }
            if is_vertex {
                let p = Point::new(row[coord_idx[0]], row[coord_idx[1]], row[coord_idx[2]]);
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(PlyError::NonFiniteCoordinate {
                        index: vertices.len(),
                    });
                }
                let c: Rgb = [
                    row[color_idx[0]] / color_range[0],
                    row[color_idx[1]] / color_range[1],
                    row[color_idx[2]] / color_range[2],
                ];
                vertices.push(p);
                colors.push(c);
            }
        }
    }
    Ok(PointCloud::new(id, vertices, colors)?)
}

/// Parses PLY bytes; `id` becomes the cloud label.
pub fn parse_ply(bytes: &[u8], id: &str) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| PlyError::MalformedBody("ASCII body is not valid UTF-8".into()))?;
            let mut reader = AsciiReader {
                tokens: text.split_ascii_whitespace(),
            };
            read_body(&header, &mut reader, id)
        }
        Format::BinaryLittleEndian => {
            let mut reader = BinaryReader { bytes: body, pos: 0 };
            read_body(&header, &mut reader, id)
        }
    }
}

/// Loads a colored point cloud. The cloud id is the file stem.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ply(&bytes, &id)
}

fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the cloud as ASCII PLY. Coordinates use the shortest decimal form
/// that round-trips the `f64` value exactly.
pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> io::Result<()> {
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    for (v, c) in cloud.vertices().iter().zip(cloud.colors()) {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            v.x,
            v.y,
            v.z,
            quantize(c[0]),
            quantize(c[1]),
            quantize(c[2])
        )?;
    }
    out.flush()
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let path = path.as_ref();
    let io_err = |source| PlyError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_ply(cloud, &mut buf).map_err(io_err)?;
    fs::write(path, buf).map_err(io_err)
}
