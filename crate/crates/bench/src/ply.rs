//! PLY reading and writing for point clouds and triangle meshes.
//!
//! Writes `ascii 1.0` (9 significant digits) or `binary_little_endian 1.0`
//! with double-precision coordinates. Reads either encoding with any scalar
//! property types; extra elements and properties are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use groundmesh::{PointCloud, TriangleMesh, Vec3};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Geometry decoded from a PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[u32; 3]>,
}

impl PlyData {
    pub fn into_cloud(self) -> groundmesh::Result<PointCloud> {
        match self.normals {
            Some(n) => PointCloud::with_normals(self.vertices, n),
            None => PointCloud::new(self.vertices),
        }
    }

    pub fn into_mesh(self) -> groundmesh::Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.faces)
    }
}

fn header(format: PlyFormat, vertices: usize, normals: bool, faces: Option<usize>) -> String {
    let mut h = String::from("ply\n");
    h.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(h, "element vertex {vertices}");
    for axis in ["x", "y", "z"] {
        let _ = writeln!(h, "property double {axis}");
    }
    if normals {
        for axis in ["nx", "ny", "nz"] {
            let _ = writeln!(h, "property double {axis}");
        }
    }
    if let Some(f) = faces {
        let _ = writeln!(h, "element face {f}");
        h.push_str("property list uchar int vertex_indices\n");
    }
    h.push_str("end_header\n");
    h
}

fn encode(format: PlyFormat, vertices: &[Vec3], normals: Option<&[Vec3]>, faces: Option<&[[u32; 3]]>) -> Vec<u8> {
    let mut out = header(format, vertices.len(), normals.is_some(), faces.map(|f| f.len())).into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for (i, v) in vertices.iter().enumerate() {
                let _ = write!(body, "{:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
                if let Some(n) = normals {
                    let _ = write!(body, " {:.8e} {:.8e} {:.8e}", n[i].x, n[i].y, n[i].z);
                }
                body.push('\n');
            }
            for f in faces.unwrap_or(&[]) {
                let _ = writeln!(body, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in vertices.iter().enumerate() {
                for c in v.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(n) = normals {
                    for c in n[i].iter() {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
            for f in faces.unwrap_or(&[]) {
                out.push(3);
                for &idx in f {
                    out.extend_from_slice(&(idx as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn encode_cloud(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    encode(format, cloud.points(), cloud.normals(), None)
}

pub fn encode_mesh(mesh: &TriangleMesh, format: PlyFormat) -> Vec<u8> {
    encode(format, mesh.vertices(), None, Some(mesh.faces()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_bytes(path, &encode_cloud(cloud, format))
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    write_bytes(path, &encode_mesh(mesh, format))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    parse_ply(&bytes).map_err(|m| BenchError::parse(path, m))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_ply(path)?;
    data.into_cloud().map_err(|e| BenchError::parse(path, e.to_string()))
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = read_ply(path)?;
    if data.faces.is_empty() {
        return Err(BenchError::parse(path, "file has no faces"));
    }
    data.into_mesh().map_err(|e| BenchError::parse(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// One decoded element row: scalar values in property order, and list values.
#[derive(Default)]
struct Row {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

struct Header {
    binary: bool,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Number of header lines.
    lines: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format!("line {}: header is not terminated by end_header", line_no + 1))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| format!("line {}: header is not UTF-8", line_no + 1))?
            .trim_end_matches('\r')
            .trim();
        pos += end + 1;
        line_no += 1;
        let err = |m: &str| format!("line {line_no}: {m}");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(err("missing 'ply' magic"));
            }
            continue;
        }
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                binary = Some(match tokens.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some(other) => return Err(err(&format!("unsupported format '{other}'"))),
                    None => return Err(err("format line has no format name")),
                });
            }
            Some("element") => {
                let (name, count) = match tokens.as_slice() {
                    [_, name, count] => (name, count),
                    _ => return Err(err("element line needs a name and a count")),
                };
                let count = count
                    .parse()
                    .map_err(|_| err(&format!("invalid element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| err("property declared before any element"))?;
                let prop = match tokens.as_slice() {
                    [_, "list", ct, it, name] => Property::List(
                        Scalar::parse(ct).ok_or_else(|| err(&format!("unknown type '{ct}'")))?,
                        Scalar::parse(it).ok_or_else(|| err(&format!("unknown type '{it}'")))?,
                        name.to_string(),
                    ),
                    [_, ty, name] => Property::Scalar(
                        Scalar::parse(ty).ok_or_else(|| err(&format!("unknown type '{ty}'")))?,
                        name.to_string(),
                    ),
                    _ => return Err(err("malformed property line")),
                };
                elem.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(&format!("unexpected header keyword '{other}'"))),
        }
    }
    Ok(Header {
        binary: binary.ok_or("header has no format line")?,
        elements,
        body: pos,
        lines: line_no,
    })
}

/// Reads element rows from either encoding.
struct BodyReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    binary: bool,
    line: usize,
}

impl BodyReader<'_> {
    fn next_line(&mut self) -> Option<&str> {
        while self.pos < self.bytes.len() {
            let end = self.bytes[self.pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(self.bytes.len(), |e| self.pos + e);
            let line = std::str::from_utf8(&self.bytes[self.pos..end]).unwrap_or("\u{fffd}");
            self.pos = (end + 1).min(self.bytes.len().max(end + 1));
            self.line += 1;
            if !line.trim().is_empty() {
                return Some(line);
            }
        }
        None
    }

    fn row(&mut self, elem: &Element, index: usize) -> std::result::Result<Row, String> {
        let mut row = Row::default();
        if self.binary {
            let mut take = |ty: Scalar, what: &str| -> std::result::Result<f64, String> {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(format!(
                        "{} row {index}: unexpected end of file reading {what}",
                        elem.name
                    ));
                }
                let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            };
            for p in &elem.properties {
                match p {
                    Property::Scalar(ty, name) => row.scalars.push(take(*ty, name)?),
                    Property::List(ct, it, name) => {
                        let n = take(*ct, name)? as usize;
                        let items = (0..n).map(|_| take(*it, name)).collect::<std::result::Result<_, _>>()?;
                        row.lists.push(items);
                    }
                }
            }
            return Ok(row);
        }
        let name = elem.name.clone();
        let line = self
            .next_line()
            .ok_or_else(|| format!("{name} row {index}: unexpected end of file"))?
            .to_owned();
        let line_no = self.line;
        let err = |m: String| format!("line {line_no}: {name} row {index}: {m}");
        let mut tokens = line.split_whitespace();
        let mut num = |what: &str| -> std::result::Result<f64, String> {
            let t = tokens.next().ok_or_else(|| err(format!("missing value for {what}")))?;
            t.parse::<f64>().map_err(|_| err(format!("invalid number '{t}' for {what}")))
        };
        for p in &elem.properties {
            match p {
                Property::Scalar(_, pname) => row.scalars.push(num(pname)?),
                Property::List(_, _, pname) => {
                    let n = num(pname)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(err(format!("invalid list length {n}")));
                    }
                    let items = (0..n as usize).map(|_| num(pname)).collect::<std::result::Result<_, _>>()?;
                    row.lists.push(items);
                }
            }
        }
        if tokens.next().is_some() {
            return Err(err("trailing values".into()));
        }
        Ok(row)
    }
}

fn scalar_index(elem: &Element, name: &str) -> Option<usize> {
    elem.properties
        .iter()
        .filter(|p| matches!(p, Property::Scalar(..)))
        .position(|p| matches!(p, Property::Scalar(_, n) if n == name))
}

fn list_index(elem: &Element, names: &[&str]) -> Option<usize> {
    elem.properties
        .iter()
        .filter(|p| matches!(p, Property::List(..)))
        .position(|p| matches!(p, Property::List(_, _, n) if names.contains(&n.as_str())))
}

/// Decodes PLY bytes. Errors name the offending line (ASCII) or element row.
pub fn parse_ply(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    let header = parse_header(bytes)?;
    let mut reader = BodyReader {
        bytes,
        pos: header.body,
        binary: header.binary,
        line: header.lines,
    };
    let mut data = PlyData {
        vertices: Vec::new(),
        normals: None,
        faces: Vec::new(),
    };
    let mut vertex_count = None;
    for elem in &header.elements {
        match elem.name.as_str() {
            "vertex" => {
                let xyz = ["x", "y", "z"].map(|n| scalar_index(elem, n));
                let [Some(ix), Some(iy), Some(iz)] = xyz else {
                    return Err("vertex element lacks x, y or z".into());
                };
                let nrm = ["nx", "ny", "nz"].map(|n| scalar_index(elem, n));
                let nrm = match nrm {
                    [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                    _ => None,
                };
                let mut normals = Vec::new();
                data.vertices.reserve(elem.count);
                for r in 0..elem.count {
                    let row = reader.row(elem, r)?;
                    let s = &row.scalars;
                    data.vertices.push(Vec3::new(s[ix], s[iy], s[iz]));
                    if let Some([a, b, c]) = nrm {
                        normals.push(Vec3::new(s[a], s[b], s[c]));
                    }
                }
                if nrm.is_some() {
                    data.normals = Some(normals);
                }
                vertex_count = Some(elem.count);
            }
            "face" => {
                let li = list_index(elem, &["vertex_indices", "vertex_index"])
                    .ok_or("face element lacks a vertex_indices list")?;
                let nv = vertex_count.ok_or("face element precedes vertex element")?;
                for r in 0..elem.count {
                    let row = reader.row(elem, r)?;
                    let idx = &row.lists[li];
                    if idx.len() != 3 {
                        return Err(format!(
                            "face row {r}: {} vertices, only triangles are supported",
                            idx.len()
                        ));
                    }
                    let mut f = [0u32; 3];
                    for (slot, &v) in f.iter_mut().zip(idx) {
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= nv {
                            return Err(format!(
                                "face row {r}: vertex index {v} out of range (vertex count {nv})"
                            ));
                        }
                        *slot = v as u32;
                    }
                    data.faces.push(f);
                }
            }
            _ => {
                for r in 0..elem.count {
                    reader.row(elem, r)?;
                }
            }
        }
    }
    if vertex_count.is_none() {
        return Err("file has no vertex element".into());
    }
    if header.binary && reader.pos != bytes.len() {
        return Err(format!(
            "{} trailing bytes after the last element",
            bytes.len() - reader.pos
        ));
    }
    if !header.binary && reader.next_line().is_some() {
        return Err(format!("line {}: data after the last element", reader.line));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_mesh() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.1, 0.2, 0.3),
                Vec3::new(1.0 / 3.0, -2.5e-7, 4.0),
                Vec3::new(-1.0, 0.0, 1e-3),
                Vec3::new(0.7, 0.7, 0.7),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn binary_cloud_is_bit_exact() {
        let cloud = PointCloud::with_normals(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1e-9, 5.0, 1.0 / 7.0), Vec3::zeros()],
            vec![Vec3::z(), Vec3::x(), Vec3::new(0.6, 0.8, 0.0)],
        )
        .unwrap();
        let bytes = encode_cloud(&cloud, PlyFormat::BinaryLittleEndian);
        let back = parse_ply(&bytes).unwrap().into_cloud().unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ascii_and_binary_agree() {
        let mesh = tri_mesh();
        let a = parse_ply(&encode_mesh(&mesh, PlyFormat::Ascii)).unwrap();
        let b = parse_ply(&encode_mesh(&mesh, PlyFormat::BinaryLittleEndian)).unwrap();
        assert_eq!(a.faces, b.faces);
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!((p - q).norm() <= 1e-8 * q.norm().max(1e-300));
        }
        assert_eq!(b.into_mesh().unwrap(), mesh);
    }

    #[test]
    fn out_of_range_face_names_row() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 1 7\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.contains("face row 1"), "{err}");
    }

    #[test]
    fn quads_are_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.contains("only triangles"), "{err}");
    }

    #[test]
    fn malformed_inputs_report_lines() {
        let bad_magic = "plx\nformat ascii 1.0\nend_header\n";
        assert!(parse_ply(bad_magic.as_bytes()).unwrap_err().starts_with("line 1"));
        let bad_number = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n0 zz 0\n";
        let err = parse_ply(bad_number.as_bytes()).unwrap_err();
        assert!(err.starts_with("line 9"), "{err}");
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n";
        assert!(parse_ply(short.as_bytes()).unwrap_err().contains("vertex row 1"));
        let truncated = &encode_mesh(&tri_mesh(), PlyFormat::BinaryLittleEndian);
        let err = parse_ply(&truncated[..truncated.len() - 3]).unwrap_err();
        assert!(err.contains("face row 1"), "{err}");
    }
}
