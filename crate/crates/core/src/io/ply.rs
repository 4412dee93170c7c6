//! Binary little-endian PLY: mesh export and point-cloud import.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::IoError;
use crate::mesh::TriangleMesh;

/// Write the mesh as binary little-endian PLY (float32 positions, optional
/// uchar RGB, int32 face indices). Returns the number of bytes written.
pub fn export_ply<W: Write>(mesh: &TriangleMesh, writer: &mut W) -> Result<u64, IoError> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!("element face {}\n", mesh.triangles.len()));
    header.push_str("property list uchar int vertex_indices\n");
    header.push_str("end_header\n");
    writer.write_all(header.as_bytes())?;

    let mut bytes = header.len() as u64;
    for (i, v) in mesh.vertices.iter().enumerate() {
        writer.write_f32::<LittleEndian>(v[0] as f32)?;
        writer.write_f32::<LittleEndian>(v[1] as f32)?;
        writer.write_f32::<LittleEndian>(v[2] as f32)?;
        bytes += 12;
        if let Some(colors) = &mesh.colors {
            writer.write_all(&colors[i])?;
            bytes += 3;
        }
    }
    for t in &mesh.triangles {
        writer.write_u8(3)?;
        for &i in t {
            writer.write_i32::<LittleEndian>(i as i32)?;
        }
        bytes += 13;
    }
    Ok(bytes)
}

pub fn export_ply_file<P: AsRef<Path>>(mesh: &TriangleMesh, path: P) -> Result<u64, IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = export_ply(mesh, &mut w)?;
    w.flush()?;
    Ok(n)
}

#[derive(Clone, Copy)]
enum PropKind {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    List { count: Width, item: Width },
}

#[derive(Clone, Copy)]
enum Width {
    W1,
    W2,
    W4,
    W8,
}

impl Width {
    fn bytes(self) -> usize {
        match self {
            Width::W1 => 1,
            Width::W2 => 2,
            Width::W4 => 4,
            Width::W8 => 8,
        }
    }
}

fn scalar_kind(name: &str) -> Result<PropKind, IoError> {
    Ok(match name {
        "float" | "float32" => PropKind::F32,
        "double" | "float64" => PropKind::F64,
        "uchar" | "uint8" => PropKind::U8,
        "char" | "int8" => PropKind::I8,
        "ushort" | "uint16" => PropKind::U16,
        "short" | "int16" => PropKind::I16,
        "uint" | "uint32" => PropKind::U32,
        "int" | "int32" => PropKind::I32,
        other => return Err(IoError::Unsupported(format!("PLY property type {other:?}"))),
    })
}

fn size_kind(name: &str) -> Result<Width, IoError> {
    Ok(match scalar_kind(name)? {
        PropKind::U8 | PropKind::I8 => Width::W1,
        PropKind::U16 | PropKind::I16 => Width::W2,
        PropKind::F64 => Width::W8,
        _ => Width::W4,
    })
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, PropKind)>,
}

/// Read the vertex positions of a binary little-endian PLY file. Extra
/// vertex properties and non-vertex elements are skipped.
pub fn read_ply_points<R: Read>(reader: &mut R) -> Result<Vec<[f64; 3]>, IoError> {
    let mut header = Vec::new();
    // Read the header byte-by-byte up to "end_header\n".
    let mut byte = [0u8; 1];
    while !header.ends_with(b"end_header\n") {
        reader.read_exact(&mut byte)?;
        header.push(byte[0]);
        if header.len() > 64 * 1024 {
            return Err(IoError::parse("PLY header too long"));
        }
    }
    let header = String::from_utf8_lossy(&header);
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(IoError::parse("missing \"ply\" magic"));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => match tok.next() {
                Some("binary_little_endian") => {}
                Some("ascii") => ascii = true,
                other => {
                    return Err(IoError::Unsupported(format!("PLY format {other:?}")));
                }
            },
            Some("element") => {
                let name = tok.next().unwrap_or("").to_string();
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| IoError::parse("bad element count"))?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| IoError::parse("property before element"))?;
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    let count = size_kind(tok.next().unwrap_or(""))?;
                    let item = size_kind(tok.next().unwrap_or(""))?;
                    let name = tok.next().unwrap_or("").to_string();
                    el.props.push((name, PropKind::List { count, item }));
                } else {
                    let kind = scalar_kind(ty)?;
                    let name = tok.next().unwrap_or("").to_string();
                    el.props.push((name, kind));
                }
            }
            Some("comment") | Some("obj_info") | Some("end_header") | None => {}
            Some(other) => {
                return Err(IoError::parse(format!("unexpected header line {other:?}")));
            }
        }
    }

    if ascii {
        return read_ascii_points(reader, &elements);
    }

    let mut points = Vec::new();
    for el in &elements {
        if el.name == "vertex" {
            let xi = prop_index(el, "x")?;
            let yi = prop_index(el, "y")?;
            let zi = prop_index(el, "z")?;
            points.reserve(el.count);
            for _ in 0..el.count {
                let mut xyz = [0.0f64; 3];
                for (i, (_, kind)) in el.props.iter().enumerate() {
                    let val = read_scalar(reader, *kind)?;
                    if i == xi {
                        xyz[0] = val;
                    } else if i == yi {
                        xyz[1] = val;
                    } else if i == zi {
                        xyz[2] = val;
                    }
                }
                points.push(xyz);
            }
        } else {
            for _ in 0..el.count {
                for (_, kind) in &el.props {
                    read_scalar(reader, *kind)?;
                }
            }
        }
    }
    Ok(points)
}

fn prop_index(el: &Element, name: &str) -> Result<usize, IoError> {
    el.props
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| IoError::parse(format!("vertex element lacks property {name:?}")))
}

/// Read one scalar (or consume a whole list) and return its value as f64.
fn read_scalar<R: Read>(reader: &mut R, kind: PropKind) -> Result<f64, IoError> {
    Ok(match kind {
        PropKind::F32 => reader.read_f32::<LittleEndian>()? as f64,
        PropKind::F64 => reader.read_f64::<LittleEndian>()?,
        PropKind::U8 => reader.read_u8()? as f64,
        PropKind::I8 => reader.read_i8()? as f64,
        PropKind::U16 => reader.read_u16::<LittleEndian>()? as f64,
        PropKind::I16 => reader.read_i16::<LittleEndian>()? as f64,
        PropKind::U32 => reader.read_u32::<LittleEndian>()? as f64,
        PropKind::I32 => reader.read_i32::<LittleEndian>()? as f64,
        PropKind::List { count, item } => {
            let n = match count {
                Width::W1 => reader.read_u8()? as usize,
                Width::W2 => reader.read_u16::<LittleEndian>()? as usize,
                Width::W4 => reader.read_u32::<LittleEndian>()? as usize,
                Width::W8 => reader.read_u64::<LittleEndian>()? as usize,
            };
            let mut skip = vec![0u8; n * item.bytes()];
            reader.read_exact(&mut skip)?;
            n as f64
        }
    })
}

fn read_ascii_points<R: Read>(reader: &mut R, elements: &[Element]) -> Result<Vec<[f64; 3]>, IoError> {
    let mut body = String::new();
    BufReader::new(reader).read_to_string(&mut body)?;
    let mut tokens = body.split_whitespace();
    let mut points = Vec::new();
    for el in elements {
        if el.name == "vertex" {
            let xi = prop_index(el, "x")?;
            let yi = prop_index(el, "y")?;
            let zi = prop_index(el, "z")?;
            for _ in 0..el.count {
                let mut xyz = [0.0f64; 3];
                for (i, (_, kind)) in el.props.iter().enumerate() {
                    match kind {
                        PropKind::List { .. } => {
                            let n: usize = next_num(&mut tokens)? as usize;
                            for _ in 0..n {
                                next_num(&mut tokens)?;
                            }
                        }
                        _ => {
                            let v = next_num(&mut tokens)?;
                            if i == xi {
                                xyz[0] = v;
                            } else if i == yi {
                                xyz[1] = v;
                            } else if i == zi {
                                xyz[2] = v;
                            }
                        }
                    }
                }
                points.push(xyz);
            }
        } else {
            for _ in 0..el.count {
                for (_, kind) in &el.props {
                    match kind {
                        PropKind::List { .. } => {
                            let n: usize = next_num(&mut tokens)? as usize;
                            for _ in 0..n {
                                next_num(&mut tokens)?;
                            }
                        }
                        _ => {
                            next_num(&mut tokens)?;
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

fn next_num<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<f64, IoError> {
    tokens
        .next()
        .ok_or_else(|| IoError::parse("unexpected end of ASCII PLY body"))?
        .parse()
        .map_err(|e| IoError::parse(format!("bad ASCII PLY number: {e}")))
}

pub fn read_ply_points_file<P: AsRef<Path>>(path: P) -> Result<Vec<[f64; 3]>, IoError> {
    read_ply_points(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_mesh() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            colors: None,
        }
    }

    #[test]
    fn empty_mesh_is_valid_ply() {
        let mut bytes = Vec::new();
        let n = export_ply(&TriangleMesh::default(), &mut bytes).unwrap();
        assert_eq!(n as usize, bytes.len());
        let pts = read_ply_points(&mut bytes.as_slice()).unwrap();
        assert!(pts.is_empty());
    }

    #[test]
    fn unit_triangle_round_trip() {
        let mesh = tri_mesh();
        let mut bytes = Vec::new();
        export_ply(&mesh, &mut bytes).unwrap();
        let pts = read_ply_points(&mut bytes.as_slice()).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1], [1.0, 0.0, 0.0]);
        // Parsed area of the unit right triangle.
        let area = 0.5
            * ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                - (pts[1][1] - pts[0][1]) * (pts[2][0] - pts[0][0]))
                .abs();
        assert_eq!(area, 0.5);
    }

    #[test]
    fn colored_mesh_round_trip_vertex_count() {
        let mut mesh = tri_mesh();
        mesh.colors = Some(vec![[255, 0, 0], [0, 255, 0], [0, 0, 255]]);
        let mut bytes = Vec::new();
        export_ply(&mesh, &mut bytes).unwrap();
        let header = String::from_utf8_lossy(&bytes[..200.min(bytes.len())]).to_string();
        assert!(header.contains("property uchar red"));
        let pts = read_ply_points(&mut bytes.as_slice()).unwrap();
        assert_eq!(pts.len(), mesh.vertices.len());
    }

    #[test]
    fn reads_ascii_ply() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n2 3 4\n";
        let pts = read_ply_points(&mut text.as_bytes()).unwrap();
        assert_eq!(pts, vec![[0.0, 0.0, 1.0], [2.0, 3.0, 4.0]]);
    }
}
