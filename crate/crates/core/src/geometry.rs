//! STL parsing and the mesh metrics consumed by the synthetic slicer.
//!
//! Both binary and ASCII STL are accepted. Units are millimeters and the
//! build axis is Z.

use std::fmt::Write as _;

use thiserror::Error;

const HEADER_LEN: usize = 80;
const PREAMBLE_LEN: usize = HEADER_LEN + 4;
const TRIANGLE_LEN: usize = 50;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("malformed STL: {0}")]
    MalformedStl(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
}

impl Triangle {
    pub fn new(a: Vec3, b: Vec3, c: Vec3) -> Self {
        Self { vertices: [a, b, c] }
    }

    /// Twice the area vector (cross product of two edges).
    fn doubled_area_vector(&self) -> Vec3 {
        let [a, b, c] = self.vertices;
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self) -> f64 {
        norm(self.doubled_area_vector()) / 2.0
    }

    /// Signed volume of the tetrahedron spanned by the origin and this triangle.
    pub fn signed_volume(&self) -> f64 {
        let [a, b, c] = self.vertices;
        dot(a, cross(b, c)) / 6.0
    }

    fn unit_normal(&self) -> Vec3 {
        let n = self.doubled_area_vector();
        let len = norm(n);
        if len > 0.0 {
            [n[0] / len, n[1] / len, n[2] / len]
        } else {
            [0.0; 3]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    triangles: Vec<Triangle>,
}

impl TriangleMesh {
    /// Builds a mesh, rejecting empty triangle lists and non-finite vertices.
    pub fn new(triangles: Vec<Triangle>) -> Result<Self, GeometryError> {
        if triangles.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let finite = triangles
            .iter()
            .all(|t| t.vertices.iter().flatten().all(|c| c.is_finite()));
        if !finite {
            return Err(GeometryError::MalformedStl("non-finite vertex coordinate".into()));
        }
        Ok(Self { triangles })
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        self.map_vertices(|v| [v[0] * factor, v[1] * factor, v[2] * factor])
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        self.map_vertices(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]])
    }

    fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        let triangles = self
            .triangles
            .iter()
            .map(|t| Triangle { vertices: t.vertices.map(&f) })
            .collect();
        Self { triangles }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics {
    pub volume_mm3: f64,
    pub surface_area_mm2: f64,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub height_mm: f64,
}

/// Parses binary or ASCII STL, detecting the format from the content.
///
/// Content is treated as binary when the declared triangle count matches the
/// byte length exactly. Otherwise a leading `solid` token selects the ASCII
/// grammar; anything else is reported as a truncated or malformed binary body.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, GeometryError> {
    if let Some(count) = declared_binary_count(bytes) {
        if PREAMBLE_LEN as u64 + TRIANGLE_LEN as u64 * count as u64 == bytes.len() as u64 {
            return parse_binary(bytes, count as usize);
        }
    }
    if starts_with_solid(bytes) {
        match std::str::from_utf8(bytes) {
            Ok(text) => return parse_ascii(text),
            Err(_) if bytes.len() >= PREAMBLE_LEN => {}
            Err(e) => return Err(GeometryError::MalformedStl(format!("invalid text: {e}"))),
        }
    }
    match declared_binary_count(bytes) {
        Some(count) => Err(GeometryError::MalformedStl(format!(
            "binary body declares {count} triangles but holds {} bytes",
            bytes.len() - PREAMBLE_LEN
        ))),
        None => Err(GeometryError::MalformedStl("file shorter than binary header".into())),
    }
}

fn declared_binary_count(bytes: &[u8]) -> Option<u32> {
    let raw = bytes.get(HEADER_LEN..PREAMBLE_LEN)?;
    Some(u32::from_le_bytes(raw.try_into().ok()?))
}

fn starts_with_solid(bytes: &[u8]) -> bool {
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).map(|i| &bytes[i..]);
    matches!(trimmed, Some(rest) if rest.len() >= 5 && rest[..5].eq_ignore_ascii_case(b"solid"))
}

fn parse_binary(bytes: &[u8], count: usize) -> Result<TriangleMesh, GeometryError> {
    let body = &bytes[PREAMBLE_LEN..];
    let read_f32 = |chunk: &[u8], at: usize| -> f64 {
        f32::from_le_bytes([chunk[at], chunk[at + 1], chunk[at + 2], chunk[at + 3]]) as f64
    };
    let mut triangles = Vec::with_capacity(count);
    for chunk in body.chunks_exact(TRIANGLE_LEN) {
        // bytes 0..12 hold the facet normal, which is recomputed on demand
        let vertex = |i: usize| {
            let base = 12 + i * 12;
            [read_f32(chunk, base), read_f32(chunk, base + 4), read_f32(chunk, base + 8)]
        };
        triangles.push(Triangle::new(vertex(0), vertex(1), vertex(2)));
    }
    TriangleMesh::new(triangles)
}

fn parse_ascii(text: &str) -> Result<TriangleMesh, GeometryError> {
    let mut triangles = Vec::new();
    let mut pending: Vec<Vec3> = Vec::with_capacity(3);
    let mut in_facet = false;

    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let malformed = |what: &str| GeometryError::MalformedStl(format!("line {}: {what}", lineno + 1));
        match keyword {
            "facet" => {
                if in_facet {
                    return Err(malformed("nested facet"));
                }
                in_facet = true;
                pending.clear();
            }
            "vertex" => {
                if !in_facet {
                    return Err(malformed("vertex outside facet"));
                }
                let coords: Vec<f64> = tokens
                    .map(str::parse::<f64>)
                    .collect::<Result<_, _>>()
                    .map_err(|_| malformed("unparseable vertex coordinate"))?;
                if coords.len() != 3 {
                    return Err(malformed("vertex needs exactly 3 coordinates"));
                }
                if pending.len() == 3 {
                    return Err(malformed("facet has more than 3 vertices"));
                }
                pending.push([coords[0], coords[1], coords[2]]);
            }
            "endfacet" => {
                if !in_facet || pending.len() != 3 {
                    return Err(malformed("facet does not have 3 vertices"));
                }
                triangles.push(Triangle::new(pending[0], pending[1], pending[2]));
                in_facet = false;
            }
            "solid" | "endsolid" | "outer" | "endloop" => {}
            other => return Err(malformed(&format!("unexpected token `{other}`"))),
        }
    }
    if in_facet {
        return Err(GeometryError::MalformedStl("unterminated facet".into()));
    }
    TriangleMesh::new(triangles)
}

/// Serializes a mesh as binary STL with recomputed facet normals.
pub fn write_binary_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE_LEN + TRIANGLE_LEN * mesh.len());
    let mut header = [0u8; HEADER_LEN];
    let tag = b"binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.len() as u32).to_le_bytes());
    for tri in mesh.triangles() {
        for c in tri.unit_normal() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for v in tri.vertices {
            for c in v {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn write_ascii_stl(mesh: &TriangleMesh, name: &str) -> String {
    let mut out = format!("solid {name}\n");
    for tri in mesh.triangles() {
        let n = tri.unit_normal();
        let _ = writeln!(out, "  facet normal {} {} {}", n[0], n[1], n[2]);
        out.push_str("    outer loop\n");
        for v in tri.vertices {
            let _ = writeln!(out, "      vertex {} {} {}", v[0], v[1], v[2]);
        }
        out.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(out, "endsolid {name}");
    out
}

/// Volume, area, bounding box and Z height of a mesh.
///
/// Volume is the absolute value of the summed signed tetrahedra, so open or
/// inconsistently oriented meshes still produce a number. Zero-area triangles
/// contribute nothing to either sum.
pub fn compute_metrics(mesh: &TriangleMesh) -> Result<MeshMetrics, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let mut signed_volume = 0.0;
    let mut area = 0.0;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for tri in mesh.triangles() {
        for v in tri.vertices {
            for axis in 0..3 {
                lo[axis] = lo[axis].min(v[axis]);
                hi[axis] = hi[axis].max(v[axis]);
            }
        }
        let tri_area = tri.area();
        if tri_area > 0.0 {
            area += tri_area;
            signed_volume += tri.signed_volume();
        }
    }
    Ok(MeshMetrics {
        volume_mm3: signed_volume.abs(),
        surface_area_mm2: area,
        bbox_min: lo,
        bbox_max: hi,
        height_mm: hi[2] - lo[2],
    })
}

/// Axis-aligned box `[0, size]` triangulated into 12 outward-facing triangles.
pub fn cuboid(size: Vec3) -> TriangleMesh {
    let [x, y, z] = size;
    let p = [
        [0.0, 0.0, 0.0],
        [x, 0.0, 0.0],
        [x, y, 0.0],
        [0.0, y, 0.0],
        [0.0, 0.0, z],
        [x, 0.0, z],
        [x, y, z],
        [0.0, y, z],
    ];
    const FACES: [[usize; 3]; 12] = [
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    let triangles = FACES.iter().map(|f| Triangle::new(p[f[0]], p[f[1]], p[f[2]])).collect();
    TriangleMesh { triangles }
}

pub fn cube(edge: f64) -> TriangleMesh {
    cuboid([edge; 3])
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
