//! Triangle meshes in continuous and integer-grid form.

mod obj;
mod sample;

use std::collections::HashMap;

pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use sample::{sample_surface_points, triangle_area, SurfacePoint};
pub(crate) use sample::sample_faces;

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Scalar};

pub type Point3<T> = [T; 3];
pub type Face = [u32; 3];

/// Indexed triangle mesh. Every face references existing vertices and no face
/// repeats an index.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh<T> {
    vertices: Vec<Point3<T>>,
    faces: Vec<Face>,
}

impl<T: Scalar> TriangleMesh<T> {
    pub fn new(vertices: Vec<Point3<T>>, faces: Vec<Face>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::FaceIndex {
                        face: fi,
                        index: i as usize,
                        count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Degenerate(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face_points(&self, f: usize) -> [Point3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn centroid(&self, f: usize) -> Point3<T> {
        let [a, b, c] = self.face_points(f);
        let three = lit::<T>(3.0);
        [
            (a[0] + b[0] + c[0]) / three,
            (a[1] + b[1] + c[1]) / three,
            (a[2] + b[2] + c[2]) / three,
        ]
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3<T>, Point3<T>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn surface_area(&self) -> T {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.face_points(f);
                triangle_area(a, b, c)
            })
            .sum()
    }

    /// Applies `p -> (p - center) * scale + offset` to every vertex.
    pub fn transformed(&self, center: Point3<T>, scale: T, offset: Point3<T>) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                [
                    (v[0] - center[0]) * scale + offset[0],
                    (v[1] - center[1]) * scale + offset[1],
                    (v[2] - center[2]) * scale + offset[2],
                ]
            })
            .collect();
        Self {
            vertices,
            faces: self.faces.clone(),
        }
    }

    pub fn translated(&self, by: Point3<T>) -> Self {
        let zero = [T::zero(); 3];
        self.transformed(zero, T::one(), by)
    }

    /// Concatenates vertex and face lists.
    pub fn append(&mut self, other: &TriangleMesh<T>) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// Keeps only the listed faces; vertices are re-indexed in order of first use.
    pub fn submesh(&self, face_ids: impl IntoIterator<Item = usize>) -> Self {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in face_ids {
            let mut nf = [0u32; 3];
            for (k, &vi) in self.faces[f].iter().enumerate() {
                nf[k] = *remap.entry(vi).or_insert_with(|| {
                    vertices.push(self.vertices[vi as usize]);
                    (vertices.len() - 1) as u32
                });
            }
            faces.push(nf);
        }
        Self { vertices, faces }
    }
}

/// Uniformly scales and translates the mesh so its longest bounding-box axis
/// spans `[0, 1]`; shorter axes are centered in `[0, 1]`.
pub fn normalize_to_unit_cube<T: Scalar>(mesh: &TriangleMesh<T>) -> Result<TriangleMesh<T>> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::Degenerate("mesh has no vertices".into()))?;
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(T::zero(), T::max);
    if !(extent > T::zero()) || !extent.is_finite() {
        return Err(Error::Degenerate("bounding box has zero extent".into()));
    }
    let half = lit::<T>(0.5);
    let center = [
        (lo[0] + hi[0]) * half,
        (lo[1] + hi[1]) * half,
        (lo[2] + hi[2]) * half,
    ];
    Ok(mesh.transformed(center, T::one() / extent, [half; 3]))
}

/// Mesh on the integer grid `[0, R)^3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedMesh {
    resolution: u32,
    vertices: Vec<[u32; 3]>,
    faces: Vec<Face>,
}

/// Bookkeeping from [`quantize_with_report`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuantizeReport {
    pub merged_vertices: usize,
    pub dropped_faces: usize,
}

impl QuantizedMesh {
    /// Builds a quantized mesh from faces given as coordinate triples; equal
    /// coordinates share one vertex and faces that collapse are dropped.
    pub fn from_coordinate_faces(
        resolution: u32,
        faces: impl IntoIterator<Item = [[u32; 3]; 3]>,
    ) -> (Self, usize) {
        let mut index: HashMap<[u32; 3], u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut out = Vec::new();
        let mut dropped = 0;
        for tri in faces {
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                dropped += 1;
                continue;
            }
            let mut f = [0u32; 3];
            for (k, v) in tri.iter().enumerate() {
                assert!(v.iter().all(|&c| c < resolution), "coordinate out of grid");
                f[k] = *index.entry(*v).or_insert_with(|| {
                    vertices.push(*v);
                    (vertices.len() - 1) as u32
                });
            }
            out.push(f);
        }
        (
            Self {
                resolution,
                vertices,
                faces: out,
            },
            dropped,
        )
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn vertices(&self) -> &[[u32; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face_coords(&self, f: usize) -> [[u32; 3]; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Faces as coordinate triples rotated so the smallest coordinate comes
    /// first, sorted; equal for meshes that agree up to cyclic rotation.
    pub fn canonical_faces(&self) -> Vec<[[u32; 3]; 3]> {
        let mut out: Vec<_> = (0..self.faces.len())
            .map(|f| canonical_rotation(self.face_coords(f)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn submesh(&self, face_ids: impl IntoIterator<Item = usize>) -> Self {
        let (m, _) = Self::from_coordinate_faces(
            self.resolution,
            face_ids.into_iter().map(|f| self.face_coords(f)),
        );
        m
    }
}

/// Rotates a face cyclically so its lexicographically smallest vertex is first.
pub fn canonical_rotation(tri: [[u32; 3]; 3]) -> [[u32; 3]; 3] {
    let start = (0..3).min_by_key(|&i| tri[i]).unwrap_or(0);
    [tri[start], tri[(start + 1) % 3], tri[(start + 2) % 3]]
}

pub fn quantize<T: Scalar>(mesh: &TriangleMesh<T>, resolution: u32) -> QuantizedMesh {
    quantize_with_report(mesh, resolution).0
}

/// Maps each coordinate `c` to `floor(c * R)` clamped to `[0, R - 1]`, merges
/// duplicate grid vertices and drops faces that collapse.
pub fn quantize_with_report<T: Scalar>(
    mesh: &TriangleMesh<T>,
    resolution: u32,
) -> (QuantizedMesh, QuantizeReport) {
    assert!(resolution >= 2, "resolution must be at least 2");
    let r: T = count(resolution as usize);
    let max = resolution - 1;
    let grid: Vec<[u32; 3]> = mesh
        .vertices()
        .iter()
        .map(|v| v.map(|c| quantize_coord(c, r, max)))
        .collect();
    let mut index: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let remap: Vec<u32> = grid
        .iter()
        .map(|g| {
            *index.entry(*g).or_insert_with(|| {
                vertices.push(*g);
                (vertices.len() - 1) as u32
            })
        })
        .collect();
    let mut faces = Vec::with_capacity(mesh.faces().len());
    let mut dropped = 0;
    for f in mesh.faces() {
        let nf = f.map(|i| remap[i as usize]);
        if nf[0] == nf[1] || nf[1] == nf[2] || nf[0] == nf[2] {
            dropped += 1;
        } else {
            faces.push(nf);
        }
    }
    let report = QuantizeReport {
        merged_vertices: grid.len() - vertices.len(),
        dropped_faces: dropped,
    };
    (
        QuantizedMesh {
            resolution,
            vertices,
            faces,
        },
        report,
    )
}

fn quantize_coord<T: Scalar>(c: T, r: T, max: u32) -> u32 {
    let g = (c * r).floor();
    if !(g > T::zero()) {
        0
    } else {
        g.to_u64().map_or(max, |g| g.min(max as u64) as u32)
    }
}

/// Cell-center reconstruction `g -> (g + 0.5) / R`.
pub fn dequantize<T: Scalar>(qmesh: &QuantizedMesh) -> TriangleMesh<T> {
    let r: T = count(qmesh.resolution as usize);
    let half = lit::<T>(0.5);
    let vertices = qmesh
        .vertices
        .iter()
        .map(|g| g.map(|c| (count::<T>(c as usize) + half) / r))
        .collect();
    TriangleMesh {
        vertices,
        faces: qmesh.faces.clone(),
    }
}
