use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point3, TriangleMesh};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// A point on the mesh surface together with the face it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint<T> {
    pub position: Point3<T>,
    pub face: usize,
}

pub fn triangle_area<T: Scalar>(a: Point3<T>, b: Point3<T>, c: Point3<T>) -> T {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    lit::<T>(0.5) * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Draws `n` points: faces chosen proportionally to area, positions uniform
/// inside the chosen triangle. Deterministic for a fixed seed.
pub fn sample_surface_points<T: Scalar>(
    mesh: &TriangleMesh<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<SurfacePoint<T>>> {
    let faces: Vec<usize> = (0..mesh.faces().len()).collect();
    sample_faces(mesh, &faces, n, seed)
}

/// Area-weighted sampling restricted to `faces`.
pub(crate) fn sample_faces<T: Scalar>(
    mesh: &TriangleMesh<T>,
    faces: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<SurfacePoint<T>>> {
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0f64;
    for &f in faces {
        let [a, b, c] = mesh.face_points(f);
        total += triangle_area(a, b, c).to_f64().unwrap_or(0.0);
        cumulative.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("zero total surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        // first face whose cumulative area exceeds u; zero-area faces never win
        let slot = cumulative
            .partition_point(|&c| c <= u)
            .min(faces.len() - 1);
        let face = faces[slot];
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let [a, b, c] = mesh.face_points(face);
        let (wa, wb, wc) = (lit::<T>(wa), lit::<T>(wb), lit::<T>(wc));
        let position = [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]);
        out.push(SurfacePoint { position, face });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriangleMesh<f64> {
        TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn points_lie_inside_single_triangle() {
        let pts = sample_surface_points(&tri(), 3, 11).unwrap();
        assert_eq!(pts.len(), 3);
        for p in pts {
            let [x, y, z] = p.position;
            // barycentric coordinates for this right triangle are (1-x-y, x, y)
            assert!(x >= 0.0 && y >= 0.0 && 1.0 - x - y >= -1e-12);
            assert_eq!(z, 0.0);
            assert_eq!(p.face, 0);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = sample_surface_points(&tri(), 50, 5).unwrap();
        let b = sample_surface_points(&tri(), 50, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_surface_points(&tri(), 50, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn area_ratio_nine_to_one() {
        // face 0 has area 4.5, face 1 has area 0.5
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 3.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000;
        let pts = sample_surface_points(&m, n, 1).unwrap();
        let big = pts.iter().filter(|p| p.face == 0).count() as f64;
        let small = (n as f64) - big;
        let ratio = big / small;
        assert!((ratio - 9.0).abs() / 9.0 < 0.02, "ratio {ratio}");
    }

    #[test]
    fn zero_area_is_an_error() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_surface_points(&m, 4, 0).is_err());
    }
}
