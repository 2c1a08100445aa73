//! Point-set distances between generated and reference surfaces.

mod emd;
mod kdtree;

use std::fmt::Write as _;

pub use emd::{exact_emd, hungarian, sinkhorn_emd, EmdResult};
pub use kdtree::{sq_dist, KdTree};

use crate::error::{Error, Result};
use crate::mesh::{normalize_to_unit_cube, sample_surface_points, Point3, TriangleMesh};
use crate::scalar::{count, Scalar};

fn non_empty<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point sets must be non-empty"));
    }
    Ok(())
}

/// Squared distance from each point of `from` to its nearest point in `to`.
pub fn nearest_sq_dists<T: Scalar>(from: &[Point3<T>], to: &[Point3<T>]) -> Vec<T> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|p| tree.nearest(p).map_or(T::infinity(), |(d, _)| d))
        .collect()
}

fn mean<T: Scalar>(v: &[T]) -> T {
    let mut s = T::zero();
    for &x in v {
        s += x;
    }
    s / count(v.len())
}

/// `0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)`.
pub fn chamfer<T: Scalar>(a: &[Point3<T>], b: &[Point3<T>]) -> Result<T> {
    non_empty(a, b)?;
    let ab = mean(&nearest_sq_dists(a, b));
    let ba = mean(&nearest_sq_dists(b, a));
    Ok((ab + ba) / count(2))
}

/// Symmetric Hausdorff distance (not squared).
pub fn hausdorff<T: Scalar>(a: &[Point3<T>], b: &[Point3<T>]) -> Result<T> {
    non_empty(a, b)?;
    let max = |v: Vec<T>| v.into_iter().fold(T::zero(), T::max);
    let ab = max(nearest_sq_dists(a, b));
    let ba = max(nearest_sq_dists(b, a));
    Ok(ab.max(ba).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Score<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Precision: share of `a` strictly closer than `tau` to `b`; recall the
/// other way round.
pub fn f1_score<T: Scalar>(a: &[Point3<T>], b: &[Point3<T>], tau: T) -> Result<F1Score<T>> {
    non_empty(a, b)?;
    if !(tau > T::zero()) {
        return Err(Error::invalid("tau must be positive"));
    }
    let t2 = tau * tau;
    let frac = |d: Vec<T>| count::<T>(d.iter().filter(|&&x| x < t2).count()) / count(d.len());
    let precision = frac(nearest_sq_dists(a, b));
    let recall = frac(nearest_sq_dists(b, a));
    let f1 = if precision + recall > T::zero() {
        count::<T>(2) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
    })
}

fn dist_matrix<T: Scalar>(a: &[Point3<T>], b: &[Point3<T>]) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            c.push(sq_dist(p, q).to_f64().unwrap_or(f64::NAN).sqrt());
        }
    }
    c
}

/// Mean matched distance under the best bijection. Exact up to `n_exact`
/// points, entropic approximation (1% duality-gap target) above.
pub fn emd<T: Scalar>(a: &[Point3<T>], b: &[Point3<T>], n_exact: usize) -> Result<EmdResult> {
    non_empty(a, b)?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "emd needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let cost = dist_matrix(a, b);
    Ok(if a.len() <= n_exact {
        exact_emd(&cost, a.len())
    } else {
        sinkhorn_emd(&cost, a.len(), 0.01)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub n_points: usize,
    pub emd_points: usize,
    pub n_exact: usize,
    pub tau: f64,
    /// Normalize both meshes to the unit cube before sampling.
    pub normalize: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            n_points: 8192,
            emd_points: 1024,
            n_exact: 256,
            tau: 0.02,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cd_x1000: f64,
    pub hd: f64,
    pub emd: f64,
    pub f1: f64,
    pub n_points: usize,
    pub tau: f64,
    pub empty_generated: bool,
    pub emd_epsilon: Option<f64>,
}

impl MetricReport {
    /// Stand-in for a missing or empty generation.
    pub fn sentinel(n_points: usize, tau: f64) -> Self {
        Self {
            cd_x1000: f64::MAX,
            hd: f64::MAX,
            emd: f64::MAX,
            f1: 0.0,
            n_points,
            tau,
            empty_generated: true,
            emd_epsilon: None,
        }
    }

    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.empty_generated {
            f.push("empty_generated".to_string());
        }
        if let Some(e) = self.emd_epsilon {
            f.push(format!("emd_eps={e:.3e}"));
        }
        if f.is_empty() {
            "ok".into()
        } else {
            f.join("|")
        }
    }

    pub const CSV_HEADER: &'static str = "id,n_points,tau,cd_x1000,hd,emd,f1,flags";

    pub fn csv_row(&self, id: &str) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{id},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.n_points,
            self.tau,
            self.cd_x1000,
            self.hd,
            self.emd,
            self.f1,
            self.flags()
        );
        s
    }
}

/// Samples both surfaces and computes every metric.
pub fn evaluate_pair<T: Scalar>(
    generated: &TriangleMesh<T>,
    reference: &TriangleMesh<T>,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<MetricReport> {
    if reference.faces().is_empty() {
        return Err(Error::invalid("reference mesh is empty"));
    }
    if generated.faces().is_empty() {
        return Ok(MetricReport::sentinel(cfg.n_points, cfg.tau));
    }
    let (gen, reference) = if cfg.normalize {
        match normalize_to_unit_cube(generated) {
            Ok(m) => (m, normalize_to_unit_cube(reference)?),
            Err(_) => return Ok(MetricReport::sentinel(cfg.n_points, cfg.tau)),
        }
    } else {
        (generated.clone(), reference.clone())
    };
    let sample = |m: &TriangleMesh<T>, n, s| -> Result<Vec<Point3<T>>> {
        Ok(sample_surface_points(m, n, s)?.into_iter().map(|p| p.position).collect())
    };
    let Ok(a) = sample(&gen, cfg.n_points, seed) else {
        return Ok(MetricReport::sentinel(cfg.n_points, cfg.tau));
    };
    let b = sample(&reference, cfg.n_points, seed ^ 0x5EED_0F_u64)?;
    let cd = chamfer(&a, &b)?.to_f64().unwrap_or(f64::NAN);
    let hd = hausdorff(&a, &b)?.to_f64().unwrap_or(f64::NAN);
    let f1 = f1_score(&a, &b, crate::scalar::lit(cfg.tau))?.f1.to_f64().unwrap_or(0.0);
    let ea = sample(&gen, cfg.emd_points, seed.wrapping_add(1))?;
    let eb = sample(&reference, cfg.emd_points, (seed ^ 0x5EED_0F_u64).wrapping_add(1))?;
    let e = emd(&ea, &eb, cfg.n_exact)?;
    Ok(MetricReport {
        cd_x1000: cd * 1000.0,
        hd,
        emd: e.cost,
        f1,
        n_points: cfg.n_points,
        tau: cfg.tau,
        empty_generated: false,
        emd_epsilon: e.epsilon,
    })
}
