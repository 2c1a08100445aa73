//! Hierarchical point-cloud conditioning: one global feature plus one feature
//! per part, produced by a shared per-point map and max pooling.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::mesh::{sample_surface_points, Point3, TriangleMesh};
use crate::params::{ParamId, ParamStore};
use crate::part_graph::PartLabeling;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Surface samples tagged with the part of their source face.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointCloud<T> {
    points: Vec<Point3<T>>,
    labels: Vec<u32>,
    n: usize,
}

impl<T: Scalar> LabeledPointCloud<T> {
    /// Every part id in `[0, n)` must own at least one point.
    pub fn new(points: Vec<Point3<T>>, labels: Vec<u32>, n: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::invalid("one label per point required"));
        }
        let mut counts = vec![0usize; n];
        for &l in &labels {
            let slot = counts
                .get_mut(l as usize)
                .ok_or_else(|| Error::invalid(format!("label {l} >= part count {n}")))?;
            *slot += 1;
        }
        if let Some(p) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("part {p} has no points")));
        }
        Ok(Self { points, labels, n })
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn part_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Relabels so that part `order[p]` becomes part `p`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let mut inv = vec![0u32; self.n];
        for (p, &old) in order.iter().enumerate() {
            inv[old] = p as u32;
        }
        Self {
            points: self.points.clone(),
            labels: self.labels.iter().map(|&l| inv[l as usize]).collect(),
            n: self.n,
        }
    }

    /// Text form: `P N` header then `x y z label` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.points.len(), self.n);
        for (p, l) in self.points.iter().zip(&self.labels) {
            let p = p.map(|c| c.to_f64().unwrap_or(f64::NAN));
            let _ = writeln!(s, "{} {} {} {l}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut hdr = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(p)), Some(Ok(n))) = (hdr.next(), hdr.next()) else {
            return Err(err(1, "expected `P N` header"));
        };
        let mut points = Vec::with_capacity(p);
        let mut labels = Vec::with_capacity(p);
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err(i + 1, "expected `x y z label`"));
            }
            let mut xyz = [T::zero(); 3];
            for k in 0..3 {
                let v: f64 = f[k].parse().map_err(|_| err(i + 1, "bad coordinate"))?;
                xyz[k] = lit(v);
            }
            points.push(xyz);
            labels.push(f[3].parse().map_err(|_| err(i + 1, "bad label"))?);
        }
        if points.len() != p {
            return Err(err(1, "point count disagrees with header"));
        }
        Self::new(points, labels, n)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Samples `count` surface points and labels them by source face; parts left
/// with fewer than `min_per_part` points are topped up from their own faces.
pub fn build_labeled_cloud<T: Scalar>(
    mesh: &TriangleMesh<T>,
    labeling: &PartLabeling,
    count: usize,
    min_per_part: usize,
    seed: u64,
) -> Result<LabeledPointCloud<T>> {
    let n = labeling.part_count();
    if labeling.labels().len() != mesh.faces().len() {
        return Err(Error::invalid("labeling does not cover the mesh"));
    }
    if count < n * min_per_part {
        return Err(Error::invalid(format!(
            "{count} points cannot give {n} parts {min_per_part} points each"
        )));
    }
    let samples = sample_surface_points(mesh, count, seed)?;
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for s in samples {
        points.push(s.position);
        labels.push(labeling.labels()[s.face]);
    }
    let mut sizes = vec![0usize; n];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    for part in 0..n {
        if sizes[part] >= min_per_part {
            continue;
        }
        let faces = labeling.faces_of(part);
        let extra = crate::mesh::sample_faces(
            mesh,
            &faces,
            min_per_part - sizes[part],
            seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(part as u64 + 1)),
        )
        .map_err(|_| Error::Degenerate(format!("part {part} has zero surface area")))?;
        for s in extra {
            points.push(s.position);
            labels.push(part as u32);
        }
    }
    LabeledPointCloud::new(points, labels, n)
}

/// Global feature `1 x d_c` and part features `N x d_c`, parts in
/// serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSet<T> {
    pub global: Tensor<T>,
    pub parts: Tensor<T>,
}

impl<T: Scalar> ConditionSet<T> {
    pub fn part_count(&self) -> usize {
        self.parts.rows()
    }

    pub fn dim(&self) -> usize {
        self.global.cols()
    }

    /// The two condition rows `[C_global; C_part_i]`.
    pub fn concat_dyn(&self, i: usize) -> Result<Tensor<T>> {
        if i >= self.parts.rows() {
            return Err(Error::invalid(format!(
                "part index {i} out of range for {} parts",
                self.parts.rows()
            )));
        }
        let mut data = self.global.row(0).to_vec();
        data.extend_from_slice(self.parts.row(i));
        Ok(Tensor::from_vec(2, self.dim(), data))
    }
}

/// Graph handles of a [`ConditionSet`].
#[derive(Clone, Copy, Debug)]
pub struct ConditionVars {
    pub global: Var,
    pub parts: Var,
}

impl ConditionVars {
    pub fn constant<T: Scalar>(g: &mut Graph<T>, cond: &ConditionSet<T>) -> Self {
        Self {
            global: g.constant(cond.global.clone()),
            parts: g.constant(cond.parts.clone()),
        }
    }
}

/// Parameter handles of the point encoder: per-point map `3 -> h -> h`,
/// then separate projections `h -> d_c` for global and part pooling.
#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub global_w: ParamId,
    pub global_b: ParamId,
    pub part_w: ParamId,
    pub part_b: ParamId,
}

impl EncoderParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        hidden: usize,
        cond_dim: usize,
        rng: &mut R,
    ) -> Self {
        let s1 = (1.0 / 3.0f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        Self {
            w1: store.insert_normal("enc.w1", 3, hidden, s1, rng),
            b1: store.insert_normal("enc.b1", 1, hidden, 0.1, rng),
            w2: store.insert_normal("enc.w2", hidden, hidden, s2, rng),
            b2: store.insert_filled("enc.b2", 1, hidden, 0.0),
            global_w: store.insert_normal("enc.global.w", hidden, cond_dim, s2, rng),
            global_b: store.insert_filled("enc.global.b", 1, cond_dim, 0.0),
            part_w: store.insert_normal("enc.part.w", hidden, cond_dim, s2, rng),
            part_b: store.insert_filled("enc.part.b", 1, cond_dim, 0.0),
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(n)
                .ok_or_else(|| Error::Format(format!("missing parameter {n}")))
        };
        Ok(Self {
            w1: get("enc.w1")?,
            b1: get("enc.b1")?,
            w2: get("enc.w2")?,
            b2: get("enc.b2")?,
            global_w: get("enc.global.w")?,
            global_b: get("enc.global.b")?,
            part_w: get("enc.part.w")?,
            part_b: get("enc.part.b")?,
        })
    }
}

/// Records the encoder on `g`. Points are processed in sorted order so the
/// result (and its gradient routing) does not depend on input order.
pub fn encode_conditions_graph<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    enc: &EncoderParams,
    cloud: &LabeledPointCloud<T>,
) -> Result<ConditionVars> {
    if cloud.is_empty() {
        return Err(Error::invalid("empty point cloud"));
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        cloud.labels[a].cmp(&cloud.labels[b]).then_with(|| {
            let (pa, pb) = (cloud.points[a], cloud.points[b]);
            (0..3)
                .map(|k| pa[k].partial_cmp(&pb[k]).unwrap_or(std::cmp::Ordering::Equal))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut data = Vec::with_capacity(3 * order.len());
    let mut segments = vec![Vec::new(); cloud.n];
    for (row, &i) in order.iter().enumerate() {
        data.extend_from_slice(&cloud.points[i]);
        segments[cloud.labels[i] as usize].push(row);
    }
    if let Some(p) = segments.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("part {p} has no points")));
    }
    let pts = g.constant(Tensor::from_vec(order.len(), 3, data));
    let p = |g: &mut Graph<T>, id| g.param(store, id);
    let (w1, b1, w2, b2) = (p(g, enc.w1), p(g, enc.b1), p(g, enc.w2), p(g, enc.b2));
    let h = g.linear(pts, w1, b1);
    let h = g.gelu(h);
    let h = g.linear(h, w2, b2);
    let h = g.gelu(h);
    let all: Vec<usize> = (0..order.len()).collect();
    let pooled_global = g.segment_max(h, &[all]);
    let pooled_parts = g.segment_max(h, &segments);
    let (gw, gb) = (p(g, enc.global_w), p(g, enc.global_b));
    let global = g.linear(pooled_global, gw, gb);
    let (pw, pb) = (p(g, enc.part_w), p(g, enc.part_b));
    let parts = g.linear(pooled_parts, pw, pb);
    Ok(ConditionVars { global, parts })
}

/// Evaluates the encoder without keeping the tape.
pub fn encode_conditions<T: Scalar>(
    store: &ParamStore<T>,
    enc: &EncoderParams,
    cloud: &LabeledPointCloud<T>,
) -> Result<ConditionSet<T>> {
    let mut g = Graph::new();
    let vars = encode_conditions_graph(&mut g, store, enc, cloud)?;
    Ok(ConditionSet {
        global: g.value(vars.global).clone(),
        parts: g.value(vars.parts).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f64>, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = EncoderParams::register(&mut store, 16, 8, &mut rng);
        (store, enc)
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, per: usize) -> LabeledPointCloud<f64> {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for part in 0..n {
            for _ in 0..per {
                pts.push([rng.gen(), rng.gen(), rng.gen::<f64>() + part as f64]);
                labels.push(part as u32);
            }
        }
        LabeledPointCloud::new(pts, labels, n).unwrap()
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let (store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = cloud(&mut rng, 3, 20);
        let base = encode_conditions(&store, &enc, &c).unwrap();

        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.reverse();
        idx.swap(3, 17);
        let shuffled = LabeledPointCloud::new(
            idx.iter().map(|&i| c.points[i]).collect(),
            idx.iter().map(|&i| c.labels[i]).collect(),
            3,
        )
        .unwrap();
        assert_eq!(encode_conditions(&store, &enc, &shuffled).unwrap(), base);

        let mut pts = c.points.clone();
        pts.extend_from_slice(&c.points);
        let mut labels = c.labels.clone();
        labels.extend_from_slice(&c.labels);
        let doubled = LabeledPointCloud::new(pts, labels, 3).unwrap();
        assert_eq!(encode_conditions(&store, &enc, &doubled).unwrap(), base);
    }

    #[test]
    fn changing_one_part_leaves_others_untouched() {
        let (store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cloud(&mut rng, 3, 15);
        let mut moved = c.clone();
        for (p, &l) in moved.points.iter_mut().zip(&c.labels) {
            if l == 2 {
                p[0] += 5.0;
            }
        }
        let a = encode_conditions(&store, &enc, &c).unwrap();
        let b = encode_conditions(&store, &enc, &moved).unwrap();
        assert_ne!(a.global, b.global);
        assert_eq!(a.parts.row(0), b.parts.row(0));
        assert_eq!(a.parts.row(1), b.parts.row(1));
        assert_ne!(a.parts.row(2), b.parts.row(2));
    }

    #[test]
    fn reordering_tracks_serialization_order() {
        let (store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = cloud(&mut rng, 4, 10);
        let order = [2usize, 0, 3, 1];
        let a = encode_conditions(&store, &enc, &c).unwrap();
        let b = encode_conditions(&store, &enc, &c.reordered(&order)).unwrap();
        for (p, &old) in order.iter().enumerate() {
            assert_eq!(b.parts.row(p), a.parts.row(old));
        }
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn concat_dyn_rows() {
        let (store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cloud(&mut rng, 3, 5);
        let cond = encode_conditions(&store, &enc, &c).unwrap();
        for i in 0..3 {
            let d = cond.concat_dyn(i).unwrap();
            assert_eq!(d.shape(), (2, 8));
            assert_eq!(d.row(0), cond.global.row(0));
            assert_eq!(d.row(1), cond.parts.row(i));
        }
        assert!(cond.concat_dyn(3).is_err());
    }

    #[test]
    fn cloud_text_round_trip() {
        let c = LabeledPointCloud::new(
            vec![[0.25f64, 0.5, 1.0], [0.125, 0.0, 0.75]],
            vec![1, 0],
            2,
        )
        .unwrap();
        let t = c.to_text();
        assert!(t.starts_with("2 2\n"));
        assert_eq!(LabeledPointCloud::from_text(&t, Path::new("c")).unwrap(), c);
        assert!(LabeledPointCloud::<f64>::new(vec![[0.0; 3]], vec![0], 2).is_err());
    }
}
