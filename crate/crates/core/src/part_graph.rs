//! Mesh segmentation into edge-connected parts, the part adjacency graph and
//! its breadth-first serialization order.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::scalar::Scalar;

/// Cluster-count range handed to the segmenter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterBounds {
    pub k_min: usize,
    pub k_max: usize,
    pub cap: usize,
}

impl ClusterBounds {
    pub fn new(k_min: usize, k_max: usize, cap: usize) -> Result<Self> {
        if !(1 <= k_min && k_min <= k_max && k_max <= cap) {
            return Err(Error::invalid(format!(
                "cluster bounds must satisfy 1 <= {k_min} <= {k_max} <= {cap}"
            )));
        }
        Ok(Self { k_min, k_max, cap })
    }

    /// A fixed cluster count.
    pub fn exactly(k: usize) -> Self {
        let k = k.max(1);
        Self {
            k_min: k,
            k_max: k,
            cap: k,
        }
    }
}

/// `K_min = min(floor(F * 0.5 / 500), cap)` and `K_max = min(floor(F * 2 / 500), cap)`,
/// with `K_min` raised to 1 and `K_max` raised to `K_min`.
pub fn cluster_bounds(face_count: usize, cap: usize) -> ClusterBounds {
    let cap = cap.max(1);
    // floor(F * 0.5 / 500) == F / 1000 and floor(F * 2 / 500) == F / 250 exactly
    let k_min = (face_count / 1000).min(cap).max(1);
    let k_max = (face_count / 250).min(cap).max(k_min);
    ClusterBounds { k_min, k_max, cap }
}

/// Per-face part ids in `[0, N)`; every id is used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartLabeling {
    labels: Vec<u32>,
    n: usize,
}

impl PartLabeling {
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        let n = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut used = vec![false; n];
        for &l in &labels {
            used[l as usize] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::invalid(format!("part id {missing} labels no face")));
        }
        Ok(Self { labels, n })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn part_count(&self) -> usize {
        self.n
    }

    pub fn faces_of(&self, part: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&f| self.labels[f] as usize == part)
            .collect()
    }

    /// Relabels so that part `order[p]` becomes part `p`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let mut inv = vec![0u32; self.n];
        for (p, &old) in order.iter().enumerate() {
            inv[old] = p as u32;
        }
        Self {
            labels: self.labels.iter().map(|&l| inv[l as usize]).collect(),
            n: self.n,
        }
    }

    /// Sidecar text: `N=<count>` then one id per face line.
    pub fn to_text(&self) -> String {
        let mut s = format!("N={}\n", self.n);
        for l in &self.labels {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing N= header"))?;
        let n: usize = header
            .trim()
            .strip_prefix("N=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, "expected N=<count> header"))?;
        let mut labels = Vec::new();
        for (i, l) in lines {
            let v: u32 = l
                .trim()
                .parse()
                .map_err(|_| err(i + 1, "expected a part id"))?;
            labels.push(v);
        }
        let out = Self::new(labels)?;
        if out.n != n {
            return Err(err(1, "header count disagrees with labels"));
        }
        Ok(out)
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

/// Undirected edge -> incident faces.
fn edge_faces<T: Scalar>(mesh: &TriangleMesh<T>) -> HashMap<(u32, u32), Vec<usize>> {
    let mut map: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            map.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    map
}

/// Face adjacency lists through shared edges, sorted and deduplicated.
pub fn face_neighbors<T: Scalar>(mesh: &TriangleMesh<T>) -> Vec<Vec<usize>> {
    let mut nbrs = vec![Vec::new(); mesh.faces().len()];
    for faces in edge_faces(mesh).values() {
        for &a in faces {
            for &b in faces {
                if a != b {
                    nbrs[a].push(b);
                }
            }
        }
    }
    for n in &mut nbrs {
        n.sort_unstable();
        n.dedup();
    }
    nbrs
}

/// Splits every label into edge-connected components; new ids follow the
/// lowest face index of each component.
pub fn split_connected<T: Scalar>(mesh: &TriangleMesh<T>, labels: &[u32]) -> Vec<u32> {
    let nbrs = face_neighbors(mesh);
    let mut out = vec![u32::MAX; labels.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if out[start] != u32::MAX {
            continue;
        }
        out[start] = next;
        queue.push_back(start);
        while let Some(f) = queue.pop_front() {
            for &g in &nbrs[f] {
                if out[g] == u32::MAX && labels[g] == labels[f] {
                    out[g] = next;
                    queue.push_back(g);
                }
            }
        }
        next += 1;
    }
    out
}

fn sq_dist<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Seeded k-means on face centroids (farthest-point initialization), followed
/// by splitting every cluster into edge-connected parts.
pub fn segment_mesh<T: Scalar>(
    mesh: &TriangleMesh<T>,
    bounds: ClusterBounds,
    seed: u64,
) -> PartLabeling {
    let nf = mesh.faces().len();
    if nf == 0 {
        return PartLabeling {
            labels: Vec::new(),
            n: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(bounds.k_min..=bounds.k_max).min(nf);
    let points: Vec<[T; 3]> = (0..nf).map(|f| mesh.centroid(f)).collect();

    let mut centers = vec![points[rng.gen_range(0..nf)]];
    let mut nearest: Vec<T> = points.iter().map(|&p| sq_dist(p, centers[0])).collect();
    while centers.len() < k {
        let mut best = 0;
        for i in 1..nf {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        let c = points[best];
        centers.push(c);
        for (d, &p) in nearest.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let mut assign = vec![0u32; nf];
    for iter in 0..100 {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(p, centers[0]);
            for (c, &center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if assign[i] != best as u32 {
                assign[i] = best as u32;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![[T::zero(); 3]; k];
        let mut counts = vec![0usize; k];
        for (i, &p) in points.iter().enumerate() {
            let c = assign[i] as usize;
            counts[c] += 1;
            for a in 0..3 {
                sums[c][a] += p[a];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = T::from_usize(counts[c]).expect("count");
                centers[c] = sums[c].map(|s| s / n);
            }
        }
    }

    let labels = split_connected(mesh, &assign);
    PartLabeling::new(labels).expect("component labels are dense")
}

/// Symmetric part neighborhood relation without self-edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartAdjacency {
    n: usize,
    edges: Vec<bool>,
}

impl PartAdjacency {
    pub fn from_edges(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut edges = vec![false; n * n];
        for &(a, b) in pairs {
            if a != b {
                edges[a * n + b] = true;
                edges[b * n + a] = true;
            }
        }
        Self { n, edges }
    }

    pub fn part_count(&self) -> usize {
        self.n
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.edges[a * self.n + b]
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&b| self.connected(a, b))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count() / 2
    }
}

/// Parts `i != j` are adjacent iff a face of each shares a mesh edge.
pub fn build_adjacency<T: Scalar>(mesh: &TriangleMesh<T>, labeling: &PartLabeling) -> PartAdjacency {
    let n = labeling.part_count();
    let mut adj = PartAdjacency {
        n,
        edges: vec![false; n * n],
    };
    for faces in edge_faces(mesh).values() {
        for &a in faces {
            for &b in faces {
                let (la, lb) = (labeling.labels[a] as usize, labeling.labels[b] as usize);
                if la != lb {
                    adj.edges[la * n + lb] = true;
                }
            }
        }
    }
    adj
}

/// Breadth-first order from `start`, visiting neighbors in ascending id; any
/// unreached component is appended starting from its lowest id.
pub fn bfs_part_order(adj: &PartAdjacency, start: usize) -> Result<Vec<usize>> {
    let n = adj.part_count();
    if start >= n {
        return Err(Error::invalid(format!("start part {start} >= {n}")));
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let roots = std::iter::once(start).chain(0..n);
    for root in roots {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        queue.push_back(root);
        while let Some(p) = queue.pop_front() {
            order.push(p);
            for q in adj.neighbors(p) {
                if !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(order)
}

/// Per-part submeshes in `order`, re-indexed locally, global coordinates kept.
pub fn split_into_parts<T: Scalar>(
    mesh: &TriangleMesh<T>,
    labeling: &PartLabeling,
    order: &[usize],
) -> Vec<TriangleMesh<T>> {
    order
        .iter()
        .map(|&p| mesh.submesh(labeling.faces_of(p)))
        .collect()
}
