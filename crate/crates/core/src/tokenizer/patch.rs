use std::collections::HashSet;

use super::vocab::TokenVocabulary;
use crate::mesh::QuantizedMesh;

/// A fan of faces `(center, ring[j], ring[j + 1])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub center: [u32; 3],
    pub ring: Vec<[u32; 3]>,
}

impl Patch {
    pub fn face_count(&self) -> usize {
        self.ring.len().saturating_sub(1)
    }

    pub fn faces(&self) -> impl Iterator<Item = [[u32; 3]; 3]> + '_ {
        self.ring
            .windows(2)
            .map(move |w| [self.center, w[0], w[1]])
    }
}

/// Greedy fan cover of every face.
///
/// Repeatedly takes the vertex with the most uncovered incident faces (ties
/// go to the smallest encoded center pair) and turns all of its uncovered
/// faces into maximal open strips. A closed fan becomes one strip whose last
/// ring vertex repeats the first.
pub fn patchify(part: &QuantizedMesh, vocab: &TokenVocabulary) -> Vec<Patch> {
    let nv = part.vertices().len();
    let nf = part.faces().len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (fi, f) in part.faces().iter().enumerate() {
        for &v in f {
            incident[v as usize].push(fi);
        }
    }
    let mut remaining: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut covered = vec![false; nf];
    let keys: Vec<[u32; 2]> = part
        .vertices()
        .iter()
        .map(|&v| vocab.center_key(v))
        .collect();
    let mut left = nf;
    let mut patches = Vec::new();

    while left > 0 {
        let mut center = usize::MAX;
        for v in 0..nv {
            if remaining[v] == 0 {
                continue;
            }
            if center == usize::MAX
                || remaining[v] > remaining[center]
                || (remaining[v] == remaining[center] && keys[v] < keys[center])
            {
                center = v;
            }
        }

        // uncovered faces around the center as (first, second) ring vertices
        let mut fan: Vec<(usize, u32, u32)> = incident[center]
            .iter()
            .filter(|&&f| !covered[f])
            .map(|&f| {
                let tri = part.faces()[f];
                let k = tri.iter().position(|&v| v as usize == center).unwrap();
                (f, tri[(k + 1) % 3], tri[(k + 2) % 3])
            })
            .collect();
        fan.sort_by_key(|&(_, a, b)| (keys[a as usize], keys[b as usize]));

        let seconds: HashSet<u32> = fan.iter().map(|&(_, _, b)| b).collect();
        let mut used = vec![false; fan.len()];
        let open_starts: Vec<usize> = (0..fan.len())
            .filter(|&i| !seconds.contains(&fan[i].1))
            .collect();
        let mut start_order = open_starts;
        start_order.extend(0..fan.len());
        for s in start_order {
            if used[s] {
                continue;
            }
            used[s] = true;
            let mut ring = vec![fan[s].1, fan[s].2];
            let mut tail = fan[s].2;
            while let Some(next) = (0..fan.len()).find(|&i| !used[i] && fan[i].1 == tail) {
                used[next] = true;
                tail = fan[next].2;
                ring.push(tail);
            }
            patches.push(Patch {
                center: part.vertices()[center],
                ring: ring.iter().map(|&v| part.vertices()[v as usize]).collect(),
            });
        }

        for &(f, _, _) in &fan {
            covered[f] = true;
            left -= 1;
            for &v in &part.faces()[f] {
                remaining[v as usize] -= 1;
            }
        }
    }
    patches
}
