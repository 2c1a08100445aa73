/// Outcome of an assignment-cost computation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmdResult {
    /// Mean matched distance.
    pub cost: f64,
    pub exact: bool,
    /// Final entropic regularization (approximate path only).
    pub epsilon: Option<f64>,
    /// Relative gap between the reported primal cost and a feasible dual.
    pub duality_gap: f64,
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix
/// (shortest augmenting paths with potentials, `O(n^3)`). Returns the
/// column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is a virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

pub fn exact_emd(cost: &[f64], n: usize) -> EmdResult {
    let assign = hungarian(cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    EmdResult {
        cost: total / n as f64,
        exact: true,
        epsilon: None,
        duality_gap: 0.0,
    }
}

fn lse(vals: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals);
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + buf.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with epsilon scaling, stopped once the rounded
/// plan's cost is within `target_gap` of a feasible dual bound.
pub fn sinkhorn_emd(cost: &[f64], n: usize, target_gap: f64) -> EmdResult {
    assert_eq!(cost.len(), n * n);
    let w = 1.0 / n as f64;
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    if cmax == 0.0 {
        return EmdResult {
            cost: 0.0,
            exact: false,
            epsilon: Some(0.0),
            duality_gap: 0.0,
        };
    }
    let ln_w = w.ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    let mut eps = cmax / 4.0;
    let mut best: Option<EmdResult> = None;
    loop {
        for it in 0..500 {
            for i in 0..n {
                let row = &cost[i * n..(i + 1) * n];
                f[i] = eps * ln_w - eps * lse(row.iter().zip(&g).map(|(c, gj)| (gj - c) / eps), &mut buf);
            }
            for j in 0..n {
                g[j] = eps * ln_w - eps * lse((0..n).map(|i| (f[i] - cost[i * n + j]) / eps), &mut buf);
            }
            if it % 10 != 9 {
                continue;
            }
            // columns are exact after the g update; check rows
            let err: f64 = (0..n)
                .map(|i| {
                    let s: f64 = (0..n).map(|j| ((f[i] + g[j] - cost[i * n + j]) / eps).exp()).sum();
                    (s - w).abs()
                })
                .sum();
            if err < 1e-3 * target_gap {
                break;
            }
        }
        let primal = rounded_cost(cost, n, &f, &g, eps);
        let dual = feasible_dual(cost, n, &f);
        let gap = if primal > 0.0 { ((primal - dual) / primal).max(0.0) } else { 0.0 };
        let result = EmdResult {
            cost: primal,
            exact: false,
            epsilon: Some(eps),
            duality_gap: gap,
        };
        if best.as_ref().map_or(true, |b| result.duality_gap < b.duality_gap) {
            best = Some(result);
        }
        if gap <= target_gap || eps < cmax * 1e-5 {
            break;
        }
        eps *= 0.5;
    }
    best.expect("at least one round")
}

/// Cost of the Sinkhorn plan after projecting it onto exact marginals.
fn rounded_cost(cost: &[f64], n: usize, f: &[f64], g: &[f64], eps: f64) -> f64 {
    let w = 1.0 / n as f64;
    let mut x: Vec<f64> = (0..n * n)
        .map(|idx| ((f[idx / n] + g[idx % n] - cost[idx]) / eps).exp())
        .collect();
    for i in 0..n {
        let s: f64 = x[i * n..(i + 1) * n].iter().sum();
        if s > w {
            let k = w / s;
            x[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= k);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| x[i * n + j]).sum();
        if s > w {
            let k = w / s;
            (0..n).for_each(|i| x[i * n + j] *= k);
        }
    }
    let er: Vec<f64> = (0..n).map(|i| w - x[i * n..(i + 1) * n].iter().sum::<f64>()).collect();
    let ec: Vec<f64> = (0..n).map(|j| w - (0..n).map(|i| x[i * n + j]).sum::<f64>()).collect();
    let mass: f64 = er.iter().sum();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut v = x[i * n + j];
            if mass > 0.0 {
                v += er[i] * ec[j] / mass;
            }
            total += v * cost[i * n + j];
        }
    }
    total
}

/// Dual objective after two c-transforms, which makes `(f, g)` feasible.
fn feasible_dual(cost: &[f64], n: usize, f: &[f64]) -> f64 {
    let w = 1.0 / n as f64;
    let g: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| cost[i * n + j] - f[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let f2: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| cost[i * n + j] - g[j]).fold(f64::INFINITY, f64::min))
        .collect();
    w * (f2.iter().sum::<f64>() + g.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, i + 1, used, acc + cost[i * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best / n as f64
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();
            let e = exact_emd(&cost, n);
            assert!((e.cost - brute(&cost, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_within_one_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let n = 7;
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() + 0.1).collect();
            let s = sinkhorn_emd(&cost, n, 0.01);
            let b = brute(&cost, n);
            assert!(s.cost >= b - 1e-12);
            assert!((s.cost - b) / b <= 0.01, "{} vs {b}", s.cost);
            assert!(s.duality_gap <= 0.01);
        }
    }
}
