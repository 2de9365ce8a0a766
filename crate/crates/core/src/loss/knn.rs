//! Exact k-nearest neighbors in canonical space and the weighted embedding
//! smoothness term built on them.

use crate::error::{Error, Result};
use crate::par;

/// Above this many points the search goes through a uniform grid.
pub const GRID_THRESHOLD: usize = 50_000;

#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    /// Neighbors per point (`min(k, N - 1)`).
    pub k: usize,
    pub neighbors: Vec<u32>,
    /// `exp(-lambda_w |mu_j - mu_i|^2)` per neighbor entry.
    pub weights: Vec<f64>,
    pub built_at_iter: u64,
    n: usize,
    stale: bool,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors_of(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn weights_of(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }

    pub fn mark_stale(&mut self) {
        self.stale = true;
    }

    pub fn is_stale_for(&self, n: usize) -> bool {
        self.stale || self.n != n
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Keeps the `k` smallest `(d2, index)` pairs in ascending order.
struct TopK {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK { k, items: Vec::with_capacity(k + 1) }
    }

    fn worst(&self) -> Option<(f64, u32)> {
        (self.items.len() == self.k).then(|| *self.items.last().unwrap())
    }

    fn offer(&mut self, d: f64, j: u32) {
        if let Some(w) = self.worst() {
            if (d, j) >= w {
                return;
            }
        }
        let pos = self.items.partition_point(|&e| e < (d, j));
        self.items.insert(pos, (d, j));
        self.items.truncate(self.k);
    }
}

fn brute_force(pos: &[f64], k: usize) -> Vec<Vec<(f64, u32)>> {
    let n = pos.len() / 3;
    par::map_range(n, |i| {
        let p = &pos[i * 3..i * 3 + 3];
        let mut top = TopK::new(k);
        for j in 0..n {
            if j != i {
                top.offer(dist2(p, &pos[j * 3..j * 3 + 3]), j as u32);
            }
        }
        top.items
    })
}

struct Grid {
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    points: Vec<u32>,
}

impl Grid {
    fn new(pos: &[f64], k: usize) -> Self {
        let n = pos.len() / 3;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pos.chunks_exact(3) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
        let volume: f64 = extent.iter().product();
        let cells_wanted = (n as f64 / (k as f64 + 1.0)).max(1.0);
        let mut cell = (volume / cells_wanted).cbrt();
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        cell = cell.max(max_extent / 256.0);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(4096));
        let key = |p: &[f64]| -> usize {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        let keys: Vec<usize> = pos.chunks_exact(3).map(key).collect();
        for &c in &keys {
            counts[c + 1] += 1;
        }
        for c in 0..total {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut points = vec![0u32; n];
        for (i, &c) in keys.iter().enumerate() {
            points[fill[c]] = i as u32;
            fill[c] += 1;
        }
        Grid { origin: lo, cell, dims, starts: counts, points }
    }

    fn coord(&self, p: &[f64]) -> [i64; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.origin[a]) / self.cell) as i64).clamp(0, self.dims[a] as i64 - 1))
    }

    fn query(&self, pos: &[f64], i: usize, k: usize) -> Vec<(f64, u32)> {
        let p = &pos[i * 3..i * 3 + 3];
        let c = self.coord(p);
        let mut top = TopK::new(k);
        let max_r = *self.dims.iter().max().unwrap() as i64;
        for r in 0..=max_r {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= self.dims[a] as i64) {
                            continue;
                        }
                        let cell = ((q[2] as usize * self.dims[1]) + q[1] as usize) * self.dims[0] + q[0] as usize;
                        for &j in &self.points[self.starts[cell]..self.starts[cell + 1]] {
                            if j as usize != i {
                                top.offer(dist2(p, &pos[j as usize * 3..j as usize * 3 + 3]), j);
                            }
                        }
                    }
                }
            }
            // every point outside rings 0..=r is at least r * cell away
            if let Some((d, _)) = top.worst() {
                let bound = r as f64 * self.cell;
                if d < bound * bound {
                    break;
                }
            }
        }
        top.items
    }
}

fn grid_search(pos: &[f64], k: usize) -> Vec<Vec<(f64, u32)>> {
    let grid = Grid::new(pos, k);
    par::map_range(pos.len() / 3, |i| grid.query(pos, i, k))
}

/// Exact KNN over `positions` (`N x 3`, row-major); ties broken by index.
pub fn build_knn(positions: &[f64], k: usize, lambda_w: f64, iter: u64) -> Result<KnnGraph> {
    if positions.len() % 3 != 0 {
        return Err(Error::Shape(format!("{} position values", positions.len())));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite position in KNN input".into()));
    }
    let n = positions.len() / 3;
    let k = k.min(n.saturating_sub(1));
    let lists = if k == 0 {
        vec![Vec::new(); n]
    } else if n > GRID_THRESHOLD {
        grid_search(positions, k)
    } else {
        brute_force(positions, k)
    };
    let mut graph = KnnGraph { k, neighbors: Vec::with_capacity(n * k), weights: Vec::with_capacity(n * k), built_at_iter: iter, n, stale: false };
    for list in lists {
        for (d2, j) in list {
            graph.neighbors.push(j);
            graph.weights.push((-lambda_w * d2).exp());
        }
    }
    Ok(graph)
}

/// `1/(k N) sum_i sum_j w_ij |e_i - e_j|` and its gradient on the embeddings.
pub fn emb_reg_loss(embeddings: &[f64], dim: usize, graph: &KnnGraph) -> Result<(f64, Vec<f64>)> {
    if dim == 0 || embeddings.len() % dim != 0 {
        return Err(Error::Shape(format!("{} embedding values for width {dim}", embeddings.len())));
    }
    let n = embeddings.len() / dim;
    if graph.is_stale_for(n) {
        return Err(Error::StaleGraph { graph: graph.n, cloud: n });
    }
    let mut grad = vec![0.0; embeddings.len()];
    if graph.k == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (graph.k * n) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let ei = &embeddings[i * dim..(i + 1) * dim];
        for (&j, &w) in graph.neighbors_of(i).iter().zip(graph.weights_of(i)) {
            let j = j as usize;
            let ej = &embeddings[j * dim..(j + 1) * dim];
            let norm = ei.iter().zip(ej).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            loss += w * norm;
            if norm > 0.0 {
                let c = scale * w / norm;
                for d in 0..dim {
                    let g = c * (ei[d] - ej[d]);
                    grad[i * dim + d] += g;
                    grad[j * dim + d] -= g;
                }
            }
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle(pos: &[f64], k: usize) -> Vec<Vec<u32>> {
        let n = pos.len() / 3;
        (0..n)
            .map(|i| {
                let mut all: Vec<(f64, u32)> =
                    (0..n).filter(|&j| j != i).map(|j| (dist2(&pos[i * 3..i * 3 + 3], &pos[j * 3..j * 3 + 3]), j as u32)).collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.into_iter().take(k).map(|e| e.1).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_example() {
        let g = build_knn(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0], 1, 1.0, 0).unwrap();
        assert_eq!(g.neighbors, vec![1, 0, 1]);
    }

    #[test]
    fn coincident_weight_is_one() {
        let g = build_knn(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 3, 2000.0, 0).unwrap();
        assert_eq!(g.k, 1);
        assert_eq!(g.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn matches_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = build_knn(&pos, 5, 1.0, 0).unwrap();
        let want = oracle(&pos, 5);
        for i in 0..50 {
            assert_eq!(g.neighbors_of(i), &want[i][..]);
        }
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pos: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        // a dense cluster and duplicates stress ties and uneven cells
        for i in 0..200 {
            pos[i * 3] = 0.3 + 1e-3 * (i % 7) as f64;
            pos[i * 3 + 1] = 0.1;
            pos[i * 3 + 2] = -0.2;
        }
        assert_eq!(grid_search(&pos, 6), brute_force(&pos, 6));
    }

    #[test]
    fn two_coincident_unit_apart() {
        let g = build_knn(&[0.0; 6], 1, 2000.0, 0).unwrap();
        let (l, _) = emb_reg_loss(&[0.0, 0.0, 1.0, 0.0], 2, &g).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_embeddings_give_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<f64> = (0..30).map(|_| rng.random_range(-0.1..0.1)).collect();
        let g = build_knn(&pos, 3, 10.0, 0).unwrap();
        let (l, grad) = emb_reg_loss(&vec![0.7; 40], 4, &g).unwrap();
        assert_eq!(l, 0.0);
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_graph_is_rejected() {
        let mut g = build_knn(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 1, 1.0, 0).unwrap();
        assert!(matches!(emb_reg_loss(&[0.0; 3], 1, &g), Err(Error::StaleGraph { .. })));
        g.mark_stale();
        assert!(emb_reg_loss(&[0.0; 2], 1, &g).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<f64> = (0..30).map(|_| rng.random_range(-0.05..0.05)).collect();
        let g = build_knn(&pos, 3, 100.0, 0).unwrap();
        let e: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = emb_reg_loss(&e, 4, &g).unwrap();
        let h = 1e-6;
        for i in 0..e.len() {
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (emb_reg_loss(&p, 4, &g).unwrap().0 - emb_reg_loss(&m, 4, &g).unwrap().0) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<f64> = (0..60).map(|_| rng.random_range(-0.1..0.1)).collect();
        let e: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (c, s) = (0.6f64, 0.8f64);
        let moved: Vec<f64> = pos.chunks_exact(3).flat_map(|p| [c * p[0] - s * p[1] + 2.0, s * p[0] + c * p[1] - 1.0, p[2] + 0.5]).collect();
        let a = emb_reg_loss(&e, 3, &build_knn(&pos, 4, 50.0, 0).unwrap()).unwrap().0;
        let b = emb_reg_loss(&e, 3, &build_knn(&moved, 4, 50.0, 0).unwrap()).unwrap().0;
        assert!((a - b).abs() < 1e-9);
    }
}
