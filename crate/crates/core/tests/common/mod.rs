#![allow(dead_code)]

use std::collections::HashMap;

use patchseg::bundle::Mask;
use patchseg::geometry::Grid;
use patchseg::partition::{Edge, SignedGraph};
use rand::Rng;

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::HashSet<_> = a.iter().collect();
    let inter = b.iter().filter(|q| sa.contains(q)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Largest number of one-to-one pairs with IoU strictly above `threshold`,
/// by exhaustive search.
pub fn optimal_matches(matrix: &[Vec<f64>], n_pred: usize, threshold: f64) -> usize {
    fn go(g: usize, matrix: &[Vec<f64>], used: &mut Vec<bool>, threshold: f64) -> usize {
        if g == matrix.len() {
            return 0;
        }
        let mut best = go(g + 1, matrix, used, threshold);
        for p in 0..used.len() {
            if !used[p] && matrix[g][p] > threshold {
                used[p] = true;
                best = best.max(1 + go(g + 1, matrix, used, threshold));
                used[p] = false;
            }
        }
        best
    }
    go(0, matrix, &mut vec![false; n_pred], threshold)
}

pub fn random_rect(rng: &mut impl Rng, grid: &Grid) -> Mask {
    let s = grid.shape();
    let (h, w) = (s[0], s[1]);
    let r0 = rng.gen_range(0..h);
    let c0 = rng.gen_range(0..w);
    let r1 = rng.gen_range(r0..h.min(r0 + 6)) + 1;
    let c1 = rng.gen_range(c0..w.min(c0 + 6)) + 1;
    Mask::from_pixels(grid, (r0..r1).flat_map(|r| (c0..c1).map(move |c| r * w + c)))
}

/// Random signed graph on `n` nodes; `positive_only` draws weights in (0, 1].
pub fn random_graph(rng: &mut impl Rng, n: usize, positive_only: bool) -> SignedGraph {
    let density: f64 = rng.gen_range(0.1..0.9);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(density) {
                // coarse weights so ties occur
                let mag = rng.gen_range(1..=5) as f64 / 5.0;
                let sign = if positive_only || rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                edges.push(Edge { a, b, weight: sign * mag });
            }
        }
    }
    SignedGraph::new(n, edges)
}

/// Connected components by BFS over edges with positive weight.
pub fn positive_components(graph: &SignedGraph) -> Vec<usize> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in &graph.edges {
        if e.weight > 0.0 {
            adj.entry(e.a).or_default().push(e.b);
            adj.entry(e.b).or_default().push(e.a);
        }
    }
    let mut label = vec![usize::MAX; graph.nodes];
    let mut next = 0;
    for s in 0..graph.nodes {
        if label[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        label[s] = next;
        while let Some(x) = stack.pop() {
            for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
                if label[y] == usize::MAX {
                    label[y] = next;
                    stack.push(y);
                }
            }
        }
        next += 1;
    }
    label
}

/// True if two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab: HashMap<usize, usize> = HashMap::new();
    let mut ba: HashMap<usize, usize> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}
