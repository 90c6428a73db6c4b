//! Manifold discovery on network activations: pseudo-labels from output
//! distances and a geodesic-preserving 2D embedding of a layer's features.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const DEFAULT_NEIGHBORS: usize = 10;

fn check_rows(op: &str, rows: &[Vec<f64>], min: usize) -> Result<usize> {
    if rows.len() < min {
        return Err(Error::invalid(format!("{op}: need at least {min} samples, got {}", rows.len())));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(format!("{op}: rows must share a non-zero length")));
    }
    Ok(d)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric Euclidean distance matrix, row-major `N × N`.
pub fn pairwise_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclid(&rows[i], &rows[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Distances between model outputs; needs at least three samples.
pub fn output_distances(predictions: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows("output_distances", predictions, 3)?;
    Ok(pairwise_distances(predictions))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// Sample with the largest summed distance to all others.
    pub anchor: usize,
    pub anchor_distance: Vec<f64>,
    /// Samples ordered by distance to the anchor.
    pub order: Vec<usize>,
    /// `k + 1` equal-width edges over `[min, max]`.
    pub edges: Vec<f64>,
    pub bins: Vec<usize>,
    /// Set when every output coincides and only one bin exists.
    pub degenerate: bool,
}

impl PseudoLabels {
    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman–Diaconis bin count: width `2·IQR·N^(−1/3)`, falling back to
/// `⌈√N⌉` bins when the IQR vanishes.
pub fn freedman_diaconis_bins(values: &[f64]) -> usize {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let range = s[n - 1] - s[0];
    if range <= 0.0 {
        return 1;
    }
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    if iqr <= 0.0 {
        return (n as f64).sqrt().ceil() as usize;
    }
    let width = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
    ((range / width).ceil() as usize).max(1)
}

pub fn make_pseudo_labels(distances: &[f64], n: usize) -> Result<PseudoLabels> {
    if n < 3 || distances.len() != n * n {
        return Err(Error::invalid(format!("pseudo-labels need an N×N matrix with N ≥ 3, got {} values", distances.len())));
    }
    let sums: Vec<f64> = (0..n).map(|i| distances[i * n..(i + 1) * n].iter().sum()).collect();
    let mut anchor = 0;
    for i in 1..n {
        if sums[i] > sums[anchor] {
            anchor = i;
        }
    }
    let anchor_distance: Vec<f64> = distances[anchor * n..(anchor + 1) * n].to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| anchor_distance[a].total_cmp(&anchor_distance[b]).then(a.cmp(&b)));
    let lo = anchor_distance[order[0]];
    let hi = anchor_distance[order[n - 1]];
    let degenerate = hi <= lo;
    let k = if degenerate { 1 } else { freedman_diaconis_bins(&anchor_distance) };
    let width = if degenerate { 1.0 } else { (hi - lo) / k as f64 };
    let edges: Vec<f64> = (0..=k).map(|i| if i == k { hi.max(lo) } else { lo + i as f64 * width }).collect();
    let bins = anchor_distance
        .iter()
        .map(|&d| if degenerate { 0 } else { (((d - lo) / width).floor() as usize).min(k - 1) })
        .collect();
    Ok(PseudoLabels {
        anchor,
        anchor_distance,
        order,
        edges,
        bins,
        degenerate,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::from([Frontier(0.0, src)]);
    while let Some(Frontier(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier(nd, v));
            }
        }
    }
    dist
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for s in 0..adj.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Symmetric kNN graph over `d`, with disconnected components joined through
/// their closest cross pair until one remains.
pub fn knn_graph(d: &[f64], n: usize, k: usize) -> Vec<Vec<(usize, f64)>> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let add = |adj: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, w: f64| {
        if !adj[i].iter().any(|&(v, _)| v == j) {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    };
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d[i * n + a].total_cmp(&d[i * n + b]).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            add(&mut adj, i, j, d[i * n + j]);
        }
    }
    loop {
        let comp = components(&adj);
        if comp.iter().all(|&c| c == 0) {
            return adj;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                if comp[i] != comp[j] && d[i * n + j] < best.0 {
                    best = (d[i * n + j], i, j);
                }
            }
        }
        add(&mut adj, best.1, best.2, best.0);
    }
}

/// All-pairs shortest paths over the kNN graph, `N × N`.
pub fn geodesic_distances(features: &[Vec<f64>], n_neighbors: usize) -> Result<Vec<f64>> {
    check_rows("geodesic_embed", features, 3)?;
    let n = features.len();
    if n_neighbors < 2 || n_neighbors >= n {
        return Err(Error::invalid(format!("need 2 ≤ n_neighbors < N, got {n_neighbors} for N = {n}")));
    }
    let d = pairwise_distances(features);
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("all feature vectors are identical"));
    }
    let adj = knn_graph(&d, n, n_neighbors);
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let mut g = vec![0.0; n * n];
    for (i, r) in rows.iter().enumerate() {
        for j in 0..n {
            // symmetrise against rounding in path sums
            g[i * n + j] = if i < j { r[j] } else { rows[j][i] };
        }
    }
    Ok(g)
}

/// Classical MDS of a distance matrix to two dimensions. Each axis is
/// oriented so its largest-magnitude coordinate is positive.
pub fn classical_mds(d: &[f64], n: usize) -> Vec<[f64; 2]> {
    let sq = DMatrix::from_fn(n, n, |i, j| d[i * n + j] * d[i * n + j]);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let total = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + total));
    let eig = SymmetricEigen::new(b);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![[0.0; 2]; n];
    for (axis, &e) in idx.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        let col = eig.eigenvectors.column(e);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[i][axis] = sign * col[i] * scale;
        }
    }
    out
}

/// kNN-geodesic distances followed by classical MDS.
pub fn geodesic_embed(features: &[Vec<f64>], n_neighbors: usize) -> Result<Vec<[f64; 2]>> {
    let g = geodesic_distances(features, n_neighbors)?;
    Ok(classical_mds(&g, features.len()))
}

/// Ranks with ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Spearman correlation, over all pairs, between embedded distances and
/// differences in distance to the anchor.
pub fn embedding_quality(embedding: &[[f64; 2]], anchor_distance: &[f64]) -> f64 {
    let n = embedding.len();
    let mut e = Vec::with_capacity(n * (n - 1) / 2);
    let mut a = Vec::with_capacity(e.capacity());
    for i in 0..n {
        for j in i + 1..n {
            e.push(euclid(&embedding[i], &embedding[j]));
            a.push((anchor_distance[i] - anchor_distance[j]).abs());
        }
    }
    spearman(&e, &a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdaResult {
    pub layer: usize,
    pub labels: PseudoLabels,
    pub embedding: Vec<[f64; 2]>,
    pub quality: f64,
}

/// Eval-mode outputs and flattened `layer` activations, one row per sample
/// of `inputs` (`[N, 2, T, 81]`).
pub fn layer_features(model: &Model, inputs: &Tensor, layer: usize, batch: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = inputs.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("no samples to analyze"));
    }
    let per = inputs.numel() / n;
    let batch = batch.max(1);
    let mut outputs = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let mut shape = inputs.shape().to_vec();
        shape[0] = end - start;
        let x = Tensor::new(shape, inputs.data()[start * per..end * per].to_vec())?;
        let (out, taps) = model.predict_with_taps(&x, &[layer])?;
        let width = out.numel() / (end - start);
        outputs.extend(out.data().chunks(width).map(<[f64]>::to_vec));
        let t = &taps[&layer];
        let fw = t.numel() / (end - start);
        features.extend(t.data().chunks(fw).map(<[f64]>::to_vec));
    }
    Ok((outputs, features))
}

/// Embeds `features` and labels them from `reference` outputs.
pub fn analyze_features(layer: usize, features: &[Vec<f64>], reference: &[Vec<f64>], n_neighbors: usize) -> Result<MdaResult> {
    let n = features.len();
    if reference.len() != n {
        return Err(Error::invalid(format!("{} reference outputs for {n} feature rows", reference.len())));
    }
    let labels = make_pseudo_labels(&output_distances(reference)?, n)?;
    let embedding = geodesic_embed(features, n_neighbors.min(n - 1))?;
    let quality = embedding_quality(&embedding, &labels.anchor_distance);
    Ok(MdaResult {
        layer,
        labels,
        embedding,
        quality,
    })
}

/// Embeds the eval-mode activations of `layer` for every sample in `inputs`,
/// labelled by the model's own outputs.
pub fn analyze(model: &Model, inputs: &Tensor, layer: usize, n_neighbors: usize, batch: usize) -> Result<MdaResult> {
    let (outputs, features) = layer_features(model, inputs, layer, batch)?;
    analyze_features(layer, &features, &outputs, n_neighbors)
}

impl MdaResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,x,y,bin,anchor_distance\n");
        for (i, p) in self.embedding.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{}", p[0], p[1], self.labels.bins[i], self.labels.anchor_distance[i]);
        }
        s
    }

    /// Scatter plot with bins coloured from red (0) to blue (last).
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 480.0, 24.0);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.embedding {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let span = |a: usize| if hi[a] > lo[a] { hi[a] - lo[a] } else { 1.0 };
        let k = self.labels.bin_count().max(2) - 1;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<title>layer {}</title>\n",
            self.layer
        );
        for (i, p) in self.embedding.iter().enumerate() {
            let t = self.labels.bins[i] as f64 / k as f64;
            let x = pad + (p[0] - lo[0]) / span(0) * (w - 2.0 * pad);
            let y = h - pad - (p[1] - lo[1]) / span(1) * (h - 2.0 * pad);
            let (r, b) = ((255.0 * (1.0 - t)).round() as u8, (255.0 * t).round() as u8);
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"rgb({r},0,{b})\"/>");
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, csv: &Path, svg: Option<&Path>) -> Result<()> {
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        if let Some(p) = svg {
            std::fs::write(p, self.to_svg()).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}
