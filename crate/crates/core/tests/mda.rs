use microcrack::mda::{
    classical_mds, embedding_quality, freedman_diaconis_bins, geodesic_embed, make_pseudo_labels, output_distances,
    pairwise_distances, pearson, quantile, spearman, MdaResult,
};
use microcrack::{Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn embedded_distances(e: &[[f64; 2]]) -> Vec<f64> {
    let r: Vec<Vec<f64>> = e.iter().map(|p| p.to_vec()).collect();
    pairwise_distances(&r)
}

#[test]
fn identical_rows_give_zero_distances() {
    let d = output_distances(&vec![vec![0.3; 1296]; 4]).unwrap();
    assert!(d.iter().all(|&v| v == 0.0));
}

#[test]
fn one_hot_rows_are_root_two_apart() {
    let mut a = vec![0.0; 1296];
    let mut b = vec![0.0; 1296];
    a[3] = 1.0;
    b[700] = 1.0;
    let d = output_distances(&[a.clone(), b, a]).unwrap();
    assert!((d[1] - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(d[2], 0.0);
}

#[test]
fn distances_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rows(&mut rng, 5, 1296);
    let d = output_distances(&x).unwrap();
    for i in 0..5 {
        assert_eq!(d[i * 5 + i], 0.0);
        for j in 0..5 {
            let mut s = 0.0;
            for k in 0..1296 {
                s += (x[i][k] - x[j][k]).powi(2);
            }
            assert!((d[i * 5 + j] - s.sqrt()).abs() < 1e-12);
            assert_eq!(d[i * 5 + j], d[j * 5 + i]);
        }
    }
}

#[test]
fn too_few_samples_rejected() {
    assert!(output_distances(&[vec![0.0; 3], vec![1.0; 3]]).is_err());
    assert!(output_distances(&[vec![0.0; 3], vec![1.0; 3], vec![1.0; 2]]).is_err());
    assert!(make_pseudo_labels(&[0.0; 4], 2).is_err());
}

#[test]
fn collinear_outputs_anchor_at_an_endpoint() {
    let x = vec![vec![1.0], vec![0.0], vec![2.0]];
    let l = make_pseudo_labels(&output_distances(&x).unwrap(), 3).unwrap();
    // both endpoints have sum 3; the lower index wins
    assert_eq!(l.anchor, 1);
    assert_eq!(l.anchor_distance, vec![1.0, 0.0, 2.0]);
    assert_eq!(l.order, vec![1, 0, 2]);
    assert!(!l.degenerate);
    let sorted_bins: Vec<usize> = l.order.iter().map(|&i| l.bins[i]).collect();
    assert!(sorted_bins.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(sorted_bins[0], 0);
    assert_eq!(*sorted_bins.last().unwrap(), l.bin_count() - 1);
}

#[test]
fn identical_outputs_give_one_flagged_bin() {
    let x = vec![vec![0.5; 1296]; 6];
    let l = make_pseudo_labels(&output_distances(&x).unwrap(), 6).unwrap();
    assert!(l.degenerate);
    assert_eq!(l.bin_count(), 1);
    assert!(l.bins.iter().all(|&b| b == 0));
}

#[test]
fn bin_count_matches_hand_freedman_diaconis() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen::<f64>();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let l = make_pseudo_labels(&d, n).unwrap();
    let row_sum = |i: usize| d[i * n..(i + 1) * n].iter().sum::<f64>();
    let anchor = (0..n).fold(0, |b, i| if row_sum(i) > row_sum(b) { i } else { b });
    assert_eq!(l.anchor, anchor);

    let mut v: Vec<f64> = d[anchor * n..(anchor + 1) * n].to_vec();
    v.sort_by(f64::total_cmp);
    // type-7 quartiles by hand: positions 24.75 and 74.25
    let q1 = v[24] + 0.75 * (v[25] - v[24]);
    let q3 = v[74] + 0.25 * (v[75] - v[74]);
    let width = 2.0 * (q3 - q1) / (n as f64).cbrt();
    let k = ((v[n - 1] - v[0]) / width).ceil() as usize;
    assert_eq!(l.bin_count(), k);
    assert!(l.bins.iter().all(|&b| b < k));
    assert_eq!(l.edges.len(), k + 1);
    assert_eq!(l.edges[0], v[0]);
    assert_eq!(l.edges[k], v[n - 1]);
}

#[test]
fn zero_iqr_falls_back_to_square_root() {
    let mut v = vec![1.0; 20];
    v[19] = 3.0;
    assert_eq!(freedman_diaconis_bins(&v), 5);
    assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
}

#[test]
fn bins_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rows(&mut rng, 30, 12);
    let a = make_pseudo_labels(&output_distances(&x).unwrap(), 30).unwrap();
    let perm: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 30).collect();
    let y: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
    let b = make_pseudo_labels(&output_distances(&y).unwrap(), 30).unwrap();
    assert_eq!(perm[b.anchor], a.anchor);
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(b.bins[new], a.bins[old]);
    }
}

#[test]
fn flat_grid_is_reproduced() {
    let mut x = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            x.push(vec![i as f64, 0.5 * j as f64]);
        }
    }
    // graph paths overshoot straight lines by a few percent at k = 10
    let e = geodesic_embed(&x, 30).unwrap();
    let de = embedded_distances(&e);
    let dt = pairwise_distances(&x);
    let num: f64 = de.iter().zip(&dt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = dt.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(num / den < 0.01, "{}", num / den);
}

#[test]
fn swiss_roll_is_unrolled() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sheet = Vec::new();
    let mut x = Vec::new();
    for _ in 0..300 {
        let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.gen::<f64>());
        // a short sheet keeps 300 points dense enough that no kNN edge jumps between turns
        let h = 5.0 * rng.gen::<f64>();
        // arc length of the spiral r = t from the origin
        let s = 0.5 * (t * (1.0 + t * t).sqrt() + t.asinh());
        sheet.push(vec![s, h]);
        x.push(vec![t * t.cos(), h, t * t.sin()]);
    }
    let e = geodesic_embed(&x, 10).unwrap();
    let r = pearson(&embedded_distances(&e), &pairwise_distances(&sheet));
    let residual = 1.0 - r * r;
    assert!(residual < 0.1, "{residual}");
}

#[test]
fn duplicate_points_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut x = rows(&mut rng, 40, 5);
    x.push(x[7].clone());
    let e = geodesic_embed(&x, 10).unwrap();
    let d = ((e[7][0] - e[40][0]).powi(2) + (e[7][1] - e[40][1]).powi(2)).sqrt();
    assert!(d < 1e-6, "{d}");
}

#[test]
fn embedding_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rows(&mut rng, 50, 8);
    let y: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * 37.5).collect()).collect();
    let a = embedded_distances(&geodesic_embed(&x, 10).unwrap());
    let b = embedded_distances(&geodesic_embed(&y, 10).unwrap());
    let amax = a.iter().cloned().fold(0.0, f64::max);
    let bmax = b.iter().cloned().fold(0.0, f64::max);
    for (p, q) in a.iter().zip(&b) {
        assert!((p / amax - q / bmax).abs() < 1e-6);
    }
}

#[test]
fn embedding_is_deterministic_and_sign_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rows(&mut rng, 25, 4);
    let a = geodesic_embed(&x, 5).unwrap();
    assert_eq!(a, geodesic_embed(&x, 5).unwrap());
    for axis in 0..2 {
        let big = a.iter().map(|p| p[axis]).fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big > 0.0);
    }
}

#[test]
fn disconnected_clusters_are_joined() {
    let mut x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
    x.extend((0..6).map(|i| vec![100.0 + i as f64 * 0.1, 0.0]));
    let e = geodesic_embed(&x, 2).unwrap();
    assert!(e.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
    let d = embedded_distances(&e);
    assert!((d[11] - 100.5).abs() < 1e-6, "{}", d[11]);
}

#[test]
fn embed_rejects_bad_inputs() {
    let x = vec![vec![1.0, 2.0]; 5];
    assert!(geodesic_embed(&x, 2).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = rows(&mut rng, 5, 2);
    assert!(geodesic_embed(&y, 5).is_err());
    assert!(geodesic_embed(&y, 1).is_err());
    assert!(geodesic_embed(&y[..2], 1).is_err());
}

#[test]
fn mds_recovers_a_triangle() {
    let d = [0.0, 3.0, 4.0, 3.0, 0.0, 5.0, 4.0, 5.0, 0.0];
    let e = classical_mds(&d, 3);
    let de = embedded_distances(&e);
    for (a, b) in de.iter().zip(&d) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn spearman_handles_ties_and_monotone_maps() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&a, &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    // ranks of [1, 1, 2] are [0.5, 0.5, 2]
    let r = spearman(&[1.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
    assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12, "{r}");
}

#[test]
fn quality_is_perfect_for_a_line() {
    let e: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
    let a: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
    assert!((embedding_quality(&e, &a) - 1.0).abs() < 1e-12);
}

#[test]
fn smallest_run_writes_csv_and_svg() {
    let model = Model::new(ModelConfig::micro()).unwrap();
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 3;
    let len = n * 2 * cfg.temporal_len * cfg.sensors;
    let x = Tensor::new(
        vec![n, 2, cfg.temporal_len, cfg.sensors],
        (0..len).map(|_| rng.gen::<f64>() - 0.5).collect(),
    )
    .unwrap();
    let layer = model.logits_layer();
    let r = microcrack::mda::analyze(&model, &x, layer, 10, 2).unwrap();
    assert_eq!(r.embedding.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    let svg = dir.path().join("e.svg");
    r.write(&csv, Some(&svg)).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_id,x,y,bin,anchor_distance");
    assert_eq!(lines.len(), n + 1);
    let svg = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg.matches("<circle").count(), n);
    assert!(microcrack::mda::analyze(&model, &x, 999, 10, 2).is_err());
}

#[test]
fn svg_ramp_runs_red_to_blue() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rows(&mut rng, 20, 3);
    let labels = make_pseudo_labels(&output_distances(&x).unwrap(), 20).unwrap();
    let embedding = geodesic_embed(&x, 5).unwrap();
    let r = MdaResult {
        layer: 0,
        quality: embedding_quality(&embedding, &labels.anchor_distance),
        labels,
        embedding,
    };
    let svg = r.to_svg();
    assert!(svg.contains("rgb(255,0,0)"));
    assert!(svg.contains("rgb(0,0,255)"));
}
