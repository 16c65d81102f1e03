use ndarray::Array2;
use proptest::prelude::*;
use relspray::lrp::{lrp_explain, Rule, RuleAssignment};
use relspray::metrics::{delta_q, positive_share, temporal_pool, BoxRegion, Region};
use relspray::netcore::{Dense, Layer, Network};
use relspray::spray::{
    eigendecompose, kmeans, knn_affinity, laplacian_spectrum, preprocess_dataset, AffinityMode,
    KMeansConfig, LaplacianKind, Normalization, ShapePolicy,
};
use relspray::Tensor;

fn dense_net(widths: &[usize], weights: &[f64]) -> Network<f64> {
    let mut layers = Vec::new();
    let mut it = weights.iter().cycle();
    for (k, pair) in widths.windows(2).enumerate() {
        let w: Vec<f64> = (0..pair[0] * pair[1])
            .map(|_| *it.next().unwrap())
            .collect();
        layers.push(Layer::Dense(
            Dense::without_bias(Tensor::new(vec![pair[1], pair[0]], w).unwrap()).unwrap(),
        ));
        if k + 2 < widths.len() {
            layers.push(Layer::Relu);
        }
    }
    Network::new(vec![widths[0]], layers).unwrap()
}

fn heatmaps(values: &[f64], n: usize, side: usize) -> Vec<Tensor<f64>> {
    (0..n)
        .map(|i| {
            Tensor::new(
                vec![side, side],
                values[i * side * side..(i + 1) * side * side].to_vec(),
            )
            .unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lrp_conserves_on_bias_free_nets(
        widths in prop::collection::vec(1usize..12, 2..5),
        weights in prop::collection::vec(-1.0f64..1.0, 16..64),
        x in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let net = dense_net(&widths, &weights);
        let input = Tensor::new(vec![widths[0]], x[..widths[0]].to_vec()).unwrap();
        let trace = net.forward(&input).unwrap();
        for rule in [Rule::alpha1_beta0(), Rule::alpha2_beta1(), Rule::WSquare, Rule::Flat] {
            let map = lrp_explain(&net, &trace, 0, &RuleAssignment::uniform(rule)).unwrap();
            let f = map.score;
            prop_assert!((map.total() - f).abs() <= 1e-9 * f.abs().max(1.0));
        }
    }

    #[test]
    fn ab1_is_nonnegative_on_nonnegative_inputs(
        widths in prop::collection::vec(1usize..10, 2..5),
        weights in prop::collection::vec(-1.0f64..1.0, 16..64),
        x in prop::collection::vec(0.0f64..1.0, 10),
    ) {
        let net = dense_net(&widths, &weights);
        let input = Tensor::new(vec![widths[0]], x[..widths[0]].to_vec()).unwrap();
        let trace = net.forward(&input).unwrap();
        prop_assume!(trace.scores().data()[0] > 0.0);
        let map = lrp_explain(&net, &trace, 0, &RuleAssignment::uniform(Rule::alpha1_beta0())).unwrap();
        prop_assert!(map.values.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn normalized_laplacian_spectrum_bounds(
        values in prop::collection::vec(-1.0f64..1.0, 6 * 9 * 4..=6 * 9 * 4),
        n in 6usize..=24,
        k in 1usize..5,
    ) {
        let n = n.min(values.len() / 9);
        let maps = heatmaps(&values, n, 3);
        let hm = preprocess_dataset(&maps, None, (3, 3), Normalization::L1, ShapePolicy::RequireUniform).unwrap();
        let g = knn_affinity(&hm, k.min(n - 1), AffinityMode::Binary).unwrap();
        let s = laplacian_spectrum(&g.weights, LaplacianKind::Symmetric).unwrap();
        for &v in &s.values {
            prop_assert!((-1e-8..=2.0 + 1e-8).contains(&v), "eigenvalue {v}");
        }
        for w in s.values.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let l = relspray::spray::build_laplacian(&g.weights, LaplacianKind::Symmetric).unwrap();
        let resid = (l.dot(&s.vectors) - s.vectors.dot(&Array2::from_diag(&ndarray::Array1::from(s.values.clone()))))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(resid <= 1e-6, "residual {resid}");
    }

    #[test]
    fn eigendecompose_reconstructs(entries in prop::collection::vec(-5.0f64..5.0, 36)) {
        let n = 6;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                a[(i, j)] = entries[i * n + j];
                a[(j, i)] = entries[i * n + j];
            }
        }
        let s = eigendecompose(&a).unwrap();
        let d = Array2::from_diag(&ndarray::Array1::from(s.values.clone()));
        let back = s.vectors.dot(&d).dot(&s.vectors.t());
        let err = (&back - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err < 1e-9, "reconstruction error {err}");
    }

    #[test]
    fn l1_rows_have_unit_mass(values in prop::collection::vec(0.01f64..1.0, 5 * 16)) {
        let maps = heatmaps(&values, 5, 4);
        let hm = preprocess_dataset(&maps, None, (2, 2), Normalization::L1, ShapePolicy::RequireUniform).unwrap();
        for row in hm.rows.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_labels_are_canonical(points in prop::collection::vec(-10.0f64..10.0, 40), k in 1usize..6, seed in any::<u64>()) {
        let data = Array2::from_shape_vec((20, 2), points).unwrap();
        let km = kmeans(&data, k, &KMeansConfig { seed, restarts: 3, ..Default::default() }).unwrap();
        let mut next = 0;
        for &l in &km.labels {
            prop_assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
        prop_assert!(km.labels.iter().all(|&l| l < k));
    }

    #[test]
    fn delta_q_is_scale_invariant(q in prop::collection::vec(-3.0f64..3.0, 2..6), c in 1e-3f64..1e3) {
        if let Some(base) = delta_q(&q).unwrap() {
            let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
            prop_assert!((delta_q(&scaled).unwrap().unwrap() - base).abs() <= 1e-7 * base.abs().max(1.0));
        }
    }

    #[test]
    fn positive_share_is_a_fraction(values in prop::collection::vec(-1.0f64..1.0, 25), x in 0usize..5, y in 0usize..5) {
        let map = Tensor::new(vec![5, 5], values).unwrap();
        let region = Region::boxes("r", vec![BoxRegion::new(x, y, 5 - x, 5 - y)]);
        if let Some(s) = positive_share(&map, &region).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn temporal_pool_keeps_mass(values in prop::collection::vec(-1.0f64..1.0, 4 * 12)) {
        let frames = heatmaps(&values, 3, 4);
        let strip = temporal_pool(&frames).unwrap();
        for (t, f) in frames.iter().enumerate() {
            let pooled: f64 = strip.data()[t * 4..(t + 1) * 4].iter().sum();
            prop_assert!((pooled - f.sum()).abs() < 1e-9);
        }
    }
}
