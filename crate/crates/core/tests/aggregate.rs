use curvewalk::aggregate::*;
use curvewalk::autodiff::{
    bind_params, Activation, ConcatMlp, Ctx, Graph, Linear, MlpParams, MlpSpec, Norm, ParamStore, Tensor, LEAKY_SLOPE,
};
use curvewalk::geometry::{knn, Point};
use curvewalk::walk::PolicyKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cloud(p: usize, seed: u64) -> Vec<Point> {
    let mut r = rng(seed);
    (0..p).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect()
}

// ---- plain-loop reference maths ------------------------------------------

type Col = Vec<f64>;

fn matvec(w: &Tensor, x: &[f64]) -> Col {
    let (o, i) = w.dims2().unwrap();
    assert_eq!(i, x.len());
    (0..o).map(|r| (0..i).map(|c| w.at2(r, c) * x[c]).sum()).collect()
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::LeakyRelu if v < 0.0 => LEAKY_SLOPE * v,
        Activation::Relu if v < 0.0 => 0.0,
        _ => v,
    }
}

fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Col {
    let mut y = matvec(store.get(l.weight), x);
    if let Some(b) = l.bias {
        y.iter_mut().zip(store.get(b).data()).for_each(|(v, b)| *v += b);
    }
    y
}

fn mlp(store: &ParamStore, m: &MlpParams, x: &[f64]) -> Col {
    m.layers.iter().fold(x.to_vec(), |h, layer| {
        assert!(layer.norm.is_none());
        linear(store, &layer.linear, &h).into_iter().map(|v| act(layer.activation, v)).collect()
    })
}

fn concat_mlp(store: &ParamStore, m: &ConcatMlp, a: &[f64], b: &[f64]) -> Col {
    let mut pre: Col =
        matvec(store.get(m.first.w_a), a).iter().zip(matvec(store.get(m.first.w_b), b)).map(|(x, y)| x + y).collect();
    if let Some(bias) = m.first.bias {
        pre.iter_mut().zip(store.get(bias).data()).for_each(|(v, b)| *v += b);
    }
    let h: Col = pre.into_iter().map(|v| act(m.first_activation, v)).collect();
    match &m.tail {
        Some(t) => mlp(store, t, &h),
        None => h,
    }
}

fn softmax(v: &[f64]) -> Col {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Col = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Attentive pooling of the columns `xs` (each of length C).
fn ap(store: &ParamStore, score: &MlpParams, xs: &[Col]) -> Col {
    let c = xs[0].len();
    let scores: Vec<Col> = xs.iter().map(|x| mlp(store, score, x)).collect();
    (0..c)
        .map(|ch| {
            let w = softmax(&scores.iter().map(|s| s[ch]).collect::<Col>());
            xs.iter().zip(&w).map(|(x, w)| x[ch] * w).sum()
        })
        .collect()
}

fn col(t: &Tensor, j: usize) -> Col {
    t.column(j)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn assert_close(got: &Tensor, want: &[Col], rel: f64) {
    let (c, p) = got.dims2().unwrap();
    assert_eq!(want.len(), p);
    for (j, col) in want.iter().enumerate() {
        assert_eq!(col.len(), c);
        for (r, &w) in col.iter().enumerate() {
            assert!(close(got.at2(r, j), w, rel), "({r},{j}): {} vs {w}", got.at2(r, j));
        }
    }
}

fn simple_mlp(store: &mut ParamStore, dims: &[usize], r: &mut ChaCha8Rng) -> MlpParams {
    MlpParams::new(
        store,
        "mlp",
        MlpSpec { dims, hidden: Activation::LeakyRelu, last: Activation::LeakyRelu, norm: Norm::None, bias: true },
        r,
    )
}

// ---- local aggregation and LPFA -----------------------------------------

#[test]
fn constant_field_aggregates_to_identical_columns() {
    let mut store = ParamStore::new();
    let m = simple_mlp(&mut store, &[3, 5], &mut rng(1));
    let coords = random_cloud(20, 2);
    let graph = knn(&coords, 4, true).unwrap();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let f = cx.g.constant(Tensor::full([3, 20], 0.7));
    for pool in [Pool::Max, Pool::Avg] {
        let out = local_aggregate(&mut cx, f, &graph, &m, pool).unwrap();
        let v = cx.g.value(out);
        let first = v.column(0);
        assert!((1..20).all(|j| v.column(j) == first));
        assert_eq!(first, mlp(&store, &m, &[0.0; 3]));
    }
}

#[test]
fn local_aggregate_matches_per_point_loop() {
    let mut store = ParamStore::new();
    let m = simple_mlp(&mut store, &[4, 6, 5], &mut rng(3));
    let coords = random_cloud(24, 4);
    let graph = knn(&coords, 5, true).unwrap();
    let f = Tensor::randn([4, 24], 1.0, &mut rng(5));
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let fv = cx.g.constant(f.clone());
    for pool in [Pool::Max, Pool::Avg] {
        let out = local_aggregate(&mut cx, fv, &graph, &m, pool).unwrap();
        let want: Vec<Col> = (0..24)
            .map(|i| {
                let hs: Vec<Col> = graph
                    .row(i)
                    .iter()
                    .map(|&j| mlp(&store, &m, &col(&f, i).iter().zip(col(&f, j)).map(|(a, b)| a - b).collect::<Col>()))
                    .collect();
                (0..5)
                    .map(|r| match pool {
                        Pool::Max => hs.iter().map(|h| h[r]).fold(f64::NEG_INFINITY, f64::max),
                        Pool::Avg => hs.iter().map(|h| h[r]).sum::<f64>() / hs.len() as f64,
                    })
                    .collect()
            })
            .collect();
        assert_close(cx.g.value(out), &want, 1e-10);
    }
}

#[test]
fn lpfa_matches_per_point_loop() {
    let mut store = ParamStore::new();
    let m = lpfa_params(&mut store, "lpfa", 3, 6, true, Norm::None, &mut rng(6));
    let coords = random_cloud(20, 7);
    let graph = knn(&coords, 4, true).unwrap();
    let f = Tensor::randn([3, 20], 1.0, &mut rng(8));
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let fv = cx.g.constant(f.clone());
    let out = lpfa(&mut cx, fv, &graph, &m).unwrap();
    let want: Vec<Col> = (0..20)
        .map(|i| {
            let fi = col(&f, i);
            let hs: Vec<Col> = graph
                .row(i)
                .iter()
                .map(|&j| {
                    let d: Col = col(&f, j).iter().zip(&fi).map(|(a, b)| a - b).collect();
                    concat_mlp(&store, &m, &d, &fi)
                })
                .collect();
            (0..6).map(|r| hs.iter().map(|h| h[r]).sum::<f64>() / hs.len() as f64).collect()
        })
        .collect();
    assert_close(cx.g.value(out), &want, 1e-10);
}

#[test]
fn lpfa_with_self_as_only_neighbour_encodes_zero_offset() {
    let mut store = ParamStore::new();
    let m = lpfa_params(&mut store, "lpfa", 2, 3, false, Norm::None, &mut rng(9));
    // two coincident points: each is the other's only neighbour
    let coords: Vec<Point> = vec![[0.0; 3], [0.0; 3]];
    let graph = knn(&coords, 1, true).unwrap();
    let f = Tensor::new([2, 2], vec![0.3, 0.3, -1.2, -1.2]).unwrap();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let fv = cx.g.constant(f.clone());
    let out = lpfa(&mut cx, fv, &graph, &m).unwrap();
    let want = concat_mlp(&store, &m, &[0.0, 0.0], &col(&f, 0));
    assert_close(cx.g.value(out), &[want.clone(), want], 1e-12);
}

#[test]
fn graph_and_feature_sizes_must_agree() {
    let mut store = ParamStore::new();
    let m = simple_mlp(&mut store, &[2, 2], &mut rng(1));
    let graph = knn(&random_cloud(10, 1), 3, true).unwrap();
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let f = cx.g.constant(Tensor::zeros([2, 9]));
    assert!(local_aggregate(&mut cx, f, &graph, &m, Pool::Max).is_err());
}

// ---- attentive pooling ---------------------------------------------------

fn score_mlp(store: &mut ParamStore, c: usize, r: &mut ChaCha8Rng) -> MlpParams {
    MlpParams::new(
        store,
        "score",
        MlpSpec { dims: &[c, c], hidden: Activation::None, last: Activation::None, norm: Norm::None, bias: true },
        r,
    )
}

#[test]
fn attentive_pool_cases() {
    let mut store = ParamStore::new();
    let s = score_mlp(&mut store, 4, &mut rng(1));
    let x1 = Tensor::randn([4, 1], 1.0, &mut rng(2));
    let x = Tensor::randn([4, 6], 1.0, &mut rng(3));
    {
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store);
        let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
        let v1 = cx.g.constant(x1.clone());
        let out = attentive_pool(&mut cx, v1, &s).unwrap();
        assert_eq!(cx.g.value(out).data(), x1.data());
        let xv = cx.g.constant(x.clone());
        let out = attentive_pool(&mut cx, xv, &s).unwrap();
        let cols: Vec<Col> = (0..6).map(|j| col(&x, j)).collect();
        assert_close(cx.g.value(out), &[ap(&store, &s, &cols)], 1e-12);
    }
    // constant scores weight every element equally
    store.values_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let xv = cx.g.constant(x.clone());
    let out = attentive_pool(&mut cx, xv, &s).unwrap();
    let mean: Col = (0..4).map(|r| (0..6).map(|j| x.at2(r, j)).sum::<f64>() / 6.0).collect();
    assert_close(cx.g.value(out), &[mean], 1e-14);
}

// ---- curve aggregation ---------------------------------------------------

/// Straight-line curve aggregation on explicit matrices.
fn ca_oracle(store: &ParamStore, ca: &CaParams, f: &Tensor, curves: &Tensor) -> (Vec<Col>, Vec<Col>, Vec<Col>) {
    let s = curves.shape();
    let (c, n, l) = (s[0], s[1], s[2]);
    let p = f.dims2().unwrap().1;
    let cv = |ci: usize, i: usize| -> Col { (0..c).map(|ch| curves.data()[ch * n * l + ci * l + i]).collect() };
    let f_intra: Vec<Col> = (0..n).map(|ci| ap(store, &ca.pool_intra, &(0..l).map(|i| cv(ci, i)).collect::<Vec<_>>())).collect();
    let f_inter: Vec<Col> = (0..l).map(|i| ap(store, &ca.pool_inter, &(0..n).map(|ci| cv(ci, i)).collect::<Vec<_>>())).collect();
    let intra_red: Vec<Col> = f_intra.iter().map(|x| linear(store, &ca.reduce_intra, x)).collect();
    let inter_red: Vec<Col> = f_inter.iter().map(|x| linear(store, &ca.reduce_inter, x)).collect();
    let v_intra: Vec<Col> = intra_red.iter().map(|x| linear(store, &ca.value_intra, x)).collect();
    let v_inter: Vec<Col> = inter_red.iter().map(|x| linear(store, &ca.value_inter, x)).collect();
    let dot = |a: &Col, b: &Col| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let out = (0..p)
        .map(|j| {
            let fj = col(f, j);
            let q = linear(store, &ca.reduce_points, &fj);
            let si = softmax(&intra_red.iter().map(|k| dot(&q, k)).collect::<Col>());
            let se = softmax(&inter_red.iter().map(|k| dot(&q, k)).collect::<Col>());
            let fine_intra: Col = (0..c).map(|ch| v_intra.iter().zip(&si).map(|(v, w)| v[ch] * w).sum()).collect();
            let fine_inter: Col = (0..c).map(|ch| v_inter.iter().zip(&se).map(|(v, w)| v[ch] * w).sum()).collect();
            let both: Col = fine_intra.into_iter().chain(fine_inter).collect();
            let fused = linear(store, &ca.fuse, &both);
            fj.iter().zip(fused).map(|(a, b)| a + b).collect()
        })
        .collect();
    (out, f_intra, f_inter)
}

fn ca_instance(c: usize, p: usize, n: usize, l: usize, seed: u64) -> (ParamStore, CaParams, Tensor, Tensor) {
    let mut store = ParamStore::new();
    let ca = CaParams::new(&mut store, "ca", c, DEFAULT_BOTTLENECK, &mut rng(seed));
    // non-zero biases so every term of the oracle matters
    for t in store.values_mut() {
        if t.shape()[1] == 1 {
            *t = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng(seed + 1));
        }
    }
    let f = Tensor::randn([c, p], 1.0, &mut rng(seed + 2));
    let curves = Tensor::randn([c, n, l], 1.0, &mut rng(seed + 3));
    (store, ca, f, curves)
}

#[test]
fn curve_aggregation_matches_unbatched_oracle() {
    for (c, p, n, l, seed) in [(8, 16, 2, 3, 1), (8, 32, 4, 5, 2), (12, 20, 3, 1, 3)] {
        let (store, ca, f, curves) = ca_instance(c, p, n, l, seed);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store);
        let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
        let (fv, cv) = (cx.g.constant(f.clone()), cx.g.constant(curves.clone()));
        let tr = curve_aggregate_traced(&mut cx, fv, cv, &ca).unwrap();
        let (out, f_intra, f_inter) = ca_oracle(&store, &ca, &f, &curves);
        assert_close(cx.g.value(tr.output), &out, 1e-10);
        assert_close(cx.g.value(tr.f_intra), &f_intra, 1e-10);
        assert_close(cx.g.value(tr.f_inter), &f_inter, 1e-10);
        for s in [tr.score_intra, tr.score_inter] {
            let v = cx.g.value(s);
            let (rows, cols) = v.dims2().unwrap();
            assert_eq!(rows, p);
            for r in 0..rows {
                let sum: f64 = (0..cols).map(|j| v.at2(r, j)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_fusion_weights_make_curve_aggregation_the_identity() {
    let (mut store, ca, f, curves) = ca_instance(8, 16, 2, 3, 4);
    store.get_mut(ca.fuse.weight).data_mut().fill(0.0);
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let (fv, cv) = (cx.g.constant(f.clone()), cx.g.constant(curves));
    let out = curve_aggregate(&mut cx, fv, cv, &ca).unwrap();
    assert_eq!(cx.g.value(out).data(), f.data());
}

#[test]
fn single_point_curve_pools_to_itself_with_unit_scores() {
    let (store, ca, f, curves) = ca_instance(8, 10, 1, 1, 5);
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let (fv, cv) = (cx.g.constant(f), cx.g.constant(curves.clone()));
    let tr = curve_aggregate_traced(&mut cx, fv, cv, &ca).unwrap();
    assert_eq!(cx.g.value(tr.f_intra).data(), curves.data());
    assert_eq!(cx.g.value(tr.f_inter).data(), curves.data());
    assert!(cx.g.value(tr.score_intra).data().iter().all(|&s| s == 1.0));
    assert!(cx.g.value(tr.score_inter).data().iter().all(|&s| s == 1.0));
}

#[test]
fn curve_aggregation_rejects_mismatched_widths() {
    let (store, ca, _, _) = ca_instance(8, 10, 2, 2, 6);
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let f = cx.g.constant(Tensor::zeros([8, 10]));
    let bad = cx.g.constant(Tensor::zeros([4, 2, 2]));
    assert!(curve_aggregate(&mut cx, f, bad, &ca).is_err());
}

// ---- CIC block -------------------------------------------------------------

fn block_cfg(cin: usize, cout: usize, down: Option<usize>, curves: Option<CurveSpec>) -> CicConfig {
    CicConfig {
        in_channels: cin,
        out_channels: cout,
        downsample: down,
        neighbors: NeighborRule::Knn { k: 6 },
        curves,
        rho: DEFAULT_BOTTLENECK,
        residual: true,
        norm: Norm::None,
    }
}

fn run_block(
    cfg: &CicConfig,
    coords: &[Point],
    f: &Tensor,
    seed: u64,
    zero_lpfa: bool,
) -> (Vec<Point>, Tensor, Option<Vec<Vec<usize>>>) {
    let mut store = ParamStore::new();
    let params = CicParams::new(&mut store, "b", cfg, &mut rng(seed)).unwrap();
    if zero_lpfa {
        for id in [params.lpfa.first.w_a, params.lpfa.first.w_b].into_iter().chain(params.lpfa.first.bias) {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng(0));
    let fv = cx.g.constant(f.clone());
    let out = cic_block(&mut cx, coords, fv, cfg, &params).unwrap();
    (out.coords, cx.g.value(out.features).clone(), out.curves.map(|c| c.curves()))
}

#[test]
fn plain_block_with_silent_aggregation_is_the_activated_shortcut() {
    let coords = random_cloud(30, 10);
    let f = Tensor::randn([5, 30], 1.0, &mut rng(11));
    let (_, out, curves) = run_block(&block_cfg(5, 5, None, None), &coords, &f, 12, true);
    assert!(curves.is_none());
    for (o, x) in out.data().iter().zip(f.data()) {
        assert_eq!(*o, act(Activation::LeakyRelu, *x));
    }
}

#[test]
fn block_output_shapes_follow_the_config() {
    let coords = random_cloud(64, 13);
    let f = Tensor::randn([4, 64], 1.0, &mut rng(14));
    let spec = CurveSpec { n: 5, l: 4, policy: PolicyKind::MomentumSuppression, theta_bar_deg: 90.0 };
    for (cfg, m) in [
        (block_cfg(4, 8, None, None), 64),
        (block_cfg(4, 8, Some(16), None), 16),
        (block_cfg(4, 4, None, Some(spec)), 64),
        (block_cfg(4, 12, Some(32), Some(spec)), 32),
    ] {
        let (c2, out, curves) = run_block(&cfg, &coords, &f, 15, false);
        assert_eq!(c2.len(), m);
        assert_eq!(out.shape(), &[cfg.out_channels, m]);
        assert_eq!(curves.is_some(), cfg.curves.is_some());
        if let Some(cs) = curves {
            assert_eq!(cs.len(), 5);
            assert!(cs.iter().all(|c| c.len() == 4 && c.iter().all(|&i| i < m)));
        }
    }
}

#[test]
fn downsampled_coordinates_come_from_farthest_point_sampling() {
    let coords = random_cloud(40, 16);
    let f = Tensor::randn([3, 40], 1.0, &mut rng(17));
    let (sub, _, _) = run_block(&block_cfg(3, 3, Some(10), None), &coords, &f, 18, false);
    let idx = curvewalk::geometry::farthest_point_sample(&coords, 10, 0).unwrap();
    assert_eq!(sub, idx.iter().map(|&i| coords[i]).collect::<Vec<_>>());
}

#[test]
fn invalid_block_configs_are_rejected() {
    let spec = CurveSpec { n: 0, l: 4, policy: PolicyKind::Naive, theta_bar_deg: 90.0 };
    assert!(block_cfg(4, 4, None, Some(spec)).validate().is_err());
    assert!(block_cfg(0, 4, None, None).validate().is_err());
    assert!(block_cfg(4, 4, Some(0), None).validate().is_err());
    let wide = CurveSpec { n: 2, l: 2, policy: PolicyKind::Naive, theta_bar_deg: 200.0 };
    assert!(block_cfg(4, 4, None, Some(wide)).validate().is_err());
}

#[test]
fn composite_gradients_match_finite_differences() {
    let names: Vec<String> = ["local_aggregate", "lpfa", "attentive_pool", "ca", "cic"].map(String::from).to_vec();
    for r in curvewalk::verify::gradient_suite(Some(&names)).unwrap() {
        assert!(r.passed && r.max_rel_error < 1e-4, "{r:?}");
    }
}

// ---- channel variance ------------------------------------------------------

#[test]
fn channel_variance_cases() {
    let constant = Tensor::full([3, 7], 2.5);
    let v = channel_variance_map(&constant).unwrap();
    assert!(v.per_channel_variance.iter().all(|&x| x == 0.0));
    assert!(v.per_point_mean.iter().all(|&x| x == 2.5));

    // channel 0 is 1 on 3 of 8 points: variance p(1 − p) with p = 3/8
    let mut t = Tensor::zeros([2, 8]);
    for j in [1, 4, 6] {
        t.set2(0, j, 1.0);
    }
    let v = channel_variance_map(&t).unwrap();
    assert!((v.per_channel_variance[0] - 3.0 / 8.0 * 5.0 / 8.0).abs() < 1e-15);
    assert_eq!(v.per_channel_variance[1], 0.0);

    let r = Tensor::randn([4, 9], 1.0, &mut rng(1));
    let v = channel_variance_map(&r).unwrap();
    for c in 0..4 {
        let row: Vec<f64> = (0..9).map(|j| r.at2(c, j)).collect();
        let mean = row.iter().sum::<f64>() / 9.0;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((v.per_channel_variance[c] - var).abs() < 1e-14);
    }
    for j in 0..9 {
        assert!((v.per_point_mean[j] - (0..4).map(|c| r.at2(c, j)).sum::<f64>() / 4.0).abs() < 1e-15);
    }
    assert!((v.mean_variance() - v.per_channel_variance.iter().sum::<f64>() / 4.0).abs() < 1e-15);
}

#[test]
fn channel_csv_layout() {
    let coords = random_cloud(3, 2);
    let f = Tensor::randn([2, 3], 1.0, &mut rng(3));
    let mut out = Vec::new();
    write_channel_csv(&mut out, &coords, &f, true).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "point_id,x,y,z,channel_mean,c0,c1");
    assert_eq!(lines.len(), 4);
    let fields: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(fields[0], 1.0);
    assert_eq!(fields[1..4], coords[1]);
    assert_eq!(fields[5], f.at2(0, 1));

    let mut short = Vec::new();
    write_channel_csv(&mut short, &coords, &f, false).unwrap();
    assert!(String::from_utf8(short).unwrap().starts_with("point_id,x,y,z,channel_mean\n"));
    assert!(write_channel_csv(&mut Vec::new(), &coords[..2], &f, false).is_err());
}
