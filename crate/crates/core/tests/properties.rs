use proptest::prelude::*;

use dgp_core::data::{
    degrade, streak_field, DatasetSpec, DegradeSpec, Domain, Patch, UnpairedDataset,
};
use dgp_core::gp::{
    gp_condition, knn_select, pseudo_loss, pseudo_loss_grad, read_bank, write_bank, FeatureBank,
};
use dgp_core::kernels::{effective_kernel, gram_sym, KernelFamily, KernelLayer, KernelSpec};
use dgp_core::linalg::{cholesky, Mat};
use dgp_core::metrics::{psnr, ssim};
use dgp_core::nets::checkpoint::{Checkpoint, Network};
use dgp_core::nets::{Discriminator, Generator, GeneratorArch};
use dgp_core::oracle::{
    brute_force_condition, central_difference, dense_inverse, logdet_eigen, relative_error,
};
use dgp_core::train::{LossBreakdown, TrainConfig, Trainer};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, dim), n)
}

fn se_spec() -> impl Strategy<Value = KernelSpec> {
    (
        prop::collection::vec((0.5..2.0f64, 0.5..2.0f64), 1..=4),
        0.005..0.2f64,
    )
        .prop_map(|(layers, noise)| KernelSpec {
            layers: layers
                .into_iter()
                .map(|(b, g)| KernelLayer::se(b, g))
                .collect(),
            noise_var: noise,
        })
}

fn spd(n: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        let a = Mat::from_row_major(n, n, v).unwrap();
        let mut m = a.matmul(&a.transpose()).unwrap();
        m.add_diagonal(0.5);
        m
    })
}

fn bank(s: &[Vec<f64>], z: &[Vec<f64>]) -> FeatureBank {
    let mut b = FeatureBank::new(Domain::Clean, 0);
    for (s, z) in s.iter().zip(z) {
        b.push(s.clone(), z.clone()).unwrap();
    }
    b
}

fn bank_strategy() -> impl Strategy<Value = (FeatureBank, Vec<f64>)> {
    (2usize..12, 1usize..6, 1usize..5).prop_flat_map(|(n, ds, dz)| {
        (
            points(n, ds),
            points(n, dz),
            prop::collection::vec(-2.0..2.0f64, ds),
        )
            .prop_map(|(s, z, q)| (bank(&s, &z), q))
    })
}

fn patch(w: usize, h: usize) -> impl Strategy<Value = Patch> {
    prop::collection::vec(0.0..1.0f64, w * h)
        .prop_map(move |p| Patch::new(w, h, p, Domain::Clean).unwrap())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn cholesky_reconstructs_and_solves((m, b) in (1usize..10).prop_flat_map(|n| (spd(n), prop::collection::vec(-3.0..3.0f64, n)))) {
        let f = cholesky(&m).unwrap();
        prop_assert_eq!(f.jitter_used(), 0.0);
        prop_assert!(f.reconstruct().max_abs_diff(&m) <= 1e-10 * m.max_abs().max(1.0));
        let x = f.solve_vec(&b).unwrap();
        let inv = dense_inverse(&m).unwrap();
        prop_assert!(relative_error(&x, &inv.matvec(&b).unwrap(), 1e-12) < 1e-8);
        prop_assert!((f.logdet() - logdet_eigen(&m).unwrap()).abs() < 1e-8 * (1.0 + f.logdet().abs()));
    }

    #[test]
    fn gram_with_noise_is_positive_definite(spec in se_spec(), pts in (1usize..12, 1usize..6).prop_flat_map(|(n, d)| points(n, d))) {
        let mut k = gram_sym(&spec, &pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        k.add_diagonal(spec.noise_var);
        prop_assert_eq!(cholesky(&k).unwrap().jitter_used(), 0.0);
    }

    #[test]
    fn kernel_decreases_with_distance(spec in se_spec(), x in prop::collection::vec(-2.0..2.0f64, 3), dir in prop::collection::vec(-1.0..1.0f64, 3), t in 0.0..2.0f64, dt in 0.01..2.0f64) {
        let at = |r: f64| -> Vec<f64> { x.iter().zip(&dir).map(|(a, d)| a + r * d).collect() };
        let near = effective_kernel(&spec, &x, &at(t)).unwrap();
        let far = effective_kernel(&spec, &x, &at(t + dt)).unwrap();
        prop_assert!(far <= near + 1e-15);
        let top = spec.outer_variance();
        prop_assert!(near <= top * (1.0 + 1e-12) && far >= 0.0);
    }

    #[test]
    fn conditioning_matches_joint_gaussian(spec in se_spec(), (b, q) in bank_strategy()) {
        let ids: Vec<usize> = (0..b.len()).collect();
        let post = gp_condition(&spec, &b, &ids, &q).unwrap();
        let (mean, var) = brute_force_condition(&spec, &b, &ids, &q).unwrap();
        prop_assert!(relative_error(&post.pseudo_label, &mean, 1e-3) < 1e-7);
        prop_assert!((post.variance - var).abs() <= 1e-7 * var);
    }

    #[test]
    fn conditioning_ignores_neighbor_order(spec in se_spec(), (b, q) in bank_strategy(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..b.len()).collect();
        let k = (seed as usize % b.len()) + 1;
        order.rotate_left(k % b.len());
        order.reverse();
        let base = gp_condition(&spec, &b, &(0..b.len()).collect::<Vec<_>>(), &q).unwrap();
        let shuffled = gp_condition(&spec, &b, &order, &q).unwrap();
        prop_assert!(relative_error(&base.pseudo_label, &shuffled.pseudo_label, 1e-3) < 1e-9);
        prop_assert!((base.variance - shuffled.variance).abs() < 1e-10);
    }

    #[test]
    fn variance_is_bounded_and_shrinks_with_more_data(spec in se_spec(), (b, q) in bank_strategy()) {
        let all: Vec<usize> = (0..b.len()).collect();
        let full = gp_condition(&spec, &b, &all, &q).unwrap().variance;
        let fewer = gp_condition(&spec, &b, &all[..b.len() - 1], &q).unwrap().variance;
        let prior = effective_kernel(&spec, &q, &q).unwrap() + spec.noise_var;
        prop_assert!(full >= spec.noise_var);
        prop_assert!(fewer <= prior + 1e-12);
        prop_assert!(full <= fewer + 1e-9);
    }

    #[test]
    fn pseudo_loss_gradient_matches_differences(spec in se_spec(), (b, q) in bank_strategy(), shift in -1.0..1.0f64) {
        let ids: Vec<usize> = (0..b.len()).collect();
        let post = gp_condition(&spec, &b, &ids, &q).unwrap();
        let z: Vec<f64> = post.pseudo_label.iter().enumerate().map(|(i, m)| m + shift * (i as f64 + 1.0) / 3.0).collect();
        let fd = central_difference(|x| pseudo_loss(&post, x).unwrap(), &z, 1e-5);
        let g = pseudo_loss_grad(&post, &z).unwrap();
        prop_assert!(relative_error(&g, &fd, 1e-4) < 1e-5);
    }

    #[test]
    fn knn_agrees_with_full_sort((b, _) in bank_strategy(), q in prop::collection::vec(-2.0..2.0f64, 1..5), n in 1usize..15) {
        prop_assume!(q.len() == b.z_dim());
        let got = knn_select(&b, &q, n).unwrap();
        let mut all: Vec<(f64, usize)> = b.entries().iter().enumerate()
            .map(|(i, e)| (e.z.iter().zip(&q).map(|(a, c)| (a - c) * (a - c)).sum(), i)).collect();
        all.sort_by(|a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
        let want: Vec<usize> = all.into_iter().take(n.min(b.len())).map(|(_, i)| i).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn bank_file_round_trip((b, _) in bank_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        write_bank(&path, &b).unwrap();
        prop_assert_eq!(read_bank(&path).unwrap(), b);
    }

    #[test]
    fn psnr_falls_as_noise_grows(a in patch(8, 8), e in 0.01..0.2f64, k in 1.1..3.0f64) {
        let offset = |d: f64| Patch { pixels: a.pixels.iter().map(|v| v + d).collect(), ..a.clone() };
        prop_assert!(psnr(&a, &offset(e)).unwrap() > psnr(&a, &offset(e * k)).unwrap());
        prop_assert!((psnr(&a, &offset(e)).unwrap() - psnr(&offset(e), &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in patch(11, 11), b in patch(11, 11)) {
        let ab = ssim(&a, &b).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn degradation_adds_a_clamped_streak_layer(a in patch(16, 12), seed in any::<u64>(), amp in 0.0..0.6f64) {
        let spec = DegradeSpec { streak_amplitude: amp, ..DegradeSpec::default() }.with_seed(seed);
        let field = streak_field(&spec, 16, 12);
        let w = degrade(&a, &spec);
        prop_assert_eq!(w.domain, Domain::Weather);
        for ((o, c), f) in w.pixels.iter().zip(&a.pixels).zip(&field) {
            prop_assert!(*f >= 0.0);
            prop_assert_eq!(*o, (c + f).clamp(0.0, 1.0));
        }
        prop_assert_eq!(degrade(&a, &spec), w);
    }

    #[test]
    fn losses_reassemble(parts in prop::collection::vec(0.0..10.0f64, 7), lambda in 0.0..1.0f64) {
        let mut l = LossBreakdown {
            cyc_w: parts[0], cyc_c: parts[1], adv_fwd: parts[2], adv_rev: parts[3],
            identity: parts[4], p_fwd: parts[5], p_rev: parts[6], total: 0.0,
        };
        l.assemble(lambda);
        let want = parts[..5].iter().sum::<f64>() + lambda * (parts[5] + parts[6]);
        prop_assert!((l.total - want).abs() < 1e-12 * want.max(1.0));
        prop_assert_eq!(l.cycle_gan() + lambda * (l.p_fwd + l.p_rev), l.total);
    }
}

fn small_arch(residual: bool) -> GeneratorArch {
    GeneratorArch {
        input_len: 9,
        hidden: vec![6, 5, 4, 6],
        tap_s: 1,
        tap_z: 2,
        residual,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_backward_matches_differences(seed in any::<u64>(), x in prop::collection::vec(0.0..1.0f64, 9), residual in any::<bool>()) {
        let mut g = Generator::new(small_arch(residual), seed).unwrap();
        g.mlp_mut().init_uniform(seed ^ 1);
        let wy: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) / 5.0).collect();
        let ws: Vec<f64> = (0..5).map(|i| 0.3 - 0.1 * i as f64).collect();
        let wz: Vec<f64> = (0..4).map(|i| 0.2 * i as f64 - 0.25).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let objective = |g: &Generator, x: &[f64]| {
            let o = g.forward(x).unwrap();
            dot(&o.y, &wy) + dot(&o.s, &ws) + dot(&o.z, &wz)
        };
        let out = g.forward(&x).unwrap();
        g.mlp_mut().zero_grads();
        let gx = g.backward(&out.cache, &wy, Some(&ws), Some(&wz)).unwrap();
        let fd_x = central_difference(|p| objective(&g, p), &x, 1e-6);
        prop_assert!(relative_error(&gx, &fd_x, 1e-6) < 1e-6);
        let params = g.mlp().params().to_vec();
        let fd_p = central_difference(|p| {
            let mut h = g.clone();
            h.mlp_mut().params_mut().copy_from_slice(p);
            objective(&h, &x)
        }, &params, 1e-6);
        prop_assert!(relative_error(g.mlp().grads(), &fd_p, 1e-6) < 1e-6);
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient(seed in any::<u64>(), x in prop::collection::vec(0.0..1.0f64, 9), a in -2.0..2.0f64) {
        let mut g = Generator::new(small_arch(false), seed).unwrap();
        g.mlp_mut().init_uniform(seed);
        let out = g.forward(&x).unwrap();
        let u: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let v: Vec<f64> = (0..9).map(|i| (i as f64).cos()).collect();
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + q).collect();
        let gu = g.backward(&out.cache, &u, None, None).unwrap();
        let gv = g.backward(&out.cache, &v, None, None).unwrap();
        let gm = g.backward(&out.cache, &mixed, None, None).unwrap();
        let want: Vec<f64> = gu.iter().zip(&gv).map(|(p, q)| a * p + q).collect();
        prop_assert!(relative_error(&gm, &want, 1e-9) < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), step in any::<u64>()) {
        let g = Generator::new(small_arch(true), seed).unwrap();
        let d = Discriminator::new(9, &[3], seed ^ 7).unwrap();
        let ck = Checkpoint { step, networks: vec![Network::Generator(g.clone()), Network::Discriminator(d.clone())] };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.step, step);
        let g2 = back.generator(0).unwrap();
        prop_assert_eq!(g2.arch(), g.arch());
        prop_assert_eq!(g2.mlp().params(), g.mlp().params());
        prop_assert_eq!(back.discriminator(0).unwrap().mlp().params(), d.mlp().params());
        let x = vec![0.5; 9];
        prop_assert_eq!(g2.forward(&x).unwrap().y, g.forward(&x).unwrap().y);
    }
}

fn tiny_run(seed: u64) -> (Vec<f64>, f64) {
    let data = UnpairedDataset::generate(&DatasetSpec {
        train_per_domain: 6,
        test_pairs: 2,
        width: 12,
        height: 12,
        seed: 3,
        ..DatasetSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 2,
        seed,
        n_neighbors: 4,
        kernel: KernelSpec::composed(KernelFamily::Se, 2, 1.0, 0.01),
        gen_hidden: vec![8, 6, 4, 8],
        disc_hidden: vec![4],
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config, 144).unwrap();
    let mut total = 0.0;
    for _ in 0..2 {
        total += t.run_epoch(&data).unwrap().losses.total;
    }
    (t.model.flat_params(), total)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_is_deterministic_per_seed(seed in 0u64..1000) {
        let a = tiny_run(seed);
        let b = tiny_run(seed);
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());
        prop_assert!(a.1.is_finite());
    }
}
