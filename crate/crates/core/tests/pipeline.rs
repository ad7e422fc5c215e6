use htlr::bench::{random_input, sample_seed, uniform_error};
use htlr::grid::{AdmissibilityRule, UniformGrid};
use htlr::htlr::{construct, construct_hmatrix, sampled_rel_error, BuildConfig, DEFAULT_SAMPLE_SIZE};
use htlr::kernel::{CoefficientFn, KernelSpec};
use htlr::oracle::{dense_assemble, rel_fro_error, DirectRows};
use htlr::quasi::{apply_pipeline, sample_input, structured_trimesh, QuasiDirect, QuasiPipeline};

fn gaussian_cfg() -> BuildConfig {
    BuildConfig::new(KernelSpec::from_name("gaussian", 2).unwrap(), 8, 16 * 16, AdmissibilityRule::Weak)
}

fn quasi_full_error(k: usize, rho: f64, u: Option<Vec<f64>>) -> f64 {
    let mesh = structured_trimesh(k).unwrap();
    let cfg = gaussian_cfg();
    let pipe = QuasiPipeline::build(&mesh, rho, &cfg).unwrap();
    let u = u.unwrap_or_else(|| sample_input(&mesh));
    let f = apply_pipeline(&pipe, &u).unwrap();
    let oracle = QuasiDirect::new(&mesh, &cfg.kernel, &cfg.coeff, &cfg.quadrature).unwrap();
    sampled_rel_error(&f, &oracle, &u, mesh.len(), 0).unwrap()
}

#[test]
fn constant_input_through_the_pipeline() {
    let k = 32;
    let e = quasi_full_error(k, 2.0, Some(vec![1.0; 2 * k * k]));
    assert!(e < 1e-3, "constant input error {e:e}");
}

#[test]
fn aligned_rho_one_is_dominated_by_transfer_error() {
    // rho = 1 on an aligned mesh: the auxiliary grid has one cell per mesh square
    let k = 64;
    let quasi = quasi_full_error(k, 1.0, None);
    let op = construct(&gaussian_cfg(), &UniformGrid::new(2, k).unwrap()).unwrap();
    let pure = uniform_error(&op, 3, op.size()).unwrap();
    assert!(quasi > 100.0 * pure, "quasi {quasi:e} vs uniform {pure:e}");
}

#[test]
fn parallel_matvec_is_reproducible_and_agrees() {
    let op = construct(&gaussian_cfg(), &UniformGrid::new(2, 64).unwrap()).unwrap();
    let u = random_input(op.size(), 11);
    let a = op.par_matvec(&u).unwrap();
    let b = op.par_matvec(&u).unwrap();
    assert_eq!(a, b);
    let serial = op.matvec(&u).unwrap();
    assert!(rel_fro_error(&a, &serial).unwrap() < 1e-14);
}

#[test]
fn weak_htlr_storage_respects_bound_in_2d() {
    for (n, p, leaf) in [(32, 4, 8), (64, 8, 16), (128, 4, 8), (128, 8, 16)] {
        let cfg = BuildConfig::new(KernelSpec::from_name("gaussian", 2).unwrap(), p, leaf * leaf, AdmissibilityRule::Weak);
        let r = construct(&cfg, &UniformGrid::new(2, n).unwrap()).unwrap().storage_report();
        assert_eq!(r.within_bound(), Some(true), "n={n} p={p}: {r:?}");
    }
}

#[test]
fn hmatrix_baseline_matches_dense_operator() {
    let cfg = BuildConfig::new(KernelSpec::slp2d(), 8, 8 * 8, AdmissibilityRule::strong(2f64.sqrt()).unwrap())
        .with_coeff(CoefficientFn::Constant(1.0));
    let grid = UniformGrid::new(2, 32).unwrap();
    let h = construct_hmatrix(&cfg, &grid).unwrap();
    let t = construct(&cfg, &grid).unwrap();
    let dense = dense_assemble(&cfg.kernel, &cfg.coeff, &grid, &cfg.quadrature).unwrap();
    let u = random_input(h.size(), 5);
    let exact = dense.matvec(&u).unwrap();
    assert!(rel_fro_error(&h.matvec(&u).unwrap(), &exact).unwrap() < 1e-6);
    assert!(rel_fro_error(&t.matvec(&u).unwrap(), &exact).unwrap() < 1e-6);
    assert!(h.storage_report().theoretical_bound.is_none());
}

#[test]
fn sampled_error_tracks_full_error() {
    let op = construct(&gaussian_cfg(), &UniformGrid::new(2, 64).unwrap()).unwrap();
    let u = random_input(op.size(), 2);
    let f = op.matvec(&u).unwrap();
    let oracle = DirectRows::new(op.nystrom().clone());
    let full = rel_fro_error(&f, &oracle.matvec(&u).unwrap()).unwrap();
    let sampled = sampled_rel_error(&f, &oracle, &u, DEFAULT_SAMPLE_SIZE, sample_seed(2)).unwrap();
    assert!(sampled / full > 0.1 && sampled / full < 10.0, "sampled {sampled:e} full {full:e}");
}
