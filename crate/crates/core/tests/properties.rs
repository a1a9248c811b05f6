//! Randomized invariants of the geometry, operators, correction models and
//! optimization layer.

use proptest::prelude::*;

use hybridfv::corrections::{CorrectionModel, DirectionalCnn, ForceMode};
use hybridfv::harness::{rank_correlation, ExperimentConfig};
use hybridfv::linalg::{dot_test, linearity_defect, lu_solve, transpose_solve, AdOp, InnerProduct, SparseOperator};
use hybridfv::mesh::StructuredMesh;
use hybridfv::optimize::{run_optimizer, OptimizerConfig, OptimizerKind, Reparam};
use hybridfv::plants::full::{ForceKernel, ResidualKernel};
use hybridfv::plants::io::Field;
use hybridfv::plants::{BoundaryCondition, BoundarySpec, FullResidualOp, Plant, PlantConfig, PlantKind};
use hybridfv::util::{random_vec, seeded};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn channel(kind: PlantKind, ni: usize, nj: usize) -> Plant {
    let cfg = PlantConfig::default();
    let bc = BoundarySpec::channel(&cfg, 0.0, 1.0);
    Plant::new(kind, cfg, StructuredMesh::build_bump_channel(ni, nj, 0.1, 0.3).unwrap(), bc).unwrap()
}

fn near_freestream(plant: &Plant, seed: u64) -> Vec<f64> {
    let r = random_vec(&mut seeded(seed), plant.layout.len());
    let m = plant.m();
    let mut w = plant.uniform_state().data;
    for (k, x) in w.iter_mut().enumerate() {
        if k % m == 2 {
            *x += 0.01 * r[k];
        } else {
            *x *= 1.0 + 0.01 * r[k];
        }
    }
    w
}

fn check_closed(mesh: &StructuredMesh) -> Result<(), TestCaseError> {
    for i in 0..mesh.ni {
        for j in 0..mesh.nj {
            prop_assert!(mesh.volume(i, j) > 0.0);
            let (s, perimeter) = mesh.closure_defect(i, j);
            prop_assert!(s[0].hypot(s[1]) <= 1e-13 * perimeter);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn cartesian_cells_are_closed_and_tile_the_box(
        ni in 2usize..12, nj in 2usize..12,
        lx in 0.1f64..10.0, ly in 0.1f64..10.0, stretch in 1.0f64..1.25,
    ) {
        let mesh = StructuredMesh::build_cartesian(ni, nj, lx, ly, stretch).unwrap();
        check_closed(&mesh)?;
        prop_assert!((mesh.total_volume() - lx * ly).abs() <= 1e-12 * lx * ly);
    }

    #[test]
    fn bump_channel_cells_are_closed(
        ni in 4usize..20, nj in 2usize..10, h in 0.0f64..0.2, width in 0.1f64..0.5,
    ) {
        let mesh = StructuredMesh::build_bump_channel(ni, nj, h, width).unwrap();
        check_closed(&mesh)?;
        let gg = mesh.ghost_geometry();
        prop_assert!(gg.volumes().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn mesh_text_round_trip_is_exact(ni in 2usize..8, nj in 2usize..8, h in 0.0f64..0.2) {
        let mesh = StructuredMesh::build_bump_channel(ni, nj, h, 0.3).unwrap();
        let mut buf = Vec::new();
        mesh.write_to(&mut buf).unwrap();
        let back = StructuredMesh::read_from(&buf[..]).unwrap();
        prop_assert_eq!(back.nodes(), mesh.nodes());
    }

    #[test]
    fn field_text_round_trip_is_exact(seed in any::<u64>(), ni in 1usize..6, nj in 1usize..6) {
        let values: Vec<f64> = random_vec(&mut seeded(seed), ni * nj * 2).iter().map(|x| x * 1e3f64.powf(*x)).collect();
        let f = Field::new(ni, nj, &["a", "b"], values).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        prop_assert_eq!(Field::read_from(&buf[..]).unwrap(), f);
    }

    #[test]
    fn residual_and_full_composition_pass_the_dot_test(seed in any::<u64>()) {
        let plant = channel(PlantKind::NsSa, 5, 3);
        let w = near_freestream(&plant, seed);
        let mut rng = seeded(seed ^ 0x5a5a);
        let model = CorrectionModel::field(&plant, ForceMode::Beta, random_vec(&mut rng, 15)).unwrap();
        let full = FullResidualOp::new(&plant, &model);
        let res = AdOp(ResidualKernel(&plant));
        let v = random_vec(&mut rng, w.len());
        prop_assert!(dot_test(&full, &w, &v, &random_vec(&mut rng, w.len())).unwrap() <= 1e-10);
        prop_assert!(dot_test(&res, &w, &v, &random_vec(&mut rng, 15 * 5)).unwrap() <= 1e-10);
    }

    #[test]
    fn production_forcing_is_linear_in_alpha(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let plant = channel(PlantKind::NsSa, 5, 3);
        let w = near_freestream(&plant, seed);
        let n = w.len();
        let op = AdOp(ForceKernel { plant: &plant, mode: ForceMode::Beta });
        let mut x = w;
        x.extend(vec![0.7; 15]);
        let mut rng = seeded(seed.wrapping_add(1));
        // directions that move alpha only
        let dir = |rng: &mut _| {
            let mut d = vec![0.0; n];
            d.extend(random_vec(rng, 15));
            d
        };
        let (v1, v2) = (dir(&mut rng), dir(&mut rng));
        prop_assert!(linearity_defect(&op, &x, &v1, &v2, a, b).unwrap() <= 1e-13);
    }

    #[test]
    fn network_is_transpose_equivariant(seed in any::<u64>()) {
        let mesh = StructuredMesh::build_cartesian(5, 4, 1.0, 0.8, 1.0).unwrap();
        let far = BoundarySpec::uniform(BoundaryCondition::FarField);
        let plant = Plant::new(PlantKind::Ns, PlantConfig::default(), mesh.clone(), far.clone()).unwrap();
        let plant_t = Plant::new(PlantKind::Ns, PlantConfig::default(), mesh.transposed(), far).unwrap();
        let net = DirectionalCnn::new(&plant, 3, 3, true, seed).unwrap();
        let model = CorrectionModel::cnn(&plant, ForceMode::MuT, net.clone(), None).unwrap();
        let model_t = CorrectionModel::cnn(&plant_t, ForceMode::MuT, net, Some(model.theta.clone())).unwrap();
        let w = near_freestream(&plant, seed);
        let (l, lt) = (plant.layout, plant_t.layout);
        let mut wt = plant_t.uniform_state();
        for a in 0..l.ext_ni() {
            for b in 0..l.ext_nj() {
                for v in 0..l.m {
                    wt.data[lt.idx(b, a, v)] = w[l.idx(a, b, v)];
                }
            }
        }
        let ws = hybridfv::plants::StateVector::new(plant.kind, l, w).unwrap();
        let alpha = model.alpha(&plant, &ws).unwrap();
        let alpha_t = model_t.alpha(&plant_t, &wt).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let (x, y) = (alpha[i * 4 + j], alpha_t[j * 5 + i]);
                prop_assert!((x - y).abs() <= 1e-14 * x.abs());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>()) {
        let plant = channel(PlantKind::NsSa, 5, 3);
        let net = DirectionalCnn::new(&plant, 3, 3, false, seed).unwrap();
        let theta = net.init_params();
        let mut buf = Vec::new();
        net.write_checkpoint(&theta, &mut buf).unwrap();
        let (back, th) = DirectionalCnn::read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(back, net);
        prop_assert_eq!(th, theta);
    }

    #[test]
    fn banded_lu_solves_both_systems(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = seeded(seed);
        let mut trip = Vec::new();
        for r in 0..n {
            let off = random_vec(&mut rng, 3);
            trip.push((r, r, 4.0 + off[0]));
            if r + 1 < n {
                trip.push((r, r + 1, off[1]));
            }
            if r >= 3 {
                trip.push((r, r - 3, off[2]));
            }
        }
        let a = SparseOperator::from_triplets(n, &trip).unwrap();
        let b = random_vec(&mut rng, n);
        let x = lu_solve(&a, &b).unwrap();
        let ax = a.matvec(&x).unwrap();
        prop_assert!(ax.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12));
        let y = transpose_solve(&a, &b).unwrap();
        let aty = a.matvec_transpose(&y).unwrap();
        prop_assert!(aty.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12));
        prop_assert_eq!(lu_solve(&a, &b).unwrap(), x);
    }

    #[test]
    fn reparametrized_step_is_the_preconditioned_step(seed in any::<u64>(), eta in 0.01f64..1.0) {
        let mut rng = seeded(seed);
        let m: Vec<f64> = random_vec(&mut rng, 12).iter().map(|x| 10f64.powf(1.5 * x)).collect();
        let theta0 = random_vec(&mut rng, 12);
        let loss = |th: &[f64]| Ok((th.iter().map(|t| t.powi(4)).sum::<f64>(), th.iter().map(|t| 4.0 * t.powi(3)).collect()));
        let rp = Reparam::new(&InnerProduct::new(m.clone()).unwrap());
        prop_assert!(rp.from_tilde(&rp.to_tilde(&theta0)).iter().zip(&theta0).all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs().max(1.0)));
        let opt = OptimizerConfig {
            kind: OptimizerKind::GradientDescent,
            step: eta,
            line_search: false,
            max_iters: 1,
            tol: 0.0,
            ..OptimizerConfig::default()
        };
        let res = run_optimizer(rp.wrap(loss), &rp.to_tilde(&theta0), &opt).unwrap();
        let got = rp.from_tilde(&res.theta);
        for ((g, t), mk) in got.iter().zip(&theta0).zip(&m) {
            let want = t - eta * 4.0 * t.powi(3) / mk;
            prop_assert!((g - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn optimizer_runs_are_reproducible(seed in any::<u64>()) {
        let c = random_vec(&mut seeded(seed), 6);
        let f = |th: &[f64]| {
            let j = th.iter().zip(&c).map(|(t, c)| (t - c).powi(2) * (1.0 + t * t)).sum::<f64>();
            let g = th.iter().zip(&c).map(|(t, c)| 2.0 * (t - c) * (1.0 + t * t) + 2.0 * t * (t - c).powi(2)).collect();
            Ok((j, g))
        };
        let opt = OptimizerConfig { max_iters: 20, ..OptimizerConfig::default() };
        let a = run_optimizer(f, &[0.0; 6], &opt).unwrap();
        let b = run_optimizer(f, &[0.0; 6], &opt).unwrap();
        prop_assert_eq!(a.theta, b.theta);
        prop_assert!(a.loss <= a.history[0].loss);
    }

    #[test]
    fn rank_correlation_is_bounded_symmetric_and_monotone_invariant(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = seeded(seed);
        let (a, b) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let r = rank_correlation(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((r - rank_correlation(&b, &a)).abs() <= 1e-14);
        let cubed: Vec<f64> = a.iter().map(|x| x.powi(3) + 5.0).collect();
        prop_assert!((r - rank_correlation(&cubed, &b)).abs() <= 1e-14);
    }

    #[test]
    fn config_survives_a_toml_round_trip(seed in 0u64..=i64::MAX as u64, ni in 2usize..64, gamma in 0.0f64..1.0) {
        let text = format!("seed = {seed}\nplant = \"ns\"\n[mesh]\nkind = \"bump_channel\"\nni = {ni}\nnj = 4\n[objective]\ngamma = {gamma:e}\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        prop_assert_eq!(back, cfg);
    }
}
