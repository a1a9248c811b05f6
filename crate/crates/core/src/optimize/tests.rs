use super::*;
use crate::corrections::{DirectionalCnn, ForceMode};
use crate::mesh::StructuredMesh;
use crate::plants::{BoundaryCondition, BoundarySpec, PlantConfig};
use crate::solver::{newton_solve, state_inner};
use crate::util::{random_vec, seeded};

fn scalar_plant(n: usize) -> Plant {
    let mut cfg = PlantConfig::default();
    cfg.scalar.manufactured = true;
    Plant::new(
        PlantKind::Scalar,
        cfg,
        StructuredMesh::build_cartesian(n, n, 1.0, 1.0, 1.0).unwrap(),
        BoundarySpec::uniform(BoundaryCondition::Dirichlet { value: 0.0 }),
    )
    .unwrap()
}

fn channel(kind: PlantKind, ni: usize, nj: usize) -> Plant {
    let cfg = PlantConfig::default();
    let bc = BoundarySpec::channel(&cfg, 0.0, 1.0);
    Plant::new(kind, cfg, StructuredMesh::build_bump_channel(ni, nj, 0.1, 0.3).unwrap(), bc).unwrap()
}

fn perturbed(plant: &Plant, seed: u64) -> StateVector {
    let mut w = plant.uniform_state();
    for (x, e) in w.data.iter_mut().zip(random_vec(&mut seeded(seed), plant.layout.len())) {
        *x *= 1.0 + 0.02 * e;
    }
    w
}

#[test]
fn observation_adjoint_matches_finite_differences() {
    let plant = channel(PlantKind::Ns, 6, 4);
    let h = ObservationOp::velocities(&plant).unwrap();
    let w = perturbed(&plant, 1);
    let mut rng = seeded(2);
    let ybar = random_vec(&mut rng, h.len());
    let v = random_vec(&mut rng, w.data.len());
    let adj = h.adjoint(&plant, &w.data, &ybar);
    let eps = 1e-6;
    let wp: Vec<f64> = w.data.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
    let wm: Vec<f64> = w.data.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
    let (hp, hm) = (h.apply(&plant, &wp), h.apply(&plant, &wm));
    let fd: f64 = hp.iter().zip(&hm).zip(&ybar).map(|((a, b), y)| (a - b) / (2.0 * eps) * y).sum();
    let an: f64 = adj.iter().zip(&v).map(|(a, b)| a * b).sum();
    assert!((fd - an).abs() <= 1e-8 * an.abs());
}

#[test]
fn observations_must_lie_in_the_interior() {
    let plant = channel(PlantKind::Ns, 6, 4);
    let bad = vec![Observation { var: ObsVar::VelocityX, i: 6, j: 0 }];
    assert!(ObservationOp::new(&plant, bad).is_err());
    let scalar = scalar_plant(4);
    let vel = vec![Observation { var: ObsVar::VelocityX, i: 0, j: 0 }];
    assert!(ObservationOp::new(&scalar, vel).is_err());
}

#[test]
fn full_state_gradient_has_the_closed_form_on_the_linear_plant() {
    let plant = scalar_plant(6);
    let theta = random_vec(&mut seeded(3), 36);
    let model = CorrectionModel::field(&plant, ForceMode::ScalarSource, theta.clone()).unwrap();
    let w_m = perturbed(&plant, 4);
    let w_m = plant.state_from_interior(&w_m.interior()).unwrap();
    let q = state_inner(&plant);
    let (_, g) = full_state_loss_and_grad(&plant, &model, &w_m, &q, 0.0).unwrap();
    let r = crate::plants::full::interior_residual(&plant, &w_m.data).unwrap();
    let vols = plant.cell_volumes();
    for k in 0..36 {
        let want = 2.0 * vols[k] * (r[k] + theta[k]) / vols[k].sqrt();
        assert!((g[k] - want).abs() <= 1e-12 * want.abs().max(1e-12), "{k}: {} vs {want}", g[k]);
    }
}

#[test]
fn full_state_loss_vanishes_at_the_truth() {
    let plant = scalar_plant(6);
    let theta = random_vec(&mut seeded(5), 36);
    let model = CorrectionModel::field(&plant, ForceMode::ScalarSource, theta).unwrap();
    let w_m = newton_solve(&plant, &model, &plant.uniform_state(), &crate::solver::NewtonConfig::default())
        .unwrap()
        .state;
    let (j, g) = full_state_loss_and_grad(&plant, &model, &w_m, &state_inner(&plant), 0.0).unwrap();
    assert!(j <= 1e-24, "{j}");
    assert!(g.iter().all(|x| x.abs() <= 1e-11));
}

#[test]
fn network_full_state_gradient_matches_finite_differences() {
    let plant = channel(PlantKind::Ns, 8, 6);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 4).unwrap();
    let mut net = net;
    net.output_scale = plant.config.mu();
    let model = CorrectionModel::cnn(&plant, ForceMode::MuT, net, None).unwrap();
    let w_m = perturbed(&plant, 6);
    let q = state_inner(&plant);
    let f = |th: &[f64]| full_state_loss(&plant, &model.with_theta(th.to_vec()).unwrap(), &w_m, &q, 0.0);
    let report = fd_gradient_check(f, &model.theta, 5, &[1e-2, 1e-3, 1e-4], 8).unwrap();
    assert!(report.passes(1e-5), "{report:?}");
}

#[test]
fn explicit_scalar_gradient_passes_the_fd_check() {
    let plant = scalar_plant(6);
    let truth = CorrectionModel::field(&plant, ForceMode::ScalarSource, random_vec(&mut seeded(9), 36)).unwrap();
    let w_m = newton_solve(&plant, &truth, &plant.uniform_state(), &crate::solver::NewtonConfig::default())
        .unwrap()
        .state;
    let theta: Vec<f64> = truth.theta.iter().zip(random_vec(&mut seeded(10), 36)).map(|(t, e)| t + 0.01 * e).collect();
    let q = state_inner(&plant);
    let f = |th: &[f64]| full_state_loss(&plant, &truth.with_theta(th.to_vec()).unwrap(), &w_m, &q, 0.0);
    let report = fd_gradient_check(f, &theta, 5, &[1e-6], 1).unwrap();
    assert!(report.max_rel_error <= 1e-8, "{report:?}");
}

fn beta_setup() -> (Plant, CorrectionModel, PartialObjective, NewtonConfig) {
    let plant = channel(PlantKind::NsSa, 8, 4);
    let cfg = NewtonConfig::default();
    let truth = CorrectionModel::field(&plant, ForceMode::Beta, vec![0.6; 32]).unwrap();
    let w = newton_solve(&plant, &truth, &plant.uniform_state(), &cfg).unwrap().state;
    let h = ObservationOp::velocities(&plant).unwrap();
    let y = h.apply(&plant, &w.data);
    let obj = PartialObjective::volume_weighted(&plant, h, y).unwrap();
    let model = CorrectionModel::field(&plant, ForceMode::Beta, vec![0.0; 32]).unwrap();
    (plant, model, obj, cfg)
}

#[test]
fn stationary_observations_give_zero_gradient() {
    let (plant, model, obj, cfg) = beta_setup();
    let w = newton_solve(&plant, &model, &plant.uniform_state(), &cfg).unwrap().state;
    let y = obj.h.apply(&plant, &w.data);
    let obj = PartialObjective::new(obj.h.clone(), y, obj.q.clone()).unwrap();
    let (j, g) = implicit_loss_and_grad(&plant, &model, &obj, &plant.uniform_state(), &cfg, 0.0).unwrap();
    assert!(j <= 1e-28);
    assert!(g.iter().all(|x| x.abs() <= 1e-13), "{g:?}");
}

#[test]
fn implicit_loss_is_homogeneous_in_the_weights() {
    let (plant, model, obj, cfg) = beta_setup();
    let tripled = PartialObjective::new(obj.h.clone(), obj.y.clone(), obj.q.iter().map(|q| 3.0 * q).collect()).unwrap();
    let w0 = plant.uniform_state();
    let (j1, g1) = implicit_loss_and_grad(&plant, &model, &obj, &w0, &cfg, 0.0).unwrap();
    let (j3, g3) = implicit_loss_and_grad(&plant, &model, &tripled, &w0, &cfg, 0.0).unwrap();
    assert!((j3 - 3.0 * j1).abs() <= 1e-14 * j3);
    for (a, b) in g1.iter().zip(&g3) {
        assert!((b - 3.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }
}

#[test]
fn implicit_beta_gradient_matches_finite_differences() {
    let (plant, model, obj, cfg) = beta_setup();
    let w0 = plant.uniform_state();
    let f = |th: &[f64]| {
        let e = implicit_loss(&plant, &model.with_theta(th.to_vec()).unwrap(), &obj, &w0, &cfg, 0.0)?;
        Ok((e.loss, e.grad))
    };
    let report = fd_gradient_check(f, &model.theta, 5, &[1e-4, 1e-5], 2).unwrap();
    assert!(report.passes(1e-5), "{report:?}");
}

#[test]
fn reparametrization_examples() {
    let id = Reparam::new(&InnerProduct::identity(3));
    assert_eq!(id.to_tilde(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);

    let m4 = Reparam::new(&InnerProduct::new(vec![4.0]).unwrap());
    let (eta, g_tilde) = (0.1, 0.8);
    let theta = [1.0];
    let tilde = m4.to_tilde(&theta);
    let stepped = m4.from_tilde(&[tilde[0] - eta * g_tilde]);
    assert!((stepped[0] - (1.0 - eta * g_tilde / 2.0)).abs() <= 1e-15);

    let mut rng = seeded(3);
    let w: Vec<f64> = random_vec(&mut rng, 50).iter().map(|x| 1.5 + x).collect();
    let r = Reparam::new(&InnerProduct::new(w).unwrap());
    let th = random_vec(&mut rng, 50);
    let back = r.from_tilde(&r.to_tilde(&th));
    for (a, b) in th.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-15 * a.abs());
    }
}

#[test]
fn one_step_in_tilde_equals_preconditioned_step() {
    let mut rng = seeded(21);
    for _ in 0..5 {
        let m: Vec<f64> = random_vec(&mut rng, 20).iter().map(|x| 0.1 + 2.0 * (x + 1.0)).collect();
        let r = Reparam::new(&InnerProduct::new(m).unwrap());
        let theta = random_vec(&mut rng, 20);
        let g = random_vec(&mut rng, 20);
        let eta = 0.3;
        let gt = r.grad_tilde(&g);
        let tilde: Vec<f64> = r.to_tilde(&theta).iter().zip(&gt).map(|(t, g)| t - eta * g).collect();
        let via_tilde = r.from_tilde(&tilde);
        let pre = r.m_gradient(&g);
        for k in 0..20 {
            let direct = theta[k] - eta * pre[k];
            assert!((via_tilde[k] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}

fn bowl(a: &[f64]) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
    move |x: &[f64]| {
        let d: Vec<f64> = x.iter().zip(a).map(|(x, a)| x - a).collect();
        Ok((0.5 * d.iter().map(|v| v * v).sum::<f64>(), d))
    }
}

#[test]
fn lbfgs_solves_the_quadratic_bowl() {
    let a = random_vec(&mut seeded(1), 12);
    let cfg = OptimizerConfig { tol: 0.0, max_iters: 10, grad_tol: 1e-14, ..OptimizerConfig::default() };
    let res = run_optimizer(bowl(&a), &[0.0; 12], &cfg).unwrap();
    for (x, y) in res.theta.iter().zip(&a) {
        assert!((x - y).abs() <= 1e-10);
    }
    assert!(res.history.len() <= 11);
}

#[test]
fn gradient_descent_decays_geometrically() {
    let a = random_vec(&mut seeded(2), 5);
    let cfg = OptimizerConfig {
        kind: OptimizerKind::GradientDescent,
        step: 0.5,
        line_search: false,
        tol: 0.0,
        max_iters: 8,
        ..OptimizerConfig::default()
    };
    let res = run_optimizer(bowl(&a), &[0.0; 5], &cfg).unwrap();
    let j0 = res.history[0].loss;
    for h in &res.history {
        let want = j0 * 0.25f64.powi(h.iter as i32);
        assert!((h.loss - want).abs() <= 1e-14 * j0);
    }
}

fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (a, b) = (x[0], x[1]);
    let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    Ok((f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
}

#[test]
fn lbfgs_minimizes_rosenbrock() {
    let cfg = OptimizerConfig { tol: 0.0, max_iters: 200, grad_tol: 1e-12, ..OptimizerConfig::default() };
    let res = run_optimizer(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
    assert!(res.loss <= 1e-8, "{} after {}", res.loss, res.history.len());
}

#[test]
fn optimizer_is_deterministic() {
    let cfg = OptimizerConfig { tol: 0.0, max_iters: 40, ..OptimizerConfig::default() };
    let a = run_optimizer(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
    let b = run_optimizer(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_batch_minibatch_reduces_to_full_batch() {
    let targets: Vec<Vec<f64>> = (0..4).map(|s| random_vec(&mut seeded(s), 6)).collect();
    let sample = |x: &[f64], s: usize| -> (f64, Vec<f64>) {
        let d: Vec<f64> = x.iter().zip(&targets[s]).map(|(x, a)| (x - a) * (1.0 + s as f64)).collect();
        let g: Vec<f64> = d.iter().map(|v| v * (1.0 + s as f64)).collect();
        (0.5 * d.iter().map(|v| v * v).sum::<f64>() + x[0].powi(4), {
            let mut g = g;
            g[0] += 4.0 * x[0].powi(3);
            g
        })
    };
    let batch = |x: &[f64], idx: &[usize]| -> Result<(f64, Vec<f64>)> {
        let mut j = 0.0;
        let mut g = vec![0.0; x.len()];
        for &s in idx {
            let (js, gs) = sample(x, s);
            j += js;
            for (a, b) in g.iter_mut().zip(gs) {
                *a += b;
            }
        }
        Ok((j, g))
    };
    let cfg = OptimizerConfig { tol: 0.0, max_iters: 15, ..OptimizerConfig::default() };
    let mb = run_minibatch(batch, 4, 4, &[0.0; 6], &cfg, 7).unwrap();
    let fb = run_optimizer(|x| batch(x, &[0, 1, 2, 3]), &[0.0; 6], &cfg).unwrap();
    assert_eq!(mb, fb);

    let split = run_minibatch(batch, 4, 2, &[0.0; 6], &OptimizerConfig { max_iters: 60, ..cfg }, 7).unwrap();
    assert!(split.history.last().unwrap().loss < split.history[0].loss);
}

#[test]
fn fd_check_is_exact_on_a_linear_loss() {
    let c = random_vec(&mut seeded(4), 10);
    let f = |x: &[f64]| Ok((x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>(), c.clone()));
    let report = fd_gradient_check(f, &[0.25; 10], 5, &[1e-2, 1e-4], 3).unwrap();
    assert_eq!(report.entries.len(), 5);
    assert!(report.max_rel_error <= 1e-10, "{report:?}");
}

#[test]
fn loss_csv_has_the_documented_columns() {
    let mut buf = Vec::new();
    write_loss_csv(
        &[LossRecord { iter: 0, loss: 1.0, normalized_loss: 1.0, grad_norm: 2.0, step_size: 0.0 }],
        &mut buf,
    )
    .unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("iter,loss,normalized_loss,grad_norm,step_size\n"));
}
