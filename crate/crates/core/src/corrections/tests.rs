use super::*;
use crate::mesh::StructuredMesh;
use crate::plants::full::full_jacobian;
use crate::plants::{BoundaryCondition, BoundarySpec, PlantConfig};
use crate::util::{random_vec, seeded};

fn plant_on(kind: PlantKind, mesh: StructuredMesh, radius: usize) -> Plant {
    let cfg = PlantConfig {
        stencil_radius: radius,
        ..PlantConfig::default()
    };
    Plant::new(kind, cfg, mesh, BoundarySpec::uniform(BoundaryCondition::FarField)).unwrap()
}

fn ns_plant(ni: usize, nj: usize) -> Plant {
    plant_on(PlantKind::Ns, StructuredMesh::build_bump_channel(ni, nj, 0.1, 0.3).unwrap(), 2)
}

fn random_state(plant: &Plant, seed: u64) -> StateVector {
    let mut w = plant.uniform_state();
    let r = random_vec(&mut seeded(seed), w.data.len());
    for (x, e) in w.data.iter_mut().zip(r) {
        *x += 0.05 * e;
    }
    w
}

#[test]
fn field_with_zero_theta_gives_zero_alpha() {
    let plant = ns_plant(6, 4);
    let m = CorrectionModel::field(&plant, ForceMode::MuT, vec![0.0; 24]).unwrap();
    assert!(m.alpha(&plant, &plant.uniform_state()).unwrap().iter().all(|a| *a == 0.0));
    assert_eq!(m.param_inner.weights(), plant.cell_volumes());
}

#[test]
fn field_gradient_is_the_incoming_cotangent() {
    let plant = ns_plant(6, 4);
    let m = CorrectionModel::field(&plant, ForceMode::MuT, vec![0.1; 24]).unwrap();
    let bar = random_vec(&mut seeded(1), 24);
    let (gt, gw) = m.param_gradient_via_chain(&plant, &plant.uniform_state(), &bar).unwrap();
    assert_eq!(gt, bar);
    assert!(gw.iter().all(|x| *x == 0.0));
}

#[test]
fn mode_must_match_plant() {
    let plant = ns_plant(6, 4);
    assert!(CorrectionModel::field(&plant, ForceMode::Beta, vec![0.0; 24]).is_err());
}

#[test]
fn zero_network_gives_ln2_under_the_gate() {
    let plant = ns_plant(6, 4);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 0).unwrap();
    let m = CorrectionModel::cnn(&plant, ForceMode::MuT, net.clone(), Some(vec![0.0; net.n_params()])).unwrap();
    let a = m.alpha(&plant, &random_state(&plant, 3)).unwrap();
    assert_eq!(a.len(), 24);
    for x in a {
        assert!((x - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn network_is_transpose_equivariant() {
    let mesh = StructuredMesh::build_bump_channel(6, 4, 0.1, 0.3).unwrap();
    let plant = plant_on(PlantKind::Ns, mesh.clone(), 2);
    let plant_t = plant_on(PlantKind::Ns, mesh.transposed(), 2);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 42).unwrap();
    let model = CorrectionModel::cnn(&plant, ForceMode::MuT, net.clone(), None).unwrap();
    let model_t = CorrectionModel::cnn(&plant_t, ForceMode::MuT, net, Some(model.theta.clone())).unwrap();

    let w = random_state(&plant, 5);
    let (l, lt) = (plant.layout, plant_t.layout);
    let mut wt = plant_t.uniform_state();
    for a in 0..l.ext_ni() {
        for b in 0..l.ext_nj() {
            for v in 0..l.m {
                wt.data[lt.idx(b, a, v)] = w.data[l.idx(a, b, v)];
            }
        }
    }
    let alpha = model.alpha(&plant, &w).unwrap();
    let alpha_t = model_t.alpha(&plant_t, &wt).unwrap();
    for i in 0..6 {
        for j in 0..4 {
            let (x, y) = (alpha[i * 4 + j], alpha_t[j * 6 + i]);
            assert!((x - y).abs() <= 1e-15 * x.abs(), "{i},{j}: {x} vs {y}");
        }
    }
}

#[test]
fn network_gradient_matches_finite_differences() {
    let plant = ns_plant(6, 4);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 7).unwrap();
    let model = CorrectionModel::cnn(&plant, ForceMode::MuT, net, None).unwrap();
    let w = random_state(&plant, 9);
    let bar = random_vec(&mut seeded(2), 24);
    let (gt, gw) = model.param_gradient_via_chain(&plant, &w, &bar).unwrap();
    let obj = |m: &CorrectionModel, w: &StateVector| -> f64 {
        m.alpha(&plant, w).unwrap().iter().zip(&bar).map(|(a, b)| a * b).sum()
    };
    let scale = gt.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    for k in 0..model.n_params() {
        let h = 1e-6;
        let mut tp = model.theta.clone();
        tp[k] += h;
        let mut tm = model.theta.clone();
        tm[k] -= h;
        let fd = (obj(&model.with_theta(tp).unwrap(), &w) - obj(&model.with_theta(tm).unwrap(), &w)) / (2.0 * h);
        assert!((fd - gt[k]).abs() <= 1e-6 * scale, "theta {k}: {fd} vs {}", gt[k]);
    }
    let gscale = gw.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    for k in (0..w.data.len()).step_by(17) {
        let h = 1e-6;
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.data[k] += h;
        wm.data[k] -= h;
        let fd = (obj(&model, &wp) - obj(&model, &wm)) / (2.0 * h);
        assert!((fd - gw[k]).abs() <= 1e-6 * gscale, "w {k}: {fd} vs {}", gw[k]);
    }
}

#[test]
fn receptive_field_of_field_parameters_is_zero() {
    let plant = ns_plant(8, 8);
    let m = CorrectionModel::field(&plant, ForceMode::MuT, vec![0.01; 64]).unwrap();
    assert_eq!(m.receptive_field_check(&plant, &plant.uniform_state()).unwrap(), 0);
}

#[test]
fn two_width_three_convolutions_reach_two_cells() {
    let plant = ns_plant(8, 8);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 1).unwrap();
    let m = CorrectionModel::cnn(&plant, ForceMode::MuT, net, None).unwrap();
    assert_eq!(m.receptive_field_check(&plant, &random_state(&plant, 1)).unwrap(), 2);
}

#[test]
fn single_convolution_footprint_is_a_plus() {
    let plant = ns_plant(8, 8);
    let net = DirectionalCnn::new(&plant, 3, 1, true, 1).unwrap();
    let m = CorrectionModel::cnn(&plant, ForceMode::MuT, net, None).unwrap();
    let w = random_state(&plant, 1);
    assert_eq!(m.receptive_field_check(&plant, &w).unwrap(), 1);
    let l = plant.layout;
    let cell = l.interior_cell(4, 4);
    let mut bar_w = vec![0.0; w.data.len()];
    for k in 0..64 {
        let mut bar = vec![0.0; 64];
        bar[k] = 1.0;
        let (_, gw) = m.param_gradient_via_chain(&plant, &w, &bar).unwrap();
        bar_w[k] = gw[cell * l.m..(cell + 1) * l.m].iter().map(|x| x.abs()).sum();
    }
    let mut hit: Vec<(isize, isize)> = (0..64)
        .filter(|&k| bar_w[k] != 0.0)
        .map(|k| ((k / 8) as isize - 4, (k % 8) as isize - 4))
        .collect();
    hit.sort();
    assert_eq!(hit, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
}

#[test]
fn wide_kernels_are_rejected_on_the_default_stencil() {
    let plant = ns_plant(8, 8);
    let net = DirectionalCnn::new(&plant, 5, 5, true, 1).unwrap();
    assert!(matches!(
        CorrectionModel::cnn(&plant, ForceMode::MuT, net, None),
        Err(Error::ReceptiveField { declared: 4, limit: 2, .. })
    ));
}

#[test]
fn eddy_viscosity_network_needs_one_extra_ring_for_the_jacobian() {
    let mesh = StructuredMesh::build_bump_channel(8, 6, 0.1, 0.3).unwrap();
    let plant = plant_on(PlantKind::Ns, mesh.clone(), 2);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 3).unwrap();
    let m = CorrectionModel::cnn(&plant, ForceMode::MuT, net.clone(), None).unwrap();
    let w = random_state(&plant, 2);
    assert!(matches!(full_jacobian(&plant, &m, &w.data), Err(Error::ReceptiveField { .. })));

    let wide = plant_on(PlantKind::Ns, mesh.with_ghost_depth(3).unwrap(), 3);
    let m = CorrectionModel::cnn(&wide, ForceMode::MuT, net, Some(m.theta.clone())).unwrap();
    let w = random_state(&wide, 2);
    let a = full_jacobian(&wide, &m, &w.data).unwrap();
    crate::linalg::probe_pattern(&crate::plants::FullResidualOp::new(&wide, &m), &w.data, &a, 99).unwrap();
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let plant = ns_plant(6, 4);
    let net = DirectionalCnn::new(&plant, 3, 3, true, 17).unwrap();
    let theta = net.init_params();
    let mut buf = Vec::new();
    net.write_checkpoint(&theta, &mut buf).unwrap();
    let (back, th) = DirectionalCnn::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, net);
    assert_eq!(th.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}
