//! Central finite-difference checks of every analytic loss gradient, at
//! 64-bit precision with step 1e-5 and relative tolerance 1e-3. Random
//! instances are re-drawn when they land too close to a hinge or clamp
//! kink, where finite differences are meaningless.

mod common;

use common::*;
use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use osma_core::losses::{
    cross_entropy_loss, cross_entropy_loss_with_grad, diversity_loss, diversity_loss_with_grad,
    mine_triplets, reconstruction_loss, reconstruction_loss_with_grad, spectral_loss,
    spectral_loss_with_grad, triplet_metric_loss, triplet_metric_loss_with_grad, LossConfig,
};
use osma_core::spectrum::SpectrumProfile;
use rand::Rng;

const INSTANCES: usize = 20;

#[test]
fn cross_entropy_gradient_matches_fd() {
    let mut rng = test_rng(201);
    for _ in 0..INSTANCES {
        let k = rng.random_range(3..7);
        let logits = random_vec(&mut rng, k, -3.0, 3.0);
        let label = rng.random_range(0..k);
        let (_, grad) =
            cross_entropy_loss_with_grad(Array1::from_vec(logits.clone()).view(), label).unwrap();
        let fd = central_diff(
            |x| cross_entropy_loss(Array1::from_vec(x.to_vec()).view(), label).unwrap(),
            &logits,
            FD_STEP,
        );
        assert_grad_close(grad.as_slice().unwrap(), &fd, "cross_entropy");
    }
}

/// Rejects instances where any mined triplet sits within `tol` of the
/// hinge boundary.
fn triplet_clear_of_kinks(emb: &Array2<f64>, labels: &[usize], margin: f64, tol: f64) -> bool {
    let d2 = |a: usize, b: usize| -> f64 {
        let diff = &emb.row(a) - &emb.row(b);
        diff.dot(&diff)
    };
    mine_triplets(labels)
        .iter()
        .all(|&(a, p, n)| (d2(a, p) - d2(a, n) + margin).abs() > tol)
}

#[test]
fn triplet_gradient_matches_fd() {
    let mut rng = test_rng(202);
    let margin = 0.3;
    let mut done = 0;
    while done < INSTANCES {
        let n = 6;
        let d = 4;
        let emb = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        if !triplet_clear_of_kinks(&emb, &labels, margin, 1e-3) {
            continue;
        }
        let (value, grad) = triplet_metric_loss_with_grad(emb.view(), &labels, margin).unwrap();
        if value.num_triplets == 0 {
            continue;
        }
        let flat: Vec<f64> = emb.iter().copied().collect();
        let fd = central_diff(
            |x| {
                let m = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
                triplet_metric_loss(m.view(), &labels, margin).unwrap().loss
            },
            &flat,
            FD_STEP,
        );
        let flat_grad: Vec<f64> = grad.iter().copied().collect();
        assert_grad_close(&flat_grad, &fd, "triplet");
        done += 1;
    }
}

#[test]
fn reconstruction_gradient_matches_fd_in_both_branches() {
    let mut rng = test_rng(203);
    for inst in 0..INSTANCES {
        let shape = IxDyn(&[2, 3, 3]);
        let x = ArrayD::from_shape_fn(shape.clone(), |_| rng.random_range(0.0..1.0));
        let x_aug = x.mapv(|v| v + rng.random_range(-0.2..0.2));
        let mse = reconstruction_loss(x.view(), x_aug.view(), 0.0).unwrap();

        // active branch: floor below the mse (or disabled)
        let floor_active = if inst % 2 == 0 { 0.0 } else { mse * 0.5 };
        let (_, grad) = reconstruction_loss_with_grad(x.view(), x_aug.view(), floor_active).unwrap();
        let flat: Vec<f64> = x_aug.iter().copied().collect();
        let fd = central_diff(
            |v| {
                let a = ArrayD::from_shape_vec(shape.clone(), v.to_vec()).unwrap();
                reconstruction_loss(x.view(), a.view(), floor_active).unwrap()
            },
            &flat,
            FD_STEP,
        );
        let flat_grad: Vec<f64> = grad.iter().copied().collect();
        assert_grad_close(&flat_grad, &fd, "reconstruction (active)");

        // clamped branch: floor well above the mse; gradient and FD both zero
        let floor_clamped = mse * 2.0 + 1e-3;
        let (v, grad) = reconstruction_loss_with_grad(x.view(), x_aug.view(), floor_clamped).unwrap();
        assert_eq!(v, floor_clamped);
        assert!(grad.iter().all(|&g| g == 0.0));
        let fd = central_diff(
            |v| {
                let a = ArrayD::from_shape_vec(shape.clone(), v.to_vec()).unwrap();
                reconstruction_loss(x.view(), a.view(), floor_clamped).unwrap()
            },
            &flat,
            FD_STEP,
        );
        assert!(fd.iter().all(|&g| g.abs() < 1e-12), "clamped branch should be flat");
    }
}

#[test]
fn diversity_gradient_matches_fd_in_both_regions() {
    let mut rng = test_rng(204);
    let cfg = LossConfig::default();
    let mut done = 0;
    while done < INSTANCES {
        let d = 5;
        let z_new = Array1::from_vec(random_vec(&mut rng, d, -1.0, 1.0));
        let z_old = Array1::from_vec(random_vec(&mut rng, d, -1.0, 1.0));
        // half the instances forced into the clamp region
        let z_known = if done % 2 == 0 {
            Array1::from_vec(random_vec(&mut rng, d, -1.0, 1.0))
        } else {
            z_new.mapv(|v| v * 1.7)
        };
        let norms_ok = [&z_new, &z_old, &z_known]
            .iter()
            .all(|v| v.dot(*v).sqrt() > 0.3);
        if !norms_ok {
            continue;
        }
        let cos_nk = z_new.dot(&z_known) / (z_new.dot(&z_new).sqrt() * z_known.dot(&z_known).sqrt());
        if (cos_nk - cfg.d_margin).abs() < 1e-3 {
            continue; // too close to the clamp kink for FD
        }
        let (_, grads) =
            diversity_loss_with_grad(z_new.view(), z_old.view(), z_known.view(), &cfg).unwrap();

        let all: Vec<f64> = z_new.iter().chain(z_old.iter()).chain(z_known.iter()).copied().collect();
        let fd = central_diff(
            |v| {
                let zn = Array1::from_vec(v[..d].to_vec());
                let zo = Array1::from_vec(v[d..2 * d].to_vec());
                let zk = Array1::from_vec(v[2 * d..].to_vec());
                diversity_loss(zn.view(), zo.view(), zk.view(), &cfg).unwrap()
            },
            &all,
            FD_STEP,
        );
        let analytic: Vec<f64> = grads
            .z_new
            .iter()
            .chain(grads.z_old.iter())
            .chain(grads.z_known.iter())
            .copied()
            .collect();
        assert_grad_close(&analytic, &fd, "diversity");
        done += 1;
    }
}

#[test]
fn spectral_gradient_matches_fd() {
    let mut rng = test_rng(205);
    let cfg = LossConfig::default();
    for _ in 0..INSTANCES {
        let n = 8;
        let b = 2;
        let xs: Vec<Array3<f64>> = (0..b)
            .map(|_| Array3::from_shape_fn((3, n, n), |_| rng.random_range(0.0..1.0)))
            .collect();
        let aug: Vec<Array3<f64>> = xs
            .iter()
            .map(|x| x.mapv(|v| v + rng.random_range(-0.1..0.1)))
            .collect();
        let target =
            SpectrumProfile::from_values(random_vec(&mut rng, n / 2, 0.0, 50.0), false).unwrap();
        let (_, grads) = spectral_loss_with_grad(&xs, &aug, &target, &cfg).unwrap();

        // FD over the first augmented image only keeps the cost sane;
        // image symmetry covers the rest
        let flat: Vec<f64> = aug[0].iter().copied().collect();
        let fd = central_diff(
            |v| {
                let mut aug2 = aug.clone();
                aug2[0] = Array3::from_shape_vec((3, n, n), v.to_vec()).unwrap();
                spectral_loss(&xs, &aug2, &target, &cfg).unwrap()
            },
            &flat,
            FD_STEP,
        );
        let analytic: Vec<f64> = grads[0].iter().copied().collect();
        assert_grad_close(&analytic, &fd, "spectral");
    }
}
