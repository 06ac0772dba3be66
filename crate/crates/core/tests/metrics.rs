use gausskey_core::metrics::{
    fit_keypoint_regressor, pck_accuracy, pck_curve, psnr, ssim, Image, REGRESSION_RIDGE, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..1.0))).unwrap()
}

/// Windowed statistics with an explicit 2D Gaussian kernel at every offset.
fn ssim_direct(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = SSIM_WINDOW;
    let c = (n as f64 - 1.0) / 2.0;
    let mut kernel = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            kernel[[i, j]] = (-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total = kernel.sum();
    kernel.mapv_inplace(|v| v / total);
    let (h, w) = a.dim();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - n {
        for col in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    mx += kernel[[i, j]] * a[[r + i, col + j]];
                    my += kernel[[i, j]] * b[[r + i, col + j]];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (dx, dy) = (a[[r + i, col + j]] - mx, b[[r + i, col + j]] - my);
                    vx += kernel[[i, j]] * dx * dx;
                    vy += kernel[[i, j]] * dy * dy;
                    cxy += kernel[[i, j]] * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn ssim_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let (h, w) = (rng.gen_range(11..24), rng.gen_range(11..24));
        let a = random_image(&mut rng, h, w);
        let noise = rng.gen_range(0.0..0.3);
        let b = Image::new(a.view().mapv(|v| (v + rng.gen_range(-noise..noise)).clamp(0.0, 1.0))).unwrap();
        let got = ssim(&a, &b).unwrap();
        let want = ssim_direct(&a.view().to_owned(), &b.view().to_owned());
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn ssim_translation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 30, 30);
    let b = Image::new(a.view().mapv(|v| (v * 0.8 + 0.1).clamp(0.0, 1.0))).unwrap();
    // Shift both by whole pixels and crop the same content.
    let crop = |img: &Image, r: usize, c: usize| {
        Image::new(img.view().slice(ndarray::s![r..r + 20, c..c + 20]).to_owned()).unwrap()
    };
    let base = ssim(&crop(&a, 0, 0), &crop(&b, 0, 0)).unwrap();
    let mut shifted_a = Array2::zeros((30, 30));
    let mut shifted_b = Array2::zeros((30, 30));
    for r in 0..27 {
        for c in 0..25 {
            shifted_a[[r + 3, c + 5]] = a.view()[[r, c]];
            shifted_b[[r + 3, c + 5]] = b.view()[[r, c]];
        }
    }
    let moved =
        ssim(&crop(&Image::new(shifted_a).unwrap(), 3, 5), &crop(&Image::new(shifted_b).unwrap(), 3, 5)).unwrap();
    assert_eq!(base, moved);
}

proptest! {
    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng, 8, 9), random_image(&mut rng, 8, 9));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_self_similarity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 16, 13);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn pck_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)]).collect();
        let p: Vec<[f64; 2]> = t.iter().map(|q| [q[0] + rng.gen_range(-10.0..10.0), q[1] + rng.gen_range(-10.0..10.0)]).collect();
        let thresholds: Vec<f64> = (1..40).map(|i| i as f64 * 0.5).collect();
        let curve = pck_curve(&p, &t, &thresholds).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn regressor_matches_pseudo_inverse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p, q) = (rng.gen_range(12..60), rng.gen_range(2..8), rng.gen_range(2..6));
        let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, q), |_| rng.gen_range(-1.0..1.0));
        let w = fit_keypoint_regressor(x.view(), y.view()).unwrap().matrix();
        // Same ridge objective as augmented least squares: [X; √λ·I] W ≈ [Y; 0].
        let root = REGRESSION_RIDGE.sqrt();
        let xm = DMatrix::from_fn(n + p, p, |i, j| if i < n { x[[i, j]] } else if i - n == j { root } else { 0.0 });
        let ym = DMatrix::from_fn(n + p, q, |i, j| if i < n { y[[i, j]] } else { 0.0 });
        let oracle = xm.pseudo_inverse(1e-14).unwrap() * ym;
        for i in 0..p {
            for j in 0..q {
                prop_assert!((w[[i, j]] - oracle[(i, j)]).abs() < 1e-8);
            }
        }
        // residual orthogonality
        let r = &y - &x.dot(&w);
        prop_assert!(x.t().dot(&r).iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn exact_linear_map_gives_full_pck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, k, j) = (2000, 6, 4);
    let truth = Array2::from_shape_fn((2 * k, 2 * j), |_| rng.gen_range(-1.0..1.0));
    let x = Array2::from_shape_fn((n, 2 * k), |_| rng.gen_range(-1.0..1.0));
    let y = x.dot(&truth);
    let w = fit_keypoint_regressor(x.view(), y.view()).unwrap();
    let pred = w.predict(x.view()).unwrap();
    let to_points = |m: &Array2<f64>| -> Vec<[f64; 2]> {
        m.outer_iter().flat_map(|r| (0..j).map(move |i| [r[2 * i] * 64.0, r[2 * i + 1] * 64.0])).collect()
    };
    for t in [1e-6, 0.5, 6.0] {
        assert_eq!(pck_accuracy(&to_points(&pred), &to_points(&y), t).unwrap(), 1.0);
    }
}
