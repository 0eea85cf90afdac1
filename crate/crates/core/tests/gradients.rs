mod common;

use common::*;
use gaplab_core::losses::{
    finite_diff_against, finite_diff_check, finite_diff_decomposition, LossKind, Temperature,
};
use gaplab_core::numerics::Matrix;
use gaplab_core::trainkit::{batch_loss_and_grad, flatten_params, Encoder};
use rand::Rng;

const KINDS: [LossKind; 5] = [
    LossKind::Clip,
    LossKind::Reweighted { beta: 0.03 },
    LossKind::Intra,
    LossKind::Cma { alpha: 0.0 },
    LossKind::Cma { alpha: 0.6 },
];

#[test]
fn loss_gradients_match_central_differences() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let n = r.random_range(2..7);
        let d = r.random_range(2..6);
        let v = unit_rows(n, d, &mut r);
        let t = unit_rows(n, d, &mut r);
        let temp = Temperature::new(r.random_range(0.0..3.0));
        for kind in KINDS {
            let err = finite_diff_check(kind, &v, &t, &temp, 1e-5).unwrap();
            assert!(err < 1e-5, "{} seed {seed}: {err:e}", kind.name());
        }
        let err = finite_diff_decomposition(&v, &t, &temp, 1e-5).unwrap();
        assert!(err < 1e-5, "decomposition seed {seed}: {err:e}");
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut r = rng(99);
    let v = unit_rows(4, 3, &mut r);
    let t = unit_rows(4, 3, &mut r);
    let temp = Temperature::new(1.0);
    for kind in KINDS {
        let mut out = kind.evaluate(&v, &t, &temp).unwrap();
        out.grad_images = out.grad_images.scale(1.01);
        let err = finite_diff_against(&out, kind, &v, &t, &temp, 1e-5).unwrap();
        assert!(err > 1e-3, "{}: {err:e}", kind.name());
    }
}

fn set_param(image: &mut Encoder, text: &mut Encoder, temp: &mut Temperature, flat: &[f64]) {
    let ni = image.num_params();
    let nt = text.num_params();
    image.set_flat(&flat[..ni]).unwrap();
    text.set_flat(&flat[ni..ni + nt]).unwrap();
    temp.set_log_scale(flat[ni + nt]);
}

#[test]
fn end_to_end_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..20 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(3..7);
        let mut image = Encoder::new(5, 6, 4, &mut r);
        let mut text = Encoder::new(4, 6, 4, &mut r);
        let mut temp = Temperature::new(r.random_range(0.5..2.5));
        let x_img: Matrix = gaussian(n, 5, &mut r);
        let x_txt: Matrix = gaussian(n, 4, &mut r);
        let alpha = r.random_range(0.0..=1.0);
        let (_, grad) = batch_loss_and_grad(&image, &text, &temp, &x_img, &x_txt, alpha).unwrap();
        let base = flatten_params(&image, &text, &temp);
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            set_param(&mut image, &mut text, &mut temp, &p);
            let up = batch_loss_and_grad(&image, &text, &temp, &x_img, &x_txt, alpha).unwrap().0;
            p[i] -= 2.0 * h;
            set_param(&mut image, &mut text, &mut temp, &p);
            let down = batch_loss_and_grad(&image, &text, &temp, &x_img, &x_txt, alpha).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(gaplab_core::losses::relative_error(grad[i], fd));
        }
        set_param(&mut image, &mut text, &mut temp, &base);
        assert!(worst < 1e-4, "seed {seed}: {worst:e}");
    }
}
