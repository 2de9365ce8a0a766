//! SSIM with an 11x11 Gaussian window (sigma 1.5), valid positions only.

use crate::error::{Error, Result};
use crate::par;
use crate::raster::Image;

pub const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filter of a `w x h` plane.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let row = &src[y * w + x..y * w + x + WINDOW];
            tmp[y * ow + x] = row.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters a valid-size map back to `w x h`.
fn filter_transpose(g: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for j in 0..WINDOW {
                tmp[(y + j) * ow + x] += k[j] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for j in 0..WINDOW {
                out[y * w + x + j] += k[j] * v;
            }
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

struct ChannelSsim {
    mean: f64,
    grad: Option<Vec<f64>>,
}

fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> ChannelSsim {
    let k = kernel();
    let mu_x = filter(x, w, h, &k);
    let mu_y = filter(y, w, h, &k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let e_xx = filter(&xx, w, h, &k);
    let e_yy = filter(&yy, w, h, &k);
    let e_xy = filter(&xy, w, h, &k);
    let n = mu_x.len();
    let mut total = 0.0;
    let (mut g_mu, mut g_xx, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * sxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = sxx + syy + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            g_xx[i] = -s / b2;
            g_xy[i] = 2.0 * a1 / (b1 * b2);
            g_mu[i] = 2.0 * my * (a2 - a1) / (b1 * b2) - 2.0 * mx * s * (1.0 / b1 - 1.0 / b2);
        }
    }
    let grad = want_grad.then(|| {
        let scale = 1.0 / n as f64;
        let t_mu = filter_transpose(&g_mu, w, h, &k);
        let t_xx = filter_transpose(&g_xx, w, h, &k);
        let t_xy = filter_transpose(&g_xy, w, h, &k);
        (0..w * h).map(|p| scale * (t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p])).collect()
    });
    ChannelSsim { mean: total / n as f64, grad }
}

fn check(a: &Image, b: &Image) -> Result<()> {
    a.same_size(b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::ImageTooSmall { width: a.width, height: a.height, window: WINDOW });
    }
    Ok(())
}

/// Mean SSIM over valid window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let per = par::map_range(3, |c| ssim_channel(&channel(a, c), &channel(b, c), a.width, a.height, false).mean);
    Ok(per.iter().sum::<f64>() / 3.0)
}

/// `(1 - SSIM) / 2` and its gradient with respect to `render`.
pub fn dssim_loss(render: &Image, gt: &Image) -> Result<(f64, Image)> {
    check(render, gt)?;
    let per = par::map_range(3, |c| ssim_channel(&channel(render, c), &channel(gt, c), render.width, render.height, true));
    let mut grad = Image::new(render.width, render.height);
    let mut s = 0.0;
    for (c, r) in per.into_iter().enumerate() {
        s += r.mean / 3.0;
        for (p, g) in r.grad.unwrap().into_iter().enumerate() {
            grad.data[p * 3 + c] = -g / 6.0;
        }
    }
    Ok(((1.0 - s) / 2.0, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, phase: f64) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            [0.5 + 0.4 * (0.7 * x + phase).sin() * (0.3 * y).cos(), 0.5 + 0.3 * (0.2 * x * y + phase).sin(), (0.05 * (x + y) + phase).fract()]
        })
    }

    #[test]
    fn identical_images_have_zero_dssim() {
        let a = textured(16, 13, 0.0);
        assert!(dssim_loss(&a, &a).unwrap().0.abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_black_vs_white() {
        let a = Image::filled(12, 12, [0.0; 3]);
        let b = Image::filled(12, 12, [1.0; 3]);
        // closed form for constant images: SSIM = C1 / (1 + C1)
        let want = (1.0 - C1 / (1.0 + C1)) / 2.0;
        let got = dssim_loss(&a, &b).unwrap().0;
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.49995).abs() < 1e-6);
    }

    #[test]
    fn too_small_is_rejected() {
        let a = Image::new(10, 20);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn transpose_is_adjoint() {
        let (w, h) = (14, 12);
        let k = kernel();
        let x: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..(w - 10) * (h - 10)).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = filter(&x, w, h, &k).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = filter_transpose(&g, w, h, &k).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = textured(13, 12, 0.3);
        let b = textured(13, 12, 1.1);
        let (_, g) = dssim_loss(&a, &b).unwrap();
        let h = 1e-6;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            p.data[i] += h;
            let mut m = a.clone();
            m.data[i] -= h;
            let fd = (dssim_loss(&p, &b).unwrap().0 - dssim_loss(&m, &b).unwrap().0) / (2.0 * h);
            assert!((g.data[i] - fd).abs() <= 1e-3 * fd.abs() + 1e-9, "{i}: {} vs {fd}", g.data[i]);
        }
    }
}
