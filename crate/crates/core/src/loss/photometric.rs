use crate::error::Result;
use crate::raster::Image;

pub const PSNR_CAP: f64 = 100.0;

/// Mean absolute error over pixels and channels, and its gradient.
pub fn l1_loss(render: &Image, gt: &Image) -> Result<(f64, Image)> {
    render.same_size(gt)?;
    let n = render.data.len() as f64;
    let mut grad = Image::new(render.width, render.height);
    let mut sum = 0.0;
    for ((g, a), b) in grad.data.iter_mut().zip(&render.data).zip(&gt.data) {
        let d = a - b;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m <= 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a = Image::filled(3, 2, [0.0; 3]);
        let b = Image::filled(3, 2, [1.0; 3]);
        assert_eq!(l1_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap().0, 1.0);
        assert!(l1_loss(&a, &Image::new(2, 3)).is_err());
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let a = Image::from_fn(4, 4, |x, y| [((x * 7 + y) as f64).sin() * 0.5 + 0.5, (x as f64 * 0.3).cos(), 0.2 * y as f64]);
        let b = Image::from_fn(4, 4, |x, y| [((x + y * 3) as f64).cos() * 0.5 + 0.5, 0.4, 0.1 * x as f64 + 0.05]);
        let (_, g) = l1_loss(&a, &b).unwrap();
        let h = 1e-7;
        for i in 0..a.data.len() {
            let mut p = a.clone();
            p.data[i] += h;
            let mut m = a.clone();
            m.data[i] -= h;
            let fd = (l1_loss(&p, &b).unwrap().0 - l1_loss(&m, &b).unwrap().0) / (2.0 * h);
            assert!((g.data[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(2, 2, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(2, 2, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let checker = Image::from_fn(4, 4, |x, y| [((x + y) % 2) as f64; 3]);
        let gray = Image::filled(4, 4, [0.5; 3]);
        assert!((psnr(&gray, &checker).unwrap() - 6.0206).abs() < 1e-4);
    }
}
