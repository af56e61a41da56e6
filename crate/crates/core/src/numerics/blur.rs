//! Truncated Gaussian blur over a row-major 2-D grid.
//!
//! Boundaries use half-sample symmetric reflection (`.. x1 x0 | x0 x1 ..`).
//! With an even kernel the resulting operator is a symmetric doubly
//! stochastic matrix, so constant grids pass through unchanged and the
//! total mass of any grid is conserved.

use crate::error::{Error, Result};

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel_1d(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::BlurSigma(sigma));
    }
    let r = radius as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Separable blur with a `(2 radius + 1)^2` normalized Gaussian window.
pub fn gaussian_blur_2d(
    grid: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
    radius: usize,
) -> Result<Vec<f64>> {
    assert_eq!(grid.len(), width * height, "grid size mismatch");
    let radius = radius.max(1);
    let k = gaussian_kernel_1d(sigma, radius)?;
    let r = radius as i64;
    let (w, h) = (width as i64, height as i64);

    let mut tmp = vec![0.0; grid.len()];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x + t as i64 - r, w)];
            }
            tmp[y * width + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; grid.len()];
    for y in 0..h {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect(y + t as i64 - r, h) * width + x];
            }
            out[y as usize * width + x] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_grid_unchanged() {
        let g = vec![0.7; 9 * 5];
        let out = gaussian_blur_2d(&g, 9, 5, 1.3, 3).unwrap();
        for v in out {
            assert!((v - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn impulse_equals_kernel() {
        let (w, h) = (21, 21);
        let mut g = vec![0.0; w * h];
        g[10 * w + 10] = 1.0;
        let out = gaussian_blur_2d(&g, w, h, 1.5, 4).unwrap();
        let k = gaussian_kernel_1d(1.5, 4).unwrap();
        for dy in 0..9 {
            for dx in 0..9 {
                let v = out[(6 + dy) * w + 6 + dx];
                assert!((v - k[dy] * k[dx]).abs() < 1e-15);
            }
        }
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_preserved_on_corner_impulse() {
        let mut g = vec![0.0; 8 * 8];
        g[0] = 2.0;
        let out = gaussian_blur_2d(&g, 8, 8, 2.0, 5).unwrap();
        assert!((out.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radius_larger_than_grid() {
        let g: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let out = gaussian_blur_2d(&g, 3, 2, 3.0, 7).unwrap();
        assert!((out.iter().sum::<f64>() - 15.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_sigma() {
        let err = gaussian_blur_2d(&[1.0], 1, 1, 0.0, 1).unwrap_err();
        assert_eq!(err.code(), "blur-sigma");
        assert!(gaussian_blur_2d(&[1.0], 1, 1, f64::NAN, 1).is_err());
    }
}
