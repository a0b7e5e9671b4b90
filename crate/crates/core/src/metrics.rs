//! Full-reference quality metrics on `[0, 1]` images.

use crate::data::Patch;
use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Patch, b: &Patch) -> Result<()> {
    if !a.same_shape(b) || a.pixels.len() != b.pixels.len() {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(())
}

pub fn mse(a: &Patch, b: &Patch) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.pixels.len().max(1) as f64;
    Ok(a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB for unit-range data, capped at [`PSNR_CAP`].
pub fn psnr(a: &Patch, b: &Patch) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (x as f64 - r).powi(2) + (y as f64 - r).powi(2);
            w.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Local SSIM values over every fully-contained 11x11 Gaussian window.
pub fn ssim_map(a: &Patch, b: &Patch) -> Result<Vec<f64>> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: a.width,
            height: a.height,
        });
    }
    let win = gaussian_window();
    let (out_w, out_h) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut map = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let w = win[wy * SSIM_WINDOW + wx];
                    let p = a.get(ox + wx, oy + wy);
                    let q = b.get(ox + wx, oy + wy);
                    mx += w * p;
                    my += w * q;
                    xx += w * (p * p);
                    yy += w * (q * q);
                    xy += w * (p * q);
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cxy = xy - mx * my;
            let num = (2.0 * (mx * my) + SSIM_C1) * (2.0 * cxy + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            map.push(num / den);
        }
    }
    Ok(map)
}

/// Mean structural similarity.
pub fn ssim(a: &Patch, b: &Patch) -> Result<f64> {
    let map = ssim_map(a, b)?;
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok(mean.clamp(-1.0, 1.0))
}
