//! Volume comparison metrics: MSE, PSNR, and slice-wise SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ensure_same_geometry, Volume3D};

/// PSNR reported for effectively identical volumes.
pub const PSNR_CAP_DB: f64 = 100.0;
/// MSE below this is treated as zero for the PSNR cap.
pub const PSNR_MSE_FLOOR: f64 = 1e-12;
/// SSIM window: 11-tap Gaussian, sigma 1.5, applied per axial slice.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageQuality {
    pub psnr: f64,
    pub mse: f64,
    pub ssim: f64,
}

fn check_range(data_range: f64) -> Result<()> {
    if !data_range.is_finite() || data_range <= 0.0 {
        return Err(Error::Input(format!(
            "data range {data_range} must be positive"
        )));
    }
    Ok(())
}

/// Mean squared difference, accumulated in voxel order.
pub fn mse(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    ensure_same_geometry("mse inputs", a, b)?;
    let mut acc = 0.0f64;
    for (x, y) in a.voxels().iter().zip(b.voxels()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / a.voxels().len() as f64)
}

/// 10 log10(range^2 / mse), capped at [`PSNR_CAP_DB`] when the MSE is
/// below [`PSNR_MSE_FLOOR`].
pub fn psnr(a: &Volume3D, b: &Volume3D, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    let m = mse(a, b)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * ((data_range * data_range) / m).log10())
}

// symmetric reflection with the edge sample duplicated: period 2n
fn reflect(i: isize, n: usize) -> usize {
    let m = i.rem_euclid(2 * n as isize) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut total = 0.0;
    for (k, tap) in w.iter_mut().enumerate() {
        let d = k as isize - half;
        *tap = (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *tap;
    }
    for tap in &mut w {
        *tap /= total;
    }
    w
}

// separable Gaussian blur of one nx*ny slice, x-fastest layout
fn blur_slice(src: &[f64], nx: usize, ny: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0;
            for (k, &w) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - half, nx);
                acc += w * src[sx + nx * y];
            }
            tmp[x + nx * y] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0;
            for (k, &w) in taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - half, ny);
                acc += w * tmp[x + nx * sy];
            }
            out[x + nx * y] = acc;
        }
    }
    out
}

/// Mean structural similarity. Local statistics use an 11-tap Gaussian
/// window (sigma 1.5) within each axial slice; slices are scored by the
/// mean of their SSIM maps and the volume score is the mean over slices.
/// Slice-wise 2D windows sidestep the anisotropic z spacing.
pub fn ssim(a: &Volume3D, b: &Volume3D, data_range: f64) -> Result<f64> {
    ensure_same_geometry("ssim inputs", a, b)?;
    check_range(data_range)?;
    let [nx, ny, nz] = a.dims();
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);
    let taps = gaussian_taps();
    let plane = nx * ny;
    let mut slice_sum = 0.0f64;
    for z in 0..nz {
        let sa = &a.voxels()[z * plane..(z + 1) * plane];
        let sb = &b.voxels()[z * plane..(z + 1) * plane];
        let mu1 = blur_slice(sa, nx, ny, &taps);
        let mu2 = blur_slice(sb, nx, ny, &taps);
        let aa: Vec<f64> = sa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = sb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = sa.iter().zip(sb).map(|(x, y)| x * y).collect();
        let m11 = blur_slice(&aa, nx, ny, &taps);
        let m22 = blur_slice(&bb, nx, ny, &taps);
        let m12 = blur_slice(&ab, nx, ny, &taps);
        let mut acc = 0.0f64;
        for i in 0..plane {
            let var1 = m11[i] - mu1[i] * mu1[i];
            let var2 = m22[i] - mu2[i] * mu2[i];
            let cov = m12[i] - mu1[i] * mu2[i];
            let num = (2.0 * mu1[i] * mu2[i] + c1) * (2.0 * cov + c2);
            let den = (mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1) * (var1 + var2 + c2);
            acc += num / den;
        }
        slice_sum += acc / plane as f64;
    }
    Ok(slice_sum / nz as f64)
}

/// The PSNR/MSE/SSIM triple from single passes over both volumes.
pub fn image_quality(a: &Volume3D, b: &Volume3D, data_range: f64) -> Result<ImageQuality> {
    Ok(ImageQuality {
        psnr: psnr(a, b, data_range)?,
        mse: mse(a, b)?,
        ssim: ssim(a, b, data_range)?,
    })
}
