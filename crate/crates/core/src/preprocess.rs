//! Grid resampling and per-modality intensity normalization.
//!
//! Resampling maps cell-centered voxel coordinates so that the physical
//! centres of the input and output grids coincide; samples outside the
//! input grid read as zero. The normalizers follow fixed protocol rules:
//! T2w by robust percentile rescaling, ADC by a constant divisor, and
//! high-b DWI by the lower median of the b=0 signal inside the prostate
//! mask times a range constant.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ensure_same_geometry, MaskVolume, Volume3D};

/// Default target grid: 240 x 240 x 30 voxels.
pub const TARGET_DIMS: [usize; 3] = [240, 240, 30];
/// Default target spacing: 0.5 x 0.5 x 3.0 mm.
pub const TARGET_SPACING: [f64; 3] = [0.5, 0.5, 3.0];

/// T2w robust window percentiles.
pub const T2W_PCT_LOW: f64 = 0.05;
pub const T2W_PCT_HIGH: f64 = 99.95;
/// ADC maps are divided by this constant (1e-6 mm^2/s).
pub const ADC_NORM_DIVISOR: f64 = 3000.0;
/// High-b DWI divisor multiplier on the masked b0 median.
pub const RANGE_CONSTANT: f64 = 4.0;

/// Interpolation used by [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Continuous input voxel index of output voxel j along one axis, with the
/// physical centres of both grids aligned.
#[inline]
fn source_coord(j: usize, n_in: usize, s_in: f64, n_out: usize, s_out: f64) -> f64 {
    let offset = (n_in as f64 * s_in - n_out as f64 * s_out) * 0.5;
    ((j as f64 + 0.5) * s_out + offset) / s_in - 0.5
}

#[inline]
fn sample_or_zero(vol: &Volume3D, x: isize, y: isize, z: isize) -> f64 {
    let [nx, ny, nz] = vol.dims();
    if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
        0.0
    } else {
        vol.get(x as usize, y as usize, z as usize)
    }
}

fn trilinear_at(vol: &Volume3D, u: f64, v: f64, w: f64) -> f64 {
    let (x0, y0, z0) = (u.floor(), v.floor(), w.floor());
    let (fx, fy, fz) = (u - x0, v - y0, w - z0);
    let (x0, y0, z0) = (x0 as isize, y0 as isize, z0 as isize);
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - fy } else { fy };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - fx } else { fx };
                let weight = wx * wy * wz;
                if weight != 0.0 {
                    acc += weight * sample_or_zero(vol, x0 + dx, y0 + dy, z0 + dz);
                }
            }
        }
    }
    acc
}

fn nearest_at(vol: &Volume3D, u: f64, v: f64, w: f64) -> f64 {
    sample_or_zero(
        vol,
        u.round() as isize,
        v.round() as isize,
        w.round() as isize,
    )
}

/// Resamples onto `(target_dims, target_spacing)` with centre alignment.
/// A target identical to the source grid returns a bit-identical copy.
pub fn resample(
    vol: &Volume3D,
    target_dims: [usize; 3],
    target_spacing: [f64; 3],
    mode: Interpolation,
) -> Result<Volume3D> {
    if vol.dims() == target_dims && vol.spacing() == target_spacing {
        return Ok(vol.clone());
    }
    let out_probe = Volume3D::filled(target_dims, target_spacing, 0.0)?;
    let [nx_o, ny_o, _] = target_dims;
    let [nx_i, ny_i, nz_i] = vol.dims();
    let [sx_i, sy_i, sz_i] = vol.spacing();
    let [sx_o, sy_o, sz_o] = target_spacing;

    let voxels: Vec<f64> = (0..out_probe.len())
        .into_par_iter()
        .map(|idx| {
            let x = idx % nx_o;
            let rest = idx / nx_o;
            let (y, z) = (rest % ny_o, rest / ny_o);
            let u = source_coord(x, nx_i, sx_i, target_dims[0], sx_o);
            let v = source_coord(y, ny_i, sy_i, target_dims[1], sy_o);
            let w = source_coord(z, nz_i, sz_i, target_dims[2], sz_o);
            match mode {
                Interpolation::Trilinear => trilinear_at(vol, u, v, w),
                Interpolation::Nearest => nearest_at(vol, u, v, w),
            }
        })
        .collect();
    Volume3D::new(target_dims, target_spacing, voxels)
}

/// Nearest-neighbour resampling for label masks (never invents labels).
pub fn resample_mask(
    mask: &MaskVolume,
    target_dims: [usize; 3],
    target_spacing: [f64; 3],
) -> Result<MaskVolume> {
    if mask.dims() == target_dims && mask.spacing() == target_spacing {
        return Ok(mask.clone());
    }
    let as_vol = Volume3D::new(
        mask.dims(),
        mask.spacing(),
        mask.labels().iter().map(|&l| l as f64).collect(),
    )?;
    let res = resample(&as_vol, target_dims, target_spacing, Interpolation::Nearest)?;
    MaskVolume::new(
        target_dims,
        target_spacing,
        res.voxels().iter().map(|&v| v as u8).collect(),
    )
}

/// Linear-interpolation percentile (type 7): rank `h = (n-1) * p / 100`,
/// value `v[floor(h)] + frac(h) * (v[floor(h)+1] - v[floor(h)])`.
/// `p` must lie in [0, 100]; data must be non-empty.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("percentile of empty data".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Input(format!("percentile must be in [0, 100], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(percentile_of_sorted(&sorted, p))
}

/// Percentile of already ascending-sorted data (callers own the sort).
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as usize as f64;
    if frac == 0.0 || lo + 1 >= n {
        sorted[lo.min(n - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Lower median: element at rank `(n-1)/2` of the ascending sort.
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("median of empty data".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// T2w normalization: rescale so the 0.05th percentile maps to 0 and the
/// 99.95th to 1, clipping to [0, 1]. A degenerate window (high <= low)
/// yields an all-zero volume.
pub fn normalize_t2w(vol: &Volume3D) -> Result<Volume3D> {
    let mut sorted = vol.voxels().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile_of_sorted(&sorted, T2W_PCT_LOW);
    let hi = percentile_of_sorted(&sorted, T2W_PCT_HIGH);
    if !(hi > lo) {
        return Ok(vol.map(|_| 0.0));
    }
    let span = hi - lo;
    Ok(vol.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

/// ADC normalization: divide by [`ADC_NORM_DIVISOR`], clip negatives to 0.
/// Deliberately no upper clip.
pub fn normalize_adc(vol: &Volume3D) -> Volume3D {
    vol.map(|v| (v / ADC_NORM_DIVISOR).max(0.0))
}

/// High-b DWI normalization: divide by (lower median of `b0` inside
/// `prostate_mask`) x `range_constant`, clip to [0, 1].
///
/// Errors: grid mismatch (geometry), empty mask or non-positive median
/// (input).
pub fn normalize_dwi_b2000(
    vol: &Volume3D,
    b0: &Volume3D,
    prostate_mask: &MaskVolume,
    range_constant: f64,
) -> Result<Volume3D> {
    ensure_same_geometry("dwi vs b0", vol, b0)?;
    if !prostate_mask.same_grid_as(vol) {
        return Err(Error::Geometry(format!(
            "dwi vs prostate mask: {:?}/{:?} vs {:?}/{:?}",
            vol.dims(),
            vol.spacing(),
            prostate_mask.dims(),
            prostate_mask.spacing()
        )));
    }
    if !(range_constant > 0.0) || !range_constant.is_finite() {
        return Err(Error::Input(format!(
            "range constant must be positive, got {range_constant}"
        )));
    }
    let masked: Vec<f64> = b0
        .voxels()
        .iter()
        .zip(prostate_mask.labels())
        .filter(|(_, &l)| l != 0)
        .map(|(&v, _)| v)
        .collect();
    if masked.is_empty() {
        return Err(Error::Input("prostate mask selects no voxels".into()));
    }
    let med = lower_median(&masked)?;
    if !(med > 0.0) {
        return Err(Error::Input(format!(
            "masked b0 median must be positive, got {med}"
        )));
    }
    let div = med * range_constant;
    Ok(vol.map(|v| (v / div).clamp(0.0, 1.0)))
}
