//! Dense 3-D scalar volumes and label masks on a regular anisotropic grid.
//!
//! Voxels are stored row-major with x fastest: `idx = x + nx*(y + ny*z)`.
//! Grid spacing is in millimetres. Values are carried as f64 in memory;
//! the HVOL interchange format stores 32-bit floats (see [`crate::hvol`]).

use crate::error::{Error, Result};

/// Scalar volume on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<f64>,
}

/// Integer label volume sharing the [`Volume3D`] grid conventions.
/// Label 0 is background; annotation masks number lesions 1, 2, ...
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    labels: Vec<u8>,
}

fn check_grid(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Geometry(format!("dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Geometry(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| Error::Geometry(format!("dims product overflows: {dims:?}")))?;
    if n != len {
        return Err(Error::Geometry(format!(
            "voxel count {len} does not match dims {dims:?} (expected {n})"
        )));
    }
    Ok(())
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f64>) -> Result<Self> {
        check_grid(dims, spacing, voxels.len())?;
        Ok(Self { dims, spacing, voxels })
    }

    /// Constant-filled volume.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self> {
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| Error::Geometry(format!("dims product overflows: {dims:?}")))?;
        Self::new(dims, spacing, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel, x fastest.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_grid(dims, spacing, dims[0] * dims[1] * dims[2])?;
        let [nx, ny, nz] = dims;
        let mut voxels = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Ok(Self { dims, spacing, voxels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dims >= 1 is an invariant
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`Self::idx`].
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.voxels[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.idx(x, y, z);
        self.voxels[i] = v;
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f64] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    /// Physical coordinates (mm) of a voxel centre: `(i + 0.5) * spacing`.
    #[inline]
    pub fn voxel_center_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5) * self.spacing[0],
            (y as f64 + 0.5) * self.spacing[1],
            (z as f64 + 0.5) * self.spacing[2],
        ]
    }

    /// Physical edge lengths of the whole grid (mm).
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn same_geometry(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    /// New volume on the same grid with `f` applied per voxel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume3D {
        Volume3D {
            dims: self.dims,
            spacing: self.spacing,
            voxels: self.voxels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.voxels.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

impl MaskVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        check_grid(dims, spacing, labels.len())?;
        Ok(Self { dims, spacing, labels })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], label: u8) -> Result<Self> {
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| Error::Geometry(format!("dims product overflows: {dims:?}")))?;
        Self::new(dims, spacing, vec![label; n])
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut m = Self::filled(dims, spacing, 0)?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = m.idx(x, y, z);
                    m.labels[i] = f(x, y, z);
                }
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.idx(x, y, z);
        self.labels[i] = v;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn voxel_center_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5) * self.spacing[0],
            (y as f64 + 0.5) * self.spacing[1],
            (z as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn same_grid_as(&self, vol: &Volume3D) -> bool {
        self.dims == vol.dims() && self.spacing == vol.spacing()
    }

    pub fn same_geometry(&self, other: &MaskVolume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// Errors unless both volumes share dims and spacing.
pub fn ensure_same_geometry(what: &str, a: &Volume3D, b: &Volume3D) -> Result<()> {
    if !a.same_geometry(b) {
        return Err(Error::Geometry(format!(
            "{what}: {:?}/{:?} vs {:?}/{:?}",
            a.dims(),
            a.spacing(),
            b.dims(),
            b.spacing()
        )));
    }
    Ok(())
}

/// Errors unless both masks share dims and spacing.
pub fn ensure_same_mask_geometry(what: &str, a: &MaskVolume, b: &MaskVolume) -> Result<()> {
    if !a.same_geometry(b) {
        return Err(Error::Geometry(format!(
            "{what}: {:?}/{:?} vs {:?}/{:?}",
            a.dims(),
            a.spacing(),
            b.dims(),
            b.spacing()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let v = Volume3D::from_fn([3, 4, 5], [1.0, 1.0, 1.0], |x, y, z| {
            (x + 10 * y + 100 * z) as f64
        })
        .unwrap();
        assert_eq!(v.idx(0, 0, 0), 0);
        assert_eq!(v.idx(1, 0, 0), 1);
        assert_eq!(v.idx(0, 1, 0), 3);
        assert_eq!(v.idx(0, 0, 1), 12);
        assert_eq!(v.get(2, 3, 4), 432.0);
        assert_eq!(v.voxels()[2 + 3 * 3 + 4 * 12], 432.0);
        assert_eq!(v.coords(v.idx(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            Volume3D::filled([0, 2, 2], [1.0, 1.0, 1.0], 0.0),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            Volume3D::filled([2, 2, 2], [1.0, -1.0, 1.0], 0.0),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            Volume3D::new([2, 2, 2], [1.0, 1.0, 1.0], vec![0.0; 7]),
            Err(Error::Geometry(_))
        ));
        assert!(MaskVolume::new([1, 1, 1], [0.5, 0.5, 3.0], vec![1]).is_ok());
    }

    #[test]
    fn voxel_centers_are_cell_centered() {
        let v = Volume3D::filled([4, 4, 2], [0.5, 0.5, 3.0], 0.0).unwrap();
        assert_eq!(v.voxel_center_mm(0, 0, 0), [0.25, 0.25, 1.5]);
        assert_eq!(v.voxel_center_mm(3, 1, 1), [1.75, 0.75, 4.5]);
        assert_eq!(v.extent_mm(), [2.0, 2.0, 6.0]);
    }

    #[test]
    fn geometry_comparison() {
        let a = Volume3D::filled([2, 2, 2], [1.0, 1.0, 1.0], 0.0).unwrap();
        let b = Volume3D::filled([2, 2, 2], [1.0, 1.0, 2.0], 0.0).unwrap();
        assert!(ensure_same_geometry("test", &a, &a).is_ok());
        assert!(ensure_same_geometry("test", &a, &b).is_err());
    }
}
