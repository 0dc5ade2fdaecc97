//! Candidate extraction: threshold a heatmap and label connected
//! components. Labels follow scanline discovery order (x fastest, then y,
//! then z), so extraction is deterministic for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Neighbourhood used for component labeling. Default is 26 (vertex
/// connectivity); 6 restricts to face neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "26")]
    TwentySix,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::TwentySix
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        match self {
            Connectivity::Six => vec![
                [-1, 0, 0],
                [1, 0, 0],
                [0, -1, 0],
                [0, 1, 0],
                [0, 0, -1],
                [0, 0, 1],
            ],
            Connectivity::TwentySix => {
                let mut o = Vec::with_capacity(26);
                for dz in -1..=1isize {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            if (dx, dy, dz) != (0, 0, 0) {
                                o.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                o
            }
        }
    }
}

/// One connected above-threshold region.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// 1-based label in scanline discovery order.
    pub label: u32,
    /// Member voxels as ascending linear indices into the source grid.
    pub voxels: Vec<usize>,
    /// Maximum heatmap value inside the region.
    pub peak_score: f64,
    /// Unweighted mean of member voxel centres, in mm.
    pub centroid_mm: [f64; 3],
}

/// Labels connected components of `heatmap >= threshold`.
/// `threshold` must lie in (0, 1].
pub fn extract_candidates(
    heatmap: &Volume3D,
    threshold: f64,
    connectivity: Connectivity,
) -> Result<Vec<Candidate>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Input(format!(
            "threshold must be in (0, 1], got {threshold}"
        )));
    }
    let [nx, ny, nz] = heatmap.dims();
    let offsets = connectivity.offsets();
    let vox = heatmap.voxels();
    let mut visited = vec![false; vox.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();

    for start in 0..vox.len() {
        if visited[start] || vox[start] < threshold {
            continue;
        }
        // flood fill from the first unvisited voxel in scan order
        let mut members = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            members.push(idx);
            let [x, y, z] = heatmap.coords(idx);
            for off in &offsets {
                let (xx, yy, zz) = (
                    x as isize + off[0],
                    y as isize + off[1],
                    z as isize + off[2],
                );
                if xx < 0 || yy < 0 || zz < 0 {
                    continue;
                }
                let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                if xx >= nx || yy >= ny || zz >= nz {
                    continue;
                }
                let nidx = heatmap.idx(xx, yy, zz);
                if !visited[nidx] && vox[nidx] >= threshold {
                    visited[nidx] = true;
                    stack.push(nidx);
                }
            }
        }
        members.sort_unstable();
        let peak = members.iter().map(|&i| vox[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut c = [0.0f64; 3];
        for &i in &members {
            let [x, y, z] = heatmap.coords(i);
            let p = heatmap.voxel_center_mm(x, y, z);
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
        }
        let n = members.len() as f64;
        out.push(Candidate {
            label: out.len() as u32 + 1,
            voxels: members,
            peak_score: peak,
            centroid_mm: [c[0] / n, c[1] / n, c[2] / n],
        });
    }
    Ok(out)
}

/// Case-level score: the global heatmap maximum.
pub fn case_score(heatmap: &Volume3D) -> f64 {
    heatmap.max_value()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(dims: [usize; 3], spots: &[([usize; 3], f64)]) -> Volume3D {
        let mut v = Volume3D::filled(dims, [1.0, 1.0, 1.0], 0.0).unwrap();
        for &([x, y, z], s) in spots {
            v.set(x, y, z, s);
        }
        v
    }

    #[test]
    fn threshold_must_be_in_unit_interval() {
        let v = heat([4, 4, 4], &[]);
        assert!(extract_candidates(&v, 0.0, Connectivity::TwentySix).is_err());
        assert!(extract_candidates(&v, 1.5, Connectivity::TwentySix).is_err());
        assert!(extract_candidates(&v, 1.0, Connectivity::TwentySix).is_ok());
    }

    #[test]
    fn all_zero_heatmap_yields_no_candidates() {
        let v = heat([5, 5, 5], &[]);
        assert!(extract_candidates(&v, 0.5, Connectivity::TwentySix).unwrap().is_empty());
        assert_eq!(case_score(&v), 0.0);
    }

    #[test]
    fn separated_blobs_get_scanline_labels() {
        // blob at low (x,y) is discovered first regardless of score
        let v = heat([8, 8, 1], &[([1, 1, 0], 0.6), ([6, 6, 0], 0.9)]);
        let c = extract_candidates(&v, 0.5, Connectivity::TwentySix).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].label, 1);
        assert_eq!(c[0].peak_score, 0.6);
        assert_eq!(c[1].label, 2);
        assert_eq!(c[1].peak_score, 0.9);
        assert_eq!(c[0].centroid_mm, [1.5, 1.5, 0.5]);
        assert_eq!(c[1].centroid_mm, [6.5, 6.5, 0.5]);
    }

    #[test]
    fn diagonal_voxels_merge_under_26_but_not_6() {
        let v = heat([4, 4, 4], &[([1, 1, 1], 0.8), ([2, 2, 2], 0.7)]);
        let c26 = extract_candidates(&v, 0.5, Connectivity::TwentySix).unwrap();
        assert_eq!(c26.len(), 1);
        assert_eq!(c26[0].peak_score, 0.8);
        assert_eq!(c26[0].voxels.len(), 2);
        let c6 = extract_candidates(&v, 0.5, Connectivity::Six).unwrap();
        assert_eq!(c6.len(), 2);
    }

    #[test]
    fn face_neighbours_merge_under_both() {
        let v = heat([4, 4, 1], &[([1, 1, 0], 0.8), ([2, 1, 0], 0.9)]);
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let c = extract_candidates(&v, 0.5, conn).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].peak_score, 0.9);
        }
    }

    #[test]
    fn centroid_uses_anisotropic_spacing() {
        let mut v = Volume3D::filled([8, 8, 4], [0.5, 0.5, 3.0], 0.0).unwrap();
        v.set(2, 3, 1, 1.0);
        v.set(3, 3, 1, 1.0);
        let c = extract_candidates(&v, 0.5, Connectivity::TwentySix).unwrap();
        assert_eq!(c.len(), 1);
        // centres at x = 1.25 and 1.75 -> mean 1.5; y = 1.75; z = 4.5
        assert_eq!(c[0].centroid_mm, [1.5, 1.75, 4.5]);
    }

    #[test]
    fn voxels_at_threshold_are_included() {
        let v = heat([3, 3, 1], &[([1, 1, 0], 0.5)]);
        let c = extract_candidates(&v, 0.5, Connectivity::TwentySix).unwrap();
        assert_eq!(c.len(), 1);
    }
}
