//! Candidate-to-lesion matching.
//!
//! A candidate counts as a true positive when it overlaps a lesion's
//! voxels or its centroid lies within `max_dist_mm` (strictly) of the
//! lesion centroid. Candidates are assigned greedily in descending
//! peak-score order (scanline label order breaks ties) and each lesion is
//! matched at most once. Unmatched candidates are false positives;
//! unmatched lesions are misses.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volume::MaskVolume;

use super::candidates::Candidate;

/// Default centroid gate in millimetres.
pub const MATCH_DIST_MM: f64 = 5.0;

/// Ground-truth lesions: a label mask plus a PI-RADS grade per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionAnnotation {
    mask: MaskVolume,
    pirads: BTreeMap<u8, u8>,
}

/// Matching view of one annotated lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub label: u8,
    /// Ascending linear indices into the annotation grid.
    pub voxels: Vec<usize>,
    pub centroid_mm: [f64; 3],
    pub pirads: u8,
}

impl LesionAnnotation {
    /// Validates that every nonzero mask label has exactly one PI-RADS
    /// grade in 1..=5 and vice versa.
    pub fn new(mask: MaskVolume, pirads: BTreeMap<u8, u8>) -> Result<Self> {
        let mut present = [false; 256];
        for &l in mask.labels() {
            present[l as usize] = true;
        }
        for (label, &grade) in &pirads {
            if *label == 0 {
                return Err(Error::Input("label 0 is background, cannot grade it".into()));
            }
            if !(1..=5).contains(&grade) {
                return Err(Error::Input(format!(
                    "PI-RADS for label {label} must be 1..=5, got {grade}"
                )));
            }
            if !present[*label as usize] {
                return Err(Error::Input(format!(
                    "PI-RADS entry for label {label} absent from the mask"
                )));
            }
        }
        for (l, &p) in present.iter().enumerate().skip(1) {
            if p && !pirads.contains_key(&(l as u8)) {
                return Err(Error::Input(format!("mask label {l} has no PI-RADS grade")));
            }
        }
        Ok(Self { mask, pirads })
    }

    /// Annotation with no lesions (healthy case).
    pub fn empty(mask: MaskVolume) -> Result<Self> {
        Self::new(mask, BTreeMap::new())
    }

    pub fn mask(&self) -> &MaskVolume {
        &self.mask
    }

    pub fn pirads(&self) -> &BTreeMap<u8, u8> {
        &self.pirads
    }

    pub fn n_lesions(&self) -> usize {
        self.pirads.len()
    }

    /// Case-level positivity: any lesion graded at or above the cutoff.
    pub fn is_positive(&self, pirads_min: u8) -> bool {
        self.pirads.values().any(|&g| g >= pirads_min)
    }

    /// Per-label voxel lists and centroids, ascending by label.
    pub fn lesions(&self) -> Vec<Lesion> {
        let mut voxels: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.mask.labels().iter().enumerate() {
            if l != 0 {
                voxels.entry(l).or_default().push(i);
            }
        }
        voxels
            .into_iter()
            .map(|(label, vs)| {
                let mut c = [0.0f64; 3];
                for &i in &vs {
                    let [x, y, z] = self.mask.coords(i);
                    let p = self.mask.voxel_center_mm(x, y, z);
                    c[0] += p[0];
                    c[1] += p[1];
                    c[2] += p[2];
                }
                let n = vs.len() as f64;
                Lesion {
                    label,
                    voxels: vs,
                    centroid_mm: [c[0] / n, c[1] / n, c[2] / n],
                    pirads: *self.pirads.get(&label).unwrap_or(&0),
                }
            })
            .collect()
    }
}

/// Outcome of greedy matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// (candidate index, lesion label) assignments.
    pub pairs: Vec<(usize, u8)>,
    /// Candidate indices counted as true positives.
    pub true_positives: Vec<usize>,
    /// Candidate indices counted as false positives.
    pub false_positives: Vec<usize>,
    /// Lesion labels never matched (false negatives).
    pub missed: Vec<u8>,
}

fn overlap_count(a: &[usize], b: &[usize]) -> usize {
    // both ascending
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Greedy assignment on precomputed lesion views. Candidates and lesions
/// must come from the same grid (candidate voxel indices are compared with
/// lesion voxel indices directly). Preference per candidate: largest
/// voxel overlap first, then nearest centroid below `max_dist_mm`; ties
/// break toward the smaller lesion label.
pub fn match_candidates(
    candidates: &[Candidate],
    lesions: &[Lesion],
    max_dist_mm: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        candidates[j]
            .peak_score
            .total_cmp(&candidates[i].peak_score)
            .then(i.cmp(&j))
    });

    let mut taken = vec![false; lesions.len()];
    let mut pairs = Vec::new();
    let mut tp = Vec::new();
    let mut fp = Vec::new();

    for &ci in &order {
        let cand = &candidates[ci];
        // best available lesion: overlap dominates, then centroid distance
        let mut best: Option<(usize, usize, f64)> = None; // (lesion idx, overlap, dist)
        for (li, lesion) in lesions.iter().enumerate() {
            if taken[li] {
                continue;
            }
            let ov = overlap_count(&cand.voxels, &lesion.voxels);
            let d = dist(cand.centroid_mm, lesion.centroid_mm);
            if ov == 0 && !(d < max_dist_mm) {
                continue;
            }
            let better = match &best {
                None => true,
                Some((_, bov, bd)) => ov > *bov || (ov == *bov && d < *bd),
            };
            if better {
                best = Some((li, ov, d));
            }
        }
        match best {
            Some((li, _, _)) => {
                taken[li] = true;
                pairs.push((ci, lesions[li].label));
                tp.push(ci);
            }
            None => fp.push(ci),
        }
    }

    tp.sort_unstable();
    fp.sort_unstable();
    pairs.sort_unstable();
    let missed = lesions
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(l, _)| l.label)
        .collect();
    MatchResult { pairs, true_positives: tp, false_positives: fp, missed }
}

/// Greedy matching straight from an annotation.
pub fn match_lesions(
    candidates: &[Candidate],
    annot: &LesionAnnotation,
    max_dist_mm: f64,
) -> Result<MatchResult> {
    if !(max_dist_mm > 0.0) || !max_dist_mm.is_finite() {
        return Err(Error::Input(format!(
            "match distance must be positive, got {max_dist_mm}"
        )));
    }
    let n = annot.mask().len();
    for c in candidates {
        if c.voxels.iter().any(|&v| v >= n) {
            return Err(Error::Geometry(format!(
                "candidate {} indexes beyond the annotation grid",
                c.label
            )));
        }
    }
    Ok(match_candidates(candidates, &annot.lesions(), max_dist_mm))
}
