//! Anatomical zone attribution for a case's lesion burden.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::matching::LesionAnnotation;
use crate::volume::MaskVolume;

/// A case counts as zone-specific when at least this fraction of its
/// lesion voxels falls inside that zone.
pub const ZONE_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZoneClass {
    /// Peripheral zone holds >= 80% of lesion voxels.
    Pz,
    /// Transition zone holds >= 80% of lesion voxels.
    Tz,
    /// Neither zone dominates.
    Both,
}

/// Attribute a case to the peripheral or transition zone by the pooled
/// voxel fraction of all its lesions. The zones must not overlap, so at
/// most one can reach the 80% bar.
pub fn zone_classify(
    annot: &LesionAnnotation,
    pz: &MaskVolume,
    tz: &MaskVolume,
) -> Result<ZoneClass> {
    let mask = annot.mask();
    crate::volume::ensure_same_mask_geometry("lesion vs peripheral zone", mask, pz)?;
    crate::volume::ensure_same_mask_geometry("lesion vs transition zone", mask, tz)?;
    if pz
        .labels()
        .iter()
        .zip(tz.labels())
        .any(|(&p, &t)| p != 0 && t != 0)
    {
        return Err(Error::Input("zone masks overlap".into()));
    }
    let mut total = 0usize;
    let mut in_pz = 0usize;
    let mut in_tz = 0usize;
    for (i, &v) in mask.labels().iter().enumerate() {
        if v != 0 {
            total += 1;
            if pz.labels()[i] != 0 {
                in_pz += 1;
            } else if tz.labels()[i] != 0 {
                in_tz += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::DegenerateData(
            "zone attribution needs at least one lesion voxel".into(),
        ));
    }
    let total = total as f64;
    if in_pz as f64 / total >= ZONE_FRACTION {
        Ok(ZoneClass::Pz)
    } else if in_tz as f64 / total >= ZONE_FRACTION {
        Ok(ZoneClass::Tz)
    } else {
        Ok(ZoneClass::Both)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    const DIMS: [usize; 3] = [10, 1, 1];
    const SPACING: [f64; 3] = [0.5, 0.5, 3.0];

    fn strip(range: std::ops::Range<usize>) -> MaskVolume {
        MaskVolume::from_fn(DIMS, SPACING, |x, _, _| u8::from(range.contains(&x))).unwrap()
    }

    fn annot(lesion_range: std::ops::Range<usize>) -> LesionAnnotation {
        let mask =
            MaskVolume::from_fn(DIMS, SPACING, |x, _, _| u8::from(lesion_range.contains(&x)))
                .unwrap();
        LesionAnnotation::new(mask, BTreeMap::from([(1, 4)])).unwrap()
    }

    #[test]
    fn fully_inside_one_zone() {
        let a = annot(0..4);
        assert_eq!(
            zone_classify(&a, &strip(0..5), &strip(5..10)).unwrap(),
            ZoneClass::Pz
        );
        assert_eq!(
            zone_classify(&a, &strip(5..10), &strip(0..5)).unwrap(),
            ZoneClass::Tz
        );
    }

    #[test]
    fn seventy_thirty_split_is_both() {
        // 10 lesion voxels, 7 in PZ, 3 in TZ
        let a = annot(0..10);
        assert_eq!(
            zone_classify(&a, &strip(0..7), &strip(7..10)).unwrap(),
            ZoneClass::Both
        );
    }

    #[test]
    fn exact_eighty_percent_is_inclusive() {
        // 10 lesion voxels, exactly 8 in TZ
        let a = annot(0..10);
        assert_eq!(
            zone_classify(&a, &strip(8..10), &strip(0..8)).unwrap(),
            ZoneClass::Tz
        );
    }

    #[test]
    fn voxels_outside_both_zones_dilute() {
        // 4 of 5 voxels in PZ, fifth in neither zone: 0.8 inclusive
        let a = annot(0..5);
        assert_eq!(
            zone_classify(&a, &strip(0..4), &strip(9..10)).unwrap(),
            ZoneClass::Pz
        );
        // 3 of 5: below the bar on both sides
        assert_eq!(
            zone_classify(&a, &strip(0..3), &strip(9..10)).unwrap(),
            ZoneClass::Both
        );
    }

    #[test]
    fn overlapping_zones_rejected() {
        let a = annot(0..4);
        assert!(matches!(
            zone_classify(&a, &strip(0..6), &strip(5..10)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn empty_annotation_rejected() {
        let mask = MaskVolume::filled(DIMS, SPACING, 0).unwrap();
        let a = LesionAnnotation::new(mask, BTreeMap::new()).unwrap();
        assert!(matches!(
            zone_classify(&a, &strip(0..5), &strip(5..10)),
            Err(Error::DegenerateData(_))
        ));
    }
}
