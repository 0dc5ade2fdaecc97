//! Detection evaluation: candidate extraction, lesion matching, FROC,
//! case-level AUC with bootstrap intervals, image quality, and zone
//! attribution, plus the cohort pipeline tying them together.

pub mod auc;
pub mod candidates;
pub mod froc;
pub mod matching;
pub mod quality;
pub mod zones;

pub use auc::{auc, bootstrap_auc, bootstrap_auc_distribution, BootstrapAuc, BOOTSTRAP_RESAMPLES};
pub use candidates::{case_score, extract_candidates, Candidate, Connectivity};
pub use froc::{froc, FrocCandidate, FrocCase, FrocCurve, FrocPoint};
pub use matching::{
    match_candidates, match_lesions, Lesion, LesionAnnotation, MatchResult, MATCH_DIST_MM,
};
pub use quality::{image_quality, mse, psnr, ssim, ImageQuality};
pub use zones::{zone_classify, ZoneClass, ZONE_FRACTION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// One case handed to the cohort pipeline.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub heatmap: Volume3D,
    pub annotation: LesionAnnotation,
}

/// The knobs behind a report, echoed verbatim so a run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Candidate extraction threshold, in (0, 1].
    pub threshold: f64,
    /// A case is positive when some lesion has PI-RADS >= this.
    pub pirads_min: u8,
    /// Candidate-to-lesion centroid gate in mm.
    pub max_dist_mm: f64,
    pub connectivity: Connectivity,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            pirads_min: 3,
            max_dist_mm: MATCH_DIST_MM,
            connectivity: Connectivity::TwentySix,
            resamples: BOOTSTRAP_RESAMPLES,
            seed: 0,
        }
    }
}

/// Sensitivity/budget read-offs conventionally reported next to the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub tpr_at_fpp_075: f64,
    pub tpr_at_fpp_100: f64,
    pub fpp_at_tpr_065: Option<f64>,
    pub fpp_at_tpr_070: Option<f64>,
}

impl OperatingPoints {
    pub fn from_curve(curve: &FrocCurve) -> Result<Self> {
        Ok(OperatingPoints {
            tpr_at_fpp_075: curve.tpr_at_fpp(0.75)?,
            tpr_at_fpp_100: curve.tpr_at_fpp(1.0)?,
            fpp_at_tpr_065: curve.fpp_at_tpr(0.65)?,
            fpp_at_tpr_070: curve.fpp_at_tpr(0.70)?,
        })
    }
}

/// Cohort-level results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ci: (f64, f64),
    pub froc: FrocCurve,
    pub operating_points: OperatingPoints,
    /// Mean reconstruction quality when comparison volumes were supplied.
    pub quality: Option<ImageQuality>,
}

/// Per-case detail, enough to recompute the cohort AUC and FROC from the
/// serialized report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    /// Case-level score: global heatmap maximum.
    pub score: f64,
    /// Case label under the configured PI-RADS floor.
    pub positive: bool,
    pub n_lesions: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub missed: usize,
    /// Candidate peaks with their full-run matched flags, in extraction
    /// order. Thresholding keeps a peak-descending prefix, so these flags
    /// determine the counts at every threshold.
    pub candidates: Vec<FrocCandidate>,
}

/// Everything `evaluate` writes: results, configuration echo, per-case data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub config: EvalConfig,
    #[serde(flatten)]
    pub report: EvalReport,
    pub cases: Vec<CaseReport>,
}

fn case_report(case: &EvalCase, config: &EvalConfig) -> Result<CaseReport> {
    if !case.annotation.mask().same_grid_as(&case.heatmap) {
        return Err(Error::Geometry(format!(
            "case {}: heatmap and annotation grids differ",
            case.id
        )));
    }
    let cands = extract_candidates(&case.heatmap, config.threshold, config.connectivity)?;
    let matched = match_lesions(&cands, &case.annotation, config.max_dist_mm)?;
    let mut flags = vec![false; cands.len()];
    for &i in &matched.true_positives {
        flags[i] = true;
    }
    Ok(CaseReport {
        id: case.id.clone(),
        score: case_score(&case.heatmap),
        positive: case.annotation.is_positive(config.pirads_min),
        n_lesions: case.annotation.n_lesions(),
        true_positives: matched.true_positives.len(),
        false_positives: matched.false_positives.len(),
        missed: matched.missed.len(),
        candidates: cands
            .iter()
            .zip(&flags)
            .map(|(c, &m)| FrocCandidate {
                peak_score: c.peak_score,
                matched: m,
            })
            .collect(),
    })
}

/// Run the full protocol over a cohort: per-case extraction and matching,
/// then the FROC sweep, then case-level AUC with its bootstrap interval.
/// Cases are processed in parallel; all aggregation runs in case order.
pub fn evaluate_cohort(cases: &[EvalCase], config: &EvalConfig) -> Result<CohortReport> {
    if cases.is_empty() {
        return Err(Error::Input("evaluation needs at least one case".into()));
    }
    if config.resamples == 0 {
        return Err(Error::Input("need at least one bootstrap resample".into()));
    }
    let case_reports: Vec<CaseReport> = cases
        .par_iter()
        .map(|c| case_report(c, config))
        .collect::<Result<_>>()?;

    let froc_cases: Vec<FrocCase> = case_reports
        .iter()
        .map(|c| FrocCase {
            n_lesions: c.n_lesions,
            candidates: c.candidates.clone(),
        })
        .collect();
    let curve = froc(&froc_cases, None)?;
    let operating_points = OperatingPoints::from_curve(&curve)?;

    let scores: Vec<f64> = case_reports.iter().map(|c| c.score).collect();
    let labels: Vec<bool> = case_reports.iter().map(|c| c.positive).collect();
    let boot = bootstrap_auc(&scores, &labels, config.resamples, config.seed)?;

    Ok(CohortReport {
        config: config.clone(),
        report: EvalReport {
            auc: boot.auc,
            ci: (boot.ci_low, boot.ci_high),
            froc: curve,
            operating_points,
            quality: None,
        },
        cases: case_reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::MaskVolume;
    use std::collections::BTreeMap;

    const DIMS: [usize; 3] = [24, 24, 4];
    const SPACING: [f64; 3] = [0.5, 0.5, 3.0];

    // one cubic lesion plus an optional far-away fp blob
    fn case(id: &str, lesion: bool, hit: f64, fp_peak: f64) -> EvalCase {
        let mut heat = Volume3D::filled(DIMS, SPACING, 0.0).unwrap();
        let mut mask = MaskVolume::filled(DIMS, SPACING, 0).unwrap();
        let mut pirads = BTreeMap::new();
        if lesion {
            for z in 0..2 {
                for y in 2..5 {
                    for x in 2..5 {
                        mask.set(x, y, z, 1);
                        if hit > 0.0 {
                            heat.set(x, y, z, hit);
                        }
                    }
                }
            }
            pirads.insert(1, 4);
        }
        if fp_peak > 0.0 {
            heat.set(20, 20, 3, fp_peak);
        }
        EvalCase {
            id: id.into(),
            heatmap: heat,
            annotation: LesionAnnotation::new(mask, pirads).unwrap(),
        }
    }

    fn cohort() -> Vec<EvalCase> {
        vec![
            case("a", true, 0.9, 0.0),
            case("b", true, 0.85, 0.6),
            case("c", true, 0.0, 0.0),
            case("d", false, 0.0, 0.7),
            case("e", false, 0.0, 0.0),
        ]
    }

    fn config() -> EvalConfig {
        EvalConfig {
            threshold: 0.5,
            pirads_min: 3,
            max_dist_mm: 5.0,
            connectivity: Connectivity::TwentySix,
            resamples: 100,
            seed: 9,
        }
    }

    #[test]
    fn counts_and_labels_by_hand() {
        let rep = evaluate_cohort(&cohort(), &config()).unwrap();
        assert_eq!(rep.cases.len(), 5);
        let by_id = |id: &str| rep.cases.iter().find(|c| c.id == id).unwrap();
        assert_eq!(by_id("a").true_positives, 1);
        assert_eq!(by_id("a").false_positives, 0);
        assert_eq!(by_id("b").true_positives, 1);
        assert_eq!(by_id("b").false_positives, 1);
        assert_eq!(by_id("c").true_positives, 0);
        assert_eq!(by_id("c").missed, 1);
        assert_eq!(by_id("d").false_positives, 1);
        assert!(!by_id("d").positive);
        assert_eq!(by_id("e").candidates.len(), 0);
        // scores: a .9+, b .85+, c 0+, d .7-, e 0-
        // pairs: (.9,.7) (.9,0) (.85,.7) (.85,0) (0,.7) (0,0 tie)
        // auc = (1+1+1+1+0+.5)/6
        assert_eq!(rep.report.auc, 4.5 / 6.0);
    }

    #[test]
    fn froc_matches_hand_sweep() {
        let rep = evaluate_cohort(&cohort(), &config()).unwrap();
        // peaks: .9 tp, .85 tp, .7 fp, .6 fp over 3 lesions, 5 cases
        let expect = [
            (0.0, 0.0),
            (0.0, 1.0 / 3.0),
            (0.0, 2.0 / 3.0),
            (0.2, 2.0 / 3.0),
            (0.4, 2.0 / 3.0),
        ];
        assert_eq!(rep.report.froc.points.len(), expect.len());
        for (p, (fpp, tpr)) in rep.report.froc.points.iter().zip(expect) {
            assert_eq!(p.fpp, fpp);
            assert_eq!(p.tpr, tpr);
        }
        assert_eq!(rep.report.operating_points.tpr_at_fpp_100, 2.0 / 3.0);
        assert_eq!(rep.report.operating_points.fpp_at_tpr_070, None);
    }

    #[test]
    fn report_is_deterministic() {
        let a = evaluate_cohort(&cohort(), &config()).unwrap();
        let b = evaluate_cohort(&cohort(), &config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn flags_in_report_recompute_the_curve() {
        let rep = evaluate_cohort(&cohort(), &config()).unwrap();
        let rebuilt: Vec<FrocCase> = rep
            .cases
            .iter()
            .map(|c| FrocCase {
                n_lesions: c.n_lesions,
                candidates: c.candidates.clone(),
            })
            .collect();
        assert_eq!(froc(&rebuilt, None).unwrap(), rep.report.froc);
    }

    #[test]
    fn json_shape_has_flattened_report_fields() {
        let rep = evaluate_cohort(&cohort(), &config()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&rep).unwrap())
            .unwrap();
        assert!(v["auc"].is_number());
        assert!(v["ci"].is_array());
        assert!(v["froc"]["points"].is_array());
        assert!(v["quality"].is_null());
        assert_eq!(v["config"]["connectivity"], "26");
        assert_eq!(v["cases"][0]["id"], "a");
    }

    #[test]
    fn single_class_cohort_is_degenerate() {
        let cases = vec![case("a", true, 0.9, 0.0), case("b", true, 0.8, 0.0)];
        assert!(matches!(
            evaluate_cohort(&cases, &config()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn geometry_mismatch_is_caught() {
        let mut cases = cohort();
        let heat = Volume3D::filled([8, 8, 2], SPACING, 0.0).unwrap();
        cases[0].heatmap = heat;
        assert!(matches!(
            evaluate_cohort(&cases, &config()),
            Err(Error::Geometry(_))
        ));
    }
}
