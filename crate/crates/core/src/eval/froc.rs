//! Free-response ROC: lesion-level sensitivity against false positives
//! per case, swept over candidate score thresholds.
//!
//! Greedy matching processes candidates in descending peak order, and each
//! candidate's assignment depends only on candidates processed before it.
//! Keeping candidates with peak >= t keeps exactly a prefix of that order,
//! so re-matching the thresholded set reproduces the full run's per-candidate
//! outcomes. The sweep therefore needs only each candidate's peak score and
//! its matched flag from one full matching pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate's contribution to the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocCandidate {
    pub peak_score: f64,
    /// Matched to a lesion in the full (unthresholded) greedy matching.
    pub matched: bool,
}

/// One case's candidates plus its lesion count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCase {
    pub n_lesions: usize,
    pub candidates: Vec<FrocCandidate>,
}

/// Operating point: false positives per case, lesion sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub fpp: f64,
    pub tpr: f64,
}

/// Operating points in sweep order (thresholds descending), consecutive
/// duplicates removed. Both coordinates are nondecreasing along the list:
/// lowering the threshold only adds candidates, so TP and FP counts only
/// grow. Equal-fpp runs are vertical jumps of the staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
}

/// Sweep the curve. `thresholds` defaults to the distinct peak scores
/// plus {0, 1}, which gives the exact curve (every step is at some peak).
/// A candidate counts at threshold t when its peak_score >= t.
pub fn froc(cases: &[FrocCase], thresholds: Option<&[f64]>) -> Result<FrocCurve> {
    if cases.is_empty() {
        return Err(Error::Input("FROC needs at least one case".into()));
    }
    let total_lesions: usize = cases.iter().map(|c| c.n_lesions).sum();
    if total_lesions == 0 {
        return Err(Error::DegenerateData(
            "FROC sensitivity undefined with zero lesions".into(),
        ));
    }
    for c in cases {
        if c.candidates
            .iter()
            .any(|cand| !cand.peak_score.is_finite())
        {
            return Err(Error::Input("candidate peak scores must be finite".into()));
        }
    }

    let mut ts: Vec<f64> = match thresholds {
        Some(t) => {
            if t.is_empty() {
                return Err(Error::Input("empty threshold list".into()));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input("thresholds must be finite".into()));
            }
            t.to_vec()
        }
        None => {
            let mut t: Vec<f64> = cases
                .iter()
                .flat_map(|c| c.candidates.iter().map(|cand| cand.peak_score))
                .collect();
            t.push(0.0);
            t.push(1.0);
            t
        }
    };
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();

    let n_cases = cases.len() as f64;
    let mut points: Vec<FrocPoint> = Vec::with_capacity(ts.len());
    for &t in &ts {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for c in cases {
            for cand in &c.candidates {
                if cand.peak_score >= t {
                    if cand.matched {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        let p = FrocPoint {
            fpp: fp as f64 / n_cases,
            tpr: tp as f64 / total_lesions as f64,
        };
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    Ok(FrocCurve { points })
}

impl FrocCurve {
    /// Sensitivity read off at a false-positive budget, by linear
    /// interpolation on the polyline through the operating points. At a
    /// vertical jump the top is taken (the best sensitivity achievable at
    /// exactly that budget). Beyond the last point the curve is flat;
    /// below the first point no threshold fits the budget and the read-off
    /// is 0.
    pub fn tpr_at_fpp(&self, fpp: f64) -> Result<f64> {
        if !fpp.is_finite() || fpp < 0.0 {
            return Err(Error::Input(format!("fpp query {fpp} must be >= 0")));
        }
        let pts = &self.points;
        if pts.is_empty() {
            return Err(Error::Input("empty FROC curve".into()));
        }
        if fpp < pts[0].fpp {
            return Ok(0.0);
        }
        if fpp >= pts[pts.len() - 1].fpp {
            return Ok(pts[pts.len() - 1].tpr);
        }
        // last point at or left of the query, first point strictly right
        let mut left = 0;
        for (i, p) in pts.iter().enumerate() {
            if p.fpp <= fpp {
                left = i;
            } else {
                break;
            }
        }
        let a = pts[left];
        let b = pts[left + 1];
        if a.fpp == fpp {
            return Ok(a.tpr); // top of any vertical run at the query
        }
        Ok(a.tpr + (fpp - a.fpp) / (b.fpp - a.fpp) * (b.tpr - a.tpr))
    }

    /// Smallest false-positive budget at which sensitivity reaches `tpr`,
    /// by linear interpolation along the polyline. `None` when the curve
    /// never gets there.
    pub fn fpp_at_tpr(&self, tpr: f64) -> Result<Option<f64>> {
        if !tpr.is_finite() || !(0.0..=1.0).contains(&tpr) {
            return Err(Error::Input(format!("tpr query {tpr} must be in [0,1]")));
        }
        let pts = &self.points;
        if pts.is_empty() {
            return Err(Error::Input("empty FROC curve".into()));
        }
        for (i, p) in pts.iter().enumerate() {
            if p.tpr >= tpr {
                if i == 0 {
                    return Ok(Some(p.fpp));
                }
                let a = pts[i - 1];
                if p.fpp == a.fpp || p.tpr == a.tpr {
                    return Ok(Some(p.fpp));
                }
                return Ok(Some(a.fpp + (tpr - a.tpr) / (p.tpr - a.tpr) * (p.fpp - a.fpp)));
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(peak: f64, matched: bool) -> FrocCandidate {
        FrocCandidate {
            peak_score: peak,
            matched,
        }
    }

    // Two cases, four lesions. Case A: TP 0.9, FP 0.6, TP 0.4 against two
    // lesions. Case B: FP 0.7, TP 0.5 against two lesions.
    fn staircase_cases() -> Vec<FrocCase> {
        vec![
            FrocCase {
                n_lesions: 2,
                candidates: vec![cand(0.9, true), cand(0.6, false), cand(0.4, true)],
            },
            FrocCase {
                n_lesions: 2,
                candidates: vec![cand(0.7, false), cand(0.5, true)],
            },
        ]
    }

    #[test]
    fn staircase_points_by_hand() {
        // sweep t: 1.0 -> (0,0); 0.9 -> (0,.25); 0.7 -> (.5,.25);
        // 0.6 -> (1,.25); 0.5 -> (1,.5); 0.4 -> (1,.75); 0 -> dup
        let curve = froc(&staircase_cases(), None).unwrap();
        let expect = [
            (0.0, 0.0),
            (0.0, 0.25),
            (0.5, 0.25),
            (1.0, 0.25),
            (1.0, 0.5),
            (1.0, 0.75),
        ];
        assert_eq!(curve.points.len(), expect.len());
        for (p, (fpp, tpr)) in curve.points.iter().zip(expect) {
            assert_eq!(p.fpp, fpp);
            assert_eq!(p.tpr, tpr);
        }
    }

    #[test]
    fn matches_exhaustive_per_threshold_recount() {
        let cases = staircase_cases();
        let curve = froc(&cases, None).unwrap();
        // oracle: recount at a dense grid of thresholds, keep the distinct
        // points in sweep order
        let mut oracle: Vec<(f64, f64)> = Vec::new();
        let mut grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        grid.reverse();
        for t in grid {
            let (mut tp, mut fp) = (0, 0);
            for c in &cases {
                for cand in &c.candidates {
                    if cand.peak_score >= t {
                        if cand.matched {
                            tp += 1
                        } else {
                            fp += 1
                        }
                    }
                }
            }
            let pt = (fp as f64 / 2.0, tp as f64 / 4.0);
            if oracle.last() != Some(&pt) {
                oracle.push(pt);
            }
        }
        let got: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpp, p.tpr)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn perfect_detector_pins_top_left() {
        let cases = vec![FrocCase {
            n_lesions: 1,
            candidates: vec![cand(0.8, true)],
        }];
        let curve = froc(&cases, None).unwrap();
        assert_eq!(
            curve.points,
            vec![
                FrocPoint { fpp: 0.0, tpr: 0.0 },
                FrocPoint { fpp: 0.0, tpr: 1.0 }
            ]
        );
        assert_eq!(curve.tpr_at_fpp(0.0).unwrap(), 1.0);
        assert_eq!(curve.tpr_at_fpp(3.0).unwrap(), 1.0);
        assert_eq!(curve.fpp_at_tpr(1.0).unwrap(), Some(0.0));
    }

    #[test]
    fn operating_points_on_staircase() {
        let curve = froc(&staircase_cases(), None).unwrap();
        // between x=0.5 and x=1 the polyline runs flat at 0.25
        assert_eq!(curve.tpr_at_fpp(0.75).unwrap(), 0.25);
        // at x=1 the vertical run tops out at 0.75
        assert_eq!(curve.tpr_at_fpp(1.0).unwrap(), 0.75);
        assert_eq!(curve.tpr_at_fpp(0.0).unwrap(), 0.25);
        assert_eq!(curve.tpr_at_fpp(9.0).unwrap(), 0.75);
        // sensitivity 0.25 is already reached at zero budget
        assert_eq!(curve.fpp_at_tpr(0.25).unwrap(), Some(0.0));
        // 0.65 and 0.70 are only reached at the x=1 vertical
        assert_eq!(curve.fpp_at_tpr(0.65).unwrap(), Some(1.0));
        assert_eq!(curve.fpp_at_tpr(0.70).unwrap(), Some(1.0));
        assert_eq!(curve.fpp_at_tpr(0.8).unwrap(), None);
    }

    #[test]
    fn diagonal_segment_interpolates() {
        // one case, two lesions; a TP and an FP share peak 0.5, so the
        // sweep jumps diagonally from (0, 0.5) to (1, 1.0)
        let cases = vec![FrocCase {
            n_lesions: 2,
            candidates: vec![cand(0.8, true), cand(0.5, false), cand(0.5, true)],
        }];
        let curve = froc(&cases, None).unwrap();
        assert_eq!(
            curve.points,
            vec![
                FrocPoint { fpp: 0.0, tpr: 0.0 },
                FrocPoint { fpp: 0.0, tpr: 0.5 },
                FrocPoint { fpp: 1.0, tpr: 1.0 }
            ]
        );
        assert_eq!(curve.tpr_at_fpp(0.5).unwrap(), 0.75);
        assert_eq!(curve.fpp_at_tpr(0.75).unwrap(), Some(0.5));
    }

    #[test]
    fn custom_thresholds_subsample_the_curve() {
        let curve = froc(&staircase_cases(), Some(&[0.65, 0.45])).unwrap();
        // t=0.65: keeps 0.9 TP, 0.7 FP -> (0.5, 0.25)
        // t=0.45: adds 0.6 FP, 0.5 TP -> (1.0, 0.5)
        assert_eq!(
            curve.points,
            vec![
                FrocPoint {
                    fpp: 0.5,
                    tpr: 0.25
                },
                FrocPoint { fpp: 1.0, tpr: 0.5 }
            ]
        );
    }

    #[test]
    fn tpr_below_curve_start_is_zero() {
        // every candidate peaks at 1.0, so even threshold 1.0 keeps the FP
        let cases = vec![FrocCase {
            n_lesions: 1,
            candidates: vec![cand(1.0, true), cand(1.0, false)],
        }];
        let curve = froc(&cases, None).unwrap();
        assert_eq!(curve.points, vec![FrocPoint { fpp: 1.0, tpr: 1.0 }]);
        assert_eq!(curve.tpr_at_fpp(0.5).unwrap(), 0.0);
    }

    #[test]
    fn monotone_along_sweep() {
        let cases = staircase_cases();
        let curve = froc(&cases, None).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].fpp >= w[0].fpp);
            assert!(w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(froc(&[], None), Err(Error::Input(_))));
        let no_lesions = vec![FrocCase {
            n_lesions: 0,
            candidates: vec![cand(0.5, false)],
        }];
        assert!(matches!(
            froc(&no_lesions, None),
            Err(Error::DegenerateData(_))
        ));
        let cases = staircase_cases();
        assert!(froc(&cases, Some(&[])).is_err());
        assert!(froc(&cases, Some(&[f64::NAN])).is_err());
        let curve = froc(&cases, None).unwrap();
        assert!(curve.tpr_at_fpp(-0.1).is_err());
        assert!(curve.fpp_at_tpr(1.5).is_err());
    }
}
