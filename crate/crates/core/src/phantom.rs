//! Synthetic ground-truth phantoms: an ellipsoidal gland with spherical
//! lesions on a constant background, rendered through the mono-exponential
//! signal model so every downstream module can be verified in closed loop.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::matching::LesionAnnotation;
use crate::signal::{AdcFitResult, DwiObservation, DwiSeries, ADC_MAX, ADC_SCALE};
use crate::volume::{MaskVolume, Volume3D};

/// Default apparent diffusion coefficients, 1e-6 mm^2/s. Lesions diffuse
/// slower than gland so they read hypointense on ADC maps.
pub const DEFAULT_GLAND_ADC: f64 = 1400.0;
pub const DEFAULT_LESION_ADC: f64 = 700.0;
pub const DEFAULT_BACKGROUND_ADC: f64 = 300.0;
/// Default unweighted signal for every region.
pub const DEFAULT_S0: f64 = 800.0;
/// Constant levels for the T2-weighted placeholder volume.
pub const T2W_BACKGROUND: f64 = 100.0;
pub const T2W_GLAND: f64 = 500.0;
pub const T2W_LESION: f64 = 300.0;
/// Spurious-blob parameters for oracle heatmaps.
pub const ORACLE_BLOB_RADIUS_MM: (f64, f64) = (1.0, 3.0);
pub const ORACLE_BLOB_SCORE: (f64, f64) = (0.30, 0.95);

fn default_gland_adc() -> f64 {
    DEFAULT_GLAND_ADC
}
fn default_lesion_adc() -> f64 {
    DEFAULT_LESION_ADC
}
fn default_s0() -> f64 {
    DEFAULT_S0
}
fn default_pirads() -> u8 {
    4
}
fn default_background() -> RegionSignal {
    RegionSignal {
        adc: DEFAULT_BACKGROUND_ADC,
        s0: DEFAULT_S0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlandSpec {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    #[serde(default = "default_gland_adc")]
    pub adc: f64,
    #[serde(default = "default_s0")]
    pub s0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub center_mm: [f64; 3],
    /// Zero renders as no voxels at all (an annotated-but-invisible lesion
    /// is dropped from the mask).
    pub radius_mm: f64,
    #[serde(default = "default_lesion_adc")]
    pub adc: f64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    #[serde(default = "default_pirads")]
    pub pirads: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSignal {
    pub adc: f64,
    pub s0: f64,
}

/// Noise applied to clean signal: none, or zero-mean Gaussian with a
/// standard deviation of `sigma` times the local clean value, clamped at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub gland: GlandSpec,
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
    #[serde(default = "default_background")]
    pub background: RegionSignal,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Everything one phantom case provides.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub series: DwiSeries,
    pub annotation: LesionAnnotation,
    pub gland: MaskVolume,
    /// The exact per-voxel (ADC, S0) used to render the series.
    pub truth: AdcFitResult,
}

fn check_signal(what: &str, adc: f64, s0: f64) -> Result<()> {
    if !adc.is_finite() || !(0.0..=ADC_MAX).contains(&adc) {
        return Err(Error::Spec(format!(
            "{what}: adc {adc} outside [0, {ADC_MAX}]"
        )));
    }
    if !s0.is_finite() || s0 <= 0.0 {
        return Err(Error::Spec(format!("{what}: s0 {s0} must be positive")));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Spec(format!("dims {:?} must be positive", self.dims)));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Spec(format!(
                "spacing {:?} must be positive",
                self.spacing
            )));
        }
        if self
            .gland
            .radii_mm
            .iter()
            .any(|r| !r.is_finite() || *r <= 0.0)
        {
            return Err(Error::Spec(format!(
                "gland radii {:?} must be positive",
                self.gland.radii_mm
            )));
        }
        check_signal("gland", self.gland.adc, self.gland.s0)?;
        check_signal("background", self.background.adc, self.background.s0)?;
        if self.lesions.len() > u8::MAX as usize {
            return Err(Error::Spec(format!(
                "{} lesions exceed the 255-label mask",
                self.lesions.len()
            )));
        }
        for (k, lesion) in self.lesions.iter().enumerate() {
            if !lesion.radius_mm.is_finite() || lesion.radius_mm < 0.0 {
                return Err(Error::Spec(format!(
                    "lesion {k}: radius {} must be >= 0",
                    lesion.radius_mm
                )));
            }
            check_signal(&format!("lesion {k}"), lesion.adc, lesion.s0)?;
            if !(1..=5).contains(&lesion.pirads) {
                return Err(Error::Spec(format!(
                    "lesion {k}: PI-RADS {} outside 1..=5",
                    lesion.pirads
                )));
            }
            if lesion.radius_mm > 0.0 {
                // conservative containment: the sphere must fit inside the
                // ellipsoid shrunk by the sphere radius on every axis
                let mut sum = 0.0;
                for i in 0..3 {
                    let margin = self.gland.radii_mm[i] - lesion.radius_mm;
                    if margin <= 0.0 {
                        return Err(Error::Spec(format!(
                            "lesion {k} does not fit inside the gland"
                        )));
                    }
                    let d = (lesion.center_mm[i] - self.gland.center_mm[i]) / margin;
                    sum += d * d;
                }
                if sum > 1.0 {
                    return Err(Error::Spec(format!("lesion {k} not inside the gland")));
                }
            }
        }
        if let NoiseSpec::Gaussian { sigma } = self.noise {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::Spec(format!("noise sigma {sigma} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn inside_ellipsoid(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    let mut sum = 0.0;
    for i in 0..3 {
        let d = (p[i] - c[i]) / r[i];
        sum += d * d;
    }
    sum <= 1.0
}

fn inside_sphere(p: [f64; 3], c: [f64; 3], radius: f64) -> bool {
    if radius <= 0.0 {
        return false;
    }
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius
}

// one substream per (seed, channel, voxel); the stream is the key, so any
// evaluation order produces the same draws
fn noise_rng(seed: u64, channel: u64, voxel: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&channel.to_le_bytes());
    key[16..24].copy_from_slice(&voxel.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Channel id for the T2w placeholder's noise stream; DWI volumes use
/// their rank in the ascending b-value order.
const T2W_CHANNEL: u64 = u64::MAX;

fn apply_noise(clean: Volume3D, noise: NoiseSpec, seed: u64, channel: u64) -> Volume3D {
    match noise {
        NoiseSpec::None => clean,
        NoiseSpec::Gaussian { sigma } => {
            let dims = clean.dims();
            let spacing = clean.spacing();
            let voxels: Vec<f64> = clean
                .voxels()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let g: f64 = StandardNormal.sample(&mut noise_rng(seed, channel, i as u64));
                    (v + sigma * v * g).max(0.0)
                })
                .collect();
            Volume3D::new(dims, spacing, voxels).expect("same grid")
        }
    }
}

/// Render a phantom at the given b-values. Regions are decided at voxel
/// centers, lesions first in spec order, then gland, then background.
/// Lesion labels follow spec order (1-based) even when an earlier lesion
/// has zero radius and renders no voxels.
pub fn generate_phantom(spec: &PhantomSpec, b_values: &[f64]) -> Result<Phantom> {
    spec.validate()?;
    if b_values.len() < 2 {
        return Err(Error::Arity(format!(
            "phantom series needs >= 2 b-values, got {}",
            b_values.len()
        )));
    }
    let mut bs = b_values.to_vec();
    bs.sort_by(|a, b| a.total_cmp(b));

    let dims = spec.dims;
    let spacing = spec.spacing;
    let mut adc = Volume3D::filled(dims, spacing, 0.0)?;
    let mut s0 = Volume3D::filled(dims, spacing, 0.0)?;
    let mut gland = MaskVolume::filled(dims, spacing, 0)?;
    let mut lesion_mask = MaskVolume::filled(dims, spacing, 0)?;
    let mut seen = vec![false; spec.lesions.len()];

    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = adc.voxel_center_mm(x, y, z);
                let mut region = (spec.background.adc, spec.background.s0);
                if inside_ellipsoid(p, spec.gland.center_mm, spec.gland.radii_mm) {
                    gland.set(x, y, z, 1);
                    region = (spec.gland.adc, spec.gland.s0);
                }
                for (k, lesion) in spec.lesions.iter().enumerate() {
                    if inside_sphere(p, lesion.center_mm, lesion.radius_mm) {
                        region = (lesion.adc, lesion.s0);
                        lesion_mask.set(x, y, z, (k + 1) as u8);
                        seen[k] = true;
                        break;
                    }
                }
                adc.set(x, y, z, region.0);
                s0.set(x, y, z, region.1);
            }
        }
    }

    let mut pirads = BTreeMap::new();
    for (k, lesion) in spec.lesions.iter().enumerate() {
        if seen[k] {
            pirads.insert((k + 1) as u8, lesion.pirads);
        }
    }
    let annotation = LesionAnnotation::new(lesion_mask, pirads)?;

    let observations: Vec<DwiObservation> = bs
        .iter()
        .enumerate()
        .map(|(channel, &b)| {
            let clean = Volume3D::new(
                dims,
                spacing,
                adc.voxels()
                    .iter()
                    .zip(s0.voxels())
                    .map(|(&a, &s)| s * (-(b * a) / ADC_SCALE).exp())
                    .collect(),
            )
            .expect("same grid");
            DwiObservation {
                b_value: b,
                volume: apply_noise(clean, spec.noise, spec.seed, channel as u64),
            }
        })
        .collect();
    let series = DwiSeries::new(observations)?;

    let residual = Volume3D::filled(dims, spacing, 0.0)?;
    let truth = AdcFitResult::new(adc, s0, residual)?;
    Ok(Phantom {
        series,
        annotation,
        gland,
        truth,
    })
}

/// Constant-level T2w stand-in on the phantom grid, same noise model.
pub fn t2w_placeholder(spec: &PhantomSpec) -> Result<Volume3D> {
    spec.validate()?;
    let clean = Volume3D::from_fn(spec.dims, spec.spacing, |x, y, z| {
        let p = [
            (x as f64 + 0.5) * spec.spacing[0],
            (y as f64 + 0.5) * spec.spacing[1],
            (z as f64 + 0.5) * spec.spacing[2],
        ];
        for lesion in &spec.lesions {
            if inside_sphere(p, lesion.center_mm, lesion.radius_mm) {
                return T2W_LESION;
            }
        }
        if inside_ellipsoid(p, spec.gland.center_mm, spec.gland.radii_mm) {
            T2W_GLAND
        } else {
            T2W_BACKGROUND
        }
    })?;
    Ok(apply_noise(clean, spec.noise, spec.seed, T2W_CHANNEL))
}

/// Stand-in for a detection network: every lesion voxel scores `quality`,
/// plus Poisson(`fp_rate`) spurious spherical blobs with seeded centers,
/// radii and scores. Replaying the same inputs reproduces the volume
/// bitwise.
pub fn oracle_heatmap(
    annot: &LesionAnnotation,
    quality: f64,
    fp_rate: f64,
    seed: u64,
) -> Result<Volume3D> {
    if !quality.is_finite() || !(0.0..=1.0).contains(&quality) {
        return Err(Error::Input(format!("quality {quality} outside [0, 1]")));
    }
    if !fp_rate.is_finite() || fp_rate < 0.0 {
        return Err(Error::Input(format!("fp_rate {fp_rate} must be >= 0")));
    }
    let mask = annot.mask();
    let dims = mask.dims();
    let spacing = mask.spacing();
    let mut heat = Volume3D::filled(dims, spacing, 0.0)?;
    for (i, &label) in mask.labels().iter().enumerate() {
        if label != 0 {
            heat.voxels_mut()[i] = quality;
        }
    }

    if fp_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poisson = Poisson::new(fp_rate)
            .map_err(|e| Error::Input(format!("fp_rate {fp_rate}: {e}")))?;
        let n_blobs = poisson.sample(&mut rng) as usize;
        for _ in 0..n_blobs {
            let cx = rng.random_range(0..dims[0]);
            let cy = rng.random_range(0..dims[1]);
            let cz = rng.random_range(0..dims[2]);
            let radius = rng.random_range(ORACLE_BLOB_RADIUS_MM.0..=ORACLE_BLOB_RADIUS_MM.1);
            let score = rng.random_range(ORACLE_BLOB_SCORE.0..=ORACLE_BLOB_SCORE.1);
            let center = heat.voxel_center_mm(cx, cy, cz);
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let p = heat.voxel_center_mm(x, y, z);
                        if inside_sphere(p, center, radius) {
                            let i = heat.idx(x, y, z);
                            let v = heat.voxels()[i];
                            heat.voxels_mut()[i] = v.max(score);
                        }
                    }
                }
            }
        }
    }
    Ok(heat)
}
