//! Stochastic view generation for feature vectors and small rasters.
//!
//! A [`TransformSpec`] is an ordered list of steps, each firing independently
//! with its own probability. Rasters are flat channel-last arrays in `[0, 1]`.

mod raster;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Rng};

/// Layout of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleShape {
    Vector(usize),
    Raster {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Vector(d) => d,
            SampleShape::Raster {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_raster(&self) -> bool {
        matches!(self, SampleShape::Raster { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    GaussianNoise { sigma: f64 },
    /// Zeroes `round(fraction · d)` randomly chosen features.
    FeatureMask { fraction: f64 },
    /// Multiplies the whole sample by a factor drawn uniformly from `[low, high]`.
    RandomScale { low: f64, high: f64 },
    /// Crops a window covering at least `min_area` of the image and resizes it back.
    CropResize { min_area: f64 },
    HorizontalFlip,
    /// Brightness and contrast factors drawn from `[1 − strength, 1 + strength]`.
    ColorJitter { strength: f64 },
    Grayscale,
}

impl Transform {
    fn for_raster(&self) -> bool {
        matches!(
            self,
            Transform::CropResize { .. } | Transform::HorizontalFlip | Transform::ColorJitter { .. } | Transform::Grayscale
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Transform::GaussianNoise { sigma } => sigma.is_finite() && sigma >= 0.0,
            Transform::FeatureMask { fraction } => (0.0..=1.0).contains(&fraction),
            Transform::RandomScale { low, high } => low.is_finite() && high.is_finite() && 0.0 < low && low <= high,
            Transform::CropResize { min_area } => min_area > 0.0 && min_area <= 1.0,
            Transform::ColorJitter { strength } => (0.0..=1.0).contains(&strength),
            Transform::HorizontalFlip | Transform::Grayscale => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::argument(format!("transform parameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub transform: Transform,
    pub probability: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformSpec {
    steps: Vec<Step>,
}

impl TransformSpec {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        for s in &steps {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::argument(format!("step probability {} outside [0, 1]", s.probability)));
            }
            s.transform.validate()?;
        }
        Ok(Self { steps })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Noise σ=0.1, 20% feature mask and scaling in `[0.8, 1.25]`, each always applied.
    pub fn vector_default() -> Self {
        Self {
            steps: vec![
                Step {
                    transform: Transform::GaussianNoise { sigma: 0.1 },
                    probability: 1.0,
                },
                Step {
                    transform: Transform::FeatureMask { fraction: 0.2 },
                    probability: 1.0,
                },
                Step {
                    transform: Transform::RandomScale { low: 0.8, high: 1.25 },
                    probability: 1.0,
                },
            ],
        }
    }

    /// Crop-resize, flip, color jitter and grayscale; no blur at this resolution.
    pub fn raster_default() -> Self {
        Self {
            steps: vec![
                Step {
                    transform: Transform::CropResize { min_area: 0.5 },
                    probability: 1.0,
                },
                Step {
                    transform: Transform::HorizontalFlip,
                    probability: 0.5,
                },
                Step {
                    transform: Transform::ColorJitter { strength: 0.4 },
                    probability: 0.8,
                },
                Step {
                    transform: Transform::Grayscale,
                    probability: 0.2,
                },
            ],
        }
    }

    pub fn default_for(shape: SampleShape) -> Self {
        if shape.is_raster() {
            Self::raster_default()
        } else {
            Self::vector_default()
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn check_shape(&self, shape: SampleShape) -> Result<()> {
        for s in &self.steps {
            if s.transform.for_raster() != shape.is_raster() {
                return Err(Error::shape(format!("transform {:?} cannot apply to {shape:?}", s.transform)));
            }
        }
        Ok(())
    }
}

/// Applies every step of `spec` to one sample. Each step consumes its coin
/// flip even when it does not fire, so streams stay aligned across specs
/// with the same step count.
pub fn apply(spec: &TransformSpec, shape: SampleShape, rng: &mut Rng, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != shape.len() {
        return Err(Error::shape(format!("sample of length {} does not match {shape:?}", x.len())));
    }
    spec.check_shape(shape)?;
    let mut out = x.to_vec();
    for step in &spec.steps {
        if !rng.bernoulli(step.probability) {
            continue;
        }
        match step.transform {
            Transform::GaussianNoise { sigma } => {
                for v in &mut out {
                    *v += sigma * rng.normal();
                }
            }
            Transform::FeatureMask { fraction } => {
                let count = (fraction * out.len() as f64).round() as usize;
                let order = rng.permutation(out.len());
                for &i in &order[..count] {
                    out[i] = 0.0;
                }
            }
            Transform::RandomScale { low, high } => {
                let s = rng.uniform_range(low, high);
                for v in &mut out {
                    *v *= s;
                }
            }
            Transform::CropResize { min_area } => out = raster::crop_resize(&out, shape, min_area, rng),
            Transform::HorizontalFlip => raster::flip(&mut out, shape),
            Transform::ColorJitter { strength } => raster::jitter(&mut out, strength, rng),
            Transform::Grayscale => raster::grayscale(&mut out, shape),
        }
    }
    if shape.is_raster() {
        for v in &mut out {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// The raw sample and two independently augmented views.
pub fn make_views(spec: &TransformSpec, shape: SampleShape, rng: &mut Rng, x: &[f64]) -> Result<[Vec<f64>; 3]> {
    let x1 = apply(spec, shape, rng, x)?;
    let x2 = apply(spec, shape, rng, x)?;
    Ok([x.to_vec(), x1, x2])
}

/// Whether a network slot sees the raw sample or a fresh augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViewSource {
    Raw,
    Aug,
}

/// Sources for the anchor slot and the two view slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Routing(pub [ViewSource; 3]);

impl Routing {
    pub const RAW_AUG_AUG: Routing = Routing([ViewSource::Raw, ViewSource::Aug, ViewSource::Aug]);
    pub const AUG_AUG_AUG: Routing = Routing([ViewSource::Aug, ViewSource::Aug, ViewSource::Aug]);
    pub const RAW_RAW_RAW: Routing = Routing([ViewSource::Raw, ViewSource::Raw, ViewSource::Raw]);

    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|s| match s {
                ViewSource::Raw => "x",
                ViewSource::Aug => "T(x)",
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl Default for Routing {
    fn default() -> Self {
        Self::RAW_AUG_AUG
    }
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                ViewSource::Raw => "raw",
                ViewSource::Aug => "aug",
            })
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Routing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::argument(format!("input routing needs three comma-separated slots, got {s:?}")));
        }
        let mut slots = [ViewSource::Raw; 3];
        for (slot, p) in slots.iter_mut().zip(&parts) {
            *slot = match *p {
                "raw" => ViewSource::Raw,
                "aug" => ViewSource::Aug,
                other => return Err(Error::argument(format!("input slot must be raw or aug, got {other:?}"))),
            };
        }
        Ok(Routing(slots))
    }
}

/// Builds the three slot batches for a block of raw rows. Samples are
/// processed in row order; within a sample the slots draw in order 0, 1, 2.
pub fn route_batch(
    spec: &TransformSpec,
    routing: Routing,
    shape: SampleShape,
    rng: &mut Rng,
    x: &DenseMatrix,
) -> Result<[DenseMatrix; 3]> {
    let mut slots = [
        DenseMatrix::zeros(x.rows(), x.cols()),
        DenseMatrix::zeros(x.rows(), x.cols()),
        DenseMatrix::zeros(x.rows(), x.cols()),
    ];
    for (i, row) in x.row_iter().enumerate() {
        for (slot, source) in slots.iter_mut().zip(routing.0) {
            match source {
                ViewSource::Raw => slot.row_mut(i).copy_from_slice(row),
                ViewSource::Aug => slot.row_mut(i).copy_from_slice(&apply(spec, shape, rng, row)?),
            }
        }
    }
    Ok(slots)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for TransformSpec {
    /// `kind[:param…]@probability` entries joined by commas, or `none`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| {
                let body = match s.transform {
                    Transform::GaussianNoise { sigma } => format!("noise:{}", fmt_num(sigma)),
                    Transform::FeatureMask { fraction } => format!("mask:{}", fmt_num(fraction)),
                    Transform::RandomScale { low, high } => format!("scale:{}:{}", fmt_num(low), fmt_num(high)),
                    Transform::CropResize { min_area } => format!("crop:{}", fmt_num(min_area)),
                    Transform::HorizontalFlip => "flip".to_string(),
                    Transform::ColorJitter { strength } => format!("jitter:{}", fmt_num(strength)),
                    Transform::Grayscale => "gray".to_string(),
                };
                format!("{body}@{}", fmt_num(s.probability))
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::identity());
        }
        let bad = |item: &str, why: &str| Error::argument(format!("bad transform {item:?}: {why}"));
        let mut steps = Vec::new();
        for item in s.split(',').map(str::trim) {
            let (body, prob) = match item.split_once('@') {
                Some((b, p)) => (b, p.parse::<f64>().map_err(|_| bad(item, "probability is not a number"))?),
                None => (item, 1.0),
            };
            let mut fields = body.split(':');
            let kind = fields.next().unwrap_or_default();
            let params: Vec<f64> = fields
                .map(|p| p.parse::<f64>().map_err(|_| bad(item, "parameter is not a number")))
                .collect::<Result<_>>()?;
            let arity = |n: usize| if params.len() == n { Ok(()) } else { Err(bad(item, &format!("expected {n} parameters"))) };
            let transform = match kind {
                "noise" => {
                    arity(1)?;
                    Transform::GaussianNoise { sigma: params[0] }
                }
                "mask" => {
                    arity(1)?;
                    Transform::FeatureMask { fraction: params[0] }
                }
                "scale" => {
                    arity(2)?;
                    Transform::RandomScale {
                        low: params[0],
                        high: params[1],
                    }
                }
                "crop" => {
                    arity(1)?;
                    Transform::CropResize { min_area: params[0] }
                }
                "flip" => {
                    arity(0)?;
                    Transform::HorizontalFlip
                }
                "jitter" => {
                    arity(1)?;
                    Transform::ColorJitter { strength: params[0] }
                }
                "gray" => {
                    arity(0)?;
                    Transform::Grayscale
                }
                _ => return Err(bad(item, "unknown kind")),
            };
            steps.push(Step {
                transform,
                probability: prob,
            });
        }
        Self::new(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    const VEC5: SampleShape = SampleShape::Vector(5);

    fn spec(steps: &[(Transform, f64)]) -> TransformSpec {
        TransformSpec::new(
            steps
                .iter()
                .map(|&(transform, probability)| Step { transform, probability })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_spec_leaves_samples_alone() {
        let x = [1.0, -2.0, 3.0, 0.5, 0.0];
        let out = apply(&TransformSpec::identity(), VEC5, &mut Rng::new(0), &x).unwrap();
        assert_eq!(out, x);
        let [a, b, c] = make_views(&TransformSpec::identity(), VEC5, &mut Rng::new(0), &x).unwrap();
        assert_eq!((a.as_slice(), b.as_slice(), c.as_slice()), (&x[..], &x[..], &x[..]));
    }

    #[test]
    fn full_mask_zeroes_everything() {
        let s = spec(&[(Transform::FeatureMask { fraction: 1.0 }, 1.0)]);
        assert_eq!(apply(&s, VEC5, &mut Rng::new(3), &[1.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn noise_replays_the_seeded_stream() {
        let s = spec(&[(Transform::GaussianNoise { sigma: 0.1 }, 1.0)]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = apply(&s, VEC5, &mut Rng::new(12), &x).unwrap();
        let mut replay = Rng::new(12);
        assert!(replay.bernoulli(1.0));
        let expected: Vec<f64> = x.iter().map(|v| v + 0.1 * replay.normal()).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn views_are_independent_and_reproducible() {
        let x = [0.3, 0.1, -0.7, 2.0, 1.0];
        let s = TransformSpec::vector_default();
        let a = make_views(&s, VEC5, &mut Rng::new(5), &x).unwrap();
        let b = make_views(&s, VEC5, &mut Rng::new(5), &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], x);
        assert_ne!(a[1], a[2]);
    }

    #[test]
    fn modality_mismatch_is_a_shape_error() {
        let s = spec(&[(Transform::HorizontalFlip, 1.0)]);
        assert!(matches!(apply(&s, VEC5, &mut Rng::new(0), &[0.0; 5]), Err(Error::Shape(_))));
        let img = SampleShape::Raster {
            height: 2,
            width: 2,
            channels: 1,
        };
        let v = TransformSpec::vector_default();
        assert!(matches!(apply(&v, img, &mut Rng::new(0), &[0.0; 4]), Err(Error::Shape(_))));
        assert!(matches!(apply(&v, VEC5, &mut Rng::new(0), &[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        for t in [
            Transform::FeatureMask { fraction: 1.5 },
            Transform::GaussianNoise { sigma: -1.0 },
            Transform::RandomScale { low: 2.0, high: 1.0 },
            Transform::CropResize { min_area: 0.0 },
        ] {
            assert!(TransformSpec::new(vec![Step { transform: t, probability: 1.0 }]).is_err());
        }
        assert!(TransformSpec::new(vec![Step {
            transform: Transform::Grayscale,
            probability: 1.2
        }])
        .is_err());
    }

    #[test]
    fn text_round_trip() {
        for s in [TransformSpec::vector_default(), TransformSpec::raster_default(), TransformSpec::identity()] {
            let parsed: TransformSpec = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert!("blur:1@1".parse::<TransformSpec>().is_err());
        assert!("scale:1@1".parse::<TransformSpec>().is_err());
        assert_eq!("flip".parse::<TransformSpec>().unwrap().steps()[0].probability, 1.0);
    }

    #[test]
    fn routing_covers_the_ablation_rows() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0, 4.0, 5.0], [5.0, 4.0, 3.0, 2.0, 1.0]]).unwrap();
        let s = TransformSpec::vector_default();
        let raw: Routing = "raw,raw,raw".parse().unwrap();
        let [a, b, c] = route_batch(&s, raw, VEC5, &mut Rng::new(1), &x).unwrap();
        assert!(a == x && b == x && c == x);
        let [a, b, c] = route_batch(&s, Routing::AUG_AUG_AUG, VEC5, &mut Rng::new(1), &x).unwrap();
        assert!(a != x && b != x && c != x && b != c);
        let [a, b, _] = route_batch(&s, Routing::default(), VEC5, &mut Rng::new(1), &x).unwrap();
        assert!(a == x && b != x);
        assert_eq!(Routing::default().to_string(), "raw,aug,aug");
        assert_eq!(Routing::default().label(), "x + T(x) + T(x)");
        assert!("raw,aug".parse::<Routing>().is_err());
        assert!("raw,aug,blur".parse::<Routing>().is_err());
    }

    proptest! {
        #[test]
        fn vector_augmentation_keeps_shape_and_finiteness(
            x in prop::collection::vec(-10.0f64..10.0, 1..20),
            seed in 0u64..500,
        ) {
            let shape = SampleShape::Vector(x.len());
            let out = apply(&TransformSpec::vector_default(), shape, &mut Rng::new(seed), &x).unwrap();
            prop_assert_eq!(out.len(), x.len());
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn raster_augmentation_stays_in_range(
            h in 1usize..9, w in 1usize..9, c in prop::sample::select(vec![1usize, 3]),
            seed in 0u64..500,
        ) {
            let shape = SampleShape::Raster { height: h, width: w, channels: c };
            let mut rng = Rng::new(seed);
            let x: Vec<f64> = (0..shape.len()).map(|_| rng.uniform()).collect();
            let out = apply(&TransformSpec::raster_default(), shape, &mut rng, &x).unwrap();
            prop_assert_eq!(out.len(), x.len());
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
