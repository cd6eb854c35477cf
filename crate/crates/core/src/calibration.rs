//! Per-class sigmoid (Platt) calibration of multi-class probabilities.
//!
//! Each class gets a map `p -> sigmoid(a * logit(p) + b)` fitted by maximum
//! likelihood one-vs-rest on a validation set, after which the calibrated
//! vector is renormalised onto the simplex. With `a = 1, b = 0` the map is
//! the identity, so a well-calibrated input stays close to where it was.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLIP: f64 = 1e-3;
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-10;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(CLIP, 1.0 - CLIP);
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmoidMap {
    /// Raw score passed through unchanged.
    Identity,
    Platt { slope: f64, intercept: f64 },
}

impl SigmoidMap {
    pub fn apply(&self, raw: f64) -> f64 {
        match *self {
            SigmoidMap::Identity => raw,
            SigmoidMap::Platt { slope, intercept } => sigmoid(slope * logit(raw) + intercept),
        }
    }

    /// Fits one class. Targets are smoothed towards 1/2 as in Platt's
    /// original procedure, which keeps the optimum finite on separable data.
    /// Falls back to the identity when the labels carry no information.
    pub fn fit(raw: &[f64], positive: &[bool]) -> SigmoidMap {
        let n_pos = positive.iter().filter(|&&p| p).count();
        let n_neg = positive.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return SigmoidMap::Identity;
        }
        let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
        let lo = 1.0 / (n_neg as f64 + 2.0);
        let z: Vec<f64> = raw.iter().map(|&p| logit(p)).collect();
        let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

        let loss = |a: f64, b: f64| -> f64 {
            z.iter()
                .zip(&t)
                .map(|(&zi, &ti)| {
                    let f = a * zi + b;
                    // log(1 + e^f) - t f, computed stably
                    let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
                    softplus - ti * f
                })
                .sum()
        };

        let (mut a, mut b) = (1.0, 0.0);
        let mut current = loss(a, b);
        for _ in 0..MAX_ITER {
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&zi, &ti) in z.iter().zip(&t) {
                let s = sigmoid(a * zi + b);
                let d = s - ti;
                let w = s * (1.0 - s);
                ga += d * zi;
                gb += d;
                haa += w * zi * zi;
                hab += w * zi;
                hbb += w;
            }
            haa += RIDGE;
            hbb += RIDGE;
            let det = haa * hbb - hab * hab;
            if det <= 0.0 || !det.is_finite() {
                break;
            }
            let da = -(hbb * ga - hab * gb) / det;
            let db = -(haa * gb - hab * ga) / det;
            let mut step = 1.0;
            let mut improved = false;
            while step > 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let next = loss(na, nb);
                if next <= current + 1e-4 * step * (ga * da + gb * db) {
                    a = na;
                    b = nb;
                    current = next;
                    improved = true;
                    break;
                }
                step /= 2.0;
            }
            if !improved || (step * da).abs().max((step * db).abs()) < TOL {
                break;
            }
        }
        if a.is_finite() && b.is_finite() {
            SigmoidMap::Platt { slope: a, intercept: b }
        } else {
            SigmoidMap::Identity
        }
    }
}

/// One sigmoid map per class followed by renormalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub maps: Vec<SigmoidMap>,
}

impl Calibrator {
    pub fn identity(n_classes: usize) -> Self {
        Self { maps: vec![SigmoidMap::Identity; n_classes] }
    }

    pub fn is_identity(&self) -> bool {
        self.maps.iter().all(|m| *m == SigmoidMap::Identity)
    }

    pub fn n_classes(&self) -> usize {
        self.maps.len()
    }

    /// Fits per-class maps on raw probability rows and labels.
    pub fn fit<R: AsRef<[f64]>>(raw: &[R], y: &[usize], n_classes: usize) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput("calibration set"));
        }
        if raw.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: raw.len(), got: y.len() });
        }
        for row in raw {
            if row.as_ref().len() != n_classes {
                return Err(Error::DimensionMismatch { expected: n_classes, got: row.as_ref().len() });
            }
        }
        let maps = (0..n_classes)
            .map(|c| {
                let scores: Vec<f64> = raw.iter().map(|r| r.as_ref()[c]).collect();
                let positive: Vec<bool> = y.iter().map(|&l| l == c).collect();
                SigmoidMap::fit(&scores, &positive)
            })
            .collect();
        Ok(Self { maps })
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.maps.len() {
            return Err(Error::DimensionMismatch { expected: self.maps.len(), got: raw.len() });
        }
        if self.is_identity() {
            return Ok(raw.to_vec());
        }
        let mut out: Vec<f64> = self.maps.iter().zip(raw).map(|(m, &p)| m.apply(p)).collect();
        let total: f64 = out.iter().sum();
        if total > 0.0 && total.is_finite() {
            out.iter_mut().for_each(|p| *p /= total);
        } else {
            let u = 1.0 / out.len() as f64;
            out.iter_mut().for_each(|p| *p = u);
        }
        Ok(out)
    }
}
