//! Logistic MLP `d → h → 1` over a flat parameter vector.
//!
//! Layout: `W1` (h×d, row-major), `b1` (h), `W2` (h), `b2` (1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{LocalDataset, FlError};
use crate::canonical::{f64_17, parse_f64_17};

pub const DEFAULT_HIDDEN: usize = 8;

/// Flat parameter vector. Serialized as decimal strings with 17 significant digits.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn zeros(d: usize, h: usize) -> Self {
        ModelParams(vec![0.0; param_len(d, h)])
    }

    /// Uniform in `[-0.5, 0.5]` from a ChaCha8 stream.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams((0..param_len(d, h)).map(|_| rng.gen_range(-0.5..=0.5)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Hidden width implied by the vector length for input dimension `d`.
    pub fn hidden_for(&self, d: usize) -> Result<usize, FlError> {
        let n = self.0.len();
        if n < d + 3 || (n - 1) % (d + 2) != 0 {
            return Err(FlError::DimensionMismatch { expected: param_len(d, DEFAULT_HIDDEN), got: n });
        }
        Ok((n - 1) / (d + 2))
    }
}

pub fn param_len(d: usize, h: usize) -> usize {
    (d + 1) * h + (h + 1)
}

impl Serialize for ModelParams {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|x| f64_17(*x)))
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| parse_f64_17(s).ok_or_else(|| serde::de::Error::custom(format!("bad parameter {s:?}"))))
            .collect::<Result<Vec<_>, _>>()
            .map(ModelParams)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-y ln σ(z) - (1-y) ln(1-σ(z))` computed from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

struct View<'a> {
    d: usize,
    h: usize,
    p: &'a [f64],
}

impl<'a> View<'a> {
    fn new(params: &'a ModelParams, d: usize) -> Result<Self, FlError> {
        let h = params.hidden_for(d)?;
        Ok(View { d, h, p: &params.0 })
    }

    fn w1(&self, j: usize, k: usize) -> f64 {
        self.p[j * self.d + k]
    }
    fn b1(&self, j: usize) -> f64 {
        self.p[self.h * self.d + j]
    }
    fn w2(&self, j: usize) -> f64 {
        self.p[self.h * self.d + self.h + j]
    }
    fn b2(&self) -> f64 {
        self.p[self.h * self.d + 2 * self.h]
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for (j, a) in out.iter_mut().enumerate() {
            let mut z = self.b1(j);
            for (k, xk) in x.iter().enumerate() {
                z += self.w1(j, k) * xk;
            }
            *a = sigmoid(z);
        }
    }

    fn logit(&self, a: &[f64]) -> f64 {
        let mut z = self.b2();
        for (j, aj) in a.iter().enumerate() {
            z += self.w2(j) * aj;
        }
        z
    }
}

/// Output logit for one feature vector.
pub fn logit(params: &ModelParams, x: &[f64]) -> Result<f64, FlError> {
    let v = View::new(params, x.len())?;
    let mut a = vec![0.0; v.h];
    v.hidden(x, &mut a);
    Ok(v.logit(&a))
}

/// Probability of the positive class.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<f64, FlError> {
    logit(params, x).map(sigmoid)
}

/// Mean binary cross-entropy over the dataset.
pub fn loss(params: &ModelParams, data: &LocalDataset) -> Result<f64, FlError> {
    let v = View::new(params, data.dim())?;
    let mut a = vec![0.0; v.h];
    let mut total = 0.0;
    for row in &data.rows {
        v.hidden(&row.features, &mut a);
        total += bce_from_logit(v.logit(&a), row.label);
    }
    Ok(total / data.rows.len() as f64)
}

/// Analytic gradient of the mean loss.
pub fn gradient(params: &ModelParams, data: &LocalDataset) -> Result<Vec<f64>, FlError> {
    let v = View::new(params, data.dim())?;
    let (d, h) = (v.d, v.h);
    let mut g = vec![0.0; params.len()];
    let mut a = vec![0.0; h];
    let n = data.rows.len() as f64;
    for row in &data.rows {
        v.hidden(&row.features, &mut a);
        let dz2 = sigmoid(v.logit(&a)) - row.label;
        for j in 0..h {
            g[h * d + h + j] += dz2 * a[j];
            let dz1 = dz2 * v.w2(j) * a[j] * (1.0 - a[j]);
            for k in 0..d {
                g[j * d + k] += dz1 * row.features[k];
            }
            g[h * d + j] += dz1;
        }
        g[h * d + 2 * h] += dz2;
    }
    for x in &mut g {
        *x /= n;
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

/// Full-batch gradient descent. Returns the new parameters and the loss after training.
pub fn local_train(params: &ModelParams, data: &LocalDataset, cfg: TrainConfig) -> Result<(ModelParams, f64), FlError> {
    if data.rows.is_empty() {
        return Err(FlError::EmptyDataset { skipped: data.skipped });
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(FlError::InvalidConfig(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let mut p = params.clone();
    for epoch in 0..cfg.epochs {
        let g = gradient(&p, data)?;
        for (w, gi) in p.0.iter_mut().zip(&g) {
            *w -= cfg.lr * gi;
        }
        if !p.is_finite() {
            return Err(FlError::NonFinite { epoch, what: "parameters".into() });
        }
    }
    let l = loss(&p, data)?;
    if !l.is_finite() {
        return Err(FlError::NonFinite { epoch: cfg.epochs, what: "loss".into() });
    }
    Ok((p, l))
}
