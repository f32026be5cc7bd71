//! Scoring functions over classifier logits.
//!
//! The energy of an input under a K-way classifier is the negative
//! temperature-scaled log partition function of its logits,
//! `E(x) = -T * log sum_i exp(f_i(x) / T)`. Lower energy means the input looks
//! more like training data. All computations use the max-shifted
//! log-sum-exp so they stay finite for any finite logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One classifier output `f(x)`. Non-empty and finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("logit vector must have at least one class"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of classes K.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Self {
        v.0
    }
}

/// Softmax temperature, strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Self(t))
        } else {
            Err(Error::invalid(format!(
                "temperature must be positive and finite, got {t}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::ONE
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> Self {
        t.0
    }
}

/// Which scalar is derived from a logit vector. All kinds follow the
/// "higher means more in-distribution" convention except [`ScoreKind::Energy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Raw energy `E(x)`; lower is more in-distribution.
    Energy,
    NegEnergy,
    Msp,
}

impl ScoreKind {
    pub fn score(self, logits: &LogitVector, temp: Temperature) -> f64 {
        match self {
            ScoreKind::Energy => energy_score(logits, temp),
            ScoreKind::NegEnergy => neg_energy_score(logits, temp),
            ScoreKind::Msp => msp_score(logits),
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `log sum_i exp(x_i)` with the max shift. `x` must be non-empty.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Temperature-scaled softmax over a raw slice. Used by the training code,
/// which already guarantees finiteness.
pub(crate) fn softmax_slice(x: &[f64], t: f64, out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = ((v - m) / t).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub(crate) fn energy_slice(x: &[f64], t: f64) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|&v| ((v - m) / t).exp()).sum();
    -(m + t * s.ln())
}

/// Free energy `-T * log sum_i exp(f_i / T)`.
pub fn energy_score(logits: &LogitVector, temp: Temperature) -> f64 {
    energy_slice(logits.as_slice(), temp.get())
}

/// `-E(x, y) = f_y(x)` negated: the energy of a single (input, label) pair.
pub fn label_energy(logits: &LogitVector, label: usize) -> Result<f64> {
    logits
        .as_slice()
        .get(label)
        .map(|&f| -f)
        .ok_or(Error::IndexOutOfRange {
            index: label,
            len: logits.len(),
        })
}

pub fn softmax(logits: &LogitVector, temp: Temperature) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_slice(logits.as_slice(), temp.get(), &mut out);
    out
}

/// Maximum softmax probability at `T = 1`.
pub fn msp_score(logits: &LogitVector) -> f64 {
    // The arg-max term of the shifted softmax is exp(0) = 1, so
    // msp = 1 / sum_i exp(f_i - max).
    let m = logits.max();
    let s: f64 = logits.as_slice().iter().map(|&v| (v - m).exp()).sum();
    1.0 / s
}

/// `-E(x)`, the detector's score axis.
pub fn neg_energy_score(logits: &LogitVector, temp: Temperature) -> f64 {
    -energy_score(logits, temp)
}

/// Scores a batch in parallel. Output order matches input order.
pub fn score_batch(logits: &[LogitVector], kind: ScoreKind, temp: Temperature) -> Vec<f64> {
    use rayon::prelude::*;
    logits.par_iter().map(|l| kind.score(l, temp)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn energy_examples() {
        assert!((energy_score(&lv(&[0.0; 10]), t(1.0)) + 10f64.ln()).abs() < 1e-12);
        assert!((energy_score(&lv(&[1.0, 2.0, 3.0]), t(1.0)) + 3.407_605_964_444_38).abs() < 1e-12);
        assert!(
            (energy_score(&lv(&[1.0, 2.0, 3.0]), t(2.0)) + 4.360_539_341_283_469).abs() < 1e-12
        );
        let big = energy_score(&lv(&[1000.0, 1000.0]), t(1.0));
        assert!((big + (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(LogitVector::new(vec![]).is_err());
        assert!(LogitVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
    }

    #[test]
    fn label_energy_examples() {
        assert_eq!(label_energy(&lv(&[1.0, 2.0, 3.0]), 2).unwrap(), -3.0);
        assert_eq!(label_energy(&lv(&[0.0, 0.0]), 0).unwrap(), 0.0);
        assert_eq!(label_energy(&lv(&[-4.5, 7.25]), 1).unwrap(), -7.25);
        assert!(matches!(
            label_energy(&lv(&[1.0]), 1),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn softmax_and_msp_examples() {
        assert_eq!(softmax(&lv(&[0.0, 0.0]), t(1.0)), vec![0.5, 0.5]);
        let p = softmax(&lv(&[1.0, 2.0, 3.0]), t(1.0));
        let want = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = softmax(&lv(&[3.3; 7]), t(0.2));
        assert!(u.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));

        assert_eq!(msp_score(&lv(&[0.0, 0.0])), 0.5);
        assert!((msp_score(&lv(&[1.0, 2.0, 3.0])) - want[2]).abs() < 1e-12);
        assert_eq!(msp_score(&lv(&[7.0])), 1.0);
    }

    #[test]
    fn neg_energy_examples() {
        assert!((neg_energy_score(&lv(&[0.0; 10]), t(1.0)) - 10f64.ln()).abs() < 1e-12);
        assert!(
            (neg_energy_score(&lv(&[1.0, 2.0, 3.0]), t(1.0)) - 3.407_605_964_444_38).abs() < 1e-12
        );
    }

    #[test]
    fn single_class() {
        let l = lv(&[-2.5]);
        assert_eq!(energy_score(&l, t(3.0)), 2.5);
        assert_eq!(msp_score(&l), 1.0);
    }

    #[test]
    fn batch_preserves_order() {
        let batch: Vec<_> = (0..100).map(|i| lv(&[i as f64, 0.0])).collect();
        let s = score_batch(&batch, ScoreKind::NegEnergy, Temperature::ONE);
        for (i, v) in s.iter().enumerate() {
            assert_eq!(*v, neg_energy_score(&batch[i], Temperature::ONE));
        }
    }

    #[test]
    fn stable_for_large_magnitudes() {
        for m in [1e2, 1e3, 1e4, -1e4] {
            let l = lv(&[m, -m, 0.5 * m, m]);
            for temp in [0.01, 1.0, 1000.0] {
                assert!(energy_score(&l, t(temp)).is_finite());
                assert!(softmax(&l, t(temp)).iter().all(|p| p.is_finite()));
            }
        }
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, 1..64)
    }

    proptest! {
        #[test]
        fn shift_covariance(f in logits_strategy(), c in -50.0f64..50.0, temp in 0.05f64..20.0) {
            let a = energy_score(&lv(&f), t(temp));
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let b = energy_score(&lv(&shifted), t(temp));
            prop_assert!((b - (a - c)).abs() < 1e-10);
        }

        #[test]
        fn softmax_shift_invariance(f in logits_strategy(), c in -50.0f64..50.0, temp in 0.05f64..20.0) {
            let p = softmax(&lv(&f), t(temp));
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let q = softmax(&lv(&shifted), t(temp));
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn smooth_max_bound(f in logits_strategy(), temp in 0.05f64..20.0) {
            let l = lv(&f);
            let e = energy_score(&l, t(temp));
            let m = l.max();
            let k = f.len() as f64;
            prop_assert!(e <= -m + 1e-12);
            prop_assert!(e >= -m - temp * k.ln() - 1e-12);
        }
    }
}
