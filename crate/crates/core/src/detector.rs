//! Threshold calibration and the binary in/out decision rule.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scores::{msp_score, neg_energy_score, LogitVector, Temperature};

/// Score family a detector threshold was calibrated on. Every kind is
/// oriented so that a higher score means "more in-distribution".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorScore {
    NegEnergy,
    Msp,
    NegEnergyGda,
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Accept iff `score > tau`. May be `-inf` (accept everything).
    #[serde(serialize_with = "ser_tau", deserialize_with = "de_tau")]
    pub tau: f64,
    pub target_tpr: f64,
    pub score_kind: DetectorScore,
}

fn ser_tau<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *tau == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*tau)
    }
}

fn de_tau<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Tau {
        Num(f64),
        Str(String),
    }
    match Tau::deserialize(d)? {
        Tau::Num(v) => Ok(v),
        Tau::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Tau::Str(s) => Err(serde::de::Error::custom(format!(
            "tau must be a number or \"-inf\", got {s:?}"
        ))),
    }
}

impl DetectorConfig {
    pub fn new(tau: f64, target_tpr: f64, score_kind: DetectorScore) -> Result<Self> {
        let cfg = Self {
            tau,
            target_tpr,
            score_kind,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_tpr(self.target_tpr)?;
        if self.tau.is_nan() || self.tau == f64::INFINITY {
            return Err(Error::invalid(format!("invalid threshold {}", self.tau)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn check_tpr(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "target TPR must be in (0, 1], got {q}"
        )))
    }
}

/// Outcome of thresholding one sample. `label` is 1 for in-distribution, 0 for OOD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub label: u8,
    pub score: f64,
}

impl Decision {
    pub fn is_in(&self) -> bool {
        self.label == 1
    }
}

/// Picks the largest threshold whose pass rate on `in_scores` is at least
/// `target_tpr`. With `N` scores and `k = floor(N (1 - q))`, the threshold is
/// the k-th smallest score, lowered to the next distinct value when ties
/// would otherwise drop the pass rate below `q`.
pub fn calibrate_threshold(in_scores: &[f64], target_tpr: f64) -> Result<DetectorConfig> {
    Ok(DetectorConfig {
        tau: threshold_for(in_scores, target_tpr)?,
        target_tpr,
        score_kind: DetectorScore::NegEnergy,
    })
}

/// Same as [`calibrate_threshold`], tagging the result with `kind`.
pub fn calibrate_for(
    in_scores: &[f64],
    target_tpr: f64,
    kind: DetectorScore,
) -> Result<DetectorConfig> {
    let mut cfg = calibrate_threshold(in_scores, target_tpr)?;
    cfg.score_kind = kind;
    Ok(cfg)
}

pub(crate) fn threshold_for(in_scores: &[f64], q: f64) -> Result<f64> {
    check_tpr(q)?;
    if in_scores.is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty score set"));
    }
    if let Some(i) = in_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!(
            "in-distribution score {i} is not finite ({})",
            in_scores[i]
        )));
    }
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;

    // k = floor(N (1 - q)), then nudged so that the pass-rate comparison
    // (N - k) / N >= q holds exactly in f64 for the largest such k.
    let mut k = ((nf * (1.0 - q)).floor() as usize).min(n);
    while k < n && ((n - k - 1) as f64 / nf) >= q {
        k += 1;
    }
    while k > 0 && ((n - k) as f64 / nf) < q {
        k -= 1;
    }
    if k == 0 {
        return Ok(f64::NEG_INFINITY);
    }

    let tau = sorted[k - 1];
    let passing = n - sorted.partition_point(|&s| s <= tau);
    if (passing as f64 / nf) >= q {
        return Ok(tau);
    }
    // Ties at tau: drop to the next distinct smaller value.
    let below = sorted.partition_point(|&s| s < tau);
    Ok(if below == 0 {
        f64::NEG_INFINITY
    } else {
        sorted[below - 1]
    })
}

/// Fraction of `scores` strictly above `tau`.
pub fn pass_rate(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s > tau).count() as f64 / scores.len() as f64
}

pub fn classify(score: f64, cfg: &DetectorConfig) -> Result<Decision> {
    if score.is_nan() {
        return Err(Error::invalid("cannot classify a NaN score"));
    }
    Ok(Decision {
        label: u8::from(score > cfg.tau),
        score,
    })
}

/// Result of the filter-then-classify pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Rejected,
    Class(usize),
}

/// Scores `logits` with the detector's score kind; OOD inputs are rejected,
/// the rest get the arg-max class.
pub fn filter_and_predict(
    logits: &LogitVector,
    cfg: &DetectorConfig,
    temp: Temperature,
) -> Result<Prediction> {
    let score = match cfg.score_kind {
        DetectorScore::NegEnergy => neg_energy_score(logits, temp),
        DetectorScore::Msp => msp_score(logits),
        other => {
            return Err(Error::invalid(format!(
                "filter_and_predict needs a logit-based detector, got {other:?}"
            )))
        }
    };
    Ok(if classify(score, cfg)?.is_in() {
        Prediction::Class(logits.argmax())
    } else {
        Prediction::Rejected
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau: f64) -> DetectorConfig {
        DetectorConfig::new(tau, 0.95, DetectorScore::NegEnergy).unwrap()
    }

    #[test]
    fn calibrate_examples() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        let c = calibrate_threshold(&s, 0.95).unwrap();
        assert_eq!(c.tau, 1.0);
        assert_eq!(pass_rate(&s, c.tau), 0.95);

        let c = calibrate_threshold(&[3.0, 1.0, 2.0, 4.0], 0.95).unwrap();
        assert_eq!(c.tau, f64::NEG_INFINITY);

        let c = calibrate_threshold(&[5.0; 20], 0.95).unwrap();
        assert_eq!(c.tau, f64::NEG_INFINITY);
        assert_eq!(pass_rate(&[5.0; 20], c.tau), 1.0);
    }

    #[test]
    fn calibrate_handles_inexact_products() {
        // 10 * (1 - 0.9) rounds just below 1 in f64.
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        let c = calibrate_threshold(&s, 0.9).unwrap();
        assert_eq!(c.tau, 0.0);
        assert!(pass_rate(&s, c.tau) >= 0.9);
    }

    #[test]
    fn calibrate_ties_lower_threshold() {
        let s = [1.0, 2.0, 2.0, 3.0, 4.0];
        // k = floor(5 * 0.4) = 2 -> tau = 2, but only 2/5 pass. Drop to 1.
        let c = calibrate_threshold(&s, 0.6).unwrap();
        assert_eq!(c.tau, 1.0);
        assert_eq!(pass_rate(&s, c.tau), 0.8);
    }

    #[test]
    fn calibrate_errors() {
        assert!(calibrate_threshold(&[], 0.95).is_err());
        assert!(calibrate_threshold(&[1.0, f64::NAN], 0.95).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.2).is_err());
    }

    #[test]
    fn full_tpr_accepts_all() {
        let c = calibrate_threshold(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(c.tau, f64::NEG_INFINITY);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(3.0, &cfg(2.0)).unwrap().label, 1);
        assert_eq!(classify(2.0, &cfg(2.0)).unwrap().label, 0);
        assert_eq!(classify(-100.0, &cfg(f64::NEG_INFINITY)).unwrap().label, 1);
        assert!(classify(f64::NAN, &cfg(0.0)).is_err());
    }

    #[test]
    fn filter_examples() {
        let t1 = Temperature::ONE;
        let l = LogitVector::new(vec![5.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            filter_and_predict(&l, &cfg(f64::NEG_INFINITY), t1).unwrap(),
            Prediction::Class(0)
        );
        let l = LogitVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            filter_and_predict(&l, &cfg(10.0), t1).unwrap(),
            Prediction::Rejected
        );
        let l = LogitVector::new(vec![2.0, 2.0]).unwrap();
        assert_eq!(
            filter_and_predict(&l, &cfg(f64::NEG_INFINITY), t1).unwrap(),
            Prediction::Class(0)
        );
        let gda = DetectorConfig::new(0.0, 0.95, DetectorScore::Mahalanobis).unwrap();
        assert!(filter_and_predict(&l, &gda, t1).is_err());
    }

    #[test]
    fn json_round_trip_with_neg_inf() {
        let c = cfg(f64::NEG_INFINITY);
        let s = c.to_json().unwrap();
        assert!(s.contains("\"-inf\""));
        assert_eq!(DetectorConfig::from_json(&s).unwrap(), c);

        let c = DetectorConfig::new(1.25, 0.9, DetectorScore::Msp).unwrap();
        assert_eq!(DetectorConfig::from_json(&c.to_json().unwrap()).unwrap(), c);

        assert!(
            DetectorConfig::from_json(r#"{"tau":"inf","target_tpr":0.9,"score_kind":"msp"}"#)
                .is_err()
        );
        assert!(
            DetectorConfig::from_json(r#"{"tau":1,"target_tpr":1.5,"score_kind":"msp"}"#).is_err()
        );
    }
}
