//! Brute-force reference implementations, kept independent of the library
//! code paths they check. Shared with the acceptance suite.

#![allow(dead_code)]

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// `-T ln sum_i exp(f_i / T)` with no max shift. Only valid for small logits.
pub fn naive_energy(f: &[f64], t: f64) -> f64 {
    -t * compensated_sum(f.iter().map(|v| (v / t).exp())).ln()
}

/// Pairwise Mann-Whitney AUROC.
pub fn brute_auroc(ins: &[f64], outs: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &i in ins {
        for &o in outs {
            if i > o {
                twice += 2;
            } else if i == o {
                twice += 1;
            }
        }
    }
    twice as f64 / 2.0 / (ins.len() as f64 * outs.len() as f64)
}

/// FPR at the largest candidate threshold (from `-inf` and the in-scores)
/// that still passes at least `q` of the in-scores under `score > t`.
pub fn brute_fpr(ins: &[f64], outs: &[f64], q: f64) -> f64 {
    let n = ins.len() as f64;
    let mut best = f64::NEG_INFINITY;
    for &t in ins {
        let pass = ins.iter().filter(|&&s| s > t).count() as f64 / n;
        if pass >= q && t > best {
            best = t;
        }
    }
    outs.iter().filter(|&&s| s > best).count() as f64 / outs.len() as f64
}

/// Largest candidate threshold with pass rate >= q; `-inf` if none.
pub fn brute_threshold(ins: &[f64], q: f64) -> f64 {
    let n = ins.len() as f64;
    ins.iter()
        .copied()
        .filter(|&t| ins.iter().filter(|&&s| s > t).count() as f64 / n >= q)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Average precision by sweeping every distinct threshold from the top,
/// predicting positive when `score >= t`.
pub fn brute_aupr(ins: &[f64], outs: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = ins.iter().chain(outs).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = ins.len() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let tp = ins.iter().filter(|&&s| s >= t).count() as f64;
        let fp = outs.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / n_pos;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
    }
    ap
}

/// Central finite differences of `loss` around `params`.
pub fn finite_diff(params: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(numerical: f64, analytical: f64) -> f64 {
    let num = (numerical - analytical).abs();
    let den = (numerical.abs() + analytical.abs()).max(1e-8);
    num / den
}

pub fn max_relative_error(numerical: &[f64], analytical: &[f64]) -> f64 {
    numerical
        .iter()
        .zip(analytical)
        .map(|(&n, &a)| relative_error(n, a))
        .fold(0.0, f64::max)
}

/// Small deterministic generator for test fixtures (SplitMix64).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Scores on a coarse grid so ties are common.
    pub fn tied_scores(&mut self, n: usize, levels: usize) -> Vec<f64> {
        (0..n)
            .map(|_| self.below(levels) as f64 * 0.5 - 3.0)
            .collect()
    }

    /// Random score set with 1..=max per side, sometimes tied, sometimes continuous.
    pub fn score_set(&mut self, max: usize) -> (Vec<f64>, Vec<f64>) {
        let ni = 1 + self.below(max);
        let no = 1 + self.below(max);
        if self.below(2) == 0 {
            let levels = 1 + self.below(20);
            (self.tied_scores(ni, levels), self.tied_scores(no, levels))
        } else {
            let shift = self.uniform(-1.0, 2.0);
            (
                (0..ni).map(|_| self.uniform(-2.0, 2.0) + shift).collect(),
                (0..no).map(|_| self.uniform(-2.0, 2.0)).collect(),
            )
        }
    }
}
