//! Random models, batches and margins for gradient checks.

#![allow(dead_code)]

use energy_ood::mlp::{
    self, backward, energies, Batch, LossSpec, MlpConfig, MlpModel, TrainConfig,
};
use energy_ood::scores::Temperature;

use super::oracles::{finite_diff, max_relative_error, TestRng};

pub const H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;
pub const MODELS: u64 = 24;

pub fn random_model(rng: &mut TestRng) -> MlpModel {
    let d = 2 + rng.below(3);
    let mut sizes = vec![d];
    for _ in 0..1 + rng.below(2) {
        sizes.push(3 + rng.below(4));
    }
    sizes.push(2 + rng.below(4));
    let mut m = mlp::init(&MlpConfig::new(sizes).unwrap(), rng.next_u64()).unwrap();
    // Nonzero biases so the check does not only see the init pattern.
    let p: Vec<f64> = m
        .params_flat()
        .iter()
        .map(|w| w + rng.uniform(-0.2, 0.2))
        .collect();
    m.set_params_flat(&p).unwrap();
    m
}

fn inputs(rng: &mut TestRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect())
        .collect()
}

fn labeled(rng: &mut TestRng, n: usize, d: usize, k: usize) -> Batch {
    let x = inputs(rng, n, d);
    let y = (0..n).map(|_| rng.below(k)).collect();
    Batch::labeled(x, y).unwrap()
}

/// A single margin placed in the widest gap between the middle energies, so
/// both hinges are active on some samples and none sits near its kink.
fn margin_between(model: &MlpModel, a: &Batch, b: &Batch) -> Option<f64> {
    let mut e = energies(model, a).unwrap();
    e.extend(energies(model, b).unwrap());
    e.sort_by(f64::total_cmp);
    let (lo, hi) = (e.len() / 4, 3 * e.len() / 4);
    let i = (lo..hi.max(lo + 1))
        .max_by(|&i, &j| (e[i + 1] - e[i]).total_cmp(&(e[j + 1] - e[j])))
        .unwrap();
    (e[i + 1] - e[i] > 1e-3).then(|| 0.5 * (e[i] + e[i + 1]))
}

pub fn with_params(model: &MlpModel, p: &[f64]) -> MlpModel {
    let mut m = model.clone();
    m.set_params_flat(p).unwrap();
    m
}

pub struct Case {
    pub model: MlpModel,
    pub in_batch: Batch,
    pub out_batch: Batch,
    pub cfg: TrainConfig,
}

pub fn case(seed: u64) -> Case {
    let mut rng = TestRng::new(seed);
    // Redraw until the energies leave room for a margin (a mostly dead
    // ReLU net can map every input to the same energy).
    let (model, in_batch, out_batch, m) = loop {
        let model = random_model(&mut rng);
        let (d, k) = (model.config.input_dim(), model.config.num_classes());
        let in_batch = labeled(&mut rng, 6, d, k);
        let out_batch = Batch::unlabeled(inputs(&mut rng, 7, d));
        if let Some(m) = margin_between(&model, &in_batch, &out_batch) {
            break (model, in_batch, out_batch, m);
        }
    };
    let cfg = TrainConfig {
        lambda: 0.1 + rng.uniform(0.0, 0.5),
        m_in: m,
        m_out: m,
        temp: Temperature::new(rng.uniform(0.5, 3.0)).unwrap(),
        ..TrainConfig::default()
    };
    Case {
        model,
        in_batch,
        out_batch,
        cfg,
    }
}

/// Largest per-parameter relative error between `backward` and central
/// differences of `loss`. Also checks the loss value `backward` reports.
pub fn grad_error(model: &MlpModel, spec: LossSpec<'_>, loss: impl Fn(&MlpModel) -> f64) -> f64 {
    let (value, grads) = backward(model, &spec).unwrap();
    assert!(
        (value - loss(model)).abs() <= 1e-12 * value.abs().max(1.0),
        "loss value"
    );
    let analytic = grads.flat();
    let p = model.params_flat();
    let numeric = finite_diff(&p, H, |q| loss(&with_params(model, q)));
    max_relative_error(&numeric, &analytic)
}
