mod common;

use common::fixtures::{case, grad_error, FD_TOL, MODELS};
use energy_ood::mlp::{
    backward, energies, energy_reg_loss, nll_loss, nll_loss_free_energy, oe_loss, total_loss,
    Batch, LossSpec, MlpModel,
};
use energy_ood::scores::softmax;

fn check(name: &str, model: &MlpModel, spec: LossSpec<'_>, loss: impl Fn(&MlpModel) -> f64) {
    let err = grad_error(model, spec, loss);
    assert!(err < FD_TOL, "{name}: max relative error {err:e}");
}

#[test]
fn nll_gradient_matches_finite_differences() {
    for s in 0..MODELS {
        let c = case(s);
        let t = c.cfg.temp;
        check(
            "nll",
            &c.model,
            LossSpec::Nll {
                batch: &c.in_batch,
                temp: t,
            },
            |m| nll_loss(m, &c.in_batch, t).unwrap(),
        );
    }
}

#[test]
fn energy_reg_gradient_matches_finite_differences() {
    for s in 0..MODELS {
        let c = case(100 + s);
        let (a, b) = (c.cfg.m_in, c.cfg.m_out);
        assert!(energy_reg_loss(&c.model, &c.in_batch, &c.out_batch, a, b).unwrap() > 0.0);
        check(
            "energy_reg",
            &c.model,
            LossSpec::EnergyReg {
                in_batch: &c.in_batch,
                out_batch: &c.out_batch,
                m_in: a,
                m_out: b,
            },
            |m| energy_reg_loss(m, &c.in_batch, &c.out_batch, a, b).unwrap(),
        );
    }
}

#[test]
fn total_gradient_matches_finite_differences() {
    for s in 0..MODELS {
        let c = case(200 + s);
        check(
            "total",
            &c.model,
            LossSpec::Total {
                in_batch: &c.in_batch,
                out_batch: &c.out_batch,
                cfg: &c.cfg,
            },
            |m| total_loss(m, &c.in_batch, &c.out_batch, &c.cfg).unwrap(),
        );
    }
}

#[test]
fn oe_gradient_matches_finite_differences() {
    for s in 0..MODELS {
        let c = case(300 + s);
        let t = c.cfg.temp;
        check(
            "oe",
            &c.model,
            LossSpec::Oe {
                out_batch: &c.out_batch,
                temp: t,
            },
            |m| oe_loss(m, &c.out_batch, t).unwrap(),
        );
    }
}

#[test]
fn nll_gradient_decomposes_into_label_energies() {
    // dL/dθ = (1/T) (dE(x,y)/dθ - sum_j p(j|x) dE(x,j)/dθ)
    for s in 0..MODELS {
        let c = case(400 + s);
        let t = c.cfg.temp;
        let k = c.model.config.num_classes();
        let labels = c.in_batch.labels.as_ref().unwrap();
        for (x, &y) in c.in_batch.inputs.iter().zip(labels) {
            let single = Batch::labeled(vec![x.clone()], vec![y]).unwrap();
            let g_nll = backward(
                &c.model,
                &LossSpec::Nll {
                    batch: &single,
                    temp: t,
                },
            )
            .unwrap()
            .1
            .flat();
            let p = softmax(&c.model.forward(x).unwrap(), t);
            let g_label: Vec<Vec<f64>> = (0..k)
                .map(|j| {
                    backward(&c.model, &LossSpec::LabelEnergy { x, label: j })
                        .unwrap()
                        .1
                        .flat()
                })
                .collect();
            for i in 0..g_nll.len() {
                let expected =
                    (g_label[y][i] - (0..k).map(|j| p[j] * g_label[j][i]).sum::<f64>()) / t.get();
                assert!((g_nll[i] - expected).abs() < 1e-8, "seed {s} param {i}");
            }
        }
    }
}

#[test]
fn total_gradient_is_linear_in_lambda() {
    for s in 0..MODELS {
        let c = case(500 + s);
        let g_total = backward(
            &c.model,
            &LossSpec::Total {
                in_batch: &c.in_batch,
                out_batch: &c.out_batch,
                cfg: &c.cfg,
            },
        )
        .unwrap()
        .1
        .flat();
        let g_nll = backward(
            &c.model,
            &LossSpec::Nll {
                batch: &c.in_batch,
                temp: c.cfg.temp,
            },
        )
        .unwrap()
        .1
        .flat();
        let g_reg = backward(
            &c.model,
            &LossSpec::EnergyReg {
                in_batch: &c.in_batch,
                out_batch: &c.out_batch,
                m_in: c.cfg.m_in,
                m_out: c.cfg.m_out,
            },
        )
        .unwrap()
        .1
        .flat();
        for i in 0..g_total.len() {
            let expected = g_nll[i] + c.cfg.lambda * g_reg[i];
            assert!(
                (g_total[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "seed {s} param {i}: {} vs {expected}",
                g_total[i]
            );
        }
    }
}

#[test]
fn zero_lambda_total_equals_nll_exactly() {
    for s in 0..8 {
        let mut c = case(600 + s);
        c.cfg.lambda = 0.0;
        let total = total_loss(&c.model, &c.in_batch, &c.out_batch, &c.cfg).unwrap();
        let nll = nll_loss(&c.model, &c.in_batch, c.cfg.temp).unwrap();
        assert_eq!(total, nll);
        let spec = LossSpec::Total {
            in_batch: &c.in_batch,
            out_batch: &c.out_batch,
            cfg: &c.cfg,
        };
        let g_total = backward(&c.model, &spec).unwrap().1.flat();
        let g_nll = backward(
            &c.model,
            &LossSpec::Nll {
                batch: &c.in_batch,
                temp: c.cfg.temp,
            },
        )
        .unwrap()
        .1
        .flat();
        assert_eq!(g_total, g_nll);
    }
}

#[test]
fn energy_reg_nonnegative_and_zero_inside_margins() {
    for s in 0..16 {
        let c = case(700 + s);
        let ein = energies(&c.model, &c.in_batch).unwrap();
        let eout = energies(&c.model, &c.out_batch).unwrap();
        let r =
            energy_reg_loss(&c.model, &c.in_batch, &c.out_batch, c.cfg.m_in, c.cfg.m_out).unwrap();
        assert!(r > 0.0);
        let max_in = ein.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_out = eout.iter().copied().fold(f64::INFINITY, f64::min);
        // Each hinge is zero exactly when every sample clears its margin.
        let only_in =
            |m_in| energy_reg_loss(&c.model, &c.in_batch, &c.out_batch, m_in, -1e9).unwrap();
        let only_out =
            |m_out| energy_reg_loss(&c.model, &c.in_batch, &c.out_batch, 1e9, m_out).unwrap();
        assert_eq!(only_in(max_in), 0.0);
        assert!(only_in(max_in - 1e-3) > 0.0);
        assert_eq!(only_out(min_out), 0.0);
        assert!(only_out(min_out + 1e-3) > 0.0);
    }
}

#[test]
fn nll_matches_free_energy_form() {
    for s in 0..MODELS {
        let c = case(800 + s);
        let a = nll_loss(&c.model, &c.in_batch, c.cfg.temp).unwrap();
        let b = nll_loss_free_energy(&c.model, &c.in_batch, c.cfg.temp).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}
