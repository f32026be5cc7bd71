//! The end-to-end desk experiment: pretrain a classifier on the synthetic
//! benchmark, pick margins from its energies, fine-tune with the energy
//! regularizer, and evaluate both models.

use serde::{Deserialize, Serialize};

use crate::bench::{assemble_scores, generate, BenchmarkData, BenchmarkSpec, LogitScorer};
use crate::detector::DetectorScore;
use crate::error::{Error, Result};
use crate::metrics::{full_report, MetricsReport};
use crate::mlp::{self, accuracy, energies, Batch, MlpConfig, MlpModel, TrainConfig, TrainLog};
use crate::scores::Temperature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub bench: BenchmarkSpec,
    /// Hidden layer widths; input and output sizes come from the benchmark.
    pub hidden: Vec<usize>,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Derive `finetune.m_in` / `m_out` from the pretrained model's energies.
    pub auto_margins: bool,
    pub tpr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bench: BenchmarkSpec::default(),
            hidden: vec![32, 32],
            init_seed: 0,
            pretrain: default_pretrain(),
            finetune: default_finetune(),
            auto_margins: true,
            tpr: 0.95,
        }
    }
}

/// From-scratch training settings for the small benchmark classifier.
pub fn default_pretrain() -> TrainConfig {
    TrainConfig {
        lambda: 0.0,
        lr0: 0.1,
        epochs: 10,
        batch_in: 32,
        ..TrainConfig::default()
    }
}

/// Energy-bounded fine-tuning for the benchmark classifier: lambda = 0.1 and
/// a 1:2 in/out batch ratio as in the reference recipe, with a larger step
/// size and smaller batches to make up for the much shorter run.
pub fn default_finetune() -> TrainConfig {
    TrainConfig {
        lr0: 0.05,
        batch_in: 32,
        batch_out: 64,
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    pub fn mlp_config(&self) -> Result<MlpConfig> {
        let mut sizes = vec![self.bench.dim];
        sizes.extend(&self.hidden);
        sizes.push(self.bench.k_classes);
        MlpConfig::new(sizes)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `m_in = mean(E_in) - std(E_in)`, `m_out = mean(E_out) + std(E_out)`.
/// If that inverts the order, both collapse to their midpoint.
pub fn auto_margins(model: &MlpModel, in_data: &Batch, out_data: &Batch) -> Result<(f64, f64)> {
    let (mi, si) = mean_std(&energies(model, in_data)?);
    let (mo, so) = mean_std(&energies(model, out_data)?);
    let (m_in, m_out) = (mi - si, mo + so);
    if m_in <= m_out {
        Ok((m_in, m_out))
    } else {
        let mid = 0.5 * (m_in + m_out);
        Ok((mid, mid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean T=1 energy on the in-distribution training split.
    pub mean_energy_in: f64,
    pub mean_energy_out: f64,
    /// `mean_energy_out - mean_energy_in`.
    pub energy_gap: f64,
    pub neg_energy: MetricsReport,
    pub msp: MetricsReport,
}

pub fn evaluate_model(
    model: &MlpModel,
    data: &BenchmarkData,
    temp: Temperature,
    tpr: f64,
) -> Result<StageReport> {
    let ein = energies(model, &data.train_in)?;
    let eout = energies(model, &data.train_out)?;
    let mean_energy_in = mean_std(&ein).0;
    let mean_energy_out = mean_std(&eout).0;
    let report = |kind| -> Result<MetricsReport> {
        let scorer = LogitScorer { model, kind, temp };
        full_report(
            &assemble_scores(&scorer, &data.test_in, &data.test_out)?,
            tpr,
        )
    };
    Ok(StageReport {
        train_accuracy: accuracy(model, &data.train_in)?,
        test_accuracy: accuracy(model, &data.test_in)?,
        mean_energy_in,
        mean_energy_out,
        energy_gap: mean_energy_out - mean_energy_in,
        neg_energy: report(DetectorScore::NegEnergy)?,
        msp: report(DetectorScore::Msp)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub pretrained: StageReport,
    pub finetuned: StageReport,
    pub m_in: f64,
    pub m_out: f64,
}

pub struct ExperimentOutcome {
    pub pretrained: MlpModel,
    pub finetuned: MlpModel,
    pub pretrain_log: TrainLog,
    pub finetune_log: TrainLog,
    /// The fine-tuning config actually used (with resolved margins).
    pub finetune_config: TrainConfig,
    pub report: ExperimentReport,
}

pub fn pretrain_on(cfg: &ExperimentConfig, data: &BenchmarkData) -> Result<(MlpModel, TrainLog)> {
    let init = mlp::init(&cfg.mlp_config()?, cfg.init_seed)?;
    mlp::pretrain(&init, &data.train_in, &cfg.pretrain)
}

/// Fine-tunes `pretrained`, resolving margins first when `auto_margins` is set.
pub fn finetune_on(
    cfg: &ExperimentConfig,
    pretrained: &MlpModel,
    data: &BenchmarkData,
) -> Result<(MlpModel, TrainLog, TrainConfig)> {
    let mut ft = cfg.finetune.clone();
    if cfg.auto_margins {
        let (m_in, m_out) = auto_margins(pretrained, &data.train_in, &data.train_out)?;
        ft.m_in = m_in;
        ft.m_out = m_out;
    }
    let (model, log) = mlp::finetune(pretrained, &data.train_in, &data.train_out, &ft)?;
    Ok((model, log, ft))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = generate(&cfg.bench)?;
    run_experiment_on(cfg, &data)
}

pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    data: &BenchmarkData,
) -> Result<ExperimentOutcome> {
    let (pretrained, pretrain_log) = pretrain_on(cfg, data)?;
    let (finetuned, finetune_log, finetune_config) = finetune_on(cfg, &pretrained, data)?;
    let report = ExperimentReport {
        pretrained: evaluate_model(&pretrained, data, Temperature::ONE, cfg.tpr)?,
        finetuned: evaluate_model(&finetuned, data, Temperature::ONE, cfg.tpr)?,
        m_in: finetune_config.m_in,
        m_out: finetune_config.m_out,
    };
    Ok(ExperimentOutcome {
        pretrained,
        finetuned,
        pretrain_log,
        finetune_log,
        finetune_config,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temp: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "T,fpr95,auroc,aupr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.temp, self.fpr95, self.auroc, self.aupr)
    }
}

/// Negative-energy detection metrics on the test splits at each temperature.
pub fn temperature_sweep(
    model: &MlpModel,
    test_in: &Batch,
    test_out: &Batch,
    temps: &[f64],
    tpr: f64,
) -> Result<Vec<SweepRow>> {
    if temps.is_empty() {
        return Err(Error::invalid("temperature list is empty"));
    }
    temps
        .iter()
        .map(|&t| {
            let temp = Temperature::new(t)?;
            let scorer = LogitScorer {
                model,
                kind: DetectorScore::NegEnergy,
                temp,
            };
            let r = full_report(&assemble_scores(&scorer, test_in, test_out)?, tpr)?;
            Ok(SweepRow {
                temp: t,
                fpr95: r.fpr_at_tpr,
                auroc: r.auroc,
                aupr: r.aupr,
            })
        })
        .collect()
}
