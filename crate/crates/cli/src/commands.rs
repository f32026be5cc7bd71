use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use energy_ood::bench::{
    generate, load_table, read_dataset, read_scores, score_inputs, write_dataset, write_scores,
    BenchmarkData, BenchmarkSpec, GdaScorer, Split, Table,
};
use energy_ood::detector::{
    calibrate_for, classify, filter_and_predict, pass_rate, DetectorConfig, DetectorScore,
    Prediction,
};
use energy_ood::gda::{self, GdaModel};
use energy_ood::metrics::{aupr, full_report, ScoreSet};
use energy_ood::mlp::{self, Checkpoint, MlpConfig, MlpModel, TrainConfig};
use energy_ood::pipeline::{auto_margins, default_pretrain, temperature_sweep, SweepRow};
use energy_ood::scores::{msp_score, neg_energy_score, score_batch, LogitVector, Temperature};
use energy_ood::{Error, Result};
use serde_json::{json, Value};

use crate::io::{logits_to_csv, read_labels, read_logits, read_text, write_text};
use crate::manifest::RunRecord;
use crate::{
    record, CalibrateArgs, Command, DataSource, EvaluateArgs, FeatureSource, FilterArgs,
    GdaCommand, GenerateArgs, LogitsArgs, ScoreArgs, SplitArg, Stage, SweepArgs, TrainArgs,
};

pub fn run(cmd: &Command) -> Result<(&'static str, RunRecord)> {
    Ok(match cmd {
        Command::Score(a) => ("score", score(a)?),
        Command::Logits(a) => ("logits", logits(a)?),
        Command::Calibrate(a) => ("calibrate", calibrate(a)?),
        Command::Filter(a) => ("filter", filter(a)?),
        Command::Evaluate(a) => ("evaluate", evaluate(a)?),
        Command::Generate(a) => ("generate", generate_cmd(a)?),
        Command::Train(a) => ("train", train(a)?),
        Command::SweepTemperature(a) => ("sweep-temperature", sweep(a)?),
        Command::Gda(GdaCommand::Fit {
            source,
            labels,
            ridge,
            out,
        }) => ("gda-fit", gda_fit(source, labels.as_deref(), *ridge, out)?),
        Command::Gda(GdaCommand::Score { source, model, out }) => {
            ("gda-score", gda_score(source, model, out)?)
        }
        Command::Replay { .. } => unreachable!("replay is resolved before dispatch"),
    })
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// Overlays the keys of a JSON object file onto `base`.
fn overlay<T>(base: &T, path: Option<&Path>) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = path {
        let Value::Object(over) = load_json::<Value>(p)? else {
            return Err(Error::InvalidInput(format!(
                "{} must hold a JSON object",
                p.display()
            )));
        };
        let obj = v.as_object_mut().expect("configs serialize to objects");
        obj.extend(over);
    }
    Ok(serde_json::from_value(v)?)
}

fn load_model(path: &Path) -> Result<MlpModel> {
    Checkpoint::load(path)?.model()
}

fn load_source(src: &DataSource) -> Result<(BenchmarkData, PathBuf, Value)> {
    match (&src.bench, &src.data) {
        (Some(spec_path), _) => {
            let spec: BenchmarkSpec = load_json(spec_path)?;
            let data = generate(&spec)?;
            Ok((data, spec_path.clone(), serde_json::to_value(&spec)?))
        }
        (None, Some(dir)) => Ok((read_dataset(dir)?, dir.clone(), Value::Null)),
        (None, None) => unreachable!("clap requires one data source"),
    }
}

fn score(a: &ScoreArgs) -> Result<RunRecord> {
    let temp = Temperature::new(a.temp)?;
    let rows = read_logits(&a.logits)?;
    let scores = score_batch(&rows, a.score.into(), temp);
    write_scores(&a.out, &scores)?;
    Ok(record(
        json!({ "temp": a.temp, "score": format!("{:?}", a.score) }),
        None,
        vec![a.logits.clone()],
        vec![a.out.clone()],
    ))
}

fn logits(a: &LogitsArgs) -> Result<RunRecord> {
    let model = load_model(&a.model)?;
    let table = load_table(&a.data, a.format.into())?;
    let rows: Vec<&Vec<f64>> = table
        .rows
        .iter()
        .filter(|r| match a.split {
            SplitArg::All => true,
            SplitArg::In => r.split == Split::In,
            SplitArg::Out => r.split == Split::Out,
        })
        .map(|r| &r.values)
        .collect();
    let out = rows
        .iter()
        .map(|x| model.forward(x))
        .collect::<Result<Vec<LogitVector>>>()?;
    write_text(&a.out, &logits_to_csv(&out))?;
    Ok(record(
        json!({ "split": format!("{:?}", a.split), "format": format!("{:?}", a.format) }),
        None,
        vec![a.model.clone(), a.data.clone()],
        vec![a.out.clone()],
    ))
}

fn calibrate(a: &CalibrateArgs) -> Result<RunRecord> {
    let scores = read_scores(&a.in_scores)?;
    let cfg = calibrate_for(&scores, a.tpr, a.score_kind.into())?;
    write_text(&a.out, &(cfg.to_json()? + "\n"))?;
    println!("tau: {}", cfg.tau);
    println!(
        "achieved TPR: {:.6} (target {:.6})",
        pass_rate(&scores, cfg.tau),
        a.tpr
    );
    Ok(record(
        serde_json::to_value(cfg)?,
        None,
        vec![a.in_scores.clone()],
        vec![a.out.clone()],
    ))
}

fn filter(a: &FilterArgs) -> Result<RunRecord> {
    let temp = Temperature::new(a.temp)?;
    let cfg = DetectorConfig::from_json(&read_text(&a.detector)?)?;
    let rows = read_logits(&a.logits)?;
    let mut s = String::from("row,score,decision,class\n");
    for (i, f) in rows.iter().enumerate() {
        let score = match cfg.score_kind {
            DetectorScore::Msp => msp_score(f),
            _ => neg_energy_score(f, temp),
        };
        let pred = filter_and_predict(f, &cfg, temp)?;
        debug_assert_eq!(classify(score, &cfg)?.is_in(), pred != Prediction::Rejected);
        match pred {
            Prediction::Rejected => writeln!(s, "{i},{score},out,"),
            Prediction::Class(c) => writeln!(s, "{i},{score},in,{c}"),
        }
        .expect("writing to a String");
    }
    write_text(&a.out, &s)?;
    Ok(record(
        json!({ "temp": a.temp, "detector": serde_json::to_value(cfg)? }),
        None,
        vec![a.logits.clone(), a.detector.clone()],
        vec![a.out.clone()],
    ))
}

fn evaluate(a: &EvaluateArgs) -> Result<RunRecord> {
    let set = ScoreSet::new(read_scores(&a.in_scores)?, read_scores(&a.out_scores)?)?;
    let report = full_report(&set, a.tpr)?;
    let mut v = serde_json::to_value(&report)?;
    println!("{:<16}{:>10}", "metric", "value");
    println!(
        "{:<16}{:>10.6}",
        format!("FPR@TPR={}", a.tpr),
        report.fpr_at_tpr
    );
    println!("{:<16}{:>10.6}", "AUROC", report.auroc);
    println!("{:<16}{:>10.6}", "AUPR (in)", report.aupr);
    if a.both_orientations {
        let out_pos = aupr(&set.map(|s| -s).swapped())?;
        println!("{:<16}{:>10.6}", "AUPR (out)", out_pos);
        v["aupr_out"] = json!(out_pos);
    }
    println!("{:<16}{:>10}", "n_in", report.n_in);
    println!("{:<16}{:>10}", "n_out", report.n_out);
    write_text(&a.json, &(serde_json::to_string_pretty(&v)? + "\n"))?;
    Ok(record(
        json!({ "tpr": a.tpr, "both_orientations": a.both_orientations }),
        None,
        vec![a.in_scores.clone(), a.out_scores.clone()],
        vec![a.json.clone()],
    ))
}

fn generate_cmd(a: &GenerateArgs) -> Result<RunRecord> {
    let mut spec = match &a.bench {
        Some(p) => load_json(p)?,
        None => BenchmarkSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = generate(&spec)?;
    write_dataset(&a.out, &spec, &data)?;
    Ok(record(
        serde_json::to_value(&spec)?,
        Some(spec.seed),
        a.bench.iter().cloned().collect(),
        vec![a.out.clone()],
    ))
}

fn train(a: &TrainArgs) -> Result<RunRecord> {
    let (data, source, spec) = load_source(&a.source)?;
    let mut inputs = vec![source];
    inputs.extend(a.config.iter().cloned());
    let base = match a.stage {
        Stage::Pretrain => default_pretrain(),
        Stage::Finetune => TrainConfig::default(),
    };
    let mut cfg: TrainConfig = overlay(&base, a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let (model, log) = match a.stage {
        Stage::Pretrain => {
            if a.from.is_some() || a.auto_margins {
                return Err(Error::InvalidInput(
                    "--from and --auto-margins only apply to finetune".into(),
                ));
            }
            let dim = data.train_in.inputs.first().map_or(0, Vec::len);
            let k = data
                .train_in
                .labels
                .as_ref()
                .and_then(|l| l.iter().max())
                .map_or(0, |m| m + 1);
            let mut sizes = vec![dim];
            sizes.extend(&a.hidden);
            sizes.push(k);
            let init = mlp::init(&MlpConfig::new(sizes)?, cfg.seed)?;
            mlp::pretrain(&init, &data.train_in, &cfg)?
        }
        Stage::Finetune => {
            let from = a
                .from
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("finetune needs --from CHECKPOINT".into()))?;
            inputs.push(from.clone());
            let start = load_model(from)?;
            if a.auto_margins {
                let (m_in, m_out) = auto_margins(&start, &data.train_in, &data.train_out)?;
                cfg.m_in = m_in;
                cfg.m_out = m_out;
            }
            mlp::finetune(&start, &data.train_in, &data.train_out, &cfg)?
        }
    };
    Checkpoint::new(&model, Some(cfg.clone())).save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.log {
        write_text(p, &log.to_csv())?;
        outputs.push(p.clone());
    }
    Ok(record(
        json!({
            "stage": format!("{:?}", a.stage),
            "train": serde_json::to_value(&cfg)?,
            "hidden": a.hidden,
            "auto_margins": a.auto_margins,
            "bench": spec,
        }),
        Some(cfg.seed),
        inputs,
        outputs,
    ))
}

fn sweep(a: &SweepArgs) -> Result<RunRecord> {
    let model = load_model(&a.model)?;
    let (data, source, spec) = load_source(&a.source)?;
    let rows = temperature_sweep(&model, &data.test_in, &data.test_out, &a.temps, a.tpr)?;
    let mut s = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    write_text(&a.out, &s)?;
    Ok(record(
        json!({ "temps": a.temps, "tpr": a.tpr, "bench": spec }),
        None,
        vec![a.model.clone(), source],
        vec![a.out.clone()],
    ))
}

/// Table rows, optionally mapped through an MLP's penultimate layer.
fn load_features(src: &FeatureSource) -> Result<(Table, Vec<PathBuf>)> {
    let mut table = load_table(&src.features, src.format.into())?;
    let mut inputs = vec![src.features.clone()];
    if let Some(p) = &src.mlp {
        let model = load_model(p)?;
        for row in &mut table.rows {
            row.values = model.features(&row.values)?;
        }
        table.cols = table.rows.first().map_or(0, |r| r.values.len());
        inputs.push(p.clone());
    }
    Ok((table, inputs))
}

fn gda_fit(
    src: &FeatureSource,
    labels: Option<&Path>,
    ridge: f64,
    out: &Path,
) -> Result<RunRecord> {
    let (table, mut inputs) = load_features(src)?;
    let batch = table.in_batch();
    if batch.is_empty() {
        return Err(Error::InvalidInput("no `in` rows to fit on".into()));
    }
    let y = match labels {
        Some(p) => {
            inputs.push(p.to_path_buf());
            let y = read_labels(p)?;
            if y.len() != batch.len() {
                return Err(Error::DimensionMismatch {
                    expected: batch.len(),
                    got: y.len(),
                });
            }
            y
        }
        None => batch.labels.clone().ok_or_else(|| {
            Error::InvalidInput("every `in` row needs a label (or pass --labels)".into())
        })?,
    };
    let model = gda::fit(&batch.inputs, &y, ridge)?;
    write_text(out, &(model.to_json()? + "\n"))?;
    Ok(record(
        json!({ "ridge": ridge }),
        None,
        inputs,
        vec![out.to_path_buf()],
    ))
}

fn gda_score(src: &FeatureSource, model_path: &Path, out: &Path) -> Result<RunRecord> {
    let (table, mut inputs) = load_features(src)?;
    inputs.push(model_path.to_path_buf());
    let model = GdaModel::from_json(&read_text(model_path)?)?;
    let xs: Vec<Vec<f64>> = table.rows.iter().map(|r| r.values.clone()).collect();
    let scorer = |kind| GdaScorer {
        model: &model,
        kind,
    };
    // The scorer reports -E_U; the file carries E_U itself.
    let neg_eu = score_inputs(&scorer(DetectorScore::NegEnergyGda), &xs)?;
    let maha = score_inputs(&scorer(DetectorScore::Mahalanobis), &xs)?;
    let mut s = String::from("row,split,energy_u,mahalanobis\n");
    for (i, r) in table.rows.iter().enumerate() {
        let split = if r.split == Split::In { "in" } else { "out" };
        writeln!(s, "{i},{split},{},{}", -neg_eu[i], maha[i]).expect("writing to a String");
    }
    write_text(out, &s)?;
    Ok(record(Value::Null, None, inputs, vec![out.to_path_buf()]))
}
