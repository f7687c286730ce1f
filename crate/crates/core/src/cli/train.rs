use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::arch::build_macro_plan;
use crate::builder::{build_eval_net, ce_loss_and_seed, EvalNet, NetOpts};
use crate::data::{load_features, Utterance, N_BINS, N_CHANNELS};
use crate::latency::network_latency;
use crate::search::{
    cosine_lr, write_json, write_metrics_csv, EpochMetric, SearchError, Sgd,
};
use crate::tensor::{load_checkpoint, save_checkpoint, Tensor};

use super::commands::{checked_genotype, fmt_ms};
use super::manifest::{fresh_run_dir, read_manifest, write_manifest, RunManifest};
use super::{CliError, TrainEvalArgs};

fn input_for(u: &Utterance) -> Tensor<f32> {
    u.features.clone()
}

fn evaluate(net: &mut EvalNet<f32>, utts: &[&Utterance]) -> Result<(f64, f64), CliError> {
    let classes = net.net.classes;
    let stride = net.net.time_stride;
    let (mut loss_sum, mut hit_sum, mut frames) = (0.0, 0.0, 0usize);
    for u in utts {
        let post = net
            .net
            .forward_infer(input_for(u))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let (loss, _) = ce_loss_and_seed(&post, &[&u.labels], classes, stride)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let acc = crate::builder::accuracy(&post, &[&u.labels], stride);
        let to = post.shape()[2];
        loss_sum += loss * to as f64;
        hit_sum += acc * to as f64;
        frames += to;
    }
    if frames == 0 {
        return Err(CliError::Runtime("evaluation set has no scorable frames".into()));
    }
    Ok((loss_sum / frames as f64, hit_sum / frames as f64))
}

fn batch_step(
    net: &mut EvalNet<f32>,
    batch: &[&Utterance],
    sgd: &mut Sgd<f32>,
    ids: &[usize],
    lr: f64,
) -> Result<f64, CliError> {
    let classes = net.net.classes;
    let stride = net.net.time_stride;
    net.net.graph.params.zero_grads();
    let mut total = 0.0;
    for u in batch {
        net.net
            .forward_train(input_for(u))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let (loss, seed) = {
            let post = net.net.posteriors_ref().map_err(|e| CliError::Runtime(e.to_string()))?;
            ce_loss_and_seed(post, &[&u.labels], classes, stride)
                .map_err(|e| CliError::Runtime(e.to_string()))?
        };
        if !loss.is_finite() {
            return Err(CliError::Runtime(format!("training diverged: loss {loss}")));
        }
        net.net
            .backward_from_logits(seed)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        total += loss;
    }
    sgd.step(&mut net.net.graph.params, ids, lr, 1.0 / batch.len() as f64);
    Ok(total / batch.len() as f64)
}

pub fn cmd_train_eval(a: &TrainEvalArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(CliError::Usage(format!("holdout fraction {} outside [0, 1)", a.holdout)));
    }
    if a.batch == 0 {
        return Err(CliError::Usage("batch size must be positive".into()));
    }
    let g = checked_genotype(&a.genotype)?;
    let dataset = load_features(&a.data, a.delta_mode)
        .map_err(|e| CliError::Usage(format!("dataset {}: {e}", a.data.display())))?;
    let mut plan = build_macro_plan(a.cells, a.channels)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    plan.stem = plan.stem.with_causal(a.causal_stem);
    let latency = network_latency(&plan, &g).map_err(|e| CliError::Failed(e.to_string()))?;

    let opts = NetOpts {
        bn_affine: true,
        causal_stem: a.causal_stem,
        n_freq: N_BINS,
        in_channels: N_CHANNELS,
        seed: a.seed,
    };
    let mut net = build_eval_net::<f32>(&g, a.cells, a.channels, dataset.classes as usize, &opts)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut start_epoch = 0u64;
    if let Some(prev) = &a.resume {
        let pm = read_manifest(prev)?;
        start_epoch = pm.epochs_done.ok_or_else(|| {
            CliError::Usage(format!("{} is not a train-eval run directory", prev.display()))
        })?;
        load_checkpoint(&mut net.net.graph.params, &prev.join("checkpoint.bin"))
            .map_err(|e| CliError::Usage(format!("checkpoint in {}: {e}", prev.display())))?;
    }
    fresh_run_dir(&a.out)?;

    // Deterministic split: shuffled once by the run seed, tail held out.
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let mut order: Vec<usize> = (0..dataset.utterances.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.utterances.len() as f64 * a.holdout) as usize)
        .clamp(1, dataset.utterances.len().saturating_sub(1).max(1));
    let (train_idx, val_idx) = order.split_at(order.len() - n_val);
    if train_idx.is_empty() {
        return Err(CliError::Usage("no training utterances left after the holdout split".into()));
    }
    let val: Vec<&Utterance> = val_idx.iter().map(|&i| &dataset.utterances[i]).collect();

    // The chance-level baseline row belongs to fresh runs; resumed runs
    // continue the previous numbering without repeating epoch 0.
    let mut metrics: Vec<EpochMetric> = Vec::new();
    if a.resume.is_none() {
        let train_all: Vec<&Utterance> =
            train_idx.iter().map(|&i| &dataset.utterances[i]).collect();
        let (tr_loss, _) = evaluate(&mut net, &train_all)?;
        let (v_loss, v_acc) = evaluate(&mut net, &val)?;
        metrics.push(EpochMetric {
            stage: 0,
            epoch: 0,
            phase: "init".into(),
            train_loss: tr_loss,
            val_loss: v_loss,
            val_acc: v_acc,
        });
    }

    let mut sgd = Sgd::new(a.momentum);
    let ids = net.net.graph.params.trainable_ids();
    let mut worder: Vec<usize> = train_idx.to_vec();
    for e in 0..a.epochs {
        let lr = cosine_lr(e, a.epochs, a.lr_max, a.lr_min);
        worder.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in worder.chunks(a.batch) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &dataset.utterances[i]).collect();
            loss_sum += batch_step(&mut net, &batch, &mut sgd, &ids, lr)?;
            batches += 1;
        }
        let (v_loss, v_acc) = evaluate(&mut net, &val)?;
        let epoch_no = start_epoch as usize + 1 + e;
        metrics.push(EpochMetric {
            stage: 0,
            epoch: epoch_no,
            phase: "train".into(),
            train_loss: loss_sum / batches as f64,
            val_loss: v_loss,
            val_acc: v_acc,
        });
        println!(
            "epoch {epoch_no}: train loss {:.4}, val loss {:.4}, val acc {:.4}",
            loss_sum / batches as f64,
            v_loss,
            v_acc
        );
    }

    save_checkpoint(&net.net.graph.params, &a.out.join("checkpoint.bin"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_metrics_csv(&a.out.join("metrics.csv"), &metrics).map_err(cli_from_search)?;
    write_json(&a.out.join("latency.json"), &latency).map_err(cli_from_search)?;

    let mut manifest = RunManifest::new("train-eval", &TrainRecord::from(a), vec![a.seed])?;
    manifest.hash_input(&a.genotype)?;
    manifest.hash_input(&a.data)?;
    if let Some(prev) = &a.resume {
        manifest.hash_input(&prev.join("checkpoint.bin"))?;
    }
    manifest.outputs =
        vec!["checkpoint.bin".into(), "metrics.csv".into(), "latency.json".into()];
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    manifest.latency = Some(latency);
    manifest.epochs_done = Some(start_epoch + a.epochs as u64);
    write_manifest(&a.out, &manifest)?;

    if let Some(last) = metrics.last() {
        println!(
            "done after epoch {}: val acc {:.4}, lookahead {}",
            last.epoch,
            last.val_acc,
            fmt_ms(manifest.latency.as_ref().expect("set above").total_ms)
        );
    }
    Ok(())
}

fn cli_from_search(e: SearchError) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(serde::Serialize)]
struct TrainRecord {
    genotype: String,
    cells: usize,
    channels: usize,
    data: String,
    epochs: usize,
    batch: usize,
    lr_max: f64,
    lr_min: f64,
    momentum: f64,
    seed: u64,
    delta_mode: crate::data::DeltaMode,
    causal_stem: bool,
    holdout: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    resume: Option<String>,
}

impl From<&TrainEvalArgs> for TrainRecord {
    fn from(a: &TrainEvalArgs) -> Self {
        TrainRecord {
            genotype: a.genotype.display().to_string(),
            cells: a.cells,
            channels: a.channels,
            data: a.data.display().to_string(),
            epochs: a.epochs,
            batch: a.batch,
            lr_max: a.lr_max,
            lr_min: a.lr_min,
            momentum: a.momentum,
            seed: a.seed,
            delta_mode: a.delta_mode,
            causal_stem: a.causal_stem,
            holdout: a.holdout,
            resume: a.resume.as_ref().map(|p| p.display().to_string()),
        }
    }
}
