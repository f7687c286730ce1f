use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{
    build_macro_plan, encode_genotype, validate_genotype, Genotype, SearchSpaceSpec, StageRecord,
    AVG_POOL_CAP,
};
use crate::builder::{
    accuracy, build_supernet, ce_loss_and_seed, ActiveOps, AlphaParams, DropoutCells, NetOpts,
    SuperNet,
};
use crate::data::{split_for_search, Dataset, Utterance, N_BINS, N_CHANNELS};
use crate::latency::{network_latency, space_latency_bound, LatencyReport};
use crate::tensor::{Scalar, Tensor};

use super::alpha::{discretize, enforce_pool_cap, prune_operations};
use super::config::{SearchConfig, StageConfig};
use super::optim::{cosine_lr, Adam, Sgd};
use super::SearchError;

/// One optimization client around a supernet: weight steps with momentum,
/// score steps with the adaptive method, per-step candidate dropout.
pub struct Trainer<S: Scalar> {
    pub net: SuperNet<S>,
    /// Ablation switch; with updates disabled `alternate_step` degenerates
    /// to `warmup_step` exactly, dropout draws included.
    pub alpha_updates_enabled: bool,
    sgd: Sgd<S>,
    adam: Adam<S>,
    w_lr: f64,
    alpha_lr: f64,
    dropout: f64,
    dropout_cells: DropoutCells,
    dropout_rng: ChaCha20Rng,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        net: SuperNet<S>,
        momentum: f64,
        alpha_lr: f64,
        dropout: f64,
        dropout_cells: DropoutCells,
        dropout_seed: u64,
    ) -> Self {
        Trainer {
            net,
            alpha_updates_enabled: true,
            sgd: Sgd::new(momentum),
            adam: Adam::new(),
            w_lr: 0.0,
            alpha_lr,
            dropout,
            dropout_cells,
            dropout_rng: ChaCha20Rng::seed_from_u64(dropout_seed),
        }
    }

    pub fn set_w_lr(&mut self, lr: f64) {
        self.w_lr = lr;
    }

    fn input_for(&self, u: &Utterance) -> Tensor<S> {
        Tensor::from_f64(&u.features.to_f64())
    }

    /// Forward + backward over a batch with gradient accumulation. Leaves
    /// summed gradients in the store; returns the mean loss.
    fn loss_backward(
        &mut self,
        batch: &[&Utterance],
        phase: &'static str,
    ) -> Result<f64, SearchError> {
        if batch.is_empty() {
            return Err(SearchError::Config("empty batch".into()));
        }
        self.net.net.graph.zero_grads();
        let (classes, stride) = (self.net.net.classes, self.net.net.time_stride);
        let mut total = 0.0;
        for u in batch {
            let x = self.input_for(u);
            self.net.net.forward_train(x)?;
            let (loss, seed) = {
                let p = self.net.net.posteriors_ref()?;
                ce_loss_and_seed(p, &[&u.labels], classes, stride)?
            };
            if !loss.is_finite() {
                return Err(SearchError::NonFinite { phase, loss });
            }
            self.net.net.backward_from_logits(seed)?;
            total += loss;
        }
        Ok(total / batch.len() as f64)
    }

    /// One weight-only step; the scores stay frozen with zero gradient.
    pub fn warmup_step(&mut self, batch: &[&Utterance]) -> Result<f64, SearchError> {
        self.net.set_alphas_trainable(false);
        self.net.set_weights_trainable(true);
        self.net.sample_dropout(self.dropout, self.dropout_cells, &mut self.dropout_rng);
        let loss = self.loss_backward(batch, "training")?;
        let ids = self.net.weight_ids().to_vec();
        self.sgd.step(&mut self.net.net.graph.params, &ids, self.w_lr, 1.0 / batch.len() as f64);
        Ok(loss)
    }

    /// First-order alternation: score step on the validation batch with the
    /// current weights, then weight step on the training batch with the
    /// just-updated scores. One dropout mask covers both sub-steps.
    pub fn alternate_step(
        &mut self,
        train_batch: &[&Utterance],
        val_batch: &[&Utterance],
    ) -> Result<(f64, Option<f64>), SearchError> {
        if !self.alpha_updates_enabled {
            return Ok((self.warmup_step(train_batch)?, None));
        }
        self.net.set_alphas_trainable(true);
        self.net.set_weights_trainable(true);
        self.net.sample_dropout(self.dropout, self.dropout_cells, &mut self.dropout_rng);
        let val_loss = self.loss_backward(val_batch, "validation")?;
        let alpha_ids = self.net.alpha_ids();
        self.adam.step(
            &mut self.net.net.graph.params,
            &alpha_ids,
            self.alpha_lr,
            1.0 / val_batch.len() as f64,
        );
        self.net.set_alphas_trainable(false);
        let train_loss = self.loss_backward(train_batch, "training")?;
        let ids = self.net.weight_ids().to_vec();
        self.sgd.step(
            &mut self.net.net.graph.params,
            &ids,
            self.w_lr,
            1.0 / train_batch.len() as f64,
        );
        self.net.set_alphas_trainable(true);
        Ok((train_loss, Some(val_loss)))
    }

    /// Frame-weighted loss and accuracy in inference mode, dropout cleared.
    pub fn evaluate(&mut self, set: &[Utterance]) -> Result<(f64, f64), SearchError> {
        if set.is_empty() {
            return Err(SearchError::Config("empty evaluation set".into()));
        }
        self.net.clear_dropout();
        let (classes, stride) = (self.net.net.classes, self.net.net.time_stride);
        let (mut loss_sum, mut hit_sum, mut frames) = (0.0, 0.0, 0usize);
        for u in set {
            let x = self.input_for(u);
            let post = self.net.net.forward_infer(x)?;
            let (loss, _) = ce_loss_and_seed(&post, &[&u.labels], classes, stride)?;
            let acc = accuracy(&post, &[&u.labels], stride);
            let to = post.shape()[2];
            loss_sum += loss * to as f64;
            hit_sum += acc * to as f64;
            frames += to;
        }
        Ok((loss_sum / frames as f64, hit_sum / frames as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    pub stage: usize,
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub genotype: Genotype,
    pub final_alphas: AlphaParams,
    pub active: ActiveOps,
    pub metrics: Vec<EpochMetric>,
    pub latency: LatencyReport,
    /// Held-out accuracy after the final joint epoch.
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub seed: u64,
    pub val_acc: f64,
    pub latency_ms: f64,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub rule: String,
    pub budget_ms: f64,
    pub candidates: Vec<CandidateRecord>,
    pub chosen_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub chosen: Genotype,
    pub selection: SelectionRecord,
}

#[derive(Serialize, Deserialize)]
struct AlphaCheckpoint {
    stage: usize,
    depth: usize,
    ops_kept: usize,
    dropout: f64,
    active: ActiveOps,
    alphas: AlphaParams,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SearchError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| SearchError::Config(format!("serialize {}: {e}", path.display())))?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetric]) -> Result<(), SearchError> {
    let mut out = String::from("epoch,phase,train_loss,val_loss,val_acc\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            m.epoch, m.phase, m.train_loss, m.val_loss, m.val_acc
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn run_stage(
    cfg: &SearchConfig,
    space: &SearchSpaceSpec,
    stage: &StageConfig,
    stage_no: usize,
    classes: usize,
    wset: &Dataset,
    aset: &Dataset,
    vset: &Dataset,
    active: ActiveOps,
    alphas: AlphaParams,
    master: &mut ChaCha20Rng,
    epoch_base: usize,
    metrics: &mut Vec<EpochMetric>,
) -> Result<(ActiveOps, AlphaParams), SearchError> {
    let (active, alphas) = prune_operations(&alphas, &active, stage.ops_kept)?;
    let net_seed: u64 = master.random();
    let shuffle_seed: u64 = master.random();
    let dropout_seed: u64 = master.random();
    let opts = NetOpts {
        bn_affine: true,
        causal_stem: cfg.causal_stem,
        n_freq: N_BINS,
        in_channels: N_CHANNELS,
        seed: net_seed,
    };
    let net = build_supernet::<f32>(space, &active, stage.depth, cfg.channels, classes, &opts)?;
    let mut trainer = Trainer::new(
        net,
        cfg.w_momentum,
        cfg.alpha_lr,
        stage.dropout,
        cfg.dropout_cells,
        dropout_seed,
    );
    trainer.net.set_alphas(&alphas)?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(shuffle_seed);
    let total_epochs = stage.warmup_epochs + stage.joint_epochs;
    for epoch in 0..total_epochs {
        trainer.set_w_lr(cosine_lr(epoch, total_epochs, cfg.w_lr_max, cfg.w_lr_min));
        let warmup = epoch < stage.warmup_epochs;
        let mut worder: Vec<usize> = (0..wset.utterances.len()).collect();
        worder.shuffle(&mut shuffle_rng);
        let mut aorder: Vec<usize> = (0..aset.utterances.len()).collect();
        aorder.shuffle(&mut shuffle_rng);
        let mut acursor = 0usize;
        let mut loss_acc = 0.0;
        let mut steps = 0usize;
        for chunk in worder.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &wset.utterances[i]).collect();
            let loss = if warmup {
                trainer.warmup_step(&batch)?
            } else {
                let val_batch: Vec<&Utterance> = (0..batch.len())
                    .map(|_| {
                        let u = &aset.utterances[aorder[acursor % aorder.len()]];
                        acursor += 1;
                        u
                    })
                    .collect();
                trainer.alternate_step(&batch, &val_batch)?.0
            };
            loss_acc += loss;
            steps += 1;
        }
        let (val_loss, val_acc) = trainer.evaluate(&vset.utterances)?;
        metrics.push(EpochMetric {
            stage: stage_no,
            epoch: epoch_base + epoch + 1,
            phase: if warmup { "warmup" } else { "joint" }.into(),
            train_loss: loss_acc / steps.max(1) as f64,
            val_loss,
            val_acc,
        });
    }
    let final_alphas = trainer.net.alphas();
    Ok((active, final_alphas))
}

fn run_seed(
    cfg: &SearchConfig,
    space: &SearchSpaceSpec,
    dataset: &Dataset,
    seed: u64,
    dir: Option<&Path>,
) -> Result<SeedOutcome, SearchError> {
    let (wset, aset, vset) = split_for_search(dataset.clone(), seed)?;
    let mut master = ChaCha20Rng::seed_from_u64(seed);
    let mut active = ActiveOps::full(space);
    let mut alphas = AlphaParams::zeros(space.edge_count(), space.operations.len());
    let mut metrics = Vec::new();
    let mut epoch_base = 0usize;
    for (k, stage) in cfg.stages.iter().enumerate() {
        let stage_no = k + 1;
        (active, alphas) = run_stage(
            cfg,
            space,
            stage,
            stage_no,
            dataset.classes,
            &wset,
            &aset,
            &vset,
            active,
            alphas,
            &mut master,
            epoch_base,
            &mut metrics,
        )
        .map_err(|e| e.at_stage(stage_no))?;
        epoch_base += stage.warmup_epochs + stage.joint_epochs;
        if let Some(dir) = dir {
            let ckpt = AlphaCheckpoint {
                stage: stage_no,
                depth: stage.depth,
                ops_kept: stage.ops_kept,
                dropout: stage.dropout,
                active: active.clone(),
                alphas: alphas.clone(),
            };
            write_json(&dir.join(format!("stage{stage_no}.alphas.json")), &ckpt)?;
        }
    }
    let mut genotype = discretize(&alphas, &active, space)?;
    genotype = enforce_pool_cap(&genotype, &alphas, &active, space, AVG_POOL_CAP)?;
    genotype.metadata.seed = Some(seed);
    genotype.metadata.stage_history = cfg
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| StageRecord {
            stage: (i + 1) as u32,
            depth: s.depth as u32,
            ops_kept: s.ops_kept as u32,
        })
        .collect();
    let report = validate_genotype(&genotype, space)?;
    if !report.is_valid() {
        return Err(SearchError::Config(format!(
            "searched genotype failed validation: {:?}",
            report.violations
        )));
    }
    let depth = cfg.stages.last().expect("3 stages").depth;
    let mut plan = build_macro_plan(depth, cfg.channels)?;
    plan.stem = plan.stem.with_causal(cfg.causal_stem);
    let latency = network_latency(&plan, &genotype)?;
    let val_acc = metrics.last().map(|m| m.val_acc).unwrap_or(0.0);
    if let Some(dir) = dir {
        fs::write(dir.join("genotype.json"), encode_genotype(&genotype) + "\n")?;
        write_json(&dir.join("latency.json"), &latency)?;
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    }
    Ok(SeedOutcome { seed, genotype, final_alphas: alphas, active, metrics, latency, val_acc })
}

/// Full progressive search: all seeds, all stages, then selection of the
/// best genotype by held-out accuracy within the latency budget.
pub fn run_search(
    cfg: &SearchConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<SearchOutcome, SearchError> {
    cfg.validate()?;
    if dataset.classes < 2 {
        return Err(SearchError::Config(format!(
            "dataset has {} classes, need at least 2",
            dataset.classes
        )));
    }
    let space = SearchSpaceSpec::preset(cfg.space);
    let final_depth = cfg.stages.last().expect("3 stages").depth;
    let plan = build_macro_plan(final_depth, cfg.channels)?;
    let budget_ms = cfg.latency_budget_ms.unwrap_or_else(|| space_latency_bound(&space, &plan));

    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir: Option<PathBuf> = match out_dir {
            Some(root) => {
                let d = root.join(format!("seed{seed}"));
                fs::create_dir_all(&d)?;
                Some(d)
            }
            None => None,
        };
        seeds.push(run_seed(cfg, &space, dataset, seed, seed_dir.as_deref())?);
    }

    let candidates: Vec<CandidateRecord> = seeds
        .iter()
        .map(|s| CandidateRecord {
            seed: s.seed,
            val_acc: s.val_acc,
            latency_ms: s.latency.total_ms,
            eligible: s.latency.total_ms <= budget_ms,
        })
        .collect();
    let best = seeds
        .iter()
        .filter(|s| s.latency.total_ms <= budget_ms)
        .max_by(|a, b| {
            a.val_acc
                .partial_cmp(&b.val_acc)
                .expect("finite accuracies")
                .then(b.seed.cmp(&a.seed))
        })
        .ok_or(SearchError::OverBudget { budget_ms })?;
    let selection = SelectionRecord {
        rule: "highest held-out accuracy among genotypes within the latency budget; ties to the lower seed".into(),
        budget_ms,
        candidates,
        chosen_seed: best.seed,
    };
    let chosen = best.genotype.clone();
    if let Some(root) = out_dir {
        fs::write(root.join("genotype.json"), encode_genotype(&chosen) + "\n")?;
        write_json(&root.join("selection.json"), &selection)?;
        #[derive(Serialize)]
        struct Manifest<'a> {
            config: &'a SearchConfig,
            budget_ms: f64,
            chosen_seed: u64,
            genotype_hashes: Vec<(u64, String)>,
        }
        let manifest = Manifest {
            config: cfg,
            budget_ms,
            chosen_seed: best.seed,
            genotype_hashes: seeds.iter().map(|s| (s.seed, s.genotype.hash())).collect(),
        };
        write_json(&root.join("manifest.json"), &manifest)?;
    }
    Ok(SearchOutcome { seeds, chosen, selection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, DeltaMode, SyntheticTaskConfig};
    use tempfile::tempdir;

    fn tiny_dataset(utterances: usize, seed: u64) -> Dataset {
        gen_synthetic(&SyntheticTaskConfig {
            classes: 4,
            past_window: 4,
            future_window: 0,
            utterances,
            len_min: 32,
            len_max: 32,
            noise_level: 0.1,
            delta_mode: DeltaMode::Causal,
            seed,
        })
        .unwrap()
    }

    fn tiny_config() -> SearchConfig {
        let shapes = [(3usize, 8usize), (4, 5), (5, 3)];
        let dropouts = [0.0, 0.05, 0.10];
        SearchConfig {
            channels: 4,
            stages: shapes
                .iter()
                .zip(dropouts)
                .map(|(&(depth, ops_kept), dropout)| StageConfig {
                    depth,
                    ops_kept,
                    warmup_epochs: 1,
                    joint_epochs: 1,
                    dropout,
                })
                .collect(),
            seeds: vec![1],
            batch_size: 2,
            ..SearchConfig::default()
        }
    }

    fn tiny_trainer(seed: u64, dropout: f64) -> Trainer<f32> {
        let space = SearchSpaceSpec::low_latency();
        let active = ActiveOps::full(&space);
        let opts = NetOpts {
            bn_affine: true,
            causal_stem: true,
            n_freq: N_BINS,
            in_channels: N_CHANNELS,
            seed,
        };
        let net = build_supernet::<f32>(&space, &active, 3, 4, 4, &opts).unwrap();
        Trainer::new(net, 0.9, 3e-4, dropout, DropoutCells::Both, seed ^ 7)
    }

    #[test]
    fn three_stage_search_yields_valid_genotype_and_artifacts() {
        let cfg = tiny_config();
        let data = tiny_dataset(8, 5);
        let dir = tempdir().unwrap();
        let out = run_search(&cfg, &data, Some(dir.path())).unwrap();

        let space = SearchSpaceSpec::preset(cfg.space);
        assert!(validate_genotype(&out.chosen, &space).unwrap().is_valid());
        assert!(out.selection.candidates[0].eligible);
        assert!(out.seeds[0].latency.total_ms <= out.selection.budget_ms);
        assert_eq!(out.chosen.metadata.seed, Some(1));
        assert_eq!(out.chosen.metadata.stage_history.len(), 3);

        let seed_dir = dir.path().join("seed1");
        for stage in 1..=3 {
            assert!(seed_dir.join(format!("stage{stage}.alphas.json")).exists());
        }
        let csv = std::fs::read_to_string(seed_dir.join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,phase,train_loss,val_loss,val_acc");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6);
        for (i, row) in rows.iter().enumerate() {
            let phase = row.split(',').nth(1).unwrap();
            assert_eq!(phase, if i % 2 == 0 { "warmup" } else { "joint" }, "row {i}");
            let epoch: usize = row.split(',').next().unwrap().parse().unwrap();
            assert_eq!(epoch, i + 1);
        }
        let root_genotype =
            crate::arch::parse_genotype(&std::fs::read_to_string(dir.path().join("genotype.json")).unwrap())
                .unwrap();
        assert_eq!(root_genotype, out.chosen);
        let per_seed =
            crate::arch::parse_genotype(&std::fs::read_to_string(seed_dir.join("genotype.json")).unwrap())
                .unwrap();
        assert_eq!(per_seed, out.seeds[0].genotype);
        assert!(dir.path().join("selection.json").exists());
        assert!(dir.path().join("manifest.json").exists());
        assert!(seed_dir.join("latency.json").exists());
    }

    #[test]
    fn search_is_deterministic_for_a_seed() {
        let cfg = tiny_config();
        let data = tiny_dataset(8, 5);
        let a = run_search(&cfg, &data, None).unwrap();
        let b = run_search(&cfg, &data, None).unwrap();
        assert_eq!(encode_genotype(&a.chosen), encode_genotype(&b.chosen));
        assert_eq!(a.seeds[0].metrics, b.seeds[0].metrics);
        assert_eq!(a.seeds[0].final_alphas, b.seeds[0].final_alphas);
    }

    #[test]
    fn warmup_learns_while_scores_stay_frozen() {
        let data = tiny_dataset(2, 9);
        let mut trainer = tiny_trainer(3, 0.0);
        trainer.set_w_lr(0.05);
        let before = trainer.net.alphas();
        let batch: Vec<&Utterance> = data.utterances.iter().collect();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            last = trainer.warmup_step(&batch).unwrap();
        }
        assert_eq!(trainer.net.alphas(), before);
        for id in trainer.net.alpha_ids() {
            for &g in trainer.net.net.graph.params.grad(id).as_slice() {
                assert_eq!(g, 0.0);
            }
        }
        // Beat a constant predictor of the consumed-label marginal.
        let stride = trainer.net.net.time_stride;
        let mut counts = [0usize; 4];
        let mut n = 0usize;
        for u in &data.utterances {
            for j in 0..u.frames() / stride {
                counts[u.labels[j * stride] as usize] += 1;
                n += 1;
            }
        }
        let baseline: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        assert!(last < baseline, "loss {last} never beat the marginal baseline {baseline}");
    }

    #[test]
    fn disabled_alpha_updates_reduce_alternation_to_warmup() {
        let data = tiny_dataset(4, 11);
        let (train, val) = data.utterances.split_at(2);
        let train: Vec<&Utterance> = train.iter().collect();
        let val: Vec<&Utterance> = val.iter().collect();

        let mut a = tiny_trainer(21, 0.2);
        let mut b = tiny_trainer(21, 0.2);
        a.set_w_lr(0.03);
        b.set_w_lr(0.03);
        b.alpha_updates_enabled = false;
        for _ in 0..4 {
            let la = a.warmup_step(&train).unwrap();
            let (lb, vlb) = b.alternate_step(&train, &val).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
            assert!(vlb.is_none());
        }
        let pa = &a.net.net.graph.params;
        let pb = &b.net.net.graph.params;
        for id in a.net.weight_ids().iter().chain(a.net.alpha_ids().iter()) {
            let (x, y) = (pa.value(*id), pb.value(*id));
            for (xa, xb) in x.as_slice().iter().zip(y.as_slice()) {
                assert_eq!(xa.to_bits(), xb.to_bits());
            }
        }
    }

    #[test]
    fn joint_training_improves_held_out_loss_over_warmup_alone() {
        let data = tiny_dataset(14, 13);
        let train: Vec<&Utterance> = data.utterances[0..4].iter().collect();
        let val: Vec<&Utterance> = data.utterances[4..8].iter().collect();
        let holdout = &data.utterances[8..14];

        // Paired comparison, averaged over initializations to keep the
        // desk-scale signal out of per-run noise.
        let (mut warm_sum, mut joint_sum) = (0.0, 0.0);
        for init in [17u64, 18, 19] {
            let mut trainer = tiny_trainer(init, 0.0);
            trainer.set_w_lr(0.05);
            for _ in 0..15 {
                trainer.warmup_step(&train).unwrap();
            }
            let (after_warmup, _) = trainer.evaluate(holdout).unwrap();
            trainer.set_w_lr(0.01);
            for _ in 0..5 {
                trainer.alternate_step(&train, &val).unwrap();
            }
            let (after_joint, _) = trainer.evaluate(holdout).unwrap();
            warm_sum += after_warmup;
            joint_sum += after_joint;
        }
        assert!(
            joint_sum < warm_sum,
            "joint mean {:.4} did not improve on warmup mean {:.4}",
            joint_sum / 3.0,
            warm_sum / 3.0
        );
    }
}
