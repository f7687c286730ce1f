use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::arch::{build_macro_plan, parse_genotype, validate_genotype, Genotype, SearchSpaceSpec};
use crate::builder::{build_eval_net, NetOpts};
use crate::data::{
    gen_synthetic, load_features, write_features, SyntheticTaskConfig, N_BINS, N_CHANNELS,
};
use crate::latency::{network_latency, LatencyReport};
use crate::search::{run_search, write_json};
use crate::verify::{certify, Verdict};

use super::manifest::{fresh_run_dir, write_manifest, RunManifest, SearchSummary};
use super::{CliError, GenDataArgs, LatencyArgs, RunConfig, SearchArgs, VerifyArgs};

pub fn read_genotype(path: &Path) -> Result<Genotype, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read genotype {}: {e}", path.display())))?;
    parse_genotype(&text)
        .map_err(|e| CliError::Usage(format!("genotype {}: {e}", path.display())))
}

/// Validated genotype or exit code 1; runs before any network is built.
pub fn checked_genotype(path: &Path) -> Result<Genotype, CliError> {
    let g = read_genotype(path)?;
    let space = SearchSpaceSpec::preset(g.space);
    let report = validate_genotype(&g, &space)
        .map_err(|e| CliError::Failed(format!("genotype {}: {e}", path.display())))?;
    if !report.is_valid() {
        return Err(CliError::Failed(format!("genotype {} is invalid:\n{report}", path.display())));
    }
    Ok(g)
}

pub fn fmt_ms(ms: f64) -> String {
    if ms.fract() == 0.0 {
        format!("{}ms", ms as i64)
    } else {
        format!("{ms:.1}ms")
    }
}

fn frames(n: u64) -> String {
    format!("{n} frame{}", if n == 1 { "" } else { "s" })
}

fn print_latency(report: &LatencyReport) {
    println!("genotype {}", &report.genotype_hash[..12]);
    println!("  stem: {}, {}", frames(report.stem_frames), fmt_ms(report.stem_ms));
    for c in &report.cells {
        println!(
            "  cell {} ({}): {} at {} period, {}",
            c.index,
            c.cell_type,
            frames(c.frames),
            fmt_ms(c.input_period_ms),
            fmt_ms(c.ms)
        );
    }
    println!(
        "  total: {} input {}, {}",
        report.total_input_frames,
        if report.total_input_frames == 1 { "frame" } else { "frames" },
        fmt_ms(report.total_ms)
    );
}

pub fn cmd_search(a: &SearchArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seeds) = &a.seeds {
        cfg.search.seeds = seeds.clone();
    }
    if let Some(data) = &a.data {
        cfg.data.features = data.clone();
    }
    if let Some(out) = &a.out {
        cfg.run.out_dir = out.clone();
    }
    cfg.search.validate()?;
    if !cfg.data.features.exists() {
        return Err(CliError::Usage(format!(
            "dataset file {} does not exist (key data.features)",
            cfg.data.features.display()
        )));
    }
    let dataset = load_features(&cfg.data.features, cfg.data.delta_mode)
        .map_err(|e| CliError::Usage(format!("dataset {}: {e}", cfg.data.features.display())))?;
    let loaded_ms = t0.elapsed().as_secs_f64() * 1e3;

    let out_dir = cfg.run.out_dir.clone();
    fresh_run_dir(&out_dir)?;
    let outcome = run_search(&cfg.search, &dataset, Some(&out_dir))?;
    let search_ms = t0.elapsed().as_secs_f64() * 1e3 - loaded_ms;

    let mut manifest = RunManifest::new("search", &cfg, cfg.search.seeds.clone())?;
    manifest.hash_input(&a.config)?;
    manifest.hash_input(&cfg.data.features)?;
    manifest.outputs = vec!["genotype.json".into(), "selection.json".into()];
    for outcome in &outcome.seeds {
        let base = format!("seed{}", outcome.seed);
        for stage in 1..=cfg.search.stages.len() {
            manifest.outputs.push(format!("{base}/stage{stage}.alphas.json"));
        }
        for file in ["genotype.json", "latency.json", "metrics.csv"] {
            manifest.outputs.push(format!("{base}/{file}"));
        }
    }
    manifest.timings_ms.insert("load".into(), loaded_ms);
    manifest.timings_ms.insert("search".into(), search_ms);
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    manifest.search = Some(SearchSummary {
        budget_ms: outcome.selection.budget_ms,
        chosen_seed: outcome.selection.chosen_seed,
        genotype_hashes: outcome.seeds.iter().map(|s| (s.seed, s.genotype.hash())).collect(),
    });
    write_manifest(&out_dir, &manifest)?;

    let chosen = outcome.seeds.iter().find(|s| s.seed == outcome.selection.chosen_seed);
    if let Some(s) = chosen {
        println!(
            "chose seed {}: genotype {}, {}, held-out accuracy {:.4}",
            s.seed,
            &s.genotype.hash()[..12],
            fmt_ms(s.latency.total_ms),
            s.val_acc
        );
    }
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

pub fn cmd_latency(a: &LatencyArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let g = checked_genotype(&a.genotype)?;
    let mut plan = build_macro_plan(a.cells, a.channels)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    plan.stem = plan.stem.with_causal(a.causal_stem);
    let report = network_latency(&plan, &g).map_err(|e| CliError::Failed(e.to_string()))?;
    print_latency(&report);
    if let Some(out) = &a.out {
        fresh_run_dir(out)?;
        write_json(&out.join("latency.json"), &report)?;
        let mut manifest = RunManifest::new("latency", &ArgRecord::from_latency(a), vec![])?;
        manifest.hash_input(&a.genotype)?;
        manifest.outputs = vec!["latency.json".into()];
        manifest.timings_ms.insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
        manifest.latency = Some(report);
        write_manifest(out, &manifest)?;
    }
    Ok(())
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let g = checked_genotype(&a.genotype)?;
    let mut plan = build_macro_plan(a.cells, a.channels)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    plan.stem = plan.stem.with_causal(a.causal_stem);
    let report = network_latency(&plan, &g).map_err(|e| CliError::Failed(e.to_string()))?;
    let opts = NetOpts {
        bn_affine: true,
        causal_stem: a.causal_stem,
        n_freq: N_BINS,
        in_channels: N_CHANNELS,
        seed: a.seed,
    };
    let mut net = build_eval_net::<f32>(&g, a.cells, a.channels, a.classes, &opts)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let probe = certify(&mut net, &report, a.trials, a.tolerance, a.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    println!(
        "claimed {} frames, measured {} frames over {} trials (max deviation {:.3e})",
        probe.claimed_frames, probe.measured_frames, probe.trials, probe.max_deviation
    );
    println!("verdict: {}", if probe.verdict == Verdict::Pass { "PASS" } else { "FAIL" });
    if let Some(out) = &a.out {
        fresh_run_dir(out)?;
        write_json(&out.join("probe.json"), &probe)?;
        let mut manifest = RunManifest::new("verify", &ArgRecord::from_verify(a), vec![a.seed])?;
        manifest.hash_input(&a.genotype)?;
        manifest.outputs = vec!["probe.json".into()];
        manifest.timings_ms.insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
        manifest.latency = Some(report);
        write_manifest(out, &manifest)?;
    }
    if probe.verdict != Verdict::Pass {
        return Err(CliError::Failed(format!(
            "measured lookahead {} frames exceeds the claimed {} or the claim is insensitive",
            probe.measured_frames, probe.claimed_frames
        )));
    }
    Ok(())
}

pub fn cmd_gendata(a: &GenDataArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let cfg = SyntheticTaskConfig {
        classes: a.classes,
        past_window: a.past,
        future_window: a.future,
        utterances: a.utts,
        len_min: a.len_min,
        len_max: a.len_max,
        noise_level: a.noise,
        seed: a.seed,
        ..SyntheticTaskConfig::default()
    };
    let dataset = gen_synthetic(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    fresh_run_dir(&a.out)?;
    let path = a.out.join("features.lcnf");
    write_features(&dataset, &path).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut manifest = RunManifest::new("gen-data", &cfg, vec![a.seed])?;
    manifest.outputs = vec!["features.lcnf".into()];
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_secs_f64() * 1e3);
    write_manifest(&a.out, &manifest)?;
    println!(
        "wrote {} utterances, {} classes: {}",
        dataset.utterances.len(),
        dataset.classes,
        path.display()
    );
    Ok(())
}

pub fn cmd_dump_config() -> Result<(), CliError> {
    print!("{}", RunConfig::default().to_toml());
    Ok(())
}

/// Serializable snapshots of plain-argument commands for their manifests.
#[derive(serde::Serialize)]
struct ArgRecord {
    genotype: String,
    cells: usize,
    channels: usize,
    causal_stem: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

impl ArgRecord {
    fn from_latency(a: &LatencyArgs) -> Self {
        ArgRecord {
            genotype: a.genotype.display().to_string(),
            cells: a.cells,
            channels: a.channels,
            causal_stem: a.causal_stem,
            trials: None,
            classes: None,
            tolerance: None,
        }
    }

    fn from_verify(a: &VerifyArgs) -> Self {
        ArgRecord {
            genotype: a.genotype.display().to_string(),
            cells: a.cells,
            channels: a.channels,
            causal_stem: a.causal_stem,
            trials: Some(a.trials),
            classes: Some(a.classes),
            tolerance: Some(a.tolerance),
        }
    }
}
