use std::fs;
use std::path::{Path, PathBuf};

use attnprint_adversary::false_claim::write_fitness_csv;
use attnprint_adversary::finetune::write_trajectory_csv;
use attnprint_adversary::{false_claim_ga, finetune_attack, structured_prune, FinetuneAttackConfig, GaConfig, UpdateScope};
use attnprint_core::ablation::{ablation_sweep, AblationGrid, LayerWindow, ModelFamily};
use attnprint_core::augment::{build_training_set, load_corpus, save_corpus, AugmentPlan};
use attnprint_core::fingerprint::{
    extract_fingerprint, extract_fingerprint_with, fingerprint_distance, load_fingerprint, save_fingerprint,
    ExtractOptions, ValueKind, WeightSubset,
};
use attnprint_core::model::{
    derive_related_model, generate_structured_model, generate_toy_model, load_model, save_model, SpectralProfile,
    ToyModelConfig,
};
use attnprint_core::transforms::{combined_attack, linear_mapping_attack, permutation_attack, AttackRecord};
use attnprint_core::{Fingerprint, Model};
use attnprint_simnet::{load_checkpoint, save_checkpoint, train, verify, Architecture, SimNetParams, TrainConfig};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::report::{input_hash, write_report, Provenance, ReportDocument};

const CREATED_BY: &str = concat!("attnprint ", env!("CARGO_PKG_VERSION"));

/// Name of the target fingerprint stored next to a trained checkpoint.
pub const TARGET_FINGERPRINT: &str = "target.fp";

fn model(path: &Path) -> Result<Model> {
    Ok(load_model(path)?)
}

fn fingerprint(path: &Path) -> Result<Fingerprint> {
    Ok(load_fingerprint(path)?)
}

fn models(paths: &[PathBuf]) -> Result<Vec<Model>> {
    paths.iter().map(|p| model(p)).collect()
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn extract(args: &ExtractArgs, profile: Profile) -> Result<()> {
    let (n_f, h) = args.dims.resolve(profile);
    let options = ExtractOptions {
        layer_start: args.layer_start,
        ..Default::default()
    };
    let fp = extract_fingerprint_with(&model(&args.model)?, n_f, h, options)?;
    for w in &fp.warnings {
        eprintln!("warning: {w}");
    }
    save_fingerprint(&fp, &args.out, CREATED_BY)?;
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let d = fingerprint_distance(&fingerprint(&args.a)?, &fingerprint(&args.b)?)?;
    println!("{d:.6}");
    Ok(())
}

pub fn attack(args: &AttackArgs, profile: Profile) -> Result<()> {
    let m = model(&args.model)?;
    let mut record: Option<AttackRecord> = None;
    let attacked = match args.kind {
        AttackKindArg::Permute => {
            let (out, r) = permutation_attack(&m, args.seed)?;
            record = Some(r);
            out
        }
        AttackKindArg::Linmap => {
            let (out, r) = linear_mapping_attack(&m, args.seed, args.per_layer)?;
            record = Some(r);
            out
        }
        AttackKindArg::Combined => {
            let (out, r) = combined_attack(&m, args.seed)?;
            record = Some(r);
            out
        }
        AttackKindArg::Finetune => {
            let (n_f, h) = args.dims.resolve(profile);
            let target = match &args.target {
                Some(p) => fingerprint(p)?,
                None => extract_fingerprint(&m, n_f, h)?,
            };
            let cfg = FinetuneAttackConfig {
                steps: args.steps,
                learning_rate: args.learning_rate,
                l1: args.l1,
                l2: args.l2,
                use_data_loss: !args.no_data_loss,
                seed: args.seed,
                scope: if args.all_layers {
                    UpdateScope::AllLayers
                } else {
                    UpdateScope::FingerprintLayers
                },
                ..Default::default()
            };
            let (out, trajectory) = finetune_attack(&m, &target, &cfg)?;
            if let Some(path) = &args.trajectory {
                write_trajectory_csv(&trajectory, path)?;
            }
            if let Some(last) = trajectory.last() {
                println!("{:.6}", last.distance);
            }
            out
        }
        AttackKindArg::Prune => structured_prune(&m, args.ratio, args.seed)?,
    };
    save_model(&attacked, &args.out)?;
    match (&args.record, record) {
        (Some(path), Some(r)) => write_json(&r, path),
        (Some(_), None) => Err(CliError::Usage(format!(
            "--record only applies to permute, linmap and combined, not {:?}",
            args.kind
        ))),
        _ => Ok(()),
    }
}

pub fn augment(args: &AugmentArgs, profile: Profile) -> Result<()> {
    let (n_f, h) = args.dims.resolve(profile);
    let plan = match args.plan {
        PlanArg::Desk => AugmentPlan::desk(args.seed),
        PlanArg::Paper => AugmentPlan::paper(args.seed),
        PlanArg::None => AugmentPlan::empty(args.seed),
    };
    let target = model(&args.target)?;
    let corpus = build_training_set(&target, &models(&args.related)?, &models(&args.unrelated)?, &plan, n_f, h)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    save_corpus(&corpus, &args.out)?;
    println!("{} items", corpus.len());
    Ok(())
}

pub fn train_net(args: &TrainArgs, profile: Profile) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let first = corpus
        .items
        .first()
        .ok_or_else(|| CliError::Usage(format!("{}: corpus is empty", args.corpus.display())))?;
    let (n_f, h) = (first.fingerprint.n_layers_used, first.fingerprint.top_k);
    let widths = args.widths.unwrap_or(match profile {
        Profile::Toy => WidthsArg::Desk,
        Profile::Paper => WidthsArg::Full,
    });
    let arch = match widths {
        WidthsArg::Desk => Architecture::desk(n_f, h)?,
        WidthsArg::Full => Architecture::full(n_f, h)?,
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        ..Default::default()
    };
    let (params, history) = train(SimNetParams::init(arch, args.seed)?, &corpus, &cfg)?;
    save_checkpoint(&params, &args.out, Some(&cfg), cfg.epochs)?;
    // The first corpus item is the target itself.
    save_fingerprint(&first.fingerprint, &args.out.join(TARGET_FINGERPRINT), CREATED_BY)?;
    if let Some(path) = &args.history {
        let wrap = |source| CliError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        for row in &history {
            w.serialize(row).map_err(wrap)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    if let Some(last) = history.last() {
        println!("loss {:.6} accuracy {:.3}", last.loss, last.accuracy);
    }
    Ok(())
}

pub fn verify_suspect(args: &VerifyArgs, config: serde_json::Value) -> Result<()> {
    let (params, _) = load_checkpoint(&args.simnet)?;
    let suspect = fingerprint(&args.fingerprint)?;
    let target_path = args.target.clone().unwrap_or_else(|| args.simnet.join(TARGET_FINGERPRINT));
    let target = fingerprint(&target_path)?;
    let verdict = verify(&params, &suspect, args.tau)?;
    let created_at = args.timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let report = ReportDocument {
        target_id: target.model_id.clone(),
        suspect_id: suspect.model_id.clone(),
        simnet_score: verdict.score,
        threshold: verdict.threshold,
        distance: fingerprint_distance(&target, &suspect)?,
        verdict: verdict.related,
        provenance: Provenance {
            inputs: vec![
                input_hash("simnet", &args.simnet)?,
                input_hash("suspect", &args.fingerprint)?,
                input_hash("target", &target_path)?,
            ],
            seed: None,
            config,
            created_at,
        },
    };
    write_report(&report, &args.report, args.format)?;
    println!("{:.6} {}", report.simnet_score, if report.verdict { "related" } else { "unrelated" });
    Ok(())
}

pub fn false_claim(args: &FalseClaimArgs) -> Result<()> {
    let (a, b) = (model(&args.a)?, model(&args.b)?);
    let cfg = GaConfig {
        population_size: args.population,
        generations: args.generations,
        sequence_length: args.length,
        mutation_rate: args.mutation_rate,
        elitism_count: args.elitism,
        seed: args.seed,
    };
    let out = false_claim_ga(&a, &b, &cfg)?;
    if let Some(path) = &args.history {
        write_fitness_csv(&out.history, path)?;
    }
    let tokens: Vec<String> = out.best_tokens.iter().map(|t| t.to_string()).collect();
    println!("{:.6} {}", out.best_fitness, tokens.join(" "));
    Ok(())
}

#[derive(serde::Serialize)]
struct AblationCsvRow {
    window: LayerWindow,
    subset: WeightSubset,
    kind: ValueKind,
    h: usize,
    n_f: usize,
    max_related_distance: Option<f64>,
    min_unrelated_distance: Option<f64>,
    margin: Option<f64>,
    note: Option<String>,
}

pub fn ablate(args: &AblateArgs, profile: Profile) -> Result<()> {
    let family = ModelFamily {
        target: model(&args.target)?,
        related: models(&args.related)?,
        unrelated: models(&args.unrelated)?,
    };
    let grid = AblationGrid {
        windows: vec![LayerWindow::First, LayerWindow::Middle, LayerWindow::Last],
        subsets: vec![WeightSubset::Qk, WeightSubset::Vo, WeightSubset::Both],
        kinds: vec![ValueKind::Singular, ValueKind::Eigen, ValueKind::Both],
        h_values: args.h_values.clone(),
        n_f_values: if args.nf_values.is_empty() {
            vec![profile.n_f()]
        } else {
            args.nf_values.clone()
        },
    };
    let rows = ablation_sweep(&family, &grid)?;
    let wrap = |source| CliError::Csv {
        path: args.out.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&args.out).map_err(wrap)?;
    for row in rows {
        w.serialize(AblationCsvRow {
            window: row.cell.window,
            subset: row.cell.subset,
            kind: row.cell.kind,
            h: row.cell.h,
            n_f: row.cell.n_f,
            max_related_distance: row.report.as_ref().map(|r| r.max_related_distance),
            min_unrelated_distance: row.report.as_ref().map(|r| r.min_unrelated_distance),
            margin: row.report.as_ref().map(|r| r.margin),
            note: row.note,
        })
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(&args.out, e))
}

pub fn toy(args: &ToyArgs) -> Result<()> {
    let out = match &args.from {
        Some(base) => derive_related_model(&model(base)?, args.scale, args.seed)?,
        None if args.iid => generate_toy_model(&ToyModelConfig::desk(), args.seed)?,
        None => generate_structured_model(&ToyModelConfig::desk(), &SpectralProfile::default(), args.seed)?,
    };
    save_model(&out, &args.out)?;
    Ok(())
}
