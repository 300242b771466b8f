use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use synuse::promptgen::{self, AttributePool, ProviderClient, ProviderConfig, ProviderMode, TemplateSet};
use synuse::quality::{self, ImageArray, ProbMatrix};
use synuse::ranking::{build_arms, Metric, ScoreTable};
use synuse::store::{self, Domain, EmbeddingSet, Extractor, FeatureRecord};
use synuse::trainer::{self, ArmSpec, ChildProcessLearner, SurrogateLearner, SurrogateParams, TrainingConfig};
use synuse::usability::{self, DpsWeights, FcsParams, UsabilityConfig};

use crate::config::{LearnerKind, RunConfig};
use crate::{AucArgs, BanditArgs, IngestArgs, PromptArgs, RankArgs, ScoreArgs};

pub const SCORES_CSV: &str = "scores.csv";
pub const SCORES_JSON: &str = "scores.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SET_SUMMARY_JSON: &str = "set_summary.json";
pub const ARMS_JSON: &str = "arms.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_set(path: &Path, domain: Domain, extractor: Extractor) -> Result<EmbeddingSet> {
    let set = store::ingest_embeddings(path).with_context(|| format!("ingesting {}", path.display()))?;
    if set.domain != domain || set.extractor != extractor {
        bail!(
            "{} holds {:?}/{:?} embeddings, expected {:?}/{:?}",
            path.display(),
            set.domain,
            set.extractor,
            domain,
            extractor
        );
    }
    Ok(set)
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str, needed_by: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| anyhow!("{needed_by} needs {what} (set it in [data] or pass --{})", what.replace('_', "-")))
}

pub fn ingest(config: &RunConfig, args: &IngestArgs) -> Result<()> {
    if let Some(csv_path) = &args.from_csv {
        let set = set_from_csv(csv_path, args)?;
        let out = args.write.as_ref().expect("clap requires --write");
        store::write_embeddings(&set, out)?;
        println!("wrote {} records of dimension {} to {}", set.len(), set.dim, out.display());
        return Ok(());
    }
    if args.files.is_empty() {
        bail!("nothing to ingest: pass embedding files or --from-csv");
    }
    let mut reports = vec![];
    for path in &args.files {
        let set = store::ingest_embeddings(path).with_context(|| format!("ingesting {}", path.display()))?;
        let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
        for r in &set.records {
            *per_class.entry(r.class_id).or_default() += 1;
        }
        reports.push(json!({
            "path": path,
            "dataset_tag": set.dataset_tag,
            "domain": set.domain,
            "extractor": set.extractor,
            "dim": set.dim,
            "num_classes": set.num_classes,
            "count": set.len(),
            "per_class": per_class,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    ensure_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("ingest.json"), &reports)
}

fn set_from_csv(path: &Path, args: &IngestArgs) -> Result<EmbeddingSet> {
    let domain = match args.domain.as_deref() {
        Some("real") => Domain::Real,
        _ => Domain::Synthetic,
    };
    let extractor = match args.extractor.as_deref() {
        Some("midlevel") => Extractor::Midlevel,
        _ => Extractor::Highlevel,
    };
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = vec![];
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), line + 1))?;
        if row.len() < 3 {
            bail!("{} row {}: need image_id, class_id and at least one value", path.display(), line + 1);
        }
        let class_id: u32 = row[1]
            .trim()
            .parse()
            .with_context(|| format!("{} row {}: class_id", path.display(), line + 1))?;
        let vector = row
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}: vector", path.display(), line + 1))?;
        records.push(FeatureRecord {
            image_id: row[0].to_string(),
            class_id,
            domain,
            extractor,
            vector,
        });
    }
    let dim = records.first().map_or(0, |r| r.vector.len());
    let set = EmbeddingSet {
        dataset_tag: args.tag.clone().expect("clap requires --tag"),
        domain,
        extractor,
        dim,
        num_classes: args.num_classes.expect("clap requires --num-classes"),
        records,
    };
    set.validate()?;
    Ok(set)
}

fn find_image(dir: &Path, image_id: &str) -> Result<PathBuf> {
    ["png", "ppm", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| anyhow!("no image for {image_id} in {}", dir.display()))
}

fn load_probabilities(path: &Path, ids: &[String]) -> Result<ProbMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let rows = ids
        .iter()
        .map(|id| {
            map.get(id)
                .cloned()
                .ok_or_else(|| anyhow!("{} has no probabilities for {id}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbMatrix::new(rows)?)
}

/// SSIM and PSNR of each synthetic image against the nearest real image
/// (by embedding) of its class.
fn pixel_scores(syn: &EmbeddingSet, real: &EmbeddingSet, syn_dir: &Path, real_dir: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ssim = Vec::with_capacity(syn.len());
    let mut psnr = Vec::with_capacity(syn.len());
    let mut cache: BTreeMap<String, ImageArray> = BTreeMap::new();
    for record in &syn.records {
        let partner = quality::nearest_real(record, real)?;
        let a = quality::load_image(&find_image(syn_dir, &record.image_id)?)?;
        if !cache.contains_key(&partner.image_id) {
            let img = quality::load_image(&find_image(real_dir, &partner.image_id)?)?;
            cache.insert(partner.image_id.clone(), img);
        }
        let b = &cache[&partner.image_id];
        ssim.push(quality::ssim(&a, b).with_context(|| format!("SSIM of {}", record.image_id))?);
        psnr.push(quality::psnr(&a, b).with_context(|| format!("PSNR of {}", record.image_id))?);
    }
    Ok((ssim, psnr))
}

fn apply_score_flags(config: &mut RunConfig, args: &ScoreArgs) -> Result<()> {
    let d = &mut config.data;
    for (slot, flag) in [
        (&mut d.real_mid, &args.real_mid),
        (&mut d.syn_mid, &args.syn_mid),
        (&mut d.real_high, &args.real_high),
        (&mut d.syn_high, &args.syn_high),
        (&mut d.real_images, &args.real_images),
        (&mut d.syn_images, &args.syn_images),
        (&mut d.probabilities, &args.probabilities),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(names) = &args.metrics {
        config.score.metrics = names.iter().map(|n| n.parse()).collect::<synuse::Result<_>>()?;
    }
    if let Some(k) = args.k {
        config.score.k = k;
    }
    Ok(())
}

pub fn score(config: &mut RunConfig, args: &ScoreArgs) -> Result<()> {
    apply_score_flags(config, args)?;
    let sc = config.score.clone();
    let data = config.data.clone();
    if sc.metrics.is_empty() {
        bail!("no metrics requested");
    }
    if let Some(m) = sc.metrics.iter().find(|m| !m.is_primitive()) {
        bail!("{m} is an arm aggregate; score one of SSIM, PSNR, IS, FID, DPS, FCS");
    }
    let wants = |m: Metric| sc.metrics.contains(&m);
    let needs_mid = wants(Metric::Dps) || wants(Metric::Fid) || wants(Metric::Ssim) || wants(Metric::Psnr);
    let mid = if needs_mid || data.syn_mid.is_some() && data.real_mid.is_some() {
        let real = require(&data.real_mid, "real_mid", "mid-level scoring")?;
        let syn = require(&data.syn_mid, "syn_mid", "mid-level scoring")?;
        Some((
            load_set(real, Domain::Real, Extractor::Midlevel)?,
            load_set(syn, Domain::Synthetic, Extractor::Midlevel)?,
        ))
    } else {
        None
    };
    let high = if wants(Metric::Fcs) {
        let real = require(&data.real_high, "real_high", "FCS")?;
        let syn = require(&data.syn_high, "syn_high", "FCS")?;
        Some((
            load_set(real, Domain::Real, Extractor::Highlevel)?,
            load_set(syn, Domain::Synthetic, Extractor::Highlevel)?,
        ))
    } else {
        None
    };
    let syn_order = match (&mid, &high) {
        (Some((_, s)), _) | (None, Some((_, s))) => s,
        (None, None) => bail!("IS alone needs the synthetic id list; configure syn_mid and real_mid"),
    };
    let ids: Vec<String> = syn_order.records.iter().map(|r| r.image_id.clone()).collect();
    let mut table = ScoreTable::new(ids.clone())?;

    let ucfg = UsabilityConfig {
        weights: DpsWeights {
            photorealism: sc.photorealism_weight,
            diversity: sc.diversity_weight,
        },
        k: sc.k,
        fcs: FcsParams {
            eps_kl: sc.eps_kl,
            phi_cap: sc.phi_cap,
        },
        seed: config.seed,
    };

    let mut dps_scores = None;
    if wants(Metric::Dps) {
        let (real, syn) = mid.as_ref().expect("loaded above");
        let d = usability::score_dps(real, syn, ucfg.weights)?;
        table.insert(Metric::Dps, d.iter().map(|(_, d)| d.psi).collect())?;
        dps_scores = Some(d);
    }
    let mut fcs_scores = None;
    if let Some((real, syn)) = &high {
        let f: BTreeMap<String, f64> = usability::score_fcs(real, syn, &ucfg)?.into_iter().collect();
        let col = ids
            .iter()
            .map(|id| f.get(id).copied().ok_or_else(|| anyhow!("{id} has no high-level embedding")))
            .collect::<Result<Vec<_>>>()?;
        table.insert(Metric::Fcs, col.clone())?;
        fcs_scores = Some(col);
    }
    if wants(Metric::Fid) {
        let (real, syn) = mid.as_ref().expect("loaded above");
        let real_stats = quality::fit_gaussian_set(real)?;
        let vectors: Vec<Vec<f64>> = syn.records.iter().map(FeatureRecord::vector_f64).collect();
        table.insert(Metric::Fid, quality::fid_deltas(&real_stats, &vectors)?)?;
    }
    if wants(Metric::Is) {
        let path = require(&data.probabilities, "probabilities", "IS")?;
        let p = load_probabilities(path, &ids)?;
        table.insert(Metric::Is, quality::inception_contributions(&p))?;
    }
    if wants(Metric::Ssim) || wants(Metric::Psnr) {
        let (real, syn) = mid.as_ref().expect("loaded above");
        let syn_dir = require(&data.syn_images, "syn_images", "SSIM/PSNR")?;
        let real_dir = require(&data.real_images, "real_images", "SSIM/PSNR")?;
        let (ssim, psnr) = pixel_scores(syn, real, syn_dir, real_dir)?;
        if wants(Metric::Ssim) {
            table.insert(Metric::Ssim, ssim)?;
        }
        if wants(Metric::Psnr) {
            table.insert(Metric::Psnr, psnr)?;
        }
    }

    ensure_dir(&config.out_dir)?;
    let metrics_path = config.out_dir.join(METRICS_CSV);
    write_metrics_csv(&metrics_path, &table)?;

    if let (Some(dps), Some(phi)) = (&dps_scores, &fcs_scores) {
        let rows: Vec<usability::UsabilityScore> = dps
            .iter()
            .zip(phi)
            .map(|((id, d), &phi)| usability::UsabilityScore {
                image_id: id.clone(),
                psi: d.psi,
                phi,
                photorealism: d.photorealism,
                diversity: d.diversity,
            })
            .collect();
        let mut w = csv::Writer::from_path(config.out_dir.join(SCORES_CSV))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        write_json(&config.out_dir.join(SCORES_JSON), &rows)?;
    }

    if let Some((real, syn)) = &mid {
        let k = sc.entropy_k.unwrap_or(syn.num_classes as usize).min(syn.len());
        let entropy = usability::dataset_entropy(syn, k, config.seed)?;
        let mut similarity = 0.0;
        for r in &syn.records {
            let d = usability::photorealism_distance(&r.vector_f64(), real, sc.distance)?;
            similarity += usability::distance_to_similarity(d);
        }
        similarity /= syn.len() as f64;
        let max_entropy = (k as f64).ln();
        let normalized_entropy = if max_entropy > 0.0 { entropy / max_entropy } else { 0.0 };
        write_json(
            &config.out_dir.join(SET_SUMMARY_JSON),
            &json!({
                "images": syn.len(),
                "entropy_k": k,
                "entropy": entropy,
                "normalized_entropy": normalized_entropy,
                "distance": sc.distance,
                "mean_photorealism_similarity": similarity,
                "alpha": sc.alpha,
                "joint_objective": usability::joint_objective(similarity, normalized_entropy, sc.alpha)?,
            }),
        )?;
    }
    println!("scored {} images on {} metrics into {}", ids.len(), table.metrics().count(), config.out_dir.display());
    Ok(())
}

fn write_metrics_csv(path: &Path, table: &ScoreTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["image_id", "metric", "score"])?;
    for (id, metric, score) in table.rows() {
        w.write_record([id, metric.to_string(), score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<ScoreTable> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = vec![];
    for (line, row) in reader.deserialize::<(String, String, f64)>().enumerate() {
        let (id, metric, score) = row.with_context(|| format!("{} row {}", path.display(), line + 1))?;
        rows.push((id, metric.parse::<Metric>()?, score));
    }
    Ok(ScoreTable::from_rows(rows)?)
}

fn apply_rank_flags(config: &mut RunConfig, args: &RankArgs) -> Result<()> {
    if args.metrics_file.is_some() {
        config.rank.metrics_file.clone_from(&args.metrics_file);
    }
    if let Some(names) = &args.arms {
        config.rank.arms = names.iter().map(|n| n.parse()).collect::<synuse::Result<_>>()?;
    }
    if args.m.is_some() {
        config.rank.m = args.m;
    }
    Ok(())
}

fn ranked_arms(config: &RunConfig) -> Result<Vec<ArmSpec>> {
    let path = config
        .rank
        .metrics_file
        .clone()
        .unwrap_or_else(|| config.out_dir.join(METRICS_CSV));
    let table = read_metrics_csv(&path)?;
    let m = config.rank.m.unwrap_or(table.image_ids().len());
    Ok(build_arms(&table, &config.rank.arms, m)?)
}

pub fn rank(config: &mut RunConfig, args: &RankArgs) -> Result<()> {
    apply_rank_flags(config, args)?;
    let arms = ranked_arms(config)?;
    ensure_dir(&config.out_dir)?;
    let path = config.out_dir.join(ARMS_JSON);
    write_json(&path, &arms)?;
    for a in &arms {
        println!("{}: {} images", a.name, a.image_ids.len());
    }
    Ok(())
}

fn read_arms(path: &Path) -> Result<Vec<ArmSpec>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let arms: Vec<ArmSpec> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if arms.is_empty() {
        bail!("{} lists no arms", path.display());
    }
    for a in &arms {
        a.name.parse::<Metric>()?;
        ArmSpec::new(a.name.clone(), a.image_ids.clone())?;
    }
    Ok(arms)
}

pub fn bandit_run(config: &mut RunConfig, args: &BanditArgs) -> Result<()> {
    apply_rank_flags(config, &args.rank)?;
    let b = &mut config.bandit;
    if args.arms_file.is_some() {
        b.arms_file.clone_from(&args.arms_file);
    }
    if let Some(e) = args.epochs {
        b.total_epochs = e;
    }
    if let Some(p) = args.patience {
        b.patience = p;
    }
    if args.no_reset_on_switch {
        b.reset_on_switch = false;
    }
    if args.round_robin_warmup {
        b.round_robin_warmup = true;
    }
    let l = &mut config.learner;
    if let Some(kind) = args.learner {
        l.kind = kind;
    }
    if let Some(cmd) = &args.learner_cmd {
        l.command = cmd.split_whitespace().map(String::from).collect();
        if args.learner.is_none() {
            l.kind = LearnerKind::External;
        }
    }
    if args.qualities.is_some() {
        l.qualities.clone_from(&args.qualities);
    }

    let arms = match &config.bandit.arms_file {
        Some(path) => read_arms(path)?,
        None => ranked_arms(config)?,
    };
    let training = TrainingConfig {
        total_epochs: config.bandit.total_epochs,
        patience: config.bandit.patience,
        seed: config.seed,
        reset_on_switch: config.bandit.reset_on_switch,
        round_robin_warmup: config.bandit.round_robin_warmup,
    };
    ensure_dir(&config.out_dir)?;
    let log_path = config.out_dir.join(RUN_LOG);
    if log_path.exists() {
        fs::remove_file(&log_path).with_context(|| format!("removing old {}", log_path.display()))?;
    }
    let sink = |r: &store::EpochRecord| store::append_run_log(&log_path, r);

    let run = match config.learner.kind {
        LearnerKind::Surrogate => {
            let qualities = config
                .learner
                .qualities
                .clone()
                .unwrap_or_else(|| vec![0.5; arms.len()]);
            if qualities.len() != arms.len() {
                bail!("{} surrogate qualities for {} arms", qualities.len(), arms.len());
            }
            let learner = SurrogateLearner::new(SurrogateParams {
                qualities,
                base: config.learner.base,
                cap: config.learner.cap,
                rate: config.learner.rate,
                noise: config.learner.noise,
                seed: config.seed,
            })?;
            trainer::run_training(&arms, learner, &training, sink)
        }
        LearnerKind::External => {
            let (program, rest) = config
                .learner
                .command
                .split_first()
                .ok_or_else(|| anyhow!("external learner needs a command"))?;
            let learner = ChildProcessLearner::spawn(program, rest)?;
            trainer::run_training(&arms, learner, &training, sink)
        }
    }
    .with_context(|| format!("training aborted; partial log kept in {}", log_path.display()))?;

    let summary = run.summary(&arms);
    write_json(
        &config.out_dir.join(SUMMARY_JSON),
        &json!({
            "seed": config.seed,
            "reset_on_switch": training.reset_on_switch,
            "round_robin_warmup": training.round_robin_warmup,
            "summary": summary,
            "state": run.state,
        }),
    )?;
    println!(
        "{} epochs, final accuracy {:.4}, best {:.4}, {} switches",
        summary.epochs, summary.final_accuracy, summary.best_accuracy, summary.switches
    );
    for a in &summary.arms {
        println!("  {:<14} {:>6} pulls  {:.3}", a.name, a.pulls, a.share);
    }
    Ok(())
}

pub fn prompts(config: &mut RunConfig, args: &PromptArgs) -> Result<()> {
    let p = &mut config.prompts;
    if args.pool.is_some() {
        p.pool.clone_from(&args.pool);
    }
    if let Some(ctx) = &args.domain_context {
        p.domain_context.clone_from(ctx);
    }
    if let Some(n) = args.n {
        p.n = n;
    }
    if let Some(style) = &args.style {
        p.style = style.parse()?;
    }
    if args.templates.is_some() {
        p.templates.clone_from(&args.templates);
    }
    if let Some(dir) = &args.fixtures {
        p.provider.mode = ProviderMode::Fixture;
        p.provider.fixture_dir = Some(dir.clone());
    }
    if let Some(url) = &args.endpoint {
        p.provider.mode = ProviderMode::Live;
        p.provider.endpoint.clone_from(url);
    }
    if args.no_images {
        p.generate_images = false;
    }
    let p = config.prompts.clone();
    let templates = match &p.templates {
        Some(path) => TemplateSet::load(path)?,
        None => TemplateSet::car_accident(),
    };
    let client = || ProviderClient::new(ProviderConfig::from(&p.provider));

    ensure_dir(&config.out_dir)?;
    let pool = match &p.pool {
        Some(path) => AttributePool::load(path)?,
        None => promptgen::extract_attributes(&p.domain_context, &p.kinds, &client()?)?,
    };
    pool.save(&config.out_dir.join("pool.json"))?;
    let specs = promptgen::create_prompts(&pool, p.n, p.style, config.seed, &templates)?;
    write_json(&config.out_dir.join("prompts.json"), &specs)?;
    if !p.generate_images {
        println!("wrote {} prompts", specs.len());
        return Ok(());
    }
    let manifest = promptgen::generate_images(
        &specs,
        &client()?,
        &config.out_dir.join("images"),
        config.seed,
        p.parallelism,
    )?;
    println!(
        "wrote {} prompts, {} images ({} failed)",
        specs.len(),
        manifest.succeeded(),
        manifest.failed()
    );
    Ok(())
}

pub fn report_auc(args: &AucArgs) -> Result<()> {
    let text = fs::read_to_string(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let raw: BTreeMap<String, f64> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.file.display()))?;
    let mut accuracies = BTreeMap::new();
    for (k, v) in raw {
        let pct: u32 = k
            .trim()
            .trim_end_matches('%')
            .parse()
            .with_context(|| format!("proportion key {k:?} is not an integer percent"))?;
        accuracies.insert(pct, v);
    }
    let report = trainer::auc_report(&accuracies)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
