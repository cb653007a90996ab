use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use phytoset::catalog::{CatalogFormat, SpeciesCatalog, TaxonId};
use phytoset::evaluator::{
    compare_reports, evaluate, genus_aggregate, genus_truth, load_predictions, load_truth, pr_points_csv, write_truth,
    EvalConfig, GroundTruth,
};
use phytoset::ingest::{
    build_image_entries, filter_region, parse_dwca_bytes, parse_occurrence_table, read_entries, write_entries, Source,
};
use phytoset::sampler::{dedup_entries, manifest_stats, raw_stats, read_manifest, sample_dataset, write_manifest, SamplingPolicy};
use phytoset::splitter::{
    assign_splits, entries_in, export_training_csv, read_splits, split_report, write_splits, PrefixRewrite, Split,
};
use phytoset::{Exact, ExactPrediction, Report, Scalar};
use serde_json::json;

use crate::args::*;
use crate::config::PipelineConfig;
use crate::output::{emit, json_bytes, read_input, write_output, Provenance};

/// Invocation problem that is not caught by argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| usage(format!("missing --{name} (or the matching [paths] entry in the config)")))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(&config, a),
        Command::Sample(a) => sample(&config, a),
        Command::Split(a) => split(&config, a),
        Command::Export(a) => export(&config, a),
        Command::Eval(a) => eval(&config, a),
        Command::GenusEval(a) => genus_eval(&config, a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(&config, a),
        Command::Stats(a) => stats(&config, a),
    }
}

fn load_catalog(path: &Path, provenance: &mut Provenance) -> anyhow::Result<SpeciesCatalog> {
    let bytes = read_input(path, provenance)?;
    SpeciesCatalog::load(bytes.as_slice(), &CatalogFormat::default()).with_context(|| format!("catalog {}", path.display()))
}

fn load_manifest(
    path: &Path,
    provenance: &mut Provenance,
) -> anyhow::Result<(phytoset::sampler::DatasetManifest, BTreeMap<TaxonId, String>)> {
    let bytes = read_input(path, provenance)?;
    read_manifest(bytes.as_slice(), SamplingPolicy::default()).with_context(|| format!("manifest {}", path.display()))
}

fn ingest(config: &PipelineConfig, args: IngestArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("ingest");
    let catalog = load_catalog(&require(args.catalog, &config.paths.catalog, "catalog")?, &mut prov)?;
    let out = require(args.out, &config.paths.entries, "out")?;
    let mut records = Vec::new();
    for spec in &args.inputs {
        let (source, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--input `{spec}` is not SOURCE=PATH")))?;
        let source: Source = source.parse().map_err(|e| usage(format!("{e}")))?;
        let path = Path::new(path);
        let bytes = read_input(path, &mut prov)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let mut parsed = if ext == "zip" {
            parse_dwca_bytes(&bytes, source).with_context(|| format!("archive {}", path.display()))?
        } else {
            let mut map = config.ingest.columns.clone();
            map.default_source = source;
            if matches!(ext.as_str(), "tsv" | "txt") {
                map.delimiter = b'\t';
            }
            parse_occurrence_table(bytes.as_slice(), &map).with_context(|| format!("table {}", path.display()))?
        };
        records.append(&mut parsed);
    }
    let before = records.len();
    if config.ingest.region_filter && !args.no_region {
        records = filter_region(records, &config.region);
    }
    let (entries, stats) = build_image_entries(&records, &catalog);
    let mut buf = Vec::new();
    write_entries(&mut buf, &entries)?;
    write_output(&out, &buf, &prov)?;
    println!(
        "records: {before} ({} after region filter), resolved: {}, image entries: {}, unresolved names: {}",
        stats.records,
        stats.resolved_records,
        stats.entries,
        stats.unresolved.len()
    );
    if let Some(p) = args.stats_out {
        write_output(&p, &json_bytes(&stats)?, &prov)?;
    }
    Ok(())
}

fn sample(config: &PipelineConfig, args: SampleArgs) -> anyhow::Result<()> {
    let mut policy = config.sampling.clone();
    if let Some(v) = args.min {
        policy.min_images = v;
    }
    if let Some(v) = args.max {
        policy.max_images = v;
    }
    if let Some(v) = args.seed {
        policy.seed = v;
    }
    if let Some(list) = &args.priority {
        policy.priority = list
            .iter()
            .map(|s| s.parse::<Source>().map_err(|e| usage(format!("{e}"))))
            .collect::<Result<_, _>>()?;
    }
    policy.validate().map_err(|e| usage(format!("{e}")))?;

    let mut prov = Provenance::new("sample").seed(policy.seed);
    let input = require(args.input, &config.paths.entries, "in")?;
    let out = require(args.out, &config.paths.manifest, "out")?;
    let bytes = read_input(&input, &mut prov)?;
    let entries = read_entries(bytes.as_slice()).with_context(|| format!("entries {}", input.display()))?;
    let names = match args.catalog.or_else(|| config.paths.catalog.clone()) {
        Some(p) => load_catalog(&p, &mut prov)?.names(),
        None => entries.iter().map(|e| (e.taxon_id.clone(), e.taxon_id.0.clone())).collect(),
    };

    let (deduped, dedup) = dedup_entries(entries, &policy.priority);
    let raw = raw_stats(&deduped, policy.min_images);
    let manifest = sample_dataset(&deduped, &policy)?;
    let stats = manifest_stats(&manifest);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &manifest, &names)?;
    write_output(&out, &buf, &prov)?;
    println!("seed: {}", policy.seed);
    println!("species: {}, images: {}, species at max: {}", stats.total_species, stats.total_images, stats.species_at_max);
    for (source, share) in &stats.per_source {
        println!("  {source}: {} images ({}%), {} species", share.images, share.percent_display, share.species);
    }
    if let Some(p) = args.stats_out {
        let report = json!({ "seed": policy.seed, "dedup": dedup, "raw": raw, "dataset": stats });
        write_output(&p, &json_bytes(&report)?, &prov)?;
    }
    Ok(())
}

fn split(config: &PipelineConfig, args: SplitArgs) -> anyhow::Result<()> {
    let mut policy = config.split.clone();
    if let Some(v) = args.train {
        policy.train = v;
    }
    if let Some(v) = args.validation {
        policy.validation = v;
    }
    if let Some(v) = args.test {
        policy.test = v;
    }
    if let Some(v) = args.seed {
        policy.seed = v;
    }
    policy.validate().map_err(|e| usage(format!("{e}")))?;

    let mut prov = Provenance::new("split").seed(policy.seed);
    let path = require(args.manifest, &config.paths.manifest, "manifest")?;
    let out = require(args.out, &config.paths.splits, "out")?;
    let (manifest, names) = load_manifest(&path, &mut prov)?;
    let splits = assign_splits(&manifest, &policy)?;
    let mut buf = Vec::new();
    write_splits(&mut buf, &splits)?;
    write_output(&out, &buf, &prov)?;
    println!("seed: {}", policy.seed);
    for s in Split::ALL {
        println!("  {s}: {}", splits.count(s));
    }
    if let Some(p) = args.truth_out {
        let mut truth = GroundTruth::default();
        for e in entries_in(&manifest, &splits, Split::Test) {
            let label = names.get(&e.taxon_id).cloned().unwrap_or_else(|| e.taxon_id.0.clone());
            truth.insert(e.image_id.clone(), label, e.source);
        }
        let mut buf = Vec::new();
        write_truth(&mut buf, &truth)?;
        write_output(&p, &buf, &prov)?;
    }
    if let Some(p) = args.report_out {
        write_output(&p, &json_bytes(&split_report(&manifest, &splits)?)?, &prov)?;
    }
    Ok(())
}

fn export(config: &PipelineConfig, args: ExportArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("export");
    let (manifest, names) = load_manifest(&require(args.manifest, &config.paths.manifest, "manifest")?, &mut prov)?;
    let splits_path = require(args.splits, &config.paths.splits, "splits")?;
    let bytes = read_input(&splits_path, &mut prov)?;
    let splits = read_splits(bytes.as_slice()).with_context(|| format!("splits {}", splits_path.display()))?;
    let rewrite = match (args.rewrite_from, args.rewrite_to) {
        (Some(from), Some(to)) => Some(PrefixRewrite { from, to }),
        _ => None,
    };
    let csv = export_training_csv(&manifest, &splits, &names, rewrite.as_ref())?;
    emit(args.out.as_deref(), csv.as_bytes(), &prov)
}

fn load_eval_inputs(
    config: &PipelineConfig,
    predictions: Option<PathBuf>,
    truth: Option<PathBuf>,
    prov: &mut Provenance,
) -> anyhow::Result<(Vec<phytoset::Prediction>, GroundTruth)> {
    let pred_path = require(predictions, &config.paths.predictions, "pred")?;
    let truth_path = require(truth, &config.paths.truth, "truth")?;
    let bytes = read_input(&pred_path, prov)?;
    let preds = load_predictions(bytes.as_slice()).with_context(|| format!("predictions {}", pred_path.display()))?;
    let bytes = read_input(&truth_path, prov)?;
    let truth = load_truth(bytes.as_slice()).with_context(|| format!("truth {}", truth_path.display()))?;
    Ok((preds, truth))
}

fn exact_config(config: &phytoset::Config) -> anyhow::Result<EvalConfig<Exact>> {
    let conv = |v: f64| Exact::from_f64(v).ok_or_else(|| usage("non-finite threshold"));
    Ok(EvalConfig {
        k_limit: config.k_limit,
        threshold_grid: config.threshold_grid.iter().map(|&t| conv(t)).collect::<Result<_, _>>()?,
        reference_threshold: conv(config.reference_threshold)?,
    })
}

fn report_csv(report: &Report) -> String {
    let mut out = String::from("scope,metric,value\n");
    let mut row = |scope: &str, metric: &str, value: String| out.push_str(&format!("{scope},{metric},{value}\n"));
    row("overall", "n_images", report.n_images.to_string());
    row("overall", "n_species", report.n_species.to_string());
    row("overall", "top1", report.top1.to_string());
    row("overall", "top5", report.top5.to_string());
    row("overall", "mrr", report.mrr.to_string());
    row("overall", "precision", report.reference.precision.map(|p| p.to_string()).unwrap_or_default());
    row("overall", "recall", report.reference.recall.to_string());
    row("overall", "auc", report.auc.to_string());
    for (source, m) in &report.per_source {
        row(source.as_str(), "n_images", m.n_images.to_string());
        row(source.as_str(), "top1", m.top1.to_string());
        row(source.as_str(), "top5", m.top5.to_string());
        row(source.as_str(), "mrr", m.mrr.to_string());
    }
    out
}

fn eval(config: &PipelineConfig, args: EvalArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("eval");
    let (preds, truth) = load_eval_inputs(config, args.predictions, args.truth, &mut prov)?;
    let mut eval_config = config.eval.clone();
    if let Some(k) = args.k_limit {
        eval_config.k_limit = k;
    }
    eval_config.validate().map_err(|e| usage(format!("{e}")))?;
    let report = if args.exact {
        let exact: Vec<ExactPrediction> = preds
            .iter()
            .map(|p| p.convert().expect("loaded scores are finite"))
            .collect();
        evaluate(&exact, &truth, &exact_config(&eval_config)?)?.to_f64()
    } else {
        evaluate(&preds, &truth, &eval_config)?
    };
    let body = match args.format {
        Format::Json => json_bytes(&report)?,
        Format::Csv => report_csv(&report).into_bytes(),
    };
    emit(args.out.as_deref(), &body, &prov)?;
    if let Some(p) = args.plot_out {
        write_output(&p, pr_points_csv(&report.pr_points).as_bytes(), &prov)?;
    }
    Ok(())
}

fn genus_eval(config: &PipelineConfig, args: GenusEvalArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("genus-eval");
    let catalog = load_catalog(&require(args.catalog, &config.paths.catalog, "catalog")?, &mut prov)?;
    let (preds, truth) = load_eval_inputs(config, args.predictions, args.truth, &mut prov)?;
    let species = evaluate(&preds, &truth, &config.eval)?;
    let genus_preds = preds
        .iter()
        .map(|p| genus_aggregate(p, &catalog))
        .collect::<Result<Vec<_>, _>>()?;
    let genus = evaluate(&genus_preds, &genus_truth(&truth, &catalog)?, &config.eval)?;
    let delta = compare_reports(&species, &genus)?;
    let body = match args.format {
        Format::Json => json_bytes(&json!({ "species": species, "genus": genus, "delta": delta }))?,
        Format::Csv => delta.to_csv().into_bytes(),
    };
    emit(args.out.as_deref(), &body, &prov)
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("compare");
    let mut load = |p: &Path| -> anyhow::Result<Report> {
        let bytes = read_input(p, &mut prov)?;
        serde_json::from_slice(&bytes).with_context(|| format!("report {}", p.display()))
    };
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let delta = compare_reports(&a, &b)?;
    let body = match args.format {
        Format::Json => json_bytes(&delta)?,
        Format::Csv => delta.to_csv().into_bytes(),
    };
    emit(args.out.as_deref(), &body, &prov)
}

fn serve(config: &PipelineConfig, args: ServeArgs) -> anyhow::Result<()> {
    let mut service = config.serve.clone();
    service.policy = config.confidence.clone();
    service.apply_env(|k| std::env::var(k).ok())?;
    if let Some(v) = args.listen {
        service.listen_addr = v;
    }
    if let Some(v) = args.scorer_url {
        service.scorer.base_url = v;
        service.provider = "external".into();
    }
    if let Some(v) = args.max_body_bytes {
        service.max_body_bytes = v;
    }
    let mut prov = Provenance::new("serve");
    let catalog = load_catalog(&require(args.catalog, &config.paths.catalog, "catalog")?, &mut prov)?;
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(phytoset_service::serve(&service, catalog))?;
    Ok(())
}

fn stats(config: &PipelineConfig, args: StatsArgs) -> anyhow::Result<()> {
    let mut prov = Provenance::new("stats");
    let body = if let Some(path) = args.input.entries {
        let bytes = read_input(&path, &mut prov)?;
        let entries = read_entries(bytes.as_slice()).with_context(|| format!("entries {}", path.display()))?;
        json_bytes(&raw_stats(&entries, args.min.unwrap_or(config.sampling.min_images)))?
    } else {
        let path = args.input.manifest.expect("clap requires one input");
        let (manifest, _) = load_manifest(&path, &mut prov)?;
        json_bytes(&manifest_stats(&manifest))?
    };
    emit(args.out.as_deref(), &body, &prov)
}
