use clap::{Args, Parser, Subcommand};
use ctxprobe::corpus::{self, NerRule, PhrasePair, ScanOptions};
use ctxprobe::dataset::{load_entities, EntityRecord};
use ctxprobe::info_metrics::PriorMode;
use ctxprobe::kg::{self, KnowledgeGraph};
use ctxprobe::pipeline::application::{run_application_to_dir, ApplicationConfig};
use ctxprobe::pipeline::experiment::{write_dataset, RunMeta};
use ctxprobe::pipeline::{
    analysis_join, build_dataset, hypothesis_suite, load_relations, read_csv, reliability_report, score_to_dir,
    write_csv, write_json, ConfigOverrides, ExperimentConfig, JoinInputs, MrRow, PipelineError, ProviderKind,
    ScoreKind, ScoreRecord, SuiteOptions, TestRow, VarianceRow, VarianceScope,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ctxprobe", version, about = "Measure how strongly contexts sway a language model's answers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run with this single sampling seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["synthetic", "remote", "replay"])]
    provider: Option<String>,
    /// Sidecar base URL; implies the remote provider unless --provider says otherwise.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true, value_parser = ["marginal", "no-context"])]
    prior: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample contexts and render every prompt of the configured grids.
    BuildDataset,
    /// Query the provider and write scores.csv.
    Score,
    /// Run the hypothesis suite over scores.csv.
    Test {
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Score variance across seeds and query forms.
    Reliability {
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// score, test and reliability in one go.
    Run,
    /// Count entity-answer co-occurrences in a corpus.
    ScanCorpus {
        /// CSV with `entity,answer` columns.
        #[arg(long)]
        pairs: PathBuf,
        /// Corpus files: plain text (one document per line) or JSONL with a `text` field.
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value_t = corpus::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        case_insensitive: bool,
        /// NER statistics CSV (`term,total_count,entity_labeled_count`); writes
        /// the excluded terms next to the counts.
        #[arg(long)]
        ner: Option<PathBuf>,
    },
    /// Relation-dependent entity degrees from a TSV triple file.
    KgDegree {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        relation: String,
        /// Entity ids: JSON list of strings or entity records, or one id per line.
        #[arg(long)]
        entities: PathBuf,
    },
    /// Join susceptibility with co-occurrence counts, degrees and MR.
    Join {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        cooc: Option<PathBuf>,
        #[arg(long)]
        degrees: Option<PathBuf>,
        #[arg(long)]
        mr: Option<PathBuf>,
    },
    /// Summarize the tables in an output directory.
    Report,
    /// Run a fixed-context application experiment.
    Apply,
}

fn cfg_err(m: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(m.to_string())
}

fn overrides(g: &Global) -> Result<ConfigOverrides, PipelineError> {
    Ok(ConfigOverrides {
        seed: g.seed,
        provider: g.provider.as_deref().map(|p| p.parse::<ProviderKind>().map_err(cfg_err)).transpose()?,
        endpoint: g.endpoint.clone(),
        prior: g.prior.as_deref().map(|p| p.parse::<PriorMode>().map_err(cfg_err)).transpose()?,
        out: g.out.clone(),
    })
}

fn load_config(g: &Global) -> Result<ExperimentConfig, PipelineError> {
    let path = g.config.as_ref().ok_or_else(|| cfg_err("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&overrides(g)?)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory from --out, else from the config, else `out`.
fn out_dir(g: &Global) -> Result<PathBuf, PipelineError> {
    if let Some(o) = &g.out {
        return Ok(o.clone());
    }
    match &g.config {
        Some(_) => Ok(load_config(g)?.out_dir),
        None => Ok(PathBuf::from("out")),
    }
}

fn suite_options(g: &Global) -> Result<SuiteOptions, PipelineError> {
    Ok(match &g.config {
        Some(_) => {
            let cfg = load_config(g)?;
            SuiteOptions { permutations: cfg.permutations, alpha: cfg.alpha, master_seed: cfg.test_seed }
        }
        None => SuiteOptions::default(),
    })
}

fn run_tests(scores: &[ScoreRecord], opts: SuiteOptions, dir: &Path) -> Result<Vec<TestRow>, PipelineError> {
    let rows = hypothesis_suite(scores, opts)?;
    write_csv(&dir.join("tests.csv"), &rows)?;
    let tested = rows.iter().filter(|r| r.p_raw.is_some()).count();
    let rejected = rows.iter().filter(|r| r.reject == Some(true)).count();
    println!("tests: {} groups, {tested} tested, {rejected} rejected at the configured alpha -> {}", rows.len(), dir.join("tests.csv").display());
    Ok(rows)
}

fn run_reliability(scores: &[ScoreRecord], dir: &Path) -> Result<(), PipelineError> {
    let rep = reliability_report(scores);
    write_csv(&dir.join("variance.csv"), &rep.rows)?;
    write_csv(&dir.join("variance_skipped.csv"), &rep.skipped)?;
    for scope in [VarianceScope::Seeds, VarianceScope::Forms] {
        if let Some(v) = rep.max_variance(scope, ScoreKind::Susceptibility) {
            println!("max susceptibility variance across {scope:?}: {v:.3e}");
        }
    }
    println!("variance: {} keys, {} singletons skipped", rep.rows.len(), rep.skipped.len());
    Ok(())
}

fn read_id_list(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    if let Ok(ids) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(ids);
    }
    if let Ok(records) = serde_json::from_str::<Vec<EntityRecord>>(&text) {
        return Ok(records.into_iter().map(|e| e.id).collect());
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn report(dir: &Path) -> Result<(), PipelineError> {
    let meta_path = dir.join("run_meta.json");
    if let Ok(text) = std::fs::read_to_string(&meta_path) {
        let meta: RunMeta = serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", meta_path.display())))?;
        println!(
            "run {} ({}): provider {} / model {}, prior {}, seeds {:?}, complete: {}",
            meta.config_hash.get(..12).unwrap_or(&meta.config_hash),
            meta.version,
            meta.provider_id,
            meta.model_id,
            meta.prior_mode.as_str(),
            meta.seeds,
            meta.complete
        );
    }
    let scores_path = dir.join("scores.csv");
    if scores_path.exists() {
        let scores: Vec<ScoreRecord> = read_csv(&scores_path)?;
        let mut by_kind: BTreeMap<ScoreKind, (usize, f64)> = BTreeMap::new();
        for s in &scores {
            let e = by_kind.entry(s.kind).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += s.value;
        }
        for (k, (n, sum)) in by_kind {
            println!("{:<36} {n:>8} records, mean {:.4} nats", k.as_str(), sum / n as f64);
        }
    }
    let tests_path = dir.join("tests.csv");
    if tests_path.exists() {
        let tests: Vec<TestRow> = read_csv(&tests_path)?;
        let mut fam: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        for t in &tests {
            let e = fam.entry((t.hypothesis.as_str().to_string(), t.form_class.clone())).or_default();
            if t.p_raw.is_some() {
                e.0 += 1;
            }
            if t.reject == Some(true) {
                e.1 += 1;
            }
        }
        for ((h, class), (n, r)) in fam {
            println!("{h:<12} {class:<7} {r}/{n} significant");
        }
    }
    let var_path = dir.join("variance.csv");
    if var_path.exists() {
        let rows: Vec<VarianceRow> = read_csv(&var_path)?;
        let max = rows
            .iter()
            .filter(|r| r.scope == VarianceScope::Seeds && r.kind == ScoreKind::Susceptibility)
            .map(|r| r.variance)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if let Some(m) = max {
            println!("max per-entity susceptibility variance across seeds: {m:.3e} nats^2");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    match cli.command {
        Command::BuildDataset => {
            let cfg = load_config(g)?;
            let relations = load_relations(&cfg)?;
            let grids = build_dataset(&cfg, &relations)?;
            let written = write_dataset(&cfg, &grids)?;
            for (grid, path) in grids.iter().zip(written) {
                println!(
                    "{} seed {}: {} contexts, {} prompts -> {}",
                    grid.relation_id,
                    grid.seed,
                    grid.contexts.len(),
                    grid.prompt_count(),
                    path.display()
                );
            }
        }
        Command::Score => {
            let cfg = load_config(g)?;
            let out = score_to_dir(&cfg)?;
            println!("{} score records -> {}", out.records.len(), cfg.out_dir.join("scores.csv").display());
        }
        Command::Test { scores } => {
            let dir = out_dir(g)?;
            let scores: Vec<ScoreRecord> = read_csv(&scores.unwrap_or_else(|| dir.join("scores.csv")))?;
            run_tests(&scores, suite_options(g)?, &dir)?;
        }
        Command::Reliability { scores } => {
            let dir = out_dir(g)?;
            let scores: Vec<ScoreRecord> = read_csv(&scores.unwrap_or_else(|| dir.join("scores.csv")))?;
            run_reliability(&scores, &dir)?;
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let out = score_to_dir(&cfg)?;
            println!("{} score records -> {}", out.records.len(), cfg.out_dir.join("scores.csv").display());
            let opts = SuiteOptions { permutations: cfg.permutations, alpha: cfg.alpha, master_seed: cfg.test_seed };
            run_tests(&out.records, opts, &cfg.out_dir)?;
            run_reliability(&out.records, &cfg.out_dir)?;
        }
        Command::ScanCorpus { pairs, corpus: files, window, shards, case_insensitive, ner } => {
            let pairs: Vec<PhrasePair> = corpus::read_pairs_csv(&pairs)?;
            let opts = ScanOptions { window, case_insensitive };
            let counts = corpus::scan(&files, &pairs, opts, shards)?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|e| cfg_err(format!("{}: {e}", dir.display())))?;
            let path = dir.join("cooc_counts.csv");
            write_csv(&path, &counts)?;
            write_json(
                &dir.join("cooc_meta.json"),
                &serde_json::json!({ "window": window, "case_insensitive": case_insensitive, "files": files, "shards": shards }),
            )?;
            println!("{} pairs counted -> {}", counts.len(), path.display());
            if let Some(ner) = ner {
                let stats = corpus::read_ner_csv(&ner)?;
                let excluded = corpus::apply_ner_exclusion(None, &stats, NerRule::default());
                let path = dir.join("excluded_terms.json");
                write_json(&path, &excluded)?;
                println!("{} terms excluded -> {}", excluded.len(), path.display());
            }
        }
        Command::KgDegree { triples, relation, entities } => {
            let graph = KnowledgeGraph::load_tsv(&triples)?;
            let ids = read_id_list(&entities)?;
            let rows = graph.degrees(&ids, &relation);
            match &g.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| cfg_err(format!("{}: {e}", dir.display())))?;
                    let path = dir.join("degrees.csv");
                    write_csv(&path, &rows)?;
                    println!("{} degrees -> {}", rows.len(), path.display());
                }
                None => kg::write_degrees_csv(std::io::stdout().lock(), &rows)
                    .map_err(|e| PipelineError::Io { path: "<stdout>".into(), message: e.to_string() })?,
            }
        }
        Command::Join { scores, cooc, degrees, mr } => {
            let dir = out_dir(g)?;
            let scores: Vec<ScoreRecord> = read_csv(&scores.unwrap_or_else(|| dir.join("scores.csv")))?;
            let cooc = cooc.map(|p| read_csv(&p)).transpose()?.unwrap_or_default();
            let degrees = degrees.map(|p| read_csv(&p)).transpose()?.unwrap_or_default();
            let mr_default = dir.join("mr.csv");
            let mr: Vec<MrRow> = match mr {
                Some(p) => read_csv(&p)?,
                None if mr_default.exists() => read_csv(&mr_default)?,
                None => Vec::new(),
            };
            let mut entities = Vec::new();
            if g.config.is_some() {
                for r in &load_config(g)?.relations {
                    entities.extend(load_entities(&r.entities)?);
                }
            }
            let out = analysis_join(&JoinInputs { scores: &scores, cooc: &cooc, degrees: &degrees, mr: &mr, entities: &entities })?;
            std::fs::create_dir_all(&dir).map_err(|e| cfg_err(format!("{}: {e}", dir.display())))?;
            write_csv(&dir.join("joined.csv"), &out.rows)?;
            write_json(
                &dir.join("join_summary.json"),
                &serde_json::json!({ "rho_count": out.rho_count, "rho_degree": out.rho_degree, "mr_bins": out.mr_bins }),
            )?;
            println!("{} joined rows -> {}", out.rows.len(), dir.join("joined.csv").display());
            println!("spearman rho vs ln(1+count): {:?} (n={})", out.rho_count.rho, out.rho_count.n);
            println!("spearman rho vs ln(1+degree): {:?} (n={})", out.rho_degree.rho, out.rho_degree.n);
        }
        Command::Report => report(&out_dir(g)?)?,
        Command::Apply => {
            let path = g.config.as_ref().ok_or_else(|| cfg_err("--config is required"))?;
            let mut cfg = ApplicationConfig::load(path)?;
            let o = overrides(g)?;
            let mut as_exp = ExperimentConfig { provider: cfg.provider.clone(), ..Default::default() };
            as_exp.apply(&ConfigOverrides { seed: None, prior: None, out: None, ..o.clone() })?;
            cfg.provider = as_exp.provider;
            if let Some(out) = o.out {
                cfg.out_dir = out;
            }
            if let Some(seed) = o.seed {
                cfg.test_seed = seed;
            }
            let out = run_application_to_dir(&cfg)?;
            println!("{} scores -> {}", out.scores.len(), cfg.out_dir.join("app_scores.csv").display());
            for t in &out.tests {
                println!(
                    "{:<6} {} {:.4} vs {} {:.4}  p_adj={}",
                    t.context_set,
                    t.group_a,
                    t.mean_a,
                    t.group_b,
                    t.mean_b,
                    t.p_adjusted.map_or("-".to_string(), |p| format!("{p:.4}"))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
