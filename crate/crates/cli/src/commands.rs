use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use emgal::conditioning::{conditioned_query, fit_condition_model_with, saliency, KMeansParams};
use emgal::losses::Margin;
use emgal::projection::{export_projection, fit_pca, save_projection_csv, ColorBy};
use emgal::simbench::{evaluate, generate, Baseline, EvalConfig, STATE_VARIABLE};
use emgal::trainer::{train, LossKind, Miner};
use emgal::{
    write_atomic, ClusterModel, ConditionMode, Error, Gallery, GalleryConfig, InverseCovariance, Metric, NewRecord,
    QueryResult, SyntheticSpec, TrainConfig, TrainSample,
};
use serde::{Deserialize, Serialize};

use crate::input::{parse_aux, read_json, read_lines, sibling, CliError, RecordLine};
use crate::lock::StoreLock;
use crate::{
    BenchArgs, ClusterArgs, Command, GenerateArgs, IngestArgs, InitArgs, LossName, MetricName, MinerName, ModeName,
    ProjectArgs, PruneArgs, QueryArgs, SaliencyArgs, StoreArg, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Init(a) => init(a),
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Prune(a) => prune(a),
        Command::Compact(a) => compact(a),
        Command::Cluster(a) => cluster(a),
        Command::Saliency(a) => saliency_cmd(a),
        Command::Project(a) => project(a),
        Command::Train(a) => train_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate_cmd(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn load_store(path: &Path) -> Result<Gallery> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no store at {}; create one with `emgal init`", path.display())));
    }
    Ok(Gallery::load(path)?)
}

fn build_metric(name: MetricName, p: Option<f64>, inv_cov: Option<&Path>) -> Result<Metric> {
    if p.is_some() && !matches!(name, MetricName::Minkowski) {
        return Err(CliError::Usage("--p only applies to the minkowski metric".into()));
    }
    if inv_cov.is_some() && !matches!(name, MetricName::Mahalanobis) {
        return Err(CliError::Usage("--inv-cov only applies to the mahalanobis metric".into()));
    }
    Ok(match name {
        MetricName::Euclidean => Metric::Euclidean,
        MetricName::SquaredEuclidean => Metric::SquaredEuclidean,
        MetricName::Manhattan => Metric::Manhattan,
        MetricName::Chebyshev => Metric::Chebyshev,
        MetricName::Cosine => Metric::Cosine,
        MetricName::Correlation => Metric::Correlation,
        MetricName::Hamming => Metric::Hamming,
        MetricName::Minkowski => {
            let p = p.ok_or_else(|| CliError::Usage("the minkowski metric needs --p".into()))?;
            Metric::minkowski(p)?
        }
        MetricName::Mahalanobis => {
            let path = inv_cov.ok_or_else(|| CliError::Usage("the mahalanobis metric needs --inv-cov".into()))?;
            let rows: Vec<Vec<f64>> = read_json(path)?;
            Metric::Mahalanobis { inv_cov: InverseCovariance::new(rows)? }
        }
    })
}

fn init(a: InitArgs) -> Result<()> {
    let metric = build_metric(a.metric, a.p, a.inv_cov.as_deref())?;
    let mut config = GalleryConfig::new(a.dim, metric, a.tau, a.cap_n)?;
    if let Some(c) = a.mad_cutoff {
        config.mad_cutoff = c;
    }
    if let Some(alpha) = a.adaptive_alpha {
        config.adaptive_alpha = alpha;
    }
    config.validate()?;
    let gallery = Gallery::new(config)?;
    let _lock = StoreLock::acquire(&a.store)?;
    if a.store.exists() {
        return Err(CliError::Data(format!("{} already exists", a.store.display())));
    }
    gallery.save(&a.store)?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    let mut gallery = load_store(&a.store)?;
    let lines: Vec<(usize, RecordLine)> = read_lines(&a.input)?;
    let at = |line: usize, source: Error| CliError::AtLine { path: a.input.clone(), line, source };
    let mut touched = BTreeSet::new();
    // Everything is applied in memory first; the store is only rewritten
    // once every line has been accepted.
    for (line, rec) in lines {
        let class = rec.class.clone().ok_or_else(|| {
            CliError::Core(Error::CorruptFile { path: a.input.clone(), line, reason: "missing class".into() })
        })?;
        let mut new = NewRecord::new(class.clone(), rec.embedding().map_err(|e| at(line, e))?);
        new.aux = rec.aux;
        match rec.id {
            Some(id) => gallery.insert_with_id(id, new),
            None => gallery.insert(new),
        }
        .map_err(|e| at(line, e))?;
        touched.insert(class);
    }
    let evicted: usize = touched.iter().map(|c| gallery.evict_to_cap(c)).sum();
    gallery.save(&a.store)?;
    print_json(&serde_json::json!({ "records": gallery.len(), "evicted": evicted }));
    Ok(())
}

#[derive(Serialize)]
struct QueryLine<'a> {
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<&'a str>,
    known: bool,
    #[serde(flatten)]
    result: &'a QueryResult,
}

fn query(a: QueryArgs) -> Result<()> {
    let flag_aux = parse_aux(&a.aux)?;
    let conditioned = a.conditioned || !flag_aux.is_empty();
    let _lock = StoreLock::acquire(&a.store)?;
    let gallery = load_store(&a.store)?;
    let model = if conditioned {
        let path = a.model.clone().unwrap_or_else(|| sibling(&a.store, ".clusters"));
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "conditioned query needs a cluster model at {}; run `emgal cluster` first",
                path.display()
            )));
        }
        let model = ClusterModel::load(&path)?;
        if model.dim != gallery.config().dim {
            return Err(Error::DimensionMismatch { expected: gallery.config().dim, found: model.dim }.into());
        }
        Some(model)
    } else {
        None
    };

    let mut out = String::new();
    for (line, rec) in read_lines::<RecordLine>(&a.input)? {
        let at = |source: Error| CliError::AtLine { path: a.input.clone(), line, source };
        let q = rec.embedding().map_err(at)?;
        let result = match &model {
            Some(m) => {
                let mut declared = flag_aux.clone();
                declared.extend(rec.aux.clone());
                conditioned_query(&gallery, m, &q, &declared, gallery.config().tau)
            }
            None => gallery.query_open_set(&q, a.adaptive),
        }
        .map_err(at)?;
        let row =
            QueryLine { line, expected: rec.class.as_deref(), known: !result.label.is_unknown(), result: &result };
        out.push_str(&serde_json::to_string(&row).expect("serializable"));
        out.push('\n');
    }
    match &a.out {
        Some(path) => write_atomic(path, &out)?,
        None => std::io::stdout().write_all(out.as_bytes()).map_err(Error::Io)?,
    }
    Ok(())
}

fn prune(a: PruneArgs) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    let mut gallery = load_store(&a.store)?;
    let stored = gallery.config().clone();
    {
        let c = gallery.config_mut();
        if let Some(cut) = a.mad_cutoff {
            c.mad_cutoff = cut;
        }
        if let Some(cap) = a.cap {
            c.cap_n = cap;
        }
        c.validate()?;
    }
    let mut removed = BTreeMap::new();
    let mut evicted = 0;
    for class in gallery.classes() {
        if !a.no_mad {
            let ids = gallery.prune_mad(&class)?;
            if !ids.is_empty() {
                removed.insert(class.clone(), ids);
            }
        }
        evicted += gallery.evict_to_cap(&class);
    }
    // Flag overrides apply to this run only.
    *gallery.config_mut() = stored;
    if !removed.is_empty() || evicted > 0 {
        gallery.save(&a.store)?;
    }
    print_json(&serde_json::json!({ "mad_removed": removed, "evicted": evicted, "records": gallery.len() }));
    Ok(())
}

fn compact(a: StoreArg) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    load_store(&a.store)?;
    let g = Gallery::compact_file(&a.store)?;
    print_json(&serde_json::json!({ "records": g.len() }));
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    let gallery = load_store(&a.store)?;
    let mode = match a.mode {
        ModeName::Supervised => ConditionMode::Supervised,
        ModeName::Kmeans => ConditionMode::Kmeans,
    };
    let params = KMeansParams { seed: a.seed, ..KMeansParams::default() };
    let model = fit_condition_model_with(&gallery, &a.var, mode, &params)?;
    let out = a.out.unwrap_or_else(|| sibling(&a.store, ".clusters"));
    model.save(&out)?;
    print_json(&serde_json::json!({
        "variable": model.variable,
        "mode": model.mode,
        "centroids": model.centroids.len(),
        "out": out,
    }));
    Ok(())
}

fn saliency_cmd(a: SaliencyArgs) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    let gallery = load_store(&a.store)?;
    print_json(&saliency(&gallery, &a.var)?);
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    let _lock = StoreLock::acquire(&a.store)?;
    let gallery = load_store(&a.store)?;
    let points: Vec<&[f64]> = gallery.records().map(|r| r.embedding.as_slice()).collect();
    let model = fit_pca(&points, a.components)?;
    let rows = export_projection(&gallery, &model, &ColorBy::parse(&a.color_by))?;
    save_projection_csv(&rows, a.components, &a.out)?;
    print_json(&serde_json::json!({
        "rows": rows.len(),
        "explained_variance": model.explained_variance,
        "explained_variance_ratio": model.explained_variance_ratio(),
    }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let margin = match a.margin2 {
        Some(m2) => Margin::quadruplet(a.margin, m2)?,
        None => Margin::new(a.margin)?,
    };
    let config = TrainConfig {
        margin,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        miner: match a.miner {
            MinerName::AllValid => Miner::AllValid,
            MinerName::SemiHard => Miner::SemiHard,
            MinerName::GsTrs => Miner::GsTrs,
        },
        loss: match a.loss {
            LossName::Contrastive => LossKind::Contrastive,
            LossName::Triplet => LossKind::Triplet,
            LossName::Quadruplet => LossKind::Quadruplet,
        },
        metric: build_metric(a.metric, None, None)?,
        embed_dim: a.embed_dim,
        normalize_output: a.normalize,
    };
    let data: Vec<TrainSample> = read_lines(&a.data)?.into_iter().map(|(_, s)| s).collect();
    let outcome = train(&config, &data)?;
    outcome.model.save(&a.out)?;
    print_json(&serde_json::json!({
        "steps": outcome.steps,
        "first_loss": outcome.loss_history.first(),
        "final_loss": outcome.loss_history.last(),
        "loss_history": outcome.loss_history,
    }));
    Ok(())
}

/// Benchmark description: the synthetic world plus evaluation settings.
#[derive(Debug, Deserialize)]
struct BenchFile {
    #[serde(flatten)]
    world: SyntheticSpec,
    tau: f64,
    #[serde(default)]
    split_fraction: Option<f64>,
    #[serde(default)]
    eval_seed: u64,
    #[serde(default)]
    baseline: Baseline,
}

fn bench(a: BenchArgs) -> Result<()> {
    let file: BenchFile = read_json(&a.spec)?;
    let mut eval = EvalConfig { seed: file.eval_seed, baseline: file.baseline, ..EvalConfig::new(file.tau) };
    if let Some(f) = file.split_fraction {
        eval.split_fraction = f;
    }
    let report = evaluate(&generate(&file.world)?, &eval)?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    write_atomic(&a.out, &(text + "\n"))?;
    print_json(&serde_json::json!({
        "acc_unconditioned": report.acc_unconditioned,
        "acc_conditioned": report.acc_conditioned,
        "unknown_rate_unconditioned": report.unknown_rate_unconditioned,
        "unknown_rate_conditioned": report.unknown_rate_conditioned,
        "queries": report.queries,
    }));
    Ok(())
}

#[derive(Serialize)]
struct GeneratedLine<'a> {
    class: &'a str,
    aux: BTreeMap<&'a str, &'a str>,
    vec: &'a [f64],
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let spec: SyntheticSpec = read_json(&a.spec)?;
    let mut out = String::new();
    for r in generate(&spec)? {
        let line = GeneratedLine {
            class: &r.class,
            aux: BTreeMap::from([(STATE_VARIABLE, r.state.as_str())]),
            vec: r.embedding.as_slice(),
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    write_atomic(&a.out, &out)?;
    Ok(())
}
