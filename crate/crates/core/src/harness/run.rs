//! The six pipeline commands.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::export::{write_arrow_csv, write_pca_csv, write_serialized, ArtifactRecord, RunManifest};
use super::{DatasetSource, ExperimentConfig};
use crate::autodiff::Tensor;
use crate::baselines::{plain_cf_batch, KnnPool};
use crate::classifier::{train_classifier, BlackBox, ClassifierModel};
use crate::datasets::{generate_nonlinear, generate_toy, ingest_csv, Dataset, SplitPolicy};
use crate::engine::{train_cf, write_results_csv, CfEngine, CfTrainConfig, CounterfactualResult};
use crate::error::{Error, Result};
use crate::metrics::{write_comparison_csv, MetricsReport};
use crate::rng::{sha256_hex, stage_rng};
use crate::vae::{train_vae, CausalVae};

/// Progress sink for long-running commands.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// Method names as they appear in comparison tables.
pub const METHODS: [&str; 3] = ["Ours", "Plain-CF", "Plain-CF_K"];

const ACCURACY_FLOOR: f64 = 0.95;
const H_CEILING: f64 = 1e-6;

fn slug(method: &str) -> String {
    method.to_ascii_lowercase().replace('-', "_")
}

/// File layout of one output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset_csv(&self) -> PathBuf {
        self.file("dataset.csv")
    }

    pub fn dataset_json(&self) -> PathBuf {
        self.file("dataset.json")
    }

    pub fn classifier(&self) -> PathBuf {
        self.file("classifier.json")
    }

    pub fn vae(&self) -> PathBuf {
        self.file("vae.json")
    }

    pub fn engine(&self) -> PathBuf {
        self.file("engine.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.file("manifest.json")
    }

    fn require(&self, path: PathBuf, what: &str, stage: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                what: what.into(),
                path,
                stage: stage.into(),
            })
        }
    }
}

fn open_manifest(cfg: &ExperimentConfig, paths: &RunPaths, stage: &str) -> Result<RunManifest> {
    let mut m = RunManifest::open(&paths.manifest())?;
    m.dataset = cfg.dataset.to_string();
    m.config_hash = cfg.hash();
    m.root_seed = cfg.seed;
    m.stages.insert(stage.into());
    Ok(m)
}

/// Generates or ingests the configured dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seed = cfg.stage_seed("dataset");
    let ds = match &cfg.dataset {
        DatasetSource::Toy => generate_toy(cfg.n_samples, seed)?,
        DatasetSource::Nonlinear => generate_nonlinear(cfg.n_samples, seed)?,
        DatasetSource::Csv(path) => {
            let mut schema = cfg
                .schema
                .clone()
                .ok_or_else(|| Error::Config("csv datasets need a schema".into()))?;
            schema.split = if cfg.loo {
                SplitPolicy::LeaveOneOut
            } else {
                SplitPolicy::Holdout
            };
            ingest_csv(path, &schema, seed)?
        }
    };
    match &cfg.constraints {
        Some(specs) => {
            let cs = specs
                .iter()
                .map(|s| s.resolve(ds.feature_names()))
                .collect::<Result<Vec<_>>>()?;
            ds.with_constraints(cs)
        }
        None => Ok(ds),
    }
}

/// Writes `dataset.csv` and its JSON sidecar.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = build_dataset(cfg)?;
    std::fs::create_dir_all(&paths.root)?;
    ds.export(&paths.dataset_csv(), &paths.dataset_json())?;
    let mut m = open_manifest(cfg, &paths, "gen-data")?;
    m.seeds.insert("dataset".into(), cfg.stage_seed("dataset"));
    m.record("dataset_csv", &paths.dataset_csv())?;
    m.record("dataset_json", &paths.dataset_json())?;
    m.save(&paths.manifest())?;
    Ok(ds)
}

pub fn load_dataset(paths: &RunPaths) -> Result<Dataset> {
    let csv = paths.require(paths.dataset_csv(), "dataset", "gen-data")?;
    let json = paths.require(paths.dataset_json(), "dataset sidecar", "gen-data")?;
    Dataset::load(&csv, &json)
}

/// The three trained stages.
#[derive(Debug, Clone)]
pub struct Models {
    pub classifier: ClassifierModel,
    pub vae: CausalVae,
    pub engine: CfEngine,
}

fn upstream_ids(paths: &RunPaths) -> Result<Vec<String>> {
    Ok(vec![
        format!("classifier:{}", ArtifactRecord::of(&paths.classifier())?.sha256),
        format!("vae:{}", ArtifactRecord::of(&paths.vae())?.sha256),
    ])
}

fn load_upstream(paths: &RunPaths, ds: &Dataset) -> Result<(ClassifierModel, CausalVae)> {
    let classifier = ClassifierModel::load(&paths.require(paths.classifier(), "classifier model", "train")?)?;
    let vae = CausalVae::load(&paths.require(paths.vae(), "VAE model", "train")?)?;
    let id = ds.standardizer().id();
    if classifier.standardizer_id != id || vae.standardizer_id != id {
        return Err(Error::Schema(
            "models were trained on a different dataset; rerun `train`".into(),
        ));
    }
    Ok((classifier, vae))
}

/// Loads all three models and checks that they belong together.
pub fn load_models(paths: &RunPaths, ds: &Dataset) -> Result<Models> {
    let (classifier, vae) = load_upstream(paths, ds)?;
    let engine = CfEngine::load(&paths.require(paths.engine(), "counterfactual engine", "train")?)?;
    if engine.upstream != upstream_ids(paths)? {
        return Err(Error::Schema(
            "engine was trained against different upstream models; rerun `train`".into(),
        ));
    }
    Ok(Models {
        classifier,
        vae,
        engine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub test_accuracy: Option<f64>,
    pub vae_final_h: f64,
    pub vae_converged: bool,
    pub vae_test_mse: Option<f64>,
    pub frozen_upstream: bool,
    pub warnings: Vec<String>,
}

fn serialized_sha<T: Serialize>(model: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string_pretty(model)?.as_bytes()))
}

/// Trains classifier, VAE and counterfactual engine in order.
pub fn cmd_train(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<TrainSummary> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = load_dataset(&paths)?;
    let mut warnings = Vec::new();

    progress("training black-box classifier");
    let mut ccfg = cfg.classifier.clone();
    ccfg.seed = cfg.stage_seed("classifier");
    let classifier = train_classifier(&ds, &ccfg)?;
    classifier.save(&paths.classifier())?;
    write_serialized(&paths.file("classifier_curve.csv"), &classifier.history)?;
    if let Some(acc) = classifier.accuracy.test {
        if acc < ACCURACY_FLOOR {
            warnings.push(format!("classifier test accuracy {acc:.4} is below {ACCURACY_FLOOR}"));
        }
    }

    progress("training causal VAE");
    let vae_seed = cfg.stage_seed("vae");
    let vae = train_vae(&ds, &cfg.vae, vae_seed)?;
    vae.save(&paths.vae())?;
    write_serialized(&paths.file("vae_curve.csv"), &vae.history)?;
    if !vae.converged || vae.final_h >= H_CEILING {
        warnings.push(format!(
            "VAE acyclicity h(A) = {:e} after {} rounds",
            vae.final_h,
            vae.history.len()
        ));
    }
    let test = ds.test_indices();
    let vae_test_mse = if test.is_empty() {
        None
    } else {
        Some(vae.reconstruction_mse(&ds.batch(&test)?)?)
    };

    let before = (serialized_sha(&classifier)?, serialized_sha(&vae)?);
    progress("training counterfactual engine");
    let mut cf_cfg = cfg.cf.clone();
    cf_cfg.seed = cfg.stage_seed("cf");
    let mut engine = train_cf(&vae, &classifier, &ds, &cf_cfg)?;
    engine.upstream = upstream_ids(&paths)?;
    engine.save(&paths.engine())?;
    write_serialized(&paths.file("cf_curve.csv"), &engine.history)?;
    let frozen = before == (serialized_sha(&classifier)?, serialized_sha(&vae)?)
        && engine.upstream == upstream_ids(&paths)?;
    if !frozen {
        warnings.push("upstream models changed during engine training".into());
    }

    let mut m = open_manifest(cfg, &paths, "train")?;
    for stage in ["classifier", "vae", "cf"] {
        m.seeds.insert(stage.into(), cfg.stage_seed(stage));
    }
    m.record("classifier", &paths.classifier())?;
    m.record("vae", &paths.vae())?;
    m.record("engine", &paths.engine())?;
    m.classifier_accuracy = Some(classifier.accuracy.clone());
    m.vae_final_h = Some(vae.final_h);
    m.vae_converged = Some(vae.converged);
    m.vae_test_mse = vae_test_mse;
    m.frozen_upstream = Some(frozen);
    m.set_warnings("train", warnings.clone());
    m.save(&paths.manifest())?;

    Ok(TrainSummary {
        test_accuracy: classifier.accuracy.test,
        vae_final_h: vae.final_h,
        vae_converged: vae.converged,
        vae_test_mse,
        frozen_upstream: frozen,
        warnings,
    })
}

fn raw_rows(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let l = ds.n_features();
    let data = idx.iter().flat_map(|&i| ds.raw_row(i).to_vec()).collect();
    Tensor::matrix(idx.len(), l, data)
}

fn reference_rows(ds: &Dataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| ds.raw_row(i).to_vec()).collect()
}

/// Flipped black-box predictions for the given rows.
fn flipped_targets(bb: &dyn BlackBox, ds: &Dataset, idx: &[usize]) -> Result<Vec<u8>> {
    Ok(bb.predict(&ds.batch(idx)?)?.into_iter().map(|p| 1 - p).collect())
}

/// Counterfactuals for every method, in [`METHODS`] order.
fn run_methods(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    classifier: &ClassifierModel,
    vae: &CausalVae,
    engine: &CfEngine,
    queries: &[usize],
    progress: Progress<'_>,
) -> Result<Vec<Vec<CounterfactualResult>>> {
    let x = raw_rows(ds, queries)?;
    let y = flipped_targets(classifier, ds, queries)?;
    let std = ds.standardizer();
    progress("generating counterfactuals: Ours");
    let ours = engine.generate(vae, classifier, std, &x, &y)?;
    progress("generating counterfactuals: Plain-CF");
    let plain = plain_cf_batch(classifier, std, &x, &y, &cfg.plain_cf, None)?;
    progress("generating counterfactuals: Plain-CF_K");
    let train = ds.train_indices();
    let pool = KnnPool::new(&ds.batch(&train)?, &ds.labels_of(&train))?;
    let plain_k = plain_cf_batch(classifier, std, &x, &y, &cfg.plain_cf_k, Some(&pool))?;
    Ok(vec![ours, plain, plain_k])
}

fn write_method_outputs(
    paths: &RunPaths,
    prefix: &str,
    ds: &Dataset,
    results: &[Vec<CounterfactualResult>],
) -> Result<()> {
    for (name, rs) in METHODS.iter().zip(results) {
        let s = slug(name);
        write_results_csv(&paths.file(&format!("{prefix}results_{s}.csv")), ds.feature_names(), rs)?;
        for c in ds.constraints() {
            let (a, b) = (&ds.feature_names()[c.attr_a], &ds.feature_names()[c.attr_b]);
            write_arrow_csv(&paths.file(&format!("{prefix}arrows_{s}_{a}_{b}.csv")), rs, c)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub reports: Vec<MetricsReport>,
    pub frozen_upstream: bool,
}

/// Counterfactuals for every test row from every method, with metrics and
/// plot exports. Never retrains.
pub fn cmd_evaluate(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<EvaluateSummary> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = load_dataset(&paths)?;
    if ds.split().is_leave_one_out() {
        return Err(Error::Config(
            "dataset uses leave-one-out evaluation; run `loo-evaluate`".into(),
        ));
    }
    let models = load_models(&paths, &ds)?;
    let before = upstream_ids(&paths)?;
    let test = ds.test_indices();
    if test.is_empty() {
        return Err(Error::EmptyInput("test split is empty".into()));
    }
    let results = run_methods(
        cfg,
        &ds,
        &models.classifier,
        &models.vae,
        &models.engine,
        &test,
        progress,
    )?;
    let reference = reference_rows(&ds, &ds.train_indices());
    let reports = METHODS
        .iter()
        .zip(&results)
        .map(|(name, rs)| MetricsReport::evaluate(name, rs, ds.constraints(), &reference))
        .collect::<Result<Vec<_>>>()?;

    write_comparison_csv(&paths.file("comparison.csv"), &reports)?;
    std::fs::write(paths.file("metrics.json"), serde_json::to_string_pretty(&reports)?)?;
    write_method_outputs(&paths, "", &ds, &results)?;
    let named: Vec<(&str, &[CounterfactualResult])> =
        METHODS.iter().copied().zip(results.iter().map(Vec::as_slice)).collect();
    write_pca_csv(&paths.file("pca.csv"), ds.standardizer(), &named)?;

    let frozen = before == upstream_ids(&paths)?;
    let mut m = open_manifest(cfg, &paths, "evaluate")?;
    m.methods = METHODS.map(String::from).to_vec();
    m.record("comparison", &paths.file("comparison.csv"))?;
    m.record("metrics", &paths.file("metrics.json"))?;
    m.frozen_upstream = Some(m.frozen_upstream.unwrap_or(true) && frozen);
    m.save(&paths.manifest())?;
    Ok(EvaluateSummary {
        reports,
        frozen_upstream: frozen,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub best_config: CfTrainConfig,
}

/// Highest constraint score, then highest validity, then lowest
/// Mahalanobis distance; earlier cells win exact ties.
fn select_cell(cells: &[GridCell]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        let (a, b) = (&c.report, &cells[best].report);
        let better = a
            .constraint_score
            .total_cmp(&b.constraint_score)
            .then(a.validity.total_cmp(&b.validity))
            .then(b.mahalanobis_mean.total_cmp(&a.mahalanobis_mean));
        if better.is_gt() {
            best = i;
        }
    }
    best
}

/// One engine per grid cell, trained on the training split and scored on
/// the validation split.
pub fn cmd_grid_search(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<GridReport> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = load_dataset(&paths)?;
    let (classifier, vae) = load_upstream(&paths, &ds)?;
    let val = ds.val_indices();
    if val.is_empty() {
        return Err(Error::EmptyInput("grid search needs a validation split".into()));
    }
    let x = raw_rows(&ds, &val)?;
    let y = flipped_targets(&classifier, &ds, &val)?;
    let reference = reference_rows(&ds, &ds.train_indices());
    let g = &cfg.grid;
    let mut cells = Vec::with_capacity(g.n_cells());
    let mut configs = Vec::with_capacity(g.n_cells());
    for &hidden_size in &g.hidden_size {
        for &learning_rate in &g.learning_rate {
            for &batch_size in &g.batch_size {
                progress(&format!(
                    "grid cell {}/{}: hidden {hidden_size}, lr {learning_rate}, batch {batch_size}",
                    cells.len() + 1,
                    g.n_cells()
                ));
                let mut c = cfg.cf.clone();
                c.hidden_size = hidden_size;
                c.learning_rate_mod = learning_rate;
                c.learning_rate_dis = learning_rate;
                c.batch_size = batch_size;
                c.seed = cfg.stage_seed("cf");
                let engine = train_cf(&vae, &classifier, &ds, &c)?;
                let rs = engine.generate(&vae, &classifier, ds.standardizer(), &x, &y)?;
                let name = format!("h{hidden_size}_lr{learning_rate}_b{batch_size}");
                let report = MetricsReport::evaluate(&name, &rs, ds.constraints(), &reference)?;
                cells.push(GridCell {
                    hidden_size,
                    learning_rate,
                    batch_size,
                    report,
                });
                configs.push(c);
            }
        }
    }
    let best = select_cell(&cells);
    let mut w = csv::Writer::from_path(paths.file("grid.csv"))?;
    w.write_record([
        "hidden_size",
        "learning_rate",
        "batch_size",
        "valid_pct",
        "const_pct",
        "euclidean_dist",
        "mahalanobis_dist",
        "n",
        "selected",
    ])?;
    for (i, c) in cells.iter().enumerate() {
        w.write_record([
            c.hidden_size.to_string(),
            c.learning_rate.to_string(),
            c.batch_size.to_string(),
            format!("{:.2}", 100.0 * c.report.validity),
            format!("{:.2}", 100.0 * c.report.constraint_score),
            format!("{:.4}", c.report.euclidean_mean),
            format!("{:.4}", c.report.mahalanobis_mean),
            c.report.n_evaluated.to_string(),
            (i == best).to_string(),
        ])?;
    }
    w.flush()?;
    let report = GridReport {
        cells,
        best,
        best_config: configs.swap_remove(best),
    };
    std::fs::write(paths.file("grid_best.json"), serde_json::to_string_pretty(&report.best_config)?)?;
    let mut m = open_manifest(cfg, &paths, "grid-search")?;
    m.record("grid", &paths.file("grid.csv"))?;
    m.save(&paths.manifest())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub feature_names: Vec<String>,
    pub result: CounterfactualResult,
    pub no_flip_requested: bool,
}

fn check_record(ds: &Dataset, record: &[f64]) -> Result<()> {
    let l = ds.n_features();
    if record.len() != l {
        return Err(Error::Schema(format!(
            "record has {} values, schema {:?} has {l}",
            record.len(),
            ds.feature_names()
        )));
    }
    Ok(())
}

/// Counterfactual for one raw-unit record. When `target` equals the
/// current prediction the VAE reconstruction is returned unperturbed.
pub fn explain_record(models: &Models, ds: &Dataset, record: &[f64], target: Option<u8>) -> Result<ExplainOutcome> {
    check_record(ds, record)?;
    if target.is_some_and(|t| t > 1) {
        return Err(Error::Config("target label must be 0 or 1".into()));
    }
    let std = ds.standardizer();
    let x = Tensor::row(std.standardize(record)?)?;
    let current = models.classifier.predict(&x)?[0];
    let target = target.unwrap_or(1 - current);
    let no_flip_requested = target == current;
    let result = if no_flip_requested {
        let (z, _) = models.vae.encode(&x)?;
        let recon = models.vae.reconstruct(&x)?;
        CounterfactualResult {
            original: record.to_vec(),
            counterfactual: std.destandardize(recon.row_slice(0))?,
            original_label: current,
            target_label: target,
            predicted_cf_label: models.classifier.predict(&recon)?[0],
            delta_norm: 0.0,
            latent: z.row_slice(0).to_vec(),
            latent_cf: z.row_slice(0).to_vec(),
        }
    } else {
        let raw = Tensor::row(record.to_vec())?;
        models
            .engine
            .generate(&models.vae, &models.classifier, std, &raw, &[target])?
            .remove(0)
    };
    Ok(ExplainOutcome {
        feature_names: ds.feature_names().to_vec(),
        result,
        no_flip_requested,
    })
}

/// [`explain_record`] against the models in `cfg.output_dir`; also writes
/// `explain.json`.
pub fn cmd_explain(cfg: &ExperimentConfig, record: &[f64], target: Option<u8>) -> Result<ExplainOutcome> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = load_dataset(&paths)?;
    check_record(&ds, record)?;
    let models = load_models(&paths, &ds)?;
    let out = explain_record(&models, &ds, record, target)?;
    std::fs::write(paths.file("explain.json"), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub n_rows: usize,
    pub folds: Vec<usize>,
    pub skipped: Vec<(usize, String)>,
    pub reports: Vec<MetricsReport>,
}

fn run_fold(cfg: &ExperimentConfig, ds: &Dataset, held_out: usize) -> Result<Vec<CounterfactualResult>> {
    let fold = ds.fold(held_out, &mut stage_rng(cfg.seed, &format!("loo-split/{held_out}")))?;
    let mut ccfg = cfg.classifier.clone();
    ccfg.seed = cfg.stage_seed(&format!("classifier/fold-{held_out}"));
    let classifier = train_classifier(&fold, &ccfg)?;
    let vae = train_vae(&fold, &cfg.vae, cfg.stage_seed(&format!("vae/fold-{held_out}")))?;
    let mut cf_cfg = cfg.cf.clone();
    cf_cfg.seed = cfg.stage_seed(&format!("cf/fold-{held_out}"));
    let engine = train_cf(&vae, &classifier, &fold, &cf_cfg)?;
    let rs = run_methods(cfg, &fold, &classifier, &vae, &engine, &[held_out], &mut |_| {})?;
    Ok(rs.into_iter().map(|mut v| v.remove(0)).collect())
}

/// Leave-one-out: each selected fold retrains every stage on the other
/// rows and explains the held-out row. Failed folds are skipped.
pub fn cmd_loo_evaluate(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<LooReport> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ds = load_dataset(&paths)?;
    if !ds.split().is_leave_one_out() {
        return Err(Error::Config(
            "dataset does not use leave-one-out evaluation; set loo=true and rerun `gen-data`".into(),
        ));
    }
    let n = ds.n_rows();
    let mut folds: Vec<usize> = match cfg.loo_folds {
        Some(k) if k < n => sample(&mut stage_rng(cfg.seed, "loo"), n, k).into_vec(),
        _ => (0..n).collect(),
    };
    folds.sort_unstable();
    let mut per_method: Vec<Vec<CounterfactualResult>> = vec![Vec::new(); METHODS.len()];
    let mut skipped = Vec::new();
    for (k, &i) in folds.iter().enumerate() {
        progress(&format!("fold {}/{} (row {i})", k + 1, folds.len()));
        match run_fold(cfg, &ds, i) {
            Ok(rs) => per_method.iter_mut().zip(rs).for_each(|(v, r)| v.push(r)),
            Err(e) => skipped.push((i, e.to_string())),
        }
    }
    if per_method[0].is_empty() {
        return Err(Error::EmptyInput(format!("all {} folds failed", folds.len())));
    }
    let reference = reference_rows(&ds, &(0..n).collect::<Vec<_>>());
    let reports = METHODS
        .iter()
        .zip(&per_method)
        .map(|(name, rs)| MetricsReport::evaluate(name, rs, ds.constraints(), &reference))
        .collect::<Result<Vec<_>>>()?;
    write_comparison_csv(&paths.file("loo_comparison.csv"), &reports)?;
    write_method_outputs(&paths, "loo_", &ds, &per_method)?;
    let report = LooReport {
        n_rows: n,
        folds,
        skipped,
        reports,
    };
    std::fs::write(paths.file("loo.json"), serde_json::to_string_pretty(&report)?)?;

    let mut m = open_manifest(cfg, &paths, "loo-evaluate")?;
    m.seeds.insert("loo".into(), cfg.stage_seed("loo"));
    m.methods = METHODS.map(String::from).to_vec();
    m.record("loo_comparison", &paths.file("loo_comparison.csv"))?;
    m.set_warnings(
        "loo-evaluate",
        report
            .skipped
            .iter()
            .map(|(i, e)| format!("fold holding out row {i} skipped: {e}"))
            .collect(),
    );
    m.save(&paths.manifest())?;
    Ok(report)
}

/// Rows of `path` parsed as numbers, for `explain --record-file`.
pub fn read_record(path: &Path, row: usize, n_features: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rec = rdr
        .records()
        .nth(row)
        .ok_or_else(|| Error::EmptyInput(format!("{} has no row {row}", path.display())))??;
    rec.iter()
        .take(n_features)
        .enumerate()
        .map(|(j, c)| {
            c.trim().parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: j.to_string(),
                message: format!("`{c}` is not numeric"),
            })
        })
        .collect()
}
