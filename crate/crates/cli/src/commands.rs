//! One function per subcommand. Each reads its inputs from the work
//! directory, checks their config hash, and writes its outputs atomically.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use metatrend::backtest::{cumulative_return, run_backtest, write_equity, write_trades};
use metatrend::finetune::{
    finetune_all_individual, finetune_universal, read_predictions, sort_records, write_predictions,
    PredictionRecord, RunManifest, RunMode,
};
use metatrend::indicators::feature_matrix;
use metatrend::labeling::{label_series, sigma_ratio_series, yearly_quartiles};
use metatrend::market_data::{write_atomic, Universe, UniverseManifest};
use metatrend::meta::{meta_train, write_loss_log};
use metatrend::metrics::{run_metrics, RunMetrics};
use metatrend::nn::{build_model, read_params, save_params, Arch, ModelParams};
use metatrend::par;
use metatrend::pipeline::{meta_tasks, schedule, stock_datasets};
use metatrend::rng;
use metatrend::tensor::{read_dataset, write_dataset, LabeledDataset};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{check_hash, require, with_hash_line, Layout};

/// A validated configuration bound to its work directory.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub layout: Layout,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        let layout = Layout::new(&cfg.data.workdir);
        std::fs::create_dir_all(&layout.root).map_err(|e| {
            CliError::Other(format!("cannot create {}: {e}", layout.root.display()))
        })?;
        Ok(Self { cfg, hash, layout })
    }

    /// Appends one JSON line to the run log.
    pub fn event(&self, event: &str, fields: Value) -> CliResult<()> {
        let mut rec = json!({
            "time": chrono::Utc::now().to_rfc3339(),
            "event": event,
            "config_hash": self.hash,
        });
        if let (Value::Object(rec), Value::Object(fields)) = (&mut rec, fields) {
            rec.extend(fields);
        }
        let path = self.layout.run_log();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        writeln!(f, "{rec}").map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    pub fn universe(&self) -> CliResult<Universe> {
        let path = self.cfg.universe_path()?;
        if !path.is_file() {
            return Err(CliError::Config {
                key: "data.universe".into(),
                message: format!("{} does not exist", path.display()),
            });
        }
        Ok(UniverseManifest::read(path)?.load(path)?)
    }

    fn write_text(&self, path: &std::path::Path, body: &str) -> CliResult<()> {
        Ok(write_atomic(
            path,
            with_hash_line(&self.hash, body).as_bytes(),
        )?)
    }

    fn write_json<T: Serialize>(&self, path: &std::path::Path, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(metatrend::Error::from)?;
        Ok(write_atomic(path, text.as_bytes())?)
    }
}

/// Seed of the random initialization for `arch`; meta-training starts from
/// the same parameters a non-meta run starts from.
pub fn init_seed(seed: u64, arch: Arch) -> u64 {
    rng::derive_seed(seed, &[rng::tag("model-init"), rng::tag(arch.slug())])
}

fn collect<T>(results: Vec<metatrend::Result<T>>) -> CliResult<Vec<T>> {
    Ok(results.into_iter().collect::<metatrend::Result<Vec<T>>>()?)
}

pub fn label(ctx: &Ctx) -> CliResult<()> {
    let u = ctx.universe()?;
    let series: Vec<_> = u.series.values().collect();
    let bodies = par::map(&series, |s| {
        let labels = label_series(s, &ctx.cfg.labeling);
        let mut body = String::from("date,label\n");
        for (d, l) in labels.labeled() {
            body.push_str(&format!("{d},{}\n", l.name()));
        }
        (s.stock_id.clone(), body, labels.labeled_count())
    });
    for (id, body, n) in bodies {
        ctx.write_text(&ctx.layout.label_file(&id), &body)?;
        log::info!("labels {id}: {n} labeled days");
    }
    ctx.event("label", json!({ "stocks": u.series.len() }))
}

#[derive(Serialize)]
struct SigmaRatioReport {
    config_hash: String,
    pooled: BTreeMap<i32, metatrend::labeling::Quartiles>,
    stocks: BTreeMap<String, BTreeMap<i32, metatrend::labeling::Quartiles>>,
}

pub fn sigma_ratio(ctx: &Ctx) -> CliResult<()> {
    let u = ctx.universe()?;
    let mut pooled = Vec::new();
    let mut stocks = BTreeMap::new();
    for (id, s) in &u.series {
        let ratios = sigma_ratio_series(s, &ctx.cfg.labeling);
        stocks.insert(id.clone(), yearly_quartiles(&ratios));
        pooled.extend(ratios);
    }
    let report = SigmaRatioReport {
        config_hash: ctx.hash.clone(),
        pooled: yearly_quartiles(&pooled),
        stocks,
    };
    ctx.write_json(&ctx.layout.sigma_ratio(), &report)?;
    ctx.event("sigma-ratio", json!({ "ratios": pooled.len() }))
}

pub fn features(ctx: &Ctx) -> CliResult<()> {
    let u = ctx.universe()?;
    let series: Vec<_> = u.series.values().collect();
    let matrices = collect(par::map(&series, |s| {
        feature_matrix(s, &ctx.cfg.indicators)
    }))?;
    for (s, m) in series.iter().zip(&matrices) {
        ctx.write_text(&ctx.layout.feature_file(&s.stock_id), &m.to_csv())?;
    }
    ctx.event("features", json!({ "stocks": series.len() }))
}

pub fn dataset(ctx: &Ctx) -> CliResult<()> {
    let u = ctx.universe()?;
    let c = &ctx.cfg;
    let datasets = stock_datasets(&u, &c.labeling, &c.indicators, c.normalization)?;
    let dir = ctx.layout.datasets();
    for (id, ds) in &datasets {
        write_dataset(&dir, id, ds, &ctx.hash)?;
        log::info!("dataset {id}: {} examples", ds.len());
    }
    let sizes: BTreeMap<&String, usize> = datasets.iter().map(|(id, ds)| (id, ds.len())).collect();
    ctx.event(
        "dataset",
        json!({ "normalization": c.normalization, "examples": sizes }),
    )
}

/// Reads every stock's dataset back, checking its hash.
pub fn load_datasets(ctx: &Ctx, u: &Universe) -> CliResult<BTreeMap<String, LabeledDataset>> {
    let dir = ctx.layout.datasets();
    let mut out = BTreeMap::new();
    for id in u.stock_ids() {
        let header = dir.join(format!("{id}.json"));
        require(&header, "dataset")?;
        let (h, ds) = read_dataset(&dir, id)?;
        check_hash(&header, Some(&h.config_hash), &ctx.hash, "dataset")?;
        out.insert(id.to_string(), ds);
    }
    Ok(out)
}

pub fn meta_train_cmd(ctx: &Ctx, arch: Arch) -> CliResult<()> {
    let u = ctx.universe()?;
    let datasets = load_datasets(ctx, &u)?;
    let sched = schedule(&datasets)?;
    let tasks = meta_tasks(
        &datasets,
        &sched.meta,
        &u.calendar,
        ctx.cfg.finetune.label_horizon,
    )?;
    let init = build_model(arch, &ctx.cfg.scale, init_seed(ctx.cfg.seed, arch))?;
    log::info!(
        "meta-training {arch} on {} tasks, support before {}, query {}..{}",
        tasks.len(),
        sched.meta.test.start,
        sched.meta.test.start,
        sched.meta.test.end
    );
    let state = meta_train(init, &tasks, &ctx.cfg.train_config())?;
    save_params(&state.phi, ctx.layout.phi(arch), &ctx.hash)?;
    write_loss_log(&ctx.layout.meta_loss(arch), &state.log, &ctx.hash)?;
    let first = state.log.first().map(|e| e.loss);
    let last = state.log.last().map(|e| e.loss);
    ctx.event(
        "meta-train",
        json!({ "arch": arch, "steps": state.step, "initial_loss": first, "final_loss": last }),
    )
}

fn load_phi(ctx: &Ctx, arch: Arch) -> CliResult<ModelParams<f32>> {
    let path = ctx.layout.phi(arch);
    require(&path, "meta-train")?;
    let (header, phi) = read_params(&path)?;
    check_hash(&path, Some(&header.config_hash), &ctx.hash, "meta-train")?;
    if header.arch != arch {
        return Err(metatrend::Error::ArchMismatch {
            expected: arch.to_string(),
            found: header.arch.to_string(),
        }
        .into());
    }
    Ok(phi)
}

pub fn finetune(ctx: &Ctx, mode: RunMode, arch: Arch) -> CliResult<String> {
    let init = if mode.uses_meta() {
        load_phi(ctx, arch)?
    } else {
        build_model(arch, &ctx.cfg.scale, init_seed(ctx.cfg.seed, arch))?
    };
    let u = ctx.universe()?;
    let datasets = load_datasets(ctx, &u)?;
    let sched = schedule(&datasets)?;
    let train = ctx.cfg.train_config();
    let opts = &ctx.cfg.finetune;
    let windows = &sched.evaluation;
    log::info!(
        "{}: {} windows from {}",
        mode.run_name(arch),
        windows.len(),
        windows[0].test.start
    );
    let mut records = if mode.universal() {
        finetune_universal(&init, windows, &datasets, &u.calendar, &train, opts)?
    } else {
        finetune_all_individual(&init, windows, &datasets, &u.calendar, &train, opts)?
    };
    sort_records(&mut records);
    let run = mode.run_name(arch);
    write_predictions(&ctx.layout.predictions(&run), &records, &ctx.hash)?;
    let manifest = RunManifest {
        run: run.clone(),
        mode,
        arch,
        scale: ctx.cfg.scale,
        windows: windows.clone(),
        seed: ctx.cfg.seed,
        config_hash: ctx.hash.clone(),
        phi_path: mode
            .uses_meta()
            .then(|| ctx.layout.phi(arch).display().to_string()),
        train,
        options: *opts,
    };
    ctx.write_json(&ctx.layout.run_manifest(&run), &manifest)?;
    ctx.event(
        "finetune",
        json!({ "run": run, "records": records.len(), "windows": windows.len() }),
    )?;
    Ok(run)
}

/// The named runs, or every run with predictions when none are named.
fn select_runs(ctx: &Ctx, runs: &[String]) -> CliResult<Vec<String>> {
    let runs = if runs.is_empty() {
        ctx.layout.existing_runs()?
    } else {
        runs.to_vec()
    };
    if runs.is_empty() {
        let run = ctx.cfg.mode.run_name(ctx.cfg.arch);
        return Err(CliError::MissingArtifact {
            path: ctx.layout.predictions(&run),
            producer: "finetune",
        });
    }
    Ok(runs)
}

fn load_records(ctx: &Ctx, run: &str) -> CliResult<Vec<PredictionRecord>> {
    let path = ctx.layout.predictions(run);
    require(&path, "finetune")?;
    let (hash, records) = read_predictions(&path)?;
    check_hash(&path, hash.as_deref(), &ctx.hash, "finetune")?;
    Ok(records)
}

#[derive(Serialize)]
struct MetricsReport {
    config_hash: String,
    runs: BTreeMap<String, RunMetrics>,
}

#[derive(Serialize)]
struct MonthlyReport {
    config_hash: String,
    runs: BTreeMap<String, BTreeMap<String, RunMetrics>>,
}

fn by_month(records: &[PredictionRecord]) -> BTreeMap<String, Vec<PredictionRecord>> {
    let mut out: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        out.entry(format!("{:04}-{:02}", r.date.year(), r.date.month()))
            .or_default()
            .push(r.clone());
    }
    out
}

pub fn evaluate(ctx: &Ctx, runs: &[String], per_month: bool) -> CliResult<()> {
    let runs = select_runs(ctx, runs)?;
    let mut metrics = BTreeMap::new();
    let mut monthly = BTreeMap::new();
    for run in &runs {
        let records = load_records(ctx, run)?;
        let m = run_metrics(&records)?;
        log::info!(
            "{run}: accuracy {:.4} (four-level), {:.4} (two-level) over {} records",
            m.four_level.regular_accuracy,
            m.two_level.regular_accuracy,
            m.four_level.records
        );
        if per_month {
            let months = by_month(&records)
                .into_iter()
                .map(|(k, v)| Ok((k, run_metrics(&v)?)))
                .collect::<metatrend::Result<BTreeMap<_, _>>>()?;
            monthly.insert(run.clone(), months);
        }
        metrics.insert(run.clone(), m);
    }
    let mut csv = String::from(
        "run,records,four_accuracy,four_balanced_accuracy,four_weighted_f1,four_rise_precision,\
         two_accuracy,two_balanced_accuracy,two_weighted_f1,two_rise_precision\n",
    );
    for (run, m) in &metrics {
        let (f, t) = (&m.four_level, &m.two_level);
        csv.push_str(&format!(
            "{run},{},{},{},{},{},{},{},{},{}\n",
            f.records,
            f.regular_accuracy,
            f.balanced_accuracy,
            f.weighted_f1,
            f.rise_precision,
            t.regular_accuracy,
            t.balanced_accuracy,
            t.weighted_f1,
            t.rise_precision
        ));
    }
    let report = MetricsReport {
        config_hash: ctx.hash.clone(),
        runs: metrics,
    };
    ctx.write_json(&ctx.layout.metrics(), &report)?;
    ctx.write_text(&ctx.layout.comparison(), &csv)?;
    if per_month {
        let report = MonthlyReport {
            config_hash: ctx.hash.clone(),
            runs: monthly,
        };
        ctx.write_json(&ctx.layout.monthly_metrics(), &report)?;
    }
    ctx.event("evaluate", json!({ "runs": runs }))
}

pub fn backtest(ctx: &Ctx, runs: &[String]) -> CliResult<()> {
    let runs = select_runs(ctx, runs)?;
    let u = ctx.universe()?;
    let mut curves: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    let mut summary = String::from("run,final_value,cumulative_return,trades\n");
    for run in &runs {
        let records = load_records(ctx, run)?;
        let result = run_backtest(&records, &u, &ctx.cfg.backtest)?;
        write_equity(&ctx.layout.equity(run), &result.curve, &ctx.hash)?;
        write_trades(&ctx.layout.trades(run), &result.trades, &ctx.hash)?;
        let final_value = result
            .curve
            .points
            .last()
            .map_or(result.curve.initial, |p| p.1);
        let ret = cumulative_return(&result.curve);
        log::info!(
            "{run}: final value {final_value:.4}, return {:.2}%",
            100.0 * ret
        );
        summary.push_str(&format!(
            "{run},{final_value},{ret},{}\n",
            result.trades.len()
        ));
        curves.insert(run.clone(), result.curve.points.into_iter().collect());
    }
    let mut dates: Vec<NaiveDate> = curves.values().flat_map(|c| c.keys().copied()).collect();
    dates.sort();
    dates.dedup();
    let mut table = String::from("date");
    for run in curves.keys() {
        table.push(',');
        table.push_str(run);
    }
    table.push('\n');
    for d in dates {
        table.push_str(&d.to_string());
        for c in curves.values() {
            table.push(',');
            if let Some(v) = c.get(&d) {
                table.push_str(&v.to_string());
            }
        }
        table.push('\n');
    }
    ctx.write_text(&ctx.layout.backtest_comparison(), &table)?;
    ctx.write_text(&ctx.layout.backtest_summary(), &summary)?;
    ctx.event("backtest", json!({ "runs": runs }))
}

/// Every step for one mode/arch pair, in order.
pub fn run_all(ctx: &Ctx, mode: RunMode, arch: Arch) -> CliResult<()> {
    label(ctx)?;
    sigma_ratio(ctx)?;
    features(ctx)?;
    dataset(ctx)?;
    if mode.uses_meta() {
        meta_train_cmd(ctx, arch)?;
    }
    let run = finetune(ctx, mode, arch)?;
    evaluate(ctx, std::slice::from_ref(&run), false)?;
    backtest(ctx, &[run])
}
