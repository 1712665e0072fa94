//! The ablation ladder: every (variant, seed) cell trained and scored on its
//! own generated splits.

use super::{HarnessError, RunConfig};
use crate::data::{generate_dataset, Episode, GeneratorSpec, World};
use crate::eval::{evaluate, ActionPrior, Evaluation};
use crate::sap::{AblationVariant, SapParams};
use crate::training::{fit, init_params, EpochMetrics, Labels};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Generator stream of the training split; validation uses the next one.
const TRAIN_STREAM: u64 = 0;
const VAL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub variant: AblationVariant,
    pub seed: u64,
    pub split: Split,
    pub verb_top1: f64,
    pub verb_top5: f64,
    pub noun_top1: f64,
    pub noun_top5: f64,
    /// Prior re-weighted action accuracy.
    pub action_top1: f64,
    pub action_top5: f64,
    /// Plain product action accuracy.
    pub action_raw_top1: f64,
    pub action_raw_top5: f64,
    pub epochs: usize,
    /// Training plus evaluation time. Kept out of the CSV.
    pub wall_clock_s: f64,
}

pub const CSV_HEADER: &str = "variant,seed,split,verb_top1,verb_top5,noun_top1,noun_top5,action_top1,action_top5,action_raw_top1,action_raw_top5,epochs";

impl ResultRecord {
    fn from_eval(variant: AblationVariant, seed: u64, split: Split, e: &Evaluation, epochs: usize) -> Self {
        let at = |k: usize| e.at(k).copied().expect("k = 1 and k = 5 are always evaluated");
        let (t1, t5) = (at(1), at(5));
        Self {
            variant,
            seed,
            split,
            verb_top1: t1.verb,
            verb_top5: t5.verb,
            noun_top1: t1.noun,
            noun_top5: t5.noun,
            action_top1: t1.action,
            action_top5: t5.action,
            action_raw_top1: t1.action_raw,
            action_raw_top5: t5.action_raw,
            epochs,
            wall_clock_s: 0.0,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.variant,
            self.seed,
            self.split.name(),
            self.verb_top1,
            self.verb_top5,
            self.noun_top1,
            self.noun_top5,
            self.action_top1,
            self.action_top5,
            self.action_raw_top1,
            self.action_raw_top5,
            self.epochs
        )
    }
}

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Train and validation splits for one seed.
pub fn prepare_data(cfg: &RunConfig, seed: u64) -> Result<(World, Vec<Episode>, Vec<Episode>), HarnessError> {
    let world = World::new(&cfg.spec_for(seed))?;
    let train = generate_dataset(&world, cfg.train_size, TRAIN_STREAM)?;
    let val = generate_dataset(&world, cfg.val_size, VAL_STREAM)?;
    Ok((world, train, val))
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub records: Vec<ResultRecord>,
    pub metrics: Vec<EpochMetrics>,
    pub params: SapParams,
    pub prior: ActionPrior,
}

fn eval_ks(cfg: &RunConfig) -> Vec<usize> {
    let mut ks = cfg.ks.clone();
    ks.extend([1, 5]);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Trains one variant on `train` and scores it on `val` (and on `train` when
/// `cfg.eval_train` is set).
pub fn train_cell(
    cfg: &RunConfig,
    variant: AblationVariant,
    seed: u64,
    train: &[Episode],
    val: &[Episode],
) -> Result<CellOutput, HarnessError> {
    let start = Instant::now();
    let sap_cfg = cfg.sap_config();
    let mut params = init_params(cfg.dims(), seed);
    let metrics = fit(train, &mut params, variant, &sap_cfg, &cfg.train_config(seed))?;
    let labels: Vec<Labels> = train.iter().map(|e| e.labels).collect();
    let prior = ActionPrior::estimate_with_min_count(&labels, cfg.spec.verbs, cfg.spec.nouns, cfg.min_count)?;
    let ks = eval_ks(cfg);
    let mut records = Vec::new();
    let mut splits = vec![(Split::Val, val)];
    if cfg.eval_train {
        splits.push((Split::Train, train));
    }
    for (split, data) in splits {
        let e = evaluate(&params, data, &prior, variant, &sap_cfg, &ks)?;
        records.push(ResultRecord::from_eval(variant, seed, split, &e, cfg.epochs));
    }
    let elapsed = start.elapsed().as_secs_f64();
    for r in &mut records {
        r.wall_clock_s = elapsed;
    }
    Ok(CellOutput {
        records,
        metrics,
        params,
        prior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub runs: usize,
    pub noun_top1_mean: f64,
    pub noun_top1_std: f64,
    pub verb_top1_mean: f64,
    pub verb_top1_std: f64,
    pub action_top1_mean: f64,
    pub action_top1_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-variant statistics over seeds, validation split only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub variants: Vec<VariantSummary>,
}

impl AblationSummary {
    pub fn from_records(records: &[ResultRecord], variants: &[AblationVariant]) -> Self {
        let variants = variants
            .iter()
            .filter_map(|&v| {
                let rows: Vec<&ResultRecord> = records
                    .iter()
                    .filter(|r| r.variant == v && r.split == Split::Val)
                    .collect();
                if rows.is_empty() {
                    return None;
                }
                let col = |f: fn(&ResultRecord) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let (nm, ns) = col(|r| r.noun_top1);
                let (vm, vs) = col(|r| r.verb_top1);
                let (am, as_) = col(|r| r.action_top1);
                Some(VariantSummary {
                    variant: v,
                    runs: rows.len(),
                    noun_top1_mean: nm,
                    noun_top1_std: ns,
                    verb_top1_mean: vm,
                    verb_top1_std: vs,
                    action_top1_mean: am,
                    action_top1_std: as_,
                })
            })
            .collect();
        Self { variants }
    }

    pub fn get(&self, v: AblationVariant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn noun_mean(&self, v: AblationVariant) -> Option<f64> {
        self.get(v).map(|s| s.noun_top1_mean)
    }

    /// `matrix[i][j]` compares mean noun top-1 of variant `i` against `j`.
    pub fn ordering_matrix(&self) -> Vec<Vec<Ordering>> {
        self.variants
            .iter()
            .map(|a| {
                self.variants
                    .iter()
                    .map(|b| a.noun_top1_mean.total_cmp(&b.noun_top1_mean))
                    .collect()
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self.variants.iter().map(|s| s.variant.name().len()).max().unwrap_or(7).max(7);
        let _ = writeln!(
            out,
            "{:<width$}  runs  noun top-1        verb top-1        action top-1",
            "variant"
        );
        for s in &self.variants {
            let _ = writeln!(
                out,
                "{:<width$}  {:>4}  {:.4} ± {:.4}   {:.4} ± {:.4}   {:.4} ± {:.4}",
                s.variant.name(),
                s.runs,
                s.noun_top1_mean,
                s.noun_top1_std,
                s.verb_top1_mean,
                s.verb_top1_std,
                s.action_top1_mean,
                s.action_top1_std
            );
        }
        let _ = writeln!(out, "\nnoun top-1 ordering (row vs column):");
        let label = width + 3;
        let _ = write!(out, "{:<label$}", "");
        for (j, _) in self.variants.iter().enumerate() {
            let _ = write!(out, " {j:>2}");
        }
        out.push('\n');
        for (i, (s, row)) in self.variants.iter().zip(self.ordering_matrix()).enumerate() {
            let _ = write!(out, "{:<label$}", format!("{i:>2} {}", s.variant.name()));
            for o in row {
                let c = match o {
                    Ordering::Greater => '>',
                    Ordering::Less => '<',
                    Ordering::Equal => '=',
                };
                let _ = write!(out, "  {c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Claims of the ablation ladder that the summary means contradict.
///
/// Checked when both sides were run: `full` above `no_csg` and `no_arm`, both
/// above `no_csg_no_arm`, `full` at least 5 points above `baseline`, and each
/// pooling variant above `baseline` when the bank signal is the stronger one.
pub fn ladder_violations(s: &AblationSummary, spec: &GeneratorSpec) -> Vec<String> {
    use AblationVariant::*;
    let mut pairs = vec![(Full, NoCsg), (Full, NoArm), (NoCsg, NoCsgNoArm), (NoArm, NoCsgNoArm)];
    if spec.bank_signal_strength > spec.global_signal_strength {
        pairs.extend([(AvgPool, Baseline), (MaxPool, Baseline)]);
    }
    let mut out = Vec::new();
    for (hi, lo) in pairs {
        if let (Some(a), Some(b)) = (s.noun_mean(hi), s.noun_mean(lo)) {
            if a <= b {
                out.push(format!("{hi} ({a:.4}) not above {lo} ({b:.4})"));
            }
        }
    }
    if let (Some(a), Some(b)) = (s.noun_mean(Full), s.noun_mean(Baseline)) {
        if a < b + 0.05 {
            out.push(format!("full ({a:.4}) not 5 points above baseline ({b:.4})"));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    /// Sorted by (variant position in the config, seed position, split).
    pub records: Vec<ResultRecord>,
    pub summary: AblationSummary,
    /// One JSON object per line: epoch metrics and results.
    pub log: Vec<String>,
}

impl AblationReport {
    pub fn csv(&self) -> String {
        records_to_csv(&self.records)
    }
}

#[derive(Serialize)]
struct EpochEvent<'a> {
    event: &'static str,
    variant: AblationVariant,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

#[derive(Serialize)]
struct ResultEvent<'a> {
    event: &'static str,
    #[serde(flatten)]
    record: &'a ResultRecord,
}

pub fn run_ablation(cfg: &RunConfig) -> Result<AblationReport, HarnessError> {
    cfg.validate()?;
    let mut cells: Vec<(usize, usize, Vec<ResultRecord>)> = Vec::new();
    let mut log = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let (_, train, val) = prepare_data(cfg, seed)?;
        for (vi, &variant) in cfg.variants.iter().enumerate() {
            let out = train_cell(cfg, variant, seed, &train, &val)?;
            for m in &out.metrics {
                log.push(
                    serde_json::to_string(&EpochEvent {
                        event: "epoch",
                        variant,
                        seed,
                        metrics: m,
                    })
                    .expect("metrics serialize"),
                );
            }
            for r in &out.records {
                log::info!(
                    "{variant} seed {seed} {}: noun top-1 {:.4}, verb top-1 {:.4}, action top-1 {:.4} ({:.1}s)",
                    r.split.name(),
                    r.noun_top1,
                    r.verb_top1,
                    r.action_top1,
                    r.wall_clock_s
                );
                log.push(
                    serde_json::to_string(&ResultEvent {
                        event: "result",
                        record: r,
                    })
                    .expect("record serializes"),
                );
            }
            cells.push((vi, si, out.records));
        }
    }
    cells.sort_by_key(|(vi, si, _)| (*vi, *si));
    let records: Vec<ResultRecord> = cells.into_iter().flat_map(|(_, _, r)| r).collect();
    let summary = AblationSummary::from_records(&records, &cfg.variants);
    Ok(AblationReport { records, summary, log })
}

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub log: PathBuf,
    pub summary: PathBuf,
}

/// Writes `results.csv`, `results.jsonl` and `summary.txt` into `dir`.
pub fn write_report(report: &AblationReport, dir: &Path) -> Result<ReportPaths, HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let paths = ReportPaths {
        csv: dir.join("results.csv"),
        log: dir.join("results.jsonl"),
        summary: dir.join("summary.txt"),
    };
    std::fs::write(&paths.csv, report.csv()).map_err(HarnessError::io(&paths.csv))?;
    let mut log = report.log.join("\n");
    log.push('\n');
    std::fs::write(&paths.log, log).map_err(HarnessError::io(&paths.log))?;
    std::fs::write(&paths.summary, report.summary.render()).map_err(HarnessError::io(&paths.summary))?;
    Ok(paths)
}
