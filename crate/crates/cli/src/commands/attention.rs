use std::path::{Path, PathBuf};

use clap::Args;
use rope_idalign::attention::{
    alignment_gain_report_with, attention_scores_with, relative_distance_matrix,
    AlignmentGainReport, PopulationSpec, ScoreOptions, TokenPopulation,
};
use rope_idalign::id_align::{assign_position_ids_with, IdMode};
use rope_idalign::rope::RopeConfig;
use rope_idalign::Execution;
use serde::{Deserialize, Serialize};

use super::ids::{load_plan, IdOptionArgs};
use super::layout::{PlanArgs, PlanDefaults};
use crate::config::{emit, merge_fields, set_threads, usage};

/// A small plan: 4x4 thumbnail, 8x8 high-res grid.
pub const ATTENTION_PLAN_DEFAULTS: PlanDefaults = PlanDefaults {
    input: "112x112",
    vit: "56",
    patch: 14,
    pre_text: 4,
    post_text: 4,
};

#[derive(Args, Deserialize, Default, Debug)]
#[serde(rename_all = "kebab-case")]
#[command(
    after_help = "Inline plan defaults: --input 112x112 --vit 56 --patch 14 --pre-text 4 --post-text 4"
)]
pub struct AttentionArgs {
    /// Layout JSON (bare plan or plan-layout output); overrides the inline plan flags
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: PlanArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub ids: IdOptionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scoring: ScoringArgs,
    /// Directory receiving the CSV and JSON outputs [default: .]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(rename_all = "kebab-case")]
pub struct ScoringArgs {
    /// Head dimension, even [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Frequency base theta [default: 1e4]
    #[arg(long)]
    pub theta: Option<f64>,
    /// Synthetic q/k population: constant:<c> | gaussian:<mean>:<seed> [default: constant:1.0]
    #[arg(long)]
    pub population: Option<String>,
    /// Row-softmax the score matrices [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    /// Skip the 1/sqrt(d) score scaling [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_scale: Option<bool>,
    /// Worker threads, 0 for one per core; output does not depend on it [default: 0]
    #[arg(long)]
    pub threads: Option<usize>,
}

impl AttentionArgs {
    pub fn merge(self, file: AttentionArgs) -> AttentionArgs {
        AttentionArgs {
            plan: self.plan.or(file.plan),
            layout: self.layout.merge(file.layout),
            ids: self.ids.merge(file.ids),
            scoring: merge_fields!(
                self.scoring,
                file.scoring,
                dim,
                theta,
                population,
                normalize,
                no_scale,
                threads
            ),
            out_dir: self.out_dir.or(file.out_dir),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    population: PopulationSpec,
    slots: usize,
    normalized: bool,
    gain: &'a AlignmentGainReport,
    id_align_weakly_improves: bool,
}

pub fn run(args: AttentionArgs) -> anyhow::Result<()> {
    let plan = match &args.plan {
        Some(path) => load_plan(path)?,
        None => args.layout.build(&ATTENTION_PLAN_DEFAULTS)?.1,
    };
    let s = &args.scoring;
    let config = RopeConfig::new(s.dim.unwrap_or(64), s.theta.unwrap_or(1e4))
        .map_err(|e| usage(e.to_string()))?;
    let population: PopulationSpec = s
        .population
        .as_deref()
        .unwrap_or("constant:1.0")
        .parse()
        .map_err(|e: rope_idalign::Error| usage(e.to_string()))?;
    let score_opts = ScoreOptions {
        scale: !s.no_scale.unwrap_or(false),
        normalize: s.normalize.unwrap_or(false),
    };
    let assign = args.ids.options()?;
    set_threads(s.threads)?;

    let dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let pop = TokenPopulation::from_spec(&plan, population, config.dim());
    let roles = plan.roles();

    for mode in [IdMode::Baseline, IdMode::IdAlign] {
        let map = assign_position_ids_with(&plan, mode, &assign)?;
        let distances = relative_distance_matrix(&map);
        let scores = attention_scores_with(&pop, &map, &config, score_opts, Execution::default())?;
        if score_opts.normalize {
            for r in 0..scores.matrix.rows {
                let sum: f64 = scores.matrix.row(r).iter().sum();
                anyhow::ensure!((sum - 1.0).abs() <= 1e-9, "softmax row {r} sums to {sum}");
            }
        }
        let mut buf = Vec::new();
        distances.write_csv(&roles, &mut buf)?;
        emit(
            Some(&dir.join(format!("distances_{}.csv", mode.as_str()))),
            &buf,
        )?;
        buf.clear();
        scores.matrix.write_csv(&roles, &mut buf)?;
        emit(
            Some(&dir.join(format!("scores_{}.csv", mode.as_str()))),
            &buf,
        )?;
    }

    let gain = alignment_gain_report_with(&plan, population, &config, &assign, score_opts)?;
    let summary = Summary {
        population,
        slots: plan.len(),
        normalized: score_opts.normalize,
        id_align_weakly_improves: gain.id_align_weakly_improves(),
        gain: &gain,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    emit(Some(&dir.join("gain_report.json")), json.as_bytes())?;
    emit(None::<&Path>, json.as_bytes())
}
