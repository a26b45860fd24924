use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rope_idalign::id_align::{
    assign_position_ids_with, id_span_report_with, map_highres_ids_with, AssignOptions, IdMode,
    IdSpanReport, Interpolation, MappingOptions, PositionIdMap, Rounding, SeparatorPolicy,
};
use rope_idalign::layout::LayoutPlan;
use rope_idalign::Error;
use serde::{Deserialize, Serialize};

use super::layout::{PlanArgs, PLAN_DEFAULTS};
use crate::config::{emit, merge_fields, usage};

#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct IdOptionArgs {
    /// New-line token IDs under ID-Align: inherit-row-end | sequential-after-image [default: inherit-row-end]
    #[arg(long)]
    pub separator_policy: Option<String>,
    /// Thumbnail-to-high-res resize: bilinear | bilinear-corner-aligned | nearest | bilinear-flat-id [default: bilinear]
    #[arg(long)]
    pub interpolation: Option<String>,
    /// Rounding of interpolated coordinates: half-away | half-even | truncate [default: half-away]
    #[arg(long)]
    pub rounding: Option<String>,
}

impl IdOptionArgs {
    pub fn merge(self, file: IdOptionArgs) -> IdOptionArgs {
        merge_fields!(self, file, separator_policy, interpolation, rounding)
    }

    pub fn options(&self) -> anyhow::Result<AssignOptions> {
        let separator_policy = match self
            .separator_policy
            .as_deref()
            .unwrap_or("inherit-row-end")
        {
            "inherit-row-end" => SeparatorPolicy::InheritRowEnd,
            "sequential-after-image" => SeparatorPolicy::SequentialAfterImage,
            other => return Err(usage(format!("unknown --separator-policy {other:?}"))),
        };
        let interpolation = match self.interpolation.as_deref().unwrap_or("bilinear") {
            "bilinear" => Interpolation::Bilinear,
            "bilinear-corner-aligned" => Interpolation::BilinearCornerAligned,
            "nearest" => Interpolation::Nearest,
            "bilinear-flat-id" => Interpolation::BilinearFlatId,
            other => return Err(usage(format!("unknown --interpolation {other:?}"))),
        };
        let rounding = match self.rounding.as_deref().unwrap_or("half-away") {
            "half-away" => Rounding::HalfAwayFromZero,
            "half-even" => Rounding::HalfEven,
            "truncate" => Rounding::Truncate,
            other => return Err(usage(format!("unknown --rounding {other:?}"))),
        };
        Ok(AssignOptions {
            separator_policy,
            mapping: MappingOptions {
                interpolation,
                rounding,
            },
        })
    }
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(rename_all = "kebab-case")]
#[command(
    after_help = "Inline plan defaults: --input 672x672 --vit 336 --patch 14 --pre-text 0 --post-text 0"
)]
pub struct AssignArgs {
    /// Layout JSON (bare plan or plan-layout output); overrides the inline plan flags
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: PlanArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub ids: IdOptionArgs,
    /// baseline | id-align | both [default: both]
    #[arg(long)]
    pub mode: Option<String>,
    /// Write the high-res to thumbnail ID mapping as CSV here
    #[arg(long)]
    pub mapping_csv: Option<PathBuf>,
    /// Output JSON path, "-" for stdout [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AssignArgs {
    pub fn merge(self, file: AssignArgs) -> AssignArgs {
        AssignArgs {
            plan: self.plan.or(file.plan),
            layout: self.layout.merge(file.layout),
            ids: self.ids.merge(file.ids),
            mode: self.mode.or(file.mode),
            mapping_csv: self.mapping_csv.or(file.mapping_csv),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Wrapped { plan: LayoutPlan },
    Bare(LayoutPlan),
}

pub fn load_plan(path: &std::path::Path) -> anyhow::Result<LayoutPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PlanFile = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: not a layout plan: {e}", path.display())))?;
    Ok(match file {
        PlanFile::Wrapped { plan } | PlanFile::Bare(plan) => plan,
    })
}

#[derive(Serialize)]
struct AssignReport {
    maps: Vec<PositionIdMap>,
    span_report: IdSpanReport,
}

pub fn run(args: AssignArgs) -> anyhow::Result<()> {
    let plan = match &args.plan {
        Some(path) => load_plan(path)?,
        None => args.layout.build(&PLAN_DEFAULTS)?.1,
    };
    let opts = args.ids.options()?;
    let modes = match args.mode.as_deref().unwrap_or("both") {
        "baseline" => vec![IdMode::Baseline],
        "id-align" | "id_align" => vec![IdMode::IdAlign],
        "both" => vec![IdMode::Baseline, IdMode::IdAlign],
        other => return Err(usage(format!("unknown --mode {other:?}"))),
    };

    let id_error = |e: Error| match e {
        Error::MissingThumbnail => usage(e.to_string()),
        e => e.into(),
    };
    let maps = modes
        .iter()
        .map(|&mode| assign_position_ids_with(&plan, mode, &opts).map_err(id_error))
        .collect::<anyhow::Result<Vec<_>>>()?;
    for m in &maps {
        anyhow::ensure!(
            m.ids.len() == plan.len(),
            "assigned {} IDs for {} slots",
            m.ids.len(),
            plan.len()
        );
    }
    let span_report = if plan.highres().is_some() && plan.thumbnail().is_none() {
        // Aligned spans are undefined; report the baseline span only.
        let baseline = &maps[0];
        IdSpanReport {
            baseline_span: rope_idalign::id_align::image_id_span(&plan, baseline),
            id_align_span: 0,
            ratio: None,
        }
    } else {
        id_span_report_with(&plan, &opts)?
    };

    if let Some(path) = &args.mapping_csv {
        let (Some(thumb), Some(high)) = (plan.thumbnail(), plan.highres()) else {
            return Err(usage(
                "--mapping-csv needs a plan with thumbnail and high-res grids",
            ));
        };
        let base = assign_position_ids_with(&plan, IdMode::IdAlign, &opts)?;
        let first_thumb = plan
            .slots()
            .iter()
            .position(|s| matches!(s, rope_idalign::layout::Slot::Thumb { .. }))
            .expect("plan has a thumbnail");
        let mapping = map_highres_ids_with(thumb, high, base.ids[first_thumb], opts.mapping);
        let mut buf = Vec::new();
        mapping.write_csv(&mut buf)?;
        emit(Some(path), &buf)?;
    }

    let mut json = serde_json::to_string_pretty(&AssignReport { maps, span_report })?;
    json.push('\n');
    emit(args.out.as_deref(), json.as_bytes())
}
