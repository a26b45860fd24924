use std::path::PathBuf;

use clap::Args;
use rope_idalign::layout::{
    build_layout_with, candidate_set, select_resolution_with, token_counts, LayoutPlan,
    LayoutRequest, Resolution, SelectionRule, TokenCounts,
};
use serde::{Deserialize, Serialize};

use crate::config::{emit, merge_fields, usage};

/// Flags describing one single-image layout.
#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct PlanArgs {
    /// Input image size, HxW
    #[arg(long)]
    pub input: Option<String>,
    /// Candidate resolutions: default (family built from --vit) | 336 | 384 | comma list of HxW [default: default]
    #[arg(long)]
    pub candidates: Option<String>,
    /// Vision encoder input size, HxW or a single side
    #[arg(long)]
    pub vit: Option<String>,
    /// Patch size in pixels
    #[arg(long)]
    pub patch: Option<u32>,
    /// Text tokens before the image
    #[arg(long)]
    pub pre_text: Option<usize>,
    /// Text tokens after the image
    #[arg(long)]
    pub post_text: Option<usize>,
    /// One new-line token after each high-resolution row [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub row_separators: Option<bool>,
    /// Put the thumbnail after the high-resolution grid [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub thumbnail_last: Option<bool>,
    /// Resolution scoring: content-area | native-capped [default: content-area]
    #[arg(long)]
    pub selection: Option<String>,
}

/// Per-command fallbacks for [`PlanArgs`].
pub struct PlanDefaults {
    pub input: &'static str,
    pub vit: &'static str,
    pub patch: u32,
    pub pre_text: usize,
    pub post_text: usize,
}

pub const PLAN_DEFAULTS: PlanDefaults = PlanDefaults {
    input: "672x672",
    vit: "336",
    patch: 14,
    pre_text: 0,
    post_text: 0,
};

impl PlanArgs {
    pub fn merge(self, file: PlanArgs) -> PlanArgs {
        merge_fields!(
            self,
            file,
            input,
            candidates,
            vit,
            patch,
            pre_text,
            post_text,
            row_separators,
            thumbnail_last,
            selection
        )
    }

    pub fn request(&self, defaults: &PlanDefaults) -> anyhow::Result<LayoutRequest> {
        let parse = |flag: &str, s: &str| -> anyhow::Result<Resolution> {
            s.parse().map_err(|e| usage(format!("--{flag}: {e}")))
        };
        let input = parse("input", self.input.as_deref().unwrap_or(defaults.input))?;
        let vit = parse("vit", self.vit.as_deref().unwrap_or(defaults.vit))?;
        let candidates = match self.candidates.as_deref().unwrap_or("default") {
            "default" => candidate_set(vit),
            "336" => candidate_set(Resolution::square(336)?),
            "384" => candidate_set(Resolution::square(384)?),
            list => list
                .split(',')
                .map(|s| parse("candidates", s))
                .collect::<anyhow::Result<Vec<_>>>()?,
        };
        let rule = match self.selection.as_deref().unwrap_or("content-area") {
            "content-area" => SelectionRule::ContentArea,
            "native-capped" => SelectionRule::NativeCapped,
            other => return Err(usage(format!("unknown --selection {other:?}"))),
        };
        Ok(LayoutRequest {
            pre_text: self.pre_text.unwrap_or(defaults.pre_text),
            input,
            candidates,
            vit_resolution: vit,
            patch_size: self.patch.unwrap_or(defaults.patch),
            post_text: self.post_text.unwrap_or(defaults.post_text),
            row_separators: self.row_separators.unwrap_or(true),
            thumbnail_first: !self.thumbnail_last.unwrap_or(false),
            rule,
        })
    }

    pub fn build(&self, defaults: &PlanDefaults) -> anyhow::Result<(LayoutRequest, LayoutPlan)> {
        let req = self.request(defaults)?;
        let plan = build_layout_with(&req).map_err(|e| usage(e.to_string()))?;
        Ok((req, plan))
    }
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(rename_all = "kebab-case")]
#[command(
    after_help = "Plan defaults: --input 672x672 --vit 336 --patch 14 --pre-text 0 --post-text 0"
)]
pub struct LayoutArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub plan: PlanArgs,
    /// Output JSON path, "-" for stdout [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl LayoutArgs {
    pub fn merge(self, file: LayoutArgs) -> LayoutArgs {
        LayoutArgs {
            plan: self.plan.merge(file.plan),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Serialize)]
pub struct LayoutReport {
    pub input: Resolution,
    pub selected: Resolution,
    pub plan: LayoutPlan,
    pub token_counts: TokenCounts,
}

pub fn run(args: LayoutArgs) -> anyhow::Result<()> {
    let (req, plan) = args.plan.build(&PLAN_DEFAULTS)?;
    let selected = select_resolution_with(req.input, &req.candidates, req.rule)?;
    let report = LayoutReport {
        input: req.input,
        selected,
        token_counts: token_counts(&plan),
        plan,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(args.out.as_deref(), json.as_bytes())
}
