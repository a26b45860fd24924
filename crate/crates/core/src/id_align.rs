//! Position-ID assignment for thumbnail plus high-resolution image tokens.
//!
//! Baseline assignment gives every slot the next integer. ID-Align keeps
//! sequential IDs for text and thumbnail tokens, and gives each
//! high-resolution token the ID of the thumbnail token covering the same
//! image region. The thumbnail's ID grid is resized to the high-resolution
//! grid shape and rounded to obtain that correspondence. Text after the
//! image resumes from a running `max_pid`, which high-resolution tokens only
//! raise to `max(max_pid, inherited_id + 1)`.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::layout::{GridShape, LayoutPlan, Segment, Slot};
use crate::{Error, Execution, Result};

/// Thumbnail IDs in raster order, `base .. base + rows * cols`.
pub fn thumbnail_id_grid(shape: GridShape, base: u64) -> Vec<Vec<u64>> {
    (0..shape.rows)
        .map(|r| {
            (0..shape.cols)
                .map(|c| base + (r * shape.cols + c) as u64)
                .collect()
        })
        .collect()
}

/// How the thumbnail ID grid is resized onto the high-resolution grid.
///
/// Bilinear variants interpolate the (row, column) coordinate channels of the
/// thumbnail grid and round each channel before forming the ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Half-pixel sampling: target cell centres are mapped onto source cell
    /// centres and clamped to the grid.
    #[default]
    Bilinear,
    /// Corner-aligned sampling: the first and last target cells land exactly
    /// on the first and last source cells. Cells near the edges of a stretched
    /// axis can inherit a neighbour that only touches them at a boundary.
    BilinearCornerAligned,
    /// Source cell containing each target cell centre.
    Nearest,
    /// Half-pixel bilinear resize of the flattened ID values themselves,
    /// rounded once. A rounded flat ID can wrap into another thumbnail row.
    BilinearFlatId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfEven,
    Truncate,
}

impl Rounding {
    fn apply(self, v: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
            Rounding::HalfEven => v.round_ties_even(),
            Rounding::Truncate => v.trunc(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MappingOptions {
    pub interpolation: Interpolation,
    pub rounding: Rounding,
}

/// Thumbnail ID inherited by each high-resolution cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridMapping {
    pub shape: GridShape,
    pub thumb: GridShape,
    pub base: u64,
    ids: Vec<u64>,
}

impl GridMapping {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.ids[row * self.shape.cols + col]
    }

    /// Thumbnail cell whose ID was inherited by high-res cell `(row, col)`.
    pub fn thumb_cell(&self, row: usize, col: usize) -> (usize, usize) {
        let offset = (self.get(row, col) - self.base) as usize;
        (offset / self.thumb.cols, offset % self.thumb.cols)
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.ids.chunks(self.shape.cols)
    }

    /// One line per grid row, IDs separated by commas.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Corner-aligned sample coordinate of target index `i` in a source axis.
fn corner_aligned(i: usize, target: usize, source: usize) -> f64 {
    if target <= 1 || source <= 1 {
        0.0
    } else {
        i as f64 * (source - 1) as f64 / (target - 1) as f64
    }
}

/// Half-pixel sample coordinate of target index `i`, clamped to the source axis.
fn half_pixel(i: usize, target: usize, source: usize) -> f64 {
    ((i as f64 + 0.5) * source as f64 / target as f64 - 0.5).clamp(0.0, (source - 1) as f64)
}

/// Bilinear sample of a row-major `rows x cols` field at fractional `(y, x)`.
fn bilinear(field: &[f64], rows: usize, cols: usize, y: f64, x: f64) -> f64 {
    let y0 = (y.floor() as usize).min(rows - 1);
    let x0 = (x.floor() as usize).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let x1 = (x0 + 1).min(cols - 1);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| field[r * cols + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn map_highres_ids(thumb: GridShape, high: GridShape, base: u64) -> GridMapping {
    map_highres_ids_with(thumb, high, base, MappingOptions::default())
}

pub fn map_highres_ids_with(
    thumb: GridShape,
    high: GridShape,
    base: u64,
    opts: MappingOptions,
) -> GridMapping {
    let (h0, w0) = (thumb.rows, thumb.cols);
    let (h1, w1) = (high.rows, high.cols);
    let span = (h0 * w0) as u64;
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);

    let coordinate = |i: usize, target: usize, source: usize| match opts.interpolation {
        Interpolation::BilinearCornerAligned => corner_aligned(i, target, source),
        _ => half_pixel(i, target, source),
    };

    let mut ids = Vec::with_capacity(h1 * w1);
    match opts.interpolation {
        Interpolation::Bilinear | Interpolation::BilinearCornerAligned => {
            let row_field: Vec<f64> = (0..h0 * w0).map(|i| (i / w0) as f64).collect();
            let col_field: Vec<f64> = (0..h0 * w0).map(|i| (i % w0) as f64).collect();
            for i in 0..h1 {
                let y = coordinate(i, h1, h0);
                for j in 0..w1 {
                    let x = coordinate(j, w1, w0);
                    let r = clamp(opts.rounding.apply(bilinear(&row_field, h0, w0, y, x)), h0);
                    let c = clamp(opts.rounding.apply(bilinear(&col_field, h0, w0, y, x)), w0);
                    ids.push(base + (r * w0 + c) as u64);
                }
            }
        }
        Interpolation::Nearest => {
            for i in 0..h1 {
                let r = ((2 * i + 1) * h0) / (2 * h1);
                for j in 0..w1 {
                    let c = ((2 * j + 1) * w0) / (2 * w1);
                    ids.push(base + (r * w0 + c) as u64);
                }
            }
        }
        Interpolation::BilinearFlatId => {
            let field: Vec<f64> = (0..h0 * w0).map(|i| i as f64).collect();
            for i in 0..h1 {
                let y = coordinate(i, h1, h0);
                for j in 0..w1 {
                    let x = coordinate(j, w1, w0);
                    let v = opts.rounding.apply(bilinear(&field, h0, w0, y, x));
                    ids.push(base + (v.max(0.0) as u64).min(span - 1));
                }
            }
        }
    }
    GridMapping {
        shape: high,
        thumb,
        base,
        ids,
    }
}

/// A high-resolution cell and a thumbnail cell whose image regions overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CorrespondencePair {
    pub highres_cell: (usize, usize),
    pub thumb_cell: (usize, usize),
}

/// Cell `i` of `n` and cell `r` of `m` on the unit interval overlap with
/// positive length: `i/n < (r+1)/m` and `r/m < (i+1)/n`.
fn intervals_overlap(i: usize, n: usize, r: usize, m: usize) -> bool {
    i * m < (r + 1) * n && r * n < (i + 1) * m
}

/// Every overlapping (high-res cell, thumbnail cell) pair, by checking all
/// rectangle pairs on the unit square.
pub fn correspondence_oracle(thumb: GridShape, high: GridShape) -> BTreeSet<CorrespondencePair> {
    correspondence_oracle_with(thumb, high, Execution::default())
}

pub fn correspondence_oracle_with(
    thumb: GridShape,
    high: GridShape,
    exec: Execution,
) -> BTreeSet<CorrespondencePair> {
    exec.map_range(high.rows, |hr| {
        let mut pairs = Vec::new();
        for hc in 0..high.cols {
            for tr in 0..thumb.rows {
                for tc in 0..thumb.cols {
                    if intervals_overlap(hr, high.rows, tr, thumb.rows)
                        && intervals_overlap(hc, high.cols, tc, thumb.cols)
                    {
                        pairs.push(CorrespondencePair {
                            highres_cell: (hr, hc),
                            thumb_cell: (tr, tc),
                        });
                    }
                }
            }
        }
        pairs
    })
    .into_iter()
    .flatten()
    .collect()
}

/// High-res cells whose inherited thumbnail cell is not in `oracle`.
pub fn soundness_violations(
    mapping: &GridMapping,
    oracle: &BTreeSet<CorrespondencePair>,
) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for r in 0..mapping.shape.rows {
        for c in 0..mapping.shape.cols {
            let pair = CorrespondencePair {
                highres_cell: (r, c),
                thumb_cell: mapping.thumb_cell(r, c),
            };
            if !oracle.contains(&pair) {
                bad.push((r, c));
            }
        }
    }
    bad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMode {
    Baseline,
    IdAlign,
}

impl IdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IdMode::Baseline => "baseline",
            IdMode::IdAlign => "id_align",
        }
    }
}

/// IDs of the new-line tokens closing high-resolution rows under ID-Align.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorPolicy {
    /// Same ID as the last token of the row it closes.
    #[default]
    InheritRowEnd,
    /// Fresh sequential IDs handed out once the high-resolution grid is done.
    SequentialAfterImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssignOptions {
    pub separator_policy: SeparatorPolicy,
    pub mapping: MappingOptions,
}

/// One position ID per plan slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionIdMap {
    pub ids: Vec<u64>,
    /// Next ID a following token would receive.
    pub max_pid: u64,
    pub mode: IdMode,
}

impl PositionIdMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn assign_position_ids(
    plan: &LayoutPlan,
    mode: IdMode,
    separator_policy: SeparatorPolicy,
) -> Result<PositionIdMap> {
    assign_position_ids_with(
        plan,
        mode,
        &AssignOptions {
            separator_policy,
            ..AssignOptions::default()
        },
    )
}

pub fn assign_position_ids_with(
    plan: &LayoutPlan,
    mode: IdMode,
    opts: &AssignOptions,
) -> Result<PositionIdMap> {
    match mode {
        IdMode::Baseline => {
            let n = plan.len() as u64;
            Ok(PositionIdMap {
                ids: (0..n).collect(),
                max_pid: n,
                mode,
            })
        }
        IdMode::IdAlign => assign_id_align(plan, opts),
    }
}

fn assign_id_align(plan: &LayoutPlan, opts: &AssignOptions) -> Result<PositionIdMap> {
    let thumb = plan.thumbnail();
    if plan.highres().is_some() && thumb.is_none() {
        return Err(Error::MissingThumbnail);
    }
    let mut ids = Vec::with_capacity(plan.len());
    let mut max_pid = 0u64;
    // ID of the first thumbnail token, fixed when the first image segment starts.
    let mut base: Option<u64> = None;

    for seg in plan.segments() {
        match *seg {
            Segment::Text { len } | Segment::Separator { count: len } => {
                ids.extend(max_pid..max_pid + len as u64);
                max_pid += len as u64;
            }
            Segment::Thumb { rows, cols } => {
                let b = *base.get_or_insert(max_pid);
                ids.extend(b..b + (rows * cols) as u64);
                max_pid = max_pid.max(b + (rows * cols) as u64);
            }
            Segment::HighRes {
                rows,
                cols,
                row_separator,
            } => {
                let b = *base.get_or_insert(max_pid);
                let thumb = thumb.ok_or(Error::MissingThumbnail)?;
                let mapping =
                    map_highres_ids_with(thumb, GridShape { rows, cols }, b, opts.mapping);
                let mut pending = Vec::new();
                for row in mapping.rows() {
                    for &id in row {
                        ids.push(id);
                        max_pid = max_pid.max(id + 1);
                    }
                    if row_separator {
                        match opts.separator_policy {
                            SeparatorPolicy::InheritRowEnd => ids.push(row[row.len() - 1]),
                            SeparatorPolicy::SequentialAfterImage => {
                                pending.push(ids.len());
                                ids.push(0);
                            }
                        }
                    }
                }
                for slot in pending {
                    ids[slot] = max_pid;
                    max_pid += 1;
                }
            }
        }
    }
    Ok(PositionIdMap {
        ids,
        max_pid,
        mode: IdMode::IdAlign,
    })
}

/// Spread of position IDs across image tokens under both modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdSpanReport {
    pub baseline_span: u64,
    pub id_align_span: u64,
    /// `baseline_span / id_align_span`; absent when the aligned span is zero.
    pub ratio: Option<f64>,
}

/// `max - min` of the IDs held by thumbnail and high-res slots.
pub fn image_id_span(plan: &LayoutPlan, map: &PositionIdMap) -> u64 {
    let image_ids = plan
        .slots()
        .iter()
        .zip(&map.ids)
        .filter(|(s, _)| matches!(s, Slot::Thumb { .. } | Slot::Highres { .. }))
        .map(|(_, &id)| id)
        .collect::<Vec<_>>();
    match (image_ids.iter().min(), image_ids.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0,
    }
}

pub fn id_span_report(plan: &LayoutPlan) -> Result<IdSpanReport> {
    id_span_report_with(plan, &AssignOptions::default())
}

pub fn id_span_report_with(plan: &LayoutPlan, opts: &AssignOptions) -> Result<IdSpanReport> {
    let baseline = assign_position_ids_with(plan, IdMode::Baseline, opts)?;
    let aligned = assign_position_ids_with(plan, IdMode::IdAlign, opts)?;
    let baseline_span = image_id_span(plan, &baseline);
    let id_align_span = image_id_span(plan, &aligned);
    Ok(IdSpanReport {
        baseline_span,
        id_align_span,
        ratio: (id_align_span > 0).then(|| baseline_span as f64 / id_align_span as f64),
    })
}
