//! Geometry of the dynamic high-resolution pipeline.
//!
//! An input image is matched to one of a fixed set of candidate resolutions,
//! scaled into it with its aspect ratio preserved and padded to fill the
//! remainder. The padded image is encoded on a patch grid and the rows and
//! columns that only cover padding are dropped. A separately resized
//! thumbnail is encoded on the vision encoder's native grid. The language
//! model sees
//!
//! ```text
//! text | thumbnail grid | high-res grid (+ one separator per row) | text
//! ```
//!
//! Per-crop encoding followed by rearrangement yields the same final
//! high-resolution grid, so plans describe that grid directly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Image size in pixels, height first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: u32,
    pub width: u32,
}

impl Resolution {
    pub fn new(height: u32, width: u32) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidResolution { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn square(side: u32) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn area(&self) -> u64 {
        self.height as u64 * self.width as u64
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Parses `HxW`, or a single number for a square.
impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParseResolution(s.to_string());
        let t = s.trim();
        let (h, w) = match t.split_once(['x', 'X']) {
            Some((h, w)) => (h, w),
            None => (t, t),
        };
        let h: u32 = h.trim().parse().map_err(|_| bad())?;
        let w: u32 = w.trim().parse().map_err(|_| bad())?;
        Resolution::new(h, w).map_err(|_| bad())
    }
}

/// The five-entry candidate family built from a vision encoder size `v`:
/// `2v x 2v`, `v x 2v`, `2v x v`, `3v x v`, `v x 3v`.
pub fn candidate_set(vit: Resolution) -> Vec<Resolution> {
    let (h, w) = (vit.height, vit.width);
    [
        (2 * h, 2 * w),
        (h, 2 * w),
        (2 * h, w),
        (3 * h, w),
        (h, 3 * w),
    ]
    .into_iter()
    .map(|(height, width)| Resolution { height, width })
    .collect()
}

/// Scoring used by [`select_resolution_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Maximise the area of the scaled-to-fit content, then minimise padding.
    #[default]
    ContentArea,
    /// As `ContentArea`, but the content area is capped at the input's own
    /// pixel count, so upscaling earns nothing.
    NativeCapped,
}

/// Effective content area and wasted (padded) area of `candidate` for `input`.
pub fn selection_score(
    input: Resolution,
    candidate: Resolution,
    rule: SelectionRule,
) -> (u64, u64) {
    let placement = fit_with_padding(input, candidate);
    let content = placement.scaled.area();
    let effective = match rule {
        SelectionRule::ContentArea => content,
        SelectionRule::NativeCapped => content.min(input.area()),
    };
    (effective, candidate.area() - effective)
}

pub fn select_resolution(input: Resolution, candidates: &[Resolution]) -> Result<Resolution> {
    select_resolution_with(input, candidates, SelectionRule::default())
}

/// Best candidate under `rule`. Ties on both scores keep the earliest entry.
pub fn select_resolution_with(
    input: Resolution,
    candidates: &[Resolution],
    rule: SelectionRule,
) -> Result<Resolution> {
    let mut best: Option<(Resolution, (u64, u64))> = None;
    for &c in candidates {
        let score = selection_score(input, c, rule);
        let better = match best {
            None => true,
            Some((_, (eff, waste))) => score.0 > eff || (score.0 == eff && score.1 < waste),
        };
        if better {
            best = Some((c, score));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::NoCandidates)
}

/// Where the aspect-preserving resize of an image lands inside its target canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedPlacement {
    pub target: Resolution,
    pub scaled: Resolution,
    pub offset_top: u32,
    pub offset_left: u32,
}

/// `num * mul / den` rounded to nearest, halves rounding up.
fn scale_round(num: u32, mul: u32, den: u32) -> u32 {
    let (num, mul, den) = (num as u64, mul as u64, den as u64);
    ((2 * num * mul + den) / (2 * den)) as u32
}

/// Scales `input` by `min(target.h / input.h, target.w / input.w)`, rounds to
/// whole pixels and centres it with floor offsets.
pub fn fit_with_padding(input: Resolution, target: Resolution) -> PaddedPlacement {
    // Compare target.h / input.h against target.w / input.w without division.
    let height_binds =
        target.height as u64 * input.width as u64 <= target.width as u64 * input.height as u64;
    let (h, w) = if height_binds {
        (
            target.height,
            scale_round(input.width, target.height, input.height),
        )
    } else {
        (
            scale_round(input.height, target.width, input.width),
            target.width,
        )
    };
    let scaled = Resolution {
        height: h.clamp(1, target.height),
        width: w.clamp(1, target.width),
    };
    PaddedPlacement {
        target,
        scaled,
        offset_top: (target.height - scaled.height) / 2,
        offset_left: (target.width - scaled.width) / 2,
    }
}

/// Patch-grid size in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

fn patch_grid(res: Resolution, patch: u32) -> Result<GridShape> {
    if patch == 0 {
        return Err(Error::InvalidPlan("patch size must be positive".into()));
    }
    for (axis, size) in [("height", res.height), ("width", res.width)] {
        if size % patch != 0 {
            return Err(Error::Indivisible { axis, size, patch });
        }
    }
    GridShape::new((res.height / patch) as usize, (res.width / patch) as usize)
}

/// Patches along one axis whose extent overlaps `[start, start + len)`.
fn surviving(cells: u32, patch: u32, start: u32, len: u32) -> usize {
    let end = start as u64 + len as u64;
    (0..cells as u64)
        .filter(|&c| c * (patch as u64) < end && (c + 1) * patch as u64 > start as u64)
        .count()
}

/// Feature grid left after dropping patch rows and columns that cover only padding.
pub fn unpad_grid(placement: &PaddedPlacement, patch_size: u32) -> Result<GridShape> {
    let full = patch_grid(placement.target, patch_size)?;
    let rows = surviving(
        full.rows as u32,
        patch_size,
        placement.offset_top,
        placement.scaled.height,
    );
    let cols = surviving(
        full.cols as u32,
        patch_size,
        placement.offset_left,
        placement.scaled.width,
    );
    GridShape::new(rows, cols)
}

/// One run of tokens in the language-model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Segment {
    #[serde(rename = "text")]
    Text { len: usize },
    #[serde(rename = "thumb")]
    Thumb { rows: usize, cols: usize },
    /// High-resolution grid; with `row_separator` each row is followed by one
    /// new-line token.
    #[serde(rename = "highres")]
    HighRes {
        rows: usize,
        cols: usize,
        row_separator: bool,
    },
    #[serde(rename = "sep")]
    Separator { count: usize },
}

impl Segment {
    pub fn thumb(grid: GridShape) -> Self {
        Segment::Thumb {
            rows: grid.rows,
            cols: grid.cols,
        }
    }

    pub fn highres(grid: GridShape, row_separator: bool) -> Self {
        Segment::HighRes {
            rows: grid.rows,
            cols: grid.cols,
            row_separator,
        }
    }

    /// Number of sequence slots.
    pub fn len(&self) -> usize {
        match *self {
            Segment::Text { len } => len,
            Segment::Thumb { rows, cols } => rows * cols,
            Segment::HighRes {
                rows,
                cols,
                row_separator,
            } => rows * cols + if row_separator { rows } else { 0 },
            Segment::Separator { count } => count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> Option<GridShape> {
        match *self {
            Segment::Thumb { rows, cols } | Segment::HighRes { rows, cols, .. } => {
                Some(GridShape { rows, cols })
            }
            _ => None,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Segment::Thumb { .. } | Segment::HighRes { .. })
    }
}

/// Kind of token occupying a sequence slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    Text,
    Thumb,
    Highres,
    Separator,
}

impl SlotRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlotRole::Text => "text",
            SlotRole::Thumb => "thumb",
            SlotRole::Highres => "highres",
            SlotRole::Separator => "separator",
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, SlotRole::Thumb | SlotRole::Highres)
    }
}

/// A single sequence slot of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Text,
    Thumb {
        row: usize,
        col: usize,
    },
    Highres {
        row: usize,
        col: usize,
    },
    /// New-line token closing high-res row `row`.
    RowSeparator {
        row: usize,
    },
    Separator,
}

impl Slot {
    pub fn role(&self) -> SlotRole {
        match self {
            Slot::Text => SlotRole::Text,
            Slot::Thumb { .. } => SlotRole::Thumb,
            Slot::Highres { .. } => SlotRole::Highres,
            Slot::RowSeparator { .. } | Slot::Separator => SlotRole::Separator,
        }
    }
}

/// Ordered token segments for a single image plus surrounding text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan")]
pub struct LayoutPlan {
    segments: Vec<Segment>,
    patch_size: u32,
}

#[derive(Deserialize)]
struct RawPlan {
    segments: Vec<Segment>,
    patch_size: u32,
}

impl TryFrom<RawPlan> for LayoutPlan {
    type Error = Error;

    fn try_from(raw: RawPlan) -> Result<Self> {
        LayoutPlan::new(raw.segments, raw.patch_size)
    }
}

impl LayoutPlan {
    pub fn new(segments: Vec<Segment>, patch_size: u32) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidPlan("patch size must be positive".into()));
        }
        let mut thumbs = 0;
        let mut highres = 0;
        for (i, seg) in segments.iter().enumerate() {
            let positive = match *seg {
                Segment::Thumb { rows, cols } | Segment::HighRes { rows, cols, .. } => {
                    rows > 0 && cols > 0
                }
                _ => !seg.is_empty(),
            };
            if !positive {
                return Err(Error::InvalidPlan(format!("segment {i} is empty")));
            }
            match seg {
                Segment::Thumb { .. } => thumbs += 1,
                Segment::HighRes { .. } => highres += 1,
                _ => {}
            }
        }
        if thumbs > 1 || highres > 1 {
            return Err(Error::InvalidPlan(
                "a plan holds at most one thumbnail grid and one high-resolution grid".into(),
            ));
        }
        Ok(Self {
            segments,
            patch_size,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn thumbnail(&self) -> Option<GridShape> {
        self.segments.iter().find_map(|s| match s {
            Segment::Thumb { .. } => s.grid(),
            _ => None,
        })
    }

    pub fn highres(&self) -> Option<GridShape> {
        self.segments.iter().find_map(|s| match s {
            Segment::HighRes { .. } => s.grid(),
            _ => None,
        })
    }

    /// Every slot in sequence order.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.len());
        for seg in &self.segments {
            match *seg {
                Segment::Text { len } => out.extend(std::iter::repeat_n(Slot::Text, len)),
                Segment::Separator { count } => {
                    out.extend(std::iter::repeat_n(Slot::Separator, count))
                }
                Segment::Thumb { rows, cols } => {
                    for row in 0..rows {
                        out.extend((0..cols).map(|col| Slot::Thumb { row, col }));
                    }
                }
                Segment::HighRes {
                    rows,
                    cols,
                    row_separator,
                } => {
                    for row in 0..rows {
                        out.extend((0..cols).map(|col| Slot::Highres { row, col }));
                        if row_separator {
                            out.push(Slot::RowSeparator { row });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn roles(&self) -> Vec<SlotRole> {
        self.slots().iter().map(Slot::role).collect()
    }
}

/// Inputs of [`build_layout_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRequest {
    pub pre_text: usize,
    pub input: Resolution,
    pub candidates: Vec<Resolution>,
    pub vit_resolution: Resolution,
    pub patch_size: u32,
    pub post_text: usize,
    pub row_separators: bool,
    /// Place the thumbnail before the high-resolution grid.
    pub thumbnail_first: bool,
    pub rule: SelectionRule,
}

impl LayoutRequest {
    /// Request with the standard candidate family for `vit_resolution`.
    pub fn new(input: Resolution, vit_resolution: Resolution, patch_size: u32) -> Self {
        Self {
            pre_text: 0,
            input,
            candidates: candidate_set(vit_resolution),
            vit_resolution,
            patch_size,
            post_text: 0,
            row_separators: true,
            thumbnail_first: true,
            rule: SelectionRule::default(),
        }
    }
}

pub fn build_layout(
    pre_text: usize,
    input: Resolution,
    candidates: &[Resolution],
    vit_resolution: Resolution,
    patch_size: u32,
    post_text: usize,
    row_separators: bool,
) -> Result<LayoutPlan> {
    build_layout_with(&LayoutRequest {
        pre_text,
        input,
        candidates: candidates.to_vec(),
        vit_resolution,
        patch_size,
        post_text,
        row_separators,
        thumbnail_first: true,
        rule: SelectionRule::default(),
    })
}

pub fn build_layout_with(req: &LayoutRequest) -> Result<LayoutPlan> {
    let thumb = patch_grid(req.vit_resolution, req.patch_size)?;
    let target = select_resolution_with(req.input, &req.candidates, req.rule)?;
    let placement = fit_with_padding(req.input, target);
    let high = unpad_grid(&placement, req.patch_size)?;

    let mut segments = Vec::with_capacity(4);
    if req.pre_text > 0 {
        segments.push(Segment::Text { len: req.pre_text });
    }
    let image = [
        Segment::thumb(thumb),
        Segment::highres(high, req.row_separators),
    ];
    if req.thumbnail_first {
        segments.extend(image);
    } else {
        segments.extend(image.into_iter().rev());
    }
    if req.post_text > 0 {
        segments.push(Segment::Text { len: req.post_text });
    }
    LayoutPlan::new(segments, req.patch_size)
}

/// Slot totals per token kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub total: usize,
    pub text: usize,
    pub thumbnail: usize,
    pub highres: usize,
    pub separators: usize,
    /// Thumbnail plus high-resolution tokens, separators excluded.
    pub image_tokens: usize,
    /// Span of position IDs consumed when every slot gets the next ID.
    pub id_span_baseline: usize,
}

pub fn token_counts(plan: &LayoutPlan) -> TokenCounts {
    let (mut text, mut thumbnail, mut highres, mut separators) = (0, 0, 0, 0);
    for seg in plan.segments() {
        match *seg {
            Segment::Text { len } => text += len,
            Segment::Thumb { rows, cols } => thumbnail += rows * cols,
            Segment::HighRes {
                rows,
                cols,
                row_separator,
            } => {
                highres += rows * cols;
                if row_separator {
                    separators += rows;
                }
            }
            Segment::Separator { count } => separators += count,
        }
    }
    let total = text + thumbnail + highres + separators;
    TokenCounts {
        total,
        text,
        thumbnail,
        highres,
        separators,
        image_tokens: thumbnail + highres,
        id_span_baseline: total,
    }
}
