//! Synthetic attention scores and ID-distance matrices over a layout.
//!
//! Query and key vectors come from simple generators rather than a trained
//! model, so the matrices here only reflect position-ID geometry.

use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::id_align::{
    assign_position_ids_with, correspondence_oracle, map_highres_ids_with, AssignOptions, IdMode,
    PositionIdMap,
};
use crate::layout::{LayoutPlan, Slot, SlotRole};
use crate::rng::stream_rng;
use crate::rope::{apply_rope, HeadVector, PositionId, RopeConfig};
use crate::{Error, Execution, Result};

/// Generator for per-slot query and key vectors.
///
/// Text forms: `constant:<c>` and `gaussian:<mean>:<seed>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// Every query and key entry equals `value`.
    Constant { value: f64 },
    /// Entries drawn independently from `N(mean, 1)`.
    Gaussian { mean: f64, seed: u64 },
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec::Constant { value: 1.0 }
    }
}

impl FromStr for PopulationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParsePopulation(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let finite = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(bad)
        };
        match parts.as_slice() {
            ["constant", v] => Ok(PopulationSpec::Constant { value: finite(v)? }),
            ["gaussian", m, seed] => Ok(PopulationSpec::Gaussian {
                mean: finite(m)?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Query and key vectors for each slot of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPopulation {
    queries: Vec<HeadVector>,
    keys: Vec<HeadVector>,
    roles: Vec<SlotRole>,
}

impl TokenPopulation {
    pub fn new(
        queries: Vec<HeadVector>,
        keys: Vec<HeadVector>,
        roles: Vec<SlotRole>,
    ) -> Result<Self> {
        if queries.len() != roles.len() || keys.len() != roles.len() {
            return Err(Error::PopulationMismatch {
                expected: roles.len(),
                actual: queries.len().min(keys.len()),
            });
        }
        let dim = queries.first().map(HeadVector::len).unwrap_or(0);
        for v in queries.iter().chain(&keys) {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        Ok(Self {
            queries,
            keys,
            roles,
        })
    }

    pub fn from_spec(plan: &LayoutPlan, spec: PopulationSpec, dim: usize) -> Self {
        let roles = plan.roles();
        let n = roles.len();
        let (queries, keys) = match spec {
            PopulationSpec::Constant { value } => (
                vec![HeadVector::filled(dim, value); n],
                vec![HeadVector::filled(dim, value); n],
            ),
            PopulationSpec::Gaussian { mean, seed } => {
                let draw = |stream| {
                    let mut rng = stream_rng(seed, stream);
                    (0..n)
                        .map(|_| {
                            let v = (0..dim)
                                .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
                                .collect();
                            HeadVector::new(v).expect("gaussian draws are finite")
                        })
                        .collect::<Vec<_>>()
                };
                (draw(0), draw(1))
            }
        };
        Self {
            queries,
            keys,
            roles,
        }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn roles(&self) -> &[SlotRole] {
        &self.roles
    }

    pub fn queries(&self) -> &[HeadVector] {
        &self.queries
    }

    pub fn keys(&self) -> &[HeadVector] {
        &self.keys
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

impl<T: Copy + std::fmt::Display> Matrix<T> {
    /// Header line `role,<role_0>,...`, then one line per row prefixed with
    /// that row's role.
    pub fn write_csv<W: Write>(&self, roles: &[SlotRole], mut out: W) -> io::Result<()> {
        write!(out, "role")?;
        for r in roles {
            write!(out, ",{}", r.as_str())?;
        }
        writeln!(out)?;
        for (i, role) in roles.iter().enumerate().take(self.rows) {
            write!(out, "{}", role.as_str())?;
            for v in self.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `|id_i - id_j|` for every slot pair.
pub fn relative_distance_matrix(idmap: &PositionIdMap) -> Matrix<u64> {
    let n = idmap.ids.len();
    let data = idmap
        .ids
        .iter()
        .flat_map(|&a| idmap.ids.iter().map(move |&b| a.abs_diff(b)))
        .collect();
    Matrix {
        rows: n,
        cols: n,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScoreOptions {
    /// Divide scores by `sqrt(d)`.
    pub scale: bool,
    /// Softmax each row.
    pub normalize: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            scale: true,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub matrix: Matrix<f64>,
    pub normalized: bool,
}

pub fn attention_scores(
    pop: &TokenPopulation,
    idmap: &PositionIdMap,
    config: &RopeConfig,
    normalize: bool,
) -> Result<ScoreMatrix> {
    attention_scores_with(
        pop,
        idmap,
        config,
        ScoreOptions {
            normalize,
            ..ScoreOptions::default()
        },
        Execution::default(),
    )
}

/// Entry `(i, j)` is `(R_{id_i} q_i) . (R_{id_j} k_j)`, optionally scaled by
/// `1/sqrt(d)` and row-softmaxed.
pub fn attention_scores_with(
    pop: &TokenPopulation,
    idmap: &PositionIdMap,
    config: &RopeConfig,
    opts: ScoreOptions,
    exec: Execution,
) -> Result<ScoreMatrix> {
    if idmap.ids.len() != pop.len() {
        return Err(Error::PopulationMismatch {
            expected: idmap.ids.len(),
            actual: pop.len(),
        });
    }
    let rotate = |vs: &[HeadVector]| -> Result<Vec<HeadVector>> {
        vs.iter()
            .zip(&idmap.ids)
            .map(|(v, &id)| apply_rope(v, PositionId(id), config))
            .collect()
    };
    let queries = rotate(&pop.queries)?;
    let keys = rotate(&pop.keys)?;
    let scale = if opts.scale {
        1.0 / (config.dim() as f64).sqrt()
    } else {
        1.0
    };
    let n = pop.len();

    let rows = exec.map_range(n, |i| {
        let mut row: Vec<f64> = keys.iter().map(|k| queries[i].dot(k) * scale).collect();
        if opts.normalize {
            softmax_in_place(&mut row);
        }
        row
    });
    Ok(ScoreMatrix {
        matrix: Matrix {
            rows: n,
            cols: n,
            data: rows.into_iter().flatten().collect(),
        },
        normalized: opts.normalize,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// ID-geometry summary for one assignment mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeGain {
    pub mode: IdMode,
    /// Mean `|id|` distance between each high-res token and the thumbnail
    /// token it is mapped to.
    pub corresponding_pair_mean_distance: Option<f64>,
    /// Mean distance over every spatially overlapping (high-res, thumbnail) pair.
    pub overlap_pair_mean_distance: Option<f64>,
    /// Mean distance from post-image text tokens to every image token.
    pub post_text_mean_distance: Option<f64>,
    pub post_text_first_image_distance: Option<u64>,
    pub post_text_farthest_image_distance: Option<u64>,
    pub max_id: u64,
    /// Fraction of high-res queries whose top-scoring thumbnail key is their
    /// mapped thumbnail token.
    pub thumb_argmax_hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentGainReport {
    pub baseline: ModeGain,
    pub id_align: ModeGain,
}

impl AlignmentGainReport {
    /// ID-Align is no worse than baseline on every distance and on `max_id`.
    pub fn id_align_weakly_improves(&self) -> bool {
        let le_f = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a <= b + 1e-12,
            (None, None) => true,
            _ => false,
        };
        let le_u = |a: Option<u64>, b: Option<u64>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            (None, None) => true,
            _ => false,
        };
        let (a, b) = (&self.id_align, &self.baseline);
        le_f(
            a.corresponding_pair_mean_distance,
            b.corresponding_pair_mean_distance,
        ) && le_f(a.post_text_mean_distance, b.post_text_mean_distance)
            && le_u(
                a.post_text_first_image_distance,
                b.post_text_first_image_distance,
            )
            && le_u(
                a.post_text_farthest_image_distance,
                b.post_text_farthest_image_distance,
            )
            && a.max_id <= b.max_id
    }
}

pub fn alignment_gain_report(
    plan: &LayoutPlan,
    spec: PopulationSpec,
    config: &RopeConfig,
) -> Result<AlignmentGainReport> {
    alignment_gain_report_with(
        plan,
        spec,
        config,
        &AssignOptions::default(),
        ScoreOptions::default(),
    )
}

pub fn alignment_gain_report_with(
    plan: &LayoutPlan,
    spec: PopulationSpec,
    config: &RopeConfig,
    assign: &AssignOptions,
    scores: ScoreOptions,
) -> Result<AlignmentGainReport> {
    let pop = TokenPopulation::from_spec(plan, spec, config.dim());
    let gain = |mode| -> Result<ModeGain> {
        let map = assign_position_ids_with(plan, mode, assign)?;
        mode_gain(plan, &map, &pop, config, assign, scores)
    };
    Ok(AlignmentGainReport {
        baseline: gain(IdMode::Baseline)?,
        id_align: gain(IdMode::IdAlign)?,
    })
}

fn mean(values: impl Iterator<Item = u64>) -> Option<f64> {
    let (sum, n) = values.fold((0u128, 0u64), |(s, n), v| (s + v as u128, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

fn mode_gain(
    plan: &LayoutPlan,
    map: &PositionIdMap,
    pop: &TokenPopulation,
    config: &RopeConfig,
    assign: &AssignOptions,
    score_opts: ScoreOptions,
) -> Result<ModeGain> {
    let slots = plan.slots();
    let ids = &map.ids;

    let mut thumb_slot = std::collections::HashMap::new();
    let mut high_slots = Vec::new();
    let mut image_slots = Vec::new();
    let mut last_image = None;
    for (i, s) in slots.iter().enumerate() {
        match *s {
            Slot::Thumb { row, col } => {
                thumb_slot.insert((row, col), i);
            }
            Slot::Highres { row, col } => high_slots.push((i, (row, col))),
            _ => {}
        }
        if s.role().is_image() {
            image_slots.push(i);
            last_image = Some(i);
        }
    }

    let (mut corresponding, mut overlap, mut hit_rate) = (None, None, None);
    if let (Some(thumb), Some(high)) = (plan.thumbnail(), plan.highres()) {
        let mapping = map_highres_ids_with(thumb, high, 0, assign.mapping);
        let partner = |cell: (usize, usize)| thumb_slot[&mapping.thumb_cell(cell.0, cell.1)];
        corresponding = mean(
            high_slots
                .iter()
                .map(|&(i, cell)| ids[i].abs_diff(ids[partner(cell)])),
        );

        let oracle = correspondence_oracle(thumb, high);
        let high_slot: std::collections::HashMap<_, _> =
            high_slots.iter().map(|&(i, c)| (c, i)).collect();
        overlap = mean(
            oracle
                .iter()
                .map(|p| ids[high_slot[&p.highres_cell]].abs_diff(ids[thumb_slot[&p.thumb_cell]])),
        );

        // Score only the high-res query rows against thumbnail keys.
        let rotate = |v: &HeadVector, slot: usize| apply_rope(v, PositionId(ids[slot]), config);
        let scale = if score_opts.scale {
            1.0 / (config.dim() as f64).sqrt()
        } else {
            1.0
        };
        let mut thumb_keys: Vec<(usize, HeadVector)> = Vec::with_capacity(thumb_slot.len());
        let mut thumb_order: Vec<usize> = thumb_slot.values().copied().collect();
        thumb_order.sort_unstable();
        for slot in thumb_order {
            thumb_keys.push((slot, rotate(&pop.keys()[slot], slot)?));
        }
        let mut hits = 0usize;
        for &(i, cell) in &high_slots {
            let q = rotate(&pop.queries()[i], i)?;
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (slot, k) in &thumb_keys {
                let s = q.dot(k) * scale;
                if s > best.1 {
                    best = (*slot, s);
                }
            }
            if best.0 == partner(cell) {
                hits += 1;
            }
        }
        hit_rate = (!high_slots.is_empty()).then(|| hits as f64 / high_slots.len() as f64);
    }

    let post_text: Vec<usize> = match last_image {
        Some(last) => (last + 1..slots.len())
            .filter(|&i| slots[i] == Slot::Text)
            .collect(),
        None => Vec::new(),
    };
    let distances = || {
        post_text
            .iter()
            .flat_map(|&t| image_slots.iter().map(move |&im| ids[t].abs_diff(ids[im])))
    };
    let first_image = image_slots.first().copied();
    let post_text_first_image_distance = match (post_text.first(), first_image) {
        (Some(&t), Some(im)) => Some(ids[t].abs_diff(ids[im])),
        _ => None,
    };

    Ok(ModeGain {
        mode: map.mode,
        corresponding_pair_mean_distance: corresponding,
        overlap_pair_mean_distance: overlap,
        post_text_mean_distance: mean(distances()),
        post_text_first_image_distance,
        post_text_farthest_image_distance: distances().max(),
        max_id: ids.iter().copied().max().unwrap_or(0),
        thumb_argmax_hit_rate: hit_rate,
    })
}
