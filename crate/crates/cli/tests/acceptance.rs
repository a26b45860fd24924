//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rope_idalign::attention::{alignment_gain_report, PopulationSpec};
use rope_idalign::decay::{
    abel_bound_check, decay_profile, expected_dot_closed_form, log_spaced_distances,
    monte_carlo_expected_dot, partial_sum_mean, MeanVector,
};
use rope_idalign::id_align::{
    assign_position_ids, correspondence_oracle, map_highres_ids, soundness_violations, IdMode,
    SeparatorPolicy,
};
use rope_idalign::layout::{
    build_layout, candidate_set, token_counts, GridShape, LayoutPlan, Resolution, Segment,
};
use rope_idalign::rope::{apply_rope, relative_dot, rope_dot, HeadVector, PositionId, RopeConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

const DIMS: [usize; 4] = [2, 4, 64, 128];
const THETAS: [f64; 2] = [1e4, 1e7];

fn uniform_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> HeadVector {
    HeadVector::new((0..dim).map(|_| rng.random_range(-scale..=scale)).collect()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rope_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for case in 0..1000 {
        let dim = DIMS[case % DIMS.len()];
        let theta = THETAS[(case / DIMS.len()) % THETAS.len()];
        let config = RopeConfig::new(dim, theta).map_err(|e| e.to_string())?;
        let q = uniform_vec(&mut rng, dim, 1.0);
        let k = uniform_vec(&mut rng, dim, 1.0);
        let m: u64 = rng.random_range(0..100_000);
        let n: u64 = rng.random_range(0..100_000);

        let rq = apply_rope(&q, PositionId(m), &config).unwrap();
        worst[0] = worst[0].max((rq.norm() - q.norm()).abs());

        let id = apply_rope(&q, PositionId(0), &config).unwrap();
        let diff = id
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst[1] = worst[1].max(diff);

        let absolute = rope_dot(&q, PositionId(m), &k, PositionId(n), &config).unwrap();
        let relative = relative_dot(&q, &k, n as i64 - m as i64, &config).unwrap();
        worst[2] = worst[2].max((absolute - relative).abs());
    }
    let detail = format!(
        "max errors: norm {:.1e}, identity {:.1e}, shift {:.1e}",
        worst[0], worst[1], worst[2]
    );
    ensure(worst.iter().all(|&w| w <= 1e-9), || detail.clone())?;
    Ok(detail)
}

fn closed_form_matches_rotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let dim = DIMS[case % DIMS.len()];
        let theta = THETAS[(case / DIMS.len()) % THETAS.len()];
        let config = RopeConfig::new(dim, theta).unwrap();
        let a = uniform_vec(&mut rng, dim, 1.0);
        let b = uniform_vec(&mut rng, dim, 1.0);
        let m: u64 = rng.random_range(0..=100_000);
        let closed = expected_dot_closed_form(
            &MeanVector::from(a.clone()),
            &MeanVector::from(b.clone()),
            m as i64,
            &config,
        )
        .unwrap();
        let rotated = rope_dot(&a, PositionId(0), &b, PositionId(m), &config).unwrap();
        worst = worst.max((closed - rotated).abs());
    }
    let detail = format!("max error {worst:.1e} over 1000 mean pairs");
    ensure(worst <= 1e-9, || detail.clone())?;
    Ok(detail)
}

fn monte_carlo_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = 100_000;
    let mut hits = 0;
    for case in 0..100u64 {
        let dim = [4, 16, 64][case as usize % 3];
        let theta = THETAS[(case as usize / 3) % 2];
        let config = RopeConfig::new(dim, theta).unwrap();
        let mu_q = MeanVector::from(uniform_vec(&mut rng, dim, 1.0));
        let mu_k = MeanVector::from(uniform_vec(&mut rng, dim, 1.0));
        let m: i64 = rng.random_range(0..=4096);
        let expected = expected_dot_closed_form(&mu_q, &mu_k, m, &config).unwrap();
        let est = monte_carlo_expected_dot(&mu_q, &mu_k, m, samples, 1000 + case, &config).unwrap();
        if est.within(expected, 4.0) {
            hits += 1;
        }
    }

    let config = RopeConfig::new(64, 1e4).unwrap();
    let zero = MeanVector::zeros(64);
    let distances = log_spaced_distances(0, 4096);
    let profile = decay_profile(&zero, &zero, &distances, samples, 7, &config).unwrap();
    let zero_misses = profile
        .mean_dot
        .iter()
        .zip(&profile.stderr)
        .filter(|(m, s)| m.abs() > 4.0 * **s)
        .count();

    let detail = format!(
        "{hits}/100 configurations within 4 stderr; zero mean outside at {zero_misses}/{} distances",
        distances.len()
    );
    ensure(hits >= 99 && zero_misses == 0, || detail.clone())?;
    Ok(detail)
}

fn abel_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checks = 0;
    let mut violations = 0;
    for theta in THETAS {
        let config = RopeConfig::new(64, theta).unwrap();
        for _ in 0..100 {
            let q = uniform_vec(&mut rng, 64, 1.0);
            let k = uniform_vec(&mut rng, 64, 1.0);
            for delta in [1, 16, 256, 4096] {
                checks += 1;
                if !abel_bound_check(&q, &k, delta, &config).unwrap().holds() {
                    violations += 1;
                }
            }
        }
    }
    let config = RopeConfig::new(128, 1e4).unwrap();
    let (near, far) = (
        partial_sum_mean(1, &config),
        partial_sum_mean(4096, &config),
    );
    let detail = format!(
        "{violations}/{checks} violations; partial-sum mean {near:.3} at 1 vs {far:.3} at 4096"
    );
    ensure(violations == 0 && far < near, || detail.clone())?;
    Ok(detail)
}

fn token_inflation() -> Outcome {
    let vit = Resolution::square(336).unwrap();
    let plan = build_layout(
        0,
        Resolution::square(672).unwrap(),
        &candidate_set(vit),
        vit,
        14,
        0,
        true,
    )
    .map_err(|e| e.to_string())?;
    let counts = token_counts(&plan);
    let detail = format!(
        "image tokens {} = {} thumbnail + {} high-res",
        counts.image_tokens, counts.thumbnail, counts.highres
    );
    ensure(
        counts.image_tokens == 2880 && counts.thumbnail == 576,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn correspondence_soundness() -> Outcome {
    let mut pairs = 0;
    let mut violations = 0;
    for h0 in 1..=6 {
        for w0 in 1..=6 {
            let thumb = GridShape::new(h0, w0).unwrap();
            for h1 in 1..=12 {
                for w1 in 1..=12 {
                    let high = GridShape::new(h1, w1).unwrap();
                    let mapping = map_highres_ids(thumb, high, 0);
                    let oracle = correspondence_oracle(thumb, high);
                    violations += soundness_violations(&mapping, &oracle).len();
                    pairs += 1;
                }
            }
        }
    }
    let detail = format!("{violations} violations over {pairs} grid pairs");
    ensure(violations == 0, || detail.clone())?;
    Ok(detail)
}

fn random_plan(rng: &mut ChaCha8Rng) -> LayoutPlan {
    let pre = rng.random_range(0..8);
    let post = rng.random_range(1..8);
    let thumb = GridShape::new(rng.random_range(1..=6), rng.random_range(1..=6)).unwrap();
    let high = GridShape::new(rng.random_range(1..=24), rng.random_range(1..=24)).unwrap();
    let mut segments = Vec::new();
    if pre > 0 {
        segments.push(Segment::Text { len: pre });
    }
    segments.push(Segment::thumb(thumb));
    segments.push(Segment::highres(high, rng.random_bool(0.5)));
    segments.push(Segment::Text { len: post });
    LayoutPlan::new(segments, 14).unwrap()
}

fn bounded_id_growth() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let plan = random_plan(&mut rng);
        let thumb = plan.thumbnail().unwrap();
        let high = plan.highres().unwrap();
        let pre = match plan.segments()[0] {
            Segment::Text { len } => len as u64,
            _ => 0,
        };
        let post = match plan.segments().last() {
            Some(Segment::Text { len }) => *len as u64,
            _ => 0,
        };
        let after_image = |mode| {
            let map = assign_position_ids(&plan, mode, SeparatorPolicy::InheritRowEnd).unwrap();
            map.max_pid - post
        };
        let aligned = after_image(IdMode::IdAlign);
        let baseline = after_image(IdMode::Baseline);
        let want = pre + thumb.len() as u64;
        ensure(aligned == want, || {
            format!("{thumb:?}+{high:?}: id_align max_pid after image {aligned}, expected {want}")
        })?;
        let image_slots = (plan.len() as u64) - pre - post;
        ensure(
            baseline == pre + image_slots && image_slots >= thumb.len() as u64 + high.len() as u64,
            || format!("{thumb:?}+{high:?}: baseline max_pid after image {baseline}"),
        )?;

        // Doubling the high-res grid leaves the aligned counter untouched.
        let mut segments = plan.segments().to_vec();
        for seg in &mut segments {
            if let Segment::HighRes { rows, .. } = seg {
                *rows *= 2;
            }
        }
        let bigger = LayoutPlan::new(segments, 14).unwrap();
        let grow = |mode| {
            assign_position_ids(&bigger, mode, SeparatorPolicy::InheritRowEnd)
                .unwrap()
                .max_pid
                - post
        };
        let (aligned2, baseline2) = (grow(IdMode::IdAlign), grow(IdMode::Baseline));
        ensure(
            aligned2 == aligned && baseline2 >= baseline + high.len() as u64,
            || {
                format!("{thumb:?}+{high:?}: doubling rows gave id_align {aligned2}, baseline {baseline2}")
            },
        )?;
    }
    Ok("20 plans: id_align counter = base + H0*W0; baseline grows by H1*W1".to_string())
}

fn algorithm_trace() -> Outcome {
    let g = GridShape::new(2, 2).unwrap();
    let plan = LayoutPlan::new(
        vec![
            Segment::Text { len: 2 },
            Segment::thumb(g),
            Segment::highres(g, false),
            Segment::Text { len: 1 },
        ],
        14,
    )
    .unwrap();
    let map = assign_position_ids(&plan, IdMode::IdAlign, SeparatorPolicy::InheritRowEnd).unwrap();
    let detail = format!("ids {:?}, max_pid {}", map.ids, map.max_pid);
    ensure(
        map.ids == [0, 1, 2, 3, 4, 5, 2, 3, 4, 5, 6] && map.max_pid == 7,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn geometry_gain() -> Outcome {
    let config = RopeConfig::new(64, 1e4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut plans: Vec<LayoutPlan> = (0..20).map(|_| random_plan(&mut rng)).collect();
    let vit = Resolution::square(336).unwrap();
    plans.push(
        build_layout(
            4,
            Resolution::square(672).unwrap(),
            &candidate_set(vit),
            vit,
            14,
            4,
            true,
        )
        .unwrap(),
    );
    for plan in &plans {
        let report = alignment_gain_report(plan, PopulationSpec::default(), &config).unwrap();
        let (a, b) = (&report.id_align, &report.baseline);
        let shape = plan.highres().unwrap();
        ensure(a.corresponding_pair_mean_distance == Some(0.0), || {
            format!(
                "{shape:?}: id_align corresponding distance {:?}",
                a.corresponding_pair_mean_distance
            )
        })?;
        ensure(
            b.corresponding_pair_mean_distance.is_some_and(|d| d > 0.0),
            || {
                format!(
                    "{shape:?}: baseline corresponding distance {:?}",
                    b.corresponding_pair_mean_distance
                )
            },
        )?;
        let (fa, fb) = (
            a.post_text_farthest_image_distance,
            b.post_text_farthest_image_distance,
        );
        ensure(matches!((fa, fb), (Some(x), Some(y)) if x < y), || {
            format!("{shape:?}: farthest post-text distance {fa:?} vs baseline {fb:?}")
        })?;
    }
    Ok(format!(
        "{} plans: corresponding distance 0 vs > 0, farthest post-text distance reduced",
        plans.len()
    ))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_idalign"))
        .args(args)
        .current_dir(dir)
        .env_remove("IDALIGN_OUTPUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn cli_determinism() -> Outcome {
    let commands: [&[&str]; 4] = [
        &[
            "simulate-decay",
            "--dim",
            "16",
            "--samples",
            "20000",
            "--seed",
            "11",
            "--out",
            "decay.csv",
        ],
        &[
            "plan-layout",
            "--input",
            "500x900",
            "--pre-text",
            "3",
            "--post-text",
            "2",
            "--out",
            "layout.json",
        ],
        &[
            "assign-ids",
            "--input",
            "500x900",
            "--mapping-csv",
            "mapping.csv",
            "--out",
            "ids.json",
        ],
        &[
            "attention-report",
            "--population",
            "gaussian:0.5:3",
            "--normalize",
            "--out-dir",
            "report",
        ],
    ];
    let mut files = 0;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut stdouts = [Vec::new(), Vec::new()];
    for (dir, stdout) in dirs.iter().zip(&mut stdouts) {
        for args in commands {
            stdout.extend(run_cli(args, dir.path())?);
        }
    }
    ensure(stdouts[0] == stdouts[1], || {
        "stdout differs between runs".to_string()
    })?;
    let mut names = Vec::new();
    for entry in walk(dirs[0].path()) {
        names.push(entry.strip_prefix(dirs[0].path()).unwrap().to_path_buf());
    }
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| format!("{name:?}: {e}"))?;
        ensure(a == b, || format!("{name:?} differs between runs"))?;
        files += 1;
    }
    ensure(files >= 9, || format!("only {files} output files produced"))?;
    Ok(format!(
        "{files} output files and stdout byte-identical across two runs"
    ))
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "rope identities",
            Some(Duration::from_secs(5)),
            rope_identities,
        ),
        (
            "closed-form expectation",
            Some(Duration::from_secs(5)),
            closed_form_matches_rotation,
        ),
        (
            "monte carlo consistency",
            Some(Duration::from_secs(60)),
            monte_carlo_consistency,
        ),
        ("abel bound", Some(Duration::from_secs(10)), abel_bound),
        ("token inflation", None, token_inflation),
        (
            "correspondence soundness",
            Some(Duration::from_secs(30)),
            correspondence_soundness,
        ),
        ("bounded id growth", None, bounded_id_growth),
        ("id assignment trace", None, algorithm_trace),
        ("geometry gain", None, geometry_gain),
        ("cli determinism", None, cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, limit {b:?}")),
            (o, _) => o,
        };
        let limit = budget.map(|b| format!(" < {b:?}")).unwrap_or_default();
        match outcome {
            Ok(detail) => println!(
                "[PASS] {:>2} {name}: {detail} ({elapsed:.2?}{limit})",
                i + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "[FAIL] {:>2} {name}: {detail} ({elapsed:.2?}{limit})",
                    i + 1
                );
            }
        }
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
