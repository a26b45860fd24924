use std::path::PathBuf;

use clap::Args;
use rope_idalign::decay::{decay_profile, log_spaced_distances, MeanPreset};
use rope_idalign::rope::RopeConfig;
use serde::Deserialize;

use crate::config::{emit, merge_fields, set_threads, usage};

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DecayArgs {
    /// Head dimension, even [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Frequency base theta [default: 1e4]
    #[arg(long)]
    pub theta: Option<f64>,
    /// Mean preset for both q and k: zeros | ones:<c> | alt:<c> | values:<v0>,<v1>,... [default: ones:1.0]
    #[arg(long)]
    pub mu: Option<String>,
    /// Mean preset for q, overriding --mu
    #[arg(long)]
    pub mu_q: Option<String>,
    /// Mean preset for k, overriding --mu
    #[arg(long)]
    pub mu_k: Option<String>,
    /// Relative distances: log:<a>..<b> (0 and powers of two) | lin:<a>..<b>[:<step>] | comma list [default: log:0..1024]
    #[arg(long)]
    pub distances: Option<String>,
    /// Samples per distance, at least 2 [default: 100000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Covariance of q and k; only "identity" is supported [default: identity]
    #[arg(long)]
    pub covariance: Option<String>,
    /// Worker threads, 0 for one per core; output does not depend on it [default: 0]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output CSV path, "-" for stdout [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DecayArgs {
    pub fn merge(self, file: DecayArgs) -> DecayArgs {
        merge_fields!(
            self, file, dim, theta, mu, mu_q, mu_k, distances, samples, seed, covariance, threads,
            out
        )
    }
}

pub fn parse_distances(spec: &str) -> anyhow::Result<Vec<u64>> {
    let bad = || usage(format!("invalid distance spec {spec:?}"));
    let range = |r: &str| -> anyhow::Result<(u64, u64)> {
        let (a, b) = r.split_once("..").ok_or_else(bad)?;
        Ok((
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ))
    };
    let out = if let Some(r) = spec.strip_prefix("log:") {
        let (a, b) = range(r)?;
        log_spaced_distances(a, b)
    } else if let Some(r) = spec.strip_prefix("lin:") {
        let (r, step) = match r.rsplit_once(':') {
            Some((r, s)) => (r, s.trim().parse::<u64>().map_err(|_| bad())?),
            None => (r, 1),
        };
        if step == 0 {
            return Err(bad());
        }
        let (a, b) = range(r)?;
        (a..=b).step_by(step as usize).collect()
    } else {
        spec.split(',')
            .map(|v| v.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    if out.is_empty() {
        return Err(usage(format!("distance spec {spec:?} is empty")));
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage(format!(
            "distances in {spec:?} must be strictly increasing"
        )));
    }
    Ok(out)
}

fn preset(spec: &str) -> anyhow::Result<MeanPreset> {
    spec.parse::<MeanPreset>().map_err(usage)
}

pub fn run(args: DecayArgs) -> anyhow::Result<()> {
    let dim = args.dim.unwrap_or(64);
    let theta = args.theta.unwrap_or(1e4);
    let config = RopeConfig::new(dim, theta).map_err(|e| usage(e.to_string()))?;
    let samples = args.samples.unwrap_or(100_000);
    if samples < 2 {
        return Err(usage(format!(
            "--samples must be at least 2, got {samples}"
        )));
    }
    let covariance = args.covariance.as_deref().unwrap_or("identity");
    if covariance != "identity" {
        return Err(usage(format!(
            "unsupported covariance {covariance:?}; only identity is supported"
        )));
    }
    let mu = args.mu.as_deref().unwrap_or("ones:1.0");
    let mu_q = preset(args.mu_q.as_deref().unwrap_or(mu))?
        .materialize(dim)
        .map_err(|e| usage(format!("--mu-q: {e}")))?;
    let mu_k = preset(args.mu_k.as_deref().unwrap_or(mu))?
        .materialize(dim)
        .map_err(|e| usage(format!("--mu-k: {e}")))?;
    let distances = parse_distances(args.distances.as_deref().unwrap_or("log:0..1024"))?;
    set_threads(args.threads)?;

    let profile = decay_profile(
        &mu_q,
        &mu_k,
        &distances,
        samples,
        args.seed.unwrap_or(0),
        &config,
    )?;
    emit(args.out.as_deref(), profile.to_csv_string().as_bytes())
}
