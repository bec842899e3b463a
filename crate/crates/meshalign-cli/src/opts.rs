//! Shared alignment overrides, config-file merging, and the run report
//! echo that makes every run reproducible from its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use meshalign::aligner::AlignConfig;

/// Alignment parameter overrides shared by `align` and `eval`.
#[derive(Debug, Clone, Default, Args)]
pub struct AlignOverrides {
    /// Mesh grid as UxV, e.g. 8x8
    #[arg(long)]
    pub grid: Option<String>,
    /// Scale-softmax factor
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Correlation patch side K (odd)
    #[arg(long)]
    pub k: Option<usize>,
    /// Depth level count M
    #[arg(long)]
    pub levels: Option<usize>,
    /// Content loss weight
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Shape loss weight
    #[arg(long)]
    pub mu: Option<f64>,
    /// Per-layer content weights a,b,c
    #[arg(long)]
    pub omega: Option<String>,
    /// Refinement iteration cap per stage
    #[arg(long)]
    pub iters: Option<usize>,
    /// Working resolution in pixels
    #[arg(long)]
    pub resolution: Option<usize>,
    /// key=value config file; explicit flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (u, v) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid {s:?} is not UxV"))?;
    Ok((
        u.trim().parse().with_context(|| format!("grid rows in {s:?}"))?,
        v.trim().parse().with_context(|| format!("grid cols in {s:?}"))?,
    ))
}

fn parse_omega(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("omega {s:?} needs three comma-separated weights");
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().with_context(|| format!("omega value {p:?}"))?;
    }
    Ok(out)
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl AlignOverrides {
    /// Builds the effective config: defaults, then config file, then flags.
    pub fn resolve(&self) -> Result<AlignConfig> {
        let mut cfg = AlignConfig::default();
        let file = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let from_file = |key: &str| file.get(key).cloned();

        if let Some(grid) = self.grid.clone().or_else(|| from_file("grid")) {
            let (u, v) = parse_grid(&grid)?;
            cfg.grid_rows = u;
            cfg.grid_cols = v;
        }
        if let Some(v) = pick(self.alpha, &file, "alpha")? {
            cfg.alpha = v;
        }
        if let Some(v) = pick(self.k, &file, "k")? {
            cfg.patch_side = v;
        }
        if let Some(v) = pick(self.levels, &file, "levels")? {
            cfg.depth_levels = v;
        }
        if let Some(v) = pick(self.lambda, &file, "lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = pick(self.mu, &file, "mu")? {
            cfg.mu = v;
        }
        if let Some(omega) = self.omega.clone().or_else(|| from_file("omega")) {
            cfg.omega = parse_omega(&omega)?;
        }
        if let Some(v) = pick(self.iters, &file, "iters")? {
            cfg.refine_iters = v;
        }
        if let Some(v) = pick(self.resolution, &file, "resolution")? {
            cfg.working_resolution = v;
        }
        Ok(cfg)
    }
}

fn parse_opt<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(raw) => match raw.parse::<T>() {
            Ok(v) => Ok(Some(v)),
            Err(e) => bail!("config key {key}={raw}: {e}"),
        },
    }
}

/// Flag value when given, otherwise the config-file value.
fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => parse_opt(map, key),
    }
}

/// One `key = value` block echoing the effective configuration.
pub fn echo_config(cfg: &AlignConfig, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "grid = {}x{}", cfg.grid_rows, cfg.grid_cols);
    let _ = writeln!(s, "k = {}", cfg.patch_side);
    let _ = writeln!(s, "alpha = {}", cfg.alpha);
    let _ = writeln!(s, "levels = {}", cfg.depth_levels);
    let _ = writeln!(s, "lambda = {}", cfg.lambda);
    let _ = writeln!(s, "mu = {}", cfg.mu);
    let _ = writeln!(
        s,
        "omega = {},{},{}",
        cfg.omega[0], cfg.omega[1], cfg.omega[2]
    );
    let _ = writeln!(s, "iters = {}", cfg.refine_iters);
    let _ = writeln!(s, "resolution = {}", cfg.working_resolution);
    for (key, value) in extra {
        let _ = writeln!(s, "{key} = {value}");
    }
    s
}

/// Caps the global data-parallel pool; `MESHALIGN_THREADS` is the fallback
/// when no flag is given.
pub fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("MESHALIGN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignore the error when a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
