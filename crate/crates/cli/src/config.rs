//! Run configuration: command-line flags merged over an optional TOML file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use riemquant::geometry::{ManifoldKind, ModelManifold};
use riemquant::measures::{DensityKind, MeasureSpec, PresetOptions, PRESETS};
use riemquant::quantizer::{EstimateConfig, LloydConfig};

/// Invalid user input; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

/// Experiment parameters. Every field is optional so that flags and file
/// values can be merged; the accessors on [`RunConfig`] fill in defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Params {
    /// Model space: euclidean, sphere or hyperbolic.
    #[arg(long)]
    pub manifold: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Radius of the sphere or curvature scale of hyperbolic space.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Named preset, or `uniform` / `gaussian` on the chosen manifold.
    #[arg(long)]
    pub measure: Option<String>,
    /// Order of the quantization error.
    #[arg(long)]
    pub r: Option<f64>,
    /// Codebook sizes, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    #[serde(rename = "N")]
    pub n: Option<Vec<usize>>,
    /// Lloyd restarts per size.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Sample size of the optimization cloud.
    #[arg(long)]
    pub opt_n: Option<usize>,
    /// Sample size of Monte-Carlo evaluation.
    #[arg(long)]
    pub eval_n: Option<usize>,
    /// Lloyd stopping tolerance on the relative decrease.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Mandatory RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Decay exponent of the circle weights.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of circles.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Rate of the exponential law.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Moment excess in the moment and polar bounds.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Cube sides for the metric sandwich, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Random pairs per cube (sandwich) or per check.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Bins per axis for empirical convergence.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Radial sample size of the polar constructor.
    #[arg(long)]
    pub radial_n: Option<usize>,
    /// Random instances of the Wasserstein identity check.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Largest number of atoms per instance.
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Largest support size per instance.
    #[arg(long)]
    pub support: Option<usize>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Params {
    /// `self` with every field set in `over` replaced.
    pub fn merged(mut self, over: &Params) -> Params {
        merge_fields!(self, over; manifold, dim, scale, measure, r, n, restarts, opt_n, eval_n, tol, max_iter,
            seed, epsilon, kmax, rate, delta, deltas, samples, bins, radial_n, instances, atoms, support);
        self
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Params> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub params: Params,
    #[serde(skip)]
    pub out: PathBuf,
}

fn positive(name: &str, v: f64) -> anyhow::Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("--{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn new(command: &str, params: Params, out: Option<PathBuf>) -> anyhow::Result<RunConfig> {
        let seed = params.seed.ok_or_else(|| invalid("a seed is required (--seed or `seed` in the config file)"))?;
        if let Some(r) = params.r {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(invalid(format!("--r must be >= 1, got {r}")));
            }
        }
        if let Some(ns) = &params.n {
            if ns.is_empty() || ns.contains(&0) {
                return Err(invalid("--N must list positive sizes"));
            }
        }
        for (name, v) in [("scale", params.scale), ("epsilon", params.epsilon), ("rate", params.rate), ("delta", params.delta), ("tol", params.tol)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        for (name, v) in [("restarts", params.restarts), ("opt-n", params.opt_n), ("eval-n", params.eval_n), ("samples", params.samples), ("dim", params.dim)] {
            if v == Some(0) {
                return Err(invalid(format!("--{name} must be >= 1")));
            }
        }
        Ok(RunConfig {
            out: out.unwrap_or_else(|| PathBuf::from(format!("{command}.csv"))),
            command: command.to_string(),
            seed,
            params,
        })
    }

    /// Canonical TOML text of the configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn r(&self) -> f64 {
        self.params.r.unwrap_or(2.0)
    }

    pub fn sizes(&self, default: &[usize]) -> Vec<usize> {
        self.params.n.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn estimate(&self) -> EstimateConfig {
        let d = EstimateConfig::default();
        let l = LloydConfig::default();
        EstimateConfig {
            restarts: self.params.restarts.unwrap_or(d.restarts),
            opt_n: self.params.opt_n.unwrap_or(d.opt_n),
            eval_n: self.params.eval_n.unwrap_or(d.eval_n),
            lloyd: LloydConfig {
                tol: self.params.tol.unwrap_or(l.tol),
                max_iter: self.params.max_iter.unwrap_or(l.max_iter),
                ..l
            },
        }
    }

    pub fn manifold(&self, default: ManifoldKind, default_dim: usize) -> anyhow::Result<ModelManifold> {
        let kind = match &self.params.manifold {
            Some(k) => k.parse::<ManifoldKind>().map_err(|e| invalid(e.to_string()))?,
            None => default,
        };
        let dim = self.params.dim.unwrap_or(default_dim);
        ModelManifold::new(kind, dim, self.params.scale.unwrap_or(1.0)).map_err(|e| invalid(e.to_string()))
    }

    /// The measure named by `--measure`: a preset, or `uniform` /
    /// `gaussian` on the manifold given by `--manifold`.
    pub fn measure(&self, default: &str) -> anyhow::Result<(String, MeasureSpec)> {
        let name = self.params.measure.clone().unwrap_or_else(|| default.to_string());
        let p = &self.params;
        let spec = match name.as_str() {
            "uniform" | "gaussian" => {
                let m = self.manifold(ManifoldKind::Euclidean, 2)?;
                let kind = match (name.as_str(), m.kind()) {
                    ("gaussian", _) => DensityKind::GaussianRadial,
                    (_, ManifoldKind::Sphere) => DensityKind::UniformSphere,
                    (_, ManifoldKind::Euclidean) => DensityKind::PowerBox {
                        exponents: vec![0.0; m.dim()],
                    },
                    (_, ManifoldKind::Hyperbolic) => {
                        return Err(invalid("hyperbolic space carries no uniform probability measure"));
                    }
                };
                MeasureSpec::density(m, kind)
            }
            preset if PRESETS.contains(&preset) => {
                let d = PresetOptions::default();
                MeasureSpec::preset(
                    preset,
                    &PresetOptions {
                        dim: p.dim.unwrap_or(d.dim),
                        scale: p.scale.unwrap_or(d.scale),
                        epsilon: p.epsilon.unwrap_or(d.epsilon),
                        k_max: p.kmax.unwrap_or(d.k_max),
                        rate: p.rate.unwrap_or(d.rate),
                    },
                )
            }
            other => {
                return Err(invalid(format!(
                    "unknown measure `{other}`; use uniform, gaussian or one of: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        .map_err(|e| invalid(e.to_string()))?;
        Ok((name, spec))
    }
}
