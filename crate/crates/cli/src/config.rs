//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mselab_core::metric::MetricPreset;
use mselab_core::recovery::RecoveryOptions;
use mselab_core::{ConformalFactor, Gamma, Grid, MetricSpec, ScalarFn, SolverOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every key is optional; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name, or `custom` to use `g11`, `g12`, `g22`.
    pub metric: String,
    pub g11: Option<String>,
    pub g12: Option<String>,
    pub g22: Option<String>,
    /// Conformal factor of the model metric.
    pub c0: String,
    pub c3: Option<String>,
    pub c4: Option<String>,
    /// Manufactured `c̃`: surface value and `∂^k_{x_n} c̃(·, 0)`.
    pub ctilde0: String,
    pub ctilde3: Option<String>,
    pub ctilde4: Option<String>,
    /// Strictly increasing; single-grid commands use the last entry.
    pub grids: Vec<usize>,
    /// Boundary datum for `forward` and `linearize`.
    pub data: String,
    /// Manufactured solution for convergence studies.
    pub exact: String,
    /// `fourier` or `random`.
    pub family: String,
    pub modes: usize,
    pub pairs: usize,
    pub adjoints: usize,
    /// Scale applied to family data for the nonlinear DN map.
    pub amplitude: f64,
    pub eps: Vec<f64>,
    pub recovery_eps: f64,
    pub gamma: String,
    pub orders: Vec<usize>,
    /// `mms`, `formulation` or `identity`.
    pub study: String,
    pub newton_tol: f64,
    pub basis: usize,
    pub ridge: f64,
    pub vanish_on_boundary: bool,
    pub out: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            metric: "diag_poly".into(),
            g11: None,
            g12: None,
            g22: None,
            c0: "1 + 0.2*x1*x2".into(),
            c3: Some("1 + 0.5*x1".into()),
            c4: Some("0.5*cos(x2)".into()),
            ctilde0: "1".into(),
            ctilde3: Some("sin(pi*x1)*sin(pi*x2)".into()),
            ctilde4: None,
            grids: vec![17, 33, 65],
            data: "0.04*sin(pi*x1)*(1 + x2)".into(),
            exact: "0.03*sin(pi*x1)*cos(x2) + 0.01*x1*x2".into(),
            family: "fourier".into(),
            modes: 2,
            pairs: 24,
            adjoints: 8,
            amplitude: 0.04,
            eps: vec![1e-2, 5e-3, 2.5e-3],
            recovery_eps: 5e-3,
            gamma: "all".into(),
            orders: vec![3],
            study: "mms".into(),
            newton_tol: 1e-10,
            basis: 8,
            ridge: 1e-5,
            vanish_on_boundary: true,
            out: "out".into(),
            seed: 0,
        }
    }
}

fn parse_fn(src: &str, key: &str) -> Result<ScalarFn> {
    ScalarFn::parse(src).with_context(|| format!("config key '{key}'"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML rendering, in hex. The output
    /// directory does not take part.
    pub fn hash(&self) -> String {
        let keyed = ExperimentConfig { out: String::new(), ..self.clone() };
        hex(&Sha256::digest(keyed.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            bail!("grids must not be empty");
        }
        if self.grids.windows(2).any(|w| w[0] >= w[1]) {
            bail!("grid sizes must be strictly increasing, got {:?}", self.grids);
        }
        for &n in &self.grids {
            Grid::new(n)?;
        }
        if self.orders.iter().any(|&k| !(3..=5).contains(&k)) {
            bail!("recovery orders must lie in 3..=5, got {:?}", self.orders);
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) || !(self.recovery_eps > 0.0) {
            bail!("finite-difference steps must be positive");
        }
        if !matches!(self.family.as_str(), "fourier" | "random") {
            bail!("unknown family '{}'", self.family);
        }
        if !matches!(self.study.as_str(), "mms" | "formulation" | "identity") {
            bail!("unknown study '{}'", self.study);
        }
        self.gamma()?;
        self.model_spec()?;
        self.ctilde()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(*self.grids.last().context("no grid configured")?)?)
    }

    pub fn gamma(&self) -> Result<Gamma> {
        self.gamma.parse::<Gamma>().with_context(|| "config key 'gamma'")
    }

    fn conformal(&self) -> Result<ConformalFactor> {
        let mut higher = Vec::new();
        for (k, src) in [(3, &self.c3), (4, &self.c4)] {
            if let Some(s) = src {
                higher.push((k, parse_fn(s, &format!("c{k}"))?));
            }
        }
        Ok(ConformalFactor::new(parse_fn(&self.c0, "c0")?, higher)?)
    }

    /// The model metric `g = c (ĝ ⊕ 1)`.
    pub fn model_spec(&self) -> Result<MetricSpec> {
        let c = self.conformal()?;
        if self.metric == "custom" {
            let get = |v: &Option<String>, key: &str| -> Result<ScalarFn> {
                parse_fn(v.as_deref().with_context(|| format!("custom metric needs '{key}'"))?, key)
            };
            return Ok(MetricSpec::new(get(&self.g11, "g11")?, get(&self.g12, "g12")?, get(&self.g22, "g22")?, c));
        }
        let preset: MetricPreset = self.metric.parse().with_context(|| "config key 'metric'")?;
        Ok(MetricSpec::preset(preset, c))
    }

    /// `c̃(x', t) = c̃_0 + Σ_k c̃_k t^k / k!`.
    pub fn ctilde(&self) -> Result<ConformalFactor> {
        let mut higher = Vec::new();
        for (k, src) in [(3, &self.ctilde3), (4, &self.ctilde4)] {
            if let Some(s) = src {
                higher.push((k, parse_fn(s, &format!("ctilde{k}"))?));
            }
        }
        Ok(ConformalFactor::new(parse_fn(&self.ctilde0, "ctilde0")?, higher)?)
    }

    /// The metric behind the synthetic measurements, `c̃ g`.
    pub fn measured_spec(&self) -> Result<MetricSpec> {
        Ok(self.model_spec()?.times(&self.ctilde()?))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions::default().with_tol(self.newton_tol)
    }

    /// Surface value of `c̃`; recovery needs it constant.
    pub fn lambda_hat(&self) -> Result<f64> {
        let f = parse_fn(&self.ctilde0, "ctilde0")?;
        let grid = self.grid()?;
        let values: Vec<f64> = (0..grid.len()).map(|k| grid.xy(k)).map(|(x, y)| f.eval(x, y)).collect();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        if !(lo > 0.0) || hi - lo > 1e-12 * hi {
            bail!("recovery needs a positive constant ctilde0, got '{}' (range {lo}..{hi})", self.ctilde0);
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn recovery_options(&self) -> Result<RecoveryOptions> {
        Ok(RecoveryOptions {
            basis_per_axis: self.basis,
            ridge: self.ridge,
            vanish_on_boundary: self.vanish_on_boundary,
            lambda_hat: self.lambda_hat()?,
            ..RecoveryOptions::default()
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("grids = [9, 17, 33]\nmetric = \"euclidean\"\n").unwrap();
        assert_eq!(cfg.grids, vec![9, 17, 33]);
        assert_eq!(cfg.pairs, 24);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("grids = [33, 17]").is_err());
        assert!(ExperimentConfig::from_toml("grids = []").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("metric = \"sphere\"").is_err());
        assert!(ExperimentConfig::from_toml("metric = \"custom\"").is_err());
        assert!(ExperimentConfig::from_toml("gamma = \"middle\"").is_err());
        assert!(ExperimentConfig::from_toml("c0 = \"1 + \"").is_err());
        assert!(ExperimentConfig::from_toml("orders = [2]").is_err());
    }

    #[test]
    fn lambda_hat_requires_constant_surface_value() {
        let cfg = ExperimentConfig::from_toml("ctilde0 = \"2.5\"").unwrap();
        assert_eq!(cfg.lambda_hat().unwrap(), 2.5);
        let cfg = ExperimentConfig::from_toml("ctilde0 = \"1 + x1\"").unwrap();
        assert!(cfg.lambda_hat().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
