//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use droopcert::case::{bundled_case, load_case, Case};
use droopcert::certificate::{alpha_theory_all, CertifyOptions};
use droopcert::grid::OperatingPoint;
use droopcert::models::{GeneralizedDroop, NodeModel, ThirdOrderInverter, ThirdOrderMachine};
use droopcert::powerflow::{ideal_reactive, solve, stressed_operating_point, PowerFlowResult, PowerFlowSpec, SolverOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled case name or a path relative to the config file.
    pub case: String,
    #[serde(default)]
    pub rx_ratio: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub operating_point: OperatingPointConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub alpha_sweep: AlphaSweepConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub cross_scan: Option<CrossScanConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatingPointConfig {
    /// Newton on the case's setpoints.
    #[default]
    PowerFlow,
    /// Reactive injections that hold every magnitude at its setpoint.
    Ideal,
    /// Ideal reactive injections scaled by random factors; needs a seed.
    Stressed { magnitude: f64 },
    Polar { v: Vec<f64>, phi: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions {
            tol: c.tol,
            max_iter: c.max_iter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub default: ModelSpec,
    #[serde(default)]
    pub overrides: Vec<ModelOverride>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverride {
    /// 1-based node ids.
    pub nodes: Vec<usize>,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Keyword(AlphaKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKeyword {
    /// The node's own lower bound.
    Theory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    GeneralizedDroop {
        c_wp: f64,
        c_wq: f64,
        c_vp: f64,
        c_vq: f64,
        alpha: AlphaSpec,
        #[serde(default)]
        alpha_offset: f64,
    },
    ThirdOrderInverter {
        tau_p: f64,
        tau_q: f64,
        damping: f64,
        k_p: f64,
        k_q: f64,
        delta: f64,
    },
    ThirdOrderMachine {
        tau_v: f64,
        x: f64,
        tau_p: f64,
        damping: f64,
        k_p: f64,
        delta: f64,
    },
}

impl ModelSpec {
    fn resolve(&self, alpha_theory: f64) -> NodeModel {
        match *self {
            ModelSpec::GeneralizedDroop {
                c_wp,
                c_wq,
                c_vp,
                c_vq,
                alpha,
                alpha_offset,
            } => {
                let base = match alpha {
                    AlphaSpec::Value(a) => a,
                    AlphaSpec::Keyword(AlphaKeyword::Theory) => alpha_theory,
                };
                GeneralizedDroop {
                    c_wp,
                    c_wq,
                    c_vp,
                    c_vq,
                    alpha: base + alpha_offset,
                }
                .into()
            }
            ModelSpec::ThirdOrderInverter {
                tau_p,
                tau_q,
                damping,
                k_p,
                k_q,
                delta,
            } => ThirdOrderInverter {
                tau_p,
                tau_q,
                damping,
                k_p,
                k_q,
                delta,
            }
            .into(),
            ModelSpec::ThirdOrderMachine {
                tau_v,
                x,
                tau_p,
                damping,
                k_p,
                delta,
            } => ThirdOrderMachine {
                tau_v,
                x,
                tau_p,
                damping,
                k_p,
                delta,
            }
            .into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaSweepConfig {
    /// Bracket half width around each node's bound.
    pub half_width: f64,
    pub xtol: f64,
}

impl Default for AlphaSweepConfig {
    fn default() -> Self {
        Self {
            half_width: 2.0,
            xtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
    pub perturbation: PerturbationConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 1e-3,
            record_every: 100,
            perturbation: PerturbationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// 1-based node of the voltage dip; defaults to the first node failing
    /// its droop bound, else node 1.
    pub node: Option<usize>,
    /// Relative dip, 0.01 is 1 %.
    pub dip: f64,
    /// Explicit per-node offsets, added after the dip.
    pub dv: Vec<f64>,
    pub dphi: Vec<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            node: None,
            dip: 0.01,
            dv: Vec::new(),
            dphi: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossScanConfig {
    pub c_vp: Range,
    pub c_wq: Range,
    pub step: f64,
}

/// Parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub dir: PathBuf,
}

pub fn load(path: &Path) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, text, dir })
}

/// Everything a command needs, resolved from the config.
pub struct Experiment {
    pub case: Case,
    pub op: OperatingPoint,
    pub models: Vec<NodeModel>,
    pub alpha_theory: Vec<f64>,
    pub power_flow: Option<PowerFlowResult>,
}

/// Configuration problems, as opposed to numerical failures.
#[derive(Debug)]
pub struct InputError(pub anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(InputError(e.into()))
}

impl LoadedConfig {
    fn load_case(&self) -> anyhow::Result<Case> {
        let name = &self.config.case;
        let candidate = self.dir.join(name);
        let mut case = if candidate.is_file() {
            load_case(&candidate)?
        } else if !name.contains('/') && !name.ends_with(".toml") {
            bundled_case(name)?
        } else {
            return Err(input(anyhow::anyhow!("case file {} not found", candidate.display())));
        };
        if let Some(rx) = self.config.rx_ratio {
            case.grid = case.grid.with_rx_ratio(rx)?;
        }
        Ok(case)
    }

    pub fn experiment(&self, seed: Option<u64>) -> anyhow::Result<Experiment> {
        let case = self.load_case()?;
        let n = case.grid.n_nodes();
        let opts: SolverOptions = self.config.solver.into();
        let mut power_flow = None;
        let op = match &self.config.operating_point {
            OperatingPointConfig::PowerFlow => {
                let spec = PowerFlowSpec::new(case.p_set.clone(), case.q_set.clone(), case.slack)
                    .with_v_init(case.v_set_or_unity());
                let r = solve(&case.grid, &spec, opts)?;
                let op = r.op.clone();
                power_flow = Some(r);
                op
            }
            OperatingPointConfig::Ideal => {
                ideal_reactive(&case.grid, &case.p_set, &case.v_set_or_unity(), case.slack, opts)?
            }
            OperatingPointConfig::Stressed { magnitude } => {
                let Some(seed) = seed else {
                    return Err(input(anyhow::anyhow!(
                        "a stressed operating point is randomized and needs a seed (config `seed` or --seed)"
                    )));
                };
                stressed_operating_point(&case, *magnitude, seed, opts)?
            }
            OperatingPointConfig::Polar { v, phi } => {
                OperatingPoint::from_polar(&case.grid.laplacian(), v.clone(), phi.clone())?
            }
        };
        let alpha_theory = alpha_theory_all(&case.grid.laplacian(), &op)?;
        let models = self.assign_models(n, &alpha_theory)?;
        Ok(Experiment {
            case,
            op,
            models,
            alpha_theory,
            power_flow,
        })
    }

    fn assign_models(&self, n: usize, alpha_theory: &[f64]) -> anyhow::Result<Vec<NodeModel>> {
        let mut spec: Vec<Option<&ModelSpec>> = vec![None; n];
        for o in &self.config.models.overrides {
            for &id in &o.nodes {
                if id == 0 || id > n {
                    bail!(InputError(anyhow::anyhow!("override names node {id}, case has {n} nodes")));
                }
                if spec[id - 1].is_some() {
                    bail!(InputError(anyhow::anyhow!("node {id} has more than one model override")));
                }
                spec[id - 1] = Some(&o.model);
            }
        }
        let models: Vec<NodeModel> = spec
            .iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or(&self.config.models.default).resolve(alpha_theory[i]))
            .collect();
        for m in &models {
            m.validate()?;
        }
        Ok(models)
    }
}
