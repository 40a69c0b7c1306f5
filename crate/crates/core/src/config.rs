//! Run configuration: a TOML file with one section per module, overlaid by
//! command line flags.
//!
//! ```toml
//! seed = 0
//! threads = 0            # 0 = all cores
//!
//! [solver]               # mu, rho_step, lambda_s, lambda_t, inner_iters, stages, gain
//! [intra]                # strength, n, h, range_lo, range_hi
//! [inter]                # omega, tau
//! [flow]                 # lambda_hs, hs_iters, warps, refine_steps, refine_step_size, refine_smoothness
//! [degrade]              # gain, shot_scale, read_sigma, quantize, seed
//! [paths]                # input, output, reference, profile, model, corpus
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::DegradeParams;
use crate::error::{Error, Result};
use crate::inter::{FlowConfig, InterConfig};
use crate::intra::IntraConfig;
use crate::solver::StageConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    mu: f64,
    rho_step: f64,
    lambda_s: f64,
    lambda_t: f64,
    inner_iters: usize,
    stages: usize,
    gain: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self::from_parts(&StageConfig::default(), None)
    }
}

impl SolverSection {
    fn from_parts(s: &StageConfig, gain: Option<f64>) -> Self {
        Self {
            mu: s.mu,
            rho_step: s.rho_step,
            lambda_s: s.lambda_s,
            lambda_t: s.lambda_t,
            inner_iters: s.inner_iters,
            stages: s.num_stages,
            gain,
        }
    }

    fn stage_config(&self) -> StageConfig {
        StageConfig {
            mu: self.mu,
            rho_step: self.rho_step,
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t,
            inner_iters: self.inner_iters,
            num_stages: self.stages,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: u64,
    threads: usize,
    solver: SolverSection,
    intra: IntraConfig,
    inter: InterConfig,
    flow: FlowConfig,
    degrade: DegradeParams,
    paths: PathConfig,
}

/// Fully defaulted settings for any command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub solver: StageConfig,
    /// Known data-term gain; estimated from the input when absent.
    pub gain: Option<f64>,
    pub intra: IntraConfig,
    pub inter: InterConfig,
    pub flow: FlowConfig,
    pub degrade: DegradeParams,
    pub paths: PathConfig,
}

/// Command line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub stages: Option<usize>,
    pub omega: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        Ok(Self {
            seed: file.seed,
            threads: file.threads,
            solver: file.solver.stage_config(),
            gain: file.solver.gain,
            intra: file.intra,
            inter: file.inter,
            flow: file.flow,
            degrade: file.degrade,
            paths: file.paths,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.stages {
            self.solver.num_stages = v;
        }
        if let Some(v) = o.omega {
            self.inter.omega = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        let paths = [
            (&o.input, &mut self.paths.input),
            (&o.output, &mut self.paths.output),
            (&o.reference, &mut self.paths.reference),
            (&o.profile, &mut self.paths.profile),
            (&o.model, &mut self.paths.model),
        ];
        for (src, dst) in paths {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if let Some(a) = self.gain {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::ConfigRange { key: "solver.gain".into(), message: "must lie in (0, 1]".into() });
            }
        }
        self.intra.validate()?;
        self.inter.validate()?;
        self.flow.validate()?;
        self.degrade.validate().map_err(|e| match e {
            Error::InvalidParam { name, message } => Error::ConfigRange { key: name, message },
            other => other,
        })
    }

    /// Optional file, then flags, then range checks.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML rendering that parses back to the same configuration.
    pub fn to_toml(&self) -> String {
        let file = FileConfig {
            seed: self.seed,
            threads: self.threads,
            solver: SolverSection::from_parts(&self.solver, self.gain),
            intra: self.intra.clone(),
            inter: self.inter.clone(),
            flow: self.flow.clone(),
            degrade: self.degrade.clone(),
            paths: self.paths.clone(),
        };
        toml::to_string(&file).expect("config serializes")
    }
}
