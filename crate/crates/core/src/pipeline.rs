//! End-to-end commands: enhance, degrade, evaluate, build-profile.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::RunConfig;
use crate::degrade::{degrade_sequence, Gain, SeedPolicy};
use crate::error::{Error, Result};
use crate::frameio::{frame_path, read_image_dir, read_sequence, write_sequence, Sequence, SequenceFormat};
use crate::inter::InterProx;
use crate::intra::{build_profile, estimate_gain, IlluminationProfile, IntraProx};
use crate::metrics::{report, MetricReport};
use crate::quality::QualityModel;
use crate::solver::{run_stage_sequence, Observation, ResidualRow, SolverState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs `f` on a rayon pool of the configured size (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(f))
}

/// Enhanced frames plus per-iteration residual telemetry.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub sequence: Sequence,
    pub telemetry: Vec<ResidualRow>,
}

/// Core enhancement loop on an in-memory sequence: every frame starts from
/// its observation, and all frames advance through the stages in lockstep.
pub fn enhance_sequence(
    input: &Sequence,
    cfg: &RunConfig,
    profile: &IlluminationProfile,
    model: &QualityModel,
) -> Result<Enhanced> {
    cfg.validate()?;
    let observations: Vec<Observation> = input
        .frames()
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let gain = match cfg.gain {
                Some(a) => Gain::Scalar(a),
                None => estimate_gain(y, profile).map_err(|e| e.context(format!("frame {t} gain")))?,
            };
            Ok(Observation { y: y.clone(), gain })
        })
        .collect::<Result<_>>()?;
    let mut states: Vec<SolverState> = input.frames().iter().map(SolverState::from_observation).collect();
    let intra = IntraProx::new(profile, model, cfg.intra.clone(), cfg.solver.rho_step, cfg.seed)?;
    let inter = InterProx { cfg: cfg.inter.clone(), flow: cfg.flow.clone() };
    let mut telemetry = Vec::new();
    for _ in 0..cfg.solver.num_stages {
        telemetry.extend(run_stage_sequence(&mut states, &observations, &cfg.solver, &intra, &inter)?);
    }
    let frames = states.into_iter().map(|s| s.x.clamped()).collect();
    Ok(Enhanced { sequence: Sequence::new(frames, input.frame_rate)?, telemetry })
}

pub fn telemetry_csv(rows: &[ResidualRow]) -> String {
    let mut s = String::from("stage,iter,r_s,r_t\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6e},{:.6e}", r.stage, r.iter, r.r_s, r.r_t);
    }
    s
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::ConfigRange { key: format!("paths.{what}"), message: "required".into() })
}

fn load_profile(cfg: &RunConfig) -> Result<IlluminationProfile> {
    cfg.paths.profile.as_deref().map_or_else(|| Ok(IlluminationProfile::bundled()), IlluminationProfile::load)
}

fn load_model(cfg: &RunConfig) -> Result<QualityModel> {
    cfg.paths.model.as_deref().map_or_else(|| Ok(QualityModel::bundled()), QualityModel::load)
}

fn read_any(path: &Path) -> Result<(Sequence, SequenceFormat)> {
    let format = SequenceFormat::detect(path)?;
    Ok((read_sequence(path, format)?, format))
}

/// Where an output sequence and its side files go. Frame directories hold
/// their own side files; a Y4M output keeps them next to the file.
struct OutputPlan {
    format: SequenceFormat,
    target: PathBuf,
    side_dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl OutputPlan {
    fn new(target: &Path, input_format: SequenceFormat) -> Self {
        let is_y4m = target.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m"));
        let format = match (is_y4m, input_format) {
            (true, _) => SequenceFormat::Y4m,
            (false, SequenceFormat::PpmSeq) => SequenceFormat::PpmSeq,
            (false, _) => SequenceFormat::PngSeq,
        };
        let side_dir = if format == SequenceFormat::Y4m {
            target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
        } else {
            target.to_path_buf()
        };
        let created_dir = !side_dir.exists();
        Self { format, target: target.to_path_buf(), side_dir, created_dir, written: Vec::new() }
    }

    fn write_sequence(&mut self, seq: &Sequence) -> Result<()> {
        if self.format == SequenceFormat::Y4m {
            self.written.push(self.target.clone());
        } else {
            self.written.extend((0..seq.len()).map(|i| frame_path(&self.target, i, self.format)));
        }
        fs::create_dir_all(&self.side_dir).map_err(|e| Error::io(&self.side_dir, e))?;
        write_sequence(seq, &self.target, self.format)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.side_dir.join(name);
        self.written.push(p.clone());
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn discard(&self) {
        if self.created_dir {
            let _ = fs::remove_dir_all(&self.side_dir);
        } else {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }

    /// Runs `f`, deleting anything written so far if it fails.
    fn commit(mut self, f: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        let r = f(&mut self);
        if r.is_err() {
            self.discard();
        }
        r
    }
}

/// Echo of everything needed to reproduce a run. The thread count is left
/// out because it never changes results.
fn manifest(command: &str, cfg: &RunConfig, extra: serde_json::Value) -> String {
    let mut echo = cfg.clone();
    echo.threads = 0;
    let m = json!({
        "command": command,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": echo.to_toml(),
        "run": extra,
    });
    serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"
}

#[derive(Clone, Debug)]
pub struct EnhanceOutcome {
    pub report: MetricReport,
    pub telemetry: Vec<ResidualRow>,
}

pub fn run_enhance(cfg: &RunConfig) -> Result<EnhanceOutcome> {
    cfg.validate()?;
    let input = require(&cfg.paths.input, "input")?;
    let output = require(&cfg.paths.output, "output")?;
    let (seq, format) = read_any(input)?;
    let reference = match &cfg.paths.reference {
        Some(r) => Some(read_any(r)?.0),
        None => None,
    };
    let profile = load_profile(cfg)?;
    let model = load_model(cfg)?;
    let (out, rep) = with_threads(cfg.threads, || -> Result<_> {
        let out = enhance_sequence(&seq, cfg, &profile, &model)?;
        let rep = report(&out.sequence, reference.as_ref(), &cfg.flow)?;
        Ok((out, rep))
    })??;
    let extra = json!({ "input": input, "output": output, "frames": seq.len() });
    OutputPlan::new(output, format).commit(|plan| {
        plan.write_sequence(&out.sequence)?;
        plan.write_text(METRICS_FILE, &rep.to_csv())?;
        plan.write_text(TELEMETRY_FILE, &telemetry_csv(&out.telemetry))?;
        plan.write_text(MANIFEST_FILE, &manifest("enhance", cfg, extra))
    })?;
    Ok(EnhanceOutcome { report: rep, telemetry: out.telemetry })
}

pub fn run_degrade(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let input = require(&cfg.paths.input, "input")?;
    let output = require(&cfg.paths.output, "output")?;
    let (seq, format) = read_any(input)?;
    let out = with_threads(cfg.threads, || degrade_sequence(&seq, &cfg.degrade, SeedPolicy::FrameOffset))??;
    let extra = json!({ "input": input, "output": output, "frames": seq.len() });
    OutputPlan::new(output, format).commit(|plan| {
        plan.write_sequence(&out)?;
        plan.write_text(MANIFEST_FILE, &manifest("degrade", cfg, extra))
    })
}

/// Metrics of `paths.input` (against `paths.reference` when given). The CSV
/// goes to `paths.output` when set.
pub fn run_evaluate(cfg: &RunConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let input = require(&cfg.paths.input, "input")?;
    let (seq, _) = read_any(input)?;
    let reference = match &cfg.paths.reference {
        Some(r) => Some(read_any(r)?.0),
        None => None,
    };
    let rep = with_threads(cfg.threads, || report(&seq, reference.as_ref(), &cfg.flow))??;
    if let Some(out) = &cfg.paths.output {
        fs::write(out, rep.to_csv()).map_err(|e| Error::io(out, e))?;
    }
    Ok(rep)
}

pub fn run_build_profile(corpus: &Path, out: &Path) -> Result<IlluminationProfile> {
    let frames = read_image_dir(corpus)?;
    let prof = build_profile(&frames)?;
    prof.save(out)?;
    Ok(prof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::DegradeParams;
    use crate::intra::IntraConfig;
    use crate::synth;

    #[test]
    fn identity_configuration_is_identity() {
        let seq = synth::panning_sequence(24, 24, 3, 1, 0, 3);
        let mut cfg = RunConfig::default();
        cfg.gain = Some(1.0);
        cfg.intra = IntraConfig { strength: 0.0, n: 1, h: 0.0, ..IntraConfig::default() };
        cfg.inter.omega = 1e12;
        cfg.inter.tau = 0.0;
        cfg.solver.lambda_t = 0.0;
        let out = enhance_sequence(&seq, &cfg, &IlluminationProfile::bundled(), &QualityModel::bundled()).unwrap();
        for (a, b) in out.sequence.frames().iter().zip(seq.frames()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        assert_eq!(out.telemetry.len(), 6);
    }

    #[test]
    fn enhancement_brightens_degraded_input() {
        let clean = synth::panning_sequence(32, 32, 4, 1, 0, 5);
        let dark = degrade_sequence(&clean, &DegradeParams::default(), SeedPolicy::FrameOffset).unwrap();
        let mut cfg = RunConfig::default();
        cfg.solver.num_stages = 1;
        let out = enhance_sequence(&dark, &cfg, &IlluminationProfile::bundled(), &QualityModel::bundled()).unwrap();
        assert!(out.sequence.frames()[0].mean() > 2.0 * dark.frames()[0].mean());
    }

    #[test]
    fn failed_run_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        let seq = synth::panning_sequence(8, 8, 2, 1, 0, 1);
        write_sequence(&seq, &input, SequenceFormat::PngSeq).unwrap();
        let mut cfg = RunConfig::default();
        cfg.paths.input = Some(input);
        cfg.paths.output = Some(dir.path().join("out"));
        // 8x8 frames are below the quality scorer's minimum size
        let err = run_enhance(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn telemetry_layout() {
        let rows = [ResidualRow { stage: 0, iter: 1, r_s: 0.5, r_t: 0.25 }];
        assert_eq!(telemetry_csv(&rows), "stage,iter,r_s,r_t\n0,1,5.000000e-1,2.500000e-1\n");
    }
}
