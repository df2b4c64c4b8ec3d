//! One config type per subcommand and the code that runs it.
//!
//! Relative paths in a config resolve against the config file's directory.
//! Sub-seeds (training, calibration probes, PnP noise) are filled in from the
//! run seed before the config is echoed into the manifest.

use std::path::{Path, PathBuf};

use fmdt_core::analysis::{
    default_data_max, distance_to_trainset, lipschitz_profile, local_maxima, pairwise_distance_matrix,
    permutation_test, psnr, psnr_curve, uniform_grid, write_matrix_csv, TwoSampleKind,
};
use fmdt_core::datagen::{generate, GenSpec};
use fmdt_core::net::Checkpoint;
use fmdt_core::net::{Activation, NetModel, NetSpec, ParamClass, ParametrizedDenoiser, TimeEmbedding};
use fmdt_core::restoration::{pnp_flow_inpaint, InverseProblem, PnpOptions};
use fmdt_core::rng::{normal_vec, seeded, substream, SourceKind};
use fmdt_core::sampling::{
    sample, sample_endpoints, CalibrationOptions, IntegratorSpec, PerturbationSpec, Scheme,
};
use fmdt_core::training::{train, train_ensemble_10, TrainConfig, WeightKind, WeightingScheme};
use fmdt_core::{Dataset, FmError};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{load_model, perturb_model, Model, ModelSpec};
use crate::run::{resolve, runtime, schema, CliError, Inputs, Outputs};

pub trait Command: Serialize + DeserializeOwned {
    const NAME: &'static str;

    fn seed_mut(&mut self) -> &mut u64;

    /// Absolute paths and derived seeds.
    fn finalize(&mut self, base: &Path);

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError>;
}

fn csv_bytes<F>(header: &str, rows: F) -> Vec<u8>
where
    F: FnOnce(&mut String),
{
    let mut s = String::from(header);
    s.push('\n');
    rows(&mut s);
    s.into_bytes()
}

fn fmdt_bytes(ds: &Dataset) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    ds.write_fmdt1(&mut buf)?;
    Ok(buf)
}

fn endpoints_dataset(name: &str, rows: Vec<Vec<f64>>, model: &Model) -> Result<Dataset, CliError> {
    Ok(Dataset::from_rows(name, rows, model.shape)?)
}

/// Either explicit times or `n` equispaced times on `[0, 1 - eps_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub points: Option<Vec<f64>>,
    pub n: usize,
    pub eps_end: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: None, n: 21, eps_end: 1e-3 }
    }
}

impl GridSpec {
    fn times(&self) -> Result<Vec<f64>, CliError> {
        let grid = match &self.points {
            Some(p) => p.clone(),
            None => uniform_grid(self.n, self.eps_end),
        };
        if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(schema("grid: times must be non-empty and inside [0, 1]"));
        }
        Ok(grid)
    }
}

/// An optional perturbation with the data needed to calibrate it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub spec: Option<PerturbationSpec>,
    pub calibration: CalibrationOptions,
}

fn apply_perturbation(
    model: Model,
    p: &PerturbationConfig,
    test: Option<&Dataset>,
    outputs: &mut Outputs,
    prefix: &str,
) -> Result<Model, CliError> {
    match &p.spec {
        None => Ok(model),
        Some(spec) => {
            let (m, cals) = perturb_model(&model, spec, &p.calibration, test)?;
            if !cals.is_empty() {
                outputs.json(&format!("{prefix}calibration.json"), &cals)?;
            }
            Ok(m)
        }
    }
}

fn load_optional(inputs: &mut Inputs, field: &str, path: &Option<PathBuf>) -> Result<Option<Dataset>, CliError> {
    path.as_ref().map(|p| inputs.dataset(field, p)).transpose()
}

// gen-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(default)]
    pub seed: u64,
    pub spec: GenSpec,
}

impl Command for GenDataConfig {
    const NAME: &'static str = "gen-data";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, _base: &Path) {}

    fn run(&self, _inputs: &mut Inputs) -> Result<Outputs, CliError> {
        let ds = generate(&self.spec, self.seed).map_err(|e| schema(format!("spec: {e}")))?;
        let mut out = Outputs::default();
        out.add("dataset.fmdt", fmdt_bytes(&ds)?);
        out.with_writer("dataset.csv", |w| ds.write_csv(w))?;
        out.json(
            "summary.json",
            &serde_json::json!({ "n": ds.len(), "dim": ds.dim(), "shape": ds.shape() }),
        )?;
        Ok(out)
    }
}

// train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub time_embed: TimeEmbedding,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: PathBuf,
    pub net: NetConfig,
    pub class: ParamClass,
    pub weighting: WeightKind,
    #[serde(default)]
    pub w_cap: Option<f64>,
    #[serde(default)]
    pub t_support: Option<(f64, f64)>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Ten interval-specialised members instead of one network.
    #[serde(default)]
    pub ensemble: bool,
}

impl TrainCmdConfig {
    fn weighting(&self) -> Result<WeightingScheme, CliError> {
        let mut ws = WeightingScheme::new(self.weighting.clone()).map_err(|e| schema(format!("weighting: {e}")))?;
        if let Some(cap) = self.w_cap {
            ws = ws.with_cap(cap).map_err(|e| schema(format!("w_cap: {e}")))?;
        }
        if let Some((lo, hi)) = self.t_support {
            ws = ws.restricted(lo, hi);
        }
        Ok(ws)
    }
}

impl Command for TrainCmdConfig {
    const NAME: &'static str = "train";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        resolve(base, &mut self.dataset);
        self.train.seed = self.seed;
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        self.train.validate().map_err(|e| schema(format!("train: {e}")))?;
        let ws = self.weighting()?;
        let ds = inputs.dataset("dataset", &self.dataset)?;
        let spec = NetSpec {
            data_dim: ds.dim(),
            hidden: self.net.hidden.clone(),
            activation: self.net.activation,
            time_embed: self.net.time_embed.clone(),
        };
        let mut out = Outputs::default();
        if self.ensemble {
            let res = train_ensemble_10(&ds, &spec, self.class, &ws, &self.train)?;
            for (k, (m, e)) in res.model.members().iter().zip(res.ema.members()).enumerate() {
                let ck = Checkpoint::new(m, Some(&e.net));
                out.add(format!("member-{k}.json"), ck.to_json()?.into_bytes());
            }
            out.add(
                "losses.csv",
                csv_bytes("member,epoch,loss", |s| {
                    for (k, losses) in res.epoch_losses.iter().enumerate() {
                        for (e, l) in losses.iter().enumerate() {
                            s.push_str(&format!("{k},{e},{l:e}\n"));
                        }
                    }
                }),
            );
        } else {
            let init = ParametrizedDenoiser::new(NetModel::init(&spec, self.seed)?, self.class);
            let res = match train(&ds, &init, &ws, &self.train) {
                Err(FmError::Diverged { step, .. }) => {
                    return Err(runtime(format!("training diverged at step {step}")))
                }
                r => r?,
            };
            let ck = Checkpoint::new(&res.model, Some(&res.ema.net));
            out.add("checkpoint.json", ck.to_json()?.into_bytes());
            out.add(
                "losses.csv",
                csv_bytes("epoch,loss,penalty", |s| {
                    for (e, (l, p)) in res.epoch_losses.iter().zip(&res.epoch_penalties).enumerate() {
                        s.push_str(&format!("{e},{l:e},{p:e}\n"));
                    }
                }),
            );
            out.json(
                "summary.json",
                &serde_json::json!({
                    "steps": res.steps,
                    "final_loss": res.epoch_losses.last(),
                    "weighting": ws.name(),
                }),
            )?;
        }
        Ok(out)
    }
}

// sample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub source: SourceKind,
    /// Write full trajectories of the first samples.
    #[serde(default)]
    pub record_trajectories: usize,
}

impl Command for SampleConfig {
    const NAME: &'static str = "sample";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        self.model.resolve_paths(base);
        if let Some(p) = &mut self.test_dataset {
            resolve(base, p);
        }
        self.perturbation.calibration.seed = self.seed.wrapping_add(1);
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        self.integrator.validate().map_err(|e| schema(format!("integrator: {e}")))?;
        if self.n_samples == 0 {
            return Err(schema("n_samples: must be positive"));
        }
        let base = load_model(&self.model, "model", inputs)?;
        let test = load_optional(inputs, "test_dataset", &self.test_dataset)?;
        let mut out = Outputs::default();
        let model = apply_perturbation(base, &self.perturbation, test.as_ref(), &mut out, "")?;
        let x0s = self.source.draw_batch(&mut seeded(self.seed), self.n_samples, model.dim());
        let ends = sample_endpoints(&*model.velocity, &x0s, &self.integrator)?;
        let ds = endpoints_dataset("endpoints", ends, &model)?;
        out.add("endpoints.fmdt", fmdt_bytes(&ds)?);
        out.with_writer("endpoints.csv", |w| ds.write_csv(w))?;
        let mut diagnostics = Vec::new();
        for (k, x0) in x0s.iter().take(self.record_trajectories).enumerate() {
            let rec = sample(&*model.velocity, x0, &self.integrator)?;
            out.with_writer(&format!("trajectory-{k}.csv"), |w| rec.write_csv(w))?;
            diagnostics.push(rec.diagnostics());
        }
        if !diagnostics.is_empty() {
            out.json("diagnostics.json", &diagnostics)?;
        }
        Ok(out)
    }
}

// perturb

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
}

impl Command for PerturbConfig {
    const NAME: &'static str = "perturb";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        self.model.resolve_paths(base);
        if let Some(p) = &mut self.test_dataset {
            resolve(base, p);
        }
        self.calibration.seed = self.seed;
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        let model = load_model(&self.model, "model", inputs)?;
        let test = load_optional(inputs, "test_dataset", &self.test_dataset)?;
        let (_, cals) = perturb_model(&model, &self.perturbation, &self.calibration, test.as_ref())?;
        let mut out = Outputs::default();
        out.add(
            "schedule.csv",
            csv_bytes("t,sigma,baseline_psnr,achieved_psnr,achieved_ratio,monotone", |s| {
                for c in &cals {
                    s.push_str(&format!(
                        "{},{:e},{},{},{},{}\n",
                        c.t, c.sigma, c.baseline_psnr, c.achieved_psnr, c.achieved_ratio, c.monotone
                    ));
                }
            }),
        );
        out.json("calibration.json", &cals)?;
        Ok(out)
    }
}

// psnr

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsnrConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    pub test_dataset: PathBuf,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub data_max: Option<f64>,
    #[serde(default)]
    pub with_replacement: bool,
}

fn default_n_eval() -> usize {
    256
}

impl Command for PsnrConfig {
    const NAME: &'static str = "psnr";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        self.model.resolve_paths(base);
        resolve(base, &mut self.test_dataset);
        self.perturbation.calibration.seed = self.seed.wrapping_add(1);
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        let grid = self.grid.times()?;
        let base = load_model(&self.model, "model", inputs)?;
        let test = inputs.dataset("test_dataset", &self.test_dataset)?;
        let data_max = match self.data_max {
            Some(m) => m,
            None => default_data_max(&test)?,
        };
        let mut out = Outputs::default();
        let curve = |m: &Model| {
            psnr_curve(&*m.denoiser, &test, &grid, self.n_eval, self.seed, data_max, self.with_replacement)
        };
        let baseline = curve(&base)?;
        match self.perturbation.spec {
            None => out.with_writer("psnr.csv", |w| baseline.write_csv(w, None))?,
            Some(_) => {
                let m = apply_perturbation(base, &self.perturbation, Some(&test), &mut out, "")?;
                let c = curve(&m)?;
                out.with_writer("psnr.csv", |w| c.write_csv(w, Some(&baseline)))?;
            }
        }
        Ok(out)
    }
}

// lipschitz

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub source: SourceKind,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_lipschitz_integrator")]
    pub integrator: IntegratorSpec,
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
}

fn default_n_traj() -> usize {
    1000
}

fn default_lipschitz_integrator() -> IntegratorSpec {
    IntegratorSpec::fixed(Scheme::Euler, 1000)
}

fn default_power_iters() -> usize {
    fmdt_core::analysis::DEFAULT_POWER_ITERS
}

impl Command for LipschitzConfig {
    const NAME: &'static str = "lipschitz";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        self.model.resolve_paths(base);
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        self.integrator.validate().map_err(|e| schema(format!("integrator: {e}")))?;
        let grid = self.grid.times()?;
        let model = load_model(&self.model, "model", inputs)?;
        let p = lipschitz_profile(
            &*model.velocity,
            self.source,
            self.n_traj,
            &grid,
            &self.integrator,
            self.power_iters,
            self.seed,
        )?;
        let mut out = Outputs::default();
        out.with_writer("lipschitz.csv", |w| p.write_csv(w))?;
        let peaks: Vec<f64> = local_maxima(&p.mean).into_iter().map(|k| p.t_grid[k]).collect();
        out.json("summary.json", &serde_json::json!({ "local_maxima_t": peaks }))?;
        Ok(out)
    }
}

// pairwise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledModel {
    pub label: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseConfig {
    #[serde(default)]
    pub seed: u64,
    pub models: Vec<LabeledModel>,
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    /// Also report each model's mean distance to its nearest training point.
    #[serde(default)]
    pub train_dataset: Option<PathBuf>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub source: SourceKind,
}

impl Command for PairwiseConfig {
    const NAME: &'static str = "pairwise";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        for (k, m) in self.models.iter_mut().enumerate() {
            m.model.resolve_paths(base);
            m.perturbation.calibration.seed = self.seed.wrapping_add(1 + k as u64);
        }
        for p in [&mut self.test_dataset, &mut self.train_dataset].into_iter().flatten() {
            resolve(base, p);
        }
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        self.integrator.validate().map_err(|e| schema(format!("integrator: {e}")))?;
        if self.models.is_empty() || self.n_samples == 0 {
            return Err(schema("models, n_samples: need at least one model and one sample"));
        }
        let test = load_optional(inputs, "test_dataset", &self.test_dataset)?;
        let train_ds = load_optional(inputs, "train_dataset", &self.train_dataset)?;
        let mut out = Outputs::default();
        let mut models = Vec::with_capacity(self.models.len());
        for (k, m) in self.models.iter().enumerate() {
            let base = load_model(&m.model, &format!("models[{k}].model"), inputs)?;
            let prefix = format!("{}-", m.label);
            models.push(apply_perturbation(base, &m.perturbation, test.as_ref(), &mut out, &prefix)?);
        }
        let d = models[0].dim();
        let x0s = self.source.draw_batch(&mut seeded(self.seed), self.n_samples, d);
        let mut ends = Vec::with_capacity(models.len());
        for (m, lm) in models.iter().zip(&self.models) {
            let e = sample_endpoints(&*m.velocity, &x0s, &self.integrator)?;
            out.add(
                format!("endpoints-{}.fmdt", lm.label),
                fmdt_bytes(&endpoints_dataset(&lm.label, e.clone(), m)?)?,
            );
            ends.push(e);
        }
        let labels: Vec<String> = self.models.iter().map(|m| m.label.clone()).collect();
        let matrix = pairwise_distance_matrix(&ends)?;
        out.with_writer("pairwise.csv", |w| write_matrix_csv(w, &labels, &matrix))?;
        if let Some(ds) = &train_ds {
            let dist = distance_to_trainset(&ends, ds)?;
            out.add(
                "trainset_distance.csv",
                csv_bytes("model,mean_nearest_distance", |s| {
                    for (l, v) in labels.iter().zip(&dist) {
                        s.push_str(&format!("{l},{v}\n"));
                    }
                }),
            );
        }
        Ok(out)
    }
}

// twosample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSampleConfig {
    #[serde(default)]
    pub seed: u64,
    pub a: PathBuf,
    pub b: PathBuf,
    pub kind: TwoSampleKind,
    #[serde(default)]
    pub n_permutations: usize,
}

impl Command for TwoSampleConfig {
    const NAME: &'static str = "twosample";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        resolve(base, &mut self.a);
        resolve(base, &mut self.b);
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        let rows = |ds: Dataset| ds.rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let a = rows(inputs.dataset("a", &self.a)?);
        let b = rows(inputs.dataset("b", &self.b)?);
        let (report, p) = permutation_test(&a, &b, self.kind, self.n_permutations, self.seed)?;
        let mut out = Outputs::default();
        out.json(
            "twosample.json",
            &serde_json::json!({
                "report": report,
                "p_value": (self.n_permutations > 0).then_some(p),
                "n_permutations": self.n_permutations,
            }),
        )?;
        Ok(out)
    }
}

// inpaint

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaskSpec {
    /// Observe the first `fraction` of the coordinates.
    Leading { fraction: f64 },
    /// Observe each coordinate independently with probability `fraction`.
    Random { fraction: f64 },
    Explicit { mask: Vec<bool> },
}

impl MaskSpec {
    fn build(&self, d: usize, seed: u64) -> Result<Vec<bool>, CliError> {
        let check = |f: f64| {
            if (0.0..=1.0).contains(&f) {
                Ok(())
            } else {
                Err(schema(format!("mask.fraction: {f} is not in [0, 1]")))
            }
        };
        Ok(match self {
            MaskSpec::Leading { fraction } => {
                check(*fraction)?;
                let k = (fraction * d as f64).round() as usize;
                (0..d).map(|j| j < k).collect()
            }
            MaskSpec::Random { fraction } => {
                check(*fraction)?;
                let mut rng = substream(seed, u64::MAX);
                (0..d).map(|_| rng.random::<f64>() < *fraction).collect()
            }
            MaskSpec::Explicit { mask } => {
                if mask.len() != d {
                    return Err(schema(format!("mask.mask: length {} does not match dimension {d}", mask.len())));
                }
                mask.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    /// Clean images; each row is masked, optionally noised and restored.
    pub images: PathBuf,
    pub mask: MaskSpec,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub pnp: PnpOptions,
    #[serde(default)]
    pub data_max: Option<f64>,
}

impl Command for InpaintConfig {
    const NAME: &'static str = "inpaint";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn finalize(&mut self, base: &Path) {
        self.model.resolve_paths(base);
        resolve(base, &mut self.images);
        self.pnp.seed = self.seed;
    }

    fn run(&self, inputs: &mut Inputs) -> Result<Outputs, CliError> {
        let model = load_model(&self.model, "model", inputs)?;
        let images = inputs.dataset("images", &self.images)?;
        let d = images.dim();
        let mask = self.mask.build(d, self.seed)?;
        let data_max = match self.data_max {
            Some(m) => m,
            None => default_data_max(&images).unwrap_or(1.0),
        };
        let mut restored = Vec::with_capacity(images.len());
        let mut rows = String::new();
        let mut traces = String::new();
        for (i, clean) in images.rows().enumerate() {
            let mut rng = substream(self.seed, i as u64);
            let noise = normal_vec(&mut rng, d);
            let y: Vec<f64> = clean
                .iter()
                .zip(&noise)
                .zip(&mask)
                .map(|((c, z), &m)| if m { c + self.noise_std * z } else { 0.0 })
                .collect();
            let prob = InverseProblem::new(y, mask.clone(), self.noise_std)
                .map_err(|e| schema(format!("noise_std: {e}")))?;
            let opts = PnpOptions { seed: self.pnp.seed.wrapping_add(i as u64), ..self.pnp.clone() };
            let init_psnr = psnr(clean, &prob.initialization(), data_max)?;
            let res = pnp_flow_inpaint(&*model.denoiser, &prob, &opts, Some((clean, data_max)))?;
            let final_psnr = psnr(clean, &res.estimate, data_max)?;
            rows.push_str(&format!("{i},{init_psnr},{final_psnr},{}\n", prob.residual(&res.estimate)));
            if let Some(trace) = &res.psnr_trace {
                for (k, (t, p)) in res.times.iter().zip(trace).enumerate() {
                    traces.push_str(&format!("{i},{k},{t},{p}\n"));
                }
            }
            restored.push(res.estimate);
        }
        let mut out = Outputs::default();
        let ds = Dataset::from_rows("restored", restored, images.shape())?;
        out.add("restored.fmdt", fmdt_bytes(&ds)?);
        out.add("results.csv", csv_bytes("index,psnr_observed,psnr_restored,residual", |s| s.push_str(&rows)));
        out.add("psnr_trace.csv", csv_bytes("index,iter,t,psnr", |s| s.push_str(&traces)));
        Ok(out)
    }
}
