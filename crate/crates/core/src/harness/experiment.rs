//! Experiment configuration, the scenario runner and its reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{train, LossTrace, TinyNet, TrainingConfig};
use crate::diffusion::{detectability_curve, DetectabilityCurve, NoiseSchedule};
use crate::distortion::{robustness_gap_roc, robustness_table, Distortion, RobustnessTable};
use crate::error::{Error, Result};
use crate::forgery::{config_hash, inject, refine, ForgeryConfig, ImageRecord, YangBaseline};
use crate::image_io::write_image;
use crate::metrics::psnr;
use crate::rng::RngStream;
use crate::tensor::Shape;
use crate::verify::{calibrate_threshold, verify_pool, VerificationPolicy};
use crate::watermark::{MessagePool, SchemeSpec, WatermarkMessage, WatermarkScheme};
use crate::{Image32, TinyNet32};

use super::parallel::par_map;
use super::synth::synth_image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Train,
    Attack,
    Baseline,
    Robustness,
    Defense,
    Detectability,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Train => "train",
            Scenario::Attack => "attack",
            Scenario::Baseline => "baseline",
            Scenario::Robustness => "robustness",
            Scenario::Defense => "defense",
            Scenario::Detectability => "detectability",
        }
    }
}

/// Everything one experiment needs, in a single JSON object.
///
/// `network` names a saved weight file to use instead of training;
/// `output_dir`, `dump_images` and `jobs` affect where and how fast results
/// are produced but never their values, so they are excluded from the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub image_size: usize,
    /// Watermarked images the attacker trains on.
    pub train_images: usize,
    /// Clean images attacked (and used as genuine/control sets).
    pub attack_images: usize,
    pub scheme: SchemeSpec,
    pub training: TrainingConfig,
    pub forgery: ForgeryConfig,
    pub target_fpr: f64,
    #[serde(rename = "pool_K")]
    pub pool_k: usize,
    /// Distortions of the robustness table.
    pub distortions: Vec<Distortion>,
    /// Distortion applied before scoring in the forgery discriminator.
    pub probe: Distortion,
    /// Distortion applied to genuine images before the discriminator
    /// (second ROC).
    pub genuine_predistortion: Distortion,
    pub detectability_grid: Vec<usize>,
    pub network: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dump_images: bool,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Attack,
            seed: 7,
            image_size: 32,
            train_images: 2000,
            attack_images: 200,
            scheme: SchemeSpec::spread_spectrum(1),
            training: TrainingConfig::default(),
            forgery: ForgeryConfig::default(),
            target_fpr: 1e-3,
            pool_k: 1,
            distortions: vec![
                Distortion::GaussianNoise(0.02),
                Distortion::GaussianNoise(0.05),
                Distortion::Jpeg(90),
                Distortion::Jpeg(75),
                Distortion::Blur(0.5),
                Distortion::Brightness(1.2),
            ],
            probe: Distortion::GaussianNoise(0.05),
            genuine_predistortion: Distortion::GaussianNoise(0.02),
            detectability_grid: vec![0, 1, 2, 5, 10, 20, 40, 60, 80, 100],
            network: None,
            output_dir: None,
            dump_images: false,
            jobs: 1,
        }
    }
}

/// The hashed part of a config.
#[derive(Serialize)]
struct HashedFields<'a> {
    scenario: Scenario,
    seed: u64,
    image_size: usize,
    train_images: usize,
    attack_images: usize,
    scheme: &'a SchemeSpec,
    training: &'a TrainingConfig,
    forgery: &'a ForgeryConfig,
    target_fpr: f64,
    pool_k: usize,
    distortions: &'a [Distortion],
    probe: &'a Distortion,
    genuine_predistortion: &'a Distortion,
    detectability_grid: &'a [usize],
    network: Option<&'a Path>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::invalid(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        if self.train_images == 0 || self.attack_images == 0 {
            return Err(Error::invalid("train_images and attack_images must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        self.scheme.build()?;
        self.training.validate()?;
        self.forgery.validate()?;
        calibrate_threshold(self.scheme_bits(), self.target_fpr, self.pool_k)?;
        for d in self.distortions.iter().chain([&self.probe, &self.genuine_predistortion]) {
            d.validate()?;
        }
        if let Some(t) = self.detectability_grid.iter().find(|&&t| t > self.forgery.steps) {
            return Err(Error::invalid(format!(
                "detectability step {t} exceeds T = {}",
                self.forgery.steps
            )));
        }
        if let Some(p) = &self.network {
            if !p.exists() {
                return Err(Error::invalid(format!("network file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn scheme_bits(&self) -> usize {
        match self.scheme {
            SchemeSpec::DwtDct { bits, .. } | SchemeSpec::SpreadSpectrum { bits, .. } => bits,
        }
    }

    /// Hash of every field that influences results.
    pub fn hash(&self) -> String {
        config_hash(&HashedFields {
            scenario: self.scenario,
            seed: self.seed,
            image_size: self.image_size,
            train_images: self.train_images,
            attack_images: self.attack_images,
            scheme: &self.scheme,
            training: &self.training,
            forgery: &self.forgery,
            target_fpr: self.target_fpr,
            pool_k: self.pool_k,
            distortions: &self.distortions,
            probe: &self.probe,
            genuine_predistortion: &self.genuine_predistortion,
            detectability_grid: &self.detectability_grid,
            network: self.network.as_deref(),
        })
    }
}

/// Means over per-image records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    /// Mean PSNR of the attacked images against their clean sources.
    pub psnr: f64,
    /// Mean forged bit accuracy.
    pub bit_accuracy: f64,
    /// Fraction of forged images verified as watermarked.
    pub fpr: f64,
    /// Fraction of genuinely watermarked images verified.
    pub tpr: f64,
    /// Mean bit accuracy of the untouched clean images.
    pub control_accuracy: f64,
}

impl Aggregates {
    /// Recomputes from records, summing in index order.
    pub fn from_records(forged: &[ImageRecord], genuine: &[ImageRecord], control: &[ImageRecord]) -> Self {
        let mean = |r: &[ImageRecord], f: fn(&ImageRecord) -> f64| {
            if r.is_empty() {
                return 0.0;
            }
            let mut sorted: Vec<&ImageRecord> = r.iter().collect();
            sorted.sort_by_key(|x| x.index);
            sorted.iter().map(|x| f(x)).sum::<f64>() / r.len() as f64
        };
        Aggregates {
            n: forged.len(),
            psnr: mean(forged, |r| r.psnr),
            bit_accuracy: mean(forged, |r| r.bit_accuracy),
            fpr: mean(forged, |r| r.detected as u8 as f64),
            tpr: mean(genuine, |r| r.detected as u8 as f64),
            control_accuracy: mean(control, |r| r.bit_accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub head_loss: f64,
    pub tail_loss: f64,
    pub corpus_acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub probe: Distortion,
    pub auc: f64,
    pub genuine_predistortion: Distortion,
    pub auc_predistorted: f64,
}

/// Output of [`run`]. Only `wall_time_s` varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub config_hash: String,
    pub tool_version: String,
    pub wall_time_s: f64,
    /// Verification policy used, including the exact threshold count `c`.
    pub policy: VerificationPolicy,
    /// Attacked images.
    pub records: Vec<ImageRecord>,
    /// Genuinely watermarked counterparts of the clean images.
    pub genuine: Vec<ImageRecord>,
    /// The clean images themselves.
    pub control: Vec<ImageRecord>,
    pub aggregates: Aggregates,
    pub training: Option<TrainingSummary>,
    pub robustness: Option<RobustnessTable>,
    pub roc: Option<RocSummary>,
    pub detectability: Option<DetectabilityCurve>,
}

impl ExperimentReport {
    fn new(lab: &Lab, wall: f64) -> Self {
        ExperimentReport {
            scenario: lab.config.scenario,
            config_hash: lab.config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: wall,
            policy: lab.policy,
            records: Vec::new(),
            genuine: Vec::new(),
            control: Vec::new(),
            aggregates: Aggregates::from_records(&[], &[], &[]),
            training: None,
            robustness: None,
            roc: None,
            detectability: None,
        }
    }

    /// True when the stored aggregates equal a fresh recomputation.
    pub fn aggregates_consistent(&self) -> bool {
        Aggregates::from_records(&self.records, &self.genuine, &self.control) == self.aggregates
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// The scenario's main table.
    pub fn table_csv(&self) -> String {
        if let Some(d) = &self.detectability {
            return d.to_csv();
        }
        if let Some(r) = &self.robustness {
            return r.to_csv();
        }
        let a = &self.aggregates;
        let mut s = String::from("scenario,n,psnr,bit_accuracy,fpr,tpr,control_accuracy,c,K,pool_K\n");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario.name(),
            a.n,
            a.psnr,
            a.bit_accuracy,
            a.fpr,
            a.tpr,
            a.control_accuracy,
            self.policy.c,
            self.policy.k,
            self.policy.pool_k
        );
        s
    }

    /// Writes `report.json` and `table.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("table.csv"), self.table_csv())?;
        Ok(())
    }
}

/// Attack outputs for a batch of clean images.
#[derive(Debug, Clone)]
pub struct AttackBatch {
    pub forged: Vec<Image32>,
    pub pre_refinement: Vec<Image32>,
    pub records: Vec<ImageRecord>,
}

/// The shared world of one experiment: scheme, messages, threshold and
/// data streams, all derived from the config's seed.
pub struct Lab {
    pub config: ExperimentConfig,
    pub scheme: WatermarkScheme,
    pub pool: MessagePool,
    pub policy: VerificationPolicy,
    pub schedule: NoiseSchedule,
    root: RngStream,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        let root = RngStream::new(config.seed);
        let scheme = config.scheme.build()?;
        let k = scheme.bits();
        let pool = MessagePool::random(config.pool_k, k, &root.child("message-pool"))?;
        let policy = calibrate_threshold(k, config.target_fpr, config.pool_k)?;
        let schedule = NoiseSchedule::standard(config.forgery.steps)?;
        Ok(Lab {
            config,
            scheme,
            pool,
            policy,
            schedule,
            root,
        })
    }

    /// The message of a single-message pool (the first one otherwise).
    pub fn message(&self) -> &WatermarkMessage {
        self.pool.get(0)
    }

    /// The attacker's training set: fresh synthetic images, each carrying a
    /// uniformly drawn pool message, kept only if it extracts exactly.
    pub fn training_corpus(&self) -> Result<(Vec<Image32>, f64)> {
        let n = self.config.train_images;
        let gen = self.root.child("train-corpus");
        let pick = self.root.child("train-messages");
        let mut images = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while images.len() < n {
            if attempts == 10 * n {
                return Err(Error::Exhausted {
                    attempts,
                    accepted: images.len(),
                    requested: n,
                });
            }
            let x: Image32 = synth_image(self.config.image_size, 1, &gen.index(attempts as u64))?.cast();
            let m = self.pool.get(self.pool.choose(&pick.index(attempts as u64)));
            attempts += 1;
            let xw = self.scheme.embed(&x, m)?;
            if self.scheme.extract(&xw)? == *m {
                images.push(xw);
            }
        }
        Ok((images, n as f64 / attempts as f64))
    }

    /// The clean images that get attacked.
    pub fn clean_set(&self) -> Result<Vec<Image32>> {
        let s = self.root.child("attack-clean");
        (0..self.config.attack_images)
            .map(|i| Ok(synth_image(self.config.image_size, 1, &s.index(i as u64))?.cast()))
            .collect()
    }

    /// Natural images unrelated to the watermarked set, for the baseline.
    pub fn reference_clean_set(&self) -> Result<Vec<Image32>> {
        let s = self.root.child("reference-clean");
        (0..self.config.train_images)
            .map(|i| Ok(synth_image(self.config.image_size, 1, &s.index(i as u64))?.cast()))
            .collect()
    }

    pub fn train_network(&self) -> Result<(TinyNet32, LossTrace, f64)> {
        let (corpus, acceptance) = self.training_corpus().map_err(|e| e.in_stage("corpus"))?;
        let init =
            TinyNet::build(self.config.image_size, 1, self.root.child("network-init").seed()).map_err(|e| e.in_stage("train"))?;
        let mut tcfg = self.config.training;
        tcfg.seed ^= self.root.child("training").seed();
        let (net, trace) = train(&init, &corpus, &self.schedule, &tcfg).map_err(|e| e.in_stage("train"))?;
        Ok((net, trace, acceptance))
    }

    /// Loads the configured network or trains one.
    pub fn network(&self) -> Result<TinyNet32> {
        match &self.config.network {
            Some(p) => TinyNet::load(p).map_err(|e| e.in_stage("load-network")),
            None => Ok(self.train_network()?.0),
        }
    }

    /// Scores `candidate` against the pool; `index` and the config hash go
    /// into the record.
    pub fn score(&self, index: usize, clean: &Image32, candidate: &Image32) -> Result<ImageRecord> {
        let extracted = self.scheme.extract(candidate)?;
        let pd = verify_pool(&extracted, &self.pool, &self.policy)?;
        Ok(ImageRecord {
            index,
            psnr: psnr(clean, candidate)?,
            bit_accuracy: pd.best_accuracy,
            detected: pd.decision.is_watermarked(),
            config_hash: self.config.hash(),
        })
    }

    /// Genuine (embedded with the first pool message) and control records.
    pub fn reference_records(&self, clean: &[Image32]) -> Result<(Vec<Image32>, Vec<ImageRecord>, Vec<ImageRecord>)> {
        let genuine: Vec<Image32> = par_map(clean.len(), self.config.jobs, |i| {
            self.scheme.embed(&clean[i], self.message())
        })?;
        let g = par_map(clean.len(), self.config.jobs, |i| self.score(i, &clean[i], &genuine[i]))?;
        let c = par_map(clean.len(), self.config.jobs, |i| self.score(i, &clean[i], &clean[i]))?;
        Ok((genuine, g, c))
    }

    /// `x^f` for every clean image.
    pub fn inject_all(&self, net: &TinyNet32, clean: &[Image32], cfg: &ForgeryConfig) -> Result<Vec<Image32>> {
        par_map(clean.len(), self.config.jobs, |i| inject(&clean[i], net, &self.schedule, cfg)).map_err(|e| e.in_stage("inject"))
    }

    /// Refines precomputed `x^f` images with `cfg` and scores them.
    pub fn refine_all(&self, net: &TinyNet32, clean: &[Image32], x_f: &[Image32], cfg: &ForgeryConfig) -> Result<AttackBatch> {
        let out = par_map(clean.len(), self.config.jobs, |i| {
            let r = refine(&x_f[i], &clean[i], net, &self.schedule, cfg, &cfg.stream(i))?;
            let rec = self.score(i, &clean[i], &r.forged)?;
            Ok((r.forged, rec))
        })
        .map_err(|e| e.in_stage("refine"))?;
        let (forged, records) = out.into_iter().unzip();
        Ok(AttackBatch {
            forged,
            pre_refinement: x_f.to_vec(),
            records,
        })
    }

    /// The full attack on `clean` with the configured forgery parameters.
    pub fn attack(&self, net: &TinyNet32, clean: &[Image32]) -> Result<AttackBatch> {
        let cfg = self.config.forgery;
        let x_f = self.inject_all(net, clean, &cfg)?;
        self.refine_all(net, clean, &x_f, &cfg)
    }

    fn dump(&self, name: &str, images: &[Image32]) -> Result<()> {
        if let (true, Some(dir)) = (self.config.dump_images, &self.config.output_dir) {
            let d = dir.join("images");
            std::fs::create_dir_all(&d)?;
            for (i, x) in images.iter().enumerate() {
                write_image(x, d.join(format!("{name}_{i:04}.pgm")))?;
            }
        }
        Ok(())
    }

    /// Runs the configured scenario. `net` overrides the configured network.
    pub fn run_with(&self, net: Option<&TinyNet32>) -> Result<ExperimentReport> {
        let start = Instant::now();
        let mut report = ExperimentReport::new(self, 0.0);
        let scenario = self.config.scenario;
        let needs_net = !matches!(scenario, Scenario::Baseline | Scenario::Train);
        let owned;
        let net = match (net, needs_net) {
            (Some(n), _) => Some(n),
            (None, true) => {
                owned = self.network()?;
                Some(&owned)
            }
            (None, false) => None,
        };
        if let Some(n) = net {
            let want = Shape::square(self.config.image_size, 1)?;
            if n.input_shape() != want {
                return Err(Error::ShapeMismatch {
                    expected: want.to_string(),
                    got: n.input_shape().to_string(),
                }
                .in_stage("network"));
            }
        }

        if scenario == Scenario::Train {
            let (net, trace, acceptance) = self.train_network()?;
            report.training = Some(TrainingSummary {
                iterations: trace.losses.len(),
                head_loss: trace.head_mean(50),
                tail_loss: trace.tail_mean(200),
                corpus_acceptance: acceptance,
            });
            if let Some(dir) = &self.config.output_dir {
                std::fs::create_dir_all(dir)?;
                net.save(dir.join("network.wmf")).map_err(|e| e.in_stage("write"))?;
                std::fs::write(dir.join("loss.csv"), trace.to_csv())?;
            }
        } else {
            let clean = self.clean_set().map_err(|e| e.in_stage("data"))?;
            let (genuine, g, c) = self.reference_records(&clean).map_err(|e| e.in_stage("reference"))?;
            report.genuine = g;
            report.control = c;
            match scenario {
                Scenario::Attack | Scenario::Defense | Scenario::Robustness => {
                    let net = net.expect("network present");
                    let batch = self.attack(net, &clean)?;
                    self.dump("pre", &batch.pre_refinement)?;
                    self.dump("forged", &batch.forged)?;
                    if scenario == Scenario::Robustness {
                        let st = self.root.child("robustness");
                        let m = self.message();
                        let table = robustness_table(&genuine, &batch.forged, &self.scheme, m, &self.config.distortions, &st)
                            .map_err(|e| e.in_stage("robustness"))?;
                        let roc =
                            robustness_gap_roc(&genuine, &batch.forged, &self.scheme, m, &self.config.probe, &st.child("roc"))
                                .map_err(|e| e.in_stage("roc"))?;
                        let pre_st = st.child("predistort");
                        let pre: Vec<Image32> = genuine
                            .iter()
                            .enumerate()
                            .map(|(i, x)| self.config.genuine_predistortion.apply(x, &pre_st.index(i as u64)))
                            .collect::<Result<_>>()?;
                        let roc2 = robustness_gap_roc(&pre, &batch.forged, &self.scheme, m, &self.config.probe, &st.child("roc"))
                            .map_err(|e| e.in_stage("roc"))?;
                        report.robustness = Some(table);
                        report.roc = Some(RocSummary {
                            probe: self.config.probe,
                            auc: roc.auc,
                            genuine_predistortion: self.config.genuine_predistortion,
                            auc_predistorted: roc2.auc,
                        });
                    }
                    report.records = batch.records;
                }
                Scenario::Baseline => {
                    let (corpus, _) = self.training_corpus().map_err(|e| e.in_stage("corpus"))?;
                    let reference = self.reference_clean_set().map_err(|e| e.in_stage("data"))?;
                    let yang = YangBaseline::new(&corpus, &reference).map_err(|e| e.in_stage("baseline"))?;
                    let forged =
                        par_map(clean.len(), self.config.jobs, |i| yang.apply(&clean[i])).map_err(|e| e.in_stage("baseline"))?;
                    self.dump("forged", &forged)?;
                    report.records = par_map(clean.len(), self.config.jobs, |i| self.score(i, &clean[i], &forged[i]))?;
                }
                Scenario::Detectability => {
                    let net = net.expect("network present");
                    let (corpus, _) = self.training_corpus().map_err(|e| e.in_stage("corpus"))?;
                    let marked = &corpus[..self.config.attack_images.min(corpus.len())];
                    let curve = detectability_curve(
                        marked,
                        &clean,
                        &self.scheme,
                        self.message(),
                        net,
                        &self.schedule,
                        &self.config.detectability_grid,
                        &self.root.child("detectability"),
                    )
                    .map_err(|e| e.in_stage("detectability"))?;
                    report.detectability = Some(curve);
                }
                Scenario::Train => unreachable!(),
            }
        }
        report.aggregates = Aggregates::from_records(&report.records, &report.genuine, &report.control);
        report.wall_time_s = start.elapsed().as_secs_f64();
        if let Some(dir) = &self.config.output_dir {
            report.write(dir).map_err(|e| e.in_stage("write"))?;
        }
        Ok(report)
    }
}

/// Executes `config` end to end.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Lab::new(config.clone())?.run_with(None)
}

/// Refinement parameter swept by [`ablate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationParameter {
    #[serde(rename = "L")]
    Iterations,
    #[serde(rename = "lambda")]
    Lambda,
}

impl std::str::FromStr for AblationParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(AblationParameter::Iterations),
            "lambda" => Ok(AblationParameter::Lambda),
            other => Err(Error::invalid(format!(
                "unknown ablation parameter {other:?}; expected L or lambda"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub psnr: f64,
    pub bit_accuracy: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub parameter: AblationParameter,
    pub rows: Vec<AblationRow>,
}

impl AblationCurve {
    pub fn to_csv(&self) -> String {
        let name = match self.parameter {
            AblationParameter::Iterations => "L",
            AblationParameter::Lambda => "lambda",
        };
        let mut s = format!("{name},psnr,bit_accuracy,fpr\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.value, r.psnr, r.bit_accuracy, r.fpr);
        }
        s
    }
}

/// One attack per value with everything else (seed, network, injected
/// images) shared; injection is computed once since it does not depend on
/// the swept parameters.
pub fn ablate(lab: &Lab, net: &TinyNet32, parameter: AblationParameter, values: &[f64]) -> Result<AblationCurve> {
    if values.is_empty() {
        return Err(Error::invalid("ablation needs at least one value"));
    }
    let clean = lab.clean_set().map_err(|e| e.in_stage("data"))?;
    let x_f = lab.inject_all(net, &clean, &lab.config.forgery)?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = lab.config.forgery;
        match parameter {
            AblationParameter::Iterations => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::invalid(format!("L must be a non-negative integer, got {v}")));
                }
                cfg.iterations = v as usize;
            }
            AblationParameter::Lambda => cfg.lambda = v,
        }
        cfg.validate()?;
        let batch = lab
            .refine_all(net, &clean, &x_f, &cfg)
            .map_err(|e| e.in_stage(format!("ablate {v}")))?;
        let a = Aggregates::from_records(&batch.records, &[], &[]);
        rows.push(AblationRow {
            value: v,
            psnr: a.psnr,
            bit_accuracy: a.bit_accuracy,
            fpr: a.fpr,
        });
    }
    Ok(AblationCurve { parameter, rows })
}
