use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgmarl_core::grid::io::{load_landmarks, load_split, save_landmarks, save_split};
use sgmarl_core::grid::{generate_many, make_scenario, Case, Dataset, LandmarkSet, ScenarioSplit};
use sgmarl_core::inference::{detect, DetectConfig};
use sgmarl_core::maq::{train, QNetwork, ShapeHooks};
use sgmarl_core::metrics::{ade, landmarks_to_seg, segmentation_rows, LabelMask};
use sgmarl_core::nn::checkpoint;
use sgmarl_core::shape::io::{load_model, save_model};
use sgmarl_core::shape::{build_ssm, FitConfig, ShapeModel};
use sgmarl_core::ssmnet::{
    ClosedFormFit, DeepSsmNet, JointTraining, Provenance, RegularizerConfig, ShapeLibrary, ShapeRegressor,
};

use crate::config::{level_name, ExperimentConfig, RegressorKind, Stage};
use crate::error::CliError;
use crate::manifest::{module_seed, read_manifest, stage_hash, write_manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    BuildSsm,
    PretrainSsm,
    Train,
    Detect,
    Eval,
    Report,
}

impl Command {
    /// The stages of one run, in dependency order.
    pub const STAGES: [Command; 6] =
        [Command::GenData, Command::BuildSsm, Command::PretrainSsm, Command::Train, Command::Detect, Command::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::BuildSsm => "build-ssm",
            Command::PretrainSsm => "pretrain-ssm",
            Command::Train => "train",
            Command::Detect => "detect",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }

    /// Artifact directory under the output directory.
    pub fn stage(self) -> Stage {
        match self {
            Command::GenData => Stage::Data,
            Command::BuildSsm | Command::PretrainSsm => Stage::Model,
            Command::Train => Stage::Training,
            Command::Detect | Command::Eval | Command::Report => Stage::Detection,
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            Command::GenData => "data",
            Command::BuildSsm => "ssm",
            Command::PretrainSsm => "ssmnet",
            Command::Train => "train",
            Command::Detect => "detect",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// The two detection variants compared by every run.
pub const METHODS: [&str; 2] = ["DeepMaQ", "SGMaRL"];

/// A validated configuration bound to an output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Run {
    pub fn new(config: ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        config.validate()?;
        let seed = config.seed()?;
        Ok(Self { config, out, seed })
    }

    pub fn stage_dir(&self, command: Command) -> PathBuf {
        self.out.join(command.dir())
    }

    fn seed_of(&self, module: &str) -> u64 {
        module_seed(self.seed, module)
    }

    fn rng(&self, module: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed_of(module))
    }

    /// Upstream stage directory, checked to exist and to come from this configuration.
    fn upstream(&self, command: Command) -> Result<PathBuf, CliError> {
        let dir = self.stage_dir(command);
        let info = read_manifest(&dir)?;
        if info.stage_hash != stage_hash(&self.config, command.stage()) {
            return Err(CliError::Config(format!(
                "{} was produced by a different configuration; rerun {}",
                dir.display(),
                command.name()
            )));
        }
        Ok(dir)
    }

    fn fresh_stage(&self, command: Command) -> Result<PathBuf, CliError> {
        let dir = self.stage_dir(command);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn execute(&self, command: Command, inputs: &[PathBuf], force: bool) -> Result<(), CliError> {
        match command {
            Command::GenData => self.gen_data(),
            Command::BuildSsm => self.build_ssm(),
            Command::PretrainSsm => self.pretrain_ssm(),
            Command::Train => self.train(),
            Command::Detect => self.detect(),
            Command::Eval => self.eval(),
            Command::Report => {
                let inputs = if inputs.is_empty() { vec![self.out.clone()] } else { inputs.to_vec() };
                let dir = self.fresh_stage(Command::Report)?;
                crate::report::report(&inputs, &dir, force)?;
                write_manifest(&dir, Command::Report.name(), Command::Report.stage(), &self.config, &[])
            }
        }
    }

    /// Runs every stage of one experiment in order.
    pub fn execute_all(&self) -> Result<(), CliError> {
        for c in Command::STAGES {
            self.execute(c, &[], false)?;
        }
        Ok(())
    }

    fn levels(&self) -> Vec<(String, f64)> {
        self.config.scenario.mp_test.iter().map(|&mp| (level_name(mp), mp)).collect()
    }

    pub fn gen_data(&self) -> Result<(), CliError> {
        let dir = self.fresh_stage(Command::GenData)?;
        let cfg = &self.config;
        let spec = cfg.phantom_spec(self.seed_of("phantoms"))?;
        let dataset = Dataset::generate(&spec, cfg.phantom.train, cfg.phantom.test)?;
        let shape_spec = cfg.phantom_spec(self.seed_of("shapes"))?;
        let mut library = ShapeLibrary::new();
        for (_, landmarks) in generate_many(&shape_spec, cfg.phantom.shapes)? {
            library.push(landmarks, Provenance::Construction)?;
        }
        library.save(&dir.join("shapes.csv"))?;
        let tag = cfg.tag()?;
        let options = cfg.scenario_options();
        for (i, (name, mp)) in self.levels().into_iter().enumerate() {
            // Every level replays the same stream, so the training crops coincide.
            let mut rng = self.rng("scenario");
            let split = make_scenario(&dataset, tag, cfg.scenario.mp_train, mp, &options, &mut rng)?;
            if i == 0 {
                let train = ScenarioSplit { test: vec![], ..split.clone() };
                save_split(&train, &dir.join("train"))?;
            }
            save_split(&ScenarioSplit { train: vec![], ..split }, &dir.join(format!("test_{name}")))?;
        }
        write_manifest(&dir, Command::GenData.name(), Command::GenData.stage(),
            cfg,
            &[("phantoms", self.seed_of("phantoms")), ("shapes", self.seed_of("shapes")), ("scenario", self.seed_of("scenario"))],
        )
    }

    fn construction_shapes(&self) -> Result<Vec<LandmarkSet>, CliError> {
        let path = self.upstream(Command::GenData)?.join("shapes.csv");
        let library = load_library(&path)?;
        Ok(library.shapes().to_vec())
    }

    pub fn build_ssm(&self) -> Result<(), CliError> {
        let shapes = self.construction_shapes()?;
        let dir = self.fresh_stage(Command::BuildSsm)?;
        let model = build_ssm(&shapes, self.config.ssm.modes)?;
        save_model(&model, &dir.join("model.ssm"))?;
        let mut summary = String::from("mode,variance\n");
        for (i, v) in model.variances().iter().enumerate() {
            let _ = writeln!(summary, "{i},{v}");
        }
        fs::write(dir.join("variances.csv"), summary)?;
        write_manifest(&dir, Command::BuildSsm.name(), Command::BuildSsm.stage(), &self.config, &[])
    }

    fn model(&self) -> Result<ShapeModel, CliError> {
        let path = self.upstream(Command::BuildSsm)?.join("model.ssm");
        require(&path)?;
        Ok(load_model(&path)?)
    }

    pub fn pretrain_ssm(&self) -> Result<(), CliError> {
        let model = self.model()?;
        let shapes = self.construction_shapes()?;
        let dir = self.fresh_stage(Command::PretrainSsm)?;
        let mut net = DeepSsmNet::new(model, &self.config.ssm.hidden, &mut self.rng("ssmnet-init"))?;
        let mut library = ShapeLibrary::new();
        for s in &shapes {
            library.push(s.clone(), Provenance::Construction)?;
        }
        let schedule = self.config.pretrain_schedule()?;
        let losses = net.pretrain(&mut library, self.config.ssm.pretrain_samples, &schedule, &mut self.rng("pretrain"))?;
        let tau = net.calibrate_threshold(&shapes)?;
        checkpoint::save(net.params(), &dir.join("net.ckpt"))?;
        library.save(&dir.join("library.csv"))?;
        let mut log = String::from("epoch,loss\n");
        for (e, l) in losses.iter().enumerate() {
            let _ = writeln!(log, "{e},{l}");
        }
        fs::write(dir.join("pretrain_loss.csv"), log)?;
        fs::write(dir.join("tau.txt"), format!("{tau}\n"))?;
        write_manifest(&dir, Command::PretrainSsm.name(), Command::PretrainSsm.stage(),
            &self.config,
            &[("ssmnet-init", self.seed_of("ssmnet-init")), ("pretrain", self.seed_of("pretrain"))],
        )
    }

    fn ssmnet_from(&self, model: ShapeModel, path: &Path) -> Result<DeepSsmNet, CliError> {
        require(path)?;
        let spec = DeepSsmNet::spec_for(&model, &self.config.ssm.hidden);
        Ok(DeepSsmNet::from_params(model, spec, checkpoint::load(path)?)?)
    }

    pub fn train(&self) -> Result<(), CliError> {
        let data = self.upstream(Command::GenData)?;
        let pre = self.upstream(Command::PretrainSsm)?;
        let model = self.model()?;
        let split = load_split_dir(&data.join("train"))?;
        let net = self.ssmnet_from(model, &pre.join("net.ckpt"))?;
        let library = load_library(&pre.join("library.csv"))?;
        let dir = self.fresh_stage(Command::Train)?;

        let env = self.config.env_config()?;
        let schedule = self.config.train_schedule()?;
        let dim = split.train[0].image.dim();
        let agents = split.train[0].landmarks.len();
        let spec = self.config.qnet_shape().spec(&env, dim, agents);
        let qnet = QNetwork::new(spec, &mut self.rng("qnet-init"))?;
        let mut joint = JointTraining::new(net, library, self.config.joint_schedule(), self.seed_of("joint"));
        let hooks: Option<&mut dyn ShapeHooks> = Some(&mut joint);
        let (qnet, log) = train(qnet, &split.train, &env, &schedule, hooks, &mut self.rng("train"))?;

        checkpoint::save(qnet.online(), &dir.join("qnet.ckpt"))?;
        checkpoint::save(joint.net.params(), &dir.join("ssmnet.ckpt"))?;
        joint.library.save(&dir.join("library.csv"))?;
        fs::write(dir.join("log.csv"), log.to_csv())?;
        let mut refresh = String::from("refresh,loss\n");
        for (i, l) in log.refresh_losses.iter().enumerate() {
            let _ = writeln!(refresh, "{i},{l}");
        }
        fs::write(dir.join("joint_loss.csv"), refresh)?;
        write_manifest(&dir, Command::Train.name(), Command::Train.stage(),
            &self.config,
            &[("qnet-init", self.seed_of("qnet-init")), ("train", self.seed_of("train")), ("joint", self.seed_of("joint"))],
        )
    }

    fn workers(&self) -> usize {
        match self.config.detect.workers {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            n => n,
        }
    }

    fn tau(&self) -> Result<f64, CliError> {
        if let Some(t) = self.config.detect.tau {
            return Ok(t);
        }
        let path = self.upstream(Command::PretrainSsm)?.join("tau.txt");
        require(&path)?;
        let text = fs::read_to_string(&path)?;
        text.trim().parse().map_err(|_| CliError::Runtime(format!("{}: not a number", path.display())))
    }

    pub fn detect(&self) -> Result<(), CliError> {
        let data = self.upstream(Command::GenData)?;
        let trained = self.upstream(Command::Train)?;
        let model = self.model()?;
        let tau = self.tau()?;
        let qpath = trained.join("qnet.ckpt");
        require(&qpath)?;
        let mut tests = Vec::new();
        for (name, _) in self.levels() {
            tests.push((name.clone(), load_split_dir(&data.join(format!("test_{name}")))?));
        }
        let network = self.ssmnet_from(model.clone(), &trained.join("ssmnet.ckpt"))?;
        let closed = ClosedFormFit { model, config: FitConfig::clamped() };
        let regressor: &(dyn ShapeRegressor + Sync) = match self.config.regressor()? {
            RegressorKind::Network => &network,
            RegressorKind::ClosedForm => &closed,
        };
        let dir = self.fresh_stage(Command::Detect)?;

        let env = self.config.env_config()?;
        let first = &tests[0].1.test[0];
        let spec = self.config.qnet_shape().spec(&env, first.image.dim(), first.landmarks.len());
        let qnet = QNetwork::from_params(spec, checkpoint::load(&qpath)?)?;
        let config = DetectConfig {
            env,
            convergence: Some(self.config.detect.convergence),
            regularizer: RegularizerConfig {
                tau,
                max_subiterations: self.config.detect.max_subiterations,
                max_iterations: self.config.detect.max_iterations,
            },
        };
        for (name, split) in &tests {
            for method in METHODS {
                let out = dir.join(name).join(method);
                fs::create_dir_all(&out)?;
                let correct = method == "SGMaRL";
                let results = parallel_map(&split.test, self.workers(), |i, case| {
                    // Both methods share the per-case stream, so their first navigation coincides.
                    let mut rng = self.rng(&format!("detect/{name}/{i}"));
                    let reg = correct.then_some(regressor as &dyn ShapeRegressor);
                    detect(&case.image, &qnet, reg, &config, &mut rng)
                });
                for (i, r) in results.into_iter().enumerate() {
                    let r = r?;
                    save_landmarks(&r.prediction, &out.join(format!("test_{i:04}.csv")))?;
                    fs::write(out.join(format!("test_{i:04}_snapshots.csv")), r.snapshots_csv())?;
                }
            }
        }
        fs::write(dir.join("tau.txt"), format!("{tau}\n"))?;
        write_manifest(&dir, Command::Detect.name(), Command::Detect.stage(), &self.config, &[("detect", self.seed)])
    }

    pub fn eval(&self) -> Result<(), CliError> {
        let data = self.upstream(Command::GenData)?;
        let detected = self.upstream(Command::Detect)?;
        let cardiac = self.config.family()? == sgmarl_core::grid::PhantomFamily::CardiacRings2D;
        let tag = self.config.tag()?;
        let mut tests = Vec::new();
        for (name, mp) in self.levels() {
            tests.push((name.clone(), mp, load_split_dir(&data.join(format!("test_{name}")))?));
        }
        let mut preds = Vec::new();
        for (name, _, split) in &tests {
            for method in METHODS {
                let mut v = Vec::with_capacity(split.test.len());
                for i in 0..split.test.len() {
                    let path = detected.join(name).join(method).join(format!("test_{i:04}.csv"));
                    require(&path)?;
                    v.push(load_landmarks(&path)?);
                }
                preds.push(v);
            }
        }
        let dir = self.fresh_stage(Command::Eval)?;
        let mut rows = String::from(LANDMARK_HEADER);
        rows.push('\n');
        let mut seg = String::from(SEGMENTATION_HEADER);
        seg.push('\n');
        let mut k = 0;
        for (name, mp, split) in &tests {
            for method in METHODS {
                let results = parallel_map(&split.test, self.workers(), |i, case| {
                    evaluate_case(case, &preds[k][i], cardiac)
                });
                for (i, r) in results.into_iter().enumerate() {
                    let (l, s) = r?;
                    let _ = writeln!(
                        rows,
                        "{method},{tag},{mp},{},{},{},{}",
                        case_id(name, i),
                        l.ade,
                        l.ade_in,
                        l.ade_out
                    );
                    for row in s {
                        let _ = writeln!(
                            seg,
                            "{method},{tag},{mp},{},{},{},{},{},{}",
                            case_id(name, i),
                            row.label,
                            row.dice,
                            row.asd_mm,
                            row.hd_mm,
                            row.valid
                        );
                    }
                }
                k += 1;
            }
        }
        fs::write(dir.join("landmarks.csv"), rows)?;
        if cardiac {
            fs::write(dir.join("segmentation.csv"), seg)?;
        }
        write_manifest(&dir, Command::Eval.name(), Command::Eval.stage(), &self.config, &[])
    }
}

pub const LANDMARK_HEADER: &str = "method,scenario,mp_test,case,ade_mm,ade_in_mm,ade_out_mm";
pub const SEGMENTATION_HEADER: &str = "method,scenario,mp_test,case,label,dice,asd_mm,hd_mm,valid";

fn case_id(level: &str, i: usize) -> String {
    format!("{level}/test_{i:04}")
}

/// Distances of one prediction: over the scored indices, the indices inside the image and
/// those outside it (NaN when a group is empty).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaseScore {
    pub ade: f64,
    pub ade_in: f64,
    pub ade_out: f64,
}

pub struct SegScore {
    pub label: String,
    pub dice: f64,
    pub asd_mm: f64,
    pub hd_mm: f64,
    /// Whether the predicted landmarks could be converted to a segmentation.
    pub valid: bool,
}

pub fn score_case(case: &Case, pred: &LandmarkSet) -> Result<CaseScore, CliError> {
    let spacing = case.image.spacing();
    let truth = &case.landmarks;
    let inside: Vec<usize> = truth.available_indices();
    let outside: Vec<usize> = (0..truth.len()).filter(|&j| !truth.is_available(j)).collect();
    let group = |idx: &[usize]| -> Result<f64, CliError> {
        if idx.is_empty() {
            Ok(f64::NAN)
        } else {
            Ok(ade(pred, truth, idx, spacing)?)
        }
    };
    Ok(CaseScore { ade: group(&case.eval_indices)?, ade_in: group(&inside)?, ade_out: group(&outside)? })
}

fn evaluate_case(case: &Case, pred: &LandmarkSet, cardiac: bool) -> Result<(CaseScore, Vec<SegScore>), CliError> {
    let score = score_case(case, pred)?;
    if !cardiac {
        return Ok((score, vec![]));
    }
    let ext = case.image.parent_extents();
    let sp = case.image.spacing();
    let (extents, spacing) = ([ext[0], ext[1]], [sp[0], sp[1]]);
    let truth = landmarks_to_seg(&case.landmarks.completed(), extents, spacing)?;
    let rows = match landmarks_to_seg(pred, extents, spacing) {
        Ok(mask) => segmentation_rows("", &mask, &truth, score.ade)?
            .into_iter()
            .map(|r| SegScore { label: r.label, dice: r.dice, asd_mm: r.asd_mm, hd_mm: r.hd_mm, valid: true })
            .collect(),
        Err(sgmarl_core::Error::Transform(_)) => {
            let empty = LabelMask::new(extents, spacing, vec![0; extents[0] * extents[1]])?;
            segmentation_rows("", &empty, &truth, score.ade)?
                .into_iter()
                .map(|r| SegScore { label: r.label, dice: r.dice, asd_mm: r.asd_mm, hd_mm: r.hd_mm, valid: false })
                .collect()
        }
        Err(e) => return Err(e.into()),
    };
    Ok((score, rows))
}

/// Maps `f` over `items` on up to `workers` threads; results keep the input order.
pub fn parallel_map<T: Sync, U: Send, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Dependency(path.to_path_buf()))
    }
}

fn load_split_dir(dir: &Path) -> Result<ScenarioSplit, CliError> {
    require(&dir.join("scenario.txt"))?;
    Ok(load_split(dir)?)
}

fn load_library(path: &Path) -> Result<ShapeLibrary, CliError> {
    require(path)?;
    Ok(ShapeLibrary::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..37).collect();
        for workers in [1, 3, 8] {
            assert_eq!(parallel_map(&items, workers, |i, &x| i * 100 + x), (0..37).map(|x| x * 101).collect::<Vec<_>>());
        }
        assert!(parallel_map(&[] as &[u8], 4, |_, _| 0).is_empty());
    }
}
