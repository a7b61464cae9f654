use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::crop::crop_missing;
use super::phantom::{generate_many, PhantomSpec};
use super::{GridImage, LandmarkSet};
use crate::error::{Error, Result};

/// Which parts of the data are incomplete, and what the test is asked to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioTag {
    /// Complete images and labels everywhere.
    Baseline,
    /// Cropped training images with correspondingly reduced labels.
    I,
    /// Complete training images, each labelled for only one group of landmarks.
    II,
    /// Complete training data; cropped test images scored on the landmarks they contain.
    III,
    /// As `III`, but scored on every landmark including those outside the image.
    IV,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 5] =
        [ScenarioTag::Baseline, ScenarioTag::I, ScenarioTag::II, ScenarioTag::III, ScenarioTag::IV];
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioTag::Baseline => "baseline",
            ScenarioTag::I => "I",
            ScenarioTag::II => "II",
            ScenarioTag::III => "III",
            ScenarioTag::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "Baseline" => Ok(ScenarioTag::Baseline),
            "I" | "i" => Ok(ScenarioTag::I),
            "II" | "ii" => Ok(ScenarioTag::II),
            "III" | "iii" => Ok(ScenarioTag::III),
            "IV" | "iv" => Ok(ScenarioTag::IV),
            other => Err(Error::Argument(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Complete images with complete labels, already split into training and test pools.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<(GridImage, LandmarkSet)>,
    pub test: Vec<(GridImage, LandmarkSet)>,
}

impl Dataset {
    /// The first `n_train` phantoms of the seeded stream train, the next `n_test` test.
    pub fn generate(spec: &PhantomSpec, n_train: usize, n_test: usize) -> Result<Self> {
        let mut all = generate_many(spec, n_train + n_test)?;
        let test = all.split_off(n_train);
        Ok(Self { train: all, test })
    }
}

/// One image of a scenario together with what the learner or evaluator may see.
#[derive(Clone, Debug)]
pub struct Case {
    pub image: GridImage,
    /// Ground-truth coordinates; availability marks the labels usable for this image.
    pub landmarks: LandmarkSet,
    /// Indices scored at evaluation (test cases only; empty for training cases).
    pub eval_indices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ScenarioSplit {
    pub tag: ScenarioTag,
    pub train: Vec<Case>,
    pub test: Vec<Case>,
    pub mp_train: f64,
    pub mp_test: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOptions {
    /// Landmarks closer than this to a cut edge count as missing.
    pub margin: f64,
    /// First label group for scenario II; the remaining indices form the second.
    /// Defaults to the first half of the indices.
    pub label_group: Option<Vec<usize>>,
    /// How many times the scenario I crops may be redrawn to cover every landmark.
    pub max_redraws: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { margin: 0.0, label_group: None, max_redraws: 200 }
    }
}

fn training_cases(pool: &[(GridImage, LandmarkSet)]) -> Vec<Case> {
    pool.iter()
        .map(|(image, landmarks)| Case { image: image.clone(), landmarks: landmarks.clone(), eval_indices: vec![] })
        .collect()
}

fn cropped_tests<R: Rng + ?Sized>(
    pool: &[(GridImage, LandmarkSet)],
    mp: f64,
    margin: f64,
    all_indices: bool,
    rng: &mut R,
) -> Result<Vec<Case>> {
    pool.iter()
        .map(|(image, landmarks)| {
            let (image, landmarks) = crop_missing(image, landmarks, mp, margin, rng)?;
            let eval_indices =
                if all_indices { (0..landmarks.len()).collect() } else { landmarks.available_indices() };
            Ok(Case { image, landmarks, eval_indices })
        })
        .collect()
}

fn covers_all(cases: &[Case], count: usize) -> bool {
    (0..count).all(|j| cases.iter().any(|c| c.landmarks.is_available(j)))
}

/// Builds one of the five train/test constructions from complete data.
pub fn make_scenario<R: Rng + ?Sized>(
    dataset: &Dataset,
    tag: ScenarioTag,
    mp_train: f64,
    mp_test: f64,
    options: &ScenarioOptions,
    rng: &mut R,
) -> Result<ScenarioSplit> {
    if dataset.train.is_empty() {
        return Err(Error::Generation("dataset has no training images".into()));
    }
    for (image, landmarks) in dataset.train.iter().chain(&dataset.test) {
        if !image.is_complete() || !landmarks.all_available() {
            return Err(Error::Argument("scenarios are built from complete images and labels".into()));
        }
    }
    let count = dataset.train[0].1.len();
    let margin = options.margin;
    let (train, test, mp_train, mp_test) = match tag {
        ScenarioTag::Baseline => (training_cases(&dataset.train), cropped_tests(&dataset.test, 0.0, margin, true, rng)?, 0.0, 0.0),
        ScenarioTag::I => {
            let mut attempt = 0;
            let train = loop {
                let cases = cropped_tests(&dataset.train, mp_train, margin, true, rng)?
                    .into_iter()
                    .map(|c| Case { eval_indices: vec![], ..c })
                    .collect::<Vec<_>>();
                if covers_all(&cases, count) {
                    break cases;
                }
                attempt += 1;
                if attempt > options.max_redraws {
                    return Err(Error::Generation(format!(
                        "{} training images cropped at {mp_train}% never covered all {count} landmarks in {} draws",
                        dataset.train.len(),
                        options.max_redraws + 1
                    )));
                }
            };
            (train, cropped_tests(&dataset.test, mp_test, margin, true, rng)?, mp_train, mp_test)
        }
        ScenarioTag::II => {
            let group: Vec<usize> = options.label_group.clone().unwrap_or_else(|| (0..count / 2).collect());
            if group.is_empty() || group.len() >= count || group.iter().any(|&j| j >= count) {
                return Err(Error::Argument("label group must be a proper, non-empty subset of the indices".into()));
            }
            let mut order: Vec<usize> = (0..dataset.train.len()).collect();
            order.shuffle(rng);
            let first_half = order.len() / 2;
            let mut train = training_cases(&dataset.train);
            for (rank, &i) in order.iter().enumerate() {
                let keep_group = rank < first_half;
                let landmarks = &mut train[i].landmarks;
                for j in 0..count {
                    let in_group = group.contains(&j);
                    landmarks.set_available(j, in_group == keep_group);
                }
            }
            (train, cropped_tests(&dataset.test, 0.0, margin, true, rng)?, 0.0, 0.0)
        }
        ScenarioTag::III | ScenarioTag::IV => {
            let all = tag == ScenarioTag::IV;
            (training_cases(&dataset.train), cropped_tests(&dataset.test, mp_test, margin, all, rng)?, 0.0, mp_test)
        }
    };
    Ok(ScenarioSplit { tag, train, test, mp_train, mp_test })
}
