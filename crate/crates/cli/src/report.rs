use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::manifest::read_manifest;
use crate::pipeline::{LANDMARK_HEADER, SEGMENTATION_HEADER};

/// Mean and sample standard deviation of the finite values; NaN mean when there are none.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, std, n }
    }

    fn cell(&self) -> String {
        if self.mean.is_nan() {
            "-".into()
        } else {
            format!("{:.2} ± {:.2}", self.mean, self.std)
        }
    }
}

/// Grouping key of the summary tables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub method: String,
    pub scenario: String,
    pub mp_test: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSummary {
    pub key: GroupKey,
    pub runs: usize,
    pub cases: usize,
    pub ade: Stat,
    pub ade_in: Stat,
    pub ade_out: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSummary {
    pub key: GroupKey,
    pub label: String,
    pub cases: usize,
    pub invalid: usize,
    pub dice: Stat,
    pub asd: Stat,
    pub hd: Stat,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub landmarks: Vec<LandmarkSummary>,
    pub segmentation: Vec<SegmentationSummary>,
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(CliError::Runtime(format!("{}: unexpected header", path.display())));
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<String> = l.split(',').map(str::to_string).collect();
            if f.len() == width {
                Ok(f)
            } else {
                Err(CliError::Runtime(format!("{}: malformed row '{l}'", path.display())))
            }
        })
        .collect()
}

fn number(s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Runtime(format!("'{s}' is not a number")))
}

/// Aggregates the evaluation tables of `runs` into `out/summary.{csv,md}`.
///
/// Runs must share one comparison hash (same experiment up to seed and scenario) unless
/// `force` is set.
pub fn report(runs: &[PathBuf], out: &Path, force: bool) -> Result<Summary, CliError> {
    let mut hashes = BTreeSet::new();
    let mut lm: BTreeMap<GroupKey, (BTreeSet<usize>, Vec<[f64; 3]>)> = BTreeMap::new();
    let mut seg: BTreeMap<(GroupKey, String), (usize, Vec<[f64; 3]>)> = BTreeMap::new();
    for (r, run) in runs.iter().enumerate() {
        let eval = run.join("eval");
        let info = read_manifest(&eval)?;
        hashes.insert(info.comparison_hash);
        let table = eval.join("landmarks.csv");
        if !table.is_file() {
            return Err(CliError::Dependency(table));
        }
        for f in read_rows(&table, LANDMARK_HEADER)? {
            let key = GroupKey { method: f[0].clone(), scenario: f[1].clone(), mp_test: f[2].clone() };
            let entry = lm.entry(key).or_default();
            entry.0.insert(r);
            entry.1.push([number(&f[4])?, number(&f[5])?, number(&f[6])?]);
        }
        let seg_table = eval.join("segmentation.csv");
        if seg_table.is_file() {
            for f in read_rows(&seg_table, SEGMENTATION_HEADER)? {
                let key = GroupKey { method: f[0].clone(), scenario: f[1].clone(), mp_test: f[2].clone() };
                let entry = seg.entry((key, f[4].clone())).or_default();
                if f[8] != "true" {
                    entry.0 += 1;
                }
                entry.1.push([number(&f[5])?, number(&f[6])?, number(&f[7])?]);
            }
        }
    }
    if hashes.len() > 1 && !force {
        return Err(CliError::Config(format!(
            "runs come from {} different configurations; pass --force to aggregate them anyway",
            hashes.len()
        )));
    }
    let column = |v: &[[f64; 3]], i: usize| -> Vec<f64> { v.iter().map(|x| x[i]).collect() };
    let mut summary = Summary::default();
    for (key, (run_set, values)) in lm {
        summary.landmarks.push(LandmarkSummary {
            key,
            runs: run_set.len(),
            cases: values.len(),
            ade: Stat::of(&column(&values, 0)),
            ade_in: Stat::of(&column(&values, 1)),
            ade_out: Stat::of(&column(&values, 2)),
        });
    }
    for ((key, label), (invalid, values)) in seg {
        summary.segmentation.push(SegmentationSummary {
            key,
            label,
            cases: values.len(),
            invalid,
            dice: Stat::of(&column(&values, 0)),
            asd: Stat::of(&column(&values, 1)),
            hd: Stat::of(&column(&values, 2)),
        });
    }
    write_summary(&summary, out)?;
    Ok(summary)
}

fn write_summary(summary: &Summary, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut csv = String::from(
        "method,scenario,mp_test,runs,cases,ade_mean,ade_std,ade_in_mean,ade_in_std,ade_out_mean,ade_out_std\n",
    );
    let mut md = String::from("| Method | Scenario | mp_test | Runs | Cases | ADE (mm) | ADE in FOV | ADE outside FOV |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for s in &summary.landmarks {
        let k = &s.key;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            k.method, k.scenario, k.mp_test, s.runs, s.cases, s.ade.mean, s.ade.std, s.ade_in.mean, s.ade_in.std,
            s.ade_out.mean, s.ade_out.std
        );
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            k.method,
            k.scenario,
            k.mp_test,
            s.runs,
            s.cases,
            s.ade.cell(),
            s.ade_in.cell(),
            s.ade_out.cell()
        );
    }
    fs::write(out.join("summary.csv"), csv)?;
    if !summary.segmentation.is_empty() {
        let mut csv =
            String::from("method,scenario,mp_test,label,cases,invalid,dice_mean,dice_std,asd_mean,asd_std,hd_mean,hd_std\n");
        md.push_str("\n| Method | Scenario | mp_test | Label | Dice | ASD (mm) | HD (mm) | Invalid |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for s in &summary.segmentation {
            let k = &s.key;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                k.method, k.scenario, k.mp_test, s.label, s.cases, s.invalid, s.dice.mean, s.dice.std, s.asd.mean,
                s.asd.std, s.hd.mean, s.hd.std
            );
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                k.method,
                k.scenario,
                k.mp_test,
                s.label,
                s.dice.cell(),
                s.asd.cell(),
                s.hd.cell(),
                s.invalid
            );
        }
        fs::write(out.join("segmentation_summary.csv"), csv)?;
    }
    fs::write(out.join("summary.md"), md)?;
    Ok(())
}
