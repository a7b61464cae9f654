use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::scenario::{Case, ScenarioSplit, ScenarioTag};
use super::{GridImage, LandmarkSet};
use crate::error::{Error, Result};

const IMAGE_MAGIC: &str = "SGMIMG";
const IMAGE_VERSION: u32 = 1;

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Text header followed by little-endian f32 voxels, axis 0 slowest.
pub fn encode_image(image: &GridImage) -> Vec<u8> {
    let mut header = String::new();
    let _ = writeln!(header, "{IMAGE_MAGIC} {IMAGE_VERSION}");
    let _ = writeln!(header, "dim {}", image.dim());
    let _ = writeln!(header, "extents {}", join(image.extents()));
    let _ = writeln!(header, "spacing {}", join(image.spacing()));
    let _ = writeln!(header, "fov_origin {}", join(image.fov_origin()));
    let _ = writeln!(header, "parent_extents {}", join(image.parent_extents()));
    let _ = writeln!(header, "payload f32le {}", image.len() * 4);
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_list<T: std::str::FromStr>(line: &str, key: &str) -> Result<Vec<T>> {
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some(r) } else { None }))
        .ok_or_else(|| Error::Format(format!("expected '{key}' record, found '{line}'")))?;
    rest.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::Format(format!("bad value '{t}' in '{key}' record"))))
        .collect()
}

pub fn decode_image(bytes: &[u8]) -> Result<GridImage> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("image header is not terminated".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::Format("image header is not UTF-8".into()))?
            .to_string();
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
        if lines.len() > 16 {
            return Err(Error::Format("image header too long".into()));
        }
    }
    if lines.len() != 7 || lines[0] != format!("{IMAGE_MAGIC} {IMAGE_VERSION}") {
        return Err(Error::Format("not an image container of a supported version".into()));
    }
    let dim: Vec<usize> = parse_list(&lines[1], "dim")?;
    let extents: Vec<usize> = parse_list(&lines[2], "extents")?;
    let spacing: Vec<f64> = parse_list(&lines[3], "spacing")?;
    let origin: Vec<usize> = parse_list(&lines[4], "fov_origin")?;
    let parent: Vec<usize> = parse_list(&lines[5], "parent_extents")?;
    let payload = lines[6]
        .strip_prefix("payload f32le ")
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| Error::Format("bad payload record".into()))?;
    if dim.len() != 1 || dim[0] != extents.len() {
        return Err(Error::Format("dimension record disagrees with extents".into()));
    }
    if bytes.len() - pos != payload || payload != extents.iter().product::<usize>() * 4 {
        return Err(Error::Format("image payload length mismatch".into()));
    }
    let data = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    GridImage::with_fov(extents, spacing, origin, parent, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_image(image: &GridImage, path: &Path) -> Result<()> {
    fs::write(path, encode_image(image))?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<GridImage> {
    decode_image(&fs::read(path)?)
}

/// CSV with columns `index,available,c0,c1[,c2]`.
pub fn landmarks_to_csv(landmarks: &LandmarkSet) -> String {
    let mut out = String::from("index,available");
    for d in 0..landmarks.dim() {
        let _ = write!(out, ",c{d}");
    }
    out.push('\n');
    for j in 0..landmarks.len() {
        let _ = write!(out, "{j},{}", u8::from(landmarks.is_available(j)));
        for c in landmarks.point(j) {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn landmarks_from_csv(text: &str) -> Result<LandmarkSet> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty landmark file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "index" || cols[1] != "available" {
        return Err(Error::Format(format!("unexpected landmark header '{header}'")));
    }
    let dim = cols.len() - 2;
    let mut coords = Vec::new();
    let mut available = Vec::new();
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 2 {
            return Err(Error::Format(format!("landmark row {row} has {} fields", f.len())));
        }
        if f[0].parse::<usize>().ok() != Some(row) {
            return Err(Error::Format(format!("landmark rows out of order at row {row}")));
        }
        available.push(match f[1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Format(format!("bad availability flag '{other}'"))),
        });
        for v in &f[2..] {
            coords.push(v.parse::<f64>().map_err(|_| Error::Format(format!("bad coordinate '{v}'")))?);
        }
    }
    LandmarkSet::new(dim, coords, available).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_landmarks(landmarks: &LandmarkSet, path: &Path) -> Result<()> {
    fs::write(path, landmarks_to_csv(landmarks))?;
    Ok(())
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    landmarks_from_csv(&fs::read_to_string(path)?)
}

/// Writes every case as `<role>_<nnnn>.img` / `.csv` plus a `scenario.txt` manifest.
pub fn save_split(split: &ScenarioSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "scenario {}", split.tag);
    let _ = writeln!(manifest, "mp_train {}", split.mp_train);
    let _ = writeln!(manifest, "mp_test {}", split.mp_test);
    for (role, cases) in [("train", &split.train), ("test", &split.test)] {
        for (i, case) in cases.iter().enumerate() {
            let stem = format!("{role}_{i:04}");
            save_image(&case.image, &dir.join(format!("{stem}.img")))?;
            save_landmarks(&case.landmarks, &dir.join(format!("{stem}.csv")))?;
            let _ = writeln!(manifest, "{role} {stem} eval {}", join(&case.eval_indices));
        }
    }
    let mut f = fs::File::create(dir.join("scenario.txt"))?;
    f.write_all(manifest.as_bytes())?;
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<ScenarioSplit> {
    let path = dir.join("scenario.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().unwrap_or_default();
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("manifest: expected '{key}', found '{line}'")))
    };
    let tag: ScenarioTag = field("scenario")?.parse()?;
    let mp_train: f64 = field("mp_train")?.parse().map_err(|_| Error::Format("bad mp_train".into()))?;
    let mp_test: f64 = field("mp_test")?.parse().map_err(|_| Error::Format("bad mp_test".into()))?;
    let mut split = ScenarioSplit { tag, train: vec![], test: vec![], mp_train, mp_test };
    for line in text.lines().skip(3).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 || f[2] != "eval" {
            return Err(Error::Format(format!("manifest: bad case line '{line}'")));
        }
        let eval_indices = f[3..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad index '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        let case = Case {
            image: load_image(&dir.join(format!("{}.img", f[1])))?,
            landmarks: load_landmarks(&dir.join(format!("{}.csv", f[1])))?,
            eval_indices,
        };
        match f[0] {
            "train" => split.train.push(case),
            "test" => split.test.push(case),
            other => return Err(Error::Format(format!("manifest: unknown role '{other}'"))),
        }
    }
    Ok(split)
}
