use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::LandmarkSet;

/// Where a library shape came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Construction,
    Sampled,
    MaqPrediction,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Construction => "construction",
            Provenance::Sampled => "sampled",
            Provenance::MaqPrediction => "maq-prediction",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "construction" => Ok(Provenance::Construction),
            "sampled" => Ok(Provenance::Sampled),
            "maq-prediction" => Ok(Provenance::MaqPrediction),
            _ => Err(Error::Format(format!("unknown shape provenance {s:?}"))),
        }
    }
}

/// Growable set of complete landmark sets used to train the shape regressor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeLibrary {
    shapes: Vec<LandmarkSet>,
    provenance: Vec<Provenance>,
}

impl ShapeLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, shape: LandmarkSet, provenance: Provenance) -> Result<()> {
        if !shape.all_available() {
            return Err(Error::Argument("library shapes must have every landmark available".into()));
        }
        if let Some(first) = self.shapes.first() {
            if first.dim() != shape.dim() || first.len() != shape.len() {
                return Err(Error::Argument(format!(
                    "library holds {} landmarks in {}D, got {} in {}D",
                    first.len(),
                    first.dim(),
                    shape.len(),
                    shape.dim()
                )));
            }
        }
        self.shapes.push(shape);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[LandmarkSet] {
        &self.shapes
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == provenance).count()
    }

    /// Uniform draw with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&LandmarkSet> {
        if self.shapes.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.shapes[rng.random_range(0..self.shapes.len())]).collect()
    }

    /// Rows `shape,provenance,index,c0,c1[,c2]`.
    pub fn to_csv(&self) -> String {
        let dim = self.shapes.first().map_or(2, LandmarkSet::dim);
        let mut out = String::from("shape,provenance,index");
        for d in 0..dim {
            let _ = write!(out, ",c{d}");
        }
        out.push('\n');
        for (s, (shape, prov)) in self.shapes.iter().zip(&self.provenance).enumerate() {
            for (j, p) in shape.points().enumerate() {
                let _ = write!(out, "{s},{prov},{j}");
                for c in p {
                    let _ = write!(out, ",{c}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty library file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 5 || cols[..3] != ["shape", "provenance", "index"] {
            return Err(Error::Format(format!("unexpected library header {header:?}")));
        }
        let dim = cols.len() - 3;
        let mut library = Self::new();
        let mut current: Option<(usize, Provenance, Vec<f64>)> = None;
        let bad = |line: &str| Error::Format(format!("malformed library row {line:?}"));
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != cols.len() {
                return Err(bad(line));
            }
            let s: usize = f[0].parse().map_err(|_| bad(line))?;
            let prov: Provenance = f[1].parse()?;
            let coords: Vec<f64> = f[3..].iter().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad(line))?;
            match current.as_mut() {
                Some((cs, cp, buf)) if *cs == s => {
                    if *cp != prov {
                        return Err(bad(line));
                    }
                    buf.extend(coords);
                }
                _ => {
                    if let Some((_, p, buf)) = current.take() {
                        library.push(LandmarkSet::complete(dim, buf)?, p)?;
                    }
                    current = Some((s, prov, coords));
                }
            }
        }
        if let Some((_, p, buf)) = current {
            library.push(LandmarkSet::complete(dim, buf)?, p)?;
        }
        Ok(library)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
