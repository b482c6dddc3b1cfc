//! Discretized domain, objective functions, noisy queries and prior-knowledge
//! allocation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `nx × ny` grid over the unit square. Cell `(ix, iy)` sits at
/// `(ix / (nx - 1), iy / (ny - 1))`. Flat indices are row-major with `nx`
/// rows: `ix * ny + iy`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridDomain {
    nx: usize,
    ny: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    nx: usize,
    ny: usize,
}

impl TryFrom<RawGrid> for GridDomain {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        GridDomain::new(r.nx, r.ny)
    }
}

impl From<GridDomain> for RawGrid {
    fn from(g: GridDomain) -> Self {
        RawGrid { nx: g.nx, ny: g.ny }
    }
}

impl GridDomain {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.ny, index % self.ny)
    }

    pub fn check(&self, ix: usize, iy: usize) -> Result<()> {
        if ix >= self.nx || iy >= self.ny {
            return Err(Error::OutOfRange {
                ix,
                iy,
                nx: self.nx,
                ny: self.ny,
            });
        }
        Ok(())
    }

    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            ix as f64 / (self.nx - 1) as f64,
            iy as f64 / (self.ny - 1) as f64,
        ]
    }

    /// Nearest cell to a point of the unit square.
    pub fn nearest(&self, p: [f64; 2]) -> (usize, usize) {
        let snap = |v: f64, n: usize| ((v.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize).min(n - 1);
        (snap(p[0], self.nx), snap(p[1], self.ny))
    }
}

/// One bump of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub location: [f64; 2],
    pub amplitude: f64,
}

pub const STANDARD_MODE_LOCATIONS: [[f64; 2]; 3] = [[0.46, 0.8], [0.22, 0.44], [0.74, 0.18]];
pub const DEFAULT_BUMP_WIDTH: f64 = 0.08;
pub const DEFAULT_NOISE_SD: f64 = 1.0;

fn default_grid_size() -> usize {
    50
}
fn default_noise_sd() -> f64 {
    DEFAULT_NOISE_SD
}
fn default_bump_width() -> f64 {
    DEFAULT_BUMP_WIDTH
}

/// Declarative description of an objective; readable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(default = "default_grid_size")]
    pub nx: usize,
    #[serde(default = "default_grid_size")]
    pub ny: usize,
    pub modes: Vec<Mode>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_bump_width")]
    pub bump_width: f64,
}

impl ObjectiveSpec {
    /// The three-mode test objective. `variant` (mod 3) selects which of the
    /// three mode locations carries the largest amplitude; variant 0 puts the
    /// global maximum at (0.46, 0.8).
    pub fn standard(variant: usize) -> Self {
        let global = variant % 3;
        let modes = STANDARD_MODE_LOCATIONS
            .iter()
            .enumerate()
            .map(|(k, &location)| Mode {
                location,
                amplitude: if k == global { 1.0 } else { 0.8 },
            })
            .collect();
        Self {
            nx: 50,
            ny: 50,
            modes,
            noise_sd: DEFAULT_NOISE_SD,
            bump_width: DEFAULT_BUMP_WIDTH,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// The objective evaluated on every grid cell, normalized to `[0, 100]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectiveGrid {
    grid: GridDomain,
    values: Vec<f64>,
    noise_sd: f64,
    modes: Vec<Mode>,
    global_mode: usize,
}

/// Evaluates a sum of isotropic Gaussian bumps on the grid and rescales it
/// affinely so that the grid minimum is 0 and the maximum is 100.
pub fn build_objective(spec: &ObjectiveSpec) -> Result<ObjectiveGrid> {
    let grid = GridDomain::new(spec.nx, spec.ny)?;
    if spec.modes.is_empty() {
        return Err(Error::InvalidObjective("no modes given".into()));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::InvalidObjective(format!("noise_sd = {}", spec.noise_sd)));
    }
    if !(spec.bump_width > 0.0) {
        return Err(Error::InvalidObjective(format!("bump_width = {}", spec.bump_width)));
    }
    for m in &spec.modes {
        if !(m.amplitude > 0.0 && m.amplitude.is_finite()) {
            return Err(Error::InvalidObjective(format!("amplitude {} must be > 0", m.amplitude)));
        }
        if m.location.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidObjective(format!(
                "mode location {:?} outside the unit square",
                m.location
            )));
        }
    }
    let top = spec.modes.iter().map(|m| m.amplitude).fold(f64::MIN, f64::max);
    let winners: Vec<usize> = (0..spec.modes.len())
        .filter(|&k| spec.modes[k].amplitude == top)
        .collect();
    if winners.len() != 1 {
        return Err(Error::InvalidObjective(
            "the largest amplitude must be unique".into(),
        ));
    }

    let two_w2 = 2.0 * spec.bump_width * spec.bump_width;
    let mut values: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let (ix, iy) = grid.cell(idx);
            let p = grid.point(ix, iy);
            spec.modes
                .iter()
                .map(|m| {
                    let dx = p[0] - m.location[0];
                    let dy = p[1] - m.location[1];
                    m.amplitude * (-(dx * dx + dy * dy) / two_w2).exp()
                })
                .sum()
        })
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InvalidObjective("objective is constant on the grid".into()));
    }
    for v in &mut values {
        *v = 100.0 * (*v - lo) / (hi - lo);
    }

    Ok(ObjectiveGrid {
        grid,
        values,
        noise_sd: spec.noise_sd,
        modes: spec.modes.clone(),
        global_mode: winners[0],
    })
}

impl ObjectiveGrid {
    pub fn grid(&self) -> GridDomain {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn global_mode(&self) -> Mode {
        self.modes[self.global_mode]
    }

    pub fn local_modes(&self) -> impl Iterator<Item = Mode> + '_ {
        self.modes
            .iter()
            .enumerate()
            .filter(move |(k, _)| *k != self.global_mode)
            .map(|(_, m)| *m)
    }

    pub fn value(&self, ix: usize, iy: usize) -> Result<f64> {
        self.grid.check(ix, iy)?;
        Ok(self.values[self.grid.index(ix, iy)])
    }

    /// Noisy evaluation `f(ix, iy) + ε`, `ε ~ N(0, noise_sd²)`.
    pub fn query<R: Rng + ?Sized>(&self, ix: usize, iy: usize, rng: &mut R) -> Result<f64> {
        let v = self.value(ix, iy)?;
        if self.noise_sd == 0.0 {
            return Ok(v);
        }
        let eps: f64 = rng.sample(StandardNormal);
        Ok(v + self.noise_sd * eps)
    }

    /// Cell of the grid maximum (lowest flat index on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.cell(best)
    }

    /// Writes the grid as CSV: `nx` rows of `ny` comma-separated values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_field_csv(self.grid, &self.values, out)
    }
}

/// Writes a row-major field (`nx` rows of `ny` values) as CSV.
pub fn write_field_csv<W: Write>(grid: GridDomain, field: &[f64], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for ix in 0..grid.nx() {
        let row = &field[ix * grid.ny()..(ix + 1) * grid.ny()];
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// One noisy function evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ix: usize,
    pub iy: usize,
    pub z: f64,
}

/// An ordered collection of observations on one grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSet(Vec<Observation>);

impl ObservationSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_vec(grid: &GridDomain, obs: Vec<Observation>) -> Result<Self> {
        for o in &obs {
            validate_observation(grid, o)?;
        }
        Ok(Self(obs))
    }

    pub fn push(&mut self, grid: &GridDomain, obs: Observation) -> Result<()> {
        validate_observation(grid, &obs)?;
        self.0.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Observation] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.0.iter()
    }

    /// Concatenation of `self` and `more`.
    pub fn chained(&self, more: &[Observation]) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(more);
        Self(v)
    }
}

impl<'a> IntoIterator for &'a ObservationSet {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub(crate) fn validate_observation(grid: &GridDomain, o: &Observation) -> Result<()> {
    grid.check(o.ix, o.iy)?;
    if !o.z.is_finite() {
        return Err(Error::NonFinite { ix: o.ix, iy: o.iy });
    }
    Ok(())
}

/// Which prior knowledge an agent starts with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Global,
    Local,
    None,
}

impl PriorKind {
    pub fn short(&self) -> &'static str {
        match self {
            PriorKind::Global => "G",
            PriorKind::Local => "L",
            PriorKind::None => "N",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" | "g" => Ok(PriorKind::Global),
            "local" | "l" => Ok(PriorKind::Local),
            "none" | "n" => Ok(PriorKind::None),
            other => Err(Error::Config(format!("unknown prior kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorKind::Global => "global",
            PriorKind::Local => "local",
            PriorKind::None => "none",
        })
    }
}

const MAX_REDRAWS: usize = 10_000;

/// Draws `n` noisy observations around the global mode (`Global`), spread
/// round-robin over the other modes (`Local`), or none at all. Locations come
/// from an isotropic normal with standard deviation `spread_sd`; draws that
/// leave the unit square are redrawn, the rest snap to the nearest cell.
pub fn allocate_prior<R: Rng + ?Sized>(
    obj: &ObjectiveGrid,
    kind: PriorKind,
    n: usize,
    spread_sd: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    if !(spread_sd > 0.0) {
        return Err(Error::InvalidParameter(format!("spread_sd = {spread_sd}")));
    }
    let centers: Vec<[f64; 2]> = match kind {
        PriorKind::None => return Ok(ObservationSet::new()),
        PriorKind::Global => vec![obj.global_mode().location],
        PriorKind::Local => {
            let locals: Vec<[f64; 2]> = obj.local_modes().map(|m| m.location).collect();
            if locals.is_empty() {
                return Err(Error::InvalidParameter(
                    "local prior requested on a single-mode objective".into(),
                ));
            }
            locals
        }
    };
    let grid = obj.grid();
    let mut out = ObservationSet::new();
    for i in 0..n {
        let c = centers[i % centers.len()];
        let mut attempts = 0;
        let p = loop {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let p = [c[0] + spread_sd * dx, c[1] + spread_sd * dy];
            if (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) {
                break p;
            }
            attempts += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::InvalidParameter(
                    "prior draws keep leaving the unit square".into(),
                ));
            }
        };
        let (ix, iy) = grid.nearest(p);
        let z = obj.query(ix, iy, rng)?;
        out.push(&grid, Observation { ix, iy, z })?;
    }
    Ok(out)
}
