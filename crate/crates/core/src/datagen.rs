//! Synthetic Gaussian-blob classification tasks and party partitions.
//!
//! A task has `G` superclasses, each split into `M` subclasses. Superclass
//! means sit on orthogonal directions (pairwise `separation` apart) when
//! `G ≤ d`, otherwise on a sphere with rejection of close pairs. Each
//! subclass mean is its superclass mean plus an offset of norm
//! `separation / 4`, so subclasses of different superclasses are at least
//! `separation / 2` apart.
//!
//! Every party's test set is one shared draw from the unshifted task
//! covering all subclasses.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

use crate::rng::{derive_stream, Purpose, RngStream, StreamLabel};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("task needs at least 2 features (got {0})")]
    TooFewFeatures(usize),
    #[error("task needs at least 2 superclasses (got {0})")]
    TooFewSuperclasses(usize),
    #[error("task needs at least 1 subclass per superclass")]
    NoSubclasses,
    #[error("separation and noise must be positive and finite")]
    BadScale,
    #[error("could not place {0} well-separated superclass means")]
    Crowded(usize),
    #[error("partition needs at least one party and one row per party")]
    EmptyPlan,
    #[error("subclass split gives each party one subclass per superclass, so parties ({parties}) must not exceed subclasses per superclass ({subclasses})")]
    TooManyParties { parties: usize, subclasses: usize },
    #[error("subclass split labels by superclass; use the superclass label space")]
    SubclassLabelsUnderSubclassSplit,
    #[error("shift strength must be finite and nonnegative")]
    BadShift,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv layout error: {0}")]
    CsvLayout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSpace {
    Subclass,
    Superclass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub features: usize,
    pub superclasses: usize,
    pub subclasses_per_super: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub label_space: LabelSpace,
}

impl SyntheticTask {
    /// Number of generative classes, `G × M`.
    pub fn generative_classes(&self) -> usize {
        self.superclasses * self.subclasses_per_super
    }

    /// Number of distinct labels emitted.
    pub fn classes(&self) -> usize {
        match self.label_space {
            LabelSpace::Subclass => self.generative_classes(),
            LabelSpace::Superclass => self.superclasses,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.features < 2 {
            return Err(DataError::TooFewFeatures(self.features));
        }
        if self.superclasses < 2 {
            return Err(DataError::TooFewSuperclasses(self.superclasses));
        }
        if self.subclasses_per_super < 1 {
            return Err(DataError::NoSubclasses);
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.separation) || !ok(self.noise_sigma) {
            return Err(DataError::BadScale);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionMode {
    Iid,
    /// Party i sees only subclass i of every superclass.
    NonIidSubclass,
    /// IID draws pushed through a party-specific affine transform.
    NonIidShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub parties: usize,
    pub mode: PartitionMode,
    pub per_party_n: usize,
    pub shift_strength: f64,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub inputs: Array2<f64>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Class means plus the noise model of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub task: SyntheticTask,
    pub superclass_means: Array2<f64>,
    /// Row `g·M + m` is subclass `m` of superclass `g`.
    pub subclass_means: Array2<f64>,
}

fn gaussian_vector(stream: &mut RngStream, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| stream.standard_normal())
}

/// Removes the components along `basis` (orthonormal rows) and normalises.
/// Returns `None` when nothing is left.
fn orthonormalise(mut v: Array1<f64>, basis: &[Array1<f64>]) -> Option<Array1<f64>> {
    for b in basis {
        let proj = v.dot(b);
        v.scaled_add(-proj, b);
    }
    let norm = v.dot(&v).sqrt();
    (norm > 1e-9).then(|| v / norm)
}

pub fn generate_task(task: &SyntheticTask, stream: &mut RngStream) -> Result<GenerativeModel, DataError> {
    task.validate()?;
    let (d, g, m) = (task.features, task.superclasses, task.subclasses_per_super);
    let sep = task.separation;
    let mut super_means = Array2::zeros((g, d));
    let mut directions: Vec<Array1<f64>> = Vec::with_capacity(g);
    if g <= d {
        while directions.len() < g {
            if let Some(u) = orthonormalise(gaussian_vector(stream, d), &directions) {
                directions.push(u);
            }
        }
        for (i, u) in directions.iter().enumerate() {
            super_means.row_mut(i).assign(&(u * (sep / std::f64::consts::SQRT_2)));
        }
    } else {
        let radius = sep * (g as f64).sqrt();
        let mut placed: Vec<Array1<f64>> = Vec::with_capacity(g);
        let mut attempts = 0;
        while placed.len() < g {
            attempts += 1;
            if attempts > 100_000 {
                return Err(DataError::Crowded(g));
            }
            let v = gaussian_vector(stream, d);
            let candidate = &v * (radius / v.dot(&v).sqrt());
            if placed.iter().all(|p| {
                let diff = p - &candidate;
                diff.dot(&diff).sqrt() >= sep
            }) {
                placed.push(candidate);
            }
        }
        for (i, p) in placed.iter().enumerate() {
            super_means.row_mut(i).assign(p);
        }
        directions = placed.iter().map(|p| p / p.dot(p).sqrt()).collect();
        // Directions on a sphere are not orthogonal; offsets below only use
        // them when they happen to fit.
        directions.truncate(d.saturating_sub(m));
    }

    let offset_norm = sep / 4.0;
    let mut sub_means = Array2::zeros((g * m, d));
    for gi in 0..g {
        let mut basis: Vec<Array1<f64>> = if g + m <= d { directions.clone() } else { Vec::new() };
        for mi in 0..m {
            let dir = loop {
                let v = gaussian_vector(stream, d);
                let fits = basis.len() < d;
                let candidate = if fits { orthonormalise(v.clone(), &basis) } else { None };
                match candidate.or_else(|| orthonormalise(v, &[])) {
                    Some(u) => break u,
                    None => continue,
                }
            };
            if basis.len() < d {
                basis.push(dir.clone());
            }
            let mean = &super_means.row(gi) + &(dir * offset_norm);
            sub_means.row_mut(gi * m + mi).assign(&mean);
        }
    }
    Ok(GenerativeModel {
        task: task.clone(),
        superclass_means: super_means,
        subclass_means: sub_means,
    })
}

impl GenerativeModel {
    fn label_of(&self, subclass: usize) -> usize {
        match self.task.label_space {
            LabelSpace::Subclass => subclass,
            LabelSpace::Superclass => subclass / self.task.subclasses_per_super,
        }
    }

    fn draw_from(&self, means: &Array2<f64>, subclass: usize, stream: &mut RngStream, row: &mut ndarray::ArrayViewMut1<'_, f64>) {
        let sigma = self.task.noise_sigma;
        for (x, &mu) in row.iter_mut().zip(means.row(subclass)) {
            *x = mu + sigma * stream.standard_normal();
        }
    }

    /// `n` rows with subclasses drawn by `pick`.
    fn draw_with(
        &self,
        means: &Array2<f64>,
        n: usize,
        stream: &mut RngStream,
        mut pick: impl FnMut(&mut RngStream) -> usize,
        label_of: impl Fn(usize) -> usize,
    ) -> LabeledSet {
        let mut inputs = Array2::zeros((n, self.task.features));
        let mut labels = Vec::with_capacity(n);
        for mut row in inputs.rows_mut() {
            let subclass = pick(stream);
            self.draw_from(means, subclass, stream, &mut row);
            labels.push(label_of(subclass));
        }
        LabeledSet { inputs, labels }
    }

    /// `n` IID rows over all subclasses, labelled in the task's label space.
    pub fn draw_labeled(&self, n: usize, stream: &mut RngStream) -> LabeledSet {
        let total = self.task.generative_classes();
        self.draw_with(&self.subclass_means, n, stream, |s| s.below_usize(total), |c| self.label_of(c))
    }
}

/// Per-party training sets and the matching test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PartySets {
    pub train: Vec<LabeledSet>,
    pub test: Vec<LabeledSet>,
}

/// Party-specific affine map `x ↦ x + s·(R x / √d + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineShift {
    pub matrix: Array2<f64>,
    pub offset: Array1<f64>,
}

impl AffineShift {
    fn draw(stream: &mut RngStream, d: usize, strength: f64, separation: f64) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let r = Array2::from_shape_fn((d, d), |(i, j)| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta + strength * scale * stream.standard_normal()
        });
        let offset = Array1::from_shape_fn(d, |_| strength * separation * scale * stream.standard_normal());
        Self { matrix: r, offset }
    }

    pub fn apply(&self, inputs: &mut Array2<f64>) {
        let shifted = inputs.dot(&self.matrix.t()) + &self.offset;
        *inputs = shifted;
    }
}

pub fn draw_party_sets(model: &GenerativeModel, plan: &PartitionPlan, master_seed: u64) -> Result<PartySets, DataError> {
    let task = &model.task;
    if plan.parties == 0 || plan.per_party_n == 0 {
        return Err(DataError::EmptyPlan);
    }
    if !(plan.shift_strength.is_finite() && plan.shift_strength >= 0.0) {
        return Err(DataError::BadShift);
    }
    let m = task.subclasses_per_super;
    if plan.mode == PartitionMode::NonIidSubclass {
        if plan.parties > m {
            return Err(DataError::TooManyParties {
                parties: plan.parties,
                subclasses: m,
            });
        }
        if task.label_space == LabelSpace::Subclass {
            return Err(DataError::SubclassLabelsUnderSubclassSplit);
        }
    }

    let train = (0..plan.parties)
        .map(|party| {
            let mut stream = derive_stream(master_seed, StreamLabel::new(Purpose::PartyData, party as u64, 0));
            match plan.mode {
                PartitionMode::Iid => model.draw_labeled(plan.per_party_n, &mut stream),
                PartitionMode::NonIidShift => {
                    let mut set = model.draw_labeled(plan.per_party_n, &mut stream);
                    let mut shift_stream =
                        derive_stream(master_seed, StreamLabel::new(Purpose::PartyShift, party as u64, 0));
                    AffineShift::draw(&mut shift_stream, task.features, plan.shift_strength, task.separation)
                        .apply(&mut set.inputs);
                    set
                }
                PartitionMode::NonIidSubclass => model.draw_with(
                    &model.subclass_means,
                    plan.per_party_n,
                    &mut stream,
                    |s| s.below_usize(task.superclasses) * m + party,
                    |c| c / m,
                ),
            }
        })
        .collect();

    let mut test_stream = derive_stream(master_seed, StreamLabel::global(Purpose::TestData));
    let shared = model.draw_labeled(plan.test_size, &mut test_stream);
    Ok(PartySets {
        train,
        test: vec![shared; plan.parties],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolDistribution {
    Matched,
    /// All class means translated by `strength × separation` along one
    /// random direction before drawing.
    Shifted(f64),
}

pub fn draw_public_pool(
    model: &GenerativeModel,
    size: usize,
    distribution: PoolDistribution,
    master_seed: u64,
) -> UnlabeledSet {
    let mut stream = derive_stream(master_seed, StreamLabel::global(Purpose::PublicPool));
    let set = match distribution {
        PoolDistribution::Matched => model.draw_labeled(size, &mut stream),
        PoolDistribution::Shifted(strength) => {
            let mut shift_stream = derive_stream(master_seed, StreamLabel::new(Purpose::PublicPool, 1, 0));
            let v = gaussian_vector(&mut shift_stream, model.task.features);
            let unit = &v / v.dot(&v).sqrt();
            let means = &model.subclass_means + &(unit * (strength * model.task.separation));
            let total = model.task.generative_classes();
            model.draw_with(&means, size, &mut stream, |s| s.below_usize(total), |c| c)
        }
    };
    UnlabeledSet { inputs: set.inputs }
}

fn header(features: usize, labeled: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..features).map(|i| format!("f{i}")).collect();
    if labeled {
        h.push("label".into());
    }
    h
}

/// Writes `f0..f{d-1},label` rows.
pub fn write_labeled_csv(set: &LabeledSet, w: impl Write) -> Result<(), DataError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(header(set.features(), true))?;
    for (row, label) in set.inputs.rows().into_iter().zip(&set.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        out.write_record(rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_unlabeled_csv(set: &UnlabeledSet, w: impl Write) -> Result<(), DataError> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(header(set.inputs.ncols(), false))?;
    for row in set.inputs.rows() {
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_rows(r: impl Read, labeled: bool) -> Result<(Array2<f64>, Vec<usize>), DataError> {
    let mut reader = csv::Reader::from_reader(r);
    let head = reader.headers()?.clone();
    let features = if labeled { head.len().saturating_sub(1) } else { head.len() };
    if features == 0 || head.iter().take(features).enumerate().any(|(i, f)| f != format!("f{i}")) {
        return Err(DataError::CsvLayout(format!("unexpected header {:?}", head)));
    }
    if labeled && head.get(features) != Some("label") {
        return Err(DataError::CsvLayout("last column must be `label`".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        for field in rec.iter().take(features) {
            values.push(field.trim().parse::<f64>().map_err(|e| {
                DataError::CsvLayout(format!("row {}: bad number `{field}`: {e}", line + 2))
            })?);
        }
        if labeled {
            let field = rec.get(features).unwrap_or("");
            labels.push(field.trim().parse::<usize>().map_err(|e| {
                DataError::CsvLayout(format!("row {}: bad label `{field}`: {e}", line + 2))
            })?);
        }
    }
    let rows = values.len() / features;
    let inputs = Array2::from_shape_vec((rows, features), values).map_err(|e| DataError::CsvLayout(e.to_string()))?;
    Ok((inputs, labels))
}

pub fn read_labeled_csv(r: impl Read) -> Result<LabeledSet, DataError> {
    let (inputs, labels) = read_rows(r, true)?;
    Ok(LabeledSet { inputs, labels })
}

pub fn read_unlabeled_csv(r: impl Read) -> Result<UnlabeledSet, DataError> {
    let (inputs, _) = read_rows(r, false)?;
    Ok(UnlabeledSet { inputs })
}
