//! Drying observations: ingestion, validation, min-max normalization onto a
//! `[0, 100]` scale, and a seeded synthetic generator.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::thinlayer::ThinLayerFamily;

pub const N_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "drying_time",
    "est_filter_temp",
    "oven_chamber_position",
    "mean_in_temp",
    "mean_dp",
    "cur_temp",
    "initial_mass",
];

pub const CSV_HEADER: [&str; N_FEATURES + 2] = [
    "experiment_id",
    "drying_time",
    "est_filter_temp",
    "oven_chamber_position",
    "mean_in_temp",
    "mean_dp",
    "cur_temp",
    "initial_mass",
    "mc",
];

/// Index of the drying time inside a [`FeatureVector`].
pub const DRYING_TIME: usize = 0;
pub const INITIAL_MASS: usize = 6;

/// Masses from the gravimetric procedure, in grams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub m_initial: f64,
    pub m_after: f64,
    pub m_solid: f64,
}

impl MassRecord {
    /// Checked constructor: all masses positive and non-increasing.
    pub fn new(m_initial: f64, m_after: f64, m_solid: f64) -> Result<Self> {
        if !(m_initial > 0.0 && m_after > 0.0 && m_solid > 0.0) {
            return Err(Error::Domain("masses must be positive".into()));
        }
        if !(m_initial >= m_after && m_after >= m_solid) {
            return Err(Error::Domain(format!(
                "masses must satisfy m_initial >= m_after >= m_solid, got {m_initial}, {m_after}, {m_solid}"
            )));
        }
        Ok(Self {
            m_initial,
            m_after,
            m_solid,
        })
    }
}

fn moisture_percent(wet: f64, solid: f64, which: &str) -> Result<f64> {
    if !(solid > 0.0) {
        return Err(Error::Domain(format!("m_solid must be positive, got {solid}")));
    }
    if !(wet >= solid) {
        return Err(Error::Domain(format!(
            "{which} ({wet}) is below m_solid ({solid})"
        )));
    }
    Ok((wet - solid) / solid * 100.0)
}

/// Moisture content before drying, in percent of dry mass.
pub fn compute_mc_initial(m: &MassRecord) -> Result<f64> {
    moisture_percent(m.m_initial, m.m_solid, "m_initial")
}

/// Moisture content after the first drying phase, in percent of dry mass.
pub fn compute_mc(m: &MassRecord) -> Result<f64> {
    moisture_percent(m.m_after, m.m_solid, "m_after")
}

/// The seven predictors, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn drying_time(&self) -> f64 {
        self.0[DRYING_TIME]
    }
    pub fn est_filter_temp(&self) -> f64 {
        self.0[1]
    }
    pub fn oven_chamber_position(&self) -> f64 {
        self.0[2]
    }
    pub fn mean_in_temp(&self) -> f64 {
        self.0[3]
    }
    pub fn mean_dp(&self) -> f64 {
        self.0[4]
    }
    pub fn cur_temp(&self) -> f64 {
        self.0[5]
    }
    pub fn initial_mass(&self) -> f64 {
        self.0[INITIAL_MASS]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Initial condition data (sampled at insertion, `t = 0`) or end condition
/// data (sampled at extraction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleClass {
    #[serde(rename = "ICD")]
    Icd,
    #[serde(rename = "ECD")]
    Ecd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub experiment_id: String,
    pub features: FeatureVector,
    pub mc: f64,
    pub class: SampleClass,
}

impl Sample {
    /// Builds a raw sample; the class follows from the drying time.
    pub fn new(experiment_id: impl Into<String>, features: FeatureVector, mc: f64) -> Self {
        let class = if features.drying_time() == 0.0 {
            SampleClass::Icd
        } else {
            SampleClass::Ecd
        };
        Self {
            experiment_id: experiment_id.into(),
            features,
            mc,
            class,
        }
    }

    pub fn is_ecd(&self) -> bool {
        self.class == SampleClass::Ecd
    }
}

/// An ordered collection of samples. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    normalized: bool,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            samples,
            normalized: false,
        }
    }

    pub(crate) fn with_flag(samples: Vec<Sample>, normalized: bool) -> Self {
        Self {
            samples,
            normalized,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::with_flag(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            self.normalized,
        )
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset::with_flag(
            self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            self.normalized,
        )
    }

    pub fn feature_rows(&self) -> Vec<[f64; N_FEATURES]> {
        self.samples.iter().map(|s| s.features.0).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mc).collect()
    }

    pub fn drying_times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.features.drying_time()).collect()
    }

    pub fn count_class(&self, class: SampleClass) -> usize {
        self.samples.iter().filter(|s| s.class == class).count()
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, path)
    }

    /// Parses the canonical CSV layout. `origin` only labels diagnostics.
    pub fn from_csv_reader<R: Read>(reader: R, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref().to_path_buf();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let header = rdr.headers()?.clone();
        for (i, expected) in CSV_HEADER.iter().enumerate() {
            match header.get(i) {
                Some(found) if found == *expected => {}
                Some(found) => {
                    return Err(Error::Header {
                        path: origin,
                        message: format!(
                            "column {} is `{found}`, expected `{expected}`",
                            i + 1
                        ),
                    })
                }
                None => {
                    return Err(Error::Header {
                        path: origin,
                        message: format!("missing column `{expected}`"),
                    })
                }
            }
        }
        if header.len() > CSV_HEADER.len() {
            return Err(Error::Header {
                path: origin,
                message: format!(
                    "unexpected extra column `{}`",
                    header.get(CSV_HEADER.len()).unwrap_or_default()
                ),
            });
        }

        let mut samples = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Parse {
                path: origin.clone(),
                row,
                column: "-".into(),
                message: e.to_string(),
            })?;
            let parse_err = |column: &str, message: String| Error::Parse {
                path: origin.clone(),
                row,
                column: column.to_string(),
                message,
            };
            if record.len() != CSV_HEADER.len() {
                return Err(parse_err(
                    "-",
                    format!("expected {} cells, found {}", CSV_HEADER.len(), record.len()),
                ));
            }
            let id = record[0].to_string();
            if id.is_empty() {
                return Err(parse_err("experiment_id", "empty cell".into()));
            }
            let mut values = [0.0; N_FEATURES + 1];
            for (j, v) in values.iter_mut().enumerate() {
                let column = CSV_HEADER[j + 1];
                let cell = &record[j + 1];
                if cell.is_empty() {
                    return Err(parse_err(column, "empty cell".into()));
                }
                let x: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(column, format!("not a number: `{cell}`")))?;
                if !x.is_finite() {
                    return Err(parse_err(column, format!("non-finite value `{cell}`")));
                }
                *v = x;
            }
            if values[DRYING_TIME] < 0.0 {
                return Err(parse_err("drying_time", "negative drying time".into()));
            }
            if values[INITIAL_MASS] <= 0.0 {
                return Err(parse_err("initial_mass", "initial mass must be positive".into()));
            }
            let mut features = [0.0; N_FEATURES];
            features.copy_from_slice(&values[..N_FEATURES]);
            samples.push(Sample::new(id, FeatureVector(features), values[N_FEATURES]));
        }
        Ok(Dataset::new(samples))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for s in &self.samples {
            let mut row = Vec::with_capacity(CSV_HEADER.len());
            row.push(s.experiment_id.clone());
            row.extend(s.features.0.iter().map(|x| x.to_string()));
            row.push(s.mc.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;
    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Partition into (ICD, ECD), preserving relative order.
pub fn split_icd_ecd(d: &Dataset) -> (Dataset, Dataset) {
    let (icd, ecd): (Vec<_>, Vec<_>) = d.samples.iter().cloned().partition(|s| !s.is_ecd());
    (
        Dataset::with_flag(icd, d.normalized),
        Dataset::with_flag(ecd, d.normalized),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_constant(&self) -> bool {
        self.span() == 0.0
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let span = self.span();
        if span == 0.0 {
            0.0
        } else {
            (x - self.min) / span * 100.0
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z / 100.0 * self.span() + self.min
    }
}

/// Per-feature and target min/max, taken from a training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecRepr", into = "SpecRepr")]
pub struct NormalizationSpec {
    pub features: [MinMax; N_FEATURES],
    pub target: MinMax,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    drying_time: MinMax,
    est_filter_temp: MinMax,
    oven_chamber_position: MinMax,
    mean_in_temp: MinMax,
    mean_dp: MinMax,
    cur_temp: MinMax,
    initial_mass: MinMax,
    mc: MinMax,
}

impl From<SpecRepr> for NormalizationSpec {
    fn from(r: SpecRepr) -> Self {
        Self {
            features: [
                r.drying_time,
                r.est_filter_temp,
                r.oven_chamber_position,
                r.mean_in_temp,
                r.mean_dp,
                r.cur_temp,
                r.initial_mass,
            ],
            target: r.mc,
        }
    }
}

impl From<NormalizationSpec> for SpecRepr {
    fn from(s: NormalizationSpec) -> Self {
        let [drying_time, est_filter_temp, oven_chamber_position, mean_in_temp, mean_dp, cur_temp, initial_mass] =
            s.features;
        Self {
            drying_time,
            est_filter_temp,
            oven_chamber_position,
            mean_in_temp,
            mean_dp,
            cur_temp,
            initial_mass,
            mc: s.target,
        }
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<NormalizationSpec> {
    if train.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    let first = train
        .samples
        .first()
        .ok_or(Error::EmptyDataset("cannot fit a normalizer on an empty training set"))?;
    let mut features = first.features.0.map(|x| MinMax { min: x, max: x });
    let mut target = MinMax {
        min: first.mc,
        max: first.mc,
    };
    for s in &train.samples[1..] {
        for (r, &x) in features.iter_mut().zip(&s.features.0) {
            r.min = r.min.min(x);
            r.max = r.max.max(x);
        }
        target.min = target.min.min(s.mc);
        target.max = target.max.max(s.mc);
    }
    Ok(NormalizationSpec { features, target })
}

impl NormalizationSpec {
    pub fn normalize_features(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|j| self.features[j].normalize(x[j]))
    }

    pub fn denormalize_features(&self, z: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|j| self.features[j].denormalize(z[j]))
    }

    pub fn normalize_target(&self, mc: f64) -> f64 {
        self.target.normalize(mc)
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        self.target.denormalize(z)
    }

    /// Names of features (and `mc`) whose training range is a single value.
    pub fn constant_columns(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = FEATURE_NAMES
            .iter()
            .zip(&self.features)
            .filter(|(_, r)| r.is_constant())
            .map(|(n, _)| *n)
            .collect();
        if self.target.is_constant() {
            out.push("mc");
        }
        out
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        apply_normalizer(self, d)
    }
}

/// Maps every feature and the MC target onto the training `[0, 100]` scale.
/// Constant training columns map to 0 and log a warning.
pub fn apply_normalizer(spec: &NormalizationSpec, d: &Dataset) -> Result<Dataset> {
    if d.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    for name in spec.constant_columns() {
        log::warn!("column `{name}` is constant on the training split; mapping it to 0");
    }
    let samples = d
        .samples
        .iter()
        .map(|s| Sample {
            experiment_id: s.experiment_id.clone(),
            features: FeatureVector(spec.normalize_features(&s.features.0)),
            mc: spec.normalize_target(s.mc),
            class: s.class,
        })
        .collect();
    Ok(Dataset::with_flag(samples, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Standard deviation proportional to the clean MC.
    #[default]
    Heteroscedastic,
    Additive,
}

/// Parameters of the synthetic drying-campaign generator. Each experiment
/// yields one ICD sample at `t = 0` and one ECD sample at a sampled drying
/// time. The MC follows `initial_mc * curve(t_eff)` where the effective time
/// is stretched by oven temperature, pressure, chamber position and mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_experiments: usize,
    pub family: ThinLayerFamily,
    pub params: Vec<f64>,
    /// Additive: MC standard deviation in percent points. Heteroscedastic:
    /// standard deviation at the mean initial MC, scaled by `mc / mean_initial_mc`.
    pub noise_scale: f64,
    pub noise: NoiseKind,
    pub drying_time: (f64, f64),
    pub initial_mc: (f64, f64),
    pub oven_temp: (f64, f64),
    pub mean_dp: (f64, f64),
    pub initial_mass: (f64, f64),
    pub oven_positions: u32,
    pub ambient_temp: f64,
    /// Strength of the feature-driven stretch of drying time; 0 disables it.
    pub feature_coupling: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_experiments: 150,
            family: ThinLayerFamily::Logarithmic,
            params: vec![0.9, 0.03, 0.05],
            noise_scale: 2.0,
            noise: NoiseKind::Heteroscedastic,
            drying_time: (10.0, 120.0),
            initial_mc: (60.0, 100.0),
            oven_temp: (90.0, 130.0),
            mean_dp: (200.0, 600.0),
            initial_mass: (800.0, 1600.0),
            oven_positions: 6,
            ambient_temp: 20.0,
            feature_coupling: 1.0,
        }
    }
}

fn uniform(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.5
    }
}

pub fn synth_generate(config: &SynthConfig, seed_value: u64) -> Result<Dataset> {
    if config.n_experiments == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sample count must be positive".into(),
        ));
    }
    config.family.check_arity(&config.params)?;
    if config.noise_scale < 0.0 || !config.noise_scale.is_finite() {
        return Err(Error::InvalidArgument("noise scale must be >= 0".into()));
    }
    if config.drying_time.0 <= 0.0 {
        return Err(Error::InvalidArgument(
            "ECD drying times must be strictly positive".into(),
        ));
    }
    if config.initial_mass.0 <= 0.0 {
        return Err(Error::InvalidArgument("initial mass must be positive".into()));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mean_mc0 = 0.5 * (config.initial_mc.0 + config.initial_mc.1);
    let positions = config.oven_positions.max(1);
    let c = config.feature_coupling;

    let mut samples = Vec::with_capacity(2 * config.n_experiments);
    for e in 0..config.n_experiments {
        let mut rng = seed::rng_at(seed_value, &[e as u64]);
        let oven_t = uniform(&mut rng, config.oven_temp);
        let dp = uniform(&mut rng, config.mean_dp);
        let mass = uniform(&mut rng, config.initial_mass);
        let position = rng.random_range(1..=positions) as f64;
        let t = uniform(&mut rng, config.drying_time);

        let u_mass = unit(mass, config.initial_mass);
        let u_temp = unit(oven_t, config.oven_temp);
        let u_dp = unit(dp, config.mean_dp);
        let u_pos = if positions > 1 {
            (position - 1.0) / (positions - 1) as f64
        } else {
            0.5
        };
        // heavier media hold more water
        let jitter: f64 = rng.random_range(-0.1..0.1);
        let mc0 = config.initial_mc.0
            + (config.initial_mc.1 - config.initial_mc.0) * (u_mass + c * jitter).clamp(0.0, 1.0);
        let stretch = (c * (0.8 * (u_temp - 0.5) + 0.5 * (u_dp - 0.5) - 0.2 * (u_pos - 0.5)
            - 0.4 * (u_mass - 0.5)))
            .exp();

        let ratio0 = config.family.eval_unchecked(&config.params, 0.0);
        let ratio = config.family.eval_unchecked(&config.params, t * stretch);
        let clean_icd = mc0 * ratio0;
        let clean_ecd = mc0 * ratio;

        let noisy = |clean: f64, rng: &mut seed::Rng| {
            let sd = match config.noise {
                NoiseKind::Additive => config.noise_scale,
                NoiseKind::Heteroscedastic => config.noise_scale * clean.abs() / mean_mc0,
            };
            clean + sd * std_normal.sample(rng)
        };
        let mc_icd = noisy(clean_icd, &mut rng);
        let mc_ecd = noisy(clean_ecd, &mut rng);

        let temp_span = (oven_t - config.ambient_temp).max(0.0);
        let sensor = |rng: &mut seed::Rng, scale: f64| scale * std_normal.sample(rng);
        let id = format!("E{:04}", e + 1);

        // at insertion the sensors read the oven, not the filter
        let icd = [
            0.0,
            config.ambient_temp + sensor(&mut rng, 1.0),
            position,
            oven_t + sensor(&mut rng, 1.0),
            dp,
            config.ambient_temp + 0.1 * temp_span + sensor(&mut rng, 1.0),
            mass,
        ];
        let dried = (1.0 - ratio / ratio0.max(1e-12)).clamp(0.0, 1.5);
        let ecd = [
            t,
            config.ambient_temp + temp_span * 0.9 * dried + sensor(&mut rng, 0.5),
            position,
            oven_t + sensor(&mut rng, 0.5),
            dp * (1.0 + 0.02 * std_normal.sample(&mut rng)),
            oven_t - 0.5 * temp_span * (1.0 - dried).max(0.0) + sensor(&mut rng, 0.5),
            mass,
        ];
        samples.push(Sample::new(id.clone(), FeatureVector(icd), mc_icd));
        samples.push(Sample::new(id, FeatureVector(ecd), mc_ecd));
    }
    Ok(Dataset::new(samples))
}
