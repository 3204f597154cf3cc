//! Synthetic benchmark generator with a known bias oracle.
//!
//! Features are standard normal, labels come from per-condition logistic
//! oracles, demographic attributes can be encoded into chosen feature
//! dimensions, and one subgroup's training labels can be degraded by random
//! flips. Because the generating process is fully known, downstream detection
//! and mitigation claims can be checked against ground truth.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::samples::{Axis, Label, Race, SampleTable, Sex, Split, DEFAULT_CONDITIONS};
use super::{DataError, EmbeddingMatrix};
use crate::matrix::DenseMatrix;

/// Attribute-to-feature encoding: samples get `strength * group_code` added to
/// one feature dimension, where group codes are evenly spaced and centered
/// (two groups: -0.5/+0.5; four groups: -1.5..+1.5 in axis group order).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignalSpec {
    pub axis: Axis,
    pub dim_index: usize,
    pub strength: f64,
}

/// Generative parameters of the synthetic benchmark.
///
/// Label flips for the degraded group are applied to train and val rows only;
/// test labels stay clean so that measured subgroup gaps reflect what the
/// trained model does, not irreducible annotation noise, and mitigation
/// effects stay observable against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub dim: usize,
    pub condition_names: Vec<String>,
    /// Per-condition logistic weights, each `dim` long.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub signals: Vec<SignalSpec>,
    pub degraded_group: Option<(Axis, String)>,
    pub label_noise_rate: f64,
    /// female, male
    pub sex_proportions: [f64; 2],
    /// young, old
    pub age_proportions: [f64; 2],
    /// white, asian, black, other
    pub race_proportions: [f64; 4],
    /// train, val, test
    pub split_fractions: [f64; 3],
}

impl OracleSpec {
    /// Clean benchmark: no demographic signal in the features, no label noise.
    pub fn null(dim: usize) -> Self {
        OracleSpec {
            dim,
            condition_names: DEFAULT_CONDITIONS.iter().map(|s| s.to_string()).collect(),
            weights: default_weights(dim, DEFAULT_CONDITIONS.len()),
            biases: vec![-1.0, 0.2, -0.5, -0.2],
            signals: Vec::new(),
            degraded_group: None,
            label_noise_rate: 0.0,
            sex_proportions: [0.5, 0.5],
            age_proportions: [0.6, 0.4],
            race_proportions: [0.782, 0.147, 0.071, 0.0],
            split_fractions: [0.7, 0.1, 0.2],
        }
    }

    /// Benchmark with injected bias: sex encoded at dimension 0 (strength 2),
    /// age at 1, race at dimensions 2 and 3 (strength 3 each), and
    /// black-group training labels flipped at the given rate.
    ///
    /// The two race dimensions carry oracle weights of equal magnitude and
    /// opposite sign, so the race offsets cancel in the label margin: every
    /// race group has the identical margin (and hence prevalence and
    /// attainable ranking) distribution. Race is plainly visible in the
    /// features, but any subgroup AUPRC gap a trained head shows is produced
    /// by the head, not by the task.
    pub fn biased(dim: usize, label_noise_rate: f64) -> Self {
        assert!(dim >= 4, "biased preset needs at least 4 dimensions");
        let mut spec = OracleSpec::null(dim);
        spec.signals = vec![
            SignalSpec { axis: Axis::Sex, dim_index: 0, strength: 2.0 },
            SignalSpec { axis: Axis::Age, dim_index: 1, strength: 1.0 },
            SignalSpec { axis: Axis::Race, dim_index: 2, strength: 3.0 },
            SignalSpec { axis: Axis::Race, dim_index: 3, strength: 3.0 },
        ];
        // Pin the race-dimension weights to +/- c per condition and restore
        // the overall norm; the margin shift from race offsets is then
        // c*off - c*off = 0 for every group.
        let c = 1.05;
        for w in &mut spec.weights {
            w[2] = c;
            w[3] = -c;
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in w.iter_mut() {
                *v *= 2.5 / norm;
            }
        }
        spec.degraded_group = Some((Axis::Race, "black".to_string()));
        spec.label_noise_rate = label_noise_rate;
        spec
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.dim == 0 {
            return Err(DataError::InvalidSpec("dim must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise_rate) {
            return Err(DataError::InvalidSpec(format!(
                "label_noise_rate {} out of [0, 0.5)",
                self.label_noise_rate
            )));
        }
        if self.condition_names.is_empty()
            || self.weights.len() != self.condition_names.len()
            || self.biases.len() != self.condition_names.len()
        {
            return Err(DataError::InvalidSpec(
                "weights/biases must match condition list".into(),
            ));
        }
        for w in &self.weights {
            if w.len() != self.dim {
                return Err(DataError::InvalidSpec("weight vector length != dim".into()));
            }
        }
        for s in &self.signals {
            if s.dim_index >= self.dim {
                return Err(DataError::InvalidSpec(format!(
                    "signal dimension {} out of range",
                    s.dim_index
                )));
            }
        }
        if let Some((axis, group)) = &self.degraded_group {
            if !axis.all_groups().contains(&group.as_str()) {
                return Err(DataError::InvalidSpec(format!(
                    "group `{group}` not valid for axis {axis}"
                )));
            }
        }
        for (name, props) in [
            ("sex", &self.sex_proportions[..]),
            ("age", &self.age_proportions[..]),
            ("race", &self.race_proportions[..]),
            ("split", &self.split_fractions[..]),
        ] {
            if props.iter().any(|p| *p < 0.0) {
                return Err(DataError::InvalidSpec(format!("negative {name} proportion")));
            }
            let sum: f64 = props.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(DataError::InvalidSpec(format!(
                    "{name} proportions sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Serializes as a flat `key=value` text config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "conditions={}", self.condition_names.join(","));
        let _ = writeln!(out, "label_noise_rate={}", self.label_noise_rate);
        if let Some((axis, group)) = &self.degraded_group {
            let _ = writeln!(out, "degraded={axis}:{group}");
        }
        for s in &self.signals {
            let _ = writeln!(out, "signal.{}={}:{}", s.axis, s.dim_index, s.strength);
        }
        let _ = writeln!(out, "prop.sex={}", join_floats(&self.sex_proportions));
        let _ = writeln!(out, "prop.age={}", join_floats(&self.age_proportions));
        let _ = writeln!(out, "prop.race={}", join_floats(&self.race_proportions));
        let _ = writeln!(out, "split={}", join_floats(&self.split_fractions));
        for (c, name) in self.condition_names.iter().enumerate() {
            let _ = writeln!(out, "bias.{name}={}", self.biases[c]);
            let _ = writeln!(out, "weights.{name}={}", join_floats(&self.weights[c]));
        }
        out
    }

    pub fn from_config_string(text: &str) -> Result<Self, DataError> {
        let mut dim = None;
        let mut conditions: Vec<String> = Vec::new();
        let mut noise = 0.0;
        let mut degraded = None;
        let mut signals = Vec::new();
        let mut props: [Option<Vec<f64>>; 4] = [None, None, None, None];
        let mut biases = std::collections::BTreeMap::new();
        let mut weights = std::collections::BTreeMap::new();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DataError::InvalidSpec(format!("line {}: expected key=value", lineno + 1))
            })?;
            let bad = |msg: &str| DataError::InvalidSpec(format!("{key}: {msg}"));
            match key {
                "dim" => dim = Some(value.parse::<usize>().map_err(|_| bad("not an integer"))?),
                "conditions" => {
                    conditions = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "label_noise_rate" => {
                    noise = value.parse::<f64>().map_err(|_| bad("not a number"))?
                }
                "degraded" => {
                    let (axis, group) =
                        value.split_once(':').ok_or_else(|| bad("expected axis:group"))?;
                    degraded = Some((
                        axis.parse::<Axis>().map_err(|e| bad(&e))?,
                        group.to_string(),
                    ));
                }
                _ if key.starts_with("signal.") => {
                    let axis = key["signal.".len()..].parse::<Axis>().map_err(|e| bad(&e))?;
                    let (d, s) =
                        value.split_once(':').ok_or_else(|| bad("expected dim:strength"))?;
                    signals.push(SignalSpec {
                        axis,
                        dim_index: d.parse().map_err(|_| bad("bad dim index"))?,
                        strength: s.parse().map_err(|_| bad("bad strength"))?,
                    });
                }
                "prop.sex" => props[0] = Some(parse_floats(value).map_err(|m| bad(&m))?),
                "prop.age" => props[1] = Some(parse_floats(value).map_err(|m| bad(&m))?),
                "prop.race" => props[2] = Some(parse_floats(value).map_err(|m| bad(&m))?),
                "split" => props[3] = Some(parse_floats(value).map_err(|m| bad(&m))?),
                _ if key.starts_with("bias.") => {
                    biases.insert(
                        key["bias.".len()..].to_string(),
                        value.parse::<f64>().map_err(|_| bad("not a number"))?,
                    );
                }
                _ if key.starts_with("weights.") => {
                    weights.insert(
                        key["weights.".len()..].to_string(),
                        parse_floats(value).map_err(|m| bad(&m))?,
                    );
                }
                _ => return Err(DataError::InvalidSpec(format!("unknown key `{key}`"))),
            }
        }

        let dim = dim.ok_or_else(|| DataError::InvalidSpec("missing dim".into()))?;
        if conditions.is_empty() {
            return Err(DataError::InvalidSpec("missing conditions".into()));
        }
        let take = |arr: Option<Vec<f64>>, n: usize, name: &str| -> Result<Vec<f64>, DataError> {
            let v = arr.ok_or_else(|| DataError::InvalidSpec(format!("missing {name}")))?;
            if v.len() != n {
                return Err(DataError::InvalidSpec(format!("{name}: expected {n} values")));
            }
            Ok(v)
        };
        let [p_sex, p_age, p_race, p_split] = props;
        let sex_v = take(p_sex, 2, "prop.sex")?;
        let age_v = take(p_age, 2, "prop.age")?;
        let race_v = take(p_race, 4, "prop.race")?;
        let split_v = take(p_split, 3, "split")?;

        let mut spec = OracleSpec {
            dim,
            weights: Vec::new(),
            biases: Vec::new(),
            signals,
            degraded_group: degraded,
            label_noise_rate: noise,
            sex_proportions: [sex_v[0], sex_v[1]],
            age_proportions: [age_v[0], age_v[1]],
            race_proportions: [race_v[0], race_v[1], race_v[2], race_v[3]],
            split_fractions: [split_v[0], split_v[1], split_v[2]],
            condition_names: conditions,
        };
        for name in spec.condition_names.clone() {
            spec.biases.push(*biases.get(&name).ok_or_else(|| {
                DataError::InvalidSpec(format!("missing bias.{name}"))
            })?);
            spec.weights.push(weights.remove(&name).ok_or_else(|| {
                DataError::InvalidSpec(format!("missing weights.{name}"))
            })?);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn write_config(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_config_string())?;
        Ok(())
    }

    pub fn read_config(path: &Path) -> Result<Self, DataError> {
        Self::from_config_string(&fs::read_to_string(path)?)
    }
}

fn join_floats(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect()
}

/// Fixed pseudo-random unit directions scaled to norm 2.5, one per condition.
/// Deterministic in (dim, count) so default specs are stable across runs.
fn default_weights(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f_a1_4e_ad);
    (0..count)
        .map(|_| {
            let mut w: Vec<f64> =
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut w {
                *v *= 2.5 / norm;
            }
            w
        })
        .collect()
}

fn group_code(axis: Axis, index: usize) -> f64 {
    let k = axis.all_groups().len();
    index as f64 - (k as f64 - 1.0) / 2.0
}

fn sample_categorical(rng: &mut ChaCha8Rng, props: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, p) in props.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    props.len() - 1
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a benchmark of `n` samples. Deterministic for a fixed seed; the spec
/// actually used is returned alongside the data.
pub fn generate_synthetic(
    spec: &OracleSpec,
    n: usize,
    seed: u64,
) -> Result<(EmbeddingMatrix, SampleTable, OracleSpec), DataError> {
    spec.validate()?;
    if n < 100 {
        return Err(DataError::InvalidSpec(format!("n={n} too small, need at least 100")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Demographics and split, sample-major.
    let mut sex = Vec::with_capacity(n);
    let mut age_years = Vec::with_capacity(n);
    let mut race = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for _ in 0..n {
        sex.push(match sample_categorical(&mut rng, &spec.sex_proportions) {
            0 => Sex::Female,
            _ => Sex::Male,
        });
        let old = sample_categorical(&mut rng, &spec.age_proportions) == 1;
        age_years.push(if old {
            rng.gen_range(70..=94)
        } else {
            rng.gen_range(18..=69)
        });
        race.push(match sample_categorical(&mut rng, &spec.race_proportions) {
            0 => Race::White,
            1 => Race::Asian,
            2 => Race::Black,
            _ => Race::Other,
        });
        split.push(match sample_categorical(&mut rng, &spec.split_fractions) {
            0 => Split::Train,
            1 => Split::Val,
            _ => Split::Test,
        });
    }

    let ids: Vec<String> = (0..n).map(|i| format!("s{i:06}")).collect();
    let table = SampleTable::new(
        ids.clone(),
        sex,
        age_years,
        race,
        split,
        spec.condition_names.clone(),
        vec![vec![Label::Missing; n]; spec.condition_names.len()],
    )?;

    // Features: standard normal plus attribute-coded offsets, quantized to the
    // on-disk f32 precision so file round-trips are lossless.
    let mut data = DenseMatrix::zeros(n, spec.dim);
    for i in 0..n {
        let row = data.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    for s in &spec.signals {
        for i in 0..n {
            let idx = table
                .group_name(s.axis, i)
                .parse_group_index(s.axis)
                .expect("group name always valid");
            let v = data.get(i, s.dim_index) + s.strength * group_code(s.axis, idx);
            data.set(i, s.dim_index, v);
        }
    }
    for i in 0..n {
        for v in data.row_mut(i).iter_mut() {
            *v = (*v as f32) as f64;
        }
    }

    // Logistic oracle labels, then degraded-group flips on train/val rows.
    let mut table = table;
    for c in 0..spec.condition_names.len() {
        let w = &spec.weights[c];
        let b = spec.biases[c];
        let col = &mut table.labels_mut()[c];
        for i in 0..n {
            let margin: f64 =
                data.row(i).iter().zip(w).map(|(x, wj)| x * wj).sum::<f64>() + b;
            let u: f64 = rng.gen();
            col[i] = if u < sigmoid(margin) { Label::Positive } else { Label::Negative };
        }
    }
    if let Some((axis, group)) = &spec.degraded_group {
        if spec.label_noise_rate > 0.0 {
            for c in 0..spec.condition_names.len() {
                for i in 0..n {
                    let in_group = table.group_name(*axis, i) == group.as_str();
                    let eligible = table.split(i) != Split::Test;
                    let u: f64 = rng.gen();
                    if in_group && eligible && u < spec.label_noise_rate {
                        let col = &mut table.labels_mut()[c];
                        col[i] = match col[i] {
                            Label::Positive => Label::Negative,
                            Label::Negative => Label::Positive,
                            Label::Missing => Label::Missing,
                        };
                    }
                }
            }
        }
    }

    let embeddings = EmbeddingMatrix::new(ids, data)?;
    Ok((embeddings, table, spec.clone()))
}

trait ParseGroupIndex {
    fn parse_group_index(&self, axis: Axis) -> Option<usize>;
}

impl ParseGroupIndex for &str {
    fn parse_group_index(&self, axis: Axis) -> Option<usize> {
        axis.all_groups().iter().position(|g| g == self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::write_embeddings;
    use std::collections::HashSet;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = OracleSpec::biased(8, 0.2);
        let (e1, t1, _) = generate_synthetic(&spec, 300, 7).unwrap();
        let (e2, t2, _) = generate_synthetic(&spec, 300, 7).unwrap();
        assert_eq!(e1.data().as_slice(), e2.data().as_slice());
        assert_eq!(t1.ids(), t2.ids());
        for c in 0..t1.n_conditions() {
            assert_eq!(t1.labels_for(c), t2.labels_for(c));
        }
        let (e3, _, _) = generate_synthetic(&spec, 300, 8).unwrap();
        assert_ne!(e1.data().as_slice(), e3.data().as_slice());
    }

    #[test]
    fn race_proportions_default_match_expected_shares() {
        let spec = OracleSpec::null(4);
        assert_eq!(spec.race_proportions, [0.782, 0.147, 0.071, 0.0]);
        let (_, t, _) = generate_synthetic(&spec, 20000, 3).unwrap();
        let n = t.n_samples() as f64;
        let white = (0..t.n_samples()).filter(|&i| t.race(i) == Race::White).count() as f64;
        let black = (0..t.n_samples()).filter(|&i| t.race(i) == Race::Black).count() as f64;
        assert!((white / n - 0.782).abs() < 0.02);
        assert!((black / n - 0.071).abs() < 0.01);
    }

    #[test]
    fn invalid_noise_rate_rejected() {
        let mut spec = OracleSpec::null(4);
        spec.label_noise_rate = 0.5;
        assert!(matches!(
            generate_synthetic(&spec, 100, 0),
            Err(DataError::InvalidSpec(_))
        ));
    }

    #[test]
    fn invalid_proportions_rejected() {
        let mut spec = OracleSpec::null(4);
        spec.race_proportions = [0.5, 0.5, 0.5, 0.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn flip_rate_matches_noise_rate_within_three_se() {
        let rate = 0.25;
        let spec = OracleSpec::biased(6, rate);
        let clean = {
            let mut c = spec.clone();
            c.label_noise_rate = 0.0;
            c.degraded_group = None;
            c
        };
        let (_, noisy, _) = generate_synthetic(&spec, 20000, 11).unwrap();
        let (_, base, _) = generate_synthetic(&clean, 20000, 11).unwrap();
        // Same seed and same draw structure: the two runs differ only in flips.
        let mut flips = 0usize;
        let mut eligible = 0usize;
        for c in 0..base.n_conditions() {
            for i in 0..base.n_samples() {
                if base.group_name(Axis::Race, i) == "black" && base.split(i) != Split::Test {
                    eligible += 1;
                    if base.label(c, i) != noisy.label(c, i) {
                        flips += 1;
                    }
                }
            }
        }
        let observed = flips as f64 / eligible as f64;
        let se = (rate * (1.0 - rate) / eligible as f64).sqrt();
        assert!(
            (observed - rate).abs() < 3.0 * se,
            "flip rate {observed} not within 3 SE of {rate}"
        );
        // Test rows must be untouched.
        for c in 0..base.n_conditions() {
            for i in 0..base.n_samples() {
                if base.split(i) == Split::Test {
                    assert_eq!(base.label(c, i), noisy.label(c, i));
                }
            }
        }
    }

    #[test]
    fn generated_embeddings_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = OracleSpec::null(5);
        let (e, _, _) = generate_synthetic(&spec, 120, 5).unwrap();
        let path = dir.path().join("e.femb");
        write_embeddings(&e, &path).unwrap();
        let back = crate::dataio::read_embeddings(&path).unwrap();
        assert_eq!(back.data().as_slice(), e.data().as_slice());
    }

    #[test]
    fn config_round_trip() {
        let spec = OracleSpec::biased(8, 0.25);
        let text = spec.to_config_string();
        let back = OracleSpec::from_config_string(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unique_ids() {
        let spec = OracleSpec::null(4);
        let (e, _, _) = generate_synthetic(&spec, 150, 1).unwrap();
        let set: HashSet<_> = e.ids().iter().collect();
        assert_eq!(set.len(), 150);
    }
}
