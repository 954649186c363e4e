//! Alternating training loop, test-time encoding and model files.
//!
//! One outer iteration updates, in order: the dictionary (closed form at the
//! current multipliers), every code (one gradient step each), the predictor
//! weights (one gradient step), and the multipliers (projected dual ascent).
//! The maximizer set of the structured bound is computed from the previous
//! iterate and held fixed for the whole iteration.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Label};
use crate::error::{Error, Result};
use crate::hyperloss::{
    argmax_scores, dot, labels_from_scores, mismatch_coefficients, predict_for_measure, ArgmaxResult,
    HyperPredictor, TiePolicy, BRUTE_FORCE_LIMIT,
};
use crate::measures::{tuple_loss, MeasureKind};
use crate::sparse_coding::{
    code_gradient, code_step, dual_ascent_alphas, ridge_codes, smoothing_weights, Dictionary,
    DictionarySystem, DualAscentOptions, SparseCodes,
};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Sparsity weight.
    pub c1: f64,
    /// Predictor-complexity weight.
    pub c2: f64,
    /// Structured-loss weight.
    pub c3: f64,
    /// Gradient step size for codes and weights.
    pub eta: f64,
    /// Outer iterations.
    pub iters: usize,
    /// Dictionary size; `None` means `min(2d, n)`.
    pub atoms: Option<usize>,
    /// Cap on every `‖d_j‖²`.
    pub norm_cap: f64,
    /// Floor in the ℓ1 smoothing weights.
    pub eps: f64,
    pub measure: MeasureKind,
    pub seed: u64,
    pub dual_rate: f64,
    pub dual_steps: usize,
    pub alpha_init: f64,
    /// Lower bound the multiplier projection clamps to.
    pub alpha_floor: f64,
    /// Gradient steps when coding unseen points.
    pub encode_iters: usize,
    pub tie_policy: TiePolicy,
    /// Halve `eta` after an iteration that increases the objective.
    pub backoff: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c1: 0.1,
            c2: 0.01,
            c3: 1.0,
            eta: 0.01,
            iters: 100,
            atoms: None,
            norm_cap: 1.0,
            eps: 1e-8,
            measure: MeasureKind::F1,
            seed: 0,
            dual_rate: 0.1,
            dual_steps: 50,
            alpha_init: 1e-3,
            alpha_floor: 1e-6,
            encode_iters: 100,
            tie_policy: TiePolicy::Single,
            backoff: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("alpha_init", self.alpha_init), ("alpha_floor", self.alpha_floor)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        let pos = [("eta", self.eta), ("norm_cap", self.norm_cap), ("eps", self.eps), ("dual_rate", self.dual_rate)];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite positive number, got {v}")));
            }
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.atoms == Some(0) {
            return Err(Error::Config("dictionary size must be at least 1".into()));
        }
        Ok(())
    }

    /// Dictionary size used for data with `n` points in `d` dimensions.
    pub fn resolved_atoms(&self, n: usize, d: usize) -> usize {
        self.atoms.unwrap_or_else(|| (2 * d).min(n).max(1))
    }

    fn dual_options(&self) -> DualAscentOptions {
        DualAscentOptions { rate: self.dual_rate, steps: self.dual_steps, tol: 1e-6, floor: self.alpha_floor }
    }
}

/// Objective components after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `Σ ‖x_i − D s_i‖²`.
    pub reconstruction: f64,
    /// `C1 Σ ‖s_i‖₁`.
    pub sparsity: f64,
    /// `C2/2 ‖w‖²`.
    pub complexity: f64,
    /// `C3 · max F`.
    pub surrogate_loss: f64,
    /// Sum of the four terms above.
    pub objective: f64,
    /// `max F`, the bound on the training loss.
    pub upper_bound: f64,
    /// Loss of the predicted training tuple.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dictionary: Dictionary,
    pub weights: HyperPredictor,
    pub config: TrainConfig,
    pub trace: Vec<TraceEntry>,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    pub fn atoms(&self) -> usize {
        self.dictionary.atoms()
    }

    /// Code the rows of `features` and return the responses `w·s_i`.
    pub fn scores(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let codes = encode(&self.dictionary, features, &self.config)?;
        self.weights.scores(&codes)
    }

    /// Responses and sign labels for a dataset.
    pub fn predict(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<Label>)> {
        let scores = self.scores(data.features())?;
        let labels = labels_from_scores(&scores);
        Ok((scores, labels))
    }
}

/// Stages of one outer iteration, reported to a [`fit_with_observer`]
/// callback after each stage completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Dictionary,
    Codes,
    Predictor,
    Multipliers,
}

/// Full training state, exposed for inspection.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    pub weights: HyperPredictor,
}

fn check_data(data: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let (n_pos, n_neg) = data.class_counts();
    if config.measure.needs_both_classes() && (n_pos == 0 || n_neg == 0) {
        return Err(Error::DegenerateClass(format!(
            "{} training needs both classes (positives={n_pos}, negatives={n_neg})",
            config.measure
        )));
    }
    if config.tie_policy == TiePolicy::Average && data.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::Config(format!(
            "tie policy `average` enumerates all label tuples and supports at most {BRUTE_FORCE_LIMIT} points, got {}",
            data.len()
        )));
    }
    Ok(())
}

/// Initial dictionary, codes and weights.
///
/// Dictionary elements are data points drawn without replacement (with
/// replacement when `m > n`), rescaled to norm `√c`; codes are ridge
/// solutions with weight `C1`; weights are uniform in `[−0.01, 0.01]`.
pub fn initialize(data: &Dataset, config: &TrainConfig, rng: &mut impl Rng) -> Result<TrainState> {
    config.validate()?;
    let (n, d) = (data.len(), data.dim());
    let m = config.resolved_atoms(n, d);
    let x = data.features();

    let picks: Vec<usize> = if m <= n {
        sample(rng, n, m).into_vec()
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    };
    let scale = config.norm_cap.sqrt();
    let mut elements = DMatrix::zeros(d, m);
    for (j, &i) in picks.iter().enumerate() {
        let mut col: Vec<f64> = x.row(i).iter().copied().collect();
        let mut norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            col = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        for (k, v) in col.iter().enumerate() {
            elements[(k, j)] = v * scale / norm;
        }
    }

    let codes = SparseCodes(ridge_codes(&elements, &x.transpose(), config.c1)?);
    let weights = HyperPredictor::new((0..m).map(|_| rng.random_range(-0.01..=0.01)).collect());
    let dictionary = Dictionary::new(elements, config.norm_cap, vec![config.alpha_init; m])?;
    Ok(TrainState { dictionary, codes, weights })
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

struct Evaluation {
    entry: TraceEntry,
    argmax: ArgmaxResult,
}

fn evaluate(
    iteration: usize,
    x: &DMatrix<f64>,
    y: &[Label],
    state: &TrainState,
    config: &TrainConfig,
) -> Result<Evaluation> {
    let residual = x - &state.dictionary.elements * state.codes.matrix();
    let reconstruction = residual.norm_squared();
    let sparsity = config.c1 * state.codes.matrix().iter().map(|v| v.abs()).sum::<f64>();
    let complexity = 0.5 * config.c2 * dot(&state.weights.weights, &state.weights.weights);
    let scores = state.weights.scores(&state.codes)?;
    let argmax = argmax_scores(&scores, y, config.measure, config.tie_policy)?;
    let upper_bound = argmax.max_value;
    let predicted = predict_for_measure(config.measure, &state.weights, &state.codes, y)?;
    let train_loss = tuple_loss(config.measure, y, &predicted)?;
    let surrogate_loss = config.c3 * upper_bound;
    let entry = TraceEntry {
        iteration,
        reconstruction,
        sparsity,
        complexity,
        surrogate_loss,
        objective: reconstruction + sparsity + complexity + surrogate_loss,
        upper_bound,
        train_loss,
    };
    Ok(Evaluation { entry, argmax })
}

/// Train a model.
pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<Model> {
    fit_with_observer(data, config, |_, _, _| {})
}

/// Train a model, calling `observer(iteration, stage, state)` after every
/// update stage.
pub fn fit_with_observer(
    data: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, Stage, &TrainState),
) -> Result<Model> {
    check_data(data, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = initialize(data, config, &mut rng)?;
    let x = data.features().transpose();
    let y = data.labels();
    let n = data.len();
    let m = state.dictionary.atoms();
    let dual = config.dual_options();

    let mut eta = config.eta;
    let mut trace = Vec::with_capacity(config.iters);
    let mut argmax = evaluate(0, &x, y, &state, config)?.argmax;
    let mut last_objective = f64::INFINITY;

    for t in 1..=config.iters {
        let coef = mismatch_coefficients(y, &argmax.maximizers)?;

        let system = DictionarySystem::new(&x, state.codes.matrix())?;
        if !system.is_finite() {
            return Err(Error::Numerical { iteration: t, message: "code statistics overflowed".into() });
        }
        state.dictionary.elements = system.solve(&state.dictionary.multipliers)?;
        observer(t, Stage::Dictionary, &state);

        let w_prev = state.weights.weights.clone();
        let mut next = state.codes.0.clone();
        for i in 0..n {
            let s_prev = state.codes.code(i);
            let u = smoothing_weights(s_prev, config.eps);
            let loss_term: Vec<f64> = w_prev.iter().map(|v| config.c3 * coef[i] * v).collect();
            let xi: Vec<f64> = x.column(i).iter().copied().collect();
            let grad = code_gradient(&state.dictionary.elements, &xi, s_prev, &u, config.c1, &loss_term)?;
            next.column_mut(i).copy_from_slice(&code_step(s_prev, &grad, eta));
        }
        state.codes = SparseCodes(next);
        observer(t, Stage::Codes, &state);

        let mut grad_w: Vec<f64> = w_prev.iter().map(|v| config.c2 * v).collect();
        for (i, &k) in coef.iter().enumerate() {
            if k != 0.0 {
                for (g, s) in grad_w.iter_mut().zip(state.codes.code(i)) {
                    *g += config.c3 * k * s;
                }
            }
        }
        state.weights = HyperPredictor::new(code_step(&w_prev, &grad_w, eta));
        observer(t, Stage::Predictor, &state);

        let system = DictionarySystem::new(&x, state.codes.matrix())?;
        if !system.is_finite() {
            return Err(Error::Numerical { iteration: t, message: "code statistics overflowed".into() });
        }
        let ascent = dual_ascent_alphas(&system, config.norm_cap, &state.dictionary.multipliers, &dual)?;
        state.dictionary.multipliers = ascent.alphas;
        observer(t, Stage::Multipliers, &state);

        if !all_finite(state.codes.matrix().iter())
            || !all_finite(&state.weights.weights)
            || !all_finite(state.dictionary.elements.iter())
            || !all_finite(&state.dictionary.multipliers)
        {
            return Err(Error::Numerical { iteration: t, message: "non-finite parameters".into() });
        }

        let eval = evaluate(t, &x, y, &state, config)?;
        if !eval.entry.objective.is_finite() {
            return Err(Error::Numerical { iteration: t, message: "objective overflowed".into() });
        }
        if config.backoff && eval.entry.objective > last_objective {
            eta *= 0.5;
        }
        last_objective = eval.entry.objective;
        argmax = eval.argmax;
        trace.push(eval.entry);
    }

    debug_assert_eq!(state.weights.weights.len(), m);
    Ok(Model { dictionary: state.dictionary, weights: state.weights, config: config.clone(), trace })
}

/// Code unseen points with the label-free coding subproblem.
///
/// Starts from the ridge solution and takes `encode_iters` gradient steps
/// on reconstruction plus smoothed ℓ1, refreshing the smoothing weights
/// from the previous step each time.
pub fn encode(dict: &Dictionary, features: &DMatrix<f64>, config: &TrainConfig) -> Result<SparseCodes> {
    if features.ncols() != dict.dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            dict.dim(),
            features.ncols()
        )));
    }
    let x = features.transpose();
    let mut codes = ridge_codes(&dict.elements, &x, config.c1)?;
    let zero = vec![0.0; dict.atoms()];
    for i in 0..x.ncols() {
        let xi: Vec<f64> = x.column(i).iter().copied().collect();
        let mut s: Vec<f64> = codes.column(i).iter().copied().collect();
        for _ in 0..config.encode_iters {
            let u = smoothing_weights(&s, config.eps);
            let g = code_gradient(&dict.elements, &xi, &s, &u, config.c1, &zero)?;
            s = code_step(&s, &g, config.eta);
        }
        codes.column_mut(i).copy_from_slice(&s);
    }
    Ok(SparseCodes(codes))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u64,
    d: usize,
    m: usize,
    c: f64,
    measure: MeasureKind,
    config: TrainConfig,
    /// Row-major `d × m`.
    dictionary: Vec<f64>,
    weights: Vec<f64>,
    alphas: Vec<f64>,
    trace: Vec<TraceEntry>,
}

pub fn save_model(model: &Model) -> Result<String> {
    let (d, m) = (model.dim(), model.atoms());
    let elements = &model.dictionary.elements;
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        d,
        m,
        c: model.dictionary.norm_cap,
        measure: model.config.measure,
        config: model.config.clone(),
        dictionary: (0..d).flat_map(|r| (0..m).map(move |c| elements[(r, c)])).collect(),
        weights: model.weights.weights.clone(),
        alphas: model.dictionary.multipliers.clone(),
        trace: model.trace.clone(),
    };
    let mut out = serde_json::to_string_pretty(&file).map_err(|e| Error::Model(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Model(format!("unreadable model: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Model("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::Version { found: version, expected: SCHEMA_VERSION });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Model(e.to_string()))?;

    let (d, m) = (file.d, file.m);
    if d == 0 || m == 0 {
        return Err(Error::Model("dimensions must be positive".into()));
    }
    if file.dictionary.len() != d * m {
        return Err(Error::Model(format!("dictionary has {} entries, expected {d}×{m}", file.dictionary.len())));
    }
    if file.weights.len() != m {
        return Err(Error::Model(format!("weights have length {}, expected m={m}", file.weights.len())));
    }
    if file.alphas.len() != m {
        return Err(Error::Model(format!("alphas have length {}, expected m={m}", file.alphas.len())));
    }
    if file.c != file.config.norm_cap || file.measure != file.config.measure {
        return Err(Error::Model("header fields disagree with config".into()));
    }
    if let Some(a) = file.config.atoms {
        if a != m {
            return Err(Error::Model(format!("config dictionary size {a} disagrees with m={m}")));
        }
    }
    if file.trace.len() != file.config.iters {
        return Err(Error::Model(format!("trace has {} entries, expected {}", file.trace.len(), file.config.iters)));
    }
    file.config.validate()?;
    let elements = DMatrix::from_row_slice(d, m, &file.dictionary);
    let dictionary = Dictionary::new(elements, file.c, file.alphas).map_err(|e| Error::Model(e.to_string()))?;
    Ok(Model { dictionary, weights: HyperPredictor::new(file.weights), config: file.config, trace: file.trace })
}
