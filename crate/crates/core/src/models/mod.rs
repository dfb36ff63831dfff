//! Multiclass softmax (logistic-regression) classifiers and video-level splits.

mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::Axis;
use crate::error::{Error, Result};
use crate::features::{FusionStats, RepresentationSpec};

pub use split::{video_level_split, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Balance {
    #[default]
    None,
    InverseFreq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    /// Recorded for provenance; full-batch descent from zero weights is
    /// deterministic without it.
    pub seed: u64,
    pub balance: Balance,
    /// Train on per-dimension standardized inputs, folding the scaling back
    /// into the stored weights.
    pub standardize: bool,
    /// Drop windows carrying a transition flag from the training set.
    pub exclude_transitions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            max_iters: 5000,
            grad_tolerance: 1e-5,
            seed: 0,
            balance: Balance::None,
            standardize: true,
            exclude_transitions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub grad_inf_norm: f64,
    pub converged: bool,
    pub n_train: usize,
}

/// Linear softmax model over a fixed class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub axis: Axis,
    pub class_order: Vec<String>,
    pub dim: usize,
    /// Row-major `C × dim`.
    #[serde(rename = "W")]
    pub weights: Vec<f64>,
    pub b: Vec<f64>,
    pub train_config: TrainConfig,
    pub train_report: TrainReport,
    pub feature_layout_string: String,
    pub encoder_id: Option<String>,
    #[serde(default)]
    pub representation: Option<RepresentationSpec>,
    #[serde(default)]
    pub fusion: Option<FusionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub argmax: usize,
    pub label: String,
    pub score: f64,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Weighted mean cross-entropy plus `λ/2 ‖W‖²` (bias unregularized) and its
/// gradient. `params` holds `W` row-major followed by `b`.
pub fn loss_and_grad(
    params: &[f64],
    x: &[Vec<f64>],
    y: &[usize],
    sample_weights: &[f64],
    n_classes: usize,
    l2_lambda: f64,
) -> (f64, Vec<f64>) {
    let d = if x.is_empty() { 0 } else { x[0].len() };
    let (w, b) = params.split_at(n_classes * d);
    let mut grad = vec![0.0; params.len()];
    let total_weight: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    let mut z = vec![0.0; n_classes];
    for ((xi, &yi), &si) in x.iter().zip(y).zip(sample_weights) {
        for c in 0..n_classes {
            z[c] = b[c] + w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += si * (lse - z[yi]);
        for c in 0..n_classes {
            let g = si * ((z[c] - lse).exp() - if c == yi { 1.0 } else { 0.0 });
            for (gw, v) in grad[c * d..(c + 1) * d].iter_mut().zip(xi) {
                *gw += g * v;
            }
            grad[n_classes * d + c] += g;
        }
    }
    let norm = if total_weight > 0.0 { total_weight } else { 1.0 };
    loss /= norm;
    for g in &mut grad {
        *g /= norm;
    }
    loss += 0.5 * l2_lambda * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad[..n_classes * d].iter_mut().zip(w) {
        *g += l2_lambda * v;
    }
    (loss, grad)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl SoftmaxClassifier {
    /// Fit on rows `x` with labels `y` drawn from `axis`'s vocabulary.
    /// The class order is the vocabulary order restricted to labels present
    /// in `y`; a single present label yields a constant predictor.
    pub fn train(axis: Axis, x: &[Vec<f32>], y: &[String], config: &TrainConfig) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
        }
        if x.is_empty() {
            return Err(Error::invalid("no training rows"));
        }
        if config.l2_lambda < 0.0 || !(config.grad_tolerance > 0.0) {
            return Err(Error::arg("train_config", "l2_lambda must be ≥ 0 and grad_tolerance > 0"));
        }
        let dim = x[0].len();
        if let Some(bad) = x.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        let vocab = axis.vocabulary();
        let mut present = vec![0usize; vocab.len()];
        for label in y {
            let i = axis.index_of(label).ok_or_else(|| Error::invalid(format!("{label:?} is not a {axis} label")))?;
            present[i] += 1;
        }
        let class_order: Vec<String> =
            vocab.iter().zip(&present).filter(|(_, &n)| n > 0).map(|(l, _)| l.to_string()).collect();
        let c = class_order.len();
        let yi: Vec<usize> = y.iter().map(|l| class_order.iter().position(|k| k == l).expect("present")).collect();
        if c < 2 || x.len() < c {
            if c < 2 {
                return Ok(Self::constant(axis, class_order, dim, config, x.len()));
            }
            return Err(Error::invalid("fewer training rows than classes"));
        }

        let (mu, sigma) = if config.standardize { column_stats(x) } else { (vec![0.0; dim], vec![1.0; dim]) };
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(mu.iter().zip(&sigma)).map(|(&v, (m, s))| (f64::from(v) - m) / s).collect())
            .collect();
        let weights: Vec<f64> = match config.balance {
            Balance::None => vec![1.0; x.len()],
            Balance::InverseFreq => {
                let mut counts = vec![0usize; c];
                for &k in &yi {
                    counts[k] += 1;
                }
                yi.iter().map(|&k| x.len() as f64 / (c as f64 * counts[k] as f64)).collect()
            }
        };

        let mut theta = vec![0.0; c * dim + c];
        let f = |t: &[f64]| loss_and_grad(t, &xs, &yi, &weights, c, config.l2_lambda);
        let (mut loss, mut grad) = f(&theta);
        let initial_loss = loss;
        let mut step: f64 = 1.0;
        let mut iterations = 0;
        while iterations < config.max_iters && inf_norm(&grad) >= config.grad_tolerance {
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            step = (step * 2.0).min(1e6);
            let accepted = loop {
                let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
                let (l, gr) = f(&candidate);
                if l <= loss - 1e-4 * step * g2 {
                    break Some((candidate, l, gr));
                }
                step *= 0.5;
                if step < 1e-20 {
                    break None;
                }
            };
            let Some((t, l, gr)) = accepted else { break };
            theta = t;
            loss = l;
            grad = gr;
            iterations += 1;
        }
        let grad_inf_norm = inf_norm(&grad);

        // fold standardization into the stored weights
        let (ws, bs) = theta.split_at(c * dim);
        let mut w = vec![0.0; c * dim];
        let mut b = bs.to_vec();
        for k in 0..c {
            for j in 0..dim {
                w[k * dim + j] = ws[k * dim + j] / sigma[j];
                b[k] -= ws[k * dim + j] * mu[j] / sigma[j];
            }
        }
        Ok(Self {
            axis,
            class_order,
            dim,
            weights: w,
            b,
            train_config: config.clone(),
            train_report: TrainReport {
                iterations,
                initial_loss,
                final_loss: loss,
                grad_inf_norm,
                converged: grad_inf_norm < config.grad_tolerance,
                n_train: x.len(),
            },
            feature_layout_string: String::new(),
            encoder_id: None,
            representation: None,
            fusion: None,
        })
    }

    fn constant(axis: Axis, class_order: Vec<String>, dim: usize, config: &TrainConfig, n: usize) -> Self {
        let c = class_order.len();
        Self {
            axis,
            class_order,
            dim,
            weights: vec![0.0; c * dim],
            b: vec![0.0; c],
            train_config: config.clone(),
            train_report: TrainReport {
                iterations: 0,
                initial_loss: 0.0,
                final_loss: 0.0,
                grad_inf_norm: 0.0,
                converged: true,
                n_train: n,
            },
            feature_layout_string: String::new(),
            encoder_id: None,
            representation: None,
            fusion: None,
        }
    }

    /// Attach the representation the model was trained on.
    pub fn with_representation(mut self, spec: RepresentationSpec, fusion: Option<FusionStats>) -> Self {
        self.feature_layout_string = spec.layout();
        self.encoder_id = spec.encoder_id().map(str::to_string);
        self.representation = Some(spec);
        self.fusion = fusion;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        Ok((0..self.n_classes())
            .map(|k| {
                self.b[k]
                    + self.weights[k * self.dim..(k + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let probs = self.predict_prob(x)?;
        // first maximum wins ties, in class order
        let argmax = probs.iter().enumerate().fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
        Ok(Prediction { label: self.class_order[argmax].clone(), score: probs[argmax], argmax, probs })
    }

    /// Map a raw representation vector to classifier input, applying the
    /// stored fusion standardization when present.
    pub fn prepare(&self, raw: &[f32]) -> Result<Vec<f64>> {
        match &self.fusion {
            None => Ok(raw.iter().map(|&v| f64::from(v)).collect()),
            Some(stats) => {
                let split = stats.clip.dim();
                if raw.len() != split + stats.flow.dim() {
                    return Err(Error::DimensionMismatch { expected: split + stats.flow.dim(), actual: raw.len() });
                }
                let mut out = stats.clip.apply_f64(&raw[..split])?;
                out.extend(stats.flow.apply_f64(&raw[split..])?);
                Ok(out)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&bytes)?;
        if model.weights.len() != model.n_classes() * model.dim || model.b.len() != model.n_classes() {
            return Err(Error::Format {
                what: "model file",
                reason: "weight shape does not match class order and dim".into(),
            });
        }
        Ok(model)
    }
}

fn column_stats(x: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mu = vec![0.0; d];
    for r in x {
        for (m, &v) in mu.iter_mut().zip(r) {
            *m += f64::from(v);
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for r in x {
        for ((s, &v), m) in var.iter_mut().zip(r).zip(&mu) {
            *s += (f64::from(v) - m).powi(2);
        }
    }
    let sigma = var.into_iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    (mu, sigma)
}

/// Train on raw representation rows. For a fused spec the rows are
/// `appearance ‖ motion`; block statistics are fitted on exactly these rows and
/// stored with the model.
pub fn train_for_representation(
    axis: Axis,
    spec: &RepresentationSpec,
    raw: &[Vec<f32>],
    y: &[String],
    config: &TrainConfig,
) -> Result<SoftmaxClassifier> {
    spec.validate()?;
    let fusion = match spec {
        RepresentationSpec::Fused { motion, .. } => {
            let motion_dim = motion.dim(0);
            let width = raw.first().map_or(0, Vec::len);
            if width <= motion_dim {
                return Err(Error::Format {
                    what: "fused rows",
                    reason: format!("width {width} leaves no appearance block"),
                });
            }
            let split_at = width - motion_dim;
            let (clip, flow): (Vec<Vec<f32>>, Vec<Vec<f32>>) =
                raw.iter().map(|r| (r[..split_at].to_vec(), r[split_at..].to_vec())).unzip();
            Some(FusionStats::fit(&clip, &flow)?)
        }
        _ => None,
    };
    let x = match &fusion {
        Some(stats) => {
            let at = stats.clip.dim();
            raw.iter().map(|r| stats.fuse_row(&r[..at], &r[at..])).collect::<Result<Vec<_>>>()?
        }
        None => raw.to_vec(),
    };
    Ok(SoftmaxClassifier::train(axis, &x, y, config)?.with_representation(spec.clone(), fusion))
}

/// Fallback to `fallback` when the top probability is below `tau`.
pub fn apply_threshold(pred: &Prediction, tau: f64, fallback: &str) -> Result<String> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::arg("tau", format!("threshold {tau} outside [0, 1]")));
    }
    Ok(if pred.score < tau { fallback.to_string() } else { pred.label.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    pub(crate) fn blobs(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<String>) {
        let mut rng = SeededRng::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let (cx, label) = if i % 2 == 0 { (2.0, "ROUTINE") } else { (-2.0, "FOOT_PURSUIT") };
            x.push(vec![(cx + rng.unit_f64() - 0.5) as f32, (rng.unit_f64() - 0.5) as f32]);
            y.push(label.to_string());
        }
        (x, y)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(100, 3);
        let clf = SoftmaxClassifier::train(Axis::Activity, &x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(clf.class_order, vec!["ROUTINE", "FOOT_PURSUIT"]);
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, l)| clf.predict(&r.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()).unwrap().label == **l)
            .count();
        assert!(correct as f64 / 100.0 >= 0.99);
        assert!(clf.train_report.final_loss <= clf.train_report.initial_loss);
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let y = vec!["OUTDOOR".to_string(); 2];
        let clf = SoftmaxClassifier::train(Axis::Context, &x, &y, &TrainConfig::default()).unwrap();
        let p = clf.predict(&[10.0, -5.0]).unwrap();
        assert_eq!((p.label.as_str(), p.score), ("OUTDOOR", 1.0));
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let (x, y) = blobs(50, 1);
        let cfg = TrainConfig { l2_lambda: 1e6, standardize: false, ..TrainConfig::default() };
        let clf = SoftmaxClassifier::train(Axis::Activity, &x, &y, &cfg).unwrap();
        assert!(clf.weights.iter().all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn zero_model_is_uniform_and_shift_invariant() {
        let mut clf = SoftmaxClassifier::constant(
            Axis::Activity,
            Axis::Activity.vocabulary().iter().map(|s| s.to_string()).collect(),
            3,
            &TrainConfig::default(),
            0,
        );
        assert_eq!(clf.predict_prob(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25; 4]);
        clf.weights = vec![0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.9, 0.1, 0.2, -0.7, 0.3, 0.6];
        let x = [0.5, -1.0, 2.0];
        let p = clf.predict_prob(&x).unwrap();
        for c in [-50.0, 3.0, 700.0] {
            let mut shifted = clf.clone();
            shifted.b.iter_mut().for_each(|b| *b += c);
            for (a, b) in p.iter().zip(shifted.predict_prob(&x).unwrap()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(clf.predict_prob(&[1.0]).is_err());
    }

    #[test]
    fn thresholds() {
        let pred =
            |score: f64| Prediction { probs: vec![score, 1.0 - score], argmax: 0, label: "OUTDOOR".into(), score };
        assert_eq!(apply_threshold(&pred(0.9), 0.5, "LOW_VIS").unwrap(), "OUTDOOR");
        assert_eq!(apply_threshold(&pred(0.4), 0.5, "LOW_VIS").unwrap(), "LOW_VIS");
        assert_eq!(apply_threshold(&pred(0.0), 0.0, "LOW_VIS").unwrap(), "OUTDOOR");
        assert!(apply_threshold(&pred(0.5), 1.01, "LOW_VIS").is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let (x, y) = blobs(20, 2);
        let clf = SoftmaxClassifier::train(Axis::Activity, &x, &y, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        clf.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for field in ["class_order", "\"W\"", "\"b\"", "train_config", "feature_layout_string", "encoder_id", "\"dim\""]
        {
            assert!(text.contains(field), "{field}");
        }
        assert_eq!(SoftmaxClassifier::load(&path).unwrap(), clf);
    }

    #[test]
    fn permuted_rows_train_identically() {
        let (x, y) = blobs(40, 9);
        let cfg = TrainConfig::default();
        let a = SoftmaxClassifier::train(Axis::Activity, &x, &y, &cfg).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        SeededRng::new(5).shuffle(&mut idx);
        let xp: Vec<_> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<_> = idx.iter().map(|&i| y[i].clone()).collect();
        let b = SoftmaxClassifier::train(Axis::Activity, &xp, &yp, &cfg).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights).chain(a.b.iter().zip(&b.b)) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(21);
        for _ in 0..10 {
            let (c, d, n) = (2 + rng.below(3) as usize, 1 + rng.below(10) as usize, 6);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| 2.0 * rng.unit_f64() - 1.0).collect()).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
            let sw: Vec<f64> = (0..n).map(|_| 0.5 + rng.unit_f64()).collect();
            let theta: Vec<f64> = (0..c * d + c).map(|_| rng.unit_f64() - 0.5).collect();
            let (_, g) = loss_and_grad(&theta, &x, &y, &sw, c, 0.1);
            for i in 0..theta.len() {
                let h = 1e-5;
                let mut p = theta.clone();
                p[i] += h;
                let up = loss_and_grad(&p, &x, &y, &sw, c, 0.1).0;
                p[i] -= 2.0 * h;
                let down = loss_and_grad(&p, &x, &y, &sw, c, 0.1).0;
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - g[i]).abs() <= 1e-4 * numeric.abs().max(g[i].abs()).max(1e-3));
            }
        }
    }

    proptest! {
        #[test]
        fn fallback_count_monotone_in_tau(scores in proptest::collection::vec(0.25f64..1.0, 1..30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let count = |tau: f64| scores.iter().filter(|&&s| {
                let p = Prediction { probs: vec![s], argmax: 0, label: "X".into(), score: s };
                apply_threshold(&p, tau, "F").unwrap() == "F"
            }).count();
            prop_assert!(count(lo) <= count(hi));
        }
    }
}
