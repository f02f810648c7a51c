use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::lstm::{self, LayerCache};
use super::mixture::{
    decode_gmm, decode_heatmap, gmm_nll_grad, gmm_point_estimate, heatmap_loss_grad, heatmap_point_estimate,
    softplus_inv, GmmParams, HeatmapParams, SIGMA_FLOOR,
};
use super::params::{ParamSet, Tensor};
use super::{HeadKind, ModelConfig};
use crate::dsp::{FrameGrid, FrameSeries};
use crate::embeddings::AlignedEmbeddings;
use crate::error::{Error, Result};

/// Every per-frame stream a model might consume, on one grid.
#[derive(Debug, Clone)]
pub struct FeatureStreams {
    pub grid: FrameGrid,
    /// One column: RMS energy.
    pub rmse: Option<FrameSeries>,
    /// Two columns: pitch and YIN f0.
    pub prosody: Option<FrameSeries>,
    pub embeddings: AlignedEmbeddings,
}

impl FeatureStreams {
    pub fn slice_frames(&self, start: usize, len: usize) -> FeatureStreams {
        let embeddings = self.embeddings.slice_frames(start, len);
        FeatureStreams {
            grid: embeddings.grid,
            rmse: self.rmse.as_ref().map(|r| r.slice_frames(start, len)),
            prosody: self.prosody.as_ref().map(|p| p.slice_frames(start, len)),
            embeddings,
        }
    }
}

/// Raw (unnormalized) model input for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `n_frames x audio_input_dim`, columns ordered W, R, A.
    pub audio: Array2<f64>,
    /// `n_frames x word_dim` when G is enabled.
    pub word: Option<Array2<f64>>,
}

impl ModelInput {
    pub fn n_frames(&self) -> usize {
        self.audio.nrows()
    }

    /// Picks the streams `config` needs, failing with the list of missing ones.
    pub fn assemble(config: &ModelConfig, streams: &FeatureStreams) -> Result<ModelInput> {
        let f = &config.features;
        let mut missing = Vec::new();
        if f.acoustic && streams.embeddings.acoustic.is_none() {
            missing.push("W");
        }
        if f.word && streams.embeddings.word.is_none() {
            missing.push("G");
        }
        if f.rmse && streams.rmse.is_none() {
            missing.push("R");
        }
        if f.prosody && streams.prosody.is_none() {
            missing.push("A");
        }
        if !missing.is_empty() {
            return Err(Error::MissingStream(format!("missing stream {}", missing.join(", "))));
        }
        let grid = streams.grid;
        let check = |name: &str, other: &FrameGrid| {
            if grid.aligned_with(other) {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "grid mismatch: stream {name} has {} frames, expected {}",
                    other.n_frames, grid.n_frames
                )))
            }
        };
        check("embeddings", &streams.embeddings.grid)?;
        let n = grid.n_frames;
        let mut cols: Vec<Array2<f64>> = Vec::new();
        if f.acoustic {
            let a = streams.embeddings.acoustic.as_ref().unwrap();
            if a.ncols() != config.acoustic_dim {
                return Err(Error::Validation(format!(
                    "acoustic embeddings have dim {}, model expects {}",
                    a.ncols(),
                    config.acoustic_dim
                )));
            }
            cols.push(a.mapv(f64::from));
        }
        if f.rmse {
            let r = streams.rmse.as_ref().unwrap();
            check("R", &r.grid)?;
            cols.push(r.values.slice(s![.., 0..1]).to_owned());
        }
        if f.prosody {
            let p = streams.prosody.as_ref().unwrap();
            check("A", &p.grid)?;
            if p.dim() != 2 {
                return Err(Error::Validation(format!("prosody stream has {} columns, expected 2", p.dim())));
            }
            cols.push(p.values.clone());
        }
        let audio = if cols.is_empty() {
            Array2::zeros((n, 0))
        } else {
            let views: Vec<_> = cols.iter().map(|c| c.view()).collect();
            concatenate(Axis(1), &views).expect("equal rows")
        };
        let word = if f.word {
            let w = streams.embeddings.word.as_ref().unwrap();
            if w.ncols() != config.word_dim {
                return Err(Error::Validation(format!(
                    "word embeddings have dim {}, model expects {}",
                    w.ncols(),
                    config.word_dim
                )));
            }
            Some(w.mapv(f64::from))
        } else {
            None
        };
        Ok(ModelInput { audio, word })
    }
}

/// Fixed affine input normalization, `(x - shift) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub audio_shift: Vec<f64>,
    pub audio_scale: Vec<f64>,
    pub word_shift: Vec<f64>,
    pub word_scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(config: &ModelConfig) -> Self {
        let (da, dw) = (config.audio_input_dim(), config.word_input_dim());
        InputNorm {
            audio_shift: vec![0.0; da],
            audio_scale: vec![1.0; da],
            word_shift: vec![0.0; dw],
            word_scale: vec![1.0; dw],
        }
    }

    /// Per-column standardization fitted on `inputs`.
    pub fn fit<'a>(config: &ModelConfig, inputs: impl IntoIterator<Item = &'a ModelInput>) -> Self {
        let (da, dw) = (config.audio_input_dim(), config.word_input_dim());
        let mut sums = [vec![0.0; da], vec![0.0; dw]];
        let mut sqs = [vec![0.0; da], vec![0.0; dw]];
        let mut n = 0usize;
        for input in inputs {
            n += input.n_frames();
            for row in input.audio.rows() {
                for (j, v) in row.iter().enumerate() {
                    sums[0][j] += v;
                    sqs[0][j] += v * v;
                }
            }
            if let Some(w) = &input.word {
                for row in w.rows() {
                    for (j, v) in row.iter().enumerate() {
                        sums[1][j] += v;
                        sqs[1][j] += v * v;
                    }
                }
            }
        }
        let stats = |sum: &[f64], sq: &[f64]| -> (Vec<f64>, Vec<f64>) {
            if n == 0 {
                return (vec![0.0; sum.len()], vec![1.0; sum.len()]);
            }
            sum.iter()
                .zip(sq)
                .map(|(s, q)| {
                    let mean = s / n as f64;
                    let var = (q / n as f64 - mean * mean).max(0.0);
                    (mean, 1.0 / var.sqrt().max(1e-6))
                })
                .unzip()
        };
        let (audio_shift, audio_scale) = stats(&sums[0], &sqs[0]);
        let (word_shift, word_scale) = stats(&sums[1], &sqs[1]);
        InputNorm {
            audio_shift,
            audio_scale,
            word_shift,
            word_scale,
        }
    }

    fn apply(m: &mut Array2<f64>, shift: &[f64], scale: &[f64]) {
        for mut row in m.rows_mut() {
            for ((v, s), k) in row.iter_mut().zip(shift).zip(scale) {
                *v = (*v - s) * k;
            }
        }
    }
}

/// Ground truth for one training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: ModelInput,
    pub tau: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutputs {
    Gmm(Vec<GmmParams>),
    Heatmap(Vec<HeatmapParams>),
}

impl HeadOutputs {
    pub fn len(&self) -> usize {
        match self {
            HeadOutputs::Gmm(v) => v.len(),
            HeadOutputs::Heatmap(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Pass {
    steps: usize,
    batch: usize,
    layers: Vec<LayerCache>,
    dropout_masks: Vec<Option<Array2<f64>>>,
    head_in: Array2<f64>,
    out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub norm: InputNorm,
}

impl Model {
    /// Parameter names and shapes implied by `config`.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let h = config.hidden;
        let mut out = Vec::new();
        for l in 0..config.lstm_layers {
            let d = if l == 0 { config.audio_input_dim() } else { h };
            out.push((format!("lstm{l}.w_ih"), vec![4 * h, d]));
            out.push((format!("lstm{l}.w_hh"), vec![4 * h, h]));
            out.push((format!("lstm{l}.bias"), vec![4 * h]));
        }
        out.push(("head.weight".into(), vec![config.head_output_dim(), config.head_input_dim()]));
        out.push(("head.bias".into(), vec![config.head_output_dim()]));
        out
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let params = ParamSet {
            tensors: Model::layout(&config)
                .into_iter()
                .map(|(name, shape)| Tensor::zeros(name, &shape))
                .collect(),
        };
        let norm = InputNorm::identity(&config);
        Ok(Model { config, params, norm })
    }

    /// LSTM weights uniform in `±1/sqrt(hidden)` with forget bias 1; head
    /// weights uniform in `±1/sqrt(fan_in)`. Mixture means start spread over
    /// `[0, delta_max]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        let mut model = Model::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = model.config.clone();
        let h = cfg.hidden;
        let k_lstm = 1.0 / (h as f64).sqrt();
        let k_head = 1.0 / (cfg.head_input_dim() as f64).sqrt();
        let n_layers = cfg.lstm_layers;
        for (idx, t) in model.params.tensors.iter_mut().enumerate() {
            let is_head = idx >= 3 * n_layers;
            let is_bias = t.shape.len() == 1;
            if is_bias && !is_head {
                for (j, v) in t.data.iter_mut().enumerate() {
                    *v = if (h..2 * h).contains(&j) { 1.0 } else { rng.gen_range(-k_lstm..k_lstm) };
                }
            } else if !is_bias {
                let k = if is_head { k_head } else { k_lstm };
                for v in t.data.iter_mut() {
                    *v = rng.gen_range(-k..k);
                }
            }
        }
        if cfg.head == HeadKind::Gmm {
            let t = cfg.components;
            let sigma0 = (cfg.delta_max / (2.0 * t as f64)).max(0.05).min(cfg.delta_max * 0.5);
            let bias = &mut model.params.tensors[3 * n_layers + 1].data;
            for i in 0..t {
                bias[i] = cfg.delta_max * (i as f64 + 0.5) / t as f64;
                bias[t + i] = softplus_inv(sigma0 - SIGMA_FLOOR);
            }
        }
        Ok(model)
    }

    fn lstm_tensors(&self, l: usize) -> (&Tensor, &Tensor, &Tensor) {
        let t = &self.params.tensors;
        (&t[3 * l], &t[3 * l + 1], &t[3 * l + 2])
    }

    fn head_tensors(&self) -> (&Tensor, &Tensor) {
        let n = 3 * self.config.lstm_layers;
        (&self.params.tensors[n], &self.params.tensors[n + 1])
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let cfg = &self.config;
        if input.audio.ncols() != cfg.audio_input_dim() {
            return Err(Error::Validation(format!(
                "audio input has {} columns, model expects {}",
                input.audio.ncols(),
                cfg.audio_input_dim()
            )));
        }
        match (&input.word, cfg.features.word) {
            (Some(w), true) if w.ncols() == cfg.word_dim && w.nrows() == input.n_frames() => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::Validation("word input does not match model configuration".into())),
        }
    }

    fn forward_pass(&self, inputs: &[&ModelInput], mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Pass> {
        let batch = inputs.len();
        let steps = inputs.first().map_or(0, |i| i.n_frames());
        for input in inputs {
            self.check_input(input)?;
            if input.n_frames() != steps {
                return Err(Error::Validation("batch sequences must have equal length".into()));
            }
        }
        let cfg = &self.config;
        let tb = steps * batch;
        let mut x = Array2::<f64>::zeros((tb, cfg.audio_input_dim()));
        for (b, input) in inputs.iter().enumerate() {
            for t in 0..steps {
                x.row_mut(t * batch + b).assign(&input.audio.row(t));
            }
        }
        InputNorm::apply(&mut x, &self.norm.audio_shift, &self.norm.audio_scale);

        let p = cfg.dropout;
        let mut layers = Vec::with_capacity(cfg.lstm_layers);
        let mut dropout_masks = Vec::with_capacity(cfg.lstm_layers);
        for l in 0..cfg.lstm_layers {
            let (w_ih, w_hh, bias) = self.lstm_tensors(l);
            let cache = lstm::forward(w_ih.view2(), w_hh.view2(), bias.view1(), x, steps, batch);
            let mut y = cache.h.clone();
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = Array2::from_shape_simple_fn(y.dim(), || if rng.gen::<f64>() < p { 0.0 } else { keep });
                    y *= &m;
                    Some(m)
                }
                _ => None,
            };
            layers.push(cache);
            dropout_masks.push(mask);
            x = y;
        }

        let head_in = if cfg.features.word {
            let mut w = Array2::<f64>::zeros((tb, cfg.word_dim));
            for (b, input) in inputs.iter().enumerate() {
                let words = input.word.as_ref().expect("checked");
                for t in 0..steps {
                    w.row_mut(t * batch + b).assign(&words.row(t));
                }
            }
            InputNorm::apply(&mut w, &self.norm.word_shift, &self.norm.word_scale);
            concatenate(Axis(1), &[x.view(), w.view()]).expect("equal rows")
        } else {
            x
        };
        let (hw, hb) = self.head_tensors();
        let mut out = Array2::<f64>::zeros((tb, cfg.head_output_dim()));
        general_mat_mul(1.0, &head_in, &hw.view2().t(), 0.0, &mut out);
        out += &hb.view1();
        Ok(Pass {
            steps,
            batch,
            layers,
            dropout_masks,
            head_in,
            out,
        })
    }

    /// Raw head outputs for one sequence, `n_frames x head_output_dim`.
    pub fn raw_outputs(&self, input: &ModelInput) -> Result<Array2<f64>> {
        Ok(self.forward_pass(&[input], None)?.out)
    }

    /// Per-frame mixture or heatmap parameters. Dropout is never applied here.
    pub fn forward(&self, input: &ModelInput) -> Result<HeadOutputs> {
        let out = self.raw_outputs(input)?;
        Ok(self.decode(&out))
    }

    fn decode(&self, out: &Array2<f64>) -> HeadOutputs {
        let cfg = &self.config;
        let rows = out.rows().into_iter().map(|r| r.to_vec());
        match cfg.head {
            HeadKind::Gmm => HeadOutputs::Gmm(rows.map(|r| decode_gmm(&r, cfg.components, cfg.delta_max)).collect()),
            HeadKind::Heatmap => HeadOutputs::Heatmap(rows.map(|r| decode_heatmap(&r)).collect()),
        }
    }

    pub fn point_estimates(&self, outputs: &HeadOutputs) -> Vec<f64> {
        let cfg = &self.config;
        match outputs {
            HeadOutputs::Gmm(v) => v
                .iter()
                .map(|p| gmm_point_estimate(p, cfg.point_estimate, cfg.delta_max))
                .collect(),
            HeadOutputs::Heatmap(v) => v
                .iter()
                .map(|p| heatmap_point_estimate(p, cfg.buckets_per_second, cfg.delta_max))
                .collect(),
        }
    }

    /// Per-frame lead-time estimates in `[0, delta_max]`.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let outputs = self.forward(input)?;
        Ok(self.point_estimates(&outputs))
    }

    /// Mean loss over masked-in frames of the batch, the number of such frames,
    /// and (when `want_grad`) the gradient of that mean.
    pub fn loss_and_grad(
        &self,
        batch: &[&TrainSample],
        dropout_rng: Option<&mut ChaCha8Rng>,
        want_grad: bool,
    ) -> Result<(f64, usize, Option<ParamSet>)> {
        let inputs: Vec<&ModelInput> = batch.iter().map(|s| &s.input).collect();
        for s in batch {
            if s.tau.len() != s.input.n_frames() || s.mask.len() != s.input.n_frames() {
                return Err(Error::Validation("labels and input differ in length".into()));
            }
        }
        let n_masked: usize = batch.iter().map(|s| s.mask.iter().filter(|&&m| m).count()).sum();
        if n_masked == 0 {
            return Ok((0.0, 0, want_grad.then(|| self.params.zeros_like())));
        }
        let pass = self.forward_pass(&inputs, dropout_rng)?;
        let cfg = &self.config;
        let scale = 1.0 / n_masked as f64;
        let mut d_out = Array2::<f64>::zeros(pass.out.dim());
        let mut total = 0.0;
        for t in 0..pass.steps {
            for (b, sample) in batch.iter().enumerate() {
                if !sample.mask[t] {
                    continue;
                }
                let row = t * pass.batch + b;
                let raw = pass.out.row(row);
                let raw = raw.as_slice().expect("contiguous rows");
                let grad = want_grad.then(|| d_out.row_mut(row).into_slice().expect("contiguous rows"));
                total += match cfg.head {
                    HeadKind::Gmm => gmm_nll_grad(raw, sample.tau[t], cfg.components, cfg.delta_max, scale, grad),
                    HeadKind::Heatmap => heatmap_loss_grad(raw, sample.tau[t], cfg.buckets_per_second, scale, grad),
                };
            }
        }
        let loss = total * scale;
        if !want_grad {
            return Ok((loss, n_masked, None));
        }
        Ok((loss, n_masked, Some(self.backward(&pass, &d_out))))
    }

    fn backward(&self, pass: &Pass, d_out: &Array2<f64>) -> ParamSet {
        let cfg = &self.config;
        let mut grads = self.params.zeros_like();
        let n_layers = cfg.lstm_layers;
        let (hw, _) = self.head_tensors();
        grads.tensors[3 * n_layers]
            .view2_mut()
            .assign(&d_out.t().dot(&pass.head_in));
        grads.tensors[3 * n_layers + 1]
            .view1_mut()
            .assign(&d_out.sum_axis(Axis(0)));
        let d_head_in = d_out.dot(&hw.view2());
        let mut dy = d_head_in.slice(s![.., ..cfg.hidden]).to_owned();
        for l in (0..n_layers).rev() {
            if let Some(mask) = &pass.dropout_masks[l] {
                dy *= mask;
            }
            let (w_ih, w_hh, _) = self.lstm_tensors(l);
            let g = lstm::backward(
                w_ih.view2(),
                w_hh.view2(),
                &pass.layers[l],
                &dy,
                pass.steps,
                pass.batch,
                l > 0,
            );
            grads.tensors[3 * l].view2_mut().assign(&g.w_ih);
            grads.tensors[3 * l + 1].view2_mut().assign(&g.w_hh);
            grads.tensors[3 * l + 2].view1_mut().assign(&g.bias);
            if let Some(dx) = g.dx {
                dy = dx;
            }
        }
        grads
    }

    /// Copy with every parameter rounded through `f32`, as stored in checkpoints.
    pub fn rounded_f32(&self) -> Model {
        let mut m = self.clone();
        let round = |v: &mut f64| *v = *v as f32 as f64;
        m.params.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(round);
        for v in [
            &mut m.norm.audio_shift,
            &mut m.norm.audio_scale,
            &mut m.norm.word_shift,
            &mut m.norm.word_scale,
        ] {
            v.iter_mut().for_each(round);
        }
        m
    }

    pub fn streaming_state(&self) -> StreamingState {
        let h = self.config.hidden;
        StreamingState {
            h: vec![vec![0.0; h]; self.config.lstm_layers],
            c: vec![vec![0.0; h]; self.config.lstm_layers],
        }
    }

    /// Advances one frame and returns the raw head output row.
    pub fn step(&self, state: &mut StreamingState, audio: &[f64], word: Option<&[f64]>) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if audio.len() != cfg.audio_input_dim() || word.map_or(0, <[f64]>::len) != cfg.word_input_dim() {
            return Err(Error::Validation("frame does not match model input dimensions".into()));
        }
        let mut x: Vec<f64> = audio
            .iter()
            .zip(&self.norm.audio_shift)
            .zip(&self.norm.audio_scale)
            .map(|((v, s), k)| (v - s) * k)
            .collect();
        for l in 0..cfg.lstm_layers {
            let (w_ih, w_hh, bias) = self.lstm_tensors(l);
            lstm::step(w_ih.view2(), w_hh.view2(), bias.view1(), &x, &mut state.h[l], &mut state.c[l]);
            x = state.h[l].clone();
        }
        if let Some(w) = word {
            x.extend(
                w.iter()
                    .zip(&self.norm.word_shift)
                    .zip(&self.norm.word_scale)
                    .map(|((v, s), k)| (v - s) * k),
            );
        }
        let (hw, hb) = self.head_tensors();
        let hw = hw.view2();
        Ok((0..cfg.head_output_dim())
            .map(|k| hw.row(k).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + hb.data[k])
            .collect())
    }

    /// Point estimate for the next frame of a stream.
    pub fn step_predict(&self, state: &mut StreamingState, audio: &[f64], word: Option<&[f64]>) -> Result<f64> {
        let raw = self.step(state, audio, word)?;
        let row = Array2::from_shape_vec((1, raw.len()), raw).expect("row shape");
        Ok(self.point_estimates(&self.decode(&row))[0])
    }
}

/// Recurrent state for frame-by-frame inference.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingState {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::FeatureSet;

    fn tiny_config(features: &str) -> ModelConfig {
        let mut cfg = ModelConfig::new(features.parse::<FeatureSet>().unwrap());
        cfg.hidden = 6;
        cfg.components = 2;
        cfg.acoustic_dim = 3;
        cfg.word_dim = 2;
        cfg
    }

    fn random_input(cfg: &ModelConfig, n: usize, seed: u64) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelInput {
            audio: Array2::from_shape_simple_fn((n, cfg.audio_input_dim()), || rng.gen_range(-1.0..1.0)),
            word: cfg
                .features
                .word
                .then(|| Array2::from_shape_simple_fn((n, cfg.word_dim), || rng.gen_range(-1.0..1.0))),
        }
    }

    #[test]
    fn zero_model_outputs() {
        let model = Model::zeros(tiny_config("RA")).unwrap();
        let input = random_input(&model.config, 5, 1);
        let HeadOutputs::Gmm(params) = model.forward(&input).unwrap() else {
            panic!("gmm head expected")
        };
        for p in params {
            assert_eq!(p.h, vec![0.5, 0.5]);
            for s in p.sigma {
                assert!((s - (2f64.ln() + SIGMA_FLOOR)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heatmap_rows_sum_to_one() {
        let mut cfg = tiny_config("WGR");
        cfg.head = HeadKind::Heatmap;
        let model = Model::new(cfg, 3).unwrap();
        let HeadOutputs::Heatmap(rows) = model.forward(&random_input(&model.config, 7, 2)).unwrap() else {
            panic!("heatmap head expected")
        };
        for r in rows {
            assert_eq!(r.probs.len(), 64);
            assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn outputs_are_causal() {
        let model = Model::new(tiny_config("WGR"), 5).unwrap();
        let input = random_input(&model.config, 20, 4);
        let base = model.raw_outputs(&input).unwrap();
        let mut changed = input.clone();
        let other = random_input(&model.config, 20, 99);
        for t in 12..20 {
            changed.audio.row_mut(t).assign(&other.audio.row(t));
            changed.word.as_mut().unwrap().row_mut(t).assign(&other.word.as_ref().unwrap().row(t));
        }
        let after = model.raw_outputs(&changed).unwrap();
        for t in 0..12 {
            assert_eq!(base.row(t), after.row(t));
        }
        assert_ne!(base.row(15), after.row(15));
    }

    #[test]
    fn streaming_matches_batch() {
        let model = Model::new(tiny_config("WGRA"), 8).unwrap();
        let input = random_input(&model.config, 15, 6);
        let batch = model.raw_outputs(&input).unwrap();
        let mut state = model.streaming_state();
        for t in 0..15 {
            let audio = input.audio.row(t).to_vec();
            let word = input.word.as_ref().unwrap().row(t).to_vec();
            let raw = model.step(&mut state, &audio, Some(&word)).unwrap();
            for (a, b) in raw.iter().zip(batch.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inference_is_repeatable() {
        let model = Model::new(tiny_config("R"), 1).unwrap();
        let input = random_input(&model.config, 30, 2);
        assert_eq!(model.predict(&input).unwrap(), model.predict(&input).unwrap());
    }

    #[test]
    fn all_masked_out_gives_zero_grad() {
        let model = Model::new(tiny_config("R"), 1).unwrap();
        let sample = TrainSample {
            input: random_input(&model.config, 10, 3),
            tau: vec![1.0; 10],
            mask: vec![false; 10],
        };
        let (loss, n, grads) = model.loss_and_grad(&[&sample], None, true).unwrap();
        assert_eq!((loss, n), (0.0, 0));
        assert_eq!(grads.unwrap().norm(), 0.0);
    }

    #[test]
    fn missing_stream_is_named() {
        let cfg = tiny_config("WGR");
        let grid = FrameGrid::standard(4);
        let mut emb = AlignedEmbeddings::empty(grid);
        emb.acoustic = Some(Array2::zeros((4, 3)));
        emb.word = Some(Array2::zeros((4, 2)));
        let streams = FeatureStreams {
            grid,
            rmse: None,
            prosody: None,
            embeddings: emb,
        };
        let err = ModelInput::assemble(&cfg, &streams).unwrap_err();
        assert_eq!(err.to_string(), "missing stream R");
    }
}
