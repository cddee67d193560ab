//! The double recurrent network.
//!
//! A hit-level LSTM runs over each session's hit vectors (state reset per
//! session) and yields a summary vector per session. The session-level LSTM
//! consumes that summary concatenated with the *previous* session's features
//! (zeros for the first session), so a session's own aggregates never leak
//! into its prediction. A ReLU dense layer over [session state ; user
//! features] followed by a sigmoid dense layer produces six per-class
//! probabilities per session.
//!
//! Gradients are exact reverse-mode derivatives of the MSE loss, including
//! backpropagation through time within each hit sequence and across the
//! session chain.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::EncodedJourney;
use crate::scalar::Scalar;

pub const OUT_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("journey has a session with no hits")]
    EmptyHitSequence,
    #[error("prediction shape {pred:?} does not match label shape {label:?}")]
    ShapeMismatch { pred: (usize, usize), label: (usize, usize) },
    #[error("trace does not match journey (sessions {trace} vs {journey})")]
    StaleTrace { trace: usize, journey: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad parameter file: {0}")]
    BadFormat(String),
}

/// Dimension choices. Defaults reproduce the 15,246-parameter network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hit_dim: usize,
    pub session_dim: usize,
    pub user_dim: usize,
    pub hidden: usize,
    pub fc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hit_dim: 3, session_dim: 11, user_dim: 5, hidden: 30, fc_hidden: 60 }
    }
}

impl ModelConfig {
    /// Input width of the session LSTM: hit summary plus previous session.
    pub fn session_input_dim(&self) -> usize {
        self.hidden + self.session_dim
    }

    /// Input width of the first dense layer: session state plus user vector.
    pub fn head_input_dim(&self) -> usize {
        self.hidden + self.user_dim
    }
}

/// Total trainable parameter count for a config.
///
/// Single-bias LSTM: 4 gates of h x (in + h) weights plus h biases each.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let h = config.hidden;
    let lstm = |input: usize| 4 * (h * (input + h) + h);
    lstm(config.hit_dim)
        + lstm(config.session_input_dim())
        + config.head_input_dim() * config.fc_hidden
        + config.fc_hidden
        + config.fc_hidden * OUT_DIM
        + OUT_DIM
}

/// One LSTM layer. Gate rows are stacked [input, forget, cell, output],
/// each block `hidden` rows; columns run over [x ; h_prev].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub lstm_hits: LstmWeights<F>,
    pub lstm_sessions: LstmWeights<F>,
    pub fc1: DenseWeights<F>,
    pub fc2: DenseWeights<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(config: ModelConfig) -> Self {
        let h = config.hidden;
        let mk_lstm = |input: usize| LstmWeights {
            w: Array2::zeros((4 * h, input + h)),
            b: Array1::zeros(4 * h),
        };
        Self {
            config,
            lstm_hits: mk_lstm(config.hit_dim),
            lstm_sessions: mk_lstm(config.session_input_dim()),
            fc1: DenseWeights {
                w: Array2::zeros((config.fc_hidden, config.head_input_dim())),
                b: Array1::zeros(config.fc_hidden),
            },
            fc2: DenseWeights {
                w: Array2::zeros((OUT_DIM, config.fc_hidden)),
                b: Array1::zeros(OUT_DIM),
            },
        }
    }

    /// Flatten all parameters in a fixed layer order.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(parameter_count(&self.config));
        out.extend(self.lstm_hits.w.iter().copied());
        out.extend(self.lstm_hits.b.iter().copied());
        out.extend(self.lstm_sessions.w.iter().copied());
        out.extend(self.lstm_sessions.b.iter().copied());
        out.extend(self.fc1.w.iter().copied());
        out.extend(self.fc1.b.iter().copied());
        out.extend(self.fc2.w.iter().copied());
        out.extend(self.fc2.b.iter().copied());
        out
    }

    pub fn from_flat(config: ModelConfig, flat: &[F]) -> Self {
        assert_eq!(flat.len(), parameter_count(&config));
        let mut p = Self::zeros(config);
        let mut idx = 0;
        {
            let mut take = |n: usize| {
                let s = &flat[idx..idx + n];
                idx += n;
                s.to_vec()
            };
            let assign2 = |arr: &mut Array2<F>, vals: Vec<F>| {
                for (dst, v) in arr.iter_mut().zip(vals) {
                    *dst = v;
                }
            };
            let assign1 = |arr: &mut Array1<F>, vals: Vec<F>| {
                for (dst, v) in arr.iter_mut().zip(vals) {
                    *dst = v;
                }
            };
            let n = p.lstm_hits.w.len();
            assign2(&mut p.lstm_hits.w, take(n));
            let n = p.lstm_hits.b.len();
            assign1(&mut p.lstm_hits.b, take(n));
            let n = p.lstm_sessions.w.len();
            assign2(&mut p.lstm_sessions.w, take(n));
            let n = p.lstm_sessions.b.len();
            assign1(&mut p.lstm_sessions.b, take(n));
            let n = p.fc1.w.len();
            assign2(&mut p.fc1.w, take(n));
            let n = p.fc1.b.len();
            assign1(&mut p.fc1.b, take(n));
            let n = p.fc2.w.len();
            assign2(&mut p.fc2.w, take(n));
            let n = p.fc2.b.len();
            assign1(&mut p.fc2.b, take(n));
        }
        assert_eq!(idx, flat.len());
        p
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights per layer, forget-gate
/// biases 1, all other biases 0. Deterministic given the seed.
pub fn init_params<F: Scalar>(config: ModelConfig, seed: u64) -> ModelParams<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(config);
    let h = config.hidden;
    let mut fill = |w: &mut Array2<F>| {
        let bound = 1.0 / (w.ncols() as f64).sqrt();
        for v in w.iter_mut() {
            *v = F::from_f64_lossy(rng.gen_range(-bound..bound));
        }
    };
    fill(&mut p.lstm_hits.w);
    fill(&mut p.lstm_sessions.w);
    fill(&mut p.fc1.w);
    fill(&mut p.fc2.w);
    for lstm in [&mut p.lstm_hits, &mut p.lstm_sessions] {
        for i in h..2 * h {
            lstm.b[i] = F::one();
        }
    }
    p
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone)]
struct LstmStepTrace<F> {
    x: Array1<F>,
    h_prev: Array1<F>,
    c_prev: Array1<F>,
    gi: Array1<F>,
    gf: Array1<F>,
    gc: Array1<F>,
    go: Array1<F>,
    c: Array1<F>,
    tanh_c: Array1<F>,
    h: Array1<F>,
}

fn lstm_step<F: Scalar>(
    weights: &LstmWeights<F>,
    x: &Array1<F>,
    h_prev: &Array1<F>,
    c_prev: &Array1<F>,
) -> LstmStepTrace<F> {
    let h = h_prev.len();
    let mut xh = Array1::zeros(x.len() + h);
    xh.slice_mut(s![..x.len()]).assign(x);
    xh.slice_mut(s![x.len()..]).assign(h_prev);
    let z = weights.w.dot(&xh) + &weights.b;
    let gi = z.slice(s![..h]).mapv(sigmoid);
    let gf = z.slice(s![h..2 * h]).mapv(sigmoid);
    let gc = z.slice(s![2 * h..3 * h]).mapv(F::tanh);
    let go = z.slice(s![3 * h..]).mapv(sigmoid);
    let c = &gf * c_prev + &gi * &gc;
    let tanh_c = c.mapv(F::tanh);
    let h_out = &go * &tanh_c;
    LstmStepTrace {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gi,
        gf,
        gc,
        go,
        c,
        tanh_c,
        h: h_out,
    }
}

/// Gradient of one LSTM step. Adds weight gradients into `gw`/`gb` and
/// returns (dx, dh_prev, dc_prev).
#[allow(clippy::too_many_arguments)]
fn lstm_step_backward<F: Scalar>(
    weights: &LstmWeights<F>,
    trace: &LstmStepTrace<F>,
    dh: &Array1<F>,
    dc_in: &Array1<F>,
    gw: &mut Array2<F>,
    gb: &mut Array1<F>,
) -> (Array1<F>, Array1<F>, Array1<F>) {
    let h = trace.h_prev.len();
    let one = F::one();
    let d_go = dh * &trace.tanh_c;
    let dc = dc_in + &(dh * &trace.go * &trace.tanh_c.mapv(|t| one - t * t));
    let d_gi = &dc * &trace.gc;
    let d_gc = &dc * &trace.gi;
    let d_gf = &dc * &trace.c_prev;
    let dc_prev = &dc * &trace.gf;

    // pre-activation gradients, stacked like the weight rows
    let mut dz = Array1::zeros(4 * h);
    for k in 0..h {
        dz[k] = d_gi[k] * trace.gi[k] * (one - trace.gi[k]);
        dz[h + k] = d_gf[k] * trace.gf[k] * (one - trace.gf[k]);
        dz[2 * h + k] = d_gc[k] * (one - trace.gc[k] * trace.gc[k]);
        dz[3 * h + k] = d_go[k] * trace.go[k] * (one - trace.go[k]);
    }

    let xn = trace.x.len();
    for r in 0..4 * h {
        let dzr = dz[r];
        if dzr == F::zero() {
            continue;
        }
        for c in 0..xn {
            gw[(r, c)] += dzr * trace.x[c];
        }
        for c in 0..h {
            gw[(r, xn + c)] += dzr * trace.h_prev[c];
        }
        gb[r] += dzr;
    }

    let dxh = weights.w.t().dot(&dz);
    let dx = dxh.slice(s![..xn]).to_owned();
    let dh_prev = dxh.slice(s![xn..]).to_owned();
    (dx, dh_prev, dc_prev)
}

/// Intermediate activations retained for the backward pass of one journey.
pub struct ForwardTrace<F> {
    n_sessions: usize,
    hit_traces: Vec<Vec<LstmStepTrace<F>>>,
    session_traces: Vec<LstmStepTrace<F>>,
    user_vec: Array1<F>,
    fc1_pre: Vec<Array1<F>>,
    fc1_post: Vec<Array1<F>>,
    preds: Array2<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn predictions(&self) -> &Array2<F> {
        &self.preds
    }
}

/// Run the network over one encoded journey. Returns an N x 6 matrix of
/// per-session class probabilities plus the trace for `backward`.
pub fn forward<F: Scalar>(
    params: &ModelParams<F>,
    journey: &EncodedJourney<F>,
) -> Result<(Array2<F>, ForwardTrace<F>), ModelError> {
    let cfg = &params.config;
    let h = cfg.hidden;
    let n = journey.n_sessions();
    if journey.hit_vecs.iter().any(|hv| hv.is_empty()) {
        return Err(ModelError::EmptyHitSequence);
    }

    let user_vec = Array1::from_vec(journey.user_vec.clone());
    let mut hit_traces = Vec::with_capacity(n);
    let mut session_traces: Vec<LstmStepTrace<F>> = Vec::with_capacity(n);
    let mut fc1_pre = Vec::with_capacity(n);
    let mut fc1_post = Vec::with_capacity(n);
    let mut preds = Array2::zeros((n, OUT_DIM));

    let mut sess_h = Array1::zeros(h);
    let mut sess_c = Array1::zeros(h);

    for i in 0..n {
        // hit LSTM, state reset per session
        let mut hh = Array1::zeros(h);
        let mut hc = Array1::zeros(h);
        let mut steps = Vec::with_capacity(journey.hit_vecs[i].len());
        for hit in &journey.hit_vecs[i] {
            let t = lstm_step(&params.lstm_hits, &Array1::from_vec(hit.clone()), &hh, &hc);
            hh = t.h.clone();
            hc = t.c.clone();
            steps.push(t);
        }
        hit_traces.push(steps);

        // [H_i ; S_{i-1}], zeros for the first session
        let mut x = Array1::zeros(cfg.session_input_dim());
        x.slice_mut(s![..h]).assign(&hh);
        if i > 0 {
            let prev = Array1::from_vec(journey.session_vecs[i - 1].clone());
            x.slice_mut(s![h..]).assign(&prev);
        }
        let t = lstm_step(&params.lstm_sessions, &x, &sess_h, &sess_c);
        sess_h = t.h.clone();
        sess_c = t.c.clone();

        let mut head_in = Array1::zeros(cfg.head_input_dim());
        head_in.slice_mut(s![..h]).assign(&sess_h);
        head_in.slice_mut(s![h..]).assign(&user_vec);
        let pre1 = params.fc1.w.dot(&head_in) + &params.fc1.b;
        let post1 = pre1.mapv(|v| if v > F::zero() { v } else { F::zero() });
        let pre2 = params.fc2.w.dot(&post1) + &params.fc2.b;
        for c in 0..OUT_DIM {
            preds[(i, c)] = sigmoid(pre2[c]);
        }

        session_traces.push(t);
        fc1_pre.push(pre1);
        fc1_post.push(post1);
    }

    let trace = ForwardTrace {
        n_sessions: n,
        hit_traces,
        session_traces,
        user_vec,
        fc1_pre,
        fc1_post,
        preds: preds.clone(),
    };
    Ok((preds, trace))
}

/// Mean squared error over all (session, class) cells.
pub fn mse_loss<F: Scalar>(preds: &Array2<F>, labels: &Array2<F>) -> Result<F, ModelError> {
    if preds.dim() != labels.dim() {
        return Err(ModelError::ShapeMismatch { pred: preds.dim(), label: labels.dim() });
    }
    let mut acc = F::zero();
    for (p, t) in preds.iter().zip(labels.iter()) {
        let d = *p - *t;
        acc += d * d;
    }
    Ok(acc / F::from_f64_lossy(preds.len() as f64))
}

/// Exact gradient of the journey's mean-cell MSE with respect to every
/// parameter. Returns gradients in the same shape as the parameters.
pub fn backward<F: Scalar>(
    params: &ModelParams<F>,
    trace: &ForwardTrace<F>,
    labels: &Array2<F>,
) -> Result<ModelParams<F>, ModelError> {
    let cfg = &params.config;
    let h = cfg.hidden;
    let n = trace.n_sessions;
    if labels.nrows() != n {
        return Err(ModelError::StaleTrace { trace: n, journey: labels.nrows() });
    }
    if labels.ncols() != OUT_DIM {
        return Err(ModelError::ShapeMismatch {
            pred: trace.preds.dim(),
            label: labels.dim(),
        });
    }

    let mut grads = ModelParams::zeros(*cfg);
    let cells = F::from_f64_lossy((n * OUT_DIM) as f64);
    let two = F::from_f64_lossy(2.0);
    let one = F::one();

    // per-session gradient flowing into the session LSTM hidden state from
    // the head, computed first; BPTT over sessions adds the recurrent part
    let mut d_sess_h_head: Vec<Array1<F>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut d_pre2 = Array1::zeros(OUT_DIM);
        for c in 0..OUT_DIM {
            let p = trace.preds[(i, c)];
            let d_pred = two * (p - labels[(i, c)]) / cells;
            d_pre2[c] = d_pred * p * (one - p);
        }
        for r in 0..OUT_DIM {
            let dzr = d_pre2[r];
            for c in 0..cfg.fc_hidden {
                grads.fc2.w[(r, c)] += dzr * trace.fc1_post[i][c];
            }
            grads.fc2.b[r] += dzr;
        }
        let d_post1 = params.fc2.w.t().dot(&d_pre2);
        let mut d_pre1 = Array1::zeros(cfg.fc_hidden);
        for k in 0..cfg.fc_hidden {
            d_pre1[k] = if trace.fc1_pre[i][k] > F::zero() { d_post1[k] } else { F::zero() };
        }
        let head_dim = cfg.head_input_dim();
        for r in 0..cfg.fc_hidden {
            let dzr = d_pre1[r];
            if dzr == F::zero() {
                continue;
            }
            for c in 0..h {
                grads.fc1.w[(r, c)] += dzr * trace.session_traces[i].h[c];
            }
            for c in h..head_dim {
                grads.fc1.w[(r, c)] += dzr * trace.user_vec[c - h];
            }
            grads.fc1.b[r] += dzr;
        }
        let d_head_in = params.fc1.w.t().dot(&d_pre1);
        d_sess_h_head.push(d_head_in.slice(s![..h]).to_owned());
    }

    // BPTT across sessions, then into each session's hit LSTM
    let mut dh_next = Array1::zeros(h);
    let mut dc_next = Array1::zeros(h);
    for i in (0..n).rev() {
        let dh = &d_sess_h_head[i] + &dh_next;
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &params.lstm_sessions,
            &trace.session_traces[i],
            &dh,
            &dc_next,
            &mut grads.lstm_sessions.w,
            &mut grads.lstm_sessions.b,
        );
        dh_next = dh_prev;
        dc_next = dc_prev;

        // first h entries of the session input are H_i from the hit LSTM
        let mut dhh = dx.slice(s![..h]).to_owned();
        let mut dhc = Array1::zeros(h);
        for step in trace.hit_traces[i].iter().rev() {
            let (_, dh_prev, dc_prev) = lstm_step_backward(
                &params.lstm_hits,
                step,
                &dhh,
                &dhc,
                &mut grads.lstm_hits.w,
                &mut grads.lstm_hits.b,
            );
            dhh = dh_prev;
            dhc = dc_prev;
        }
    }

    Ok(grads)
}

const PARAMS_MAGIC: &[u8; 4] = b"FCPM";
const PARAMS_VERSION: u32 = 1;

/// Serialize parameters: a fixed header (magic, version, five dimension
/// fields) followed by the flat layer-ordered weights as little-endian
/// 8-byte reals. A text manifest alongside lists layer shapes and the
/// binary's sha256.
pub fn save_params(
    params: &ModelParams<f64>,
    bin_path: &std::path::Path,
    manifest_path: &std::path::Path,
) -> Result<(), ModelError> {
    use sha2::Digest;
    let cfg = &params.config;
    let mut bytes = Vec::with_capacity(24 + 8 * parameter_count(cfg));
    bytes.extend_from_slice(PARAMS_MAGIC);
    bytes.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    for d in [cfg.hit_dim, cfg.session_dim, cfg.user_dim, cfg.hidden, cfg.fc_hidden] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in params.to_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(bin_path, &bytes)?;

    let checksum = hex::encode(sha2::Sha256::digest(&bytes));
    let h = cfg.hidden;
    let manifest = format!(
        "format_version\t{PARAMS_VERSION}\n\
         lstm_hits.w\t{}x{}\nlstm_hits.b\t{}\n\
         lstm_sessions.w\t{}x{}\nlstm_sessions.b\t{}\n\
         fc1.w\t{}x{}\nfc1.b\t{}\n\
         fc2.w\t{}x{}\nfc2.b\t{}\n\
         sha256\t{checksum}\n",
        4 * h,
        cfg.hit_dim + h,
        4 * h,
        4 * h,
        cfg.session_input_dim() + h,
        4 * h,
        cfg.fc_hidden,
        cfg.head_input_dim(),
        cfg.fc_hidden,
        OUT_DIM,
        cfg.fc_hidden,
        OUT_DIM,
    );
    std::fs::write(manifest_path, manifest)?;
    Ok(())
}

pub fn load_params(bin_path: &std::path::Path) -> Result<ModelParams<f64>, ModelError> {
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() < 28 || &bytes[..4] != PARAMS_MAGIC {
        return Err(ModelError::BadFormat("missing header magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PARAMS_VERSION {
        return Err(ModelError::BadFormat(format!("unsupported version {version}")));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let config = ModelConfig {
        hit_dim: dim(0),
        session_dim: dim(1),
        user_dim: dim(2),
        hidden: dim(3),
        fc_hidden: dim(4),
    };
    let expected = parameter_count(&config);
    let payload = &bytes[28..];
    if payload.len() != expected * 8 {
        return Err(ModelError::BadFormat(format!(
            "payload holds {} values, config needs {expected}",
            payload.len() / 8
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelParams::from_flat(config, &flat))
}
