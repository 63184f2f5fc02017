//! LSTM chain over word vectors and the word / link / sentence scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParamStore, INIT_SCALE};
use crate::tensor::{dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid};

/// Which terms of the sentence score are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreParts {
    #[default]
    Both,
    WordOnly,
    LinkOnly,
}

impl ScoreParts {
    pub fn name(self) -> &'static str {
        match self {
            ScoreParts::Both => "both",
            ScoreParts::WordOnly => "word_only",
            ScoreParts::LinkOnly => "link_only",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "both" => Some(ScoreParts::Both),
            "word_only" | "word" => Some(ScoreParts::WordOnly),
            "link_only" | "link" => Some(ScoreParts::LinkOnly),
            _ => None,
        }
    }

    fn word(self) -> bool {
        self != ScoreParts::LinkOnly
    }

    fn link(self) -> bool {
        self != ScoreParts::WordOnly
    }

    /// Score contribution of one appended word.
    #[inline]
    pub fn combine(self, word: f64, link: f64) -> f64 {
        match self {
            ScoreParts::Both => word + link,
            ScoreParts::WordOnly => word,
            ScoreParts::LinkOnly => link,
        }
    }
}

const GATES: [&str; 4] = ["i", "f", "o", "c"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    gates: [Gate; 4],
    pub w_pred: ParamId,
    pub b_pred: ParamId,
    pub u: ParamId,
    pub h0: ParamId,
    pub c0: ParamId,
}

impl LstmParams {
    pub fn register(store: &mut ParamStore, input_dim: usize, hidden: usize) -> Result<Self> {
        let init = Init::Uniform(INIT_SCALE);
        let mut gates = Vec::with_capacity(4);
        for g in GATES {
            gates.push(Gate {
                w: store.register(&format!("lstm.W.{g}"), &[hidden, input_dim], init)?,
                u: store.register(&format!("lstm.U.{g}"), &[hidden, hidden], init)?,
                b: store.register(&format!("lstm.b.{g}"), &[hidden], init)?,
            });
        }
        Ok(LstmParams {
            input_dim,
            hidden,
            gates: gates.try_into().expect("four gates"),
            w_pred: store.register("score.Wp", &[input_dim, hidden], init)?,
            b_pred: store.register("score.bp", &[input_dim], init)?,
            u: store.register("score.u", &[input_dim], init)?,
            h0: store.register("lstm.h0", &[hidden], Init::Zeros)?,
            c0: store.register("lstm.c0", &[hidden], Init::Zeros)?,
        })
    }

    pub(crate) fn attach(store: &ParamStore, input_dim: usize, hidden: usize) -> Result<Self> {
        let find = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::ModelFormat(format!("missing parameter {name}")))?;
            if store.get(id).value.shape() != shape {
                return Err(Error::ModelFormat(format!("{name} has the wrong shape")));
            }
            Ok(id)
        };
        let mut gates = Vec::with_capacity(4);
        for g in GATES {
            gates.push(Gate {
                w: find(&format!("lstm.W.{g}"), &[hidden, input_dim])?,
                u: find(&format!("lstm.U.{g}"), &[hidden, hidden])?,
                b: find(&format!("lstm.b.{g}"), &[hidden])?,
            });
        }
        Ok(LstmParams {
            input_dim,
            hidden,
            gates: gates.try_into().expect("four gates"),
            w_pred: find("score.Wp", &[input_dim, hidden])?,
            b_pred: find("score.bp", &[input_dim])?,
            u: find("score.u", &[input_dim])?,
            h0: find("lstm.h0", &[hidden])?,
            c0: find("lstm.c0", &[hidden])?,
        })
    }

    pub fn initial_state(&self, store: &ParamStore) -> LstmState {
        LstmState {
            h: store.value(self.h0).to_vec(),
            c: store.value(self.c0).to_vec(),
        }
    }

    fn gate_pre(&self, store: &ParamStore, gate: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
        let g = self.gates[gate];
        let mut pre = store.value(g.b).to_vec();
        matvec_acc(store.value(g.w), self.input_dim, x, &mut pre);
        matvec_acc(store.value(g.u), self.hidden, h, &mut pre);
        pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One LSTM transition on word vector `x`.
pub fn lstm_step(store: &ParamStore, params: &LstmParams, x: &[f64], state: &LstmState) -> LstmState {
    lstm_step_traced(store, params, x, state).0
}

pub fn lstm_step_traced(
    store: &ParamStore,
    params: &LstmParams,
    x: &[f64],
    state: &LstmState,
) -> (LstmState, StepTrace) {
    let sig = |v: Vec<f64>| v.into_iter().map(sigmoid).collect::<Vec<_>>();
    let i = sig(params.gate_pre(store, 0, x, &state.h));
    let f = sig(params.gate_pre(store, 1, x, &state.h));
    let o = sig(params.gate_pre(store, 2, x, &state.h));
    let g: Vec<f64> = params
        .gate_pre(store, 3, x, &state.h)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let hidden = params.hidden;
    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    for j in 0..hidden {
        c[j] = f[j] * state.c[j] + i[j] * g[j];
        tanh_c[j] = c[j].tanh();
        h[j] = o[j] * tanh_c[j];
    }
    let trace = StepTrace {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        o,
        g,
        tanh_c,
    };
    (LstmState { h, c }, trace)
}

/// Returns `(dx, dh_prev, dc_prev)` given the gradients flowing into `h_t` and `c_t`.
pub fn lstm_step_backward(
    store: &ParamStore,
    params: &LstmParams,
    t: &StepTrace,
    dh: &[f64],
    dc_next: &[f64],
    grads: &mut Gradients,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = params.hidden;
    let mut dpre = [
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
    ];
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let d_o = dh[j] * t.tanh_c[j];
        let dc = dc_next[j] + dh[j] * t.o[j] * (1.0 - t.tanh_c[j] * t.tanh_c[j]);
        let d_i = dc * t.g[j];
        let d_f = dc * t.c_prev[j];
        let d_g = dc * t.i[j];
        dc_prev[j] = dc * t.f[j];
        dpre[0][j] = d_i * t.i[j] * (1.0 - t.i[j]);
        dpre[1][j] = d_f * t.f[j] * (1.0 - t.f[j]);
        dpre[2][j] = d_o * t.o[j] * (1.0 - t.o[j]);
        dpre[3][j] = d_g * (1.0 - t.g[j] * t.g[j]);
    }
    let mut dx = vec![0.0; params.input_dim];
    let mut dh_prev = vec![0.0; hidden];
    for (gate, dp) in params.gates.iter().zip(&dpre) {
        outer_acc(grads.dense_mut(store, gate.w), dp, &t.x);
        outer_acc(grads.dense_mut(store, gate.u), dp, &t.h_prev);
        grads
            .dense_mut(store, gate.b)
            .iter_mut()
            .zip(dp)
            .for_each(|(a, b)| *a += b);
        matvec_t_acc(store.value(gate.w), params.input_dim, dp, &mut dx);
        matvec_t_acc(store.value(gate.u), hidden, dp, &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

/// Prediction of the next word vector: `tanh(W_p·h + b_p)`.
pub fn predict_next(store: &ParamStore, params: &LstmParams, state: &LstmState) -> Vec<f64> {
    let mut p = store.value(params.b_pred).to_vec();
    matvec_acc(store.value(params.w_pred), params.hidden, &state.h, &mut p);
    p.iter_mut().for_each(|v| *v = v.tanh());
    p
}

/// Returns `dh` for a prediction `p` made from hidden state `h`.
fn predict_backward(
    store: &ParamStore,
    params: &LstmParams,
    h: &[f64],
    p: &[f64],
    dp: &[f64],
    grads: &mut Gradients,
) -> Vec<f64> {
    let dpre: Vec<f64> = dp.iter().zip(p).map(|(g, y)| g * (1.0 - y * y)).collect();
    outer_acc(grads.dense_mut(store, params.w_pred), &dpre, h);
    grads
        .dense_mut(store, params.b_pred)
        .iter_mut()
        .zip(&dpre)
        .for_each(|(a, b)| *a += b);
    let mut dh = vec![0.0; params.hidden];
    matvec_t_acc(store.value(params.w_pred), params.hidden, &dpre, &mut dh);
    dh
}

/// `u · y`
pub fn word_score(store: &ParamStore, params: &LstmParams, y: &[f64]) -> f64 {
    dot(store.value(params.u), y)
}

/// `p · y`
pub fn link_score(p: &[f64], y: &[f64]) -> f64 {
    dot(p, y)
}

/// Forward pass over a full word sequence, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct SentenceTrace {
    pub score: f64,
    words: Vec<Vec<f64>>,
    /// `states[t]` precedes word `t`; `states[0]` is `(h0, c0)`.
    states: Vec<LstmState>,
    preds: Vec<Vec<f64>>,
    steps: Vec<StepTrace>,
}

pub fn sentence_forward<C: AsRef<[f64]>>(
    store: &ParamStore,
    params: &LstmParams,
    parts: ScoreParts,
    words: &[C],
) -> Result<SentenceTrace> {
    if words.is_empty() {
        return Err(Error::EmptyInput("sentence score needs at least one word"));
    }
    let mut state = params.initial_state(store);
    let mut score = 0.0;
    let mut states = Vec::with_capacity(words.len());
    let mut preds = Vec::with_capacity(words.len());
    let mut steps = Vec::with_capacity(words.len());
    for (t, y) in words.iter().enumerate() {
        let y = y.as_ref();
        let p = predict_next(store, params, &state);
        score += parts.combine(word_score(store, params, y), link_score(&p, y));
        preds.push(p);
        states.push(state.clone());
        // the state after the final word never feeds a score
        if t + 1 < words.len() {
            let (next, trace) = lstm_step_traced(store, params, y, &state);
            steps.push(trace);
            state = next;
        }
    }
    Ok(SentenceTrace {
        score,
        words: words.iter().map(|w| w.as_ref().to_vec()).collect(),
        states,
        preds,
        steps,
    })
}

/// Sum of word and link scores over a word-vector sequence.
pub fn sentence_score<C: AsRef<[f64]>>(
    store: &ParamStore,
    params: &LstmParams,
    parts: ScoreParts,
    words: &[C],
) -> Result<f64> {
    Ok(sentence_forward(store, params, parts, words)?.score)
}

/// Backpropagates `coef · score` and returns the gradient for every word vector.
pub fn sentence_backward(
    store: &ParamStore,
    params: &LstmParams,
    parts: ScoreParts,
    trace: &SentenceTrace,
    coef: f64,
    grads: &mut Gradients,
) -> Vec<Vec<f64>> {
    let n = trace.words.len();
    let d = params.input_dim;
    let hidden = params.hidden;
    let u = store.value(params.u);
    let mut dwords = vec![vec![0.0; d]; n];
    let mut dh = vec![0.0; hidden];
    let mut dc = vec![0.0; hidden];
    for t in (0..n).rev() {
        let y = &trace.words[t];
        if t + 1 < n {
            let (dx, dh_prev, dc_prev) = lstm_step_backward(store, params, &trace.steps[t], &dh, &dc, grads);
            dwords[t].iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            dh = dh_prev;
            dc = dc_prev;
        }
        if parts.word() {
            dwords[t].iter_mut().zip(u).for_each(|(a, b)| *a += coef * b);
            grads
                .dense_mut(store, params.u)
                .iter_mut()
                .zip(y)
                .for_each(|(a, b)| *a += coef * b);
        }
        if parts.link() {
            let p = &trace.preds[t];
            dwords[t].iter_mut().zip(p).for_each(|(a, b)| *a += coef * b);
            let dp: Vec<f64> = y.iter().map(|v| coef * v).collect();
            let dh_pred = predict_backward(store, params, &trace.states[t].h, p, &dp, grads);
            dh.iter_mut().zip(&dh_pred).for_each(|(a, b)| *a += b);
        }
    }
    grads
        .dense_mut(store, params.h0)
        .iter_mut()
        .zip(&dh)
        .for_each(|(a, b)| *a += b);
    grads
        .dense_mut(store, params.c0)
        .iter_mut()
        .zip(&dc)
        .for_each(|(a, b)| *a += b);
    dwords
}
