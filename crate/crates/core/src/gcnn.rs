//! Word-candidate composition from character vectors.
//!
//! Two composers share the per-length matrix `W_L`:
//!
//! * simple: `w = tanh(W_L · [c_1; …; c_L])`
//! * gated: reset gates `r = σ(R_L · c)` mix the characters into a candidate
//!   `ŵ = tanh(W_L · (r ⊙ c))`, and update gates, a per-dimension softmax over
//!   the `L+1` blocks of `U_L · [ŵ; c_1; …; c_L]`, blend the candidate with the
//!   raw characters: `w = z_N ⊙ ŵ + Σ z_i ⊙ c_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParamStore, INIT_SCALE};
use crate::tensor::{clamped_exp, matvec_acc, matvec_t_acc, outer_acc, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    #[default]
    Gated,
    Simple,
}

impl Composition {
    pub fn name(self) -> &'static str {
        match self {
            Composition::Gated => "gated",
            Composition::Simple => "simple",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gated" | "gcnn" => Some(Composition::Gated),
            "simple" => Some(Composition::Simple),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnnLayer {
    pub w: ParamId,
    pub r: ParamId,
    pub u: ParamId,
}

/// One `(W_L, R_L, U_L)` triple per word length `L = 1..=max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcnnParams {
    pub dim: usize,
    layers: Vec<GcnnLayer>,
}

fn names(len: usize) -> [String; 3] {
    [
        format!("gcnn.W.{len}"),
        format!("gcnn.R.{len}"),
        format!("gcnn.U.{len}"),
    ]
}

fn shapes(dim: usize, len: usize) -> [[usize; 2]; 3] {
    [
        [dim, len * dim],
        [len * dim, len * dim],
        [(len + 1) * dim, (len + 1) * dim],
    ]
}

impl GcnnParams {
    pub fn register(store: &mut ParamStore, dim: usize, max_len: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(max_len);
        for len in 1..=max_len {
            let [wn, rn, un] = names(len);
            let [ws, rs, us] = shapes(dim, len);
            layers.push(GcnnLayer {
                w: store.register(&wn, &ws, Init::Uniform(INIT_SCALE))?,
                r: store.register(&rn, &rs, Init::Uniform(INIT_SCALE))?,
                u: store.register(&un, &us, Init::Uniform(INIT_SCALE))?,
            });
        }
        Ok(GcnnParams { dim, layers })
    }

    pub(crate) fn attach(store: &ParamStore, dim: usize, max_len: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(max_len);
        for len in 1..=max_len {
            let find = |name: &str, shape: [usize; 2]| -> Result<ParamId> {
                let id = store
                    .id(name)
                    .ok_or_else(|| Error::ModelFormat(format!("missing parameter {name}")))?;
                if store.get(id).value.shape() != shape {
                    return Err(Error::ModelFormat(format!("{name} has the wrong shape")));
                }
                Ok(id)
            };
            let [wn, rn, un] = names(len);
            let [ws, rs, us] = shapes(dim, len);
            layers.push(GcnnLayer {
                w: find(&wn, ws)?,
                r: find(&rn, rs)?,
                u: find(&un, us)?,
            });
        }
        Ok(GcnnParams { dim, layers })
    }

    pub fn max_len(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, len: usize) -> Result<GcnnLayer> {
        if len == 0 || len > self.layers.len() {
            return Err(Error::WordLength {
                len,
                max: self.layers.len(),
            });
        }
        Ok(self.layers[len - 1])
    }

    fn concat<C: AsRef<[f64]>>(&self, chars: &[C]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(chars.len() * self.dim);
        for c in chars {
            let c = c.as_ref();
            if c.len() != self.dim {
                return Err(Error::Dimension {
                    context: "character vector",
                    left: vec![c.len()],
                    right: vec![self.dim],
                });
            }
            x.extend_from_slice(c);
        }
        Ok(x)
    }

    /// Runs the chosen composer, keeping what the backward pass needs.
    pub fn forward<C: AsRef<[f64]>>(
        &self,
        store: &ParamStore,
        mode: Composition,
        chars: &[C],
    ) -> Result<CompositionTrace> {
        let layer = self.layer(chars.len())?;
        let x = self.concat(chars)?;
        Ok(match mode {
            Composition::Simple => {
                let mut pre = vec![0.0; self.dim];
                matvec_acc(store.value(layer.w), x.len(), &x, &mut pre);
                let output = pre.into_iter().map(f64::tanh).collect();
                CompositionTrace::Simple(SimpleTrace { x, output })
            }
            Composition::Gated => CompositionTrace::Gated(self.gated(store, layer, x)),
        })
    }

    fn gated(&self, store: &ParamStore, layer: GcnnLayer, x: Vec<f64>) -> GatedTrace {
        let d = self.dim;
        let n = x.len();
        let blocks = n / d + 1;

        let mut r = vec![0.0; n];
        matvec_acc(store.value(layer.r), n, &x, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rc: Vec<f64> = r.iter().zip(&x).map(|(a, b)| a * b).collect();

        let mut candidate = vec![0.0; d];
        matvec_acc(store.value(layer.w), n, &rc, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let mut v = Vec::with_capacity(blocks * d);
        v.extend_from_slice(&candidate);
        v.extend_from_slice(&x);
        let mut z = vec![0.0; blocks * d];
        matvec_acc(store.value(layer.u), v.len(), &v, &mut z);
        for k in 0..d {
            let max = (0..blocks).map(|b| z[b * d + k]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for b in 0..blocks {
                let e = clamped_exp(z[b * d + k] - max);
                z[b * d + k] = e;
                total += e;
            }
            for b in 0..blocks {
                z[b * d + k] /= total;
            }
        }

        let mut output = vec![0.0; d];
        for (b, block) in v.chunks_exact(d).enumerate() {
            for k in 0..d {
                output[k] += z[b * d + k] * block[k];
            }
        }
        GatedTrace {
            v,
            r,
            rc,
            z,
            output,
        }
    }

    /// Backpropagates `d_out` through a composition and returns the gradient per character.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &CompositionTrace,
        d_out: &[f64],
        grads: &mut Gradients,
    ) -> Vec<Vec<f64>> {
        let d = self.dim;
        let dx = match trace {
            CompositionTrace::Simple(t) => {
                let layer = self.layers[t.x.len() / d - 1];
                let dpre: Vec<f64> = d_out
                    .iter()
                    .zip(&t.output)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                outer_acc(grads.dense_mut(store, layer.w), &dpre, &t.x);
                let mut dx = vec![0.0; t.x.len()];
                matvec_t_acc(store.value(layer.w), t.x.len(), &dpre, &mut dx);
                dx
            }
            CompositionTrace::Gated(t) => self.gated_backward(store, t, d_out, grads),
        };
        dx.chunks_exact(d).map(<[f64]>::to_vec).collect()
    }

    fn gated_backward(&self, store: &ParamStore, t: &GatedTrace, d_out: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let d = self.dim;
        let nv = t.v.len();
        let n = nv - d;
        let blocks = nv / d;
        let layer = self.layers[n / d - 1];

        // w = Σ_b z_b ⊙ v_b
        let mut dv = vec![0.0; nv];
        let mut dlogits = vec![0.0; nv];
        for (k, &g) in d_out.iter().enumerate().take(d) {
            let mut weighted = 0.0;
            for b in 0..blocks {
                let i = b * d + k;
                dv[i] = t.z[i] * g;
                weighted += t.z[i] * g * t.v[i];
            }
            for b in 0..blocks {
                let i = b * d + k;
                dlogits[i] = t.z[i] * (g * t.v[i] - weighted);
            }
        }
        outer_acc(grads.dense_mut(store, layer.u), &dlogits, &t.v);
        matvec_t_acc(store.value(layer.u), nv, &dlogits, &mut dv);

        let (d_candidate, dx_direct) = dv.split_at(d);
        let mut dx = dx_direct.to_vec();

        let candidate = &t.v[..d];
        let x = &t.v[d..];
        let dpre: Vec<f64> = d_candidate
            .iter()
            .zip(candidate)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        outer_acc(grads.dense_mut(store, layer.w), &dpre, &t.rc);
        let mut drc = vec![0.0; n];
        matvec_t_acc(store.value(layer.w), n, &dpre, &mut drc);

        let mut dr_pre = vec![0.0; n];
        for i in 0..n {
            dx[i] += drc[i] * t.r[i];
            let dr = drc[i] * x[i];
            dr_pre[i] = dr * t.r[i] * (1.0 - t.r[i]);
        }
        outer_acc(grads.dense_mut(store, layer.r), &dr_pre, x);
        matvec_t_acc(store.value(layer.r), n, &dr_pre, &mut dx);
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleTrace {
    x: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedTrace {
    /// `[ŵ; c_1; …; c_L]`
    v: Vec<f64>,
    r: Vec<f64>,
    rc: Vec<f64>,
    /// Update gates, block 0 is `z_N`.
    z: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompositionTrace {
    Simple(SimpleTrace),
    Gated(GatedTrace),
}

impl CompositionTrace {
    pub fn output(&self) -> &[f64] {
        match self {
            CompositionTrace::Simple(t) => &t.output,
            CompositionTrace::Gated(t) => &t.output,
        }
    }

    pub fn into_output(self) -> Vec<f64> {
        match self {
            CompositionTrace::Simple(t) => t.output,
            CompositionTrace::Gated(t) => t.output,
        }
    }
}

/// Gate values of one gated composition.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    /// `r_1 … r_L`
    pub resets: Vec<Vec<f64>>,
    /// `z_N, z_1 … z_L`
    pub updates: Vec<Vec<f64>>,
    /// `ŵ`
    pub candidate: Vec<f64>,
}

impl GatedTrace {
    pub fn activations(&self) -> GateActivations {
        let d = self.output.len();
        GateActivations {
            resets: self.r.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            updates: self.z.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            candidate: self.v[..d].to_vec(),
        }
    }
}

pub fn compose_simple<C: AsRef<[f64]>>(store: &ParamStore, params: &GcnnParams, chars: &[C]) -> Result<Vec<f64>> {
    Ok(params.forward(store, Composition::Simple, chars)?.into_output())
}

pub fn compose_gated<C: AsRef<[f64]>>(
    store: &ParamStore,
    params: &GcnnParams,
    chars: &[C],
) -> Result<(Vec<f64>, GateActivations)> {
    match params.forward(store, Composition::Gated, chars)? {
        CompositionTrace::Gated(t) => {
            let acts = t.activations();
            Ok((t.output, acts))
        }
        CompositionTrace::Simple(_) => unreachable!("gated forward returns a gated trace"),
    }
}
