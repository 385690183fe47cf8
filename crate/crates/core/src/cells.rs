//! Recurrent cells: vanilla tanh RNN, GRU and LSTM, stackable in layers.
//!
//! Layer `k` of a stack stores its weights under `cell.{k}.*`:
//!
//! | kind | `w_ih`        | recurrent weights                          | `b`    |
//! |------|---------------|--------------------------------------------|--------|
//! | rnn  | `[H, in]`     | `w_hh: [H, H]`                             | `[H]`  |
//! | gru  | `[3H, in]`    | `w_hh_rz: [2H, H]`, `w_hh_n: [H, H]`       | `[3H]` |
//! | lstm | `[4H, in]`    | `w_hh: [4H, H]`                            | `[4H]` |
//!
//! GRU rows are ordered reset, update, candidate. LSTM rows are ordered
//! input, forget, cell, output.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub hidden_size: usize,
    pub input_size: usize,
    pub num_layers: usize,
}

impl CellConfig {
    /// Single layer whose input width equals the hidden width.
    pub fn new(kind: CellKind, hidden_size: usize) -> Self {
        Self {
            kind,
            hidden_size,
            input_size: hidden_size,
            num_layers: 1,
        }
    }

    pub fn with_layers(mut self, num_layers: usize) -> Self {
        self.num_layers = num_layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.input_size == 0 || self.num_layers == 0 {
            return Err(Error::Config(format!("invalid cell config {self:?}")));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_size
        } else {
            self.hidden_size
        }
    }

    /// Scalar parameter count of the whole stack, biases included.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        let g = self.kind.gates();
        (0..self.num_layers)
            .map(|l| g * (h * self.layer_input(l) + h * h + h))
            .sum()
    }

    /// Adds every layer's weights to `store`, uniform in `[-scale, scale]`.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        self.validate()?;
        let h = self.hidden_size;
        let g = self.kind.gates();
        for l in 0..self.num_layers {
            let input = self.layer_input(l);
            store.insert_uniform(format!("cell.{l}.w_ih"), &[g * h, input], scale, rng)?;
            match self.kind {
                CellKind::Gru => {
                    store.insert_uniform(format!("cell.{l}.w_hh_rz"), &[2 * h, h], scale, rng)?;
                    store.insert_uniform(format!("cell.{l}.w_hh_n"), &[h, h], scale, rng)?;
                }
                _ => {
                    store.insert_uniform(format!("cell.{l}.w_hh"), &[g * h, h], scale, rng)?;
                }
            }
            store.insert_uniform(format!("cell.{l}.b"), &[g * h], scale, rng)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    /// Cell memory, LSTM only.
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<LayerState>,
}

/// All-zero state of the right shape for `config`.
pub fn init_state(config: &CellConfig) -> HiddenState {
    let h = config.hidden_size;
    let c = (config.kind == CellKind::Lstm).then(|| vec![0.0; h]);
    HiddenState {
        layers: (0..config.num_layers)
            .map(|_| LayerState {
                h: vec![0.0; h],
                c: c.clone(),
            })
            .collect(),
    }
}

impl HiddenState {
    /// Hidden vector of the top layer.
    pub fn top(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").h
    }

    pub fn to_vars(&self, g: &mut Graph<'_>) -> StateVars {
        StateVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.vector(l.h.clone()), l.c.as_ref().map(|c| g.vector(c.clone()))))
                .collect(),
        }
    }
}

/// A [`HiddenState`] living on a graph.
#[derive(Debug, Clone)]
pub struct StateVars {
    pub layers: Vec<(Var, Option<Var>)>,
}

impl StateVars {
    pub fn top(&self) -> Var {
        self.layers.last().expect("at least one layer").0
    }

    pub fn values(&self, g: &Graph<'_>) -> HiddenState {
        HiddenState {
            layers: self
                .layers
                .iter()
                .map(|(h, c)| LayerState {
                    h: g.value(*h).data().to_vec(),
                    c: c.map(|c| g.value(c).data().to_vec()),
                })
                .collect(),
        }
    }

    /// Same values, gradient path cut.
    pub fn detach(&self, g: &mut Graph<'_>) -> StateVars {
        StateVars {
            layers: self
                .layers
                .iter()
                .map(|(h, c)| (g.detach(*h), c.map(|c| g.detach(c))))
                .collect(),
        }
    }
}

fn check_state(config: &CellConfig, prev: &StateVars, g: &Graph<'_>) -> Result<()> {
    if prev.layers.len() != config.num_layers {
        return Err(Error::Config(format!(
            "state has {} layers, config has {}",
            prev.layers.len(),
            config.num_layers
        )));
    }
    for (h, c) in &prev.layers {
        if g.value(*h).len() != config.hidden_size {
            return Err(Error::Config(format!(
                "hidden state of length {}, expected {}",
                g.value(*h).len(),
                config.hidden_size
            )));
        }
        if (config.kind == CellKind::Lstm) != c.is_some() {
            return Err(Error::Config("cell memory present iff the cell is an LSTM".into()));
        }
    }
    Ok(())
}

/// One time step through every layer; layer `k` feeds layer `k + 1`.
pub fn cell_step_graph(
    g: &mut Graph<'_>,
    config: &CellConfig,
    x: Var,
    prev: &StateVars,
) -> Result<StateVars> {
    check_state(config, prev, g)?;
    if g.value(x).len() != config.input_size {
        return Err(Error::Config(format!(
            "input of length {}, expected {}",
            g.value(x).len(),
            config.input_size
        )));
    }
    let hs = config.hidden_size;
    let mut input = x;
    let mut layers = Vec::with_capacity(config.num_layers);
    for (l, &(h_prev, c_prev)) in prev.layers.iter().enumerate() {
        let w_ih = g.param_named(&format!("cell.{l}.w_ih"))?;
        let b = g.param_named(&format!("cell.{l}.b"))?;
        let wx = g.matvec(w_ih, input)?;
        let wxb = g.add(wx, b)?;
        let next = match config.kind {
            CellKind::Rnn => {
                let w_hh = g.param_named(&format!("cell.{l}.w_hh"))?;
                let uh = g.matvec(w_hh, h_prev)?;
                let pre = g.add(wxb, uh)?;
                (g.tanh(pre), None)
            }
            CellKind::Gru => {
                let w_rz = g.param_named(&format!("cell.{l}.w_hh_rz"))?;
                let w_n = g.param_named(&format!("cell.{l}.w_hh_n"))?;
                let uh = g.matvec(w_rz, h_prev)?;
                let x_rz = g.slice(wxb, 0, 2 * hs)?;
                let rz_pre = g.add(x_rz, uh)?;
                let rz = g.sigmoid(rz_pre);
                let r = g.slice(rz, 0, hs)?;
                let z = g.slice(rz, hs, hs)?;
                let rh = g.mul(r, h_prev)?;
                let un = g.matvec(w_n, rh)?;
                let x_n = g.slice(wxb, 2 * hs, hs)?;
                let n_pre = g.add(x_n, un)?;
                let n = g.tanh(n_pre);
                let keep = g.mul(z, h_prev)?;
                let one_minus_z = g.one_minus(z);
                let fresh = g.mul(one_minus_z, n)?;
                (g.add(keep, fresh)?, None)
            }
            CellKind::Lstm => {
                let c_prev = c_prev.expect("checked above");
                let w_hh = g.param_named(&format!("cell.{l}.w_hh"))?;
                let uh = g.matvec(w_hh, h_prev)?;
                let pre = g.add(wxb, uh)?;
                let i_pre = g.slice(pre, 0, hs)?;
                let f_pre = g.slice(pre, hs, hs)?;
                let c_in = g.slice(pre, 2 * hs, hs)?;
                let o_pre = g.slice(pre, 3 * hs, hs)?;
                let i = g.sigmoid(i_pre);
                let f = g.sigmoid(f_pre);
                let cand = g.tanh(c_in);
                let o = g.sigmoid(o_pre);
                let kept = g.mul(f, c_prev)?;
                let written = g.mul(i, cand)?;
                let c = g.add(kept, written)?;
                let tc = g.tanh(c);
                (g.mul(o, tc)?, Some(c))
            }
        };
        layers.push(next);
        input = next.0;
    }
    Ok(StateVars { layers })
}

/// Value-only step, for evaluation and tests.
pub fn cell_step(
    config: &CellConfig,
    store: &ParamStore,
    x: &[f64],
    prev: &HiddenState,
) -> Result<HiddenState> {
    let mut g = Graph::new(store);
    let xv = g.constant(Tensor::vector(x.to_vec()));
    let pv = prev.to_vars(&mut g);
    let next = cell_step_graph(&mut g, config, xv, &pv)?;
    Ok(next.values(&g))
}
