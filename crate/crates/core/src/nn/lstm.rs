use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{Mat, ParamId, ParamSet};
use crate::error::{Error, Result};

pub const INIT_SCALE: f64 = 0.1;

/// One LSTM layer. Gate columns are laid out `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Per-layer `(h, c)` nodes.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl LstmState {
    pub fn top(&self) -> NodeId {
        self.layers.last().unwrap().0
    }

    pub fn slice_rows(&self, g: &mut Graph, rows: usize) -> LstmState {
        LstmState {
            layers: self
                .layers
                .iter()
                .map(|&(h, c)| (g.slice_rows(h, 0, rows), g.slice_rows(c, 0, rows)))
                .collect(),
        }
    }

    /// Detached copy of the state values, e.g. for carrying across batches.
    pub fn detach(&self, g: &Graph) -> StateValue {
        StateValue {
            layers: self
                .layers
                .iter()
                .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
                .collect(),
        }
    }
}

/// Plain-value LSTM state, outside any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct StateValue {
    pub layers: Vec<(Mat, Mat)>,
}

impl StateValue {
    pub fn zeros(num_layers: usize, rows: usize, hidden: usize) -> Self {
        StateValue {
            layers: (0..num_layers)
                .map(|_| (Mat::zeros((rows, hidden)), Mat::zeros((rows, hidden))))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.layers[0].0.nrows()
    }

    /// The given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> StateValue {
        let ax = ndarray::Axis(0);
        StateValue {
            layers: self.layers.iter().map(|(h, c)| (h.select(ax, rows), c.select(ax, rows))).collect(),
        }
    }

    /// Writes row `i` of `src` into row `rows[i]`.
    pub fn assign_rows(&mut self, rows: &[usize], src: &StateValue) {
        for ((h, c), (sh, sc)) in self.layers.iter_mut().zip(&src.layers) {
            for (i, &r) in rows.iter().enumerate() {
                h.row_mut(r).assign(&sh.row(i));
                c.row_mut(r).assign(&sc.row(i));
            }
        }
    }

    pub fn to_graph(&self, g: &mut Graph) -> LstmState {
        LstmState {
            layers: self
                .layers
                .iter()
                .map(|(h, c)| (g.constant(h.clone()), g.constant(c.clone())))
                .collect(),
        }
    }
}

/// Inverted dropout with its own random stream. Rate 0 is the identity.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng }
    }

    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> NodeId {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let dim = g.value(x).dim();
        let rng = &mut self.rng;
        let mask = Mat::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, mask)
    }
}

pub(crate) fn maybe_dropout(g: &mut Graph, x: NodeId, dropout: &mut Option<&mut Dropout>) -> NodeId {
    match dropout {
        Some(d) => d.apply(g, x),
        None => x,
    }
}

impl Lstm {
    /// Uniform(-0.1, 0.1) weights, zero biases, forget bias 1.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                let w_x = params.add_uniform(
                    format!("{prefix}.l{l}.w_x"),
                    (in_dim, 4 * hidden_dim),
                    INIT_SCALE,
                    rng,
                );
                let w_h = params.add_uniform(
                    format!("{prefix}.l{l}.w_h"),
                    (hidden_dim, 4 * hidden_dim),
                    INIT_SCALE,
                    rng,
                );
                let mut bias = Mat::zeros((1, 4 * hidden_dim));
                bias.slice_mut(ndarray::s![.., hidden_dim..2 * hidden_dim]).fill(1.0);
                let b = params.add(format!("{prefix}.l{l}.b"), bias);
                LstmLayer { w_x, w_h, b }
            })
            .collect();
        Lstm {
            layers,
            input_dim,
            hidden_dim,
        }
    }

    /// Rebinds an LSTM to already-loaded parameters, validating shapes.
    pub fn from_params(
        params: &ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
    ) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                Ok(LstmLayer {
                    w_x: params.expect(&format!("{prefix}.l{l}.w_x"), (in_dim, 4 * hidden_dim))?,
                    w_h: params.expect(&format!("{prefix}.l{l}.w_h"), (hidden_dim, 4 * hidden_dim))?,
                    b: params.expect(&format!("{prefix}.l{l}.b"), (1, 4 * hidden_dim))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Lstm {
            layers,
            input_dim,
            hidden_dim,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> LstmState {
        StateValue::zeros(self.num_layers(), rows, self.hidden_dim).to_graph(g)
    }

    /// One time step over a batch of rows. Dropout, when given, is applied
    /// between layers only, never on the recurrent path.
    pub fn step(
        &self,
        g: &mut Graph,
        x: NodeId,
        state: &LstmState,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(NodeId, LstmState)> {
        let rows = g.value(x).nrows();
        if g.value(x).ncols() != self.input_dim {
            return Err(Error::Shape {
                op: "lstm_step",
                detail: format!(
                    "input width {} but the LSTM expects {}",
                    g.value(x).ncols(),
                    self.input_dim
                ),
            });
        }
        if state.layers.len() != self.layers.len()
            || state
                .layers
                .iter()
                .any(|&(h, c)| g.value(h).dim() != (rows, self.hidden_dim) || g.value(c).dim() != (rows, self.hidden_dim))
        {
            return Err(Error::Shape {
                op: "lstm_step",
                detail: "state does not match batch rows or hidden size".into(),
            });
        }
        let hd = self.hidden_dim;
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, (layer, &(h, c))) in self.layers.iter().zip(&state.layers).enumerate() {
            if l > 0 {
                input = maybe_dropout(g, input, &mut dropout);
            }
            let wx = g.param(layer.w_x);
            let wh = g.param(layer.w_h);
            let b = g.param(layer.b);
            let xw = g.matmul(input, wx);
            let hw = g.matmul(h, wh);
            let pre = g.add(xw, hw);
            let pre = g.add_row(pre, b);
            let i_pre = g.slice_cols(pre, 0, hd);
            let f_pre = g.slice_cols(pre, hd, 2 * hd);
            let c_pre = g.slice_cols(pre, 2 * hd, 3 * hd);
            let o_pre = g.slice_cols(pre, 3 * hd, 4 * hd);
            let i_gate = g.sigmoid(i_pre);
            let f_gate = g.sigmoid(f_pre);
            let cand = g.tanh(c_pre);
            let o_gate = g.sigmoid(o_pre);
            let keep = g.mul(f_gate, c);
            let write = g.mul(i_gate, cand);
            let c_new = g.add(keep, write);
            let c_act = g.tanh(c_new);
            let h_new = g.mul(o_gate, c_act);
            next.push((h_new, c_new));
            input = h_new;
        }
        g.check()?;
        Ok((input, LstmState { layers: next }))
    }
}
