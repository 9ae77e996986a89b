//! Neural learners: two-head networks (TARNet, TARNet-WR, OffsetNet, neural
//! T-learner, H-learner stage 2) and single-output networks (S-learner and
//! direct pseudo-outcome regression).

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{h_loss, Checkpoint, NetConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{train, ForwardCache, MlpSpec, Objective, ParameterSet, TrainOutcome};

/// What the two heads output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Heads are `f0` and `f1` directly.
    Potential,
    /// Heads are `mu0` and the offset `tau`; `mu1 = mu0 + tau`.
    Offset,
}

/// Architecture of a two-head model: optional shared trunk plus two heads of
/// identical shape. Parameters are laid out `[trunk | head0 | head1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoHeadLayout {
    pub trunk: Option<MlpSpec>,
    pub head: MlpSpec,
    pub mode: HeadMode,
}

pub(crate) struct TwoHeadPass {
    trunk: Option<ForwardCache>,
    head0: ForwardCache,
    head1: ForwardCache,
}

impl TwoHeadPass {
    fn raw(&self) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.head0.output().column(0), self.head1.output().column(0))
    }
}

impl TwoHeadLayout {
    pub fn new(input_dim: usize, net: &NetConfig, shared_trunk: bool, mode: HeadMode) -> Result<Self> {
        let layout = if shared_trunk && !net.trunk.is_empty() {
            let trunk = MlpSpec::trunk(input_dim, &net.trunk);
            let head = MlpSpec::new(trunk.output_dim, net.head.clone(), 1);
            Self { trunk: Some(trunk), head, mode }
        } else {
            let hidden = net.trunk.iter().chain(&net.head).copied().collect();
            Self { trunk: None, head: MlpSpec::new(input_dim, hidden, 1), mode }
        };
        layout.head.validate()?;
        if let Some(t) = &layout.trunk {
            t.validate()?;
        }
        Ok(layout)
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.as_ref().map_or(self.head.input_dim, |t| t.input_dim)
    }

    fn trunk_len(&self) -> usize {
        self.trunk.as_ref().map_or(0, MlpSpec::n_params)
    }

    fn head_len(&self) -> usize {
        self.head.n_params()
    }

    pub fn n_params(&self) -> usize {
        self.trunk_len() + 2 * self.head_len()
    }

    /// Parameter ranges of the two heads.
    pub fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let a = self.trunk_len();
        let h = self.head_len();
        (a..a + h, a + h..a + 2 * h)
    }

    pub fn init(&self, seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = Vec::with_capacity(3);
        if let Some(t) = &self.trunk {
            parts.push(t.init(&mut rng));
        }
        parts.push(self.head.init(&mut rng));
        let mut second = self.head.init(&mut rng);
        if self.mode == HeadMode::Offset {
            self.head.zero_output_layer(&mut second.values);
        }
        parts.push(second);
        ParameterSet::concat(parts)
    }

    pub(crate) fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<TwoHeadPass> {
        if params.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: params.len(),
                context: "two-head parameter count",
            });
        }
        let (r0, r1) = self.head_ranges();
        let trunk = match &self.trunk {
            Some(t) => Some(t.forward(&params[..r0.start], x)?),
            None => None,
        };
        let rep = trunk.as_ref().map_or(x, |c| c.output().view());
        let head0 = self.head.forward(&params[r0], rep)?;
        let head1 = self.head.forward(&params[r1], rep)?;
        Ok(TwoHeadPass { trunk, head0, head1 })
    }

    /// `(f0, f1)`, the two potential-outcome functions.
    pub fn outcomes(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let pass = self.forward(params, x)?;
        let (o0, o1) = pass.raw();
        Ok(match self.mode {
            HeadMode::Potential => (o0.to_owned(), o1.to_owned()),
            HeadMode::Offset => (o0.to_owned(), &o0 + &o1),
        })
    }

    pub fn tau(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let pass = self.forward(params, x)?;
        let (o0, o1) = pass.raw();
        Ok(match self.mode {
            HeadMode::Potential => &o1 - &o0,
            HeadMode::Offset => o1.to_owned(),
        })
    }

    /// Back-propagates gradients given with respect to `(f0, f1)`.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        pass: &TwoHeadPass,
        grad_f0: &Array1<f64>,
        grad_f1: &Array1<f64>,
        grad: &mut [f64],
    ) {
        let (g0, g1) = match self.mode {
            HeadMode::Potential => (grad_f0.clone(), grad_f1.clone()),
            HeadMode::Offset => (grad_f0 + grad_f1, grad_f1.clone()),
        };
        let m = g0.len();
        let g0 = g0.into_shape_with_order((m, 1)).expect("column");
        let g1 = g1.into_shape_with_order((m, 1)).expect("column");
        let (r0, r1) = self.head_ranges();
        let trunk_end = r0.start;
        let (trunk_grad, heads_grad) = grad.split_at_mut(trunk_end);
        let (h0_grad, h1_grad) = heads_grad.split_at_mut(r0.len());
        let d_rep0 = self.head.backward(&params[r0], &pass.head0, g0.view(), h0_grad);
        let d_rep1 = self.head.backward(&params[r1], &pass.head1, g1.view(), h1_grad);
        if let (Some(spec), Some(cache)) = (&self.trunk, &pass.trunk) {
            let d_rep = d_rep0 + d_rep1;
            spec.backward(&params[..trunk_end], cache, d_rep.view(), trunk_grad);
        }
    }

    /// Squared distance between the two heads' parameters.
    pub fn head_gap(&self, params: &[f64]) -> f64 {
        let (r0, r1) = self.head_ranges();
        params[r0].iter().zip(&params[r1]).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

/// A trained two-head network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHeadModel {
    pub layout: TwoHeadLayout,
    pub params: ParameterSet,
}

impl TwoHeadModel {
    pub fn outcomes(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        self.layout.outcomes(&self.params.values, x)
    }

    pub fn tau(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.layout.tau(&self.params.values, x)
    }
}

/// Per-batch loss terms of a two-head objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoHeadLossParts {
    pub indirect: f64,
    pub direct: f64,
    pub weight_gap: f64,
    pub total: f64,
}

/// `(1 - lambda) * factual MSE + lambda * mean((f1 - f0 - pseudo)^2)
/// + rho * ||head0 - head1||^2`, evaluated on mini-batches.
pub struct TwoHeadObjective<'a> {
    pub layout: &'a TwoHeadLayout,
    pub data: &'a Dataset,
    /// Direct-loss targets; `None` means all zeros.
    pub pseudo: Option<&'a Array1<f64>>,
    pub lambda: f64,
    pub rho: f64,
}

impl TwoHeadObjective<'_> {
    pub fn loss_parts(&self, params: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> TwoHeadLossParts {
        let xb = self.data.x.select(Axis(0), rows);
        let pass = self.layout.forward(params, xb.view()).expect("objective shapes validated");
        let (o0, o1) = pass.raw();
        let (f0, f1) = match self.layout.mode {
            HeadMode::Potential => (o0.to_owned(), o1.to_owned()),
            HeadMode::Offset => (o0.to_owned(), &o0 + &o1),
        };
        let t: Vec<u8> = rows.iter().map(|&i| self.data.t[i]).collect();
        let y: Array1<f64> = rows.iter().map(|&i| self.data.y[i]).collect();
        let pseudo: Array1<f64> = match self.pseudo {
            Some(p) => rows.iter().map(|&i| p[i]).collect(),
            None => Array1::zeros(rows.len()),
        };
        let parts = h_loss(y.view(), &t, f0.view(), f1.view(), pseudo.view(), self.lambda);
        let gap = if self.rho > 0.0 { self.layout.head_gap(params) } else { 0.0 };

        if let Some(grad) = grad {
            let m = rows.len() as f64;
            let mut g0 = Array1::zeros(rows.len());
            let mut g1 = Array1::zeros(rows.len());
            for i in 0..rows.len() {
                let d = 2.0 * self.lambda * (f1[i] - f0[i] - pseudo[i]) / m;
                g1[i] += d;
                g0[i] -= d;
                if self.lambda < 1.0 {
                    let (f, g) = if t[i] == 1 { (f1[i], &mut g1) } else { (f0[i], &mut g0) };
                    g[i] += 2.0 * (1.0 - self.lambda) * (f - y[i]) / m;
                }
            }
            self.layout.backward(params, &pass, &g0, &g1, grad);
            if self.rho > 0.0 {
                let (r0, r1) = self.layout.head_ranges();
                for (a, b) in r0.zip(r1) {
                    let diff = 2.0 * self.rho * (params[a] - params[b]);
                    grad[a] += diff;
                    grad[b] -= diff;
                }
            }
        }
        TwoHeadLossParts {
            indirect: parts.indirect,
            direct: parts.direct,
            weight_gap: gap,
            total: parts.total + self.rho * gap,
        }
    }
}

impl Objective for TwoHeadObjective<'_> {
    fn n_rows(&self) -> usize {
        self.data.n()
    }

    fn batch_loss(&self, params: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
        self.loss_parts(params, rows, grad).total
    }
}

pub(crate) struct TwoHeadFit<'a> {
    pub data: &'a Dataset,
    pub net: &'a NetConfig,
    pub shared_trunk: bool,
    pub mode: HeadMode,
    pub pseudo: Option<&'a Array1<f64>>,
    pub lambda: f64,
    pub rho: f64,
}

pub(crate) fn fit_two_head(spec: TwoHeadFit<'_>, checkpoint: &Checkpoint) -> Result<(TwoHeadModel, TrainOutcome)> {
    let layout = TwoHeadLayout::new(spec.data.d(), spec.net, spec.shared_trunk, spec.mode)?;
    let objective =
        TwoHeadObjective { layout: &layout, data: spec.data, pseudo: spec.pseudo, lambda: spec.lambda, rho: spec.rho };
    let init = layout.init(spec.net.init_seed());
    let scorer: Option<Box<dyn Fn(&[f64]) -> f64 + '_>> = match checkpoint {
        Checkpoint::TrainLoss => None,
        Checkpoint::Factual(val) => {
            check_input(layout.input_dim(), val.x.view())?;
            Some(Box::new(|p: &[f64]| {
                let (f0, f1) = layout.outcomes(p, val.x.view()).expect("validated");
                factual_mse(val, &f0, &f1)
            }))
        }
        Checkpoint::Proxy { x, imputed } => {
            check_input(layout.input_dim(), x.view())?;
            Some(Box::new(|p: &[f64]| {
                let tau = layout.tau(p, x.view()).expect("validated");
                mean_sq_diff(tau.view(), imputed.view())
            }))
        }
    };
    let out = train(&objective, init, &spec.net.train, scorer.as_deref())?;
    let model = TwoHeadModel { layout: layout.clone(), params: out.params.clone() };
    Ok((model, out))
}

fn check_input(expected: usize, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Dimension { expected, actual: x.ncols(), context: "checkpoint data columns" });
    }
    Ok(())
}

pub(crate) fn factual_mse(data: &Dataset, f0: &Array1<f64>, f1: &Array1<f64>) -> f64 {
    let n = data.n() as f64;
    (0..data.n())
        .map(|i| {
            let f = if data.t[i] == 1 { f1[i] } else { f0[i] };
            (f - data.y[i]).powi(2)
        })
        .sum::<f64>()
        / n
}

pub(crate) fn mean_sq_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// A trained single-output network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleNet {
    pub spec: MlpSpec,
    pub params: ParameterSet,
}

impl SingleNet {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.spec.predict(&self.params.values, x)?.column(0).to_owned())
    }
}

/// Appends a constant treatment column.
pub(crate) fn with_treatment(x: ArrayView2<f64>, t: f64) -> Array2<f64> {
    let col = Array2::from_elem((x.nrows(), 1), t);
    concatenate![Axis(1), x, col]
}

struct RegressionObjective<'a> {
    spec: &'a MlpSpec,
    x: &'a Array2<f64>,
    target: &'a Array1<f64>,
}

impl Objective for RegressionObjective<'_> {
    fn n_rows(&self) -> usize {
        self.target.len()
    }

    fn batch_loss(&self, params: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let xb = self.x.select(Axis(0), rows);
        let cache = self.spec.forward(params, xb.view()).expect("objective shapes validated");
        let m = rows.len() as f64;
        let out = cache.output();
        let resid: Array2<f64> = Array2::from_shape_fn((rows.len(), 1), |(i, _)| out[[i, 0]] - self.target[rows[i]]);
        if let Some(g) = grad {
            let up = resid.mapv(|r| 2.0 * r / m);
            self.spec.backward(params, &cache, up.view(), g);
        }
        resid.iter().map(|r| r * r).sum::<f64>() / m
    }
}

pub(crate) fn fit_regression_net(
    x: &Array2<f64>,
    target: &Array1<f64>,
    net: &NetConfig,
    scorer: Option<&dyn Fn(&SingleNet) -> f64>,
) -> Result<SingleNet> {
    let hidden = net.trunk.iter().chain(&net.head).copied().collect();
    let spec = MlpSpec::new(x.ncols(), hidden, 1);
    spec.validate()?;
    let init = spec.init(&mut ChaCha8Rng::seed_from_u64(net.init_seed()));
    let objective = RegressionObjective { spec: &spec, x, target };
    let wrapped = scorer.map(|s| {
        let spec = spec.clone();
        let shapes = init.shapes.clone();
        move |p: &[f64]| {
            let model =
                SingleNet { spec: spec.clone(), params: ParameterSet { values: p.to_vec(), shapes: shapes.clone() } };
            s(&model)
        }
    });
    let out = train(&objective, init, &net.train, wrapped.as_ref().map(|f| f as &dyn Fn(&[f64]) -> f64))?;
    Ok(SingleNet { spec, params: out.params })
}
