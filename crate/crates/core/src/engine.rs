//! Map-reduce evaluation of the recurrent objective and its gradient.
//!
//! Samples are grouped into fixed leaves of [`BLOCK`](crate::psi::BLOCK)
//! consecutive rows. Workers receive leaf-aligned ranges and return one
//! partial sum per leaf; the reduction always combines leaves with the same
//! pairwise tree, so totals are bit-identical for every worker count. Only
//! `M×M` matrices, `M`-vectors and scalars cross the reduction, and the
//! `O(M³)` factorisation happens once per layer on the reducing side.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::bound::{
    collapsed_bound, kl_omega, project_row, state_terms, BoundReport, Collapsed, CollapsedTerms,
};
use crate::error::{bail, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::params::{GroupKey, ParamGroup, ParamLayout};
use crate::psi::{tree_reduce, Spectrum, SpectrumGrad, BLOCK};
use crate::recurrent::{RecurrentPlan, Source};
use crate::transform::positive_derivative;
use crate::types::{Dataset, DrgpModel};

/// Runs a closure over sample ranges, possibly in parallel. Results must be
/// returned in the order of `ranges`.
pub trait RangeMap: Sync {
    fn map<T, F>(&self, ranges: &[Range<usize>], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send;
}

/// Evaluates ranges one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl RangeMap for Serial {
    fn map<T, F>(&self, ranges: &[Range<usize>], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        ranges.iter().cloned().map(f).collect()
    }
}

/// Splits `0..rows` into at most `workers` contiguous, leaf-aligned ranges.
pub fn partition(rows: usize, workers: usize) -> Vec<Range<usize>> {
    let leaves = rows.div_ceil(BLOCK);
    let workers = workers.clamp(1, leaves.max(1));
    let mut out = Vec::with_capacity(workers);
    let mut start_leaf = 0;
    for w in 0..workers {
        let end_leaf = leaves * (w + 1) / workers;
        out.push((start_leaf * BLOCK).min(rows)..(end_leaf * BLOCK).min(rows));
        start_leaf = end_leaf;
    }
    out
}

/// A GP layer resolved for one evaluation.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    pub spec: Spectrum,
    pub mean: Matrix,
    pub var: Matrix,
    pub targets: Vec<f64>,
    pub sigma_noise: f64,
}

/// Model and data resolved into per-layer window matrices.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub model: &'a DrgpModel,
    pub plan: &'a RecurrentPlan,
    pub layers: Vec<PreparedLayer>,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a DrgpModel, data: &Dataset, plan: &'a RecurrentPlan) -> Result<Self> {
        model.validate(data.len())?;
        if plan.len != data.len() || plan.config != model.config {
            bail!(
                Config,
                "recurrent plan was built for a different model or series length"
            );
        }
        let layers = model
            .layers
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let (mean, var) = plan.layer_inputs(l, model, data);
                Ok(PreparedLayer {
                    spec: Spectrum::new(&p.hyper, &p.basis)?,
                    mean,
                    var,
                    targets: plan.layer_targets(l, model, data),
                    sigma_noise: p.hyper.sigma_noise(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            plan,
            layers,
        })
    }

    pub fn rows(&self) -> usize {
        self.plan.rows
    }
}

/// Sums of one leaf (or leaf fragment) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafSums {
    pub psi2: Vec<f64>,
    pub proj: Vec<f64>,
    pub yty: f64,
}

impl LeafSums {
    fn zeros(m: usize) -> Self {
        Self {
            psi2: vec![0.0; m * m],
            proj: vec![0.0; m],
            yty: 0.0,
        }
    }

    fn add(&mut self, o: &LeafSums) {
        self.psi2.iter_mut().zip(&o.psi2).for_each(|(a, b)| *a += b);
        self.proj.iter_mut().zip(&o.proj).for_each(|(a, b)| *a += b);
        self.yty += o.yty;
    }
}

/// Output of the map phase for one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialStats {
    pub worker: usize,
    pub range: Range<usize>,
    /// Feature count of each layer.
    pub features: Vec<usize>,
    /// For each layer, `(leaf index, fragment range, sums)` in sample order.
    pub leaves: Vec<Vec<(usize, Range<usize>, LeafSums)>>,
}

impl PartialStats {
    /// Sum of all leaves of a layer in sample order.
    pub fn layer_total(&self, layer: usize) -> LeafSums {
        let mut total = LeafSums::zeros(self.features[layer]);
        for (_, _, s) in &self.leaves[layer] {
            total.add(s);
        }
        total
    }
}

/// Splits `range` at global leaf boundaries.
fn fragments(range: Range<usize>) -> Vec<(usize, Range<usize>)> {
    let mut out = Vec::new();
    let mut s = range.start;
    while s < range.end {
        let leaf = s / BLOCK;
        let e = ((leaf + 1) * BLOCK).min(range.end);
        out.push((leaf, s..e));
        s = e;
    }
    out
}

/// Map phase: per-leaf sums of `Ψ₂ⁿ`, `ψₙ tₙ` and `tₙ²` for every layer.
pub fn map_partial(
    prep: &Prepared<'_>,
    worker: usize,
    range: Range<usize>,
) -> Result<PartialStats> {
    if range.start > range.end || range.end > prep.rows() {
        bail!(Partition, "range {range:?} is outside 0..{}", prep.rows());
    }
    let frags = fragments(range.clone());
    let leaves = prep
        .layers
        .iter()
        .map(|layer| {
            let m = layer.spec.features;
            let mut row = vec![0.0; m];
            frags
                .iter()
                .map(|(leaf, r)| {
                    let mut sums = LeafSums::zeros(m);
                    for n in r.clone() {
                        let (mu, lam) = (layer.mean.row(n), layer.var.row(n));
                        layer.spec.psi2_add(mu, lam, &mut sums.psi2);
                        layer.spec.psi1_row(mu, lam, &mut row);
                        let t = layer.targets[n];
                        project_row(&row, core::slice::from_ref(&t), &mut sums.proj);
                        sums.yty += t * t;
                    }
                    (*leaf, r.clone(), sums)
                })
                .collect()
        })
        .collect();
    let features = prep.layers.iter().map(|l| l.spec.features).collect();
    Ok(PartialStats {
        worker,
        range,
        features,
        leaves,
    })
}

fn check_cover(ranges: &mut [Range<usize>], rows: usize) -> Result<()> {
    ranges.sort_by_key(|r| (r.start, r.end));
    let mut next = 0;
    for r in ranges.iter() {
        if r.start > next {
            return Err(Error::Partition(format!(
                "samples {}..{} are not covered by any worker",
                next, r.start
            )));
        }
        if r.start < next {
            return Err(Error::Partition(format!(
                "samples {}..{} are covered twice",
                r.start,
                next.min(r.end)
            )));
        }
        next = r.end;
    }
    if next < rows {
        return Err(Error::Partition(format!(
            "samples {next}..{rows} are not covered by any worker"
        )));
    }
    Ok(())
}

pub(crate) fn worker_of(ranges: &[Range<usize>], r: &Range<usize>) -> usize {
    ranges.iter().position(|x| x == r).unwrap_or(0)
}

/// Result of the reduce phase.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub report: BoundReport,
    pub layers: Vec<Collapsed>,
    pub terms: Vec<CollapsedTerms>,
}

/// Reduce phase: combines leaves with the fixed tree, factors each layer once
/// and adds the serial latent-state and spectral terms.
pub fn reduce_bound(prep: &Prepared<'_>, partials: &[PartialStats]) -> Result<Reduced> {
    let mut ranges: Vec<Range<usize>> = partials.iter().map(|p| p.range.clone()).collect();
    check_cover(&mut ranges, prep.rows())?;
    let mut layers = Vec::with_capacity(prep.layers.len());
    let mut terms = Vec::with_capacity(prep.layers.len());
    let mut per_layer = Vec::with_capacity(prep.layers.len());
    for (l, layer) in prep.layers.iter().enumerate() {
        let m = layer.spec.features;
        let mut frags: Vec<(usize, usize, &LeafSums)> = partials
            .iter()
            .flat_map(|p| p.leaves[l].iter().map(|(leaf, r, s)| (*leaf, r.start, s)))
            .collect();
        frags.sort_by_key(|f| (f.0, f.1));
        let mut leaves: Vec<LeafSums> = Vec::new();
        let mut current: Option<usize> = None;
        for (leaf, _, s) in frags {
            if current == Some(leaf) {
                leaves.last_mut().expect("leaf started").add(s);
            } else {
                leaves.push(s.clone());
                current = Some(leaf);
            }
        }
        let total = tree_reduce(leaves, LeafSums::add).unwrap_or_else(|| LeafSums::zeros(m));
        let t = CollapsedTerms {
            psi2: Matrix::from_vec(m, m, total.psi2)?,
            proj: Matrix::from_vec(m, 1, total.proj)?,
            yty: total.yty,
            rows: prep.rows(),
        };
        let c = collapsed_bound(&t, layer.sigma_noise, l)?;
        per_layer.push(c.value);
        layers.push(c);
        terms.push(t);
    }
    let report = BoundReport::from_parts(
        per_layer,
        state_terms(prep.model, prep.plan),
        kl_omega(prep.model)?,
    );
    Ok(Reduced {
        report,
        layers,
        terms,
    })
}

/// Derivatives of the objective with respect to one layer's statistics.
struct Adjoint {
    /// `A⁻¹Ψ₁ᵀt`.
    alpha: Vec<f64>,
    /// `∂/∂Ψ₂`, row-major `M×M`.
    g2: Vec<f64>,
    noise_var: f64,
}

fn adjoint(c: &Collapsed) -> Adjoint {
    let alpha = c.alpha.column(0);
    let m = alpha.len();
    let mut g2 = c.chol.inverse();
    g2.scale(-0.5);
    let s = 0.5 / c.noise_var;
    for i in 0..m {
        for j in 0..m {
            g2[(i, j)] -= s * alpha[i] * alpha[j];
        }
    }
    Adjoint {
        alpha,
        g2: g2.into_vec(),
        noise_var: c.noise_var,
    }
}

/// Backward map output for one worker.
struct PartialGrad {
    range: Range<usize>,
    /// Per layer, one spectrum gradient per leaf.
    spectra: Vec<Vec<SpectrumGrad>>,
    /// Per layer, rows of `∂/∂mean`, `∂/∂var` and `∂/∂target` for the range.
    dmean: Vec<Vec<f64>>,
    dvar: Vec<Vec<f64>>,
    dtarget: Vec<Vec<f64>>,
}

fn backward_partial(prep: &Prepared<'_>, adj: &[Adjoint], range: Range<usize>) -> PartialGrad {
    let frags = fragments(range.clone());
    let mut out = PartialGrad {
        range: range.clone(),
        spectra: vec![],
        dmean: vec![],
        dvar: vec![],
        dtarget: vec![],
    };
    for (layer, a) in prep.layers.iter().zip(adj) {
        let (m, q) = (layer.spec.features, layer.spec.dim);
        let mut dmean = vec![0.0; range.len() * q];
        let mut dvar = vec![0.0; range.len() * q];
        let mut dtarget = vec![0.0; range.len()];
        let mut g1 = vec![0.0; m];
        let mut row = vec![0.0; m];
        let spectra = frags
            .iter()
            .map(|(_, r)| {
                let mut g = SpectrumGrad::zeros(&layer.spec);
                for n in r.clone() {
                    let k = n - range.start;
                    let (mu, lam) = (layer.mean.row(n), layer.var.row(n));
                    let t = layer.targets[n];
                    for (gi, ai) in g1.iter_mut().zip(&a.alpha) {
                        *gi = t * ai / a.noise_var;
                    }
                    layer.spec.psi1_row(mu, lam, &mut row);
                    dtarget[k] = (dot(&row, &a.alpha) - t) / a.noise_var;
                    layer.spec.backward(
                        mu,
                        lam,
                        &g1,
                        &a.g2,
                        &mut g,
                        &mut dmean[k * q..(k + 1) * q],
                        &mut dvar[k * q..(k + 1) * q],
                    );
                }
                g
            })
            .collect();
        out.spectra.push(spectra);
        out.dmean.push(dmean);
        out.dvar.push(dvar);
        out.dtarget.push(dtarget);
    }
    out
}

/// Objective report and, optionally, its gradient laid out by
/// [`ParamLayout::full`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: BoundReport,
    pub gradient: Option<Vec<f64>>,
    pub layout: ParamLayout,
}

/// Evaluates the objective with `workers` map tasks run through `exec`.
pub fn evaluate<E: RangeMap>(
    exec: &E,
    workers: usize,
    model: &DrgpModel,
    data: &Dataset,
    plan: &RecurrentPlan,
    with_gradient: bool,
) -> Result<Evaluation> {
    let prep = Prepared::new(model, data, plan)?;
    let ranges = partition(prep.rows(), workers);
    let partials: Vec<PartialStats> = exec
        .map(&ranges, |r| map_partial(&prep, worker_of(&ranges, &r), r))
        .into_iter()
        .collect::<Result<_>>()?;
    let reduced = reduce_bound(&prep, &partials)?;
    let layout = ParamLayout::full(model);
    if !with_gradient {
        return Ok(Evaluation {
            report: reduced.report,
            gradient: None,
            layout,
        });
    }
    let adj: Vec<Adjoint> = reduced.layers.iter().map(adjoint).collect();
    let grads = exec.map(&ranges, |r| backward_partial(&prep, &adj, r));
    let gradient = assemble(&prep, &reduced, &adj, grads, &layout)?;
    Ok(Evaluation {
        report: reduced.report,
        gradient: Some(gradient),
        layout,
    })
}

fn slot<'v>(
    layout: &ParamLayout,
    grad: &'v mut [f64],
    layer: usize,
    group: ParamGroup,
) -> Option<&'v mut [f64]> {
    layout
        .range(GroupKey::new(layer, group))
        .map(move |r| &mut grad[r])
}

fn missing(key: &str) -> Error {
    Error::Config(String::from(key))
}

fn assemble(
    prep: &Prepared<'_>,
    reduced: &Reduced,
    adj: &[Adjoint],
    mut grads: Vec<PartialGrad>,
    layout: &ParamLayout,
) -> Result<Vec<f64>> {
    let model = prep.model;
    let plan = prep.plan;
    let mut grad = vec![0.0; layout.len()];
    grads.sort_by_key(|g| g.range.start);

    // Derivatives with respect to latent means and variance values.
    let mut d_state_mean: Vec<Vec<f64>> = model.states.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut d_state_var: Vec<Vec<f64>> = model.states.iter().map(|s| vec![0.0; s.len()]).collect();

    for (l, layer) in prep.layers.iter().enumerate() {
        let spec = &layer.spec;
        let q = spec.dim;
        let a = &adj[l];
        let c = &reduced.layers[l];
        let t = &reduced.terms[l];
        let s2 = a.noise_var;
        let m = spec.features as f64;
        let n = prep.rows() as f64;

        let leaves: Vec<SpectrumGrad> = grads
            .iter_mut()
            .flat_map(|g| core::mem::take(&mut g.spectra[l]))
            .collect();
        let sg =
            tree_reduce(leaves, SpectrumGrad::add).unwrap_or_else(|| SpectrumGrad::zeros(spec));

        // Scatter input and target derivatives in sample order.
        for g in &grads {
            for (k, row) in g.range.clone().enumerate() {
                for (col, src) in plan.columns[l].iter().enumerate() {
                    if let Source::State { layer: sl, shift } = *src {
                        d_state_mean[sl][row + shift] += g.dmean[l][k * q + col];
                        d_state_var[sl][row + shift] += g.dvar[l][k * q + col];
                    }
                }
                if l < model.config.layers {
                    d_state_mean[l][plan.target_index(row)] += g.dtarget[l][k];
                }
            }
        }

        let params = &model.layers[l];
        let proj_alpha = dot(t.proj.as_slice(), &a.alpha);
        let g2_psi2 = dot(&a.g2, t.psi2.as_slice());
        let sp = spec.sigma_power;
        let d_sp = (proj_alpha / s2 + 2.0 * g2_psi2) / sp;
        slot(layout, &mut grad, l, ParamGroup::SigmaPower)
            .ok_or_else(|| missing("sigma_power"))?[0] =
            d_sp * positive_derivative(params.hyper.sigma_power);

        let tr_inv = c.chol.inverse().trace();
        let mut d_s2 = -(n - m) / (2.0 * s2) + t.yty / (2.0 * s2 * s2)
            - proj_alpha / (2.0 * s2 * s2)
            - dot(&a.alpha, &a.alpha) / (2.0 * s2)
            - 0.5 * tr_inv;
        if l < model.config.layers {
            let lam = model.states[l].variances();
            let sum: f64 = (0..plan.rows).map(|r| lam[plan.target_index(r)]).sum();
            d_s2 += sum / (2.0 * s2 * s2);
        }
        let sn = layer.sigma_noise;
        slot(layout, &mut grad, l, ParamGroup::SigmaNoise)
            .ok_or_else(|| missing("sigma_noise"))?[0] =
            d_s2 * 2.0 * sn * positive_derivative(params.hyper.sigma_noise);

        let (dz, dbeta, dl) = spec.chain_frequencies(&sg);
        for (o, (g, raw)) in slot(layout, &mut grad, l, ParamGroup::Lengthscale)
            .ok_or_else(|| missing("lengthscale"))?
            .iter_mut()
            .zip(dl.iter().zip(&params.hyper.lengthscales))
        {
            *o = g * positive_derivative(*raw);
        }
        let freq = slot(layout, &mut grad, l, ParamGroup::Frequency)
            .ok_or_else(|| missing("frequency"))?;
        freq.copy_from_slice(&dz);
        if let (Some(db), Some(beta), Some(raw)) = (dbeta, &spec.beta, &params.basis.freq_var) {
            // Spectral KL: -½ Σ (β + α² - 1 - log β).
            for (k, z) in spec.z.iter().enumerate() {
                freq[k] -= z;
            }
            let out = slot(layout, &mut grad, l, ParamGroup::FrequencyVar)
                .ok_or_else(|| missing("frequency_var"))?;
            for k in 0..out.len() {
                let total = db[k] - 0.5 + 0.5 / beta[k];
                out[k] = total * positive_derivative(raw.as_slice()[k]);
            }
        }
        slot(layout, &mut grad, l, ParamGroup::Pseudo)
            .ok_or_else(|| missing("pseudo"))?
            .copy_from_slice(&sg.pseudo);
        slot(layout, &mut grad, l, ParamGroup::Phase)
            .ok_or_else(|| missing("phase"))?
            .copy_from_slice(&sg.phase);
    }

    let h0 = plan.initial_states();
    for (l, state) in model.states.iter().enumerate() {
        let s2 = {
            let s = model.layers[l].hyper.sigma_noise();
            s * s
        };
        let lam = state.variances();
        for i in 0..state.len() {
            if i < h0 {
                d_state_mean[l][i] -= state.mean[i];
                d_state_var[l][i] -= 0.5 * (1.0 - 1.0 / lam[i]);
            } else {
                d_state_var[l][i] += 0.5 / lam[i] - 0.5 / s2;
            }
        }
        slot(layout, &mut grad, l, ParamGroup::StateMean)
            .ok_or_else(|| missing("state_mean"))?
            .copy_from_slice(&d_state_mean[l]);
        let out =
            slot(layout, &mut grad, l, ParamGroup::StateVar).ok_or_else(|| missing("state_var"))?;
        for i in 0..out.len() {
            out[i] = d_state_var[l][i] * positive_derivative(state.var[i]);
        }
    }
    Ok(grad)
}

/// Serial gradient of the recurrent objective, laid out by [`ParamLayout::full`].
pub fn revarb_gradient(model: &DrgpModel, data: &Dataset) -> Result<Vec<f64>> {
    let plan = RecurrentPlan::new(model.config, data.len())?;
    let eval = evaluate(&Serial, 1, model, data, &plan, true)?;
    Ok(eval.gradient.expect("gradient requested"))
}
