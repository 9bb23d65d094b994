//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on perturbed elements per input; `None` checks all.
    pub max_checks_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-3,
            abs_tol: 1e-5,
            max_checks_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradcheckReport) {
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` maps the inputs (bound as trainable leaves of a fresh graph) to a
/// scalar. An element passes when `|a − n| ≤ max(abs_tol, rel_tol·max(|a|, |n|))`.
pub fn gradcheck<F>(
    inputs: &[Tensor<f64>],
    f: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&g, &vars)?;
        g.backward(loss)?;
        vars.iter()
            .map(|v| v.grad().unwrap_or_else(|| zeros_like(&v.value())))
            .collect()
    };

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&g, &vars)?;
        let v = loss.item()?;
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss during gradcheck".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradcheckReport::default();
    for (which, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let picks: Vec<usize> = match opts.max_checks_per_input {
            Some(cap) if cap < n => {
                let mut v = index::sample(&mut rng, n, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for e in picks {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + opts.step;
            let plus = eval(&work)?;
            work[which].data_mut()[e] = orig - opts.step;
            let minus = eval(&work)?;
            work[which].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[e];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = diff / scale.max(opts.abs_tol / opts.rel_tol);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if diff > opts.abs_tol.max(opts.rel_tol * scale) {
                report.failures.push(GradMismatch {
                    input: which,
                    element: e,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_parts(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Finite-difference check of every differentiable op on random inputs.
///
/// Each op output is contracted with fixed random weights so that ops whose
/// plain sum is constant (softmax, layer norm) still get a meaningful check.
pub fn check_all_ops(opts: &GradcheckOptions) -> Result<Vec<(&'static str, GradcheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0795);
    let mask = Tensor::from_parts(
        vec![3, 4],
        (0..12).map(|i| f64::from(u8::from(i % 3 != 0))).collect(),
    );
    let cases: Vec<(
        &'static str,
        Vec<Vec<usize>>,
        Box<dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>>,
    )> = vec![
        (
            "matmul",
            vec![vec![3, 4], vec![4, 5]],
            Box::new(|_, v| v[0].matmul(v[1])),
        ),
        (
            "add",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|_, v| v[0].add(v[1])),
        ),
        (
            "sub",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|_, v| v[0].sub(v[1])),
        ),
        (
            "mul",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|_, v| v[0].mul(v[1])),
        ),
        (
            "add_row",
            vec![vec![3, 4], vec![4]],
            Box::new(|_, v| v[0].add_row(v[1])),
        ),
        ("scale", vec![vec![3, 4]], Box::new(|_, v| v[0].scale(-1.7))),
        ("gelu", vec![vec![3, 4]], Box::new(|_, v| v[0].gelu())),
        ("softmax", vec![vec![3, 4]], Box::new(|_, v| v[0].softmax())),
        (
            "layer_norm",
            vec![vec![3, 4], vec![4], vec![4]],
            Box::new(|_, v| v[0].layer_norm(v[1], v[2], 1e-6)),
        ),
        (
            "reshape",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].reshape([4, 3])),
        ),
        (
            "transpose",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].transpose()),
        ),
        (
            "gather_rows",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].gather_rows(&[2, 0, 2, 1])),
        ),
        (
            "gather_elements",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].gather_elements(&[11, 0, 5, 5, 7, 2], [2, 3])),
        ),
        (
            "slice_cols",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].slice_cols(1, 2)),
        ),
        (
            "mean_rows",
            vec![vec![3, 4]],
            Box::new(|_, v| v[0].mean_rows()),
        ),
        ("sum", vec![vec![3, 4]], Box::new(|_, v| v[0].sum())),
        (
            "mse_loss",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|_, v| v[0].mse_loss(v[1])),
        ),
        (
            "concat_rows",
            vec![vec![2, 4], vec![3, 4]],
            Box::new(|g, v| g.concat_rows(&[v[0], v[1]])),
        ),
        (
            "concat_cols",
            vec![vec![3, 2], vec![3, 4]],
            Box::new(|g, v| g.concat_cols(&[v[0], v[1]])),
        ),
    ];
    let mut out = Vec::new();
    for (name, shapes, op) in cases {
        let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let probe = {
            let g = Graph::new();
            let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            op(&g, &vars)?.shape()
        };
        let weights = random_tensor(&mut rng, &probe);
        let report = gradcheck(
            &inputs,
            |g, v| {
                let w = g.constant(weights.clone());
                op(g, v)?.mul(w)?.sum()
            },
            opts,
        )?;
        out.push((name, report));
    }
    let report = gradcheck(
        &[
            random_tensor(&mut rng, &[3, 4]),
            random_tensor(&mut rng, &[3, 4]),
        ],
        |g, v| v[0].masked_mse(g.constant(Tensor::zeros([3, 4])?).add(v[1])?, &mask),
        opts,
    )?;
    out.push(("masked_mse", report));
    Ok(out)
}

fn zeros_like(t: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.numel()])
}
