//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Func, Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to roundoff are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat coordinate with the largest error (parameter name included for
    /// parameter checks).
    pub worst: String,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::contract(format!(
            "finite-difference step must lie in (0, 1e-2], got {eps}"
        )));
    }
    Ok(())
}

/// Compares the tape gradient of a scalar program `f(θ)` with central
/// differences `(f(θ+εeᵢ) − f(θ−εeᵢ)) / 2ε` at every coordinate.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::standalone();
        let x = g.constant(t.clone());
        let y = f(&mut g, x)?;
        scalar(&g, y)
    };

    let mut g = Graph::standalone();
    let x = g.leaf(theta.clone());
    let y = f(&mut g, x)?;
    let base = scalar(&g, y)?;
    if eval(theta)?.to_bits() != base.to_bits() {
        return Err(Error::contract("program is not deterministic"));
    }
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; theta.len()]);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        passed: true,
    };
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        record(&mut report, relative_error(analytic[i], numeric), || i.to_string());
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

/// Gradient check of a scalar program over every coordinate of every parameter
/// (or every `stride`-th coordinate, to bound runtime on larger stores).
pub fn grad_check_params<F>(
    params: &ParamStore,
    f: F,
    eps: f64,
    tol: f64,
    stride: usize,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<Var>,
{
    check_eps(eps)?;
    let stride = stride.max(1);
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference(p);
        let y = f(&mut g)?;
        scalar(&g, y)
    };

    let mut g = Graph::new(params);
    let y = f(&mut g)?;
    let base = scalar(&g, y)?;
    if eval(params)?.to_bits() != base.to_bits() {
        return Err(Error::contract("program is not deterministic"));
    }
    g.backward(y)?;
    let grads = g.take_param_grads();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        passed: true,
    };
    let mut probe = params.clone();
    let mut flat = 0usize;
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            flat += 1;
            if (flat - 1) % stride != 0 {
                continue;
            }
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.as_ref().map_or(0.0, |gs| gs.get(id)[i]);
            record(&mut report, relative_error(analytic, numeric), || {
                format!("{}[{i}]", params.name(id))
            });
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

fn record(report: &mut GradCheckReport, err: f64, name: impl FnOnce() -> String) {
    report.checked += 1;
    if report.worst.is_empty() || err > report.max_rel_error {
        report.max_rel_error = err;
        report.worst = name();
    }
}

fn scalar(g: &Graph<'_>, y: Var) -> Result<f64> {
    let t = g.value(y);
    if t.len() != 1 {
        return Err(Error::contract("gradient check requires a scalar program"));
    }
    Ok(t.item())
}

type Program = Box<dyn for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>>;

/// Contracts `y` against fixed random weights so that every output
/// coordinate contributes to the checked scalar.
fn contract(g: &mut Graph<'_>, y: Var, weights: &Tensor) -> Result<Var> {
    if g.value(y).len() == 1 {
        return Ok(y);
    }
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Finite-difference checks of every differentiable primitive on random
/// inputs, one report per primitive (and per operand for binary ops).
pub fn check_primitives(seed: u64, eps: f64, tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
    };
    let (a23, b34, m34, v4, v3) = (
        rand(&[2, 3], -1.5, 1.5),
        rand(&[3, 4], -1.5, 1.5),
        rand(&[3, 4], -1.5, 1.5),
        rand(&[4], -1.5, 1.5),
        rand(&[3], -1.5, 1.5),
    );
    let (w24, w3x4, w4, w3, w2, w5, w6) = (
        rand(&[2, 4], -1.0, 1.0),
        rand(&[3, 4], -1.0, 1.0),
        rand(&[4], -1.0, 1.0),
        rand(&[3], -1.0, 1.0),
        rand(&[2], -1.0, 1.0),
        rand(&[5], -1.0, 1.0),
        rand(&[6], -1.0, 1.0),
    );
    let (w33, w6x4, w23) = (rand(&[3, 3], -1.0, 1.0), rand(&[6, 4], -1.0, 1.0), rand(&[2, 3], -1.0, 1.0));
    let table = rand(&[5, 3], -1.5, 1.5);
    let gate = rand(&[4], 0.05, 0.95);
    let positive = rand(&[4], 0.3, 2.0);
    // Relu and max are only checked away from their kinks.
    let away: Tensor = {
        let t = rand(&[4], 0.2, 1.5);
        let signs = [1.0, -1.0, 1.0, -1.0];
        Tensor::vector(t.data().iter().zip(signs).map(|(v, s)| v * s).collect())
    };
    let spread = Tensor::matrix(3, 4, vec![0.0, 1.0, 2.0, 0.3, 1.0, 0.2, 0.1, 2.0, 2.0, 0.5, 1.1, 1.0])?;

    macro_rules! prog {
        ($w:expr, |$g:ident, $x:ident| $body:expr) => {{
            let w = $w.clone();
            Box::new(move |$g: &mut Graph<'_>, $x: Var| -> Result<Var> {
                let y = $body;
                contract($g, y, &w)
            }) as Program
        }};
    }
    let c = |t: &Tensor| t.clone();

    let cases: Vec<(&'static str, Tensor, Program)> = vec![
        ("matmul.lhs", c(&a23), { let b = c(&b34); prog!(w24, |g, x| { let b = g.constant(b.clone()); g.matmul(x, b)? }) }),
        ("matmul.rhs", c(&b34), { let a = c(&a23); prog!(w24, |g, x| { let a = g.constant(a.clone()); g.matmul(a, x)? }) }),
        ("matvec.matrix", c(&m34), { let v = c(&v4); prog!(w3, |g, x| { let v = g.constant(v.clone()); g.matvec(x, v)? }) }),
        ("matvec.vector", c(&v4), { let m = c(&m34); prog!(w3, |g, x| { let m = g.constant(m.clone()); g.matvec(m, x)? }) }),
        ("mat_t_vec.matrix", c(&m34), { let a = c(&v3); prog!(w4, |g, x| { let a = g.constant(a.clone()); g.mat_t_vec(x, a)? }) }),
        ("mat_t_vec.vector", c(&v3), { let m = c(&m34); prog!(w4, |g, x| { let m = g.constant(m.clone()); g.mat_t_vec(m, x)? }) }),
        ("matmul_nt.lhs", c(&a23), { let w = Tensor::matrix(4, 3, b34.data().to_vec())?; prog!(w24, |g, x| { let w = g.constant(w.clone()); g.matmul_nt(x, w)? }) }),
        ("matmul_nt.rhs", c(&m34), { let a = rand(&[2, 4], -1.0, 1.0); prog!(w23, |g, x| { let a = g.constant(a.clone()); g.matmul_nt(a, x)? }) }),
        ("add", c(&v4), { let b = c(&away); prog!(w4, |g, x| { let b = g.constant(b.clone()); g.add(x, b)? }) }),
        ("sub", c(&v4), { let b = c(&away); prog!(w4, |g, x| { let b = g.constant(b.clone()); g.sub(b, x)? }) }),
        ("mul", c(&v4), { let b = c(&away); prog!(w4, |g, x| { let b = g.constant(b.clone()); g.mul(x, b)? }) }),
        ("add_row.matrix", c(&m34), { let b = c(&v4); prog!(w3x4, |g, x| { let b = g.constant(b.clone()); g.add_row(x, b)? }) }),
        ("add_row.row", c(&v4), { let m = c(&m34); prog!(w3x4, |g, x| { let m = g.constant(m.clone()); g.add_row(m, x)? }) }),
        ("affine", c(&v4), prog!(w4, |g, x| g.affine(x, -1.7, 0.4)?)),
        ("scale", c(&v4), prog!(w4, |g, x| g.scale(x, 2.5)?)),
        ("scale_by.tensor", c(&v4), { let s = Tensor::scalar(-0.7); prog!(w4, |g, x| { let s = g.constant(s.clone()); g.scale_by(x, s)? }) }),
        ("scale_by.scalar", Tensor::scalar(0.9), { let v = c(&v4); prog!(w4, |g, x| { let v = g.constant(v.clone()); g.scale_by(v, x)? }) }),
        ("sigmoid", c(&v4), prog!(w4, |g, x| g.sigmoid(x)?)),
        ("tanh", c(&v4), prog!(w4, |g, x| g.tanh(x)?)),
        ("relu", c(&away), prog!(w4, |g, x| g.relu(x)?)),
        ("exp", c(&v4), prog!(w4, |g, x| g.pointwise(Func::Exp, x)?)),
        ("log", c(&positive), prog!(w4, |g, x| g.pointwise(Func::Log, x)?)),
        ("log_clamped", c(&positive), prog!(w4, |g, x| g.log_clamped(x, 1e-12)?)),
        ("lerp.gate", c(&gate), { let (a, b) = (c(&v4), c(&away)); prog!(w4, |g, x| { let a = g.constant(a.clone()); let b = g.constant(b.clone()); g.lerp(x, a, b)? }) }),
        ("lerp.first", c(&v4), { let (k, b) = (c(&gate), c(&away)); prog!(w4, |g, x| { let k = g.constant(k.clone()); let b = g.constant(b.clone()); g.lerp(k, x, b)? }) }),
        ("lerp.second", c(&v4), { let (k, a) = (c(&gate), c(&away)); prog!(w4, |g, x| { let k = g.constant(k.clone()); let a = g.constant(a.clone()); g.lerp(k, a, x)? }) }),
        ("softmax.vector", c(&v4), prog!(w4, |g, x| g.softmax(x)?)),
        ("softmax.rows", c(&m34), prog!(w3x4, |g, x| g.softmax(x)?)),
        ("masked_softmax", c(&v4), prog!(w4, |g, x| g.masked_softmax(x, &[true, false, true, true])?)),
        ("sum", c(&m34), prog!(w4, |g, x| g.sum(x)?)),
        ("pick", c(&v4), prog!(w4, |g, x| { let s = g.softmax(x)?; g.pick(s, 2)? })),
        ("max_rows", c(&spread), prog!(w4, |g, x| g.max_rows(x)?)),
        ("concat.vectors", c(&v4), { let b = c(&w2); prog!(w6, |g, x| { let b = g.constant(b.clone()); g.concat(&[x, b], 0)? }) }),
        ("concat.rows", c(&m34), { let b = c(&m34); prog!(w6x4, |g, x| { let b = g.constant(b.clone()); g.concat(&[b, x], 0)? }) }),
        ("concat.columns", c(&a23), { let b = rand(&[2, 1], -1.0, 1.0); prog!(w24, |g, x| { let b = g.constant(b.clone()); g.concat(&[x, b], 1)? }) }),
        ("slice", c(&v4), prog!(w2, |g, x| g.slice(x, 1, 2)?)),
        ("row", c(&m34), prog!(w4, |g, x| g.row(x, 1)?)),
        ("stack_rows", c(&v3), prog!(w33, |g, x| { let s = g.scale(x, -2.0)?; g.stack_rows(&[x, s, x])? })),
        ("gather_rows", c(&table), prog!(gather_weights(), |g, x| g.gather_rows(x, &[4, 0, 4, 2])?)),
        ("scatter_add", c(&v4), prog!(w5, |g, x| g.scatter_add(x, &[3, 0, 3, 1], 5)?)),
        ("pad", c(&v4), prog!(w6, |g, x| g.pad(x, 6)?)),
    ];
    cases
        .into_iter()
        .map(|(name, theta, f)| Ok((name, grad_check(|g, x| f(g, x), &theta, eps, tol)?)))
        .collect()
}

fn gather_weights() -> Tensor {
    let data = (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    Tensor::matrix(4, 3, data).expect("4x3")
}
