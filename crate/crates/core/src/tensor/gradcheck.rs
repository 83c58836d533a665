//! Finite-difference verification of recorded gradients.
//!
//! A function under test receives a [`Binder`] and asks it for every tensor
//! it reads (`bind(name, tensor)`). In tracking mode the binder hands out
//! differentiable leaves; in frozen mode it hands out constants, optionally
//! substituting a perturbed copy for one named tensor. That lets the same
//! closure produce both the analytic gradient and its central-difference
//! estimate.
//!
//! The numeric side contracts the output with a fixed random probe and uses
//! a fourth-order central stencil at `±h, ±2h`.
//!
//! ReLU and max pooling are only piecewise smooth. While the finite-difference
//! pass runs, those ops feed the branch they take into a per-thread trace. A
//! stencil that changes the trace straddles a kink; the element is retried
//! with the next smaller step and counted as skipped when every step crosses.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Element, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference steps, tried in order. The larger step keeps the
/// round-off of weakly coupled elements small; the smaller one is the
/// fallback when the larger stencil crosses a kink.
pub const FD_STEPS: [f64; 2] = [1e-3, 1e-4];
/// Floor for the relative-error denominator.
pub const REL_GUARD: f64 = 1e-8;
const PROBE_SEED: u64 = 0x5eed_9a7d;

thread_local! {
    static BRANCHES: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

/// Records the branch pattern of a piecewise op while a trace is active.
pub(crate) fn trace_branches(record: impl FnOnce(&mut DefaultHasher)) {
    BRANCHES.with(|b| {
        if let Some(h) = b.borrow_mut().as_mut() {
            record(h);
        }
    });
}

/// Runs `f` and returns its result with a digest of the branches it took.
fn traced<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = BRANCHES.with(|b| b.borrow_mut().replace(DefaultHasher::new()));
    let out = f();
    let digest = BRANCHES
        .with(|b| std::mem::replace(&mut *b.borrow_mut(), previous))
        .expect("trace was installed")
        .finish();
    (out, digest)
}

struct BinderState<T: Element> {
    track: bool,
    overrides: HashMap<String, Tensor<T>>,
    bound: Vec<(String, Var<T>)>,
    index: HashMap<String, usize>,
}

/// Hands out [`Var`]s for named tensors; see the module docs.
pub struct Binder<T: Element> {
    state: RefCell<BinderState<T>>,
}

impl<T: Element> Binder<T> {
    fn with_mode(track: bool, overrides: HashMap<String, Tensor<T>>) -> Self {
        Self {
            state: RefCell::new(BinderState {
                track,
                overrides,
                bound: Vec::new(),
                index: HashMap::new(),
            }),
        }
    }

    /// Every bound tensor becomes a constant.
    pub fn frozen() -> Self {
        Self::with_mode(false, HashMap::new())
    }

    /// Every bound tensor becomes a differentiable leaf.
    pub fn tracking() -> Self {
        Self::with_mode(true, HashMap::new())
    }

    /// Frozen, but `name` resolves to `replacement` instead of the tensor the
    /// caller supplies.
    pub fn with_override(name: &str, replacement: Tensor<T>) -> Self {
        Self::with_mode(false, HashMap::from([(name.to_owned(), replacement)]))
    }

    /// Binding the same name twice returns the same variable, so shared
    /// weights accumulate a single gradient.
    pub fn bind(&self, name: &str, value: &Tensor<T>) -> Var<T> {
        let mut st = self.state.borrow_mut();
        if let Some(&i) = st.index.get(name) {
            return st.bound[i].1.clone();
        }
        let value = st.overrides.get(name).unwrap_or(value).clone();
        let var = if st.track {
            Var::leaf(value)
        } else {
            Var::constant(value)
        };
        let i = st.bound.len();
        st.bound.push((name.to_owned(), var.clone()));
        st.index.insert(name.to_owned(), i);
        var
    }

    /// Bound variables in first-bind order.
    pub fn bound(&self) -> Vec<(String, Var<T>)> {
        self.state.borrow().bound.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub elements: usize,
    /// Elements whose stencil straddles a kink; excluded from the error.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub skipped: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "  {:<32} n={:<5} skipped={:<3} max_rel_err={:.3e}",
                e.name, e.elements, e.skipped, e.max_rel_error
            )?;
        }
        write!(
            f,
            "  max_rel_err={:.3e} skipped={} tolerance={:.1e} {}",
            self.max_rel_error,
            self.skipped,
            self.tolerance,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Elementwise `|a - n| / max(|a|, |n|, REL_GUARD)`, maximized.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_GUARD))
        .fold(0.0, f64::max)
}

fn probe_for(shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Gradient of `<f(params), probe>` for every tensor `f` binds.
pub fn analytic_gradients<F>(f: &F) -> Result<Vec<(String, Tensor<f64>)>>
where
    F: Fn(&Binder<f64>) -> Result<Var<f64>>,
{
    let binder = Binder::tracking();
    let out = f(&binder)?;
    let probe = probe_for(out.shape());
    let leaves = binder.bound();
    if !out.requires_grad() {
        return Ok(leaves
            .into_iter()
            .map(|(name, v)| (name, Tensor::zeros(v.shape())))
            .collect());
    }
    let grads = out.backward(&probe)?;
    leaves
        .into_iter()
        .map(|(name, v)| {
            // a bound tensor the output never reads has zero gradient
            let g = match grads.get(&v) {
                Ok(g) => g.clone(),
                Err(Error::UnrecordedNode) => Tensor::zeros(v.shape()),
                Err(e) => return Err(e),
            };
            Ok((name, g))
        })
        .collect()
}

/// Central-difference estimate of one bound tensor's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericGradient {
    pub name: String,
    pub grad: Tensor<f64>,
    /// Per element: the `±h` stencil changed a ReLU or max-pool branch.
    pub kink: Vec<bool>,
}

/// Central-difference estimate of the same gradients.
pub fn numeric_gradients<F>(f: &F) -> Result<Vec<NumericGradient>>
where
    F: Fn(&Binder<f64>) -> Result<Var<f64>>,
{
    let discovery = Binder::frozen();
    let (base, base_branches) = traced(|| f(&discovery));
    let probe = probe_for(base?.shape());
    let output = |binder: Binder<f64>| -> Result<(Tensor<f64>, u64)> {
        let (out, branches) = traced(|| f(&binder));
        let y = out?.into_value();
        if y.is_finite() {
            Ok((y, branches))
        } else {
            Err(Error::NonFinite { op: "grad_check" })
        }
    };
    // fourth-order central stencil; differencing the outputs before the
    // contraction keeps the round-off of the probe sum out of the quotient
    let stencil = |output: &dyn Fn(Binder<f64>) -> Result<(Tensor<f64>, u64)>,
                   name: &str,
                   value: &Tensor<f64>,
                   i: usize,
                   h: f64|
     -> Result<Option<f64>> {
        let mut outs = Vec::with_capacity(4);
        for k in [2.0, 1.0, -1.0, -2.0] {
            let mut t = value.clone();
            t.data_mut()[i] += k * h;
            let x = t.data()[i];
            let (y, branches) = output(Binder::with_override(name, t))?;
            if branches != base_branches {
                return Ok(None);
            }
            outs.push((x, y));
        }
        let diff = |a: usize, b: usize| -> f64 {
            let (ya, yb) = (&outs[a].1, &outs[b].1);
            ya.data()
                .iter()
                .zip(yb.data())
                .zip(probe.data())
                .map(|((p, m), w)| (p - m) * w)
                .sum::<f64>()
                / (outs[a].0 - outs[b].0)
        };
        Ok(Some((4.0 * diff(1, 2) - diff(0, 3)) / 3.0))
    };
    discovery
        .bound()
        .into_iter()
        .map(|(name, var)| {
            let value = var.value();
            let mut grad = Vec::with_capacity(value.len());
            let mut kink = Vec::with_capacity(value.len());
            for i in 0..value.len() {
                let mut estimate = None;
                for h in FD_STEPS {
                    if let Some(g) = stencil(&output, &name, value, i, h)? {
                        estimate = Some(g);
                        break;
                    }
                }
                grad.push(estimate.unwrap_or(0.0));
                kink.push(estimate.is_none());
            }
            Ok(NumericGradient {
                grad: Tensor::new(value.shape().to_vec(), grad)?,
                name,
                kink,
            })
        })
        .collect()
}

/// Compares two gradient sets tensor by tensor, leaving out kink elements.
pub fn compare(
    analytic: &[(String, Tensor<f64>)],
    numeric: &[NumericGradient],
    tolerance: f64,
) -> Result<GradReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::shape(
            "grad_check",
            format!(
                "{} analytic vs {} numeric gradient tensors",
                analytic.len(),
                numeric.len()
            ),
        ));
    }
    let mut entries = Vec::with_capacity(analytic.len());
    for ((name, a), n) in analytic.iter().zip(numeric) {
        if *name != n.name || a.shape() != n.grad.shape() {
            return Err(Error::shape(
                "grad_check",
                format!("gradient sets disagree at {name:?} / {:?}", n.name),
            ));
        }
        let (kept_a, kept_n): (Vec<f64>, Vec<f64>) = a
            .data()
            .iter()
            .zip(n.grad.data())
            .zip(&n.kink)
            .filter(|(_, &k)| !k)
            .map(|((&x, &y), _)| (x, y))
            .unzip();
        entries.push(GradEntry {
            name: name.clone(),
            elements: a.len(),
            skipped: a.len() - kept_a.len(),
            max_rel_error: max_relative_error(&kept_a, &kept_n),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        max_rel_error,
        skipped: entries.iter().map(|e| e.skipped).sum(),
        entries,
        tolerance,
        pass: max_rel_error <= tolerance,
    })
}

/// Checks the recorded gradient of `f` against central differences in
/// reference (64-bit) precision.
pub fn grad_check<F>(f: F, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&Binder<f64>) -> Result<Var<f64>>,
{
    let analytic = analytic_gradients(&f)?;
    let numeric = numeric_gradients(&f)?;
    compare(&analytic, &numeric, tolerance)
}
