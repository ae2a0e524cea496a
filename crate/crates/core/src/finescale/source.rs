use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type Eval = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Right-hand side `f(x, t)`.
///
/// `k` and `m` record the spatial and temporal regularity the source is known
/// to have (piecewise `H^k` in space, `m` time derivatives vanishing at
/// `t = 0`). They are informational and never checked.
#[derive(Clone)]
pub struct SourceTerm {
    id: String,
    eval: Arc<Eval>,
    pub k: Option<u32>,
    pub m: Option<u32>,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTerm").field("id", &self.id).finish()
    }
}

impl SourceTerm {
    pub fn new(id: impl Into<String>, eval: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            id: id.into(),
            eval: Arc::new(eval),
            k: None,
            m: None,
        }
    }

    /// `20π² ∏ sin(π x_a) · sin⁵ t`.
    pub fn example1() -> Self {
        let mut s = Self::new("ex1", |x, t| {
            20.0 * PI * PI * x.iter().map(|&xa| (PI * xa).sin()).product::<f64>() * t.sin().powi(5)
        });
        s.m = Some(4);
        s
    }

    /// `sin(π x₁) sin⁵ t` for `x₁ ≥ 1/2` and zero otherwise (remaining axes,
    /// if any, contribute a `sin(π x_a)` factor).
    pub fn example3() -> Self {
        let mut s = Self::new("ex3", |x, t| {
            if x[0] < 0.5 {
                0.0
            } else {
                x.iter().map(|&xa| (PI * xa).sin()).product::<f64>() * t.sin().powi(5)
            }
        });
        s.k = Some(0);
        s.m = Some(4);
        s
    }

    pub fn zero() -> Self {
        Self::new("zero", |_, _| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_, _| c)
    }

    /// Looks up a named source: `ex1`, `ex3`, `zero` or `one`.
    pub fn by_id(id: &str) -> Result<Self> {
        match id.trim() {
            "ex1" => Ok(Self::example1()),
            "ex3" => Ok(Self::example3()),
            "zero" => Ok(Self::zero()),
            "one" => Ok(Self::constant(1.0)),
            other => Err(Error::Config(format!("unknown source `{other}` (expected ex1|ex3|zero|one)"))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    /// True if `f(·, 0)` vanishes at the given sample points.
    pub fn vanishes_at_start(&self, samples: &[[f64; 2]], dim: usize) -> bool {
        samples.iter().all(|x| self.eval(&x[..dim], 0.0) == 0.0)
    }
}
