//! Named parameter blocks shared by every trainable structure.
//!
//! Gradients are stored in a value of the same type as the parameters, so
//! optimizers, momentum averaging and checkpoints only need to walk both
//! trees in the same order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [f64],
}

pub trait Parameters {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn param_refs(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn param_muts(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.param_refs().iter().map(|p| p.values.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for p in self.param_muts() {
            p.values.iter_mut().for_each(|v| *v = value);
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// `self += scale * other`.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.param_refs();
        for (dst, src) in self.param_muts().into_iter().zip(src) {
            for (d, s) in dst.values.iter_mut().zip(src.values) {
                *d += scale * *s;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for p in self.param_muts() {
            p.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flat copy of every value in traversal order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.param_refs() {
            out.extend_from_slice(p.values);
        }
        out
    }

    /// Error unless both trees have identical names and shapes.
    fn check_compatible(&self, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let a = self.param_refs();
        let b = other.param_refs();
        if a.len() != b.len() {
            return Err(shape_err("parameter tree", a.len(), b.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(shape_err(
                    "parameter block",
                    (&x.name, &x.shape),
                    (&y.name, &y.shape),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Exponential moving average of parameters:
/// `target <- m * target + (1 - m) * source`.
pub fn momentum_update<P: Parameters>(target: &mut P, source: &P, m: f64) -> Result<()> {
    target.check_compatible(source)?;
    if !(0.0..=1.0).contains(&m) {
        return Err(crate::Error::InvalidConfig(format!(
            "momentum must lie in [0, 1], got {m}"
        )));
    }
    let src = source.param_refs();
    for (dst, src) in target.param_muts().into_iter().zip(src) {
        for (d, s) in dst.values.iter_mut().zip(src.values) {
            *d = m * *d + (1.0 - m) * *s;
        }
    }
    Ok(())
}
