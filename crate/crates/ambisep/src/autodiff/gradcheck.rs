//! Central finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use super::tensor::ParamRegistry;
use crate::error::Result;

/// Outcome for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub pass: bool,
    /// False when a finite-difference estimate came out non-finite.
    pub finite: bool,
}

/// Report over every trainable parameter reached by the builder.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{} max_rel_err={:.3e} at [{}] {}\n",
                e.name,
                e.max_rel_err,
                e.worst_index,
                if e.pass { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Gradient pairs where both sides are below this magnitude are treated as
/// matching: the finite-difference estimate has absolute noise around
/// eps·|loss|/step, which swamps the relative error of near-zero gradients.
const NEGLIGIBLE: f64 = 1e-7;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < NEGLIGIBLE {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compare tape gradients of a scalar loss against central differences.
///
/// `build` must construct the full forward computation (ending in a scalar
/// node) from the given registry; it is re-run twice per parameter element,
/// so keep the graph small. Frozen tensors (`requires_grad == false`) are
/// skipped entirely.
pub fn grad_check<F>(registry: &ParamRegistry, step: f64, tolerance: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamRegistry) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, registry)?;
    tape.backward(loss)?;
    let analytic = tape.param_grads();

    let eval = |reg: &ParamRegistry| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, reg)?;
        Ok(t.scalar_value(l))
    };

    let mut work = registry.clone();
    let mut entries = Vec::new();
    for (name, tensor) in registry.iter() {
        if !tensor.requires_grad() {
            continue;
        }
        let Some(grad) = analytic.get(name) else {
            // Parameter never placed on the tape by this builder.
            continue;
        };
        let mut worst = 0.0f64;
        let mut worst_index = 0;
        let mut finite = true;
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let lp = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let lm = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * step);
            if !fd.is_finite() {
                finite = false;
                worst = f64::INFINITY;
                worst_index = i;
                break;
            }
            let e = rel_err(grad.data()[i], fd);
            if e > worst {
                worst = e;
                worst_index = i;
            }
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: worst,
            worst_index,
            pass: finite && worst < tolerance,
            finite,
        });
    }
    Ok(GradCheckReport { entries, step, tolerance })
}
