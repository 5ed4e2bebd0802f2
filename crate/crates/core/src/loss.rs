//! Output, intermediate and combined training losses.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{LampError, Result};
use crate::model::{Probe, Stage};
use crate::real::Real;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Which probes the intermediate loss sums over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IntermediateStages {
    /// Every probe except the final `T.2` output (`2T - 1` terms).
    #[default]
    AllProbes,
    /// Only the Label-to-Label outputs of steps `1..T-1` (`T - 1` terms).
    StepOutputs,
}

impl IntermediateStages {
    pub fn as_str(self) -> &'static str {
        match self {
            IntermediateStages::AllProbes => "all_probes",
            IntermediateStages::StepOutputs => "step_outputs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all_probes" => Some(IntermediateStages::AllProbes),
            "step_outputs" => Some(IntermediateStages::StepOutputs),
            _ => None,
        }
    }

    /// The stages included for a `steps`-step model, in forward order.
    pub fn stages(self, steps: usize) -> Vec<Stage> {
        let mut all = Stage::all(steps);
        match self {
            IntermediateStages::AllProbes => {
                all.pop();
                all
            }
            IntermediateStages::StepOutputs => all.into_iter().filter(|s| s.part == 2 && s.step < steps).collect(),
        }
    }
}

/// Mean binary cross-entropy over every element of `probs`.
pub fn bce_out<T: Real>(g: &mut Graph<T>, probs: Var, targets: &[T]) -> Result<Var> {
    g.bce(probs, targets, BCE_EPS)
}

/// Sum of the per-probe BCE over the included stages, or `None` when the
/// stage set is empty.
pub fn intermediate_loss<T: Real>(
    g: &mut Graph<T>,
    probes: &[Probe],
    targets: &[T],
    steps: usize,
    stages: IntermediateStages,
) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for stage in stages.stages(steps) {
        let probe = probes
            .iter()
            .find(|p| p.stage == stage)
            .ok_or_else(|| LampError::Contract(format!("probe {} missing from forward output", stage)))?;
        let l = bce_out(g, probe.probs, targets)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(total)
}

/// `L_out + λ · L_int`. With `λ = 0` (or no intermediate stage) this is the
/// output loss node itself.
pub fn combined_loss<T: Real>(
    g: &mut Graph<T>,
    final_probs: Var,
    probes: &[Probe],
    targets: &[T],
    lambda: f64,
    steps: usize,
    stages: IntermediateStages,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(LampError::param("lambda", format!("{} is negative", lambda)));
    }
    let out = bce_out(g, final_probs, targets)?;
    if lambda == 0.0 {
        return Ok(out);
    }
    match intermediate_loss(g, probes, targets, steps, stages)? {
        Some(int) => {
            let weighted = g.scale(int, lambda)?;
            g.add(out, weighted)
        }
        None => Ok(out),
    }
}
