//! Polyhedral (cut-based) value functions: a lower approximation of a convex
//! function as the max of affine minorants over the 4-dimensional state.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValueFnError {
    #[error("cut coefficients must be finite")]
    NonFiniteCut,
    #[error("cannot evaluate an empty cut set")]
    EmptyCuts,
    #[error("bad value-function file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One affine minorant `x -> <lambda, x> + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub lambda: [f64; 4],
    pub beta: f64,
}

impl Cut {
    pub fn value_at(&self, x: &[f64; 4]) -> f64 {
        self.lambda[0] * x[0] + self.lambda[1] * x[1] + self.lambda[2] * x[2] + self.lambda[3] * x[3]
            + self.beta
    }
}

/// Max over a bundle of cuts. An empty bundle carries no lower bound and
/// refuses to evaluate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralFunction {
    cuts: Vec<Cut>,
}

impl PolyhedralFunction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_cuts(cuts: Vec<Cut>) -> Result<Self, ValueFnError> {
        let mut pf = Self::new();
        for c in cuts {
            pf.add_cut(c.lambda, c.beta)?;
        }
        Ok(pf)
    }

    /// Constant function `x -> c`.
    pub fn constant(c: f64) -> Self {
        Self { cuts: vec![Cut { lambda: [0.0; 4], beta: c }] }
    }

    pub fn add_cut(&mut self, lambda: [f64; 4], beta: f64) -> Result<(), ValueFnError> {
        if !beta.is_finite() || lambda.iter().any(|v| !v.is_finite()) {
            return Err(ValueFnError::NonFiniteCut);
        }
        self.cuts.push(Cut { lambda, beta });
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64; 4]) -> Result<f64, ValueFnError> {
        self.argmax(x).map(|(_, v)| v)
    }

    /// Index and value of the maximizing cut at `x`.
    pub fn argmax(&self, x: &[f64; 4]) -> Result<(usize, f64), ValueFnError> {
        if self.cuts.is_empty() {
            return Err(ValueFnError::EmptyCuts);
        }
        let mut best = (0usize, self.cuts[0].value_at(x));
        for (j, c) in self.cuts.iter().enumerate().skip(1) {
            let v = c.value_at(x);
            if v > best.1 {
                best = (j, v);
            }
        }
        Ok(best)
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }
}

/// Exact cut representation of the final stock penalty
/// `kappa·(max(0, b0 - b) + max(0, h0 - h))`: one cut per active combination
/// of the two positive parts.
pub fn final_cost_polyhedron(b0: f64, h0: f64, kappa: f64) -> PolyhedralFunction {
    PolyhedralFunction {
        cuts: vec![
            Cut { lambda: [0.0; 4], beta: 0.0 },
            Cut { lambda: [-kappa, 0.0, 0.0, 0.0], beta: kappa * b0 },
            Cut { lambda: [0.0, -kappa, 0.0, 0.0], beta: kappa * h0 },
            Cut { lambda: [-kappa, -kappa, 0.0, 0.0], beta: kappa * (b0 + h0) },
        ],
    }
}

const MAGIC: &[u8; 8] = b"EMSVF\x00\x00\x01";

/// Serialize per-step value functions.
///
/// Layout (all integers and floats little-endian): the 8-byte magic
/// `EMSVF\0\0\x01`, a u32 function count, then per function a u32 cut count
/// followed by its cuts as five f64 values (lambda[0..4], beta).
pub fn write_value_functions<W: Write>(
    out: &mut W,
    functions: &[PolyhedralFunction],
) -> Result<(), ValueFnError> {
    out.write_all(MAGIC)?;
    out.write_all(&(functions.len() as u32).to_le_bytes())?;
    for f in functions {
        out.write_all(&(f.cuts.len() as u32).to_le_bytes())?;
        for c in &f.cuts {
            for v in c.lambda {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(&c.beta.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_value_functions<R: Read>(input: &mut R) -> Result<Vec<PolyhedralFunction>, ValueFnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ValueFnError::BadFile("wrong magic/version".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut functions = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        input.read_exact(&mut u32buf)?;
        let ncuts = u32::from_le_bytes(u32buf) as usize;
        let mut cuts = Vec::with_capacity(ncuts);
        for _ in 0..ncuts {
            let mut vals = [0.0f64; 5];
            for v in &mut vals {
                input.read_exact(&mut f64buf)?;
                *v = f64::from_le_bytes(f64buf);
            }
            cuts.push(Cut { lambda: [vals[0], vals[1], vals[2], vals[3]], beta: vals[4] });
        }
        functions.push(PolyhedralFunction { cuts });
    }
    Ok(functions)
}
