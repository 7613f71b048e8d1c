//! Exact scalar-loop GRU forward pass in double precision.
//!
//! This is the numeric reference the distributed simulations are checked
//! against. Accumulation order is fixed (row-major, left-to-right) so results
//! are reproducible bit-for-bit for a given arithmetic width.
//!
//! The step computes, per element:
//!
//! ```text
//! z = sigmoid(Wz x + Uz h + bz)
//! r = sigmoid(Wr x + Ur h + br)
//! c = tanh(Wh x + Uh (r * h) + bh)
//! h' = (1 - z) * h + z * c
//! ```

use crate::lut::ActivationLut;
use crate::rng::SimRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GruError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value in {gate} gate")]
    NonFinite { gate: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Model dimensions shared by parameters, plans and graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GruDims {
    pub input: usize,
    pub hidden: usize,
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GruError> {
        if data.len() != rows * cols {
            return Err(GruError::DimMismatch(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// All weight matrices and biases of one GRU cell.
///
/// `wz/wr/wh` are `[hidden x input]`, `uz/ur/uh` are `[hidden x hidden]`,
/// biases are `[hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wz: Matrix,
    pub wr: Matrix,
    pub wh: Matrix,
    pub uz: Matrix,
    pub ur: Matrix,
    pub uh: Matrix,
    pub bz: Vec<f64>,
    pub br: Vec<f64>,
    pub bh: Vec<f64>,
}

impl GruParams {
    /// All-zero parameters for the given dimensions.
    pub fn zeros(dims: GruDims) -> Self {
        Self {
            wz: Matrix::zeros(dims.hidden, dims.input),
            wr: Matrix::zeros(dims.hidden, dims.input),
            wh: Matrix::zeros(dims.hidden, dims.input),
            uz: Matrix::zeros(dims.hidden, dims.hidden),
            ur: Matrix::zeros(dims.hidden, dims.hidden),
            uh: Matrix::zeros(dims.hidden, dims.hidden),
            bz: vec![0.0; dims.hidden],
            br: vec![0.0; dims.hidden],
            bh: vec![0.0; dims.hidden],
        }
    }

    pub fn dims(&self) -> GruDims {
        GruDims {
            input: self.wz.cols(),
            hidden: self.wz.rows(),
        }
    }

    /// Check the structural invariants: consistent dimensions, finite entries.
    pub fn validate(&self) -> Result<(), GruError> {
        let d = self.dims();
        if d.input == 0 || d.hidden == 0 {
            return Err(GruError::InvalidParam("dimensions must be >= 1".into()));
        }
        let w_shape = (d.hidden, d.input);
        let u_shape = (d.hidden, d.hidden);
        for (name, m, shape) in [
            ("Wz", &self.wz, w_shape),
            ("Wr", &self.wr, w_shape),
            ("Wh", &self.wh, w_shape),
            ("Uz", &self.uz, u_shape),
            ("Ur", &self.ur, u_shape),
            ("Uh", &self.uh, u_shape),
        ] {
            if (m.rows(), m.cols()) != shape {
                return Err(GruError::DimMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
            if !m.data().iter().all(|v| v.is_finite()) {
                return Err(GruError::InvalidParam(format!("{name} has non-finite entries")));
            }
        }
        for (name, b) in [("bz", &self.bz), ("br", &self.br), ("bh", &self.bh)] {
            if b.len() != d.hidden {
                return Err(GruError::DimMismatch(format!(
                    "{name} has length {}, expected {}",
                    b.len(),
                    d.hidden
                )));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(GruError::InvalidParam(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// The recurrent hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: Vec<f64>,
}

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden] }
    }
}

/// How gate activations are evaluated in [`gru_step`].
#[derive(Debug, Clone, Copy)]
pub enum ActivationMode<'a> {
    /// Library sigmoid/tanh in double precision.
    Exact,
    /// Linear-interpolation lookup tables, one per function.
    Lut {
        sigmoid: &'a ActivationLut,
        tanh: &'a ActivationLut,
    },
}

impl ActivationMode<'_> {
    fn sigmoid(&self, x: f64) -> f64 {
        match self {
            ActivationMode::Exact => sigmoid(x),
            ActivationMode::Lut { sigmoid, .. } => sigmoid.eval(x),
        }
    }

    fn tanh(&self, x: f64) -> f64 {
        match self {
            ActivationMode::Exact => x.tanh(),
            ActivationMode::Lut { tanh, .. } => tanh.eval(x),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    // Row-major, left-to-right accumulation; this order is part of the
    // reference contract.
    let mut out = vec![0.0; m.rows()];
    for (r, slot) in out.iter_mut().enumerate() {
        let row = m.row(r);
        let mut acc = 0.0;
        for c in 0..m.cols() {
            acc += row[c] * v[c];
        }
        *slot = acc;
    }
    out
}

fn check_finite(values: &[f64], gate: &'static str) -> Result<(), GruError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GruError::NonFinite { gate })
    }
}

/// Gate values alongside the next state, for diagnostics and invariant
/// checks.
#[derive(Debug, Clone)]
pub struct StepDetail {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    pub next: GruState,
}

/// One GRU step `h_prev -> h_t` for input vector `x`.
pub fn gru_step(
    params: &GruParams,
    h_prev: &GruState,
    x: &[f64],
    mode: ActivationMode,
) -> Result<GruState, GruError> {
    gru_step_detailed(params, h_prev, x, mode).map(|d| d.next)
}

/// [`gru_step`] that also returns the gate vectors.
pub fn gru_step_detailed(
    params: &GruParams,
    h_prev: &GruState,
    x: &[f64],
    mode: ActivationMode,
) -> Result<StepDetail, GruError> {
    let d = params.dims();
    if x.len() != d.input {
        return Err(GruError::DimMismatch(format!(
            "input vector has length {}, expected {}",
            x.len(),
            d.input
        )));
    }
    if h_prev.h.len() != d.hidden {
        return Err(GruError::DimMismatch(format!(
            "hidden state has length {}, expected {}",
            h_prev.h.len(),
            d.hidden
        )));
    }

    let h = &h_prev.h;

    let wzx = mat_vec(&params.wz, x);
    let uzh = mat_vec(&params.uz, h);
    let mut z = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        let pre = wzx[i] + uzh[i] + params.bz[i];
        if !pre.is_finite() {
            return Err(GruError::NonFinite { gate: "update" });
        }
        z[i] = mode.sigmoid(pre);
    }
    check_finite(&z, "update")?;

    let wrx = mat_vec(&params.wr, x);
    let urh = mat_vec(&params.ur, h);
    let mut r = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        let pre = wrx[i] + urh[i] + params.br[i];
        if !pre.is_finite() {
            return Err(GruError::NonFinite { gate: "reset" });
        }
        r[i] = mode.sigmoid(pre);
    }
    check_finite(&r, "reset")?;

    let rh: Vec<f64> = r.iter().zip(h.iter()).map(|(&ri, &hi)| ri * hi).collect();
    let whx = mat_vec(&params.wh, x);
    let uhrh = mat_vec(&params.uh, &rh);
    let mut cand = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        let pre = whx[i] + uhrh[i] + params.bh[i];
        if !pre.is_finite() {
            return Err(GruError::NonFinite { gate: "candidate" });
        }
        cand[i] = mode.tanh(pre);
    }
    check_finite(&cand, "candidate")?;

    let mut h_next = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        h_next[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
    }
    check_finite(&h_next, "output")?;

    Ok(StepDetail {
        update: z,
        reset: r,
        candidate: cand,
        next: GruState { h: h_next },
    })
}

/// Seeded parameter generator: every weight and bias uniform in `[-0.5, 0.5]`.
///
/// Generation order is fixed (Wz, Wr, Wh, Uz, Ur, Uh row-major, then bz, br,
/// bh) so a seed pins the instance forever.
pub fn generate_params(seed: u64, dims: GruDims) -> GruParams {
    let mut rng = SimRng::new(seed);
    let mut mat = |rows: usize, cols: usize| {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-0.5, 0.5)).collect();
        Matrix::from_vec(rows, cols, data).expect("generated shape is consistent")
    };
    let wz = mat(dims.hidden, dims.input);
    let wr = mat(dims.hidden, dims.input);
    let wh = mat(dims.hidden, dims.input);
    let uz = mat(dims.hidden, dims.hidden);
    let ur = mat(dims.hidden, dims.hidden);
    let uh = mat(dims.hidden, dims.hidden);
    let mut vec_ = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect() };
    let bz = vec_(dims.hidden);
    let br = vec_(dims.hidden);
    let bh = vec_(dims.hidden);
    GruParams {
        wz,
        wr,
        wh,
        uz,
        ur,
        uh,
        bz,
        br,
        bh,
    }
}

/// Seeded initial hidden state, uniform in `[-0.5, 0.5]`.
pub fn generate_state(seed: u64, hidden: usize) -> GruState {
    let mut rng = SimRng::new(seed);
    GruState {
        h: (0..hidden).map(|_| rng.uniform(-0.5, 0.5)).collect(),
    }
}

/// Seeded input sequence, each vector uniform in `[-0.5, 0.5]`.
pub fn generate_inputs(seed: u64, input: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = SimRng::new(seed);
    (0..count)
        .map(|_| (0..input).map(|_| rng.uniform(-0.5, 0.5)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar-loop oracle, written before the main implementation
    /// and kept deliberately free of shared helpers: flat slices, explicit
    /// index arithmetic, only `std` math.
    mod oracle {
        #[allow(clippy::too_many_arguments)]
        pub fn step(
            input: usize,
            hidden: usize,
            wz: &[f64],
            wr: &[f64],
            wh: &[f64],
            uz: &[f64],
            ur: &[f64],
            uh: &[f64],
            bz: &[f64],
            br: &[f64],
            bh: &[f64],
            h: &[f64],
            x: &[f64],
        ) -> Vec<f64> {
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut z = vec![0.0; hidden];
            let mut r = vec![0.0; hidden];
            for i in 0..hidden {
                let mut az = bz[i];
                let mut ar = br[i];
                for c in 0..input {
                    az += wz[i * input + c] * x[c];
                    ar += wr[i * input + c] * x[c];
                }
                for c in 0..hidden {
                    az += uz[i * hidden + c] * h[c];
                    ar += ur[i * hidden + c] * h[c];
                }
                z[i] = sig(az);
                r[i] = sig(ar);
            }
            let mut out = vec![0.0; hidden];
            for i in 0..hidden {
                let mut ah = bh[i];
                for c in 0..input {
                    ah += wh[i * input + c] * x[c];
                }
                for c in 0..hidden {
                    ah += uh[i * hidden + c] * (r[c] * h[c]);
                }
                out[i] = (1.0 - z[i]) * h[i] + z[i] * ah.tanh();
            }
            out
        }
    }

    fn run_oracle(p: &GruParams, h: &GruState, x: &[f64]) -> Vec<f64> {
        let d = p.dims();
        oracle::step(
            d.input,
            d.hidden,
            p.wz.data(),
            p.wr.data(),
            p.wh.data(),
            p.uz.data(),
            p.ur.data(),
            p.uh.data(),
            &p.bz,
            &p.br,
            &p.bh,
            &h.h,
            x,
        )
    }

    #[test]
    fn zero_params_halve_state() {
        let dims = GruDims { input: 3, hidden: 4 };
        let p = GruParams::zeros(dims);
        let h = GruState {
            h: vec![0.8, -0.2, 0.5, 1.0],
        };
        let x = vec![0.3, -0.1, 0.9];
        let next = gru_step(&p, &h, &x, ActivationMode::Exact).unwrap();
        for (a, b) in next.h.iter().zip(h.h.iter()) {
            assert_eq!(*a, 0.5 * *b);
        }
    }

    #[test]
    fn saturated_update_gate_zeroes_state() {
        let dims = GruDims { input: 2, hidden: 3 };
        let mut p = GruParams::zeros(dims);
        p.bz = vec![100.0; 3];
        let h = GruState {
            h: vec![0.7, -0.4, 0.2],
        };
        let x = vec![0.0, 0.0];
        let next = gru_step(&p, &h, &x, ActivationMode::Exact).unwrap();
        for v in &next.h {
            assert!(v.abs() < 1e-10, "expected ~0, got {v}");
        }
    }

    #[test]
    fn matches_independent_oracle_seed_42() {
        let dims = GruDims { input: 3, hidden: 2 };
        let p = generate_params(42, dims);
        let h = generate_state(43, dims.hidden);
        let x = &generate_inputs(44, dims.input, 1)[0];
        let ours = gru_step(&p, &h, x, ActivationMode::Exact).unwrap();
        let expect = run_oracle(&p, &h, x);
        for (a, b) in ours.h.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "got {a}, oracle {b}");
        }
    }

    #[test]
    fn matches_independent_oracle_many_seeds() {
        for seed in 0..20 {
            let dims = GruDims {
                input: 1 + (seed as usize * 7) % 9,
                hidden: 1 + (seed as usize * 5) % 6,
            };
            let p = generate_params(seed, dims);
            let mut h = generate_state(seed ^ 0xabcd, dims.hidden);
            let xs = generate_inputs(seed ^ 0x1234, dims.input, 3);
            for x in &xs {
                let next = gru_step(&p, &h, x, ActivationMode::Exact).unwrap();
                let expect = run_oracle(&p, &h, x);
                for (a, b) in next.h.iter().zip(expect.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
                h = next;
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dims = GruDims { input: 3, hidden: 2 };
        let p = generate_params(1, dims);
        let h = GruState::zeros(2);
        let err = gru_step(&p, &h, &[0.0; 4], ActivationMode::Exact).unwrap_err();
        assert!(matches!(err, GruError::DimMismatch(_)));
        let h_bad = GruState::zeros(5);
        let err = gru_step(&p, &h_bad, &[0.0; 3], ActivationMode::Exact).unwrap_err();
        assert!(matches!(err, GruError::DimMismatch(_)));
    }

    #[test]
    fn non_finite_names_the_gate() {
        let dims = GruDims { input: 1, hidden: 1 };
        let mut p = GruParams::zeros(dims);
        // 1e308 * 10 overflows inside the candidate pre-activation.
        p.wh.set(0, 0, 1e308);
        let h = GruState::zeros(1);
        let err = gru_step(&p, &h, &[10.0], ActivationMode::Exact).unwrap_err();
        match err {
            GruError::NonFinite { gate } => assert_eq!(gate, "candidate"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_inconsistent_shapes() {
        let dims = GruDims { input: 3, hidden: 2 };
        let mut p = GruParams::zeros(dims);
        p.bh = vec![0.0; 5];
        assert!(p.validate().is_err());
        let p2 = generate_params(9, dims);
        assert!(p2.validate().is_ok());
    }
}
