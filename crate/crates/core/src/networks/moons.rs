use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use super::params::{Parameters, Trainable};
use crate::error::{ensure, Result};
use crate::memory_units::MemoryState;
use crate::numerics::{ComplexVector, Mask, Tape, Tensor, Var};
use crate::rng;

/// Fixed kernel bandwidth of the moons models.
pub const MOONS_BETA: f64 = 50.0;

pub type ComplexMatrix3 = [[Complex64; 3]; 3];

const NAMES: [&str; 3] = ["w_phi", "w_psi", "w_z"];

/// The three-moons predictor: complex key, value and output projections
/// around `n_heads` contextual memories with raw (unnormalized) features.
///
/// Each complex 3x3 matrix is stored as two real parameters, `<name>.re`
/// and `<name>.im`, for 54 trainable reals in total.
#[derive(Clone, Debug, PartialEq)]
pub struct MoonsModel {
    pub n_heads: usize,
    pub beta: f64,
    pub params: Parameters,
}

impl Trainable for MoonsModel {
    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }
}

fn check_heads(n_heads: usize) -> Result<()> {
    ensure!(
        n_heads == 1 || n_heads == 3,
        "moons models use 1 or 3 heads, got {n_heads}"
    );
    Ok(())
}

/// Moons model with entries drawn from `N(0, init_scale^2)` (real and
/// imaginary parts independently).
pub fn build_moons_model_scaled(n_heads: usize, seed: u64, init_scale: f64) -> Result<MoonsModel> {
    check_heads(n_heads)?;
    ensure!(
        init_scale >= 0.0 && init_scale.is_finite(),
        "init scale must be finite and >= 0"
    );
    let mut r = rng::stream(seed, "moons-init");
    let normal = Normal::new(0.0, init_scale).expect("valid normal");
    let mut params = Parameters::new();
    for name in NAMES {
        for part in ["re", "im"] {
            let data = (0..9).map(|_| normal.sample(&mut r)).collect();
            params.push(format!("{name}.{part}"), Tensor::matrix(3, 3, data)?, true);
        }
    }
    Ok(MoonsModel {
        n_heads,
        beta: MOONS_BETA,
        params,
    })
}

/// Moons model with the default initialization scale of 0.1.
pub fn build_moons_model(n_heads: usize, seed: u64) -> Result<MoonsModel> {
    build_moons_model_scaled(n_heads, seed, 0.1)
}

impl MoonsModel {
    /// All three matrices set to the identity.
    pub fn identity(n_heads: usize) -> Result<MoonsModel> {
        let mut m = build_moons_model_scaled(n_heads, 0, 0.0)?;
        for name in NAMES {
            *m.params.get_mut(&format!("{name}.re")).unwrap() = Tensor::identity(3);
        }
        Ok(m)
    }

    pub fn matrix(&self, name: &str) -> ComplexMatrix3 {
        let re = self.params.get(&format!("{name}.re")).expect("known matrix");
        let im = self.params.get(&format!("{name}.im")).expect("known matrix");
        let mut w = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (r, row) in w.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = Complex64::new(re.get2(r, c), im.get2(r, c));
            }
        }
        w
    }

    /// Column order placing each head's real then imaginary coordinates
    /// next to each other, starting from the `[re0 re1 re2 im0 im1 im2]`
    /// layout.
    fn head_layout(&self) -> Vec<usize> {
        let width = 3 / self.n_heads;
        (0..self.n_heads)
            .flat_map(|h| {
                let coords = h * width..(h + 1) * width;
                coords.clone().chain(coords.map(|c| c + 3))
            })
            .collect()
    }

    /// Predictions `z_1..z_D` for the observations `x` (`[D, 6]`, real parts
    /// then imaginary parts), with the parameters bound as `vars` in
    /// parameter order.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let d = tape.value(x).rows();
        let w = |i: usize| (vars[2 * i], vars[2 * i + 1]);
        let keys = complex_linear(tape, x, w(0));
        let values = complex_linear(tape, x, w(1));
        let layout = self.head_layout();
        let keys = tape.gather_cols(keys, &layout);
        let values = tape.gather_cols(values, &layout);
        let stored_keys = tape.slice_rows(keys, 0, d.saturating_sub(1));
        let next_values = tape.slice_rows(values, d.min(1), d);
        let beta = tape.constant(Tensor::filled(&[self.n_heads], self.beta));
        let y = tape.attention(keys, stored_keys, next_values, beta, self.n_heads, Mask::StrictCausal);
        let mut inverse = vec![0; 6];
        for (j, &c) in layout.iter().enumerate() {
            inverse[c] = j;
        }
        let y = tape.gather_cols(y, &inverse);
        complex_linear(tape, y, w(2))
    }

    /// Starts a streaming predictor with empty memories.
    pub fn stream(&self) -> MoonsStream {
        MoonsStream {
            w_phi: self.matrix("w_phi"),
            w_psi: self.matrix("w_psi"),
            w_z: self.matrix("w_z"),
            n_heads: self.n_heads,
            beta: self.beta,
            memories: vec![MemoryState::new(); self.n_heads],
            pending: None,
        }
    }
}

/// `W x` for complex `W` held as `(re, im)` vars and rows of `x` laid out
/// as `[re0 re1 re2 im0 im1 im2]`.
fn complex_linear(tape: &mut Tape, x: Var, (wr, wi): (Var, Var)) -> Var {
    let xr = tape.gather_cols(x, &[0, 1, 2]);
    let xi = tape.gather_cols(x, &[3, 4, 5]);
    let a = tape.linear(xr, wr);
    let b = tape.linear(xi, wi);
    let re = tape.sub(a, b);
    let c = tape.linear(xi, wr);
    let e = tape.linear(xr, wi);
    let im = tape.add(c, e);
    tape.concat_cols(&[re, im])
}

/// Rows `[re0 re1 re2 im0 im1 im2]` for a sequence of 3-dim observations.
pub fn complex_rows(xs: &[ComplexVector]) -> Result<Tensor> {
    ensure!(xs.iter().all(|x| x.len() == 3), "moons observations are 3-dim");
    let mut data = Vec::with_capacity(xs.len() * 6);
    for x in xs {
        data.extend_from_slice(x.re().data());
        data.extend_from_slice(x.im().data());
    }
    Tensor::matrix(xs.len(), 6, data)
}

/// Inverse of [`complex_rows`].
pub fn rows_to_complex(t: &Tensor) -> Vec<ComplexVector> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let v: Vec<Complex64> = (0..3).map(|k| Complex64::new(row[k], row[k + 3])).collect();
            ComplexVector::from_values(&v)
        })
        .collect()
}

/// Predictions `z_1..z_D`; `z_T` estimates `x_{T+1}`.
pub fn moons_forward(model: &MoonsModel, sequence: &[ComplexVector]) -> Result<Vec<ComplexVector>> {
    ensure!(!sequence.is_empty(), "empty sequence");
    let mut tape = Tape::new();
    let vars = model.params.bind_frozen(&mut tape);
    let x = tape.constant(complex_rows(sequence)?);
    let z = model.forward_tape(&mut tape, &vars, x);
    Ok(rows_to_complex(tape.value(z)))
}

fn apply(w: &ComplexMatrix3, x: &[Complex64; 3]) -> [Complex64; 3] {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[r][0] * x[0] + w[r][1] * x[1] + w[r][2] * x[2];
    }
    out
}

/// Position in a [`MoonsStream`] that can be returned to.
#[derive(Clone, Debug)]
pub struct StreamMark {
    stored: usize,
    pending: Option<[Complex64; 3]>,
}

/// A moons model consuming one observation at a time, with memories that
/// can be rewound. Produces the same predictions as [`moons_forward`].
#[derive(Clone, Debug)]
pub struct MoonsStream {
    w_phi: ComplexMatrix3,
    w_psi: ComplexMatrix3,
    w_z: ComplexMatrix3,
    n_heads: usize,
    beta: f64,
    memories: Vec<MemoryState>,
    pending: Option<[Complex64; 3]>,
}

impl MoonsStream {
    fn head_real(&self, v: &[Complex64; 3], h: usize) -> Vec<f64> {
        let width = 3 / self.n_heads;
        let coords = &v[h * width..(h + 1) * width];
        coords.iter().map(|c| c.re).chain(coords.iter().map(|c| c.im)).collect()
    }

    /// Feeds `x_T` and returns `z_T`.
    pub fn step(&mut self, x: &[Complex64; 3]) -> Result<[Complex64; 3]> {
        let key = apply(&self.w_phi, x);
        if let Some(prev) = self.pending.take() {
            let value = apply(&self.w_psi, x);
            for h in 0..self.n_heads {
                let (k, v) = (self.head_real(&prev, h), self.head_real(&value, h));
                self.memories[h].push(k, v);
            }
        }
        let width = 3 / self.n_heads;
        let mut y = [Complex64::new(0.0, 0.0); 3];
        for h in 0..self.n_heads {
            let out = self.memories[h].retrieve(&self.head_real(&key, h), self.beta, 2 * width)?;
            for j in 0..width {
                y[h * width + j] = Complex64::new(out[j], out[width + j]);
            }
        }
        self.pending = Some(key);
        Ok(apply(&self.w_z, &y))
    }

    pub fn mark(&self) -> StreamMark {
        StreamMark {
            stored: self.memories[0].len(),
            pending: self.pending,
        }
    }

    /// Forgets everything fed since `mark` was taken.
    pub fn rewind(&mut self, mark: &StreamMark) {
        for m in &mut self.memories {
            m.truncate(mark.stored);
        }
        self.pending = mark.pending;
    }

    pub fn stored_pairs(&self) -> usize {
        self.memories[0].len()
    }
}
