use num_complex::Complex64;

use super::tensor::Tensor;
use crate::error::{ensure, Result};

/// A vector over the complex field stored as two real tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    re: Tensor,
    im: Tensor,
}

impl ComplexVector {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        ensure!(
            re.shape() == im.shape(),
            "real part {:?} and imaginary part {:?} differ in shape",
            re.shape(),
            im.shape()
        );
        Ok(ComplexVector { re, im })
    }

    pub fn from_values(values: &[Complex64]) -> Self {
        ComplexVector {
            re: Tensor::vector(values.iter().map(|c| c.re).collect()),
            im: Tensor::vector(values.iter().map(|c| c.im).collect()),
        }
    }

    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re.data()[i], self.im.data()[i])
    }

    pub fn to_values(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

fn same_shape(a: &ComplexVector, b: &ComplexVector) -> Result<()> {
    ensure!(
        a.re.shape() == b.re.shape(),
        "complex shape mismatch {:?} vs {:?}",
        a.re.shape(),
        b.re.shape()
    );
    Ok(())
}

/// Elementwise product.
pub fn cmul(a: &ComplexVector, b: &ComplexVector) -> Result<ComplexVector> {
    same_shape(a, b)?;
    let vals: Vec<Complex64> = a
        .to_values()
        .into_iter()
        .zip(b.to_values())
        .map(|(x, y)| x * y)
        .collect();
    let mut out = ComplexVector::from_values(&vals);
    out.re = out.re.reshape(a.re.shape().to_vec())?;
    out.im = out.im.reshape(a.re.shape().to_vec())?;
    Ok(out)
}

/// Elementwise sum.
pub fn cadd(a: &ComplexVector, b: &ComplexVector) -> Result<ComplexVector> {
    same_shape(a, b)?;
    let add = |x: &Tensor, y: &Tensor| {
        let d = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        Tensor::new(x.shape().to_vec(), d)
    };
    ComplexVector::new(add(&a.re, &b.re)?, add(&a.im, &b.im)?)
}

/// `sum_i conj(a_i) b_i`.
pub fn hermitian_dot(a: &ComplexVector, b: &ComplexVector) -> Result<Complex64> {
    same_shape(a, b)?;
    Ok(a.to_values()
        .into_iter()
        .zip(b.to_values())
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// Elementwise modulus.
pub fn cabs(a: &ComplexVector) -> Tensor {
    let d = a.to_values().iter().map(|c| c.norm()).collect();
    Tensor::new(a.re.shape().to_vec(), d).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(re: f64, im: f64) -> ComplexVector {
        ComplexVector::from_values(&[Complex64::new(re, im)])
    }

    #[test]
    fn field_arithmetic() {
        let p = cmul(&scalar(1.0, 0.0), &scalar(0.0, 1.0)).unwrap();
        assert_eq!(p.get(0), Complex64::new(0.0, 1.0));
        let s = cadd(&scalar(1.0, 2.0), &scalar(3.0, -1.0)).unwrap();
        assert_eq!(s.get(0), Complex64::new(4.0, 1.0));
        assert_eq!(cabs(&scalar(3.0, 4.0)).data(), &[5.0]);
    }

    #[test]
    fn hermitian_dot_of_unit_phase_is_one() {
        for k in 0..16 {
            let th = k as f64 * 0.41;
            let z = ComplexVector::from_values(&[Complex64::from_polar(1.0, th)]);
            let d = hermitian_dot(&z, &z).unwrap();
            assert!((d.re - 1.0).abs() < 1e-15 && d.im.abs() < 1e-15);
        }
    }

    #[test]
    fn conjugates_first_argument() {
        let a = ComplexVector::from_values(&[Complex64::new(0.0, 1.0)]);
        let b = ComplexVector::from_values(&[Complex64::new(1.0, 0.0)]);
        assert_eq!(hermitian_dot(&a, &b).unwrap(), Complex64::new(0.0, -1.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = ComplexVector::from_values(&[Complex64::new(1.0, 0.0)]);
        let b = ComplexVector::from_values(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        assert!(cmul(&a, &b).is_err());
        assert!(hermitian_dot(&a, &b).is_err());
        assert!(ComplexVector::new(Tensor::zeros(&[2]), Tensor::zeros(&[3])).is_err());
    }
}
