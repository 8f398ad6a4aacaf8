//! GELU in its exact erf form.

use crate::tensor::Scalar;

/// Standard normal CDF.
pub fn phi<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::from_f64(0.5)).exp()
}

/// `x · Φ(x)`
pub fn gelu<T: Scalar>(x: T) -> T {
    x * phi(x)
}

/// `d/dx [x · Φ(x)] = Φ(x) + x · φ(x)`
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    phi(x) + x * normal_pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // Φ(-1) = 0.158655253931457
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457).abs() < 1e-12);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-8);
        assert!((gelu(-1.0f32) + 0.158_655_25).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for &x in &[-3.0f64, -1.0, -0.2, 0.0, 0.4, 1.5, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
