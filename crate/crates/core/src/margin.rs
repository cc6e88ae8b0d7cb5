//! Exact periodic-sampling stability margin via matrix exponentials.
//!
//! For the undisturbed loop x' = A x - B K C x(s_k) with sends every h, the
//! state at sampling instants obeys x(s_{k+1}) = M(h) x(s_k) with
//!
//! ```text
//!   M(h) = e^{Ah} - (int_0^h e^{As} ds) B K C
//! ```
//!
//! and the loop is stable iff the spectral radius of M(h) is below one. The
//! supremum h* of stable periods is a solver-independent reference point:
//! any certified waiting time for the same loop must satisfy h <= h*.

use crate::plant::{Gain, PlantError, SimplePlant};
use crate::Mat;
use nalgebra::DMatrix;

/// e^{At} and int_0^t e^{As} ds, computed together from one augmented
/// exponential exp([[A, I], [0, 0]] t) = [[e^{At}, int e^{As} ds], [0, I]].
pub fn expm_with_integral(a: &Mat, t: f64) -> (Mat, Mat) {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square matrix required");
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * t));
    let e = aug.exp();
    let em = e.view((0, 0), (n, n)).into_owned();
    let integral = e.view((0, n), (n, n)).into_owned();
    (em, integral)
}

/// One-period transition matrix M(h) of the sampled loop.
pub fn one_step_matrix(plant: &SimplePlant, gain: &Gain, h: f64) -> Result<Mat, PlantError> {
    gain.check_dims(plant.m(), plant.l())?;
    let (em, integral) = expm_with_integral(&plant.a, h);
    Ok(em - integral * &plant.b * &gain.k * &plant.c)
}

pub fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct MarginResult {
    /// Largest period with spectral radius below one, up to `tol`.
    pub h_star: f64,
    /// Spectral radius at `h_star`.
    pub rho: f64,
}

/// Bisect for h* = sup { h : rho(M(h)) < 1 }.
///
/// Scans upward from `tol` in steps of `tol * 64` to find the first unstable
/// period, then bisects the bracketing interval down to `tol`.
pub fn sampled_data_margin(
    plant: &SimplePlant,
    gain: &Gain,
    tol: f64,
    h_hi: f64,
) -> Result<MarginResult, PlantError> {
    assert!(tol > 0.0 && h_hi > tol);
    let rho_at = |h: f64| -> Result<f64, PlantError> {
        Ok(spectral_radius(&one_step_matrix(plant, gain, h)?))
    };
    if rho_at(tol)? >= 1.0 {
        return Err(PlantError::Invalid(
            "loop is not stable for arbitrarily fast sampling".into(),
        ));
    }
    let step = tol * 64.0;
    let mut lo = tol;
    let mut hi = None;
    let mut h = lo + step;
    while h <= h_hi {
        if rho_at(h)? >= 1.0 {
            hi = Some(h);
            break;
        }
        lo = h;
        h += step;
    }
    let mut hi = match hi {
        Some(v) => v,
        None => {
            return Ok(MarginResult {
                h_star: h_hi,
                rho: rho_at(h_hi)?,
            })
        }
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if rho_at(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MarginResult {
        h_star: lo,
        rho: rho_at(lo)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::load_plant;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_of_nilpotent_block() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (em, integral) = expm_with_integral(&a, 0.7);
        assert_relative_eq!(em[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(em[(0, 1)], 0.7, epsilon = 1e-12);
        assert_relative_eq!(em[(1, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(integral[(0, 0)], 0.7, epsilon = 1e-12);
        assert_relative_eq!(integral[(0, 1)], 0.5 * 0.7 * 0.7, epsilon = 1e-12);
        assert_relative_eq!(integral[(1, 1)], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn exponential_of_diagonal() {
        let a = Mat::from_row_slice(2, 2, &[-1.5, 0.0, 0.0, 0.3]);
        let (em, integral) = expm_with_integral(&a, 2.0);
        for (i, lam) in [(-1.5f64), 0.3].iter().enumerate() {
            assert_relative_eq!(em[(i, i)], (lam * 2.0).exp(), epsilon = 1e-12);
            assert_relative_eq!(
                integral[(i, i)],
                ((lam * 2.0).exp() - 1.0) / lam,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn scalar_margin_matches_closed_form() {
        // x' = x + u, u = -2 x(s_k): M(h) = e^h - 2(e^h - 1) = 2 - e^h,
        // stable iff h < ln 3.
        let doc = load_plant(r#"{"A": [[1]], "B": [[1]], "C": [[1]], "K": [[2]]}"#).unwrap();
        let (plant, gain) = match doc.plant {
            crate::plant::LoadedPlant::Simple(ref p) => (p, doc.gain.as_ref().unwrap()),
            _ => unreachable!(),
        };
        let res = sampled_data_margin(plant, gain, 1e-6, 5.0).unwrap();
        assert_relative_eq!(res.h_star, 3f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn margin_brackets_instability() {
        let doc = load_plant(crate::plant::tests::EXAMPLE1).unwrap();
        let (plant, gain) = match doc.plant {
            crate::plant::LoadedPlant::Simple(ref p) => (p, doc.gain.as_ref().unwrap()),
            _ => unreachable!(),
        };
        let res = sampled_data_margin(plant, gain, 1e-5, 10.0).unwrap();
        println!("example 1 sampling margin h* = {:.6}", res.h_star);
        assert!(res.rho < 1.0);
        let above = one_step_matrix(plant, gain, res.h_star + 1e-3).unwrap();
        assert!(spectral_radius(&above) >= 1.0 - 1e-6);
        // certified designs later in the suite stay below this margin
        assert!(res.h_star > 0.3 && res.h_star < 1.0);
    }
}
