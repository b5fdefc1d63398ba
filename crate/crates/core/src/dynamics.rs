//! Two-link planar manipulator in Euler-Lagrange form
//!
//! `M(q) q'' + Vm(q, q') q' + Gr(q) + Fd(q') = tau + d`
//!
//! with uncertain parameters ordered `theta = [p1, p2, p3, fd1, fd2]`.

use serde::{Deserialize, Serialize};

use crate::{Error, Mat2, ParamVector, RegressorMatrix, Result, Vec2};

/// Largest inertia condition number accepted by [`TwoLinkParams::forward_dynamics`].
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

/// Number of `q2` samples in the inertia eigenvalue sweep.
pub const INERTIA_GRID_POINTS: usize = 10_001;

/// Relative margin added on top of the swept upper eigenvalue to obtain `m_bar`.
pub const INERTIA_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vec2,
    pub dq: Vec2,
}

impl JointState {
    pub fn new(q: Vec2, dq: Vec2) -> Self {
        Self { q, dq }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite())
    }
}

/// Functional form of the friction vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrictionModel {
    /// `Fd = diag(fd1, fd2) q'`
    #[default]
    Viscous,
    /// `Fd = [fd1, fd2]`, independent of velocity.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub fd1: f64,
    pub fd2: f64,
    #[serde(default)]
    pub friction_model: FrictionModel,
}

/// Inertia eigenvalue bounds: `m1 |mu|^2 <= mu' M mu <= m2 |mu|^2 < m_bar |mu|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub m1: f64,
    pub m2: f64,
    pub m_bar: f64,
}

impl Default for TwoLinkParams {
    /// Two-link arm used in the reference tracking experiment.
    fn default() -> Self {
        Self {
            p1: 3.473,
            p2: 0.196,
            p3: 0.242,
            fd1: 5.3,
            fd2: 1.1,
            friction_model: FrictionModel::Viscous,
        }
    }
}

/// Eigenvalues `(lambda_min, lambda_max)` of a symmetric 2x2 matrix.
pub fn sym2_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.5 * (a - d)).hypot(b);
    (mean - rad, mean + rad)
}

impl TwoLinkParams {
    /// Parameter vector `[p1, p2, p3, fd1, fd2]`.
    pub fn theta(&self) -> ParamVector {
        ParamVector::from([self.p1, self.p2, self.p3, self.fd1, self.fd2])
    }

    pub fn with_theta(&self, theta: &ParamVector) -> Self {
        Self {
            p1: theta[0],
            p2: theta[1],
            p3: theta[2],
            fd1: theta[3],
            fd2: theta[4],
            friction_model: self.friction_model,
        }
    }

    /// Checks that `M(q)` is positive definite for every `q`.
    ///
    /// `det M = p2 (p1 + 2 p3 c) - (p2 + p3 c)^2` is concave in `c = cos q2`, so it
    /// suffices to check the endpoints `c = +-1`.
    pub fn validate(&self) -> Result<()> {
        let all = [self.p1, self.p2, self.p3, self.fd1, self.fd2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("plant parameters must be finite".into()));
        }
        if self.p1 <= 0.0 || self.p2 <= 0.0 {
            return Err(Error::Validation(format!(
                "plant requires p1 > 0 and p2 > 0 (got p1 = {}, p2 = {})",
                self.p1, self.p2
            )));
        }
        for c in [-1.0, 1.0] {
            let det = self.p2 * (self.p1 + 2.0 * self.p3 * c) - (self.p2 + self.p3 * c).powi(2);
            if det <= 0.0 || self.p1 + 2.0 * self.p3 * c <= 0.0 {
                return Err(Error::Validation(format!(
                    "inertia matrix loses positive definiteness at cos(q2) = {c} (det = {det})"
                )));
            }
        }
        Ok(())
    }

    pub fn mass_matrix(&self, q: &Vec2) -> Mat2 {
        let c2 = q[1].cos();
        let off = self.p2 + self.p3 * c2;
        Mat2::new(self.p1 + 2.0 * self.p3 * c2, off, off, self.p2)
    }

    /// `dM/dt = (dM/dq2) q2'`, evaluated analytically.
    pub fn mass_matrix_derivative(&self, q: &Vec2, dq: &Vec2) -> Mat2 {
        let k = -self.p3 * q[1].sin() * dq[1];
        Mat2::new(2.0 * k, k, k, 0.0)
    }

    pub fn coriolis_matrix(&self, q: &Vec2, dq: &Vec2) -> Mat2 {
        let h = self.p3 * q[1].sin();
        Mat2::new(-h * dq[1], -h * (dq[0] + dq[1]), h * dq[0], 0.0)
    }

    pub fn friction(&self, dq: &Vec2) -> Vec2 {
        match self.friction_model {
            FrictionModel::Viscous => Vec2::new(self.fd1 * dq[0], self.fd2 * dq[1]),
            FrictionModel::Constant => Vec2::new(self.fd1, self.fd2),
        }
    }

    /// Gravity vector; the planar arm moves in the horizontal plane.
    pub fn gravity(&self, _q: &Vec2) -> Vec2 {
        Vec2::zeros()
    }

    /// Joint accelerations for applied input `tau` and disturbance `d`.
    pub fn forward_dynamics(&self, state: &JointState, tau: &Vec2, d: &Vec2) -> Result<Vec2> {
        let JointState { q, dq } = state;
        let m = self.mass_matrix(q);
        let (lo, hi) = sym2_eigenvalues(&m);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !condition.is_finite() || condition > MAX_INERTIA_CONDITION {
            return Err(Error::SingularInertia { condition });
        }
        let rhs = tau + d - self.coriolis_matrix(q, dq) * dq - self.gravity(q) - self.friction(dq);
        // Closed-form 2x2 solve; the condition check above guarantees det != 0.
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        Ok(Vec2::new(
            (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
            (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
        ))
    }

    /// Regressor `Y` with `Y theta = M(alpha e' - qdd_d) + Vm (r - q') - Fd - Gr`.
    ///
    /// Column `j` is the coefficient of parameter `j` in `[p1, p2, p3, fd1, fd2]`.
    pub fn regressor(
        &self,
        q: &Vec2,
        dq: &Vec2,
        e_dot: &Vec2,
        ddq_d: &Vec2,
        r: &Vec2,
        alpha: f64,
    ) -> RegressorMatrix {
        regressor(self.friction_model, q, dq, e_dot, ddq_d, r, alpha)
    }

    /// Dense eigenvalue sweep of `M(q)` over `q2 in [0, 2 pi]`.
    pub fn inertia_bounds(&self) -> Result<ModelBounds> {
        let mut m1 = f64::INFINITY;
        let mut m2 = f64::NEG_INFINITY;
        let step = std::f64::consts::TAU / (INERTIA_GRID_POINTS - 1) as f64;
        for k in 0..INERTIA_GRID_POINTS {
            let q2 = k as f64 * step;
            let (lo, hi) = sym2_eigenvalues(&self.mass_matrix(&Vec2::new(0.0, q2)));
            if lo <= 0.0 {
                return Err(Error::NonPositiveDefinite { q2, lambda_min: lo });
            }
            m1 = m1.min(lo);
            m2 = m2.max(hi);
        }
        Ok(ModelBounds {
            m1,
            m2,
            m_bar: m2 * (1.0 + INERTIA_MARGIN),
        })
    }

    /// `mu' (M' - 2 Vm) mu`; identically zero for this model.
    pub fn skew_defect(&self, q: &Vec2, dq: &Vec2, mu: &Vec2) -> f64 {
        let n = self.mass_matrix_derivative(q, dq) - 2.0 * self.coriolis_matrix(q, dq);
        mu.dot(&(n * mu))
    }
}

/// Regressor for the two-link arm. Depends on the friction form but not on
/// parameter values.
pub fn regressor(
    friction: FrictionModel,
    q: &Vec2,
    dq: &Vec2,
    e_dot: &Vec2,
    ddq_d: &Vec2,
    r: &Vec2,
    alpha: f64,
) -> RegressorMatrix {
    let (s2, c2) = q[1].sin_cos();
    let a = alpha * e_dot - ddq_d;
    let b = r - dq;

    let p3_row0 = c2 * (2.0 * a[0] + a[1]) - s2 * dq[1] * b[0] - s2 * (dq[0] + dq[1]) * b[1];
    let p3_row1 = c2 * a[0] + s2 * dq[0] * b[0];
    let (f1, f2) = match friction {
        FrictionModel::Viscous => (-dq[0], -dq[1]),
        FrictionModel::Constant => (-1.0, -1.0),
    };

    #[rustfmt::skip]
    let y = RegressorMatrix::new(
        a[0], a[1],        p3_row0, f1,  0.0,
        0.0,  a[0] + a[1], p3_row1, 0.0, f2,
    );
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn paper() -> TwoLinkParams {
        TwoLinkParams::default()
    }

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn mass_matrix_reference_points() {
        let p = paper();
        let m = p.mass_matrix(&Vec2::new(0.3, FRAC_PI_2));
        assert!(close(&m, &Mat2::new(3.473, 0.196, 0.196, 0.196), 1e-12));
        let m = p.mass_matrix(&Vec2::new(-1.0, 0.0));
        assert!(close(&m, &Mat2::new(3.957, 0.438, 0.438, 0.196), 1e-12));
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let p = paper();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let q = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let m = p.mass_matrix(&q);
            assert_eq!(m, m.transpose());
            assert!(sym2_eigenvalues(&m).0 > 0.0);
        }
    }

    #[test]
    fn coriolis_cases() {
        let p = paper();
        assert_eq!(p.coriolis_matrix(&Vec2::new(0.4, 1.1), &Vec2::zeros()), Mat2::zeros());
        assert_eq!(p.coriolis_matrix(&Vec2::new(0.4, 0.0), &Vec2::new(3.0, -2.0)), Mat2::zeros());
        let v = p.coriolis_matrix(&Vec2::new(0.0, FRAC_PI_2), &Vec2::new(1.0, 2.0));
        assert!(close(&v, &Mat2::new(-0.484, -0.726, 0.242, 0.0), 1e-12));
    }

    #[test]
    fn friction_models() {
        let p = paper();
        assert_eq!(p.friction(&Vec2::zeros()), Vec2::zeros());
        assert!((p.friction(&Vec2::new(1.0, 1.0)) - Vec2::new(5.3, 1.1)).norm() < 1e-15);
        let dq = Vec2::new(0.7, -0.3);
        assert!((p.friction(&(2.0 * dq)) - 2.0 * p.friction(&dq)).norm() < 1e-15);

        let c = TwoLinkParams {
            friction_model: FrictionModel::Constant,
            ..paper()
        };
        assert_eq!(c.friction(&Vec2::new(9.0, -4.0)), Vec2::new(5.3, 1.1));
    }

    #[test]
    fn gravity_is_zero() {
        let p = paper();
        for q in [Vec2::new(PI, PI), Vec2::new(0.3, -1.2), Vec2::zeros()] {
            assert_eq!(p.gravity(&q), Vec2::zeros());
        }
    }

    #[test]
    fn forward_dynamics_cases() {
        let p = paper();
        let rest = JointState::new(Vec2::new(0.2, -0.4), Vec2::zeros());
        assert_eq!(p.forward_dynamics(&rest, &Vec2::zeros(), &Vec2::zeros()).unwrap(), Vec2::zeros());

        // Input that exactly cancels the velocity-dependent forces.
        let s = JointState::new(Vec2::new(0.5, 1.3), Vec2::new(-0.4, 0.9));
        let tau = p.friction(&s.dq) + p.coriolis_matrix(&s.q, &s.dq) * s.dq;
        let acc = p.forward_dynamics(&s, &tau, &Vec2::zeros()).unwrap();
        assert!(acc.norm() < 1e-14);

        // q = 0: M = [[3.957, 0.438], [0.438, 0.196]], det = 0.583728
        let s = JointState::new(Vec2::zeros(), Vec2::zeros());
        let acc = p.forward_dynamics(&s, &Vec2::new(1.0, 0.0), &Vec2::zeros()).unwrap();
        let det = 3.957 * 0.196 - 0.438 * 0.438;
        assert!((acc - Vec2::new(0.196 / det, -0.438 / det)).norm() < 1e-12);
    }

    #[test]
    fn forward_dynamics_reconstructs_force() {
        let p = paper();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = JointState::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            );
            let tau = Vec2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0));
            let d = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let acc = p.forward_dynamics(&s, &tau, &d).unwrap();
            let lhs = p.mass_matrix(&s.q) * acc
                + p.coriolis_matrix(&s.q, &s.dq) * s.dq
                + p.gravity(&s.q)
                + p.friction(&s.dq);
            assert!((lhs - tau - d).norm() < 1e-9);
        }
    }

    #[test]
    fn forward_dynamics_rejects_singular_inertia() {
        // p1 p2 = p2^2 at p3 = 0 makes M rank one.
        let p = TwoLinkParams { p1: 1.0, p2: 1.0, p3: 0.0, ..paper() };
        let s = JointState::new(Vec2::zeros(), Vec2::zeros());
        assert!(matches!(
            p.forward_dynamics(&s, &Vec2::new(1.0, 0.0), &Vec2::zeros()),
            Err(Error::SingularInertia { .. })
        ));
    }

    #[test]
    fn regressor_zero_and_friction_columns() {
        let z = Vec2::zeros();
        let y = regressor(FrictionModel::Viscous, &z, &z, &z, &z, &z, 0.5);
        assert_eq!(y, RegressorMatrix::zeros());

        let y = regressor(FrictionModel::Viscous, &z, &Vec2::new(1.0, 0.0), &z, &z, &z, 0.5);
        assert_eq!(y.column(3).into_owned(), Vec2::new(-1.0, 0.0));
    }

    #[test]
    fn regressor_matches_direct_evaluation() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for model in [FrictionModel::Viscous, FrictionModel::Constant] {
            let p = TwoLinkParams { friction_model: model, ..paper() };
            for _ in 0..1000 {
                let mut v = || Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let (q, dq, ed, ddqd, r) = (v(), v(), v(), v(), v());
                let alpha = 0.5;
                let direct = p.mass_matrix(&q) * (alpha * ed - ddqd)
                    + p.coriolis_matrix(&q, &dq) * (r - dq)
                    - p.friction(&dq)
                    - p.gravity(&q);
                let y = p.regressor(&q, &dq, &ed, &ddqd, &r, alpha);
                assert!((y * p.theta() - direct).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn inertia_bounds_sweep() {
        let b = paper().inertia_bounds().unwrap();
        assert!(b.m2 > 3.5 && b.m2 < 4.4, "m2 = {}", b.m2);
        assert!(b.m1 > 0.0);
        assert!((b.m_bar - 1.01 * b.m2).abs() < 1e-12);
        // Independent oracle: the extremes sit at q2 = 0 (c2 = 1).
        let (lo, hi) = sym2_eigenvalues(&Mat2::new(3.957, 0.438, 0.438, 0.196));
        assert!((b.m2 - hi).abs() < 1e-12);
        assert!((b.m1 - lo).abs() < 1e-12);
    }

    #[test]
    fn inertia_bounds_constant_matrix() {
        let p = TwoLinkParams { p3: 0.0, ..paper() };
        let b = p.inertia_bounds().unwrap();
        let (lo, hi) = sym2_eigenvalues(&Mat2::new(3.473, 0.196, 0.196, 0.196));
        assert_eq!((b.m1, b.m2), (lo, hi));
    }

    #[test]
    fn inertia_bounds_rejects_indefinite() {
        let p = TwoLinkParams { p1: 0.2, p2: 0.196, p3: 0.242, ..paper() };
        assert!(matches!(p.inertia_bounds(), Err(Error::NonPositiveDefinite { .. })));
        assert!(p.validate().is_err());
        assert!(paper().validate().is_ok());
    }

    #[test]
    fn skew_defect_trivial_cases() {
        let p = paper();
        let q = Vec2::new(0.3, 0.8);
        assert_eq!(p.skew_defect(&q, &Vec2::zeros(), &Vec2::new(1.0, 2.0)), 0.0);
        assert_eq!(p.skew_defect(&q, &Vec2::new(1.0, -2.0), &Vec2::zeros()), 0.0);
    }

    #[test]
    fn mass_derivative_matches_finite_difference() {
        let p = paper();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let q = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let dq = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let fd = (p.mass_matrix(&(q + h * dq)) - p.mass_matrix(&(q - h * dq))) / (2.0 * h);
            assert!(close(&fd, &p.mass_matrix_derivative(&q, &dq), 1e-8));
        }
    }
}
