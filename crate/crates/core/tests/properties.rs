use proptest::prelude::*;

use elc_core::controller::{auxiliary_control, projection, saturate};
use elc_core::dynamics::{FrictionModel, JointState, TwoLinkParams};
use elc_core::feasibility::{check_c1, AxisRange, ConstraintSpec, Gains, ReferenceBounds};
use elc_core::simulation::DisturbanceProfile;
use elc_core::{Mat2, ParamVector, RegressorMatrix, Vec2};

fn vec2(s: f64) -> impl Strategy<Value = Vec2> {
    (-s..s, -s..s).prop_map(|(a, b)| Vec2::new(a, b))
}

fn param(s: f64) -> impl Strategy<Value = ParamVector> {
    prop::array::uniform5(-s..s).prop_map(ParamVector::from)
}

fn plant() -> impl Strategy<Value = TwoLinkParams> {
    (1.0..5.0, 0.1..0.5, 0.0..0.3, 0.0..6.0, 0.0..2.0, prop::bool::ANY).prop_map(|(p1, p2, p3, fd1, fd2, c)| {
        TwoLinkParams {
            p1,
            p2,
            p3,
            fd1,
            fd2,
            friction_model: if c { FrictionModel::Constant } else { FrictionModel::Viscous },
        }
    })
}

proptest! {
    #[test]
    fn saturate_bounds_and_keeps_direction(u in vec2(1e3), tau_bar in 1e-3..100.0f64) {
        let tau = saturate(&u, tau_bar);
        prop_assert!(tau.norm() <= tau_bar || tau == u);
        prop_assert!(tau.norm() <= u.norm());
        if u.norm() > 0.0 {
            prop_assert!(tau.dot(&u) > 0.0);
            prop_assert!((u[0] * tau[1] - u[1] * tau[0]).abs() <= 1e-12 * u.norm() * tau.norm());
        }
    }

    #[test]
    fn projection_never_pushes_further_out(th in param(4.0), y in param(50.0), theta_bar in 1.0..8.0f64, eps in 0.001..0.1f64) {
        let out = projection(&th, &y, theta_bar, eps);
        prop_assert!(out.dot(&th) <= y.dot(&th) + 1e-12 * y.norm() * th.norm());
        if th.norm() < theta_bar {
            prop_assert_eq!(out, y);
        }
    }

    #[test]
    fn regressor_reproduces_dynamics(
        p in plant(), q in vec2(7.0), dq in vec2(3.0), de in vec2(1.0), e in vec2(1.0), ddq_d in vec2(1.0), alpha in 0.05..2.0f64,
    ) {
        let r = de + alpha * e;
        let y = p.regressor(&q, &dq, &de, &ddq_d, &r, alpha);
        let direct = p.mass_matrix(&q) * (alpha * de - ddq_d) + p.coriolis_matrix(&q, &dq) * (r - dq) - p.friction(&dq) - p.gravity(&q);
        prop_assert!((y * p.theta() - direct).norm() < 1e-9);
    }

    #[test]
    fn coriolis_skew_property(p in plant(), q in vec2(7.0), dq in vec2(3.0), mu in vec2(3.0)) {
        prop_assert!(p.skew_defect(&q, &dq, &mu).abs() < 1e-10);
    }

    #[test]
    fn forward_dynamics_inverts_the_plant(p in plant(), q in vec2(7.0), dq in vec2(3.0), tau in vec2(30.0), d in vec2(5.0)) {
        let s = JointState::new(q, dq);
        let ddq = p.forward_dynamics(&s, &tau, &d).unwrap();
        let lhs = p.mass_matrix(&q) * ddq + p.coriolis_matrix(&q, &dq) * dq + p.gravity(&q) + p.friction(&dq);
        prop_assert!((lhs - tau - d).norm() < 1e-9 * (1.0 + tau.norm() + d.norm()));
    }

    #[test]
    fn auxiliary_control_identity(y in prop::array::uniform10(-5.0..5.0f64), th in param(5.0), r in vec2(1.0)) {
        let y = RegressorMatrix::from_row_slice(&y);
        let k1 = Mat2::new(1.5, 0.0, 0.0, 1.0);
        let u = auxiliary_control(&y, &th, &k1, &r);
        prop_assert!((u + y * th + k1 * r).norm() < 1e-12);
    }

    #[test]
    fn more_input_never_hurts(q_bar in 2.05..3.0f64, v_bar in 0.75..2.0f64, tau in 0.0..60.0f64, extra in 0.0..30.0f64) {
        let refb = ReferenceBounds { qd_bar: 2.0, vd_bar: 0.707, alpha3: 0.3 };
        let gains = Gains { alpha: 0.1, k1: Mat2::new(1.5, 0.0, 0.0, 1.0), theta_bar: 6.2 };
        let lo = check_c1(&ConstraintSpec { q_bar, v_bar, tau_bar: tau, d_bar: 5.0 }, &refb, &gains);
        let hi = check_c1(&ConstraintSpec { q_bar, v_bar, tau_bar: tau + extra, d_bar: 5.0 }, &refb, &gains);
        prop_assert!(!lo.feasible || hi.feasible);
        prop_assert!((lo.tau_min - hi.tau_min).abs() < 1e-12);
    }

    #[test]
    fn persistent_disturbance_has_constant_norm(a in 0.0..10.0f64, t in 0.0..1e3f64) {
        let d = DisturbanceProfile::persistent(a).eval(t);
        prop_assert!((d.norm() - a).abs() < 1e-12);
    }

    #[test]
    fn axis_range_parses_and_spans(start in -10.0..10.0f64, len in 0.01..10.0f64, count in 2usize..200) {
        let text = format!("{start:?}:{:?}:{count}", start + len);
        let r: AxisRange = text.parse().unwrap();
        let v = r.values();
        prop_assert_eq!(v.len(), count);
        prop_assert_eq!(v[0], start);
        prop_assert!((v[count - 1] - (start + len)).abs() < 1e-9);
    }
}
