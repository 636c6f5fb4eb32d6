use magsync::dynamics::{
    integrate_observed, integrate_stochastic, thermal_state_from_seed, DampedMode, Drift, OneSphere, Recorder,
};
use magsync::model::{default_params, desk_scaled, nondimensionalize, Drive};
use magsync::{IntegrationSpec, Method, NoiseSpec, C64};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn to_real(z: &[C64; 4]) -> DVector<f64> {
    DVector::from_iterator(8, z.iter().flat_map(|c| [c.re, c.im]))
}

/// Real 8×8 generator of a drift that is linear in the state.
fn generator(d: &OneSphere) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(8, 8);
    for k in 0..8 {
        let mut e = [C64::default(); 4];
        e[k / 2] = if k % 2 == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
        a.set_column(k, &to_real(&d.eval(&e)));
    }
    a
}

#[test]
fn uncoupled_linear_system_matches_matrix_exponential() {
    let mut p = default_params();
    p.drive = Drive::MagnonDrive { amplitude: 0.0 };
    p.g_1 = 0.0;
    p.g_2 = 0.0;
    let s = nondimensionalize(&p);
    let d = OneSphere::new(&s).unwrap();
    let a = generator(&d);
    let x0 = [C64::new(0.3, -0.2), C64::new(-0.1, 0.4), C64::new(1.0, 0.5), C64::new(-0.7, 0.2)];
    let spec = IntegrationSpec::resolving(&s, 30.0, Method::Rk4);
    let mut rec = Recorder::<4>::default();
    let fin = integrate_observed(&d, x0, &spec, None, &mut rec).unwrap();
    let t = *rec.times.last().unwrap();
    let exact = (a * t).exp() * to_real(&x0);
    let err = (to_real(&fin) - &exact).norm() / exact.norm();
    assert!(err < 1e-6, "relative error {err:e}");
}

#[test]
fn harmonic_mode_matches_closed_form_over_many_steps() {
    let mode = DampedMode { omega: 1.0, gamma: 0.01 };
    let b0 = C64::new(0.6, -0.8);
    let spec = IntegrationSpec { t_end: 100.0, dt: 1e-3, sample_stride: 1_000_000, method: Method::Rk4 };
    assert_eq!(spec.steps(), 100_000);
    let fin = integrate_observed(&mode, [b0], &spec, None, &mut Recorder::<1>::default()).unwrap();
    let exact = mode.exact(b0, spec.steps() as f64 * spec.dt);
    let rel = (fin[0] - exact).norm() / exact.norm();
    assert!(rel < 1e-8, "relative error {rel:e}");
}

#[test]
fn rk4_is_fourth_order() {
    let mode = DampedMode { omega: 1.0, gamma: 0.1 };
    let b0 = C64::new(1.0, 0.5);
    let err = |dt: f64| {
        let spec = IntegrationSpec { t_end: 10.0, dt, sample_stride: 1_000_000, method: Method::Rk4 };
        let fin = integrate_observed(&mode, [b0], &spec, None, &mut Recorder::<1>::default()).unwrap();
        (fin[0] - mode.exact(b0, spec.steps() as f64 * dt)).norm()
    };
    let order = (err(0.1) / err(0.05)).log2();
    assert!(order >= 3.9, "observed order {order}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stochastic_runs_are_bit_reproducible(seed in any::<u64>(), stream in 0u64..1000) {
        let p = nondimensionalize(&desk_scaled(&default_params(), 100.0));
        let d = OneSphere::new(&p).unwrap();
        let spec = IntegrationSpec::resolving(&p, 20.0, Method::Heun);
        let x0: [C64; 4] = thermal_state_from_seed(&p, seed).unwrap();
        let noise = NoiseSpec::thermal(&p, seed, stream);
        let a = integrate_stochastic(&d, &noise, x0, &spec).unwrap();
        let b = integrate_stochastic(&d, &noise, x0, &spec).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for (u, v) in x.iter().zip(y) {
                prop_assert_eq!(u.re.to_bits(), v.re.to_bits());
                prop_assert_eq!(u.im.to_bits(), v.im.to_bits());
            }
        }
    }

    #[test]
    fn damped_mode_error_shrinks_with_step(omega in 0.5f64..3.0, gamma in 0.0f64..0.5) {
        let mode = DampedMode { omega, gamma };
        let b0 = C64::new(0.8, -0.3);
        let err = |dt: f64| {
            let spec = IntegrationSpec { t_end: 5.0, dt, sample_stride: 1_000_000, method: Method::Rk4 };
            let fin = integrate_observed(&mode, [b0], &spec, None, &mut Recorder::<1>::default()).unwrap();
            (fin[0] - mode.exact(b0, spec.steps() as f64 * dt)).norm()
        };
        prop_assert!(err(0.025) < err(0.05) / 10.0);
    }
}
