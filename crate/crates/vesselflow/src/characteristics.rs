use crate::constitutive::{to_riemann, CoefficientSet, EigenData, PrimitiveState};
use crate::error::{SimError, SimResult};
use crate::network::VesselId;

/// Nodal pressure and flow of one vessel at one time level on the grid
/// `x_j = j / n_cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselField {
    pub vessel: VesselId,
    pub t: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl VesselField {
    pub fn constant(vessel: VesselId, n_cells: usize, t: f64, state: PrimitiveState) -> Self {
        VesselField { vessel, t, p: vec![state.p; n_cells + 1], q: vec![state.q; n_cells + 1] }
    }

    pub fn n_cells(&self) -> usize {
        self.p.len() - 1
    }

    pub fn state(&self, j: usize) -> PrimitiveState {
        PrimitiveState::new(self.p[j], self.q[j])
    }

    pub fn set(&mut self, j: usize, st: PrimitiveState) {
        self.p[j] = st.p;
        self.q[j] = st.q;
    }

    pub fn states(&self) -> Vec<PrimitiveState> {
        (0..self.p.len()).map(|j| self.state(j)).collect()
    }
}

/// Characteristic family: `R` travels with `lambda_R`, `L` with `lambda_L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    R,
    L,
}

/// Foot of a characteristic traced back one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CharFoot {
    /// Foot inside the vessel with the interpolated Riemann variable there and
    /// the trapezoidal integral of the source along the segment.
    Interior { x: f64, value: f64, source_integral: f64 },
    OutLeft,
    OutRight,
}

impl CharFoot {
    /// Riemann variable carried to the target point, if the foot is interior.
    pub fn arrival(&self) -> Option<f64> {
        match self {
            CharFoot::Interior { value, source_integral, .. } => Some(value + source_integral),
            _ => None,
        }
    }
}

/// Coefficients and eigen data frozen at every grid node of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLevel {
    pub coeffs: Vec<CoefficientSet>,
    pub eigen: Vec<EigenData>,
}

/// `(F_R, F_L)`: the right-hand sides of the characteristic equations
/// `d r / dt = F_R` along `lambda_R` and `d s / dt = F_L` along `lambda_L`.
/// `dl_r` and `dl_l` are the directional derivatives of the left
/// eigenvectors `l_R = (-lambda_L, a)` and `l_L = (-lambda_R, a)` along their
/// own characteristic direction.
pub fn source_terms(
    cs: &CoefficientSet,
    e: &EigenData,
    st: PrimitiveState,
    dl_r: [f64; 2],
    dl_l: [f64; 2],
) -> (f64, f64) {
    let forcing_r = -e.lambda_l * cs.f + cs.a * cs.g;
    let forcing_l = -e.lambda_r * cs.f + cs.a * cs.g;
    (
        forcing_r + dl_r[0] * st.p + dl_r[1] * st.q,
        forcing_l + dl_l[0] * st.p + dl_l[1] * st.q,
    )
}

/// Everything a one-step characteristic update of a vessel needs, sampled on
/// the grid at the old level `t` and the new level `t + dt`.
#[derive(Debug, Clone)]
pub struct CharacteristicField {
    pub dt: f64,
    n: usize,
    courant: f64,
    lambda_r: [Vec<f64>; 2],
    lambda_l: [Vec<f64>; 2],
    r_old: Vec<f64>,
    s_old: Vec<f64>,
    f_r: [Vec<f64>; 2],
    f_l: [Vec<f64>; 2],
}

fn interp(v: &[f64], x: f64) -> f64 {
    let n = v.len() - 1;
    let s = x.clamp(0.0, 1.0) * n as f64;
    let j = (s.floor() as usize).min(n - 1);
    let theta = s - j as f64;
    v[j] + theta * (v[j + 1] - v[j])
}

fn x_derivative(v: &[f64], j: usize) -> f64 {
    let n = v.len() - 1;
    let nf = n as f64;
    if j == 0 {
        (v[1] - v[0]) * nf
    } else if j == n {
        (v[n] - v[n - 1]) * nf
    } else {
        (v[j + 1] - v[j - 1]) * 0.5 * nf
    }
}

impl CharacteristicField {
    /// `old`/`new` are the frozen coefficients at `t` and `t + dt`; `u_old` and
    /// `u_new` are the states multiplying the eigenvector derivatives in the
    /// source terms.
    pub fn new(
        old: &FrozenLevel,
        new: &FrozenLevel,
        u_old: &[PrimitiveState],
        u_new: &[PrimitiveState],
        dt: f64,
    ) -> Self {
        let n = old.coeffs.len() - 1;
        let levels = [old, new];
        let lambda_r = levels.map(|l| l.eigen.iter().map(|e| e.lambda_r).collect::<Vec<_>>());
        let lambda_l = levels.map(|l| l.eigen.iter().map(|e| e.lambda_l).collect::<Vec<_>>());
        let a = levels.map(|l| l.coeffs.iter().map(|c| c.a).collect::<Vec<_>>());
        let (r_old, s_old) = (0..=n)
            .map(|j| {
                let rp = to_riemann(&old.coeffs[j], &old.eigen[j], u_old[j]);
                (rp.r, rp.s)
            })
            .unzip();

        let us = [u_old, u_new];
        let mut f_r = [vec![0.0; n + 1], vec![0.0; n + 1]];
        let mut f_l = [vec![0.0; n + 1], vec![0.0; n + 1]];
        for m in 0..2 {
            for j in 0..=n {
                // l_R = (-lambda_L, a), l_L = (-lambda_R, a).
                let dt_lr = [
                    -(lambda_l[1][j] - lambda_l[0][j]) / dt,
                    (a[1][j] - a[0][j]) / dt,
                ];
                let dt_ll = [
                    -(lambda_r[1][j] - lambda_r[0][j]) / dt,
                    dt_lr[1],
                ];
                let dx_a = x_derivative(&a[m], j);
                let dx_lr = [-x_derivative(&lambda_l[m], j), dx_a];
                let dx_ll = [-x_derivative(&lambda_r[m], j), dx_a];
                let (lr, ll) = (lambda_r[m][j], lambda_l[m][j]);
                let dl_r = [dt_lr[0] + lr * dx_lr[0], dt_lr[1] + lr * dx_lr[1]];
                let dl_l = [dt_ll[0] + ll * dx_ll[0], dt_ll[1] + ll * dx_ll[1]];
                let (fr, fl) = source_terms(&levels[m].coeffs[j], &levels[m].eigen[j], us[m][j], dl_r, dl_l);
                f_r[m][j] = fr;
                f_l[m][j] = fl;
            }
        }
        let courant = lambda_r
            .iter()
            .chain(&lambda_l)
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, l| m.max(l.abs()))
            * dt
            * n as f64;
        CharacteristicField { dt, n, courant, lambda_r, lambda_l, r_old, s_old, f_r, f_l }
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    /// Largest `|lambda| dt n` over both families and both levels.
    pub fn courant(&self) -> f64 {
        self.courant
    }

    pub fn riemann_old(&self, family: Family) -> &[f64] {
        match family {
            Family::R => &self.r_old,
            Family::L => &self.s_old,
        }
    }

    pub fn source(&self, family: Family, level: usize) -> &[f64] {
        match family {
            Family::R => &self.f_r[level],
            Family::L => &self.f_l[level],
        }
    }

    fn speed(&self, family: Family, level: usize) -> &[f64] {
        match family {
            Family::R => &self.lambda_r[level],
            Family::L => &self.lambda_l[level],
        }
    }
}

/// Traces the characteristic of `family` through `(x_target, t + dt)` back
/// to level `t` with the explicit midpoint rule.
pub fn trace_foot(
    field: &CharacteristicField,
    x_target: f64,
    family: Family,
    cfl_max: f64,
    vessel: &VesselId,
) -> SimResult<CharFoot> {
    let courant = field.courant();
    if !(courant <= cfl_max) {
        return Err(SimError::CflViolation { vessel: vessel.clone(), courant, cfl_max });
    }
    let dt = field.dt;
    let (old, new) = (field.speed(family, 0), field.speed(family, 1));
    let x_half = x_target - 0.5 * dt * interp(new, x_target);
    let speed_mid = 0.5 * (interp(old, x_half) + interp(new, x_half));
    let x = x_target - dt * speed_mid;
    if x < 0.0 {
        return Ok(CharFoot::OutLeft);
    }
    if x > 1.0 {
        return Ok(CharFoot::OutRight);
    }
    let value = interp(field.riemann_old(family), x);
    let source_integral =
        0.5 * dt * (interp(field.source(family, 0), x) + interp(field.source(family, 1), x_target));
    Ok(CharFoot::Interior { x, value, source_integral })
}

/// Riemann variables at the new level. `None` marks nodes whose foot left the
/// vessel; those are resolved by the closure at the attached node.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorUpdate {
    pub r: Vec<Option<f64>>,
    pub s: Vec<Option<f64>>,
}

impl InteriorUpdate {
    /// The characteristic value arriving at the vessel end from inside: `s`
    /// at `x = 0`, `r` at `x = 1`.
    pub fn outgoing_at(&self, end: crate::network::End) -> Option<f64> {
        match end {
            crate::network::End::X0 => self.s[0],
            crate::network::End::X1 => self.r[self.r.len() - 1],
        }
    }
}

pub fn interior_update(field: &CharacteristicField, cfl_max: f64, vessel: &VesselId) -> SimResult<InteriorUpdate> {
    let n = field.n_cells();
    let mut r = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let x = j as f64 / n as f64;
        r.push(trace_foot(field, x, Family::R, cfl_max, vessel)?.arrival());
        s.push(trace_foot(field, x, Family::L, cfl_max, vessel)?.arrival());
    }
    Ok(InteriorUpdate { r, s })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::constitutive::from_riemann;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn id() -> VesselId {
        VesselId::from("v")
    }

    fn field_for(level: &FrozenLevel, dt: f64) -> CharacteristicField {
        let zeros = vec![PrimitiveState::default(); level.coeffs.len()];
        CharacteristicField::new(level, level, &zeros, &zeros, dt)
    }

    fn unit_level(n: usize, g: f64) -> FrozenLevel {
        level_from(vec![CoefficientSet { a: 1.0, b: 1.0, c: 0.0, f: 0.0, g, area: 1.0 }; n + 1])
    }

    #[test]
    fn constant_speed_foot() {
        let lvl = speed_level(&[1.0; 6]);
        let foot = trace_foot(&field_for(&lvl, 0.1), 0.5, Family::R, 0.9, &id()).unwrap();
        match foot {
            CharFoot::Interior { x, .. } => assert_eq!(x, 0.4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn leftward_speed_feet() {
        let lvl = speed_level(&[-1.0; 6]);
        let f = field_for(&lvl, 0.1);
        match trace_foot(&f, 0.05, Family::L, 0.9, &id()).unwrap() {
            CharFoot::Interior { x, .. } => assert!((x - 0.15).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(trace_foot(&f, 0.99, Family::L, 0.9, &id()).unwrap(), CharFoot::OutRight);
    }

    #[test]
    fn cfl_violation_reported() {
        let lvl = speed_level(&[1.0; 21]);
        let err = trace_foot(&field_for(&lvl, 0.1), 0.5, Family::R, 0.9, &id()).unwrap_err();
        assert!(matches!(err, SimError::CflViolation { .. }));
    }

    #[test]
    fn linear_speed_foot_is_third_order() {
        let n = 10;
        let speeds: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let lvl = speed_level(&speeds);
        let mut errs = Vec::new();
        for dt in [0.4, 0.2, 0.1] {
            match trace_foot(&field_for(&lvl, dt), 0.8, Family::R, 10.0, &id()).unwrap() {
                CharFoot::Interior { x, .. } => errs.push((x - 0.8 * (-dt).exp()).abs()),
                other => panic!("{other:?}"),
            }
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 2.9, "{errs:?}");
        }
    }

    #[test]
    fn constant_coefficients_have_no_source() {
        let lvl = unit_level(4, 0.0);
        let f = field_for(&lvl, 0.1);
        assert!(f.source(Family::R, 0).iter().all(|v| *v == 0.0));
        assert!(f.source(Family::L, 1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_forcing_source() {
        let lvl = unit_level(4, 1.0);
        let (fr, fl) = source_terms(&lvl.coeffs[0], &lvl.eigen[0], PrimitiveState::default(), [0.0; 2], [0.0; 2]);
        assert_eq!((fr, fl), (1.0, 1.0));
        let dt = 0.05;
        let up = interior_update(&field_for(&lvl, dt), 0.9, &id()).unwrap();
        for j in 1..4 {
            assert_eq!(up.r[j], Some(dt));
            assert_eq!(up.s[j], Some(dt));
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let up = interior_update(&field_for(&unit_level(8, 0.0), 0.05), 0.9, &id()).unwrap();
        assert!(up.r[1..].iter().all(|v| *v == Some(0.0)));
        assert!(up.s[..8].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn endpoint_feet_leave_the_vessel() {
        let up = interior_update(&field_for(&unit_level(8, 0.0), 0.05), 0.9, &id()).unwrap();
        assert_eq!(up.r[0], None);
        assert_eq!(up.s[8], None);
        assert!(up.outgoing_at(crate::network::End::X0).is_some());
        assert!(up.outgoing_at(crate::network::End::X1).is_some());
    }

    #[test]
    fn sine_translates_one_step() {
        let n = 50;
        let lvl = unit_level(n, 0.0);
        let e = lvl.eigen[0];
        let u: Vec<PrimitiveState> = (0..=n)
            .map(|j| {
                let r = (2.0 * PI * j as f64 / n as f64).sin();
                from_riemann(&lvl.coeffs[0], &e, crate::constitutive::RiemannPair { r, s: 0.0 })
            })
            .collect();
        let dt = 0.5 / n as f64;
        let f = CharacteristicField::new(&lvl, &lvl, &u, &u, dt);
        let up = interior_update(&f, 0.9, &id()).unwrap();
        let dx = 1.0 / n as f64;
        let bound = (dx * dx + dt * dt) * (2.0 * PI).powi(2);
        for j in 1..n {
            let x = j as f64 / n as f64;
            let exact = (2.0 * PI * (x - dt)).sin();
            assert!((up.r[j].unwrap() - exact).abs() < bound);
        }
    }

    #[test]
    fn manufactured_source_matches_closed_form() {
        // a = 1 + x, b = 1, c = 0.1 t, frozen between t = 0 and t = dt,
        // state P = x, Q = 1 - x, f = 0, g = 0.
        let n = 400;
        let dt = 1e-3;
        let level = |t: f64| {
            level_from(
                (0..=n)
                    .map(|j| {
                        let x = j as f64 / n as f64;
                        CoefficientSet { a: 1.0 + x, b: 1.0, c: 0.1 * t, f: 0.0, g: 0.0, area: 1.0 }
                    })
                    .collect(),
            )
        };
        let u: Vec<PrimitiveState> =
            (0..=n).map(|j| PrimitiveState::new(j as f64 / n as f64, 1.0 - j as f64 / n as f64)).collect();
        let f = CharacteristicField::new(&level(0.0), &level(dt), &u, &u, dt);
        let j = n / 2;
        let x = 0.5;
        // Closed form at t = 0: u = sqrt(c^2 + a), lambda = c +- u.
        let a: f64 = 1.0 + x;
        let u0 = a.sqrt();
        let (lr, ll) = (u0, -u0);
        // d/dt lambda_L = 0.1 - (c c_t)/u = 0.1 at c = 0; d/dx lambda_L = -a_x / (2u).
        let dl_r = [-(0.1) + lr * (1.0 / (2.0 * u0)), 0.0 + lr * 1.0];
        let dl_l = [-(0.1) + ll * (-1.0 / (2.0 * u0)), 0.0 + ll * 1.0];
        let expect_r = dl_r[0] * x + dl_r[1] * (1.0 - x);
        let expect_l = dl_l[0] * x + dl_l[1] * (1.0 - x);
        assert!((f.source(Family::R, 0)[j] - expect_r).abs() < 1e-4, "{} {}", f.source(Family::R, 0)[j], expect_r);
        assert!((f.source(Family::L, 0)[j] - expect_l).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn feet_are_monotone(speeds in prop::collection::vec(-1.0f64..1.0, 11), dt in 0.001f64..0.025) {
            let lvl = speed_level(&speeds);
            let f = field_for(&lvl, dt);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=100 {
                let x = k as f64 / 100.0;
                let foot_x = match trace_foot(&f, x, Family::R, 0.9, &id()).unwrap() {
                    CharFoot::Interior { x, .. } => x,
                    CharFoot::OutLeft => -1.0,
                    CharFoot::OutRight => 2.0,
                };
                prop_assert!(foot_x >= prev);
                prev = foot_x;
            }
        }

        #[test]
        fn constants_reproduced_exactly(p in -100.0f64..100.0, q in -100.0f64..100.0,
                                        a in 0.1f64..10.0, b in 0.1f64..10.0, c in -0.5f64..0.5) {
            let n = 16;
            let lvl = level_from(vec![CoefficientSet { a, b, c, f: 0.0, g: 0.0, area: 1.0 }; n + 1]);
            let u = vec![PrimitiveState::new(p, q); n + 1];
            let dt = 0.5 / (n as f64 * lvl.eigen[0].lambda_r.abs().max(lvl.eigen[0].lambda_l.abs()));
            let f = CharacteristicField::new(&lvl, &lvl, &u, &u, dt);
            let up = interior_update(&f, 0.9, &id()).unwrap();
            let r0 = f.riemann_old(Family::R)[0];
            let s0 = f.riemann_old(Family::L)[0];
            for j in 1..n {
                prop_assert_eq!(up.r[j], Some(r0));
                prop_assert_eq!(up.s[j], Some(s0));
            }
        }
    }
}
