//! Transitionless-driving corrections.
//!
//! For a Hamiltonian family H0(t) = sum_n E_n(t) P_n(t), the correction
//! H1(t) = (i/2) sum_n [dP_n/dt, P_n] makes the exact evolution follow the
//! instantaneous eigenspaces of H0 at any speed, in the parallel-transport
//! gauge (P_n H1 P_n = 0). This module computes H1 numerically for any
//! smooth family and provides closed forms for the three gate drives.

use crate::error::{Error, Result};
use crate::hilbert::{
    commutator, eig_hermitian_raw, hermitize, C64, HilbertLayout, Op, IM,
};
use crate::holonomy::DfsEncoding;
use crate::schedule::ControlPoint;
use ndarray::Array2;

/// Finite-difference step for gate assembly, as a fraction of the shortest
/// schedule segment.
pub const FD_STEP_FRACTION: f64 = 1e-4;

/// A time-parametrized Hamiltonian family: a layout plus a generator
/// returning the (Hermitian) matrix at any time.
pub struct ParamHamiltonian {
    layout: HilbertLayout,
    gen: Box<dyn Fn(f64) -> Array2<C64> + Send + Sync>,
}

impl std::fmt::Debug for ParamHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamHamiltonian")
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

impl ParamHamiltonian {
    pub fn new(
        layout: HilbertLayout,
        gen: impl Fn(f64) -> Array2<C64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            layout,
            gen: Box::new(gen),
        }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    /// Raw matrix at time t, without validation.
    pub fn matrix_at(&self, t: f64) -> Array2<C64> {
        (self.gen)(t)
    }

    /// Validated Hermitian operator at time t.
    pub fn at(&self, t: f64) -> Result<Op> {
        Op::hermitian(self.layout.clone(), self.matrix_at(t))
    }
}

/// Gauge convention of a counterdiabatic term. Parallel transport means the
/// correction has no diagonal blocks: P_n H1 P_n = 0 for every eigenspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    ParallelTransport,
}

/// A counterdiabatic correction Hamiltonian.
#[derive(Debug, Clone)]
pub struct CdTerm {
    pub matrix: Op,
    pub gauge: Gauge,
}

/// Numerical counterdiabatic term at time t.
///
/// Eigenprojectors are differentiated with a Richardson-extrapolated central
/// difference (five-point stencil, O(fd_step^4) truncation). The eigenvalue
/// group structure (count and dimensions) must be identical at all five
/// stencil points; a change means eigenvalue groups split, merge, or cross
/// within the stencil, where projector pairing is ill-defined.
pub fn counterdiabatic_numeric(
    h0: &ParamHamiltonian,
    t: f64,
    fd_step: f64,
    degeneracy_tol: Option<f64>,
) -> Result<CdTerm> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "fd_step = {fd_step} must be finite and > 0"
        )));
    }
    // Hermitized projector stacks at t - 2h, t - h, t, t + h, t + 2h.
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut stacks: Vec<Vec<Array2<C64>>> = Vec::with_capacity(5);
    let mut structure: Option<Vec<usize>> = None;
    for &k in &offsets {
        let op = h0.at(t + k * fd_step)?;
        let eig = eig_hermitian_raw(op.matrix(), degeneracy_tol)?;
        let dims: Vec<usize> = eig.spaces.iter().map(|s| s.dim()).collect();
        match &structure {
            None => structure = Some(dims),
            Some(want) if *want != dims => {
                return Err(Error::LevelCrossing {
                    t,
                    detail: format!(
                        "group dimensions {want:?} at the stencil start vs {dims:?} at offset \
                         {k} * fd_step"
                    ),
                });
            }
            _ => {}
        }
        stacks.push(eig.spaces.iter().map(|s| hermitize(&s.projector())).collect());
    }

    let dim = h0.layout.dim();
    let groups = stacks[2].len();
    let mut h1: Array2<C64> = Array2::zeros((dim, dim));
    for n in 0..groups {
        // Richardson extrapolation: (4 D(h) - D(2h)) / 3 with
        // D(s) = (P(t+s) - P(t-s)) / (2 s).
        let d_h = (&stacks[3][n] - &stacks[1][n]) / C64::new(2.0 * fd_step, 0.0);
        let d_2h = (&stacks[4][n] - &stacks[0][n]) / C64::new(4.0 * fd_step, 0.0);
        let p_dot = (d_h.mapv(|z| z * 4.0) - d_2h) / C64::new(3.0, 0.0);
        h1 = h1 + commutator(&p_dot, &stacks[2][n]).mapv(|z| z * IM / 2.0);
    }
    Ok(CdTerm {
        matrix: Op::hermitian(h0.layout.clone(), hermitize(&h1))?,
        gauge: Gauge::ParallelTransport,
    })
}

/// Shared closed form for the phase-type drives (lambda' sin(th/2) e^{i ph}
/// |bright><one| + lambda' cos(th/2) |bright><aux| + h.c.): the four nonzero
/// entries (bright,bright), (one,one), (aux,aux), (one,aux) of the
/// counterdiabatic term.
fn phase_like_entries(p: &ControlPoint) -> (C64, C64, C64, C64) {
    let half = p.theta / 2.0;
    let (s, c) = (half.sin(), half.cos());
    let (s2, c2) = (s * s, c * c);
    let pd = p.phi_dot;
    let e_miphi = C64::new(0.0, -p.phi).exp();
    // First part scales a fixed matrix by (phi_dot / 2) sin^2(th/2); the
    // second adds the remaining diagonal drift and the theta ramp.
    let scale = pd / 2.0 * s2;
    let h_bb = C64::new(-scale, 0.0);
    let h_oo = C64::new(scale * (3.0 * c2 - 1.0) + s2 * pd, 0.0);
    let h_aa = C64::new(scale * (3.0 * s2 - 1.0) - s2 * pd, 0.0);
    let sin_th = p.theta.sin();
    let h_oa = e_miphi
        * (C64::new(-1.5 * sin_th * scale + sin_th * pd / 2.0, 0.0) + IM * p.theta_dot / 2.0);
    (h_bb, h_oo, h_aa, h_oa)
}

/// Closed-form counterdiabatic term for the bit-phase drive on the C1 basis
/// {a1, 0L, 1L, a2}: i cos(th) dphi * M1 + i * M2 with real antisymmetric
/// M1, M2 supported on the (0L, 1L, a2) block. Equals
/// i(|dv><v| - |v><dv|) for the drive direction v.
pub fn cd_bitphase_closed_form(p: &ControlPoint) -> Result<CdTerm> {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    let (td, pd) = (p.theta_dot, p.phi_dot);
    let scale1 = ct * pd;
    let mut m: Array2<C64> = Array2::zeros((4, 4));
    // Upper-triangle entries on (0L, 1L, a2) = indices (1, 2, 3).
    let upper = [
        ((1, 2), scale1 * ct + (-pd)),
        ((1, 3), scale1 * (-st * sp) + cp * td),
        ((2, 3), scale1 * (st * cp) + sp * td),
    ];
    for ((j, k), v) in upper {
        m[(j, k)] = IM * v;
        m[(k, j)] = -IM * v;
    }
    Ok(CdTerm {
        matrix: Op::hermitian(DfsEncoding::c1().dfs_layout(), m)?,
        gauge: Gauge::ParallelTransport,
    })
}

/// Closed-form counterdiabatic term for the phase drive on the C1 basis
/// {a1, 0L, 1L, a2}; the 0L row and column are identically zero.
pub fn cd_phase_closed_form(p: &ControlPoint) -> Result<CdTerm> {
    let (h_bb, h_oo, h_aa, h_oa) = phase_like_entries(p);
    let mut m: Array2<C64> = Array2::zeros((4, 4));
    m[(0, 0)] = h_bb;
    m[(2, 2)] = h_oo;
    m[(3, 3)] = h_aa;
    m[(2, 3)] = h_oa;
    m[(3, 2)] = h_oa.conj();
    Ok(CdTerm {
        matrix: Op::hermitian(DfsEncoding::c1().dfs_layout(), m)?,
        gauge: Gauge::ParallelTransport,
    })
}

/// Closed-form counterdiabatic term for the controlled-phase drive on the C2
/// basis {00, 01, 10, 11, a3, a4}; the computational spectator rows are
/// identically zero and the structure matches the phase drive with
/// (bright, one, aux) = (a3, 11, a4).
pub fn cd_cp_closed_form(p: &ControlPoint) -> Result<CdTerm> {
    let (h_bb, h_oo, h_aa, h_oa) = phase_like_entries(p);
    let mut m: Array2<C64> = Array2::zeros((6, 6));
    m[(4, 4)] = h_bb;
    m[(3, 3)] = h_oo;
    m[(5, 5)] = h_aa;
    m[(3, 5)] = h_oa;
    m[(5, 3)] = h_oa.conj();
    Ok(CdTerm {
        matrix: Op::hermitian(DfsEncoding::c2().dfs_layout(), m)?,
        gauge: Gauge::ParallelTransport,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{dagger, max_abs, max_abs_diff, sigma_x, sigma_y, sigma_z};
    use crate::holonomy::build_h0;
    use crate::schedule::{make_schedule, GateKind, PulseSchedule, Ramp};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> Array2<C64> {
        let mut m = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        hermitize(&m)
    }

    fn gate_hamiltonian(kind: GateKind, schedule: PulseSchedule) -> ParamHamiltonian {
        let enc = match kind {
            GateKind::ControlledPhase => DfsEncoding::c2(),
            _ => DfsEncoding::c1(),
        };
        let layout = enc.dfs_layout();
        ParamHamiltonian::new(layout, move |t| {
            build_h0(kind, &schedule.sample(t), &enc)
                .expect("validated schedule")
                .into_matrix()
        })
    }

    #[test]
    fn constant_hamiltonian_has_zero_correction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 3, 5] {
            let fixed = random_hermitian(&mut rng, dim);
            let layout = HilbertLayout::single("s", dim).unwrap();
            let h = ParamHamiltonian::new(layout, move |_| fixed.clone());
            let cd = counterdiabatic_numeric(&h, 0.4, 1e-4, None).unwrap();
            assert!(max_abs(cd.matrix.matrix()) < 1e-11, "dim {dim}");
        }
    }

    #[test]
    fn two_level_rotation_gives_half_sigma_y() {
        // H(t) = cos(t) sz + sin(t) sx has eigenframe rotating at rate 1,
        // so the correction is sy / 2, independent of t.
        let layout = HilbertLayout::single("s", 2).unwrap();
        let h = ParamHamiltonian::new(layout, |t| {
            sigma_z().mapv(|z| z * t.cos()) + sigma_x().mapv(|z| z * t.sin())
        });
        let expected = sigma_y().mapv(|z| z * 0.5);
        for t in [0.3, 1.0, 2.2] {
            let cd = counterdiabatic_numeric(&h, t, 1e-4, None).unwrap();
            assert!(
                max_abs_diff(cd.matrix.matrix(), &expected) < 1e-9,
                "t = {t}"
            );
        }
    }

    #[test]
    fn correction_scales_with_frame_rate() {
        // theta(t) = t^2: at t = 1 the frame rotates at rate 2.
        let layout = HilbertLayout::single("s", 2).unwrap();
        let h = ParamHamiltonian::new(layout, |t| {
            let th = t * t;
            sigma_z().mapv(|z| z * th.cos()) + sigma_x().mapv(|z| z * th.sin())
        });
        let cd = counterdiabatic_numeric(&h, 1.0, 1e-4, None).unwrap();
        assert!(max_abs_diff(cd.matrix.matrix(), &sigma_y()) < 1e-8);
    }

    #[test]
    fn closed_forms_match_numeric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in [GateKind::BitPhase, GateKind::Phase, GateKind::ControlledPhase] {
            let durations = vec![1.0; kind.segment_count()];
            let schedule = make_schedule(kind, 1.7, &durations, Ramp::Cosine, 1.0).unwrap();
            let h = gate_hamiltonian(kind, schedule.clone());
            let fd_step = 1e-4 * schedule.min_segment_duration().unwrap();
            for _ in 0..12 {
                let t = rng.gen_range(0.0..schedule.total_duration());
                let p = schedule.sample(t);
                let closed = match kind {
                    GateKind::BitPhase => cd_bitphase_closed_form(&p).unwrap(),
                    GateKind::Phase => cd_phase_closed_form(&p).unwrap(),
                    GateKind::ControlledPhase => cd_cp_closed_form(&p).unwrap(),
                };
                let numeric = counterdiabatic_numeric(&h, t, fd_step, None).unwrap();
                let dev = max_abs_diff(closed.matrix.matrix(), numeric.matrix.matrix());
                assert!(dev < 1e-6, "{kind} at t = {t}: deviation {dev:.3e}");
            }
        }
    }

    #[test]
    fn correction_has_no_diagonal_blocks() {
        // Parallel-transport gauge: P_n H1 P_n = 0 for every eigenspace.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for kind in [GateKind::BitPhase, GateKind::Phase, GateKind::ControlledPhase] {
            let durations = vec![1.0; kind.segment_count()];
            let schedule = make_schedule(kind, 2.4, &durations, Ramp::Cosine, 1.0).unwrap();
            let h = gate_hamiltonian(kind, schedule.clone());
            for _ in 0..6 {
                let t = rng.gen_range(0.0..schedule.total_duration());
                let cd = counterdiabatic_numeric(&h, t, 1e-4, None).unwrap();
                let eig = crate::hilbert::eig_hermitian(&h.at(t).unwrap(), None).unwrap();
                for space in &eig.spaces {
                    let p = space.projector();
                    let block = p.dot(cd.matrix.matrix()).dot(&p);
                    assert!(
                        max_abs(&block) < 1e-8,
                        "{kind} diagonal block {:.3e} at t = {t}",
                        max_abs(&block)
                    );
                }
            }
        }
    }

    #[test]
    fn projectors_are_gauge_invariant() {
        // Remixing a degenerate eigenbasis by any unitary leaves the
        // projector, and with it the numeric correction, unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = ControlPoint::new(1.1, 0.6, 0.4, -0.8, 1.0).unwrap();
        let h = build_h0(GateKind::BitPhase, &p, &DfsEncoding::c1()).unwrap();
        let eig = crate::hilbert::eig_hermitian(&h, None).unwrap();
        let dark = eig.spaces.iter().find(|s| s.dim() == 2).unwrap();
        // Random 2x2 unitary from the QR phase trick.
        let a = random_hermitian(&mut rng, 2);
        let u = crate::hilbert::expm_minus_i_h_dt(&a, 1.0).unwrap();
        let remixed = dark.basis.dot(&u);
        let p_re = remixed.dot(&dagger(&remixed));
        assert!(max_abs_diff(&p_re, &dark.projector()) < 1e-13);
    }

    #[test]
    fn level_crossing_is_detected() {
        let layout = HilbertLayout::single("s", 2).unwrap();
        let h = ParamHamiltonian::new(layout, |t| sigma_z().mapv(|z| z * t));
        let err = counterdiabatic_numeric(&h, 0.0, 1e-4, None);
        assert!(matches!(err, Err(Error::LevelCrossing { .. })), "{err:?}");
    }

    #[test]
    fn bitphase_example_pure_theta_ramp() {
        // phi = 0 and phi_dot = 0: single entry pair +-i theta_dot between
        // 0L and a2.
        let p = ControlPoint::new(0.9, 0.0, 1.3, 0.0, 1.0).unwrap();
        let cd = cd_bitphase_closed_form(&p).unwrap();
        let m = cd.matrix.matrix();
        assert!((m[(1, 3)] - IM * 1.3).norm() < 1e-15);
        assert!((m[(3, 1)] + IM * 1.3).norm() < 1e-15);
        let mut rest = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) != (1, 3) && (i, j) != (3, 1) {
                    rest = rest.max(m[(i, j)].norm());
                }
            }
        }
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn phase_example_at_theta_pi() {
        // theta = pi, theta_dot = 0: purely diagonal, -phi_dot/2 on the
        // bright ancilla and +phi_dot/2 on 1L.
        let p = ControlPoint::new(PI, 0.3, 0.0, 0.7, 1.0).unwrap();
        let cd = cd_phase_closed_form(&p).unwrap();
        let m = cd.matrix.matrix();
        assert!((m[(0, 0)].re + 0.35).abs() < 1e-12);
        assert!((m[(2, 2)].re - 0.35).abs() < 1e-12);
        assert!(m[(3, 3)].norm() < 1e-12);
        assert!(m[(2, 3)].norm() < 1e-12);
        assert!(m[(1, 1)].norm() == 0.0);
    }

    #[test]
    fn phase_correction_never_touches_0l() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let p = ControlPoint::new(
                rng.gen_range(0.0..=PI),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                1.0,
            )
            .unwrap();
            let m = cd_phase_closed_form(&p).unwrap().matrix.into_matrix();
            for j in 0..4 {
                assert_eq!(m[(1, j)], C64::new(0.0, 0.0));
                assert_eq!(m[(j, 1)], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn cp_correction_never_touches_spectators() {
        let p = ControlPoint::new(1.9, 2.8, 0.7, -1.1, 1.0).unwrap();
        let m = cd_cp_closed_form(&p).unwrap().matrix.into_matrix();
        for spec in 0..3 {
            for j in 0..6 {
                assert_eq!(m[(spec, j)], C64::new(0.0, 0.0));
                assert_eq!(m[(j, spec)], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn param_hamiltonian_rejects_non_hermitian_generator() {
        let layout = HilbertLayout::single("s", 2).unwrap();
        let h = ParamHamiltonian::new(layout, |_| {
            ndarray::array![
                [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
                [C64::new(0.5, 0.0), C64::new(0.0, 0.0)]
            ]
        });
        assert!(h.at(0.0).is_err());
        assert!(counterdiabatic_numeric(&h, 0.0, 1e-4, None).is_err());
    }

    #[test]
    fn fd_step_must_be_positive() {
        let layout = HilbertLayout::single("s", 2).unwrap();
        let h = ParamHamiltonian::new(layout, |_| sigma_z());
        assert!(counterdiabatic_numeric(&h, 0.0, 0.0, None).is_err());
        assert!(counterdiabatic_numeric(&h, 0.0, -1e-4, None).is_err());
    }
}
