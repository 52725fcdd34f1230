//! Time integration: Schroedinger and Lindblad propagation on an adaptive
//! embedded Runge-Kutta 5(4) stepper (Dormand-Prince pair).
//!
//! The stepper lands exactly on every requested sample time and on every
//! declared breakpoint, so piecewise-smooth drives are never differentiated
//! across their knots. States are never renormalized: norm and trace drift
//! are measured and bounded instead, as integration-quality witnesses.

use crate::counterdiabatic::ParamHamiltonian;
use crate::error::{Error, Result};
use crate::hilbert::{
    dagger, hermitian_deviation, C64, DensityMatrix, Ket, IM,
};
use ndarray::{Array1, Array2, ArrayView2};

/// Maximum allowed |norm - 1| at any sample time of a unitary propagation.
pub const UNITARY_NORM_TOL: f64 = 1e-8;
/// Maximum allowed per-step hermitization correction in Lindblad runs.
pub const LINDBLAD_HERMITICITY_TOL: f64 = 1e-10;

/// Adaptive step-size control.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: None,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// States of a Schroedinger propagation at the requested sample times.
#[derive(Debug, Clone)]
pub struct UnitaryTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Ket>,
    /// max |norm - 1| over sample times.
    pub norm_drift: f64,
    pub stats: StepStats,
}

/// States of a Lindblad propagation at the requested sample times.
#[derive(Debug, Clone)]
pub struct LindbladTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Largest per-step hermitization correction applied to rho.
    pub max_hermiticity_correction: f64,
    /// max |tr rho - 1| over sample times.
    pub max_trace_deviation: f64,
    /// Most negative eigenvalue seen at any sample time.
    pub min_eigenvalue: f64,
    pub stats: StepStats,
}

/// One dissipation channel: jump operator with its rate. The effective jump
/// is sqrt(rate) * op.
#[derive(Debug, Clone)]
pub struct LindbladChannel {
    pub label: String,
    pub op: Array2<C64>,
    pub rate: f64,
}

/// Open-system model: a coherent drive plus dissipation channels.
#[derive(Debug)]
pub struct LindbladModel {
    h: ParamHamiltonian,
    channels: Vec<LindbladChannel>,
}

impl LindbladModel {
    pub fn new(h: ParamHamiltonian, channels: Vec<LindbladChannel>) -> Result<Self> {
        let dim = h.layout().dim();
        for ch in &channels {
            if ch.op.nrows() != dim || ch.op.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: ch.op.nrows(),
                });
            }
            if !(ch.rate >= 0.0) || !ch.rate.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "channel `{}` rate {} must be finite and >= 0",
                    ch.label, ch.rate
                )));
            }
        }
        Ok(Self { h, channels })
    }

    pub fn hamiltonian(&self) -> &ParamHamiltonian {
        &self.h
    }

    pub fn channels(&self) -> &[LindbladChannel] {
        &self.channels
    }
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) core.
// ---------------------------------------------------------------------------

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// b - b*: weights of the embedded error estimate (4th-order pair).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(out: &mut Array1<C64>, scale: f64, x: &Array1<C64>) {
    out.zip_mut_with(x, |o, &v| *o += v * scale);
}

/// Weighted max-norm of the embedded error estimate; <= 1 means accept.
fn error_norm(err: &Array1<C64>, y0: &Array1<C64>, y1: &Array1<C64>, ctrl: &StepControl) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..err.len() {
        let scale = ctrl.atol + ctrl.rtol * y0[i].norm().max(y1[i].norm());
        worst = worst.max(err[i].norm() / scale);
    }
    worst
}

struct RkRun<'a> {
    rhs: &'a dyn Fn(f64, &Array1<C64>) -> Array1<C64>,
    /// Applied to the state after each accepted step; returns the size of
    /// the correction (0 when absent), which invalidates FSAL reuse.
    project: Option<&'a dyn Fn(&mut Array1<C64>) -> f64>,
    ctrl: StepControl,
}

impl RkRun<'_> {
    /// Integrates over the (strictly increasing) grid, calling `observe`
    /// at every grid point including the first. Returns stats and the
    /// largest projection correction.
    fn run(
        &self,
        y0: Array1<C64>,
        grid: &[f64],
        mut observe: impl FnMut(usize, f64, &Array1<C64>) -> Result<()>,
    ) -> Result<(StepStats, f64)> {
        let span = grid[grid.len() - 1] - grid[0];
        let h_floor = (span * 1e-14).max(f64::MIN_POSITIVE * 64.0);
        let mut stats = StepStats::default();
        let mut max_correction = 0.0f64;
        let mut y = y0;
        observe(0, grid[0], &y)?;

        let eval = |t: f64, y: &Array1<C64>, stats: &mut StepStats| {
            stats.rhs_evals += 1;
            (self.rhs)(t, y)
        };

        let mut h_try = self.ctrl.initial_step.unwrap_or(span / 100.0);
        if let Some(hm) = self.ctrl.max_step {
            h_try = h_try.min(hm);
        }
        let mut k1: Option<Array1<C64>> = None;

        for (i, w) in grid.windows(2).enumerate() {
            let (ta, tb) = (w[0], w[1]);
            let mut t = ta;
            let mut rejects_in_a_row = 0usize;
            while t < tb {
                let mut h = h_try.min(tb - t);
                if let Some(hm) = self.ctrl.max_step {
                    h = h.min(hm);
                }
                if h < h_floor && tb - t > h_floor {
                    return Err(Error::IntegrationFailure(format!(
                        "step size underflow at t = {t} (h = {h:.3e})"
                    )));
                }

                let k1v = match k1.take() {
                    Some(k) => k,
                    None => eval(t, &y, &mut stats),
                };
                let mut y2 = y.clone();
                axpy(&mut y2, h * A21, &k1v);
                let k2 = eval(t + C2 * h, &y2, &mut stats);
                let mut y3 = y.clone();
                axpy(&mut y3, h * A31, &k1v);
                axpy(&mut y3, h * A32, &k2);
                let k3 = eval(t + C3 * h, &y3, &mut stats);
                let mut y4 = y.clone();
                axpy(&mut y4, h * A41, &k1v);
                axpy(&mut y4, h * A42, &k2);
                axpy(&mut y4, h * A43, &k3);
                let k4 = eval(t + C4 * h, &y4, &mut stats);
                let mut y5 = y.clone();
                axpy(&mut y5, h * A51, &k1v);
                axpy(&mut y5, h * A52, &k2);
                axpy(&mut y5, h * A53, &k3);
                axpy(&mut y5, h * A54, &k4);
                let k5 = eval(t + C5 * h, &y5, &mut stats);
                let mut y6 = y.clone();
                axpy(&mut y6, h * A61, &k1v);
                axpy(&mut y6, h * A62, &k2);
                axpy(&mut y6, h * A63, &k3);
                axpy(&mut y6, h * A64, &k4);
                axpy(&mut y6, h * A65, &k5);
                let k6 = eval(t + h, &y6, &mut stats);

                let mut y_new = y.clone();
                axpy(&mut y_new, h * B1, &k1v);
                axpy(&mut y_new, h * B3, &k3);
                axpy(&mut y_new, h * B4, &k4);
                axpy(&mut y_new, h * B5, &k5);
                axpy(&mut y_new, h * B6, &k6);
                let k7 = eval(t + h, &y_new, &mut stats);

                let mut err = Array1::zeros(y.len());
                axpy(&mut err, h * E1, &k1v);
                axpy(&mut err, h * E3, &k3);
                axpy(&mut err, h * E4, &k4);
                axpy(&mut err, h * E5, &k5);
                axpy(&mut err, h * E6, &k6);
                axpy(&mut err, h * E7, &k7);
                let en = error_norm(&err, &y, &y_new, &self.ctrl);

                let scale = (0.9 * en.powf(-0.2)).clamp(0.2, 5.0);
                if en <= 1.0 {
                    t += h;
                    y = y_new;
                    stats.accepted += 1;
                    rejects_in_a_row = 0;
                    let correction = match self.project {
                        Some(p) => p(&mut y),
                        None => 0.0,
                    };
                    max_correction = max_correction.max(correction);
                    // FSAL: reuse k7 unless projection moved the state.
                    k1 = (correction == 0.0).then_some(k7);
                    h_try = h * scale;
                } else {
                    stats.rejected += 1;
                    rejects_in_a_row += 1;
                    k1 = Some(k1v);
                    if rejects_in_a_row > 100 {
                        return Err(Error::IntegrationFailure(format!(
                            "over 100 consecutive step rejections at t = {t}"
                        )));
                    }
                    h_try = h * scale.min(1.0);
                }
            }
            // Crossing a breakpoint invalidates the cached derivative: the
            // drive may jump there.
            k1 = None;
            observe(i + 1, tb, &y)?;
        }
        Ok((stats, max_correction))
    }
}

/// Merges sample times and breakpoints into one strictly increasing stop
/// grid; returns the grid plus, for each entry, whether it is a sample.
fn build_grid(sample_times: &[f64], breakpoints: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if sample_times.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two sample times (start and end)".into(),
        ));
    }
    if sample_times.iter().any(|t| !t.is_finite())
        || breakpoints.iter().any(|t| !t.is_finite())
    {
        return Err(Error::InvalidParameter("non-finite time".into()));
    }
    if sample_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "sample times must be strictly increasing".into(),
        ));
    }
    let (t0, tf) = (sample_times[0], sample_times[sample_times.len() - 1]);
    let merge_tol = (tf - t0) * 1e-12;
    let mut grid: Vec<(f64, bool)> = sample_times.iter().map(|&t| (t, true)).collect();
    for &b in breakpoints {
        if b > t0 && b < tf && !sample_times.iter().any(|&s| (s - b).abs() <= merge_tol) {
            grid.push((b, false));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    grid.dedup_by(|a, b| (a.0 - b.0).abs() <= merge_tol);
    Ok(grid.into_iter().unzip())
}

/// Integrates i d/dt |psi> = H(t) |psi| from the first to the last sample
/// time. `breakpoints` are times where H may be non-smooth (segment knots);
/// the stepper never integrates across them in a single step.
pub fn propagate_unitary(
    h: &ParamHamiltonian,
    psi0: &Ket,
    sample_times: &[f64],
    breakpoints: &[f64],
    ctrl: &StepControl,
) -> Result<UnitaryTrajectory> {
    if psi0.layout() != h.layout() {
        return Err(Error::LayoutMismatch(
            "initial state layout differs from the Hamiltonian's".into(),
        ));
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm: psi0.norm() });
    }
    let (grid, is_sample) = build_grid(sample_times, breakpoints)?;
    // Validate hermiticity once per stop interval rather than per RHS call.
    for &t in &grid {
        h.at(t)?;
    }
    let rhs = |t: f64, y: &Array1<C64>| {
        let m = h.matrix_at(t);
        m.dot(y).mapv(|z| -IM * z)
    };
    let mut times = Vec::new();
    let mut states: Vec<Ket> = Vec::new();
    let mut norm_drift = 0.0f64;
    let run = RkRun {
        rhs: &rhs,
        project: None,
        ctrl: *ctrl,
    };
    let layout = h.layout().clone();
    let (stats, _) = run.run(psi0.amplitudes().clone(), &grid, |idx, t, y| {
        if is_sample[idx] {
            let ket = Ket::new(layout.clone(), y.clone())?;
            let drift = (ket.norm() - 1.0).abs();
            norm_drift = norm_drift.max(drift);
            if drift > UNITARY_NORM_TOL {
                return Err(Error::IntegrationFailure(format!(
                    "norm drifted by {drift:.3e} at t = {t} (tolerance {UNITARY_NORM_TOL:.0e}); \
                     tighten rtol/atol"
                )));
            }
            times.push(t);
            states.push(ket);
        }
        Ok(())
    })?;
    Ok(UnitaryTrajectory {
        times,
        states,
        norm_drift,
        stats,
    })
}

/// Integrates the Lindblad master equation
/// d rho / dt = -i [H, rho] + sum_k (L_k rho L_k^dag - {L_k^dag L_k, rho}/2)
/// with L_k = sqrt(rate_k) op_k. The state is hermitized after every
/// accepted step (corrections beyond [`LINDBLAD_HERMITICITY_TOL`] fail the
/// run); trace and positivity are validated at every sample time.
pub fn propagate_lindblad(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    sample_times: &[f64],
    breakpoints: &[f64],
    ctrl: &StepControl,
) -> Result<LindbladTrajectory> {
    let layout = model.h.layout().clone();
    if rho0.layout() != &layout {
        return Err(Error::LayoutMismatch(
            "initial density matrix layout differs from the Hamiltonian's".into(),
        ));
    }
    let dim = layout.dim();
    let (grid, is_sample) = build_grid(sample_times, breakpoints)?;
    for &t in &grid {
        model.h.at(t)?;
    }

    let jumps: Vec<Array2<C64>> = model
        .channels
        .iter()
        .map(|c| c.op.mapv(|z| z * c.rate.sqrt()))
        .collect();
    let jump_dags: Vec<Array2<C64>> = jumps.iter().map(dagger).collect();
    // K = sum_k L_k^dag L_k / 2, the anticommutator kernel.
    let mut kernel: Array2<C64> = Array2::zeros((dim, dim));
    for (l, ld) in jumps.iter().zip(&jump_dags) {
        kernel = kernel + ld.dot(l).mapv(|z| z / 2.0);
    }

    let rhs = |t: f64, y: &Array1<C64>| {
        let rho = ArrayView2::from_shape((dim, dim), y.as_slice().expect("contiguous"))
            .expect("square state");
        let hm = model.h.matrix_at(t);
        let mut out = (hm.dot(&rho) - rho.dot(&hm)).mapv(|z| -IM * z);
        for (l, ld) in jumps.iter().zip(&jump_dags) {
            out = out + l.dot(&rho).dot(ld);
        }
        out = out - kernel.dot(&rho) - rho.dot(&kernel);
        out.into_shape(dim * dim).expect("flatten")
    };

    let project = |y: &mut Array1<C64>| -> f64 {
        let rho = ArrayView2::from_shape((dim, dim), y.as_slice().expect("contiguous"))
            .expect("square state");
        let dev = hermitian_deviation(&rho.to_owned()) / 2.0;
        let fixed = crate::hilbert::hermitize(&rho.to_owned());
        for (dst, src) in y.iter_mut().zip(fixed.iter()) {
            *dst = *src;
        }
        dev
    };

    let mut times = Vec::new();
    let mut states: Vec<DensityMatrix> = Vec::new();
    let mut max_trace_deviation = 0.0f64;
    let mut min_eigenvalue = f64::INFINITY;
    let run = RkRun {
        rhs: &rhs,
        project: Some(&project),
        ctrl: *ctrl,
    };
    let y0 = rho0
        .matrix()
        .to_owned()
        .into_shape(dim * dim)
        .expect("flatten");
    let (stats, max_hermiticity_correction) = run.run(y0, &grid, |idx, t, y| {
        if is_sample[idx] {
            let m = ArrayView2::from_shape((dim, dim), y.as_slice().expect("contiguous"))
                .expect("square state")
                .to_owned();
            let dm = DensityMatrix::new(layout.clone(), m).map_err(|e| {
                Error::IntegrationFailure(format!("state integrity lost at t = {t}: {e}"))
            })?;
            max_trace_deviation = max_trace_deviation.max((dm.trace() - 1.0).abs());
            let eig = crate::hilbert::eig_hermitian_raw(
                &crate::hilbert::hermitize(dm.matrix()),
                None,
            )?;
            if let Some(lo) = eig.values.first() {
                min_eigenvalue = min_eigenvalue.min(*lo);
            }
            times.push(t);
            states.push(dm);
        }
        Ok(())
    })?;
    if max_hermiticity_correction > LINDBLAD_HERMITICITY_TOL {
        return Err(Error::IntegrationFailure(format!(
            "hermitization corrections reached {max_hermiticity_correction:.3e} \
             (tolerance {LINDBLAD_HERMITICITY_TOL:.0e})"
        )));
    }
    Ok(LindbladTrajectory {
        times,
        states,
        max_hermiticity_correction,
        max_trace_deviation,
        min_eigenvalue,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{expm_minus_i_h_dt, sigma_minus, sigma_x, sigma_y, sigma_z, HilbertLayout};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn qubit() -> HilbertLayout {
        HilbertLayout::single("q", 2).unwrap()
    }

    fn constant(m: Array2<C64>) -> ParamHamiltonian {
        ParamHamiltonian::new(qubit(), move |_| m.clone())
    }

    #[test]
    fn rabi_oscillation_matches_analytic() {
        let omega = 2.0;
        let h = constant(sigma_x().mapv(|z| z * (omega / 2.0)));
        let psi0 = Ket::basis(qubit(), 0).unwrap();
        let samples: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let traj =
            propagate_unitary(&h, &psi0, &samples, &[], &StepControl::default()).unwrap();
        for (t, psi) in traj.times.iter().zip(&traj.states) {
            let c0 = (omega * t / 2.0).cos();
            let c1 = -(omega * t / 2.0).sin();
            assert!((psi.amplitudes()[0] - C64::new(c0, 0.0)).norm() < 1e-9, "t = {t}");
            assert!((psi.amplitudes()[1] - C64::new(0.0, c1)).norm() < 1e-9, "t = {t}");
        }
        assert!(traj.norm_drift < 1e-9);
    }

    #[test]
    fn time_dependent_phase_accumulates_integral() {
        // H(t) = cos(t) sz commutes with itself: |psi> picks up the phase
        // exp(-i sin(t) sz).
        let h = ParamHamiltonian::new(qubit(), |t| sigma_z().mapv(|z| z * t.cos()));
        let amps = array![C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)];
        let psi0 = Ket::new(qubit(), amps).unwrap();
        let traj =
            propagate_unitary(&h, &psi0, &[0.0, 1.3, 2.9], &[], &StepControl::default())
                .unwrap();
        for (t, psi) in traj.times.iter().zip(&traj.states).skip(1) {
            let u = expm_minus_i_h_dt(&sigma_z(), t.sin()).unwrap();
            let expected = u.dot(psi0.amplitudes());
            let dev = psi
                .amplitudes()
                .iter()
                .zip(expected.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(dev < 1e-9, "t = {t}: {dev:.3e}");
        }
    }

    #[test]
    fn breakpoints_handle_discontinuous_drives() {
        // H jumps from sx to sy at t = 1; with the knot declared, the
        // product of the two exact propagators is reproduced.
        let h = ParamHamiltonian::new(qubit(), |t| if t < 1.0 { sigma_x() } else { sigma_y() });
        let psi0 = Ket::basis(qubit(), 0).unwrap();
        let traj =
            propagate_unitary(&h, &psi0, &[0.0, 1.8], &[1.0], &StepControl::default()).unwrap();
        let u = expm_minus_i_h_dt(&sigma_y(), 0.8)
            .unwrap()
            .dot(&expm_minus_i_h_dt(&sigma_x(), 1.0).unwrap());
        let expected = u.dot(psi0.amplitudes());
        let got = traj.states.last().unwrap().amplitudes();
        let dev = got
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "{dev:.3e}");
    }

    #[test]
    fn amplitude_damping_matches_exponential() {
        // Pure decay: rho_11(t) = e^{-gamma t}, coherence decays at half
        // rate.
        let gamma = 0.35;
        let h = constant(Array2::zeros((2, 2)));
        let model = LindbladModel::new(
            h,
            vec![LindbladChannel {
                label: "decay".into(),
                op: sigma_minus(),
                rate: gamma,
            }],
        )
        .unwrap();
        let amps = array![C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)];
        let rho0 = Ket::new(qubit(), amps).unwrap().to_density().unwrap();
        let samples: Vec<f64> = (0..=8).map(|k| k as f64 * 0.5).collect();
        let traj =
            propagate_lindblad(&model, &rho0, &samples, &[], &StepControl::default()).unwrap();
        for (t, rho) in traj.times.iter().zip(&traj.states) {
            let p1 = 0.5 * (-gamma * t).exp();
            let coh = 0.5 * (-gamma * t / 2.0).exp();
            assert!(
                (rho.matrix()[(1, 1)].re - p1).abs() < 1e-8,
                "population at t = {t}"
            );
            assert!(
                (rho.matrix()[(0, 1)].norm() - coh).abs() < 1e-8,
                "coherence at t = {t}"
            );
        }
        assert!(traj.max_trace_deviation < 1e-10);
        assert!(traj.min_eigenvalue > -1e-12);
        assert!(traj.max_hermiticity_correction < 1e-12);
    }

    #[test]
    fn dephasing_decays_coherence_only() {
        let rate = 0.8;
        let h = constant(Array2::zeros((2, 2)));
        let model = LindbladModel::new(
            h,
            vec![LindbladChannel {
                label: "dephase".into(),
                op: sigma_z(),
                rate,
            }],
        )
        .unwrap();
        let amps = array![C64::new(0.6, 0.0), C64::new(0.8, 0.0)];
        let rho0 = Ket::new(qubit(), amps).unwrap().to_density().unwrap();
        let traj = propagate_lindblad(
            &model,
            &rho0,
            &[0.0, 0.7, 1.5],
            &[],
            &StepControl::default(),
        )
        .unwrap();
        for (t, rho) in traj.times.iter().zip(&traj.states) {
            assert_abs_diff_eq!(rho.matrix()[(0, 0)].re, 0.36, epsilon = 1e-9);
            let coh = 0.48 * (-2.0 * rate * t).exp();
            assert!((rho.matrix()[(0, 1)].re - coh).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn driven_damped_qubit_stays_physical() {
        let model = LindbladModel::new(
            constant(sigma_x()),
            vec![LindbladChannel {
                label: "decay".into(),
                op: sigma_minus(),
                rate: 0.4,
            }],
        )
        .unwrap();
        let rho0 = Ket::basis(qubit(), 1).unwrap().to_density().unwrap();
        let samples: Vec<f64> = (0..=10).map(|k| k as f64 * 0.4).collect();
        let traj =
            propagate_lindblad(&model, &rho0, &samples, &[], &StepControl::default()).unwrap();
        assert!(traj.max_trace_deviation <= 1e-8);
        assert!(traj.min_eigenvalue >= -1e-7);
        assert!(traj.max_hermiticity_correction <= 1e-10);
        for rho in &traj.states {
            assert!(rho.purity() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn max_step_is_honored() {
        let h = constant(sigma_x());
        let psi0 = Ket::basis(qubit(), 0).unwrap();
        let ctrl = StepControl {
            max_step: Some(0.01),
            ..Default::default()
        };
        let traj = propagate_unitary(&h, &psi0, &[0.0, 1.0], &[], &ctrl).unwrap();
        assert!(traj.stats.accepted >= 100, "{:?}", traj.stats);
    }

    #[test]
    fn input_validation() {
        let h = constant(sigma_x());
        let psi0 = Ket::basis(qubit(), 0).unwrap();
        let ctrl = StepControl::default();
        // Too few samples, unsorted samples, non-finite times.
        assert!(propagate_unitary(&h, &psi0, &[0.0], &[], &ctrl).is_err());
        assert!(propagate_unitary(&h, &psi0, &[0.0, 2.0, 1.0], &[], &ctrl).is_err());
        assert!(propagate_unitary(&h, &psi0, &[0.0, f64::NAN], &[], &ctrl).is_err());
        // Unnormalized initial state.
        let bad = Ket::new(qubit(), array![C64::new(0.5, 0.0), C64::new(0.0, 0.0)]).unwrap();
        assert!(matches!(
            propagate_unitary(&h, &bad, &[0.0, 1.0], &[], &ctrl),
            Err(Error::NotNormalized { .. })
        ));
        // Layout mismatch.
        let other = Ket::basis(HilbertLayout::single("r", 2).unwrap(), 0).unwrap();
        assert!(matches!(
            propagate_unitary(&h, &other, &[0.0, 1.0], &[], &ctrl),
            Err(Error::LayoutMismatch(_))
        ));
        // Negative channel rate.
        let bad_model = LindbladModel::new(
            constant(sigma_x()),
            vec![LindbladChannel {
                label: "x".into(),
                op: sigma_minus(),
                rate: -1.0,
            }],
        );
        assert!(bad_model.is_err());
    }

    #[test]
    fn propagator_agrees_with_matrix_exponential_on_bigger_spaces() {
        // 6-level random Hermitian drive, constant: U = exp(-i H t).
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let dim = 6;
        let layout = HilbertLayout::single("s", dim).unwrap();
        let mut m: Array2<C64> = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let m = crate::hilbert::hermitize(&m);
        let h = ParamHamiltonian::new(layout.clone(), {
            let m = m.clone();
            move |_| m.clone()
        });
        let psi0 = Ket::basis(layout, 2).unwrap();
        let traj =
            propagate_unitary(&h, &psi0, &[0.0, 2.3], &[], &StepControl::default()).unwrap();
        let u = expm_minus_i_h_dt(&m, 2.3).unwrap();
        let expected = u.dot(psi0.amplitudes());
        let got = traj.states.last().unwrap().amplitudes().to_owned();
        let diff = (&got - &expected).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 5e-9, "{diff:.3e}");
    }
}
