//! Physical layer: cavity-mediated coupling of NV-center spins.
//!
//! Each center is a two-level system Raman-coupled to one cavity mode with
//! strength g and a two-photon detuning delta_j. In the dispersive regime
//! (|delta_j| >> g) the cavity mediates an exchange ("flip-flop")
//! interaction between centers j and k with effective Rabi frequency
//! lambda'_jk = (g^2/2)(1/delta_j + 1/delta_k); pair couplings are switched
//! off by choosing opposite detunings. This module holds the coupling
//! formulas, the full qubit (x) cavity interaction Hamiltonian, the
//! dispersive effective Hamiltonian, and the inverse solver that maps a
//! desired coupling pattern back to per-center detunings and laser phases.
//!
//! Units: angular frequencies in rad/us, plain frequencies in cycles/us
//! (= MHz), lengths in um, volumes in um^3.

use crate::error::{Error, Result};
use crate::hilbert::{
    dagger, destroy, hermitize, identity, kron, C64, HilbertLayout, Op,
};
use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use std::f64::consts::TAU;

/// Speed of light in um/us.
const SPEED_OF_LIGHT: f64 = 2.99792458e8;

/// Minimum |delta| / g ratio for the dispersive approximation.
pub const DISPERSIVE_RATIO: f64 = 10.0;

/// Phase-assignment consistency tolerance in the laser solver (radians).
pub const PHASE_CONSISTENCY_TOL: f64 = 1e-10;

/// Static platform parameters of one NV-microcavity node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvParams {
    /// Spontaneous decay rate of the optical excited state, rad/us.
    pub gamma0: f64,
    /// |E(r)/E_max|, the relative field strength at the center's location.
    pub field_ratio: f64,
    /// Optical transition frequency, plain cycles/us (MHz).
    pub nu: f64,
    /// Cavity mode volume, um^3.
    pub v_m: f64,
    /// Laser Rabi frequency, rad/us.
    pub omega_l: f64,
    /// Optical detuning of the Raman beams, rad/us.
    pub delta_opt: f64,
    /// Cavity frequency, rad/us (recorded; not used by the formulas below).
    pub omega_c: f64,
    /// Qubit splitting, rad/us (recorded).
    pub omega_10: f64,
}

impl NvParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma0", self.gamma0),
            ("nu", self.nu),
            ("v_m", self.v_m),
            ("omega_l", self.omega_l),
            ("delta_opt", self.delta_opt),
            ("omega_c", self.omega_c),
            ("omega_10", self.omega_10),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "NvParams.{name} = {v} must be finite and > 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.field_ratio) {
            return Err(Error::InvalidParameter(format!(
                "NvParams.field_ratio = {} outside [0, 1]",
                self.field_ratio
            )));
        }
        Ok(())
    }
}

/// Vacuum coupling strength G = Gamma0 |E/E_max| sqrt(V_a / V_m) with the
/// characteristic volume V_a = 3 c^3 / (4 pi nu^2 Gamma0_plain) evaluated in
/// plain (cycle) frequencies.
pub fn coupling_strength_g(p: &NvParams) -> Result<f64> {
    p.validate()?;
    let gamma0_plain = p.gamma0 / TAU;
    let v_a = 3.0 * SPEED_OF_LIGHT.powi(3) / (4.0 * std::f64::consts::PI * p.nu * p.nu * gamma0_plain);
    Ok(p.gamma0 * p.field_ratio * (v_a / p.v_m).sqrt())
}

/// Raman coupling g = G Omega_L (1/(Delta + delta) + 1/Delta). The caller
/// is responsible for staying in the Raman regime Delta >> G, Omega_L.
pub fn raman_coupling_g(g_vac: f64, omega_l: f64, delta_opt: f64, delta: f64) -> Result<f64> {
    if delta_opt == 0.0 || delta_opt + delta == 0.0 {
        return Err(Error::InvalidParameter(
            "optical detunings Delta and Delta + delta must be nonzero".into(),
        ));
    }
    Ok(g_vac * omega_l * (1.0 / (delta_opt + delta) + 1.0 / delta_opt))
}

/// Effective pair Rabi frequency lambda'_jk = (g^2/2)(1/delta_j + 1/delta_k),
/// signed. Opposite detunings cancel the pair coupling exactly.
pub fn effective_rabi(g: f64, delta_j: f64, delta_k: f64) -> Result<f64> {
    if delta_j == 0.0 || delta_k == 0.0 {
        return Err(Error::InvalidParameter(
            "two-photon detunings must be nonzero".into(),
        ));
    }
    Ok(g * g / 2.0 * (1.0 / delta_j + 1.0 / delta_k))
}

/// One desired pair coupling: strength lambda (signed, rad/us) and phase
/// (radians) for the Hermitian term
/// lambda (e^{i phase} sigma_j^- sigma_k^+ + h.c.).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCoupling {
    pub j: usize,
    pub k: usize,
    pub lambda: f64,
    pub phase: f64,
}

/// A symmetric set of pair couplings over `n_centers` centers (1-based
/// indices). Pairs are canonicalized to j < k; the (k, j) orientation is the
/// same physical term with negated phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCouplingProgram {
    n_centers: usize,
    pairs: Vec<PairCoupling>,
}

impl PairCouplingProgram {
    pub fn new(n_centers: usize, pairs: Vec<PairCoupling>) -> Result<Self> {
        if n_centers == 0 {
            return Err(Error::InvalidParameter("need at least one center".into()));
        }
        let mut canonical: Vec<PairCoupling> = Vec::with_capacity(pairs.len());
        for mut p in pairs {
            if p.j == p.k || p.j < 1 || p.k < 1 || p.j > n_centers || p.k > n_centers {
                return Err(Error::InvalidParameter(format!(
                    "pair ({}, {}) invalid for {n_centers} centers",
                    p.j, p.k
                )));
            }
            if !p.lambda.is_finite() || !p.phase.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "pair ({}, {}) has non-finite coupling",
                    p.j, p.k
                )));
            }
            if p.j > p.k {
                p = PairCoupling {
                    j: p.k,
                    k: p.j,
                    lambda: p.lambda,
                    phase: -p.phase,
                };
            }
            if canonical.iter().any(|q| (q.j, q.k) == (p.j, p.k)) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate pair ({}, {})",
                    p.j, p.k
                )));
            }
            canonical.push(p);
        }
        Ok(Self {
            n_centers,
            pairs: canonical,
        })
    }

    pub fn n_centers(&self) -> usize {
        self.n_centers
    }

    pub fn pairs(&self) -> &[PairCoupling] {
        &self.pairs
    }

    /// Centers participating in at least one nonzero coupling.
    pub fn active_centers(&self) -> Vec<usize> {
        let mut active: Vec<usize> = Vec::new();
        for p in &self.pairs {
            if p.lambda != 0.0 {
                for c in [p.j, p.k] {
                    if !active.contains(&c) {
                        active.push(c);
                    }
                }
            }
        }
        active.sort_unstable();
        active
    }
}

/// Laser drive configuration: common Raman amplitude, per-center two-photon
/// detunings and phases, activity switches, and the cavity truncation.
/// `fock_cutoff` is the highest retained photon number (cavity dimension
/// cutoff + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct NvDriveConfig {
    pub n_centers: usize,
    /// Common Raman coupling for active centers, rad/us.
    pub g: f64,
    /// Two-photon detunings, rad/us (ignored for inactive centers).
    pub delta: Vec<f64>,
    /// Laser phases, radians (ignored for inactive centers).
    pub phi: Vec<f64>,
    /// Laser on/off per center; off means the center never couples.
    pub active: Vec<bool>,
    /// Per-center amplitude override (time-envelope extension); when set,
    /// supersedes `g`/`active` for the coupling amplitude.
    pub per_center_g: Option<Vec<f64>>,
    pub fock_cutoff: usize,
    pub include_stark: bool,
}

impl NvDriveConfig {
    /// Validated constructor enforcing the dispersive guard
    /// |delta_j| >= [`DISPERSIVE_RATIO`] * g for every active center.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_centers: usize,
        g: f64,
        delta: Vec<f64>,
        phi: Vec<f64>,
        active: Vec<bool>,
        fock_cutoff: usize,
        include_stark: bool,
    ) -> Result<Self> {
        let cfg = Self::new_unguarded(n_centers, g, delta, phi, active, fock_cutoff, include_stark)?;
        for j in 0..n_centers {
            if cfg.active[j] && cfg.delta[j].abs() < DISPERSIVE_RATIO * cfg.g {
                return Err(Error::InvalidParameter(format!(
                    "center {}: |delta| = {:.3e} violates the dispersive guard \
                     |delta| >= {DISPERSIVE_RATIO} g = {:.3e}",
                    j + 1,
                    cfg.delta[j].abs(),
                    DISPERSIVE_RATIO * cfg.g
                )));
            }
        }
        Ok(cfg)
    }

    /// As [`NvDriveConfig::new`] without the dispersive guard, for regime
    /// studies that deliberately leave the dispersive window.
    #[allow(clippy::too_many_arguments)]
    pub fn new_unguarded(
        n_centers: usize,
        g: f64,
        delta: Vec<f64>,
        phi: Vec<f64>,
        active: Vec<bool>,
        fock_cutoff: usize,
        include_stark: bool,
    ) -> Result<Self> {
        if n_centers == 0 {
            return Err(Error::InvalidParameter("need at least one center".into()));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "g = {g} must be finite and >= 0"
            )));
        }
        if delta.len() != n_centers || phi.len() != n_centers || active.len() != n_centers {
            return Err(Error::DimensionMismatch {
                expected: n_centers,
                got: delta.len().min(phi.len()).min(active.len()),
            });
        }
        if fock_cutoff < 1 {
            return Err(Error::InvalidParameter(
                "fock_cutoff must be >= 1 (at least one photon state)".into(),
            ));
        }
        for j in 0..n_centers {
            if active[j] && (delta[j] == 0.0 || !delta[j].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "center {}: active laser needs a finite nonzero detuning",
                    j + 1
                )));
            }
            if !phi[j].is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "center {}: non-finite phase",
                    j + 1
                )));
            }
        }
        Ok(Self {
            n_centers,
            g,
            delta,
            phi,
            active,
            per_center_g: None,
            fock_cutoff,
            include_stark,
        })
    }

    /// Installs per-center amplitudes (typically a time envelope sample).
    pub fn with_amplitudes(mut self, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != self.n_centers {
            return Err(Error::DimensionMismatch {
                expected: self.n_centers,
                got: amplitudes.len(),
            });
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        self.per_center_g = Some(amplitudes);
        Ok(self)
    }

    /// Coupling amplitude of center j (1-based).
    pub fn amplitude(&self, j: usize) -> f64 {
        match &self.per_center_g {
            Some(gs) => gs[j - 1],
            None => {
                if self.active[j - 1] {
                    self.g
                } else {
                    0.0
                }
            }
        }
    }

    /// Cavity factor dimension (photon numbers 0..=fock_cutoff).
    pub fn fock_dim(&self) -> usize {
        self.fock_cutoff + 1
    }
}

/// Layout of `n` qubit factors labeled q1..qn (q1 most significant).
pub fn qubits_layout(n: usize) -> Result<HilbertLayout> {
    HilbertLayout::new((1..=n).map(|j| (format!("q{j}"), 2)).collect())
}

/// Layout of n qubits followed by the cavity mode (dimension cutoff + 1).
pub fn qubit_cavity_layout(n: usize, fock_cutoff: usize) -> Result<HilbertLayout> {
    let mut factors: Vec<(String, usize)> = (1..=n).map(|j| (format!("q{j}"), 2)).collect();
    factors.push(("cav".into(), fock_cutoff + 1));
    HilbertLayout::new(factors)
}

/// Places a single-qubit matrix on center j (1-based) of an n-qubit register,
/// identity elsewhere.
fn on_site(n: usize, j: usize, m: &Array2<C64>) -> Array2<C64> {
    let mut out = identity(1);
    for q in 1..=n {
        let factor = if q == j { m.clone() } else { identity(2) };
        out = kron(&out, &factor);
    }
    out
}

/// |1><1| on center j of an n-qubit register.
pub fn number_on_site(n: usize, j: usize) -> Result<Array2<C64>> {
    check_site(n, j)?;
    Ok(on_site(n, j, &crate::hilbert::number(2)))
}

/// The bare exchange operator sigma_j^- sigma_k^+ on an n-qubit register.
pub fn exchange_raw(n: usize, j: usize, k: usize) -> Result<Array2<C64>> {
    check_site(n, j)?;
    check_site(n, k)?;
    if j == k {
        return Err(Error::InvalidParameter(
            "exchange needs distinct centers".into(),
        ));
    }
    Ok(on_site(n, j, &crate::hilbert::sigma_minus())
        .dot(&on_site(n, k, &crate::hilbert::sigma_plus())))
}

/// The Hermitian flip-flop e^{i phase} sigma_j^- sigma_k^+ + h.c. on an
/// n-qubit register.
pub fn flip_flop(n: usize, j: usize, k: usize, phase: f64) -> Result<Array2<C64>> {
    let term = exchange_raw(n, j, k)?.mapv(|z| z * C64::new(0.0, phase).exp());
    Ok(&term + &dagger(&term))
}

/// Collective lowering operator S^- = sum_j sigma_j^- on an n-qubit register.
pub fn collective_lowering(n: usize) -> Array2<C64> {
    let dim = 1usize << n;
    let mut out: Array2<C64> = Array2::zeros((dim, dim));
    for j in 1..=n {
        out = out + on_site(n, j, &crate::hilbert::sigma_minus());
    }
    out
}

/// Collective dephasing operator S^z = sum_j (|1><1| - |0><0|)_j.
pub fn collective_z(n: usize) -> Array2<C64> {
    let dim = 1usize << n;
    let mut out: Array2<C64> = Array2::zeros((dim, dim));
    let sz = crate::hilbert::sigma_z().mapv(|z| -z);
    for j in 1..=n {
        out = out + on_site(n, j, &sz);
    }
    out
}

fn check_site(n: usize, j: usize) -> Result<()> {
    if j < 1 || j > n {
        return Err(Error::InvalidParameter(format!(
            "center index {j} outside 1..={n}"
        )));
    }
    Ok(())
}

/// The raw exchange operator a sigma_j^+ on the qubits (x) cavity register.
pub fn cavity_exchange_term(n: usize, fock_cutoff: usize, j: usize) -> Result<Array2<C64>> {
    check_site(n, j)?;
    let qubit_part = on_site(n, j, &crate::hilbert::sigma_plus());
    Ok(kron(&qubit_part, &destroy(fock_cutoff + 1)))
}

/// Total excitation number a^dag a + sum_j |1><1|_j on the qubits (x) cavity
/// register; the interaction Hamiltonian commutes with it.
pub fn excitation_number(n: usize, fock_cutoff: usize) -> Array2<C64> {
    let fock_dim = fock_cutoff + 1;
    let qubit_dim = 1usize << n;
    let mut out = kron(&identity(qubit_dim), &crate::hilbert::number(fock_dim));
    for j in 1..=n {
        out = out + kron(&on_site(n, j, &crate::hilbert::number(2)), &identity(fock_dim));
    }
    out
}

/// Interaction-picture Hamiltonian of the driven register,
/// sum_j g_j a sigma_j^+ e^{-i(delta_j t - phi_j)} + h.c.
pub fn build_interaction_hamiltonian(cfg: &NvDriveConfig, t: f64) -> Result<Op> {
    let n = cfg.n_centers;
    let layout = qubit_cavity_layout(n, cfg.fock_cutoff)?;
    let dim = layout.dim();
    let mut m: Array2<C64> = Array2::zeros((dim, dim));
    for j in 1..=n {
        let amp = cfg.amplitude(j);
        if amp == 0.0 {
            continue;
        }
        let phase = C64::new(0.0, -(cfg.delta[j - 1] * t - cfg.phi[j - 1])).exp();
        let term = cavity_exchange_term(n, cfg.fock_cutoff, j)?.mapv(|z| z * amp * phase);
        m = m + &term + dagger(&term);
    }
    Op::hermitian(layout, hermitize(&m))
}

/// Dispersive effective Hamiltonian on the qubit register:
/// sum_{j<k} lambda_jk (e^{i phase_jk} sigma_j^- sigma_k^+ + h.c.), plus the
/// vacuum Stark diagonal sum_j (g_j^2 / delta_j) |1><1|_j when enabled.
pub fn build_effective_hamiltonian(
    prog: &PairCouplingProgram,
    cfg: &NvDriveConfig,
) -> Result<Op> {
    if prog.n_centers() != cfg.n_centers {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_centers,
            got: prog.n_centers(),
        });
    }
    let n = cfg.n_centers;
    let dim = 1usize << n;
    let mut m: Array2<C64> = Array2::zeros((dim, dim));
    for p in prog.pairs() {
        if p.lambda == 0.0 {
            continue;
        }
        m = m + flip_flop(n, p.j, p.k, p.phase)?.mapv(|z| z * p.lambda);
    }
    if cfg.include_stark {
        for j in 1..=n {
            let amp = cfg.amplitude(j);
            if amp == 0.0 {
                continue;
            }
            let shift = amp * amp / cfg.delta[j - 1];
            m = m + number_on_site(n, j)?.mapv(|z| z * shift);
        }
    }
    Op::hermitian(qubits_layout(n)?, hermitize(&m))
}

/// A solved laser program: the drive configuration realizing a coupling
/// pattern, with the linear-system residual (max |lambda_achieved -
/// lambda_target| over constrained pairs).
#[derive(Debug, Clone)]
pub struct LaserSolution {
    pub config: NvDriveConfig,
    pub residual: f64,
}

/// Inverts lambda_jk = (g^2/2)(1/delta_j + 1/delta_k) for per-center
/// detunings (least-squares / minimum-norm in x_j = 1/delta_j) and assigns
/// laser phases phi_j with phi_j - phi_k = phase_jk.
///
/// Centers appearing only in zero couplings get their laser switched off;
/// zero couplings between active centers become opposite-detuning
/// constraints. Fails with an infeasibility report when no phase assignment
/// exists (pairwise phases are not always realizable with one laser per
/// center), when a detuning would violate the dispersive guard, or when a
/// center would need an unbounded detuning.
pub fn solve_laser_program(
    targets: &PairCouplingProgram,
    g: f64,
    fock_cutoff: usize,
    include_stark: bool,
) -> Result<LaserSolution> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "g = {g} must be finite and > 0"
        )));
    }
    let n = targets.n_centers();
    let active = targets.active_centers();
    if active.is_empty() {
        let config = NvDriveConfig::new(
            n,
            g,
            vec![0.0; n],
            vec![0.0; n],
            vec![false; n],
            fock_cutoff,
            include_stark,
        )?;
        return Ok(LaserSolution {
            config,
            residual: 0.0,
        });
    }
    let col_of = |center: usize| active.iter().position(|&c| c == center);

    // Amplitude system: rows are pairs with both endpoints active.
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for p in targets.pairs() {
        if let (Some(cj), Some(ck)) = (col_of(p.j), col_of(p.k)) {
            rows.push((cj, ck, p.lambda));
        }
    }
    let mut a: Array2<f64> = Array2::zeros((rows.len(), active.len()));
    let mut b: Array1<f64> = Array1::zeros(rows.len());
    for (r, (cj, ck, lambda)) in rows.iter().enumerate() {
        a[(r, *cj)] = g * g / 2.0;
        a[(r, *ck)] = g * g / 2.0;
        b[r] = *lambda;
    }
    let x = a
        .least_squares(&b)
        .map_err(|e| Error::Linalg(e.to_string()))?
        .solution;
    let achieved = a.dot(&x);
    let residual = achieved
        .iter()
        .zip(b.iter())
        .map(|(got, want)| (got - want).abs())
        .fold(0.0, f64::max);

    let x_scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut delta = vec![0.0; n];
    for (col, &center) in active.iter().enumerate() {
        if x[col].abs() <= x_scale * 1e-12 {
            return Err(Error::Infeasible(format!(
                "center {center} would need an unbounded detuning (1/delta = {:.3e})",
                x[col]
            )));
        }
        delta[center - 1] = 1.0 / x[col];
        if delta[center - 1].abs() < DISPERSIVE_RATIO * g {
            return Err(Error::Infeasible(format!(
                "center {center}: required detuning {:.4} rad/us violates the dispersive \
                 guard |delta| >= {DISPERSIVE_RATIO} g = {:.4} rad/us; weaken the target \
                 couplings",
                delta[center - 1].abs(),
                DISPERSIVE_RATIO * g
            )));
        }
    }

    // Phase assignment: BFS over the graph of nonzero-coupling pairs,
    // rooting each component at phase 0, then consistency-check every edge.
    let angle_dist = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    };
    let edges: Vec<&PairCoupling> = targets.pairs().iter().filter(|p| p.lambda != 0.0).collect();
    let mut phi_of: Vec<Option<f64>> = vec![None; n];
    for &root in &active {
        if phi_of[root - 1].is_some() {
            continue;
        }
        phi_of[root - 1] = Some(0.0);
        let mut queue = vec![root];
        while let Some(c) = queue.pop() {
            let my_phi = phi_of[c - 1].expect("assigned before queueing");
            for e in &edges {
                // phase_jk = phi_j - phi_k.
                let neighbor = if e.j == c {
                    Some((e.k, my_phi - e.phase))
                } else if e.k == c {
                    Some((e.j, my_phi + e.phase))
                } else {
                    None
                };
                if let Some((other, phi)) = neighbor {
                    if phi_of[other - 1].is_none() {
                        phi_of[other - 1] = Some(phi);
                        queue.push(other);
                    }
                }
            }
        }
    }
    for e in &edges {
        let (pj, pk) = (
            phi_of[e.j - 1].expect("active endpoint"),
            phi_of[e.k - 1].expect("active endpoint"),
        );
        if angle_dist(pj - pk, e.phase) > PHASE_CONSISTENCY_TOL {
            return Err(Error::Infeasible(format!(
                "no per-center laser phases realize the pairwise phase pattern: pair \
                 ({}, {}) needs phi_{} - phi_{} = {:.6} rad but the other pairs force \
                 {:.6} rad; pairwise phases must satisfy phase_jk = phi_j - phi_k",
                e.j,
                e.k,
                e.j,
                e.k,
                e.phase,
                pj - pk
            )));
        }
    }
    let phi: Vec<f64> = phi_of
        .iter()
        .map(|p| p.unwrap_or(0.0).rem_euclid(TAU))
        .collect();
    let active_flags: Vec<bool> = (1..=n).map(|c| active.contains(&c)).collect();
    let config = NvDriveConfig::new(n, g, delta, phi, active_flags, fock_cutoff, include_stark)?;
    Ok(LaserSolution { config, residual })
}
