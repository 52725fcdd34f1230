//! Gate execution: assembles the encoded drive on a chosen realization
//! layer, propagates it (closed or open), and scores the final state against
//! the holonomy ideal computed from the same schedule.
//!
//! Three layers realize the same loop:
//! - `DfsAbstract` integrates directly on the code space.
//! - `Effective` places the code inside its physical qubit register,
//!   restricted to the excitation sector the dynamics conserves, so
//!   collective relaxation can move population out of the code.
//! - `FullCavity` drives the register through a shared cavity mode: a hub
//!   laser plus per-segment spoke lasers realize each bright coupling at
//!   second order in g/delta, while the correction term embeds the remaining
//!   drive (counterdiabatic part included) and cancels the second-order
//!   by-products the lasers create (spurious pair couplings, mirrored
//!   two-excitation couplings, and, unless requested, vacuum Stark shifts).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::counterdiabatic::{
    cd_bitphase_closed_form, cd_cp_closed_form, cd_phase_closed_form, CdTerm,
    ParamHamiltonian,
};
use crate::dynamics::{
    propagate_lindblad, propagate_unitary, LindbladChannel, LindbladModel, StepControl,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    create, dagger, destroy, eig_hermitian_raw, hermitize, identity, kron, max_abs,
    number, DensityMatrix, HilbertLayout, Ket, Op, C64,
};
use crate::holonomy::{build_h0, dark_states, ideal_gate, wilson_loop, DfsEncoding};
use crate::nv;
use crate::schedule::{ControlPoint, GateKind, PulseSchedule};

/// The reported fidelity is recomputable from `final_logical` to this
/// absolute tolerance.
pub const FIDELITY_RECOMPUTE_TOL: f64 = 1e-12;
/// Allowed relative disagreement between the schedule's pair coupling and
/// the one implied by the drive parameters.
pub const LAMBDA_CONSISTENCY_TOL: f64 = 1e-9;
/// Couplings below this fraction of lambda' are treated as absent when
/// planning which spoke lasers a segment needs.
const PLAN_COUPLING_FLOOR: f64 = 1e-10;
/// Interior points probed per segment when planning spoke lasers.
const PLAN_PROBE_POINTS: usize = 65;

/// Which realization of the encoded drive to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// The code space alone; dissipators are code-restricted collective
    /// operators, so this layer shows the protection but cannot leak.
    DfsAbstract,
    /// The physical qubit register (no cavity), restricted to the conserved
    /// excitation sector; collective relaxation genuinely depletes the code.
    Effective,
    /// Qubits plus cavity mode, laser-driven at the carrier detuning, with
    /// the embedded correction term described in the module docs.
    FullCavity,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::DfsAbstract => "dfs_abstract",
            Layer::Effective => "effective",
            Layer::FullCavity => "full_cavity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dfs_abstract" => Ok(Layer::DfsAbstract),
            "effective" => Ok(Layer::Effective),
            "full_cavity" => Ok(Layer::FullCavity),
            other => Err(Error::InvalidParameter(format!(
                "unknown layer `{other}` (expected dfs_abstract | effective | full_cavity)"
            ))),
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dissipation rates in rad/us. `kappa` addresses the cavity mode and only
/// acts on the full_cavity layer; `gamma` and `gamma_phi` drive collective
/// relaxation (S^-) and collective dephasing (S^z) of the register.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRates {
    pub kappa: f64,
    pub gamma: f64,
    pub gamma_phi: f64,
}

impl NoiseRates {
    pub fn new(kappa: f64, gamma: f64, gamma_phi: f64) -> Result<Self> {
        for (name, v) in [("kappa", kappa), ("gamma", gamma), ("gamma_phi", gamma_phi)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(Self {
            kappa,
            gamma,
            gamma_phi,
        })
    }

    pub fn zero() -> Self {
        Self {
            kappa: 0.0,
            gamma: 0.0,
            gamma_phi: 0.0,
        }
    }

    /// Cavity and emitter rates used by the bundled scenarios:
    /// kappa = 2 pi x 0.0748 MHz, gamma = gamma_phi = 2 pi x 4 kHz.
    pub fn reference() -> Self {
        Self {
            kappa: TAU * 0.0748,
            gamma: TAU * 0.004,
            gamma_phi: TAU * 0.004,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scale factor {factor} must be finite and >= 0"
            )));
        }
        Self::new(
            self.kappa * factor,
            self.gamma * factor,
            self.gamma_phi * factor,
        )
    }

    pub fn is_zero(&self) -> bool {
        self.kappa == 0.0 && self.gamma == 0.0 && self.gamma_phi == 0.0
    }
}

/// Laser/cavity parameters of the full_cavity layer, rad/us. The hub center
/// is driven at full strength g; spokes are scaled so each bright coupling
/// comes out at g_hub g_spoke / delta_eff, with delta_eff the harmonic mean
/// of the two detunings. `include_stark = false` treats the vacuum Stark
/// shifts as compensated (they are subtracted with the correction term);
/// `true` leaves them in the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    pub g: f64,
    pub delta_hub: f64,
    pub delta_spoke: f64,
    pub fock_cutoff: usize,
    pub include_stark: bool,
}

impl DriveParams {
    pub fn new(
        g: f64,
        delta_hub: f64,
        delta_spoke: f64,
        fock_cutoff: usize,
        include_stark: bool,
    ) -> Result<Self> {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "g = {g} must be finite and > 0"
            )));
        }
        for (name, v) in [("delta_hub", delta_hub), ("delta_spoke", delta_spoke)] {
            if !v.is_finite() || v == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be finite and nonzero"
                )));
            }
        }
        if 1.0 / delta_hub + 1.0 / delta_spoke <= 0.0 {
            return Err(Error::InvalidParameter(
                "detunings must combine to a positive pair coupling".into(),
            ));
        }
        if fock_cutoff == 0 {
            return Err(Error::InvalidParameter(
                "fock_cutoff must be >= 1".into(),
            ));
        }
        Ok(Self {
            g,
            delta_hub,
            delta_spoke,
            fock_cutoff,
            include_stark,
        })
    }

    /// Drive used by the bundled scenarios: g = 2 pi x 50 MHz with a
    /// 2 pi x 4 GHz / 0.4 GHz (phase, cp) or 7 GHz / 0.7 GHz (bitphase)
    /// hub/spoke detuning split.
    pub fn reference(kind: GateKind) -> Self {
        let (hub, spoke) = match kind {
            GateKind::BitPhase => (7000.0, 700.0),
            GateKind::Phase | GateKind::ControlledPhase => (4000.0, 400.0),
        };
        Self {
            g: TAU * 50.0,
            delta_hub: TAU * hub,
            delta_spoke: TAU * spoke,
            fock_cutoff: 2,
            include_stark: false,
        }
    }

    /// Pair coupling g^2/2 (1/delta_hub + 1/delta_spoke) the drive realizes.
    pub fn lambda_prime(&self) -> f64 {
        0.5 * self.g * self.g * (1.0 / self.delta_hub + 1.0 / self.delta_spoke)
    }

    /// Carrier detuning: the harmonic mean 2 / (1/delta_hub + 1/delta_spoke),
    /// i.e. g^2 / lambda'.
    pub fn delta_eff(&self) -> f64 {
        self.g * self.g / self.lambda_prime()
    }
}

/// Knobs of a single gate run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Add the transitionless correction to the drive (on by default).
    pub counterdiabatic: bool,
    /// Diagnostic samples recorded per schedule segment.
    pub samples_per_segment: usize,
    /// Steps of the dark-frame loop integral fixing the target holonomy.
    pub wilson_steps: usize,
    pub step: StepControl,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            counterdiabatic: true,
            samples_per_segment: 16,
            wilson_steps: 1600,
            step: StepControl {
                rtol: 1e-9,
                atol: 1e-12,
                ..StepControl::default()
            },
        }
    }
}

/// Diagnostics at one sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSample {
    pub t: f64,
    /// Population outside the instantaneous dark frame (decayed population
    /// counts as leaked).
    pub dark_leakage: f64,
    /// |norm^2 - 1| (closed) or |tr rho - 1| (open).
    pub trace_error: f64,
    /// Smallest density-matrix eigenvalue at this sample; 0 for closed runs.
    pub min_eigenvalue: f64,
}

/// Outcome of one gate run.
#[derive(Debug, Clone)]
pub struct GateReport {
    pub kind: GateKind,
    pub layer: Layer,
    /// Overlap of the logical block of the final state with the holonomy
    /// ideal; population outside the code counts as infidelity.
    pub fidelity: f64,
    /// Holonomic angle beta from the dark-frame loop integral.
    pub berry_phase: f64,
    pub initial_label: String,
    pub schedule_id: String,
    pub parameters: Vec<(String, String)>,
    /// Wall-clock seconds spent assembling and integrating.
    pub wall_time: f64,
    /// Largest dark-frame leakage over all sample times.
    pub dark_leakage: f64,
    /// Largest per-step hermitization applied to rho (0 for closed runs).
    pub hermiticity_correction: f64,
    /// Population remaining on the logical code words at the final time.
    pub trace_retained: f64,
    /// Unnormalized logical-subspace block of the final density matrix, in
    /// computational order.
    pub final_logical: Array2<C64>,
    pub samples: Vec<GateSample>,
}

/// Layout of the logical space a gate acts on (one qubit, or two for cp).
pub fn logical_layout(kind: GateKind) -> HilbertLayout {
    ideal_gate(kind, 0.0).layout().clone()
}

/// A ket over the logical layout from raw amplitudes (not normalized here;
/// `run_gate` checks the norm).
pub fn logical_ket(kind: GateKind, amps: &[C64]) -> Result<Ket> {
    Ket::new(logical_layout(kind), Array1::from(amps.to_vec()))
}

/// The code an encoded gate of this kind acts on.
pub fn encoding_for(kind: GateKind) -> DfsEncoding {
    match kind {
        GateKind::ControlledPhase => DfsEncoding::c2(),
        _ => DfsEncoding::c1(),
    }
}

/// Fidelity of an (unnormalized) logical density block against a target
/// state: Re <target| block |target>, clamped to [0, 1].
pub fn fidelity_against(block: &Array2<C64>, target: &Array1<C64>) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..target.len() {
        for c in 0..target.len() {
            acc += target[r].conj() * block[(r, c)] * target[c];
        }
    }
    acc.re.clamp(0.0, 1.0)
}

fn cd_closed_form(kind: GateKind, p: &ControlPoint) -> Result<CdTerm> {
    match kind {
        GateKind::BitPhase => cd_bitphase_closed_form(p),
        GateKind::Phase => cd_phase_closed_form(p),
        GateKind::ControlledPhase => cd_cp_closed_form(p),
    }
}

/// Drive matrix on the code space at one control point, with or without the
/// transitionless correction. Control points from a validated schedule
/// cannot fail the underlying constructors.
fn code_matrix(
    kind: GateKind,
    enc: &DfsEncoding,
    p: &ControlPoint,
    include_cd: bool,
) -> Array2<C64> {
    let mut m = build_h0(kind, p, enc)
        .expect("schedule control points are valid")
        .into_matrix();
    if include_cd {
        let cd = cd_closed_form(kind, p).expect("schedule control points are valid");
        m = m + cd.matrix.matrix();
    }
    m
}

// ---------------------------------------------------------------------------
// Subspace bookkeeping.
// ---------------------------------------------------------------------------

/// An ordered index subset of a larger space, with gather/scatter helpers.
struct SectorSpace {
    indices: Vec<usize>,
    pos: Vec<Option<usize>>,
    layout: HilbertLayout,
}

impl SectorSpace {
    fn from_indices(full_dim: usize, indices: Vec<usize>, label: &str) -> Result<Self> {
        let mut pos = vec![None; full_dim];
        for (p, &i) in indices.iter().enumerate() {
            if i >= full_dim {
                return Err(Error::InvalidParameter(format!(
                    "index {i} outside space of dimension {full_dim}"
                )));
            }
            if pos[i].is_some() {
                return Err(Error::InvalidParameter(format!("duplicate index {i}")));
            }
            pos[i] = Some(p);
        }
        let layout = HilbertLayout::single(label, indices.len())?;
        Ok(Self {
            indices,
            pos,
            layout,
        })
    }

    /// All register (x) cavity basis states with total excitation number
    /// (qubit occupations plus photons) at most `n_max`, ascending. Pass
    /// `fock_dim = 1` for a bare register.
    fn by_excitation(
        n_qubits: usize,
        fock_dim: usize,
        n_max: usize,
        label: &str,
    ) -> Result<Self> {
        let full_dim = (1usize << n_qubits) * fock_dim;
        let indices: Vec<usize> = (0..full_dim)
            .filter(|i| {
                let qubits = (i / fock_dim).count_ones() as usize;
                let photons = i % fock_dim;
                qubits + photons <= n_max
            })
            .collect();
        Self::from_indices(full_dim, indices, label)
    }

    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn position(&self, full_index: usize) -> Option<usize> {
        self.pos.get(full_index).copied().flatten()
    }

    fn restrict(&self, m: &Array2<C64>) -> Array2<C64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(a, b)| m[(self.indices[a], self.indices[b])])
    }
}

fn scatter_code(dim: usize, code_pos: &[usize], m: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((dim, dim));
    for (i, &pi) in code_pos.iter().enumerate() {
        for (j, &pj) in code_pos.iter().enumerate() {
            out[(pi, pj)] = m[(i, j)];
        }
    }
    out
}

/// Centers (1-based ids within the local register) exchanged by a coupling
/// between two basis states: Some((u, v)) when the states differ by moving
/// one excitation from center v to center u (u excited in `pr`, v in `pc`).
fn exchanged_centers(pr: usize, pc: usize, n: usize) -> Option<(usize, usize)> {
    let diff = pr ^ pc;
    if diff.count_ones() != 2 {
        return None;
    }
    let in_r = pr & diff;
    let in_c = pc & diff;
    if in_r.count_ones() != 1 || in_c.count_ones() != 1 {
        return None;
    }
    let u = n - in_r.trailing_zeros() as usize;
    let v = n - in_c.trailing_zeros() as usize;
    Some((u, v))
}

// ---------------------------------------------------------------------------
// Layer assemblies.
// ---------------------------------------------------------------------------

struct Assembly {
    layout: HilbertLayout,
    dim: usize,
    /// Position of each code word (DFS basis order) in the layer space.
    code_pos: Vec<usize>,
    /// Positions of the logical computational states.
    logical_pos: Vec<usize>,
    h: ParamHamiltonian,
    channels: Vec<LindbladChannel>,
}

fn push_channel(channels: &mut Vec<LindbladChannel>, label: &str, op: Array2<C64>, rate: f64) {
    if rate > 0.0 && max_abs(&op) > 0.0 {
        channels.push(LindbladChannel {
            label: label.into(),
            op,
            rate,
        });
    }
}

fn code_physical_indices(enc: &DfsEncoding) -> Result<Vec<usize>> {
    enc.labels()
        .iter()
        .map(|l| enc.physical_index(l))
        .collect()
}

/// Excitation number shared by every code word.
fn code_excitation(enc: &DfsEncoding) -> Result<usize> {
    let phys = code_physical_indices(enc)?;
    Ok(phys[0].count_ones() as usize)
}

fn dfs_assembly(
    kind: GateKind,
    schedule: &PulseSchedule,
    include_cd: bool,
    noise: Option<&NoiseRates>,
) -> Result<Assembly> {
    let enc = encoding_for(kind);
    let layout = enc.dfs_layout();
    let dim = enc.dfs_dim();
    let logical_pos = enc.logical_state_positions();

    let mut channels = Vec::new();
    if let Some(r) = noise {
        let n = enc.qubit_count();
        let sub = SectorSpace::from_indices(1 << n, code_physical_indices(&enc)?, "code")?;
        // Code-restricted collective operators: S^- vanishes on both codes
        // and S^z restricts to a multiple of the identity, which is the
        // protection this layer demonstrates. The cavity channel has no
        // factor to act on here.
        push_channel(
            &mut channels,
            "collective_lowering",
            sub.restrict(&nv::collective_lowering(n)),
            r.gamma,
        );
        push_channel(
            &mut channels,
            "collective_dephasing",
            sub.restrict(&nv::collective_z(n)),
            r.gamma_phi,
        );
    }

    let sched = schedule.clone();
    let h = ParamHamiltonian::new(layout.clone(), move |t| {
        code_matrix(kind, &enc, &sched.sample(t), include_cd)
    });
    Ok(Assembly {
        layout,
        dim,
        code_pos: (0..dim).collect(),
        logical_pos,
        h,
        channels,
    })
}

fn effective_assembly(
    kind: GateKind,
    schedule: &PulseSchedule,
    include_cd: bool,
    noise: Option<&NoiseRates>,
) -> Result<Assembly> {
    let enc = encoding_for(kind);
    let n = enc.qubit_count();
    let n_code = code_excitation(&enc)?;
    let space = SectorSpace::by_excitation(n, 1, n_code, "register_sector")?;
    let dim = space.dim();
    let code_pos: Vec<usize> = code_physical_indices(&enc)?
        .iter()
        .map(|&pi| space.position(pi).expect("code words lie in the sector"))
        .collect();
    let logical_pos: Vec<usize> = enc
        .logical_state_positions()
        .iter()
        .map(|&i| code_pos[i])
        .collect();

    let mut channels = Vec::new();
    if let Some(r) = noise {
        push_channel(
            &mut channels,
            "collective_lowering",
            space.restrict(&nv::collective_lowering(n)),
            r.gamma,
        );
        push_channel(
            &mut channels,
            "collective_dephasing",
            space.restrict(&nv::collective_z(n)),
            r.gamma_phi,
        );
    }

    let sched = schedule.clone();
    let pos = code_pos.clone();
    let h = ParamHamiltonian::new(space.layout.clone(), move |t| {
        let m = code_matrix(kind, &enc, &sched.sample(t), include_cd);
        scatter_code(dim, &pos, &m)
    });
    Ok(Assembly {
        layout: space.layout.clone(),
        dim,
        code_pos,
        logical_pos,
        h,
        channels,
    })
}

// ---------------------------------------------------------------------------
// Full-cavity drive synthesis.
// ---------------------------------------------------------------------------

/// One bright coupling a segment drives: the code-matrix entry at
/// (row, col) is realized by the hub laser plus the spoke laser of the
/// center excited in the `col` state.
#[derive(Debug, Clone, Copy)]
struct EntrySpec {
    row: usize,
    col: usize,
    spoke: usize,
}

struct DrivePlan {
    hub: usize,
    segments: Vec<Vec<EntrySpec>>,
    pairs: BTreeSet<(usize, usize)>,
    centers: BTreeSet<usize>,
}

/// Scans the bare drive over each segment and decides which lasers realize
/// which coupling. Fails when a segment needs more than two spoke lasers:
/// a third simultaneous spoke adds spurious resonant pair couplings the
/// hub-and-spokes scheme does not compensate.
fn drive_plan(
    kind: GateKind,
    enc: &DfsEncoding,
    schedule: &PulseSchedule,
) -> Result<DrivePlan> {
    let n = enc.qubit_count();
    let phys = code_physical_indices(enc)?;
    let dim = enc.dfs_dim();
    let floor = PLAN_COUPLING_FLOOR * schedule.lambda_prime().max(1.0);

    // Raw couplings per segment: (row, col, u, v) with u excited in row.
    let mut raw: Vec<Vec<(usize, usize, usize, usize)>> = Vec::new();
    let mut t0 = 0.0;
    for seg in schedule.segments() {
        let mut seen: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for i in 0..PLAN_PROBE_POINTS {
            let t = t0 + seg.duration * (i as f64 + 0.5) / PLAN_PROBE_POINTS as f64;
            let m = code_matrix(kind, enc, &schedule.sample(t), false);
            for r in 0..dim {
                for c in (r + 1)..dim {
                    if m[(r, c)].norm() <= floor || seen.contains_key(&(r, c)) {
                        continue;
                    }
                    let (u, v) = exchanged_centers(phys[r], phys[c], n).ok_or_else(|| {
                        Error::Infeasible(format!(
                            "coupling between code words {} and {} moves more than one \
                             excitation and has no two-center realization",
                            enc.labels()[r],
                            enc.labels()[c]
                        ))
                    })?;
                    seen.insert((r, c), (u, v));
                }
            }
        }
        raw.push(
            seen.into_iter()
                .map(|((r, c), (u, v))| (r, c, u, v))
                .collect(),
        );
        t0 += seg.duration;
    }

    // The hub is the center shared by every driven coupling.
    let mut hub_candidates: Option<BTreeSet<usize>> = None;
    for seg in &raw {
        for &(_, _, u, v) in seg {
            let pair: BTreeSet<usize> = [u, v].into_iter().collect();
            hub_candidates = Some(match hub_candidates {
                None => pair,
                Some(prev) => prev.intersection(&pair).copied().collect(),
            });
        }
    }
    let hub = match &hub_candidates {
        None => 0, // nothing driven anywhere
        Some(set) if set.is_empty() => {
            return Err(Error::Infeasible(
                "bright couplings do not share a single hub center".into(),
            ));
        }
        Some(set) => raw
            .iter()
            .flatten()
            .map(|&(_, _, u, _)| u)
            .find(|u| set.contains(u))
            .unwrap_or_else(|| *set.iter().next().expect("set is nonempty")),
    };

    let mut segments = Vec::with_capacity(raw.len());
    let mut pairs = BTreeSet::new();
    let mut centers = BTreeSet::new();
    for (si, seg) in raw.iter().enumerate() {
        let mut entries = Vec::new();
        let mut spokes = BTreeSet::new();
        for &(r, c, u, v) in seg {
            let entry = if u == hub {
                EntrySpec { row: r, col: c, spoke: v }
            } else if v == hub {
                EntrySpec { row: c, col: r, spoke: u }
            } else {
                return Err(Error::Infeasible(format!(
                    "coupling between code words {} and {} does not involve the hub center {hub}",
                    enc.labels()[r],
                    enc.labels()[c]
                )));
            };
            spokes.insert(entry.spoke);
            entries.push(entry);
        }
        if spokes.len() > 2 {
            return Err(Error::Infeasible(format!(
                "segment {si} needs {} simultaneous spoke lasers; beyond two, spoke pairs \
                 add spurious resonant couplings the hub-and-spokes drive cannot compensate",
                spokes.len()
            )));
        }
        if !entries.is_empty() {
            let mut active: Vec<usize> = spokes.iter().copied().collect();
            active.push(hub);
            active.sort_unstable();
            for a in 0..active.len() {
                for b in (a + 1)..active.len() {
                    pairs.insert((active[a], active[b]));
                }
            }
            centers.extend(active);
        }
        segments.push(entries);
    }

    Ok(DrivePlan {
        hub,
        segments,
        pairs,
        centers,
    })
}

fn segment_index(knots: &[f64], t: f64) -> usize {
    let k = knots.partition_point(|&x| x <= t);
    k.saturating_sub(1).min(knots.len().saturating_sub(2))
}

fn cavity_assembly(
    kind: GateKind,
    schedule: &PulseSchedule,
    include_cd: bool,
    drive: &DriveParams,
    noise: Option<&NoiseRates>,
) -> Result<Assembly> {
    let enc = encoding_for(kind);
    let n = enc.qubit_count();
    let n_code = code_excitation(&enc)?;
    if drive.fock_cutoff < n_code {
        return Err(Error::InvalidParameter(format!(
            "fock_cutoff {} cannot hold the code excitation number {n_code}",
            drive.fock_cutoff
        )));
    }
    let f = drive.fock_cutoff + 1;
    let space = SectorSpace::by_excitation(n, f, n_code, "cavity_sector")?;
    let dim = space.dim();
    let code_pos: Vec<usize> = code_physical_indices(&enc)?
        .iter()
        .map(|&pi| space.position(pi * f).expect("code words lie in the sector"))
        .collect();
    let logical_pos: Vec<usize> = enc
        .logical_state_positions()
        .iter()
        .map(|&i| code_pos[i])
        .collect();

    let plan = drive_plan(kind, &enc, schedule)?;

    // Restricted building blocks. All maps iterate deterministically.
    let aad = destroy(f).dot(&create(f));
    let nf = number(f);
    let iq = identity(1 << n);
    let mut exchange: BTreeMap<usize, Array2<C64>> = BTreeMap::new();
    let mut stark_ground: BTreeMap<usize, Array2<C64>> = BTreeMap::new();
    let mut stark_excited: BTreeMap<usize, Array2<C64>> = BTreeMap::new();
    for &j in &plan.centers {
        exchange.insert(j, space.restrict(&nv::cavity_exchange_term(n, drive.fock_cutoff, j)?));
        let nj = nv::number_on_site(n, j)?;
        stark_ground.insert(j, space.restrict(&kron(&(&iq - &nj), &nf)));
        stark_excited.insert(j, space.restrict(&kron(&nj, &aad)));
    }
    let mut pair_photon: BTreeMap<(usize, usize), Array2<C64>> = BTreeMap::new();
    let mut pair_vacuum: BTreeMap<(usize, usize), Array2<C64>> = BTreeMap::new();
    for &(a, b) in &plan.pairs {
        pair_photon.insert((a, b), space.restrict(&kron(&nv::exchange_raw(n, a, b)?, &nf)));
        pair_vacuum.insert((a, b), space.restrict(&kron(&nv::exchange_raw(n, b, a)?, &aad)));
    }

    let mut channels = Vec::new();
    if let Some(r) = noise {
        push_channel(
            &mut channels,
            "cavity_decay",
            space.restrict(&kron(&iq, &destroy(f))),
            r.kappa,
        );
        push_channel(
            &mut channels,
            "collective_lowering",
            space.restrict(&kron(&nv::collective_lowering(n), &identity(f))),
            r.gamma,
        );
        push_channel(
            &mut channels,
            "collective_dephasing",
            space.restrict(&kron(&nv::collective_z(n), &identity(f))),
            r.gamma_phi,
        );
    }

    let sched = schedule.clone();
    let knots = schedule.knot_times();
    let pos = code_pos.clone();
    let g = drive.g;
    let delta_eff = drive.delta_eff();
    let lp = drive.lambda_prime();
    let include_stark = drive.include_stark;
    let hub = plan.hub;
    let seg_entries = plan.segments;

    let h = ParamHamiltonian::new(space.layout.clone(), move |t| {
        let p = sched.sample(t);
        let m0 = code_matrix(kind, &enc, &p, false);
        let mut lift = m0.clone();
        if include_cd {
            lift = lift
                + cd_closed_form(kind, &p)
                    .expect("schedule control points are valid")
                    .matrix
                    .matrix();
        }
        let mut m = scatter_code(dim, &pos, &lift);

        let entries = &seg_entries[segment_index(&knots, t)];
        // Laser amplitudes and phases for this instant: the hub at full g,
        // each spoke scaled and phased so the second-order pair coupling
        // reproduces its code-matrix entry exactly.
        let mut amps: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for e in entries {
            let z = m0[(e.row, e.col)];
            let az = z.norm();
            let (gs, phi) = if az == 0.0 {
                (0.0, 0.0)
            } else {
                (g * az / lp, -z.arg() - PI)
            };
            amps.insert(e.spoke, (gs, phi));
        }
        if !entries.is_empty() {
            amps.insert(hub, (g, 0.0));
        }

        for (&j, &(gj, pj)) in &amps {
            if gj == 0.0 {
                continue;
            }
            let term = exchange[&j].mapv(|v| v * C64::from_polar(gj, pj - delta_eff * t));
            m += &term;
            m += &dagger(&term);
        }

        // Second-order image of the drive; subtracting it leaves the lifted
        // code drive as the net slow Hamiltonian.
        let mut pred: Array2<C64> = Array2::zeros((dim, dim));
        let driven: Vec<(usize, f64, f64)> =
            amps.iter().map(|(&j, &(gj, pj))| (j, gj, pj)).collect();
        for ai in 0..driven.len() {
            for bi in (ai + 1)..driven.len() {
                let (a, ga, pa) = driven[ai];
                let (b, gb, pb) = driven[bi];
                if ga == 0.0 || gb == 0.0 {
                    continue;
                }
                let c = C64::from_polar(ga * gb, pb - pa);
                let t1 = pair_photon[&(a, b)].mapv(|v| v * c);
                pred += &t1;
                pred += &dagger(&t1);
                let t2 = pair_vacuum[&(a, b)].mapv(|v| v * c.conj());
                pred -= &t2;
                pred -= &dagger(&t2);
            }
        }
        if !include_stark {
            for &(j, gj, _) in &driven {
                if gj == 0.0 {
                    continue;
                }
                let w = C64::from(gj * gj);
                pred += &stark_ground[&j].mapv(|v| v * w);
                pred -= &stark_excited[&j].mapv(|v| v * w);
            }
        }
        pred.mapv_inplace(|v| v / delta_eff);
        m -= &pred;
        hermitize(&m)
    });

    Ok(Assembly {
        layout: space.layout.clone(),
        dim,
        code_pos,
        logical_pos,
        h,
        channels,
    })
}

// ---------------------------------------------------------------------------
// Pairwise register realization (reference construction for tests and docs).
// ---------------------------------------------------------------------------

/// The physical-register Hamiltonian built from one exchange term per code
/// coupling (plus a single-site detuning per one-excitation diagonal).
///
/// For the four-qubit code this reproduces the encoded drive exactly on the
/// single-excitation sector. For the two-logical-qubit code the same
/// exchange terms also couple code words to two-excitation states outside
/// the code (the mirrored image of the bright coupling), which is why the
/// cp drive is realized through the encoding instead of by bare pair terms.
pub fn pair_register_hamiltonian(
    kind: GateKind,
    p: &ControlPoint,
    include_cd: bool,
) -> Result<Op> {
    let enc = encoding_for(kind);
    let n = enc.qubit_count();
    let phys = code_physical_indices(&enc)?;
    let m = code_matrix(kind, &enc, p, include_cd);
    let dim = enc.dfs_dim();
    let mut out: Array2<C64> = Array2::zeros((1 << n, 1 << n));
    for r in 0..dim {
        let d = m[(r, r)];
        if d.norm() > 0.0 {
            if phys[r].count_ones() != 1 {
                return Err(Error::Infeasible(format!(
                    "diagonal term on code word {} (a multi-excitation state) has no \
                     single-site realization",
                    enc.labels()[r]
                )));
            }
            let u = n - phys[r].trailing_zeros() as usize;
            out = out + nv::number_on_site(n, u)?.mapv(|v| v * d);
        }
        for c in (r + 1)..dim {
            let z = m[(r, c)];
            if z.norm() == 0.0 {
                continue;
            }
            let (u, v) = exchanged_centers(phys[r], phys[c], n).ok_or_else(|| {
                Error::Infeasible(format!(
                    "coupling between code words {} and {} moves more than one excitation",
                    enc.labels()[r],
                    enc.labels()[c]
                ))
            })?;
            // z multiplies sigma_u^+ sigma_v^-.
            let term = nv::exchange_raw(n, v, u)?.mapv(|x| x * z);
            out = out + &term + &dagger(&term);
        }
    }
    Op::hermitian(enc.register_layout(), hermitize(&out))
}

// ---------------------------------------------------------------------------
// The runner.
// ---------------------------------------------------------------------------

fn sample_grid(schedule: &PulseSchedule, per_segment: usize) -> Vec<f64> {
    let mut ts = vec![0.0];
    let mut t0 = 0.0;
    let n = per_segment.max(1);
    for seg in schedule.segments() {
        for k in 1..=n {
            ts.push(t0 + seg.duration * k as f64 / n as f64);
        }
        t0 += seg.duration;
    }
    ts
}

fn dark_frame_overlap_ket(
    kind: GateKind,
    p: &ControlPoint,
    code_pos: &[usize],
    amps: &Array1<C64>,
) -> Result<f64> {
    let frame = dark_states(kind, p)?;
    let mut kept = 0.0;
    for d in &frame {
        let mut ov = C64::new(0.0, 0.0);
        for (i, &pi) in code_pos.iter().enumerate() {
            ov += d.amplitudes()[i].conj() * amps[pi];
        }
        kept += ov.norm_sqr();
    }
    Ok(kept)
}

fn dark_frame_overlap_rho(
    kind: GateKind,
    p: &ControlPoint,
    code_pos: &[usize],
    rho: &Array2<C64>,
) -> Result<f64> {
    let frame = dark_states(kind, p)?;
    let mut kept = 0.0;
    for d in &frame {
        let mut acc = C64::new(0.0, 0.0);
        for (i, &pi) in code_pos.iter().enumerate() {
            for (j, &pj) in code_pos.iter().enumerate() {
                acc += d.amplitudes()[i].conj() * rho[(pi, pj)] * d.amplitudes()[j];
            }
        }
        kept += acc.re;
    }
    Ok(kept)
}

fn state_label(kind: GateKind, psi: &Ket) -> String {
    let labels: &[&str] = match kind {
        GateKind::ControlledPhase => &["00", "01", "10", "11"],
        _ => &["0", "1"],
    };
    let mut parts = Vec::new();
    for (a, l) in psi.amplitudes().iter().zip(labels) {
        if a.norm() > 1e-12 {
            parts.push(format!("({:.6}{:+.6}i)|{l}>", a.re, a.im));
        }
    }
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

fn schedule_id(kind: GateKind, schedule: &PulseSchedule) -> String {
    format!(
        "{}[legs={},T={:.9},lambda_prime={:.9}]",
        kind,
        schedule.segments().len(),
        schedule.total_duration(),
        schedule.lambda_prime()
    )
}

#[allow(clippy::too_many_arguments)]
fn collect_parameters(
    kind: GateKind,
    layer: Layer,
    schedule: &PulseSchedule,
    drive: Option<&DriveParams>,
    noise: Option<&NoiseRates>,
    opts: &RunOptions,
) -> Vec<(String, String)> {
    let mut p: Vec<(String, String)> = vec![
        ("kind".into(), kind.to_string()),
        ("layer".into(), layer.to_string()),
        ("total_duration_us".into(), format!("{:.12e}", schedule.total_duration())),
        (
            "lambda_prime_rad_per_us".into(),
            format!("{:.12e}", schedule.lambda_prime()),
        ),
        ("segments".into(), schedule.segments().len().to_string()),
        ("counterdiabatic".into(), opts.counterdiabatic.to_string()),
        (
            "samples_per_segment".into(),
            opts.samples_per_segment.to_string(),
        ),
        ("wilson_steps".into(), opts.wilson_steps.to_string()),
        ("rtol".into(), format!("{:e}", opts.step.rtol)),
        ("atol".into(), format!("{:e}", opts.step.atol)),
    ];
    if let Some(d) = drive {
        p.push(("g_rad_per_us".into(), format!("{:.12e}", d.g)));
        p.push(("delta_hub_rad_per_us".into(), format!("{:.12e}", d.delta_hub)));
        p.push((
            "delta_spoke_rad_per_us".into(),
            format!("{:.12e}", d.delta_spoke),
        ));
        p.push(("delta_eff_rad_per_us".into(), format!("{:.12e}", d.delta_eff())));
        p.push(("fock_cutoff".into(), d.fock_cutoff.to_string()));
        p.push(("include_stark".into(), d.include_stark.to_string()));
    }
    if let Some(r) = noise {
        p.push(("kappa_rad_per_us".into(), format!("{:.12e}", r.kappa)));
        p.push(("gamma_rad_per_us".into(), format!("{:.12e}", r.gamma)));
        p.push(("gamma_phi_rad_per_us".into(), format!("{:.12e}", r.gamma_phi)));
    }
    p
}

/// Runs one holonomic gate: fixes the target holonomy from the dark-frame
/// loop integral, assembles the requested layer, propagates the input
/// (closed when `noise` is `None`, Lindblad otherwise), and reports the
/// logical outcome with leakage and integrity diagnostics.
///
/// `drive` is required for (and only used by) the full_cavity layer. The
/// cavity decay rate `kappa` only acts there as well; the other layers have
/// no cavity factor.
pub fn run_gate(
    kind: GateKind,
    schedule: &PulseSchedule,
    layer: Layer,
    drive: Option<&DriveParams>,
    noise: Option<&NoiseRates>,
    psi_in: &Ket,
    opts: &RunOptions,
) -> Result<GateReport> {
    let started = Instant::now();
    let llayout = logical_layout(kind);
    if psi_in.layout() != &llayout {
        return Err(Error::LayoutMismatch(format!(
            "input must live on the {} logical layout",
            kind
        )));
    }
    let norm = psi_in.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm });
    }
    if layer == Layer::FullCavity {
        let d = drive.ok_or_else(|| {
            Error::InvalidParameter("the full_cavity layer needs drive parameters".into())
        })?;
        if !schedule.segments().is_empty() {
            let (ls, ld) = (schedule.lambda_prime(), d.lambda_prime());
            if (ls - ld).abs() > LAMBDA_CONSISTENCY_TOL * ld.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "schedule pair coupling {ls:.9e} disagrees with the drive-implied \
                     {ld:.9e} rad/us"
                )));
            }
        }
    }

    let hol = wilson_loop(kind, schedule, opts.wilson_steps)?;
    let beta = match kind {
        GateKind::BitPhase => hol.rotation_angle().ok_or_else(|| {
            Error::IntegrationFailure(
                "holonomy is not the expected dark-frame rotation".into(),
            )
        })?,
        GateKind::Phase | GateKind::ControlledPhase => {
            hol.berry_phase.ok_or_else(|| {
                Error::IntegrationFailure(
                    "spectator dark states did not return to themselves".into(),
                )
            })?
        }
    };
    let ideal_amps = ideal_gate(kind, beta).matrix().dot(psi_in.amplitudes());
    let ldim = llayout.dim();
    let parameters = collect_parameters(kind, layer, schedule, drive, noise, opts);
    let initial_label = state_label(kind, psi_in);
    let sid = schedule_id(kind, schedule);

    if schedule.segments().is_empty() {
        let a = psi_in.amplitudes();
        let final_logical =
            Array2::from_shape_fn((ldim, ldim), |(r, c)| a[r] * a[c].conj());
        let fidelity = fidelity_against(&final_logical, &ideal_amps);
        return Ok(GateReport {
            kind,
            layer,
            fidelity,
            berry_phase: beta,
            initial_label,
            schedule_id: sid,
            parameters,
            wall_time: started.elapsed().as_secs_f64(),
            dark_leakage: 0.0,
            hermiticity_correction: 0.0,
            trace_retained: 1.0,
            final_logical,
            samples: vec![GateSample {
                t: 0.0,
                dark_leakage: 0.0,
                trace_error: 0.0,
                min_eigenvalue: 0.0,
            }],
        });
    }

    let assembly = match layer {
        Layer::DfsAbstract => dfs_assembly(kind, schedule, opts.counterdiabatic, noise)?,
        Layer::Effective => effective_assembly(kind, schedule, opts.counterdiabatic, noise)?,
        Layer::FullCavity => cavity_assembly(
            kind,
            schedule,
            opts.counterdiabatic,
            drive.expect("checked above"),
            noise,
        )?,
    };

    let knots = schedule.knot_times();
    let times = sample_grid(schedule, opts.samples_per_segment);
    let mut amps0: Array1<C64> = Array1::zeros(assembly.dim);
    for (l, &pl) in assembly.logical_pos.iter().enumerate() {
        amps0[pl] = psi_in.amplitudes()[l];
    }
    let psi0 = Ket::new(assembly.layout.clone(), amps0)?;

    let mut samples = Vec::new();
    let final_logical: Array2<C64>;
    let mut hermiticity_correction = 0.0;
    if noise.is_some() {
        let model = LindbladModel::new(assembly.h, assembly.channels)?;
        let rho0 = DensityMatrix::from_ket(&psi0)?;
        let traj = propagate_lindblad(&model, &rho0, &times, &knots, &opts.step)?;
        hermiticity_correction = traj.max_hermiticity_correction;
        for (t, st) in traj.times.iter().zip(&traj.states) {
            let m = st.matrix();
            let kept =
                dark_frame_overlap_rho(kind, &schedule.sample(*t), &assembly.code_pos, m)?;
            let min_eig = eig_hermitian_raw(&hermitize(m), None)?.values[0];
            samples.push(GateSample {
                t: *t,
                dark_leakage: (1.0 - kept).max(0.0),
                trace_error: (st.trace() - 1.0).abs(),
                min_eigenvalue: min_eig,
            });
        }
        let last = traj.states.last().expect("sample grid is nonempty").matrix();
        final_logical = Array2::from_shape_fn((ldim, ldim), |(r, c)| {
            last[(assembly.logical_pos[r], assembly.logical_pos[c])]
        });
    } else {
        let traj = propagate_unitary(&assembly.h, &psi0, &times, &knots, &opts.step)?;
        for (t, st) in traj.times.iter().zip(&traj.states) {
            let kept = dark_frame_overlap_ket(
                kind,
                &schedule.sample(*t),
                &assembly.code_pos,
                st.amplitudes(),
            )?;
            samples.push(GateSample {
                t: *t,
                dark_leakage: (1.0 - kept).max(0.0),
                trace_error: (st.norm().powi(2) - 1.0).abs(),
                min_eigenvalue: 0.0,
            });
        }
        let last = traj.states.last().expect("sample grid is nonempty").amplitudes();
        let a: Vec<C64> = assembly.logical_pos.iter().map(|&p| last[p]).collect();
        final_logical = Array2::from_shape_fn((ldim, ldim), |(r, c)| a[r] * a[c].conj());
    }

    let fidelity = fidelity_against(&final_logical, &ideal_amps);
    let trace_retained = (0..ldim).map(|i| final_logical[(i, i)].re).sum::<f64>();
    let dark_leakage = samples
        .iter()
        .map(|s| s.dark_leakage)
        .fold(0.0, f64::max);

    Ok(GateReport {
        kind,
        layer,
        fidelity,
        berry_phase: beta,
        initial_label,
        schedule_id: sid,
        parameters,
        wall_time: started.elapsed().as_secs_f64(),
        dark_leakage,
        hermiticity_correction,
        trace_retained,
        final_logical,
        samples,
    })
}
