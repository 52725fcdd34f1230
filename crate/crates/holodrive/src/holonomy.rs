//! Decoherence-free encodings, dark-state gate Hamiltonians, and holonomy
//! evaluation via Wilson loops.
//!
//! Logical information lives in zero-eigenvalue (dark) eigenspaces of the
//! drive Hamiltonian. Steering the control angles around a closed loop while
//! staying dark imprints a purely geometric unitary on the logical basis,
//! computed here as the path-ordered exponential of the non-Abelian
//! connection A_kl = i <D_k | d/dt D_l>.

use crate::error::{Error, Result};
use crate::hilbert::{
    expm_minus_i_h_dt, hermitize, identity, max_abs_diff, C64, HilbertLayout, Ket, Op, IM,
};
use crate::schedule::{ControlPoint, GateKind, PulseSchedule};
use ndarray::{Array1, Array2};

/// Frame-closure tolerance for Wilson loops.
pub const LOOP_CLOSURE_TOL: f64 = 1e-8;
/// Unitarity tolerance on the accumulated holonomy.
pub const HOLONOMY_UNITARITY_TOL: f64 = 1e-9;

/// A two-qubit-per-logical-qubit encoding: the map from named
/// decoherence-free basis states to computational indices of the physical
/// qubit register. Basis order of the abstract DFS space is the label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DfsEncoding {
    name: String,
    labels: Vec<&'static str>,
    physical_qubits: Vec<usize>,
    physical_index: Vec<usize>,
}

impl DfsEncoding {
    /// Single-logical-qubit code on four physical qubits. Basis order
    /// {a1, 0L, 1L, a2} with |a1> = |1000>, |0L> = |0001>, |1L> = |0010>,
    /// |a2> = |0100> (qubit 1 is the most significant bit).
    pub fn c1() -> Self {
        Self {
            name: "C1".into(),
            labels: vec!["a1", "0L", "1L", "a2"],
            physical_qubits: (1..=4).collect(),
            physical_index: vec![0b1000, 0b0001, 0b0010, 0b0100],
        }
    }

    /// Two-logical-qubit code on eight physical qubits. Basis order
    /// {00, 01, 10, 11, a3, a4} with |00> = |00010001>, |01> = |00010010>,
    /// |10> = |00100001>, |11> = |00100010>, |a3> = |10000010>,
    /// |a4> = |01000010>.
    pub fn c2() -> Self {
        Self {
            name: "C2".into(),
            labels: vec!["00", "01", "10", "11", "a3", "a4"],
            physical_qubits: (1..=8).collect(),
            physical_index: vec![
                0b0001_0001,
                0b0001_0010,
                0b0010_0001,
                0b0010_0010,
                0b1000_0010,
                0b0100_0010,
            ],
        }
    }

    /// The two-qubit encoding acting on logical qubits m and n of a register
    /// of `total` logical qubits (1-based, m < n). Logical qubit k occupies
    /// physical qubits 4k-3 ..= 4k; the returned encoding's local register is
    /// those eight physical qubits in ascending order, with the same state
    /// patterns as [`DfsEncoding::c2`].
    pub fn cp_encoding_for(m: usize, n: usize, total: usize) -> Result<Self> {
        if m < 1 || n <= m || n > total {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= m < n <= total, got m = {m}, n = {n}, total = {total}"
            )));
        }
        let mut physical_qubits: Vec<usize> = (4 * m - 3..=4 * m).collect();
        physical_qubits.extend(4 * n - 3..=4 * n);
        Ok(Self {
            name: format!("C2[{m},{n}]"),
            physical_qubits,
            ..Self::c2()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[&'static str] {
        &self.labels
    }

    /// Global 1-based ids of the physical qubits this encoding addresses.
    pub fn physical_qubits(&self) -> &[usize] {
        &self.physical_qubits
    }

    pub fn qubit_count(&self) -> usize {
        self.physical_qubits.len()
    }

    /// Dimension of the abstract DFS space (4 for C1, 6 for C2).
    pub fn dfs_dim(&self) -> usize {
        self.labels.len()
    }

    /// Abstract DFS space as a single layout factor.
    pub fn dfs_layout(&self) -> HilbertLayout {
        let label = if self.dfs_dim() == 4 { "dfs_c1" } else { "dfs_c2" };
        HilbertLayout::single(label, self.dfs_dim()).expect("static layout")
    }

    /// Physical register layout: one dim-2 factor per qubit, labeled by
    /// global id ("q1", "q2", ...).
    pub fn register_layout(&self) -> HilbertLayout {
        HilbertLayout::new(
            self.physical_qubits
                .iter()
                .map(|q| (format!("q{q}"), 2))
                .collect(),
        )
        .expect("static layout")
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| *l == label)
            .ok_or_else(|| Error::UnknownLabel(label.into()))
    }

    /// Computational-basis index (within the local register) of a DFS label.
    pub fn physical_index(&self, label: &str) -> Result<usize> {
        Ok(self.physical_index[self.label_index(label)?])
    }

    /// Positions, in DFS basis order, of the logical computational states
    /// ([0L, 1L] for C1; [00, 01, 10, 11] for C2).
    pub fn logical_state_positions(&self) -> Vec<usize> {
        if self.dfs_dim() == 4 {
            vec![1, 2]
        } else {
            vec![0, 1, 2, 3]
        }
    }

    /// Lifts a DFS-space ket into the physical register.
    pub fn embed_ket(&self, dfs: &Ket) -> Result<Ket> {
        if dfs.layout() != &self.dfs_layout() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} DFS layout",
                self.name
            )));
        }
        let reg = self.register_layout();
        let mut amps = Array1::zeros(reg.dim());
        for (i, &pi) in self.physical_index.iter().enumerate() {
            amps[pi] = dfs.amplitudes()[i];
        }
        Ket::new(reg, amps)
    }

    /// Lifts a DFS-space operator into the physical register (zero outside
    /// the encoded subspace).
    pub fn embed_op(&self, op: &Op) -> Result<Op> {
        if op.layout() != &self.dfs_layout() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} DFS layout",
                self.name
            )));
        }
        let reg = self.register_layout();
        let mut m = Array2::zeros((reg.dim(), reg.dim()));
        for (i, &pi) in self.physical_index.iter().enumerate() {
            for (j, &pj) in self.physical_index.iter().enumerate() {
                m[(pi, pj)] = op.matrix()[(i, j)];
            }
        }
        if op.is_hermitian() {
            Op::hermitian(reg, m)
        } else {
            Op::new(reg, m)
        }
    }
}

fn check_kind_encoding(kind: GateKind, enc: &DfsEncoding) -> Result<()> {
    let want = match kind {
        GateKind::BitPhase | GateKind::Phase => 4,
        GateKind::ControlledPhase => 6,
    };
    if enc.dfs_dim() != want {
        return Err(Error::LayoutMismatch(format!(
            "{kind} gate needs a DFS dimension of {want}, encoding {} has {}",
            enc.name(),
            enc.dfs_dim()
        )));
    }
    Ok(())
}

/// Drive Hamiltonian on the abstract DFS basis at one control point.
///
/// - bitphase: lambda' |a1><v| + h.c. with the real unit vector
///   v = (sin th cos ph, sin th sin ph, cos th) on (0L, 1L, a2);
/// - phase: lambda' (sin(th/2) e^{i ph} |a1><1L| + cos(th/2) |a1><a2|) + h.c.;
/// - cp: lambda' (sin(th/2) e^{i ph} |a3><11| + cos(th/2) |a3><a4|) + h.c.
pub fn build_h0(kind: GateKind, p: &ControlPoint, enc: &DfsEncoding) -> Result<Op> {
    check_kind_encoding(kind, enc)?;
    let dim = enc.dfs_dim();
    let lp = C64::new(p.lambda_prime, 0.0);
    let mut m: Array2<C64> = Array2::zeros((dim, dim));
    match kind {
        GateKind::BitPhase => {
            let v = [
                p.theta.sin() * p.phi.cos(),
                p.theta.sin() * p.phi.sin(),
                p.theta.cos(),
            ];
            for (k, &vk) in v.iter().enumerate() {
                m[(0, k + 1)] = lp * vk;
                m[(k + 1, 0)] = lp * vk;
            }
        }
        GateKind::Phase | GateKind::ControlledPhase => {
            let (bright, one, aux) = match kind {
                GateKind::Phase => (0, 2, 3),
                _ => (4, 3, 5),
            };
            let half = p.theta / 2.0;
            let e_iphi = C64::new(0.0, p.phi).exp();
            m[(bright, one)] = lp * half.sin() * e_iphi;
            m[(one, bright)] = m[(bright, one)].conj();
            m[(bright, aux)] = lp * half.cos();
            m[(aux, bright)] = m[(bright, aux)];
        }
    }
    Op::hermitian(enc.dfs_layout(), m)
}

/// Instantaneous dark (zero-eigenvalue) basis on the abstract DFS space, in
/// the order that matches the logical basis at the loop start:
///
/// - bitphase: D0 = (cos th cos ph, cos th sin ph, -sin th) and
///   D1 = (-sin ph, cos ph, 0) on (0L, 1L, a2), the tangent frame of v;
/// - phase: D0 = |0L>, D1 = cos(th/2)|1L> - sin(th/2) e^{i ph} |a2>;
/// - cp: D0..D2 = |00>, |01>, |10>, D3 = cos(th/2)|11> - sin(th/2) e^{i ph} |a4>.
pub fn dark_states(kind: GateKind, p: &ControlPoint) -> Result<Vec<Ket>> {
    let enc = match kind {
        GateKind::ControlledPhase => DfsEncoding::c2(),
        _ => DfsEncoding::c1(),
    };
    let layout = enc.dfs_layout();
    let dim = enc.dfs_dim();
    let mut frames: Vec<Array1<C64>> = Vec::new();
    match kind {
        GateKind::BitPhase => {
            let (st, ct) = p.theta.sin_cos();
            let (sp, cp) = p.phi.sin_cos();
            let mut d0 = Array1::zeros(dim);
            d0[1] = C64::new(ct * cp, 0.0);
            d0[2] = C64::new(ct * sp, 0.0);
            d0[3] = C64::new(-st, 0.0);
            let mut d1 = Array1::zeros(dim);
            d1[1] = C64::new(-sp, 0.0);
            d1[2] = C64::new(cp, 0.0);
            frames.push(d0);
            frames.push(d1);
        }
        GateKind::Phase | GateKind::ControlledPhase => {
            let half = p.theta / 2.0;
            let e_iphi = C64::new(0.0, p.phi).exp();
            let (spectators, one, aux): (&[usize], usize, usize) = match kind {
                GateKind::Phase => (&[1], 2, 3),
                _ => (&[0, 1, 2], 3, 5),
            };
            for &k in spectators {
                let mut d = Array1::zeros(dim);
                d[k] = C64::new(1.0, 0.0);
                frames.push(d);
            }
            let mut d = Array1::zeros(dim);
            d[one] = C64::new(half.cos(), 0.0);
            d[aux] = -e_iphi * half.sin();
            frames.push(d);
        }
    }
    frames
        .into_iter()
        .map(|a| Ket::new(layout.clone(), a))
        .collect()
}

/// Target logical unitary for holonomy angle beta (the standard loop with
/// phase accumulation phi_c yields beta = -phi_c):
///
/// - phase: diag(1, e^{i beta});
/// - bitphase: exp(i beta sigma_y) = [[cos b, sin b], [-sin b, cos b]];
/// - cp: diag(1, 1, 1, e^{i beta}).
pub fn ideal_gate(kind: GateKind, beta: f64) -> Op {
    let (cb, sb) = (beta.cos(), beta.sin());
    let phase = C64::new(0.0, beta).exp();
    match kind {
        GateKind::BitPhase => {
            let m = ndarray::array![
                [C64::new(cb, 0.0), C64::new(sb, 0.0)],
                [C64::new(-sb, 0.0), C64::new(cb, 0.0)]
            ];
            Op::new(HilbertLayout::single("logical", 2).unwrap(), m).unwrap()
        }
        GateKind::Phase => {
            let mut m = identity(2);
            m[(1, 1)] = phase;
            Op::new(HilbertLayout::single("logical", 2).unwrap(), m).unwrap()
        }
        GateKind::ControlledPhase => {
            let mut m = identity(4);
            m[(3, 3)] = phase;
            let layout =
                HilbertLayout::new(vec![("l1".into(), 2), ("l2".into(), 2)]).unwrap();
            Op::new(layout, m).unwrap()
        }
    }
}

/// Result of integrating the dark-space connection around a closed loop.
#[derive(Debug, Clone)]
pub struct HolonomyResult {
    pub dark_labels: Vec<String>,
    pub unitary: Op,
    /// Abelian phase on the last dark state, present when all other dark
    /// states come back to themselves (phase and cp kinds).
    pub berry_phase: Option<f64>,
}

impl HolonomyResult {
    /// For a real 2x2 rotation exp(i beta sigma_y), the angle beta.
    pub fn rotation_angle(&self) -> Option<f64> {
        let m = self.unitary.matrix();
        if m.nrows() != 2 {
            return None;
        }
        let beta = m[(0, 1)].re.atan2(m[(0, 0)].re);
        let model = ideal_gate(GateKind::BitPhase, beta);
        if max_abs_diff(m, model.matrix()) <= 1e-6 {
            Some(beta)
        } else {
            None
        }
    }
}

/// Connection matrix A_kl = i <D_k(t) | d/dt D_l(t)> by central difference of
/// the analytic dark frame.
fn connection(
    kind: GateKind,
    schedule: &PulseSchedule,
    t: f64,
    delta: f64,
) -> Result<Array2<C64>> {
    let frame = dark_states(kind, &schedule.sample(t))?;
    let plus = dark_states(kind, &schedule.sample(t + delta))?;
    let minus = dark_states(kind, &schedule.sample(t - delta))?;
    let d = frame.len();
    let mut a = Array2::zeros((d, d));
    for l in 0..d {
        let dl = (plus[l].amplitudes() - minus[l].amplitudes()) / C64::new(2.0 * delta, 0.0);
        for k in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for (bk, bl) in frame[k].amplitudes().iter().zip(dl.iter()) {
                acc += bk.conj() * bl;
            }
            a[(k, l)] = IM * acc;
        }
    }
    Ok(hermitize(&a))
}

/// Path-ordered exponential U = P exp(i \int A dt) over the schedule, by a
/// midpoint product with `steps` total steps distributed over segments
/// (error falls off as 1/steps^2). Fails if the dark frame at the end does
/// not match the start (open loop).
pub fn wilson_loop(
    kind: GateKind,
    schedule: &PulseSchedule,
    steps: usize,
) -> Result<HolonomyResult> {
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be > 0".into()));
    }
    let total = schedule.total_duration();
    let start_frame = dark_states(kind, &schedule.sample(0.0))?;
    let end_frame = dark_states(kind, &schedule.sample(total))?;
    let d = start_frame.len();
    let deviation = start_frame
        .iter()
        .zip(&end_frame)
        .map(|(a, b)| {
            (a.amplitudes() - b.amplitudes())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    if deviation > LOOP_CLOSURE_TOL {
        return Err(Error::OpenLoop { deviation });
    }

    let mut u = identity(d);
    let mut t0 = 0.0;
    for seg in schedule.segments() {
        let n = ((steps as f64) * seg.duration / total).ceil().max(1.0) as usize;
        let h = seg.duration / n as f64;
        let delta = h * 1e-3;
        for k in 0..n {
            let tm = t0 + (k as f64 + 0.5) * h;
            let a = connection(kind, schedule, tm, delta)?;
            u = expm_minus_i_h_dt(&a, -h)?.dot(&u);
        }
        t0 += seg.duration;
    }

    let udag_u = crate::hilbert::dagger(&u).dot(&u);
    let unit_dev = max_abs_diff(&udag_u, &identity(d));
    if unit_dev > HOLONOMY_UNITARITY_TOL {
        return Err(Error::IntegrationFailure(format!(
            "holonomy lost unitarity (deviation {unit_dev:.3e})"
        )));
    }

    let berry_phase = match kind {
        GateKind::BitPhase => None,
        GateKind::Phase | GateKind::ControlledPhase => {
            let spectators_ok = (0..d - 1).all(|k| (u[(k, k)] - 1.0).norm() <= 1e-6);
            spectators_ok.then(|| u[(d - 1, d - 1)].arg())
        }
    };
    let dark_labels = (0..d).map(|k| format!("D{k}")).collect();
    let unitary = Op::new(HilbertLayout::single("dark", d)?, u)?;
    Ok(HolonomyResult {
        dark_labels,
        unitary,
        berry_phase,
    })
}
