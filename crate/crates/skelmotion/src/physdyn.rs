//! Differentiable articulated-point-mass skeleton dynamics.
//!
//! The skeleton is modelled as one point mass per joint, so the mass matrix
//! is diag(mu), the Coriolis term vanishes, and gravity is the only
//! configuration force. Unilateral ground contact along the gravity axis is
//! resolved with a projected Gauss-Seidel LCP solve. One step is
//! semi-implicit: the position update uses the current velocity, the
//! velocity update solves the momentum balance including the contact
//! impulse.
//!
//! Every routine exists in two forms that share the same arithmetic: a plain
//! form over `&[f64]` and a traced form that records onto a
//! [`GraphBuilder`], so gradients through the solver can be checked against
//! finite differences.

use std::rc::Rc;

use crate::diffcore::{CustomOp, GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};

pub const LCP_MAX_SWEEPS: usize = 100;
pub const LCP_RESIDUAL_TOL: f64 = 1e-10;
/// Diagonal entries at or below this are treated as structurally zero and
/// their LCP component is left untouched.
const LCP_DIAG_FLOOR: f64 = 1e-14;

/// State of the point-mass skeleton in generalized coordinates. With the
/// point-mass model the generalized coordinates are simply all joint
/// coordinates stacked joint-major, dimension d = joints * dims_per_joint.
#[derive(Debug, Clone)]
pub struct PhysicsState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    /// Per-DOF masses, strictly positive.
    pub mass: Vec<f64>,
    /// Timestep in seconds, strictly positive.
    pub dt: f64,
}

impl PhysicsState {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>, mass: Vec<f64>, dt: f64) -> Result<Self> {
        if q.len() != qdot.len() || q.len() != mass.len() {
            return Err(Error::InvalidArgument(format!(
                "state dimensions disagree: q={}, qdot={}, mass={}",
                q.len(),
                qdot.len(),
                mass.len()
            )));
        }
        if dt <= 0.0 {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if mass.iter().any(|m| *m <= 0.0) {
            return Err(Error::InvalidArgument("masses must be strictly positive".into()));
        }
        if q.iter().chain(qdot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state".into()));
        }
        Ok(PhysicsState { q, qdot, mass, dt })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// Unilateral ground plane along the world gravity axis.
#[derive(Debug, Clone, Copy)]
pub struct ContactModel {
    pub ground_height: f64,
    /// Joints within `tolerance` above the plane count as contacting.
    pub tolerance: f64,
}

impl ContactModel {
    pub fn new(ground_height: f64, tolerance: f64) -> Result<Self> {
        if tolerance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "contact tolerance must be nonnegative, got {tolerance}"
            )));
        }
        Ok(ContactModel {
            ground_height,
            tolerance,
        })
    }
}

/// Ambient physics: gravity magnitude pulling toward the negative gravity
/// axis, the per-joint coordinate layout, and an optional contact plane
/// whose normal is the gravity axis.
#[derive(Debug, Clone, Copy)]
pub struct World {
    pub gravity: f64,
    pub dims_per_joint: usize,
    /// Index of the gravity-aligned coordinate within each joint block.
    pub gravity_axis: usize,
    pub contact: Option<ContactModel>,
}

impl World {
    pub fn new(gravity: f64, dims_per_joint: usize, gravity_axis: usize) -> Self {
        assert!(gravity_axis < dims_per_joint, "gravity axis out of range");
        World {
            gravity,
            dims_per_joint,
            gravity_axis,
            contact: None,
        }
    }

    pub fn with_contact(mut self, contact: ContactModel) -> Self {
        self.contact = Some(contact);
        self
    }

    fn is_gravity_dof(&self, dof: usize) -> bool {
        dof % self.dims_per_joint == self.gravity_axis
    }
}

/// Backward differences: qdot_t = (q_t - q_{t-1}) / dt, qdot_0 = 0.
pub fn estimate_velocity(positions: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if positions.len() < 2 {
        return Err(Error::InvalidArgument(
            "velocity estimation needs at least two frames".into(),
        ));
    }
    let d = positions[0].len();
    let mut out = Vec::with_capacity(positions.len());
    out.push(vec![0.0; d]);
    for t in 1..positions.len() {
        let v = positions[t]
            .iter()
            .zip(&positions[t - 1])
            .map(|(a, b)| (a - b) / dt)
            .collect();
        out.push(v);
    }
    Ok(out)
}

/// Dense mass matrix diag(mu). Under the point-mass model it does not
/// depend on the configuration.
pub fn mass_matrix(mass: &[f64]) -> Result<Vec<f64>> {
    if mass.iter().any(|m| *m <= 0.0) {
        return Err(Error::InvalidArgument("masses must be strictly positive".into()));
    }
    let d = mass.len();
    let mut m = vec![0.0; d * d];
    for (i, mu) in mass.iter().enumerate() {
        m[i * d + i] = *mu;
    }
    Ok(m)
}

/// Combined Coriolis and gravity term as it appears in the momentum balance
/// M qdot' = M qdot - dt (c - f) + J^T tau. The Coriolis part is identically
/// zero for point masses; gravity contributes +mu * g on each gravity-axis
/// DOF so that free fall integrates to qdot' = qdot - dt * g.
pub fn coriolis_gravity(world: &World, mass: &[f64]) -> Vec<f64> {
    mass.iter()
        .enumerate()
        .map(|(i, mu)| {
            if world.is_gravity_dof(i) {
                mu * world.gravity
            } else {
                0.0
            }
        })
        .collect()
}

/// Contact Jacobian as the list of gravity-axis DOF indices of contacting
/// joints. Each implied dense row selects exactly that velocity component.
#[derive(Debug, Clone)]
pub struct ContactSet {
    pub dofs: Vec<usize>,
    pub dof_total: usize,
}

impl ContactSet {
    pub fn rows(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Dense k x d Jacobian with 0/1 entries.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut j = vec![0.0; self.dofs.len() * self.dof_total];
        for (r, dof) in self.dofs.iter().enumerate() {
            j[r * self.dof_total + dof] = 1.0;
        }
        j
    }
}

/// Joints whose gravity-axis coordinate is at or below ground + tolerance.
/// A world without a contact plane yields an empty set.
pub fn contact_jacobian(world: &World, q: &[f64]) -> ContactSet {
    let mut dofs = Vec::new();
    if let Some(contact) = &world.contact {
        let joints = q.len() / world.dims_per_joint;
        for j in 0..joints {
            let dof = j * world.dims_per_joint + world.gravity_axis;
            if q[dof] <= contact.ground_height + contact.tolerance {
                dofs.push(dof);
            }
        }
    }
    ContactSet {
        dofs,
        dof_total: q.len(),
    }
}

/// LCP data: find tau >= 0 with v = A tau + b >= 0 and tau^T v = 0.
#[derive(Debug, Clone)]
pub struct LcpProblem {
    pub n: usize,
    /// Row-major n x n, symmetric positive semidefinite.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LcpSolution {
    pub tau: Vec<f64>,
    pub v: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
}

/// Natural-map residual max_i |tau_i - max(0, tau_i - v_i)| with
/// v = A tau + b.
fn lcp_residual(n: usize, a: &[f64], b: &[f64], tau: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut v = b[i];
        for j in 0..n {
            v += a[i * n + j] * tau[j];
        }
        worst = worst.max((tau[i] - (tau[i] - v).max(0.0)).abs());
    }
    worst
}

/// Projected Gauss-Seidel sweeps from tau = 0. When `trace` is given, every
/// elementary update appends (i, z, tau-before) so the unrolled iteration
/// can be differentiated in reverse.
fn pgs_iterate(
    n: usize,
    a: &[f64],
    b: &[f64],
    trace: Option<&mut Vec<f64>>,
) -> (Vec<f64>, usize, f64) {
    let mut tau = vec![0.0; n];
    let mut trace = trace;
    let mut residual = lcp_residual(n, a, b, &tau);
    let mut sweeps = 0;
    while residual > LCP_RESIDUAL_TOL && sweeps < LCP_MAX_SWEEPS {
        for i in 0..n {
            let a_ii = a[i * n + i];
            if a_ii.abs() <= LCP_DIAG_FLOOR {
                continue;
            }
            let mut v = b[i];
            for j in 0..n {
                v += a[i * n + j] * tau[j];
            }
            let z = tau[i] - v / a_ii;
            if let Some(t) = trace.as_deref_mut() {
                t.push(i as f64);
                t.push(z);
                t.extend_from_slice(&tau);
            }
            tau[i] = z.max(0.0);
        }
        sweeps += 1;
        residual = lcp_residual(n, a, b, &tau);
    }
    (tau, sweeps, residual)
}

/// Solve the LCP by projected Gauss-Seidel. Errors carry the best iterate
/// and the natural-map residual when the sweep cap is hit.
pub fn solve_lcp(problem: &LcpProblem) -> Result<LcpSolution> {
    let n = problem.n;
    if problem.a.len() != n * n || problem.b.len() != n {
        return Err(Error::InvalidArgument(format!(
            "LCP dimensions disagree: n={}, |A|={}, |b|={}",
            n,
            problem.a.len(),
            problem.b.len()
        )));
    }
    let (tau, sweeps, residual) = pgs_iterate(n, &problem.a, &problem.b, None);
    if residual > LCP_RESIDUAL_TOL {
        return Err(Error::LcpNonConvergence {
            residual,
            sweeps,
            best_iterate: tau,
        });
    }
    let mut v = problem.b.clone();
    for i in 0..n {
        for j in 0..n {
            v[i] += problem.a[i * n + j] * tau[j];
        }
    }
    Ok(LcpSolution {
        tau,
        v,
        sweeps,
        residual,
    })
}

/// Assemble the contact LCP for the current step:
/// A = J M^-1 J^T, b = J (qdot + dt M^-1 (f - c)).
pub fn contact_lcp(contacts: &ContactSet, mass: &[f64], qdot_mid: &[f64]) -> LcpProblem {
    let k = contacts.rows();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (r, dof_r) in contacts.dofs.iter().enumerate() {
        for (c, dof_c) in contacts.dofs.iter().enumerate() {
            if dof_r == dof_c {
                a[r * k + c] = 1.0 / mass[*dof_r];
            }
        }
        b[r] = qdot_mid[*dof_r];
    }
    LcpProblem { n: k, a, b }
}

/// One semi-implicit step. The position update uses the current velocity;
/// the velocity update solves M qdot' = M qdot - dt (c - f) + J^T tau with
/// tau from the contact LCP evaluated at the current configuration.
pub fn physics_step(state: &PhysicsState, force: &[f64], world: &World) -> Result<PhysicsState> {
    let d = state.dof();
    if force.len() != d {
        return Err(Error::InvalidArgument(format!(
            "force has dimension {}, state has {}",
            force.len(),
            d
        )));
    }
    let dt = state.dt;
    let q_next: Vec<f64> = state
        .q
        .iter()
        .zip(&state.qdot)
        .map(|(q, qd)| q + dt * qd)
        .collect();

    let c = coriolis_gravity(world, &state.mass);
    let mut qdot_mid = vec![0.0; d];
    for i in 0..d {
        qdot_mid[i] = state.qdot[i] + dt * ((force[i] - c[i]) / state.mass[i]);
    }

    let contacts = contact_jacobian(world, &state.q);
    let qdot_next = if contacts.is_empty() {
        qdot_mid
    } else {
        let problem = contact_lcp(&contacts, &state.mass, &qdot_mid);
        let solution = solve_lcp(&problem)?;
        let mut jt_tau = vec![0.0; d];
        for (r, dof) in contacts.dofs.iter().enumerate() {
            jt_tau[*dof] += solution.tau[r];
        }
        let mut qdot_next = qdot_mid;
        for i in 0..d {
            qdot_next[i] += jt_tau[i] / state.mass[i];
        }
        qdot_next
    };

    PhysicsState::new(q_next, qdot_next, state.mass.clone(), dt)
}

/// Iterated [`physics_step`], feeding each output state forward. Returns one
/// state per applied force.
pub fn rollout(
    state: &PhysicsState,
    forces: &[Vec<f64>],
    world: &World,
) -> Result<Vec<PhysicsState>> {
    if forces.is_empty() {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(forces.len());
    let mut current = state.clone();
    for f in forces {
        current = physics_step(&current, f, world)?;
        out.push(current.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Graph-traced forms
// ---------------------------------------------------------------------------

/// LCP solve as a graph operation. Backpropagates through the unrolled
/// projected Gauss-Seidel sweeps, which is piecewise smooth; gradient checks
/// are only meaningful away from active-set boundaries.
pub struct LcpPgsOp;

impl CustomOp for LcpPgsOp {
    fn name(&self) -> &'static str {
        "lcp_pgs"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
        let a = inputs[0];
        let b = inputs[1];
        let (n, n2) = a.dims2()?;
        if n != n2 || b.numel() != n {
            return Err(Error::Shape {
                op: "lcp_pgs",
                detail: format!("A is {:?}, b has {} entries", a.shape(), b.numel()),
            });
        }
        let mut trace = Vec::new();
        let (tau, sweeps, residual) = pgs_iterate(n, a.data(), b.data(), Some(&mut trace));
        if residual > LCP_RESIDUAL_TOL {
            return Err(Error::LcpNonConvergence {
                residual,
                sweeps,
                best_iterate: tau,
            });
        }
        Ok((Tensor::vector(tau), trace))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        aux: &[f64],
        grad_out: &Tensor,
    ) -> Vec<Tensor> {
        let a = inputs[0].data();
        let b = inputs[1].data();
        let n = inputs[1].numel();
        let stride = n + 2;
        let updates = aux.len() / stride;

        let mut g_tau = grad_out.data().to_vec();
        let mut da = vec![0.0; n * n];
        let mut db = vec![0.0; n];
        for u in (0..updates).rev() {
            let rec = &aux[u * stride..(u + 1) * stride];
            let i = rec[0] as usize;
            let z = rec[1];
            let tau_before = &rec[2..];
            let g_new = g_tau[i];
            // The pre-update tau_i cancels out of z exactly, so the old
            // component receives nothing through this assignment.
            g_tau[i] = 0.0;
            if z <= 0.0 || g_new == 0.0 {
                continue;
            }
            let a_ii = a[i * n + i];
            db[i] -= g_new / a_ii;
            let mut s = b[i];
            for j in 0..n {
                if j != i {
                    s += a[i * n + j] * tau_before[j];
                }
            }
            da[i * n + i] += g_new * s / (a_ii * a_ii);
            for j in 0..n {
                if j == i {
                    continue;
                }
                da[i * n + j] -= g_new * tau_before[j] / a_ii;
                g_tau[j] -= g_new * a[i * n + j] / a_ii;
            }
        }
        vec![
            Tensor::new(inputs[0].shape().to_vec(), da).expect("shape preserved"),
            Tensor::vector(db),
        ]
    }
}

/// Node ids of one traced step's outputs.
pub struct TracedStep {
    pub q_next: NodeId,
    pub qdot_next: NodeId,
}

/// Record one semi-implicit step onto the graph. The contact active set is
/// read from the current value of `q` and frozen into the step, matching
/// the piecewise-smooth treatment of the contact dynamics.
pub fn physics_step_traced(
    gb: &mut GraphBuilder,
    q: NodeId,
    qdot: NodeId,
    force: NodeId,
    mass: NodeId,
    dt: f64,
    world: &World,
) -> Result<TracedStep> {
    let d = gb.value(q).numel();
    let dq = gb.scale(qdot, dt)?;
    let q_next = gb.add(q, dq)?;

    let gravity_vec: Vec<f64> = (0..d)
        .map(|i| if world.is_gravity_dof(i) { world.gravity } else { 0.0 })
        .collect();
    let gvec = gb.constant(Tensor::vector(gravity_vec));
    let c = gb.mul(mass, gvec)?;
    let imp = gb.sub(force, c)?;
    let acc = gb.div(imp, mass)?;
    let dv = gb.scale(acc, dt)?;
    let qdot_mid = gb.add(qdot, dv)?;

    let contacts = contact_jacobian(world, gb.value(q).data());
    let qdot_next = if contacts.is_empty() {
        qdot_mid
    } else {
        let k = contacts.rows();
        let j_dense = contacts.to_dense();
        let j_const = gb.constant(Tensor::matrix(k, d, j_dense.clone())?);
        let mut jt_dense = vec![0.0; d * k];
        crate::diffcore::transpose(&j_dense, &mut jt_dense, k, d);
        let jt_const = gb.constant(Tensor::matrix(d, k, jt_dense)?);

        let ones = gb.constant(Tensor::full(&[d], 1.0));
        let minv = gb.div(ones, mass)?;
        let jm = gb.mul_row_vec(j_const, minv)?;
        let a = gb.matmul(jm, jt_const)?;
        let qdot_col = gb.reshape(qdot_mid, vec![d, 1])?;
        let b_col = gb.matmul(j_const, qdot_col)?;
        let b_vec = gb.reshape(b_col, vec![k])?;
        let tau = gb.custom(Rc::new(LcpPgsOp), vec![a, b_vec])?;
        let tau_col = gb.reshape(tau, vec![k, 1])?;
        let jt_tau_col = gb.matmul(jt_const, tau_col)?;
        let jt_tau = gb.reshape(jt_tau_col, vec![d])?;
        let dv_contact = gb.div(jt_tau, mass)?;
        gb.add(qdot_mid, dv_contact)?
    };

    Ok(TracedStep { q_next, qdot_next })
}

/// Traced rollout: `forces` is an H x d matrix node, one row per step.
/// Returns the per-step position nodes and the final step outputs.
pub fn rollout_traced(
    gb: &mut GraphBuilder,
    q0: NodeId,
    qdot0: NodeId,
    forces: NodeId,
    mass: NodeId,
    dt: f64,
    world: &World,
) -> Result<Vec<TracedStep>> {
    let (horizon, d) = gb.value(forces).dims2()?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    if gb.value(q0).numel() != d {
        return Err(Error::Shape {
            op: "rollout",
            detail: format!("forces have {} DOFs, state has {}", d, gb.value(q0).numel()),
        });
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut q = q0;
    let mut qdot = qdot0;
    for h in 0..horizon {
        let f = gb.row_select(forces, h)?;
        let step = physics_step_traced(gb, q, qdot, f, mass, dt, world)?;
        q = step.q_next;
        qdot = step.qdot_next;
        steps.push(step);
    }
    Ok(steps)
}
