//! Concave quadratic lower bound of the sum utility around an expansion
//! point `V̂`.
//!
//! Per user the bound is `g_u(V_u) = a_u + 2 Re Tr(S_uᴴ V_u) − Tr(V_uᴴ J^k V_u)`
//! where `k` is the user's cell. `J^k` collects the curvature every receiver
//! in the network sees from cell `k`, plus `β^k I`. The sum over users is
//! tight at `V̂` and below `f(V)` everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::linalg::{hermitian_part, hpd_factorize, hpd_solve, inner_re, trace_re, CMatrix};
use crate::network::Problem;
use crate::rate::{evaluate, penalty, PrecoderSet, RateError, ReceiverState};

/// Coefficients of the separable bound at one expansion point.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub expansion: PrecoderSet,
    /// Receiver quantities at `V̂`.
    pub states: Vec<ReceiverState>,
    /// `J^k`, one per cell.
    pub curvature: Vec<CMatrix>,
    /// `S_u`, one per user.
    pub linear: Vec<CMatrix>,
    /// Proximal weight per cell.
    pub beta: Vec<f64>,
    /// Constant `a_u`, one per user.
    pub constants: Vec<f64>,
    /// `S_u − J^k V̂_u`, half the gradient of `g_u` at `V̂_u`.
    pub gradient: Vec<CMatrix>,
    /// `f(V̂)`.
    pub expansion_utility: f64,
    /// `s(V̂)`.
    pub expansion_penalty: f64,
}

/// Builds the bound at `v_hat` with proximal weight `beta[k]` for cell `k`.
pub fn build_surrogate(problem: &Problem, v_hat: &PrecoderSet, beta: &[f64]) -> Result<SurrogateModel, RateError> {
    let ch = &problem.channels;
    let topo = &ch.topology;
    assert_eq!(beta.len(), topo.num_cells(), "one beta per cell");
    let eval = evaluate(problem, v_hat)?;
    let states = eval.states;

    // c_j U_j E_j⁻¹ U_jᴴ, the receive-side weight of user j
    let receive_weight: Vec<CMatrix> = states
        .iter()
        .map(|s| (&s.receiver * &s.mmse_inv * s.receiver.adjoint()).scale(s.weight))
        .collect();

    let curvature = crate::par_map(topo.num_cells(), |k| {
        let dim = topo.cell_dim(k);
        let mut j = CMatrix::identity(dim, dim).scale(beta[k]);
        for (user, w) in receive_weight.iter().enumerate() {
            let h = ch.link(user, k);
            j += h.adjoint() * w * h;
        }
        hermitian_part(&j)
    });

    let mut linear = Vec::with_capacity(topo.num_users());
    let mut constants = Vec::with_capacity(topo.num_users());
    let mut gradient = Vec::with_capacity(topo.num_users());
    for (u, s) in states.iter().enumerate() {
        let k = topo.user(u).cell;
        let v = v_hat.user(u);
        let lin = (ch.own_link(u).adjoint() * &s.receiver * &s.mmse_inv).scale(s.weight) + v.scale(beta[k]);
        let varying = 2.0 * inner_re(&lin, v) - quad(&curvature[k], v);
        constants.push(s.utility - varying);
        gradient.push(&lin - &curvature[k] * v);
        linear.push(lin);
    }

    Ok(SurrogateModel {
        expansion: v_hat.clone(),
        states,
        curvature,
        linear,
        beta: beta.to_vec(),
        constants,
        gradient,
        expansion_utility: eval.utility,
        expansion_penalty: eval.penalty,
    })
}

/// `Re Tr(Vᴴ J V)`.
pub fn quad(j: &CMatrix, v: &CMatrix) -> f64 {
    inner_re(v, &(j * v))
}

impl SurrogateModel {
    pub fn num_users(&self) -> usize {
        self.linear.len()
    }

    /// Smallest proximal weight over all cells.
    pub fn min_beta(&self) -> f64 {
        self.beta.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-user bound `g_u(V_u)`; `cell` is the user's cell.
///
/// Evaluated around the expansion point as
/// `f_u(R̂_u) + 2 Re Tr(G_uᴴ Δ) − Tr(Δᴴ J Δ)` with `Δ = V_u − V̂_u`, which
/// equals `a_u + 2 Re Tr(S_uᴴ V_u) − Tr(V_uᴴ J V_u)` and is exact at `V̂`.
pub fn eval_block_bound(model: &SurrogateModel, cell: usize, user: usize, v: &CMatrix) -> f64 {
    let delta = v - model.expansion.user(user);
    model.states[user].utility + 2.0 * inner_re(&model.gradient[user], &delta) - quad(&model.curvature[cell], &delta)
}

/// Bound on the sum utility, `Σ_u g_u(V_u)`.
pub fn eval_utility_bound(problem: &Problem, model: &SurrogateModel, v: &PrecoderSet) -> f64 {
    let topo = problem.topology();
    (0..v.num_users())
        .map(|u| eval_block_bound(model, topo.user(u).cell, u, v.user(u)))
        .sum()
}

/// `h(V; V̂) − s(V)`, the bound on the full objective.
pub fn eval_total_bound(problem: &Problem, model: &SurrogateModel, v: &PrecoderSet) -> f64 {
    eval_utility_bound(problem, model, v) - penalty(problem.topology(), v, &problem.penalty)
}

/// The bound restricted to the users of one cell, minus their penalty.
pub fn eval_cell_bound(problem: &Problem, model: &SurrogateModel, cell: usize, v_cell: &[CMatrix]) -> f64 {
    let topo = problem.topology();
    let users = topo.cell(cell).users.clone();
    let mut total = 0.0;
    for (u, v) in users.zip(v_cell) {
        total += eval_block_bound(model, cell, u, v);
        for q in 0..topo.cell(cell).num_bs {
            let g = problem.penalty.get(u, q);
            if g != 0.0 {
                let rows = topo.bs_rows(q);
                total -= g * v.rows(rows.start, rows.len()).norm();
            }
        }
    }
    total
}

/// First-stage bound `Σ_u [f_u(R̂_u) − c_u Tr(Ê_u⁻¹(E_u(V) − Ê_u))] − Σ β‖V − V̂‖²`,
/// using the exact MMSE matrices at `V`.
pub fn eval_first_stage_bound(
    problem: &Problem,
    v: &PrecoderSet,
    v_hat: &PrecoderSet,
    beta: &[f64],
) -> Result<f64, RateError> {
    let at_hat = evaluate(problem, v_hat)?;
    let at_v = evaluate(problem, v)?;
    let topo = problem.topology();
    let mut total = 0.0;
    for u in 0..v.num_users() {
        let s_hat = &at_hat.states[u];
        let de = &at_v.states[u].mmse - &s_hat.mmse;
        total += s_hat.utility - s_hat.weight * trace_re(&(&s_hat.mmse_inv * de));
        let k = topo.user(u).cell;
        total -= beta[k] * (v.user(u) - v_hat.user(u)).norm_squared();
    }
    Ok(total)
}

/// `l(V, C) = Re Tr(Ê⁻¹ VᴴHᴴC⁻¹HV)`, given `Ê⁻¹` directly.
pub fn l_value(e_inv: &CMatrix, h: &CMatrix, v: &CMatrix, c: &CMatrix) -> f64 {
    let hv = h * v;
    let f = hpd_factorize(&hermitian_part(c), 0.0).expect("C must be positive definite");
    let x = hpd_solve(&f, &hv).expect("dimensions match");
    trace_re(&(e_inv * hv.adjoint() * x))
}

/// Closed-form directional derivative of `l` at `(V, C)` along `(D, M)`:
/// `Tr(Ê⁻¹DᴴHᴴC⁻¹HV) + Tr(Ê⁻¹VᴴHᴴC⁻¹HD) − Tr(Ê⁻¹VᴴHᴴC⁻¹MC⁻¹HV)`.
pub fn l_directional_derivative(
    e_inv: &CMatrix,
    h: &CMatrix,
    v: &CMatrix,
    c: &CMatrix,
    d: &CMatrix,
    m: &CMatrix,
) -> f64 {
    let f = hpd_factorize(&hermitian_part(c), 0.0).expect("C must be positive definite");
    let hv = h * v;
    let hd = h * d;
    let ci_hv = hpd_solve(&f, &hv).expect("dimensions match");
    let ci_hd = hpd_solve(&f, &hd).expect("dimensions match");
    let t1 = trace_re(&(e_inv * hd.adjoint() * &ci_hv));
    let t2 = trace_re(&(e_inv * hv.adjoint() * ci_hd));
    let t3 = trace_re(&(e_inv * ci_hv.adjoint() * m * &ci_hv));
    t1 + t2 - t3
}

fn random_complex(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> CMatrix {
    use rand_distr::StandardNormal;
    CMatrix::from_fn(rows, cols, |_, _| {
        num_complex::Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

fn random_hpd(rng: &mut ChaCha20Rng, n: usize) -> CMatrix {
    let g = random_complex(rng, n, n);
    hermitian_part(&(&g * g.adjoint() + CMatrix::identity(n, n).scale(0.1)))
}

/// Samples random pairs `(V₁, C₁)`, `(V₂, C₂)` and `θ ∈ [0, 1]` and returns the
/// largest `l(θp₁ + (1−θ)p₂) − θ l(p₁) − (1−θ) l(p₂)`, scaled by
/// `max(1, |θ l(p₁) + (1−θ) l(p₂)|)`. A value near zero or below certifies
/// joint convexity on the samples.
pub fn lemma1_convexity_probe(e_hat: &CMatrix, h: &CMatrix, trials: usize, seed: u64) -> f64 {
    let e_inv = hpd_factorize(&hermitian_part(e_hat), 0.0).expect("Ê must be positive definite").inverse();
    let (n, m) = h.shape();
    let d = e_hat.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v1 = random_complex(&mut rng, m, d);
        let v2 = random_complex(&mut rng, m, d);
        let c1 = random_hpd(&mut rng, n);
        let c2 = random_hpd(&mut rng, n);
        let theta: f64 = rng.random();
        let vm = v1.scale(theta) + v2.scale(1.0 - theta);
        let cm = c1.scale(theta) + c2.scale(1.0 - theta);
        let chord = theta * l_value(&e_inv, h, &v1, &c1) + (1.0 - theta) * l_value(&e_inv, h, &v2, &c2);
        let gap = (l_value(&e_inv, h, &vm, &cm) - chord) / chord.abs().max(1.0);
        worst = worst.max(gap);
    }
    worst
}
