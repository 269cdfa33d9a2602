//! Per-iteration metrics, iterate-identity monitoring, oracle accounting and CSV output.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::game::GameProblem;
use crate::solvers::SolverKind;
use crate::splitting::Omega;

pub const CSV_HEADER: &str = "k,res,dist,feas,consensus,prox,fhat,grad_samples,S_k,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub k: usize,
    /// Dual-augmented residual `‖x − proj(x − F(x) − ∇g(x)ᵀλ)‖`.
    pub residual: f64,
    /// Primal-only residual `‖x − proj(x − F(x))‖`.
    pub primal_residual: f64,
    /// `‖ω − J_B(ω − Φ^{-1}Ā(ω))‖` of the noise-free update.
    pub fixed_point_residual: f64,
    pub dist_to_ref: Option<f64>,
    pub feasibility_gap: f64,
    pub consensus_gap: f64,
    pub prox_calls: u64,
    pub f_hat_calls: u64,
    pub grad_sample_calls: u64,
    pub batch_s: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Converged,
    Budget,
    Diverged { iteration: usize },
}

/// Cumulative oracle accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub prox: u64,
    pub f_hat: u64,
    pub grad_samples: u64,
}

impl Counters {
    pub fn delta(&self, earlier: &Counters) -> (u64, u64) {
        (self.prox - earlier.prox, self.f_hat - earlier.f_hat)
    }
}

/// Per-iteration `(prox, F̂)` increments.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CounterLog {
    pub per_iteration: Vec<(u64, u64)>,
}

impl CounterLog {
    pub fn push(&mut self, before: &Counters, after: &Counters) {
        self.per_iteration.push(after.delta(before));
    }

    pub fn cumulative(&self) -> (u64, u64) {
        self.per_iteration.iter().fold((0, 0), |(p, f), (dp, df)| (p + dp, f + df))
    }

    /// First iteration whose increments differ from the solver's signature.
    pub fn check_signature(&self, kind: SolverKind) -> Result<(), (usize, (u64, u64))> {
        let sig = kind.signature();
        match self.per_iteration.iter().position(|d| *d != sig) {
            Some(k) => Err((k, self.per_iteration[k])),
            None => Ok(()),
        }
    }
}

/// Per-iteration `(prox, F̂)` increments recovered from cumulative counters.
pub fn record_counters(cumulative: &[Counters]) -> CounterLog {
    let mut log = CounterLog::default();
    for w in cumulative.windows(2) {
        log.push(&w[0], &w[1]);
    }
    log
}

/// Largest pairwise distance between agents' dual blocks.
pub fn consensus_gap(lambda: &[f64], n_players: usize) -> f64 {
    if n_players <= 1 || lambda.is_empty() {
        return 0.0;
    }
    let m = lambda.len() / n_players;
    let mut worst: f64 = 0.0;
    for i in 0..n_players {
        for j in 0..i {
            let d: f64 = (0..m).map(|r| (lambda[i * m + r] - lambda[j * m + r]).powi(2)).sum();
            worst = worst.max(d.sqrt());
        }
    }
    worst
}

/// `‖max(0, Σ g_i(x_i))‖∞`; `None` when the game has no coupling constraints.
pub fn feasibility_gap(game: &GameProblem, x: &[f64]) -> Option<f64> {
    if game.m() == 0 {
        return None;
    }
    Some(game.coupling_value(x).iter().fold(0.0, |a, &v| a.max(v.max(0.0))))
}

/// Violations of the relaxation identities at one step, where `omega` is `ω^k`,
/// `bar_prev` is `ω̄^{k-1}` and `bar` is `ω̄^k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IdentityViolation {
    /// `‖(ω^k − ω̄^{k-1}) − (ω^k − ω̄^k)/δ‖`.
    pub first: f64,
    /// `‖ω^k − (ω̄^k − δ ω̄^{k-1})/(1 − δ)‖`.
    pub second: f64,
    /// `|δ/(1−δ)² ‖ω̄^k − ω̄^{k-1}‖² − δ ‖ω^k − ω̄^{k-1}‖²|`.
    pub third: f64,
    /// Same three quantities divided by their rounding scale: the largest iterate norm
    /// for the first two, and for the third the larger of the compared squares and
    /// `√max(a, b)·‖ω‖`, since the differences carry rounding of order `ε‖ω‖`. Every
    /// scale is at least 1, so unit-size runs are checked absolutely.
    pub first_rel: f64,
    pub second_rel: f64,
    pub third_rel: f64,
}

impl IdentityViolation {
    pub fn max_abs(&self) -> f64 {
        self.first.max(self.second).max(self.third)
    }

    pub fn max_rel(&self) -> f64 {
        self.first_rel.max(self.second_rel).max(self.third_rel)
    }

    fn merge(&mut self, o: &IdentityViolation) {
        self.first = self.first.max(o.first);
        self.second = self.second.max(o.second);
        self.third = self.third.max(o.third);
        self.first_rel = self.first_rel.max(o.first_rel);
        self.second_rel = self.second_rel.max(o.second_rel);
        self.third_rel = self.third_rel.max(o.third_rel);
    }
}

/// `None` when `δ ∉ (0, 1)`, where the identities are undefined.
pub fn identity_violation(omega: &Omega, bar_prev: &Omega, bar: &Omega, delta: f64) -> Option<IdentityViolation> {
    if !(delta > 0.0 && delta < 1.0) {
        return None;
    }
    let scale = omega.norm().max(bar_prev.norm()).max(bar.norm()).max(1.0);
    let lhs = omega.sub(bar_prev);
    let first = lhs.sub(&omega.sub(bar).scale(1.0 / delta)).norm();
    let second = omega.sub(&bar.add_scaled(-delta, bar_prev).scale(1.0 / (1.0 - delta))).norm();
    let a = delta / (1.0 - delta).powi(2) * bar.sub(bar_prev).norm_squared();
    let b = delta * lhs.norm_squared();
    let third = (a - b).abs();
    Some(IdentityViolation {
        first,
        second,
        third,
        first_rel: first / scale,
        second_rel: second / scale,
        third_rel: third / a.max(b).max(a.max(b).sqrt() * scale).max(1.0),
    })
}

/// Running maximum of [`identity_violation`] over a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IdentityMonitor {
    pub worst: IdentityViolation,
    pub checked: usize,
}

impl IdentityMonitor {
    pub fn observe(&mut self, omega: &Omega, bar_prev: &Omega, bar: &Omega, delta: f64) {
        if let Some(v) = identity_violation(omega, bar_prev, bar, delta) {
            self.worst.merge(&v);
            self.checked += 1;
        }
    }
}

/// Worst violations over a history of `(ω^k, ω̄^{k-1}, ω̄^k)` triples.
pub fn iterate_identities_check(history: &[(Omega, Omega, Omega)], delta: f64) -> Option<IdentityViolation> {
    if !(delta > 0.0 && delta < 1.0) {
        return None;
    }
    let mut m = IdentityMonitor::default();
    for (w, bp, b) in history {
        m.observe(w, bp, b, delta);
    }
    Some(m.worst)
}

/// Outcome of one solver run.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub kind: SolverKind,
    pub seed: u64,
    pub status: RunStatus,
    pub rows: Vec<MetricRow>,
    pub counters: CounterLog,
    pub identities: Option<IdentityMonitor>,
    #[serde(skip)]
    pub final_omega: Omega,
}

impl RunRecord {
    pub fn last(&self) -> &MetricRow {
        self.rows.last().expect("a record always holds the initial row")
    }

    pub fn final_x(&self) -> &DVector<f64> {
        &self.final_omega.x
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            let dist = r.dist_to_ref.map(|d| format!("{d:?}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:?},{},{:?},{:?},{},{},{},{},{}",
                r.k,
                r.residual,
                dist,
                r.feasibility_gap,
                r.consensus_gap,
                r.prox_calls,
                r.f_hat_calls,
                r.grad_sample_calls,
                r.batch_s,
                r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}
