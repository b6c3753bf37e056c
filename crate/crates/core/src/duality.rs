//! Primal-dual outer loop for fair and constrained multi-objective coverage.
//!
//! The multipliers λ weight the IDFs into a single combined field
//! `φ_λ = Σ_m λ_m φ_m`, on which any single-objective [`Policy`] acts as the
//! primal solver for `T` steps. The windowed per-IDF costs then drive the
//! projected dual ascent step.
//!
//! Costs entering the dual are normalized per IDF by their value at the
//! initial configuration (unless disabled in [`RunOptions`]), so objective
//! `J̃_m = J_m / J_m(X₀)` starts at one for every IDF. Minimizing
//! `Σ λ_m J̃_m` is coverage of `Σ (λ_m / J_m(X₀)) φ_m`, which is the field
//! handed to the policy.

use log::debug;

use crate::comms::{build_graph, shift_operator};
use crate::controllers::{ControlParams, Policy, Snapshot};
use crate::error::{CoreError, Result};
use crate::field::{GridField, Point};
use crate::numeric::exact_sum;
use crate::voronoi::{partition, SquaredDistance};
use crate::world::{combined_field, World};

/// Dual step used when none is configured.
pub const DEFAULT_FAIR_STEP: f64 = 0.5;
pub const DEFAULT_CONSTRAINED_STEP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum DualMode {
    /// Minimize the maximum cost; λ lives on the probability simplex.
    Fair,
    /// Keep every cost below its threshold α_m; λ lives in the orthant.
    Constrained { alpha: Vec<f64> },
}

impl DualMode {
    pub fn name(&self) -> &'static str {
        match self {
            DualMode::Fair => "fair",
            DualMode::Constrained { .. } => "constrained",
        }
    }
}

/// Mean of each IDF's cost over the window.
pub fn slack_fair(window: &[Vec<f64>], period: usize) -> Result<Vec<f64>> {
    if period == 0 || window.len() != period {
        return Err(CoreError::State(format!(
            "dual window holds {} of {} steps",
            window.len(),
            period
        )));
    }
    let m = window[0].len();
    if window.iter().any(|row| row.len() != m) {
        return Err(CoreError::Dimension("ragged cost window".into()));
    }
    let mut mean = vec![0.0; m];
    for row in window {
        for (acc, j) in mean.iter_mut().zip(row) {
            *acc += j;
        }
    }
    for v in &mut mean {
        *v /= period as f64;
    }
    Ok(mean)
}

/// Windowed mean cost minus threshold; positive means violated.
pub fn slack_constrained(window: &[Vec<f64>], alpha: &[f64], period: usize) -> Result<Vec<f64>> {
    let mean = slack_fair(window, period)?;
    if mean.len() != alpha.len() {
        return Err(CoreError::Dimension(format!(
            "{} costs but {} thresholds",
            mean.len(),
            alpha.len()
        )));
    }
    Ok(mean.iter().zip(alpha).map(|(j, a)| j - a).collect())
}

/// `max(0, λ_i + η·s_i)` elementwise.
pub fn dual_update(lambda: &[f64], slack: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(CoreError::Config(format!("dual step must be positive, got {step}")));
    }
    if lambda.len() != slack.len() {
        return Err(CoreError::Dimension(format!(
            "{} multipliers but {} slacks",
            lambda.len(),
            slack.len()
        )));
    }
    Ok(lambda.iter().zip(slack).map(|(l, s)| (l + step * s).max(0.0)).collect())
}

/// Inputs this close to the simplex (per coordinate) are returned unchanged,
/// which makes the projection exactly idempotent on its own outputs.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Euclidean projection onto `{λ ≥ 0, Σ λ = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(CoreError::Domain("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Domain("cannot project a non-finite vector".into()));
    }
    let total = exact_sum(v.iter().copied());
    if v.iter().all(|x| *x >= 0.0) && (total - 1.0).abs() <= SIMPLEX_TOLERANCE * v.len() as f64 {
        return Ok(v.to_vec());
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|x| (x - theta).max(0.0)).collect())
}

/// One completed dual iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualUpdate {
    pub iteration: usize,
    pub slack: Vec<f64>,
    pub lambda_before: Vec<f64>,
    pub lambda_after: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DualState {
    mode: DualMode,
    lambda: Vec<f64>,
    step: f64,
    period: usize,
    window: Vec<Vec<f64>>,
    iteration: usize,
}

impl DualState {
    /// Uniform λ = 1/M.
    pub fn fair(num_idfs: usize, step: f64, period: usize) -> Result<Self> {
        if num_idfs == 0 {
            return Err(CoreError::Domain("fair mode needs at least one IDF".into()));
        }
        Self::with_lambda(DualMode::Fair, vec![1.0 / num_idfs as f64; num_idfs], step, period)
    }

    /// λ = 0.
    pub fn constrained(alpha: Vec<f64>, step: f64, period: usize) -> Result<Self> {
        let m = alpha.len();
        Self::with_lambda(DualMode::Constrained { alpha }, vec![0.0; m], step, period)
    }

    pub fn with_lambda(mode: DualMode, lambda: Vec<f64>, step: f64, period: usize) -> Result<Self> {
        if !(step > 0.0) {
            return Err(CoreError::Config(format!("dual step must be positive, got {step}")));
        }
        if period == 0 {
            return Err(CoreError::Config("dual period must be at least 1".into()));
        }
        if lambda.is_empty() || lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(CoreError::Domain(format!("invalid initial multipliers {lambda:?}")));
        }
        if let DualMode::Constrained { alpha } = &mode {
            if alpha.len() != lambda.len() {
                return Err(CoreError::Dimension(
                    "thresholds and multipliers differ in length".into(),
                ));
            }
        }
        if mode == DualMode::Fair && (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CoreError::Domain("fair multipliers must sum to one".into()));
        }
        Ok(Self {
            mode,
            lambda,
            step,
            period,
            window: Vec::with_capacity(period),
            iteration: 0,
        })
    }

    pub fn mode(&self) -> &DualMode {
        &self.mode
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn window_complete(&self) -> bool {
        self.window.len() == self.period
    }

    /// Appends one primal step's per-IDF costs to the window.
    pub fn record(&mut self, costs: Vec<f64>) -> Result<()> {
        if self.window_complete() {
            return Err(CoreError::State("dual window already full".into()));
        }
        if costs.len() != self.lambda.len() {
            return Err(CoreError::Dimension(format!(
                "{} costs for {} multipliers",
                costs.len(),
                self.lambda.len()
            )));
        }
        self.window.push(costs);
        Ok(())
    }

    pub fn slack(&self) -> Result<Vec<f64>> {
        match &self.mode {
            DualMode::Fair => slack_fair(&self.window, self.period),
            DualMode::Constrained { alpha } => slack_constrained(&self.window, alpha, self.period),
        }
    }

    /// Dual ascent and projection on a complete window, which is then cleared.
    pub fn update(&mut self) -> Result<DualUpdate> {
        let slack = self.slack()?;
        let ascended = dual_update(&self.lambda, &slack, self.step)?;
        let next = match self.mode {
            DualMode::Fair => project_simplex(&ascended)?,
            DualMode::Constrained { .. } => ascended,
        };
        self.iteration += 1;
        let record = DualUpdate {
            iteration: self.iteration,
            slack,
            lambda_before: std::mem::replace(&mut self.lambda, next.clone()),
            lambda_after: next,
        };
        self.window.clear();
        Ok(record)
    }

    /// Closes a window without moving λ (fixed-weight baseline runs).
    pub fn skip_update(&mut self) -> Result<DualUpdate> {
        let slack = self.slack()?;
        self.iteration += 1;
        self.window.clear();
        Ok(DualUpdate {
            iteration: self.iteration,
            slack,
            lambda_before: self.lambda.clone(),
            lambda_after: self.lambda.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub num_steps: usize,
    /// Apply dual updates; `false` keeps the initial λ (baseline).
    pub dual_updates: bool,
    /// Divide each IDF's cost by its initial value.
    pub normalize_costs: bool,
}

impl RunOptions {
    pub fn new(num_steps: usize) -> Self {
        Self {
            num_steps,
            dual_updates: true,
            normalize_costs: true,
        }
    }
}

/// State after one primal step (`step = 0` is the initial configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    /// Per-IDF costs as seen by the dual (normalized if enabled).
    pub costs: Vec<f64>,
    pub raw_costs: Vec<f64>,
    pub objective_cost: Option<f64>,
    /// Multipliers in force for the next primal step.
    pub lambda: Vec<f64>,
    pub positions: Vec<Point>,
}

impl StepRecord {
    pub fn max_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub policy: String,
    pub mode: DualMode,
    pub cost_scale: Vec<f64>,
    pub objective_scale: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub updates: Vec<DualUpdate>,
}

impl RunTrace {
    pub fn final_step(&self) -> &StepRecord {
        self.steps.last().expect("trace holds the initial state")
    }

    pub fn final_max_cost(&self) -> f64 {
        self.final_step().max_cost()
    }

    /// Per-IDF mean cost over the last `window` primal steps.
    pub fn final_window_mean(&self, window: usize) -> Vec<f64> {
        let tail = &self.steps[self.steps.len().saturating_sub(window).max(1)..];
        let m = self.cost_scale.len();
        let mut mean = vec![0.0; m];
        for rec in tail {
            for (acc, c) in mean.iter_mut().zip(&rec.costs) {
                *acc += c;
            }
        }
        mean.iter().map(|v| v / tail.len() as f64).collect()
    }
}

fn true_costs(world: &World, part: &crate::voronoi::Partition) -> Result<(Vec<f64>, Option<f64>)> {
    let costs = world
        .idfs
        .iter()
        .map(|f| part.cost(f, &SquaredDistance))
        .collect::<Result<Vec<_>>>()?;
    let objective = world
        .objective
        .as_ref()
        .map(|f| part.cost(f, &SquaredDistance))
        .transpose()?;
    Ok((costs, objective))
}

fn scale_of(cost: f64, normalize: bool) -> f64 {
    if normalize && cost > 0.0 {
        cost
    } else {
        1.0
    }
}

/// Runs `num_steps / T` dual iterations of `T` primal steps each.
///
/// Each primal step: sense, build the communication graph, query the policy
/// on `φ_λ`, integrate, sense again and log the true per-IDF costs of the
/// new configuration. After every `T` steps the dual variables are updated
/// from the window and, in fair mode, projected onto the simplex.
pub fn run_primal_dual(
    policy: &mut dyn Policy,
    world: &mut World,
    dual: &mut DualState,
    options: RunOptions,
) -> Result<RunTrace> {
    let period = dual.period();
    if !options.num_steps.is_multiple_of(period) {
        return Err(CoreError::State(format!(
            "{} steps do not divide into dual periods of {}",
            options.num_steps, period
        )));
    }
    if dual.lambda().len() != world.idfs.len() {
        return Err(CoreError::Dimension(format!(
            "{} multipliers for {} IDFs",
            dual.lambda().len(),
            world.idfs.len()
        )));
    }
    let params = ControlParams::from(&world.config);
    let comm_radius = world.config.comm_radius;

    world.sense_all();
    let mut part = partition(&world.positions(), &world.shape)?;
    let (raw0, obj0) = true_costs(world, &part)?;
    let cost_scale: Vec<f64> = raw0.iter().map(|c| scale_of(*c, options.normalize_costs)).collect();
    let objective_scale = obj0.map(|c| scale_of(c, options.normalize_costs));
    let normalize = |raw: &[f64]| -> Vec<f64> { raw.iter().zip(&cost_scale).map(|(c, s)| c / s).collect() };

    let mut steps = vec![StepRecord {
        step: 0,
        time_s: 0.0,
        costs: normalize(&raw0),
        raw_costs: raw0,
        objective_cost: obj0.zip(objective_scale).map(|(c, s)| c / s),
        lambda: dual.lambda().to_vec(),
        positions: world.positions(),
    }];
    let mut updates = Vec::new();

    let mut fields: Vec<GridField> = world.idfs.clone();
    if let Some(obj) = &world.objective {
        fields.push(obj.clone());
    }

    for k in 0..options.num_steps / period {
        let mut weights: Vec<f64> = dual.lambda().iter().zip(&cost_scale).map(|(l, s)| l / s).collect();
        if let Some(s) = objective_scale {
            weights.push(1.0 / s);
        }
        let combined = combined_field(&fields, &weights)?;
        for _ in 0..period {
            let positions = world.positions();
            let graph = build_graph(&positions, comm_radius);
            let shift = shift_operator(&graph);
            let snapshot = Snapshot {
                shape: world.shape,
                params,
                comm_radius,
                robots: &world.robots,
                combined_true: &combined,
                partition: &part,
                graph: &graph,
                shift: &shift,
            };
            let actions = policy.compute_actions(&snapshot)?;
            world.apply_actions(&actions)?;
            world.sense_all();
            part = partition(&world.positions(), &world.shape)?;
            let (raw, obj) = true_costs(world, &part)?;
            let costs = normalize(&raw);
            dual.record(costs.clone())?;
            let step = steps.len();
            steps.push(StepRecord {
                step,
                time_s: step as f64 * params.dt,
                costs,
                raw_costs: raw,
                objective_cost: obj.zip(objective_scale).map(|(c, s)| c / s),
                lambda: dual.lambda().to_vec(),
                positions: world.positions(),
            });
        }
        let update = if options.dual_updates {
            dual.update()?
        } else {
            dual.skip_update()?
        };
        debug!(
            "{} dual step {}: slack {:?} lambda {:?}",
            policy.name(),
            k + 1,
            update.slack,
            update.lambda_after
        );
        steps.last_mut().expect("nonempty").lambda = update.lambda_after.clone();
        updates.push(update);
    }

    Ok(RunTrace {
        policy: policy.name().to_string(),
        mode: dual.mode().clone(),
        cost_scale,
        objective_scale,
        steps,
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ClairvoyantCvt;
    use crate::world::{world_rng, WorldConfig};
    use proptest::prelude::*;

    /// Minimizes ‖x − v‖² over the simplex by enumerating supports and
    /// solving each equality-constrained subproblem in closed form (KKT).
    pub(crate) fn simplex_oracle(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for support in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| support & (1 << i) != 0).collect();
            let shift = (idx.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / idx.len() as f64;
            let mut x = vec![0.0; n];
            let mut feasible = true;
            for &i in &idx {
                x[i] = v[i] - shift;
                if x[i] < 0.0 {
                    feasible = false;
                }
            }
            if !feasible {
                continue;
            }
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
        best.expect("some support is feasible").1
    }

    #[test]
    fn slack_examples() {
        let window = vec![vec![2.0]; 3];
        assert_eq!(slack_fair(&window, 3).unwrap(), vec![2.0]);
        assert_eq!(slack_fair(&[vec![1.0], vec![3.0]], 2).unwrap(), vec![2.0]);
        assert!(matches!(slack_fair(&window, 4), Err(CoreError::State(_))));

        let window = vec![vec![2.0, 1.0, 0.2]; 5];
        let s = slack_constrained(&window, &[0.5, 1.0, 0.7], 5).unwrap();
        assert_eq!(s[0], 1.5);
        assert_eq!(s[1], 0.0);
        assert!(s[2] < 0.0);
    }

    #[test]
    fn slack_matches_recomputed_mean() {
        let mut rng = world_rng(1);
        use rand::Rng;
        let window: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..5.0)).collect())
            .collect();
        let s = slack_fair(&window, 7).unwrap();
        for m in 0..3 {
            let mean = window.iter().map(|r| r[m]).sum::<f64>() / 7.0;
            assert!((s[m] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn dual_update_examples() {
        let out = dual_update(&[0.5], &[-2.0], 0.1).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-15);
        assert_eq!(dual_update(&[0.1], &[-5.0], 0.1).unwrap(), vec![0.0]);
        assert_eq!(dual_update(&[0.7], &[0.0], 0.1).unwrap(), vec![0.7]);
        assert!(matches!(dual_update(&[0.7], &[0.0], 0.0), Err(CoreError::Config(_))));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.25; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(project_simplex(&[1.5, 0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[-1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(simplex_oracle(&[1.5, 0.5]), vec![1.0, 0.0]);
        assert_eq!(simplex_oracle(&[-1.0, 1.0]), vec![0.0, 1.0]);
        assert!(matches!(project_simplex(&[]), Err(CoreError::Domain(_))));
    }

    proptest! {
        #[test]
        fn projection_matches_kkt_oracle(v in prop::collection::vec(-3.0f64..3.0, 1..=8)) {
            let p = project_simplex(&v).unwrap();
            let o = simplex_oracle(&v);
            for (a, b) in p.iter().zip(&o) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(project_simplex(&p).unwrap(), p);
        }

        #[test]
        fn satisfied_constraints_lower_lambda(
            pairs in prop::collection::vec((0.0f64..5.0, -3.0f64..3.0), 1..=8),
            step in 0.01f64..1.0,
        ) {
            let (lambda, slack): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let next = dual_update(&lambda, &slack, step).unwrap();
            for i in 0..lambda.len() {
                prop_assert!(next[i] >= 0.0);
                if slack[i] < 0.0 {
                    prop_assert!(next[i] == 0.0 || next[i] < lambda[i]);
                }
            }
        }
    }

    fn tiny_world(num_idfs: usize, seed: u64) -> World {
        let cfg = WorldConfig {
            env_size: 128.0,
            num_robots: 4,
            num_idfs,
            sensor_size: 16,
            comm_radius: 64.0,
            num_steps: 100,
            dual_period: 10,
            ..WorldConfig::default()
        };
        World::generate(&cfg, &mut world_rng(seed)).unwrap()
    }

    #[test]
    fn single_idf_fair_lambda_stays_one() {
        let mut world = tiny_world(1, 2);
        let mut dual = DualState::fair(1, DEFAULT_FAIR_STEP, 10).unwrap();
        let trace = run_primal_dual(&mut ClairvoyantCvt, &mut world, &mut dual, RunOptions::new(100)).unwrap();
        assert_eq!(trace.updates.len(), 10);
        assert!(trace.updates.iter().all(|u| u.lambda_after == vec![1.0]));
        assert_eq!(trace.steps.len(), 101);
        assert_eq!(trace.steps[0].costs, vec![1.0]);
    }

    #[test]
    fn satisfied_constraints_keep_lambda_at_zero() {
        let mut world = tiny_world(2, 3);
        let mut dual = DualState::constrained(vec![5.0, 5.0], DEFAULT_CONSTRAINED_STEP, 10).unwrap();
        let trace = run_primal_dual(&mut ClairvoyantCvt, &mut world, &mut dual, RunOptions::new(50)).unwrap();
        assert!(trace.updates.iter().all(|u| u.lambda_after == vec![0.0, 0.0]));
    }

    #[test]
    fn fair_weight_follows_the_worst_idf() {
        for seed in 0..3 {
            let mut world = tiny_world(2, seed);
            let mut dual = DualState::fair(2, DEFAULT_FAIR_STEP, 10).unwrap();
            let trace = run_primal_dual(&mut ClairvoyantCvt, &mut world, &mut dual, RunOptions::new(100)).unwrap();
            for u in &trace.updates {
                let (hi, lo) = if u.slack[0] >= u.slack[1] { (0, 1) } else { (1, 0) };
                if u.slack[hi] > u.slack[lo] {
                    assert!(u.lambda_after[hi] >= u.lambda_before[hi]);
                    assert!(u.lambda_after[lo] <= u.lambda_before[lo]);
                }
                assert!((u.lambda_after.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn misaligned_window_is_rejected() {
        let mut world = tiny_world(2, 1);
        let mut dual = DualState::fair(2, DEFAULT_FAIR_STEP, 10).unwrap();
        assert!(matches!(
            run_primal_dual(&mut ClairvoyantCvt, &mut world, &mut dual, RunOptions::new(95)),
            Err(CoreError::State(_))
        ));
    }

    #[test]
    fn record_rejects_overflow() {
        let mut dual = DualState::fair(2, 0.5, 1).unwrap();
        dual.record(vec![1.0, 2.0]).unwrap();
        assert!(matches!(dual.record(vec![1.0, 2.0]), Err(CoreError::State(_))));
        let u = dual.update().unwrap();
        assert_eq!(u.lambda_after, vec![0.25, 0.75]);
    }
}
