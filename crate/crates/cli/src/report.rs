//! Aggregation of finished runs into sweep summaries.

use coverduals::numeric::exact_sum;

/// Infeasibility rates over a set of constrained problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub num_problems: usize,
    pub num_constraints: usize,
    pub infeasible_constraints: usize,
    pub infeasible_problems: usize,
}

impl FeasibilityReport {
    pub fn constraint_pct(&self) -> f64 {
        pct(self.infeasible_constraints, self.num_constraints)
    }

    pub fn problem_pct(&self) -> f64 {
        pct(self.infeasible_problems, self.num_problems)
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// One problem per entry: `(final-window mean cost J_m, threshold α_m)`.
/// Constraint `m` is infeasible when its mean cost exceeds `α_m`; a problem
/// is infeasible when any of its constraints is.
pub fn feasibility_report<'a, I>(problems: I) -> FeasibilityReport
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut report = FeasibilityReport {
        num_problems: 0,
        num_constraints: 0,
        infeasible_constraints: 0,
        infeasible_problems: 0,
    };
    for (costs, alpha) in problems {
        assert_eq!(costs.len(), alpha.len(), "one threshold per constraint");
        let violated = costs.iter().zip(alpha).filter(|(j, a)| j > a).count();
        report.num_problems += 1;
        report.num_constraints += costs.len();
        report.infeasible_constraints += violated;
        report.infeasible_problems += usize::from(violated > 0);
    }
    report
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = exact_sum(values.iter().copied()) / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = exact_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_satisfied() {
        let costs = [vec![0.1, 0.2], vec![0.3, 0.1]];
        let alpha = [vec![0.5, 0.5], vec![0.5, 0.5]];
        let r = feasibility_report(costs.iter().zip(&alpha).map(|(c, a)| (c.as_slice(), a.as_slice())));
        assert_eq!((r.constraint_pct(), r.problem_pct()), (0.0, 0.0));
    }

    #[test]
    fn one_of_four_violated_everywhere() {
        let costs: Vec<Vec<f64>> = (0..5)
            .map(|p| {
                let mut c = vec![0.1; 4];
                c[p % 4] = 0.9;
                c
            })
            .collect();
        let alpha = vec![vec![0.5; 4]; 5];
        let r = feasibility_report(costs.iter().zip(&alpha).map(|(c, a)| (c.as_slice(), a.as_slice())));
        assert_eq!((r.constraint_pct(), r.problem_pct()), (25.0, 100.0));
    }

    #[test]
    fn boundary_is_feasible() {
        let r = feasibility_report([([0.5].as_slice(), [0.5].as_slice())]);
        assert_eq!(r.infeasible_constraints, 0);
    }

    #[test]
    fn mean_std_known() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
