//! Combining estimates: medians over repeated partitions, and cohort-share
//! weighted event-time averages of group-time effects.

use serde::Serialize;

use crate::engine::{confidence_interval, critical_value, DmlFit};
use crate::error::{DmlError, Result};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedFit {
    pub theta: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub repetitions: usize,
    pub member_theta: Vec<f64>,
    pub member_se: Vec<f64>,
}

/// `theta = median(theta_s)` and `se = sqrt(median(se_s^2 + (theta_s - theta)^2))`.
/// Even counts take the lower-middle order statistic.
pub fn median_aggregate_values(thetas: &[f64], ses: &[f64]) -> Result<(f64, f64)> {
    if thetas.is_empty() || thetas.len() != ses.len() {
        return Err(DmlError::arg(
            "median aggregation needs one standard error per estimate and at least one estimate",
        ));
    }
    let theta = numeric::lower_median(thetas);
    let inflated: Vec<f64> = thetas
        .iter()
        .zip(ses)
        .map(|(t, s)| s * s + (t - theta) * (t - theta))
        .collect();
    Ok((theta, numeric::lower_median(&inflated).sqrt()))
}

pub fn median_aggregate(fits: &[DmlFit]) -> Result<AggregatedFit> {
    let first = fits
        .first()
        .ok_or_else(|| DmlError::arg("median aggregation needs at least one fit"))?;
    if let Some(f) = fits
        .iter()
        .find(|f| f.score != first.score || f.n != first.n || f.alpha != first.alpha)
    {
        return Err(DmlError::arg(format!(
            "cannot aggregate fits of {} (n = {}) with {} (n = {})",
            first.score, first.n, f.score, f.n
        )));
    }
    let thetas: Vec<f64> = fits.iter().map(|f| f.theta).collect();
    let ses: Vec<f64> = fits.iter().map(|f| f.se).collect();
    let (theta, se) = median_aggregate_values(&thetas, &ses)?;
    let z = critical_value(first.alpha)?;
    Ok(AggregatedFit {
        theta,
        se,
        ci: [theta - z * se, theta + z * se],
        alpha: first.alpha,
        repetitions: fits.len(),
        member_theta: thetas,
        member_se: ses,
    })
}

/// Shares `#{G = g, G + e <= last} / #{G + e <= last}` over the finite
/// cohorts in `groups` (one entry per unit). When `available` is given, only
/// those cohorts enter numerator and denominator. Returns `(g, weight)` for
/// every cohort, in ascending order, with zero for excluded ones.
pub fn group_weights(
    groups: &[f64],
    e: f64,
    last: f64,
    available: Option<&[f64]>,
) -> Result<Vec<(f64, f64)>> {
    let mut cohorts: Vec<f64> = groups.iter().copied().filter(|g| g.is_finite()).collect();
    cohorts.sort_by(f64::total_cmp);
    cohorts.dedup();
    let eligible = |g: f64| g + e <= last && available.is_none_or(|a| a.contains(&g));
    let counts: Vec<usize> = cohorts
        .iter()
        .map(|&g| {
            if eligible(g) {
                groups.iter().filter(|&&v| v == g).count()
            } else {
                0
            }
        })
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(DmlError::ident(format!("no cohort is observed at horizon {e}")));
    }
    Ok(cohorts
        .into_iter()
        .zip(counts)
        .map(|(g, c)| (g, c as f64 / total as f64))
        .collect())
}

/// A group-time estimate tagged with its cohort and period.
#[derive(Debug, Clone, Copy)]
pub struct GroupTime<'a> {
    pub group: f64,
    pub time: f64,
    pub fit: &'a DmlFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonEffect {
    pub e: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub weights: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicEffects {
    pub horizons: Vec<HorizonEffect>,
    pub alpha: f64,
    /// True when cross-pair covariances were ignored.
    pub independent: bool,
}

/// Event-time effects `tau(e) = sum_g w_{g,e} ATT(g, g+e)`.
///
/// The covariance of the stacked group-time scores is the sandwich with a
/// block-diagonal Jacobian, so `Var(tau(e)) = mean_i (sum_j R_j psi_ij / J_j)^2 / n`.
/// With `independent` the cross terms are dropped.
pub fn dynamic_effects(
    fits: &[GroupTime<'_>],
    groups: &[f64],
    last: f64,
    alpha: f64,
    independent: bool,
) -> Result<DynamicEffects> {
    let first = fits
        .first()
        .ok_or_else(|| DmlError::arg("no group-time estimates to aggregate"))?;
    let n = first.fit.n;
    if groups.len() != n {
        return Err(DmlError::arg(format!(
            "{} unit groups for {n} score observations",
            groups.len()
        )));
    }
    for gt in fits {
        if gt.fit.n != n || gt.fit.psi.len() != n {
            return Err(DmlError::arg("group-time fits cover different samples"));
        }
        let same = match (&gt.fit.folds, &first.fit.folds) {
            (Some(a), Some(b)) => a.assignment() == b.assignment(),
            (None, None) => true,
            _ => false,
        };
        if !same {
            return Err(DmlError::arg(format!(
                "ATT({}, {}) was fit on a different partition",
                gt.group, gt.time
            )));
        }
    }
    let mut horizons: Vec<f64> = fits.iter().map(|gt| gt.time - gt.group).collect();
    horizons.sort_by(f64::total_cmp);
    horizons.dedup();

    let mut out = Vec::new();
    for e in horizons {
        let members: Vec<&GroupTime> = fits.iter().filter(|gt| gt.time - gt.group == e).collect();
        let available: Vec<f64> = members.iter().map(|gt| gt.group).collect();
        let weights = group_weights(groups, e, last, Some(&available))?;
        let terms: Vec<(f64, &DmlFit)> = members
            .iter()
            .map(|gt| {
                let w = weights
                    .iter()
                    .find(|(g, _)| *g == gt.group)
                    .map_or(0.0, |(_, w)| *w);
                (w, gt.fit)
            })
            .filter(|(w, _)| *w > 0.0)
            .collect();
        let estimate = numeric::sum(terms.iter().map(|(w, f)| w * f.theta));
        let variance = if independent {
            numeric::sum(terms.iter().map(|(w, f)| w * w * f.sigma))
        } else {
            let combined: Vec<f64> = (0..n)
                .map(|i| numeric::sum(terms.iter().map(|(w, f)| w * f.psi[i] / f.j_hat)))
                .collect();
            numeric::mean(&combined.iter().map(|v| v * v).collect::<Vec<_>>())
        };
        let se = (variance / n as f64).sqrt();
        out.push(HorizonEffect {
            e,
            estimate,
            se,
            ci: confidence_interval(estimate, variance, n, alpha)?,
            weights,
        });
    }
    Ok(DynamicEffects {
        horizons: out,
        alpha,
        independent,
    })
}

/// Median-aggregates event-time effects horizon by horizon across
/// repetitions.
pub fn median_dynamic(reps: &[DynamicEffects]) -> Result<DynamicEffects> {
    let first = reps
        .first()
        .ok_or_else(|| DmlError::arg("no repetitions to aggregate"))?;
    let z = critical_value(first.alpha)?;
    let mut horizons = Vec::new();
    for (j, h) in first.horizons.iter().enumerate() {
        let mut thetas = Vec::with_capacity(reps.len());
        let mut ses = Vec::with_capacity(reps.len());
        for r in reps {
            let m = r
                .horizons
                .get(j)
                .filter(|m| m.e == h.e)
                .ok_or_else(|| DmlError::arg("repetitions disagree on event horizons"))?;
            thetas.push(m.estimate);
            ses.push(m.se);
        }
        let (estimate, se) = median_aggregate_values(&thetas, &ses)?;
        horizons.push(HorizonEffect {
            e: h.e,
            estimate,
            se,
            ci: [estimate - z * se, estimate + z * se],
            weights: h.weights.clone(),
        });
    }
    Ok(DynamicEffects {
        horizons,
        alpha: first.alpha,
        independent: first.independent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repetition_is_unchanged() {
        assert_eq!(median_aggregate_values(&[1.5], &[0.3]).unwrap(), (1.5, 0.3));
    }

    #[test]
    fn even_count_uses_lower_middle() {
        let (t, _) = median_aggregate_values(&[4.0, 1.0, 3.0, 2.0], &[1.0; 4]).unwrap();
        assert_eq!(t, 2.0);
    }

    #[test]
    fn binning_weights() {
        let mut groups = vec![2.0; 30];
        groups.extend(vec![3.0; 10]);
        groups.extend(vec![f64::INFINITY; 5]);
        let w = group_weights(&groups, 0.0, 4.0, None).unwrap();
        assert_eq!(w, vec![(2.0, 0.75), (3.0, 0.25)]);
        let w = group_weights(&groups, 2.0, 4.0, None).unwrap();
        assert_eq!(w, vec![(2.0, 1.0), (3.0, 0.0)]);
        assert!(group_weights(&groups, 3.0, 4.0, None).is_err());
    }
}

/// Group-time effects for every identified `(g, t)` and their event-time
/// aggregation, each median-aggregated over repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct EventStudy {
    pub pairs: Vec<(f64, f64, AggregatedFit)>,
    pub dynamic: DynamicEffects,
    pub per_rep_dynamic: Vec<DynamicEffects>,
}

/// Fits every identified group-time ATT once per seed (all pairs of one
/// repetition share a unit-level partition) and aggregates.
pub fn event_study(
    panel: &crate::data::PanelDataset,
    est: &dyn crate::engine::NuisanceEstimator,
    k: usize,
    seeds: &[u64],
    alpha: f64,
    independent: bool,
) -> Result<EventStudy> {
    use crate::scores::{identified_pairs, ScoreProblem};
    use rayon::prelude::*;

    if seeds.is_empty() {
        return Err(DmlError::arg("at least one seed is required"));
    }
    let pairs = identified_pairs(panel)?;
    if pairs.is_empty() {
        return Err(DmlError::ident("no identified (group, time) pairs"));
    }
    let problems: Vec<ScoreProblem> = pairs
        .iter()
        .map(|&(g, t)| ScoreProblem::gtatt(panel, g, t))
        .collect::<Result<_>>()?;
    let groups = panel.groups()?;
    let last = *panel.periods().last().unwrap();
    let reps: Vec<Vec<DmlFit>> = seeds
        .iter()
        .map(|&seed| {
            let folds = crate::data::make_folds(panel.n_units(), k, seed)?;
            problems
                .par_iter()
                .map(|p| crate::engine::dml_fit_with_folds(p, est, folds.clone(), alpha))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let per_rep_dynamic: Vec<DynamicEffects> = reps
        .iter()
        .map(|fits| {
            let gts: Vec<GroupTime> = pairs
                .iter()
                .zip(fits)
                .map(|(&(group, time), fit)| GroupTime { group, time, fit })
                .collect();
            dynamic_effects(&gts, &groups, last, alpha, independent)
        })
        .collect::<Result<_>>()?;
    let dynamic = median_dynamic(&per_rep_dynamic)?;
    let pairs = pairs
        .iter()
        .enumerate()
        .map(|(j, &(g, t))| {
            let fits: Vec<DmlFit> = reps.iter().map(|r| r[j].clone()).collect();
            Ok((g, t, median_aggregate(&fits)?))
        })
        .collect::<Result<_>>()?;
    Ok(EventStudy {
        pairs,
        dynamic,
        per_rep_dynamic,
    })
}
