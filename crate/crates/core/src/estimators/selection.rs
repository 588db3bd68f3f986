//! Penalised-likelihood choice between 0, 1 and 2 scatterers per pixel, and
//! Monte-Carlo calibration of the penalty against a false-positive target.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PixelProcessor, PixelResult, ScattererEstimate, SpectrumEstimate};
use crate::error::{ensure, Result, TomoError};
use crate::model::TomoDictionary;
use crate::simulate::{
    add_noise, derive_seed, forward_model, rng_from_seed, GroundTruthScatterer, NoiseLevel,
};
use crate::C64;

/// Hypotheses above this many scatterers are never considered.
pub const MAX_SCATTERERS: usize = 2;

/// Residual energies below this fraction of ‖g‖² count as an exact fit.
const RSS_FLOOR: f64 = 1e-20;

/// Pair Gram determinants below this fraction of N² are treated as singular.
const SINGULAR_PAIR: f64 = 1e-9;

/// Penalty `c·K·ln N` added to `−2·ln L(K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPenalty {
    pub coefficient: f64,
}

impl ModelPenalty {
    pub fn new(coefficient: f64) -> Result<Self> {
        ensure(coefficient.is_finite() && coefficient >= 0.0, || {
            format!("penalty coefficient must be non-negative, got {coefficient}")
        })?;
        Ok(Self { coefficient })
    }

    pub fn value(&self, order: usize, n: usize) -> f64 {
        self.coefficient * order as f64 * (n as f64).ln()
    }
}

/// Least-squares fit of `g` on one candidate support.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub support: Vec<usize>,
    pub coefficients: Vec<C64>,
    pub rss: f64,
}

/// Fitted hypotheses for K = 0..=max; `None` where a hypothesis was skipped.
#[derive(Debug, Clone)]
pub struct HypothesisSet {
    pub n: usize,
    pub energy: f64,
    pub fits: Vec<Option<Hypothesis>>,
}

impl HypothesisSet {
    /// `−2·ln L(K)` up to a K-independent constant, with the noise variance
    /// replaced by its maximum-likelihood estimate RSS/N.
    pub fn neg_log_likelihood(&self, order: usize) -> Option<f64> {
        let rss = self.fits.get(order)?.as_ref()?.rss;
        let floor = RSS_FLOOR * self.energy;
        Some(2.0 * self.n as f64 * rss.max(floor).max(f64::MIN_POSITIVE).ln())
    }

    /// Order minimising the penalised criterion; ties go to the smaller order.
    pub fn select(&self, penalty: ModelPenalty) -> usize {
        if self.energy == 0.0 {
            return 0;
        }
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for order in 0..self.fits.len() {
            if let Some(nll) = self.neg_log_likelihood(order) {
                let value = nll + penalty.value(order, self.n);
                if value < best_value {
                    best = order;
                    best_value = value;
                }
            }
        }
        best
    }

    /// Supremum of penalty coefficients at which the two-scatterer model is
    /// still selected; `−∞` when it never is.
    pub fn double_threshold(&self) -> f64 {
        let (Some(nll0), Some(nll2)) = (self.neg_log_likelihood(0), self.neg_log_likelihood(2))
        else {
            return f64::NEG_INFINITY;
        };
        if self.energy == 0.0 {
            return f64::NEG_INFINITY;
        }
        let ln_n = (self.n as f64).ln();
        let over_empty = (nll0 - nll2) / (2.0 * ln_n);
        match self.neg_log_likelihood(1) {
            Some(nll1) => over_empty.min((nll1 - nll2) / ln_n),
            None => over_empty,
        }
    }
}

/// Least-squares coefficients of `g` on the given columns and the residual
/// energy. Returns `None` for a numerically singular pair.
pub fn least_squares(columns: &[DVector<C64>], g: &DVector<C64>) -> Option<(Vec<C64>, f64)> {
    let k = columns.len();
    if k == 0 {
        return Some((Vec::new(), g.norm_squared()));
    }
    let basis = DMatrix::from_columns(columns);
    let gram = basis.ad_mul(&basis);
    if k == 2 {
        let det = (gram[(0, 0)] * gram[(1, 1)] - gram[(0, 1)] * gram[(1, 0)]).re;
        if det <= SINGULAR_PAIR * gram[(0, 0)].re * gram[(1, 1)].re {
            return None;
        }
    }
    let rhs = basis.ad_mul(g);
    let coeffs = gram.cholesky()?.solve(&rhs);
    let rss = (g - &basis * &coeffs).norm_squared();
    Some((coeffs.iter().copied().collect(), rss))
}

/// Controls hypothesis generation for [`select_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSelector {
    pub penalty: ModelPenalty,
    /// 1 or 2.
    pub max_scatterers: usize,
    /// Improve the spectrum-derived supports by cyclic grid search on the
    /// least-squares residual.
    pub polish_supports: bool,
}

impl ModelSelector {
    pub fn new(penalty: ModelPenalty, max_scatterers: usize) -> Result<Self> {
        ensure((1..=MAX_SCATTERERS).contains(&max_scatterers), || {
            format!("max scatterers must be 1 or 2, got {max_scatterers}")
        })?;
        Ok(Self {
            penalty,
            max_scatterers,
            polish_supports: true,
        })
    }
}

/// Columns that are local maxima of |γ| over the (s, v, a) grid, strongest
/// first.
pub fn spectrum_peaks(dictionary: &TomoDictionary, gamma: &DVector<C64>) -> Vec<usize> {
    let grid = dictionary.grid();
    let dims = [
        grid.s_axis().len(),
        grid.v_axis().len(),
        grid.a_axis().len(),
    ];
    let mag: Vec<f64> = gamma.iter().map(|z| z.norm()).collect();
    let mut peaks: Vec<usize> = (0..mag.len())
        .filter(|&l| {
            if mag[l] == 0.0 {
                return false;
            }
            let idx = grid.axis_indices(l);
            let idx = [idx.0, idx.1, idx.2];
            (0..3).all(|axis| {
                [-1i64, 1].iter().all(|&d| {
                    let j = idx[axis] as i64 + d;
                    if j < 0 || j as usize >= dims[axis] {
                        return true;
                    }
                    let mut other = idx;
                    other[axis] = j as usize;
                    let m = grid.column_index(other[0], other[1], other[2]);
                    // Plateaus keep only their lowest column index.
                    mag[m] < mag[l] || (mag[m] == mag[l] && m > l)
                })
            })
        })
        .collect();
    peaks.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    peaks
}

/// Column maximising the least-squares fit gain given an already fitted
/// column `fixed` (or none).
fn best_partner(
    dictionary: &TomoDictionary,
    correlation: &DVector<C64>,
    fixed: Option<usize>,
) -> Option<usize> {
    let r = dictionary.matrix();
    let n = dictionary.rows() as f64;
    match fixed {
        None => (0..dictionary.columns()).max_by(|&a, &b| {
            correlation[a]
                .norm_sqr()
                .total_cmp(&correlation[b].norm_sqr())
                .then(b.cmp(&a))
        }),
        Some(p) => {
            let cross = r.ad_mul(&r.column(p));
            let gp = correlation[p];
            let mut best = None;
            let mut best_gain = f64::NEG_INFINITY;
            for l in 0..dictionary.columns() {
                if l == p {
                    continue;
                }
                let denom = n - cross[l].norm_sqr() / n;
                if denom <= SINGULAR_PAIR * n {
                    continue;
                }
                let gain = (correlation[l] - cross[l] * gp / n).norm_sqr() / denom;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some(l);
                }
            }
            best
        }
    }
}

fn fit_support(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    support: Vec<usize>,
) -> Option<Hypothesis> {
    let columns: Vec<DVector<C64>> = support
        .iter()
        .map(|&l| dictionary.matrix().column(l).into_owned())
        .collect();
    let (coefficients, rss) = least_squares(&columns, g)?;
    Some(Hypothesis {
        support,
        coefficients,
        rss,
    })
}

/// Fits every hypothesis K = 0..=max on supports ranked by |γ|.
pub fn build_hypotheses(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    candidates: &SpectrumEstimate,
    selector: &ModelSelector,
) -> Result<HypothesisSet> {
    dictionary.check_measurement(g)?;
    crate::error::ensure_len(dictionary.columns(), candidates.gamma.len())?;
    let energy = g.norm_squared();
    let mut fits = vec![Some(Hypothesis {
        support: Vec::new(),
        coefficients: Vec::new(),
        rss: energy,
    })];
    let peaks = spectrum_peaks(dictionary, &candidates.gamma);
    let correlation = dictionary.matrix().ad_mul(g);

    let mut first = peaks.first().copied();
    if selector.polish_supports || first.is_none() {
        first = best_partner(dictionary, &correlation, None);
    }
    let Some(first) = first else {
        fits.resize(selector.max_scatterers + 1, None);
        return Ok(HypothesisSet {
            n: g.len(),
            energy,
            fits,
        });
    };
    fits.push(fit_support(dictionary, g, vec![first]));

    if selector.max_scatterers >= 2 && dictionary.columns() >= 2 {
        let mut pair = match (peaks.first(), peaks.get(1)) {
            (Some(&a), Some(&b)) => Some((a, b)),
            _ => {
                // Single peak: pair it with the next strongest column.
                let mag: Vec<f64> = candidates.gamma.iter().map(|z| z.norm()).collect();
                let mut order: Vec<usize> = (0..mag.len()).collect();
                order.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
                Some((order[0], order[1]))
            }
        };
        if selector.polish_supports {
            if let Some((mut a, mut b)) = pair {
                for _ in 0..10 {
                    let new_b = best_partner(dictionary, &correlation, Some(a)).unwrap_or(b);
                    let new_a = best_partner(dictionary, &correlation, Some(new_b)).unwrap_or(a);
                    let done = new_a == a && new_b == b;
                    a = new_a;
                    b = new_b;
                    if done {
                        break;
                    }
                }
                pair = Some((a, b));
            }
        }
        let fit = pair.and_then(|(a, b)| {
            if a == b {
                None
            } else {
                fit_support(dictionary, g, vec![a, b])
            }
        });
        fits.push(fit);
    }
    Ok(HypothesisSet {
        n: g.len(),
        energy,
        fits,
    })
}

/// Chooses the number of scatterers and returns their on-grid estimates with
/// amplitudes from the unpenalised re-fit.
pub fn select_model(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    candidates: &SpectrumEstimate,
    selector: &ModelSelector,
) -> Result<PixelResult> {
    let hypotheses = build_hypotheses(dictionary, g, candidates, selector)?;
    let order = hypotheses.select(selector.penalty);
    let estimates = match order {
        0 => Vec::new(),
        k => {
            let fit = hypotheses.fits[k]
                .as_ref()
                .expect("selected hypothesis exists");
            fit.support
                .iter()
                .zip(&fit.coefficients)
                .map(|(&column, &coef)| {
                    let p = dictionary.grid().point(column);
                    ScattererEstimate {
                        s: p.s,
                        v: p.v,
                        a: p.a,
                        amplitude: coef.norm(),
                        phase: coef.arg(),
                        coherence: 0.0,
                        column,
                    }
                })
                .collect()
        }
    };
    Ok(PixelResult::from_estimates(order, estimates))
}

/// Monte-Carlo setup for [`calibrate_penalty`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSetup {
    /// Acceptable rate of selecting two scatterers when at most one exists.
    pub target_fpr: f64,
    pub trials: usize,
    pub seed: u64,
    /// SNR of the single training scatterer.
    pub snr_db: f64,
    /// Largest coefficient the search may return.
    pub max_coefficient: f64,
}

impl CalibrationSetup {
    pub fn new(target_fpr: f64, trials: usize, seed: u64, snr_db: f64) -> Self {
        Self {
            target_fpr,
            trials,
            seed,
            snr_db,
            max_coefficient: 1e3,
        }
    }
}

/// One single-scatterer training pixel drawn from the grid interior.
pub fn training_pixel(
    processor: &PixelProcessor,
    snr_db: f64,
    seed: u64,
) -> (DVector<C64>, GroundTruthScatterer) {
    let grid = processor.dictionary().grid();
    let mut rng = rng_from_seed(seed);
    let interior = |samples: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        match samples {
            [only] => *only,
            _ => {
                let lo = samples[0];
                let hi = samples[samples.len() - 1];
                let margin = 0.1 * (hi - lo);
                rng.random_range(lo + margin..=hi - margin)
            }
        }
    };
    let s = interior(grid.s_axis().samples(), &mut rng);
    let v = interior(grid.v_axis().samples(), &mut rng);
    let a = interior(grid.a_axis().samples(), &mut rng);
    let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let truth = GroundTruthScatterer {
        s,
        v,
        a,
        amplitude: 1.0,
        phase,
    };
    let kernel = processor.dictionary().kernel();
    let mut g = forward_model(&kernel, &[truth]);
    let power = NoiseLevel::SnrDb(snr_db).noise_power(&[truth]);
    add_noise(&mut g, power, &mut rng);
    (g, truth)
}

/// Per-trial thresholds: the largest penalty coefficient at which each
/// single-scatterer training pixel would still be declared double.
pub fn double_thresholds(
    processor: &PixelProcessor,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let power = NoiseLevel::SnrDb(snr_db).noise_power(&[GroundTruthScatterer::at_elevation(0.0)]);
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (g, _) = training_pixel(processor, snr_db, derive_seed(seed, trial as u64));
            let spectrum = processor.spectrum(&g, Some(power))?;
            let hyp = build_hypotheses(
                processor.dictionary(),
                &g,
                &spectrum,
                &processor.selector_with_two(),
            )?;
            Ok(hyp.double_threshold())
        })
        .collect()
}

/// Smallest coefficient c of the penalty `c·K·ln N` whose expected
/// double-scatterer false-positive rate on fresh single-scatterer pixels,
/// estimated from training pixels, does not exceed the target.
pub fn calibrate_penalty(
    processor: &PixelProcessor,
    setup: &CalibrationSetup,
) -> Result<ModelPenalty> {
    ensure(setup.target_fpr > 0.0 && setup.target_fpr <= 1.0, || {
        format!(
            "target false positive rate must be in (0, 1], got {}",
            setup.target_fpr
        )
    })?;
    // A fresh trial exceeds the (k+1)-th largest of T thresholds with
    // probability (k+1)/(T+1) on average.
    let slots = (setup.target_fpr * (setup.trials as f64 + 1.0) + 1e-9).floor() as usize;
    ensure(slots >= 1, || {
        format!(
            "{} trials cannot resolve a false positive rate of {}",
            setup.trials, setup.target_fpr
        )
    })?;
    ensure(setup.snr_db.is_finite(), || {
        "training SNR must be finite".into()
    })?;
    let mut thresholds = double_thresholds(processor, setup.snr_db, setup.trials, setup.seed)?;
    let allowed = slots - 1;
    if allowed >= thresholds.len() {
        return ModelPenalty::new(0.0);
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    // At most `allowed` thresholds may lie strictly above c.
    let coefficient = thresholds[allowed].max(0.0);
    if coefficient > setup.max_coefficient {
        return Err(TomoError::UnreachableTarget {
            target: setup.target_fpr,
            max_coefficient: setup.max_coefficient,
        });
    }
    ModelPenalty::new(coefficient)
}

/// Empirical rate of two-scatterer decisions on fresh single-scatterer pixels.
pub fn false_positive_rate(
    processor: &PixelProcessor,
    penalty: ModelPenalty,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let thresholds = double_thresholds(processor, snr_db, trials, seed)?;
    let hits = thresholds
        .iter()
        .filter(|&&t| t > penalty.coefficient)
        .count();
    Ok(hits as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorConfig;
    use crate::model::{build_dictionary, Axis, ElevationMotionGrid};
    use crate::simulate::{sample_geometry, synthesize_pixel};

    fn processor(penalty: f64) -> PixelProcessor {
        let geometry = sample_geometry(41, 250.0, 0.031, 661_820.0, 22.0, 17).unwrap();
        let grid =
            ElevationMotionGrid::elevation_only(Axis::linspace(-40.0, 40.0, 81).unwrap()).unwrap();
        let dict = build_dictionary(&geometry, &grid).unwrap();
        let config = EstimatorConfig {
            penalty: ModelPenalty::new(penalty).unwrap(),
            ..EstimatorConfig::default()
        };
        PixelProcessor::new(dict, config).unwrap()
    }

    #[test]
    fn selection_prefers_the_smaller_model_on_ties() {
        let set = HypothesisSet {
            n: 10,
            energy: 1.0,
            fits: vec![
                Some(Hypothesis {
                    support: vec![],
                    coefficients: vec![],
                    rss: 1.0,
                }),
                Some(Hypothesis {
                    support: vec![0],
                    coefficients: vec![C64::new(1.0, 0.0)],
                    rss: 1.0,
                }),
            ],
        };
        assert_eq!(set.select(ModelPenalty::new(0.0).unwrap()), 0);
    }

    #[test]
    fn double_threshold_matches_selection() {
        let p = processor(0.0);
        for seed in 0..40u64 {
            let (g, _) = training_pixel(&p, 5.0, seed);
            let spectrum = p.spectrum(&g, None).unwrap();
            let hyp =
                build_hypotheses(p.dictionary(), &g, &spectrum, &p.selector_with_two()).unwrap();
            let t = hyp.double_threshold();
            if t.is_finite() && t > 0.0 {
                assert_eq!(hyp.select(ModelPenalty::new(t * 0.999).unwrap()), 2);
                assert_ne!(hyp.select(ModelPenalty::new(t * 1.001).unwrap()), 2);
            }
        }
    }

    #[test]
    fn noiseless_grid_aligned_orders_are_recovered() {
        let p = processor(1.0);
        let kernel = p.dictionary().kernel();
        let selector = p.selector_with_two();
        let cases: [&[f64]; 4] = [&[], &[5.0], &[-12.0, 9.0], &[0.0, 8.0]];
        for truth in cases {
            let scatterers: Vec<_> = truth
                .iter()
                .map(|&s| GroundTruthScatterer::at_elevation(s))
                .collect();
            let g = forward_model(&kernel, &scatterers);
            let spectrum = p.spectrum(&g, Some(1e-3)).unwrap();
            let result = select_model(p.dictionary(), &g, &spectrum, &selector).unwrap();
            assert_eq!(result.selected_model, truth.len(), "truth {truth:?}");
            let mut found: Vec<f64> = result.estimates.iter().map(|e| e.s).collect();
            found.sort_by(f64::total_cmp);
            let mut expected = truth.to_vec();
            expected.sort_by(f64::total_cmp);
            for (f, e) in found.iter().zip(&expected) {
                assert!((f - e).abs() < 1e-9);
            }
            for e in &result.estimates {
                assert!((e.amplitude - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_columns_skip_the_pair() {
        let columns = vec![DVector::from_element(4, C64::new(1.0, 0.0)); 2];
        assert!(least_squares(&columns, &DVector::from_element(4, C64::new(1.0, 0.0))).is_none());
    }

    #[test]
    fn vacuous_target_gives_minimal_penalty() {
        let p = processor(0.0);
        let penalty = calibrate_penalty(&p, &CalibrationSetup::new(1.0, 20, 1, 5.0)).unwrap();
        assert_eq!(penalty.coefficient, 0.0);
    }

    #[test]
    fn calibration_is_monotone_and_deterministic() {
        let p = processor(0.0);
        let mut last = f64::INFINITY;
        for target in [0.01, 0.05, 0.2, 0.5] {
            let c = calibrate_penalty(&p, &CalibrationSetup::new(target, 400, 9, 5.0))
                .unwrap()
                .coefficient;
            assert!(c <= last);
            last = c;
        }
        let a = calibrate_penalty(&p, &CalibrationSetup::new(0.05, 400, 9, 5.0)).unwrap();
        let b = calibrate_penalty(&p, &CalibrationSetup::new(0.05, 400, 9, 5.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_preconditions_and_unreachable_targets() {
        let p = processor(0.0);
        assert!(calibrate_penalty(&p, &CalibrationSetup::new(0.001, 100, 1, 5.0)).is_err());
        assert!(calibrate_penalty(&p, &CalibrationSetup::new(0.0, 100, 1, 5.0)).is_err());
        let mut setup = CalibrationSetup::new(0.01, 100, 1, 5.0);
        setup.max_coefficient = 1e-9;
        assert!(matches!(
            calibrate_penalty(&p, &setup),
            Err(TomoError::UnreachableTarget { .. })
        ));
    }

    #[test]
    fn calibrated_penalty_rejects_pure_noise() {
        let p = processor(0.0);
        let penalty = calibrate_penalty(&p, &CalibrationSetup::new(0.01, 1000, 3, 5.0)).unwrap();
        let mut p = p;
        p.set_penalty(penalty);
        let geometry = p.dictionary().geometry().clone();
        let mut zero = 0;
        let trials = 500;
        for seed in 0..trials {
            let g = synthesize_pixel(
                &geometry,
                Default::default(),
                &[],
                NoiseLevel::SnrDb(5.0),
                10_000 + seed,
            )
            .unwrap();
            if p.process(&g, None).unwrap().selected_model == 0 {
                zero += 1;
            }
        }
        assert!(
            zero as f64 / trials as f64 >= 0.99,
            "zero-scatterer rate {zero}/{trials}"
        );
    }
}
