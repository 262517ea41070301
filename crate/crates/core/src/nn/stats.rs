use serde::Serialize;

use super::model::NetworkState;
use crate::binarize::{
    cosine, half_half_binarize, objective_value, optimal_binarize, quantization_error, WeightVector,
};

/// Binarization statistics of one binarized layer, averaged over filters.
///
/// Two SiMaN cosines are reported: `cos_siman` is the angle-alignment
/// objective `cos(|w|, b)` over `{0, 1}` codes, `cos_siman_pm1` is
/// `cos(w, 2b - 1)` over the corresponding `±1` code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStats {
    pub layer: String,
    pub filters: usize,
    pub filter_len: usize,
    /// Fraction of ones in the optimal code, per filter.
    pub p_plus: Vec<f64>,
    pub mean_p_plus: f64,
    pub mean_cos_siman: f64,
    pub mean_cos_siman_pm1: f64,
    /// `cos(|w|, half-half code)`.
    pub mean_cos_half: f64,
    /// `cos(w, sign(w))`.
    pub mean_cos_sign: f64,
    /// `min_lambda ||lambda b - |w| ||^2` for the optimal code.
    pub mean_qe_siman: f64,
    /// `min_lambda ||lambda sign(w) - w||^2`.
    pub mean_qe_sign: f64,
    /// Mean of `L_k`, the optimal prefix score, over filters.
    pub mean_prefix_score: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Stats for a set of filters stored back to back, `filter_len` each.
/// All-zero filters are skipped.
pub fn filter_stats(name: &str, weights: &[f64], filter_len: usize) -> LayerStats {
    let mut p = Vec::new();
    let (mut cs, mut cpm, mut ch, mut cg, mut qs, mut qg, mut ls) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    for f in weights.chunks(filter_len) {
        let Ok(w) = WeightVector::from_slice(f) else { continue };
        let Ok(code) = optimal_binarize(&w) else { continue };
        let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        let bits: Vec<f64> = code.bits().iter().map(|&b| b as f64).collect();
        let sign: Vec<f64> = f.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
        p.push(code.plus_fraction());
        cs.push(objective_value(&w, &code).expect("nonzero filter with nonempty code"));
        cpm.push(cosine(f, &code.to_signs()));
        ch.push(objective_value(&w, &half_half_binarize(&w)).expect("nonzero filter"));
        cg.push(cosine(f, &sign));
        qs.push(quantization_error(&abs, &bits).expect("nonempty code"));
        qg.push(quantization_error(f, &sign).expect("sign vector is nonzero"));
        let k = code.ones();
        let mut sorted = abs.clone();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        ls.push(sorted[..k].iter().sum::<f64>() / (k as f64).sqrt());
    }
    LayerStats {
        layer: name.to_string(),
        filters: p.len(),
        filter_len,
        mean_p_plus: mean(&p),
        p_plus: p,
        mean_cos_siman: mean(&cs),
        mean_cos_siman_pm1: mean(&cpm),
        mean_cos_half: mean(&ch),
        mean_cos_sign: mean(&cg),
        mean_qe_siman: mean(&qs),
        mean_qe_sign: mean(&qg),
        mean_prefix_score: mean(&ls),
    }
}

/// Per-layer statistics for every binarized layer of `state`.
pub fn layer_stats(state: &NetworkState) -> Vec<LayerStats> {
    state
        .binarized_layers()
        .map(|l| {
            let w = &l.params[0];
            filter_stats(&l.name, w.data(), w.len() / w.dim(0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchSpec, WeightBinarizer};

    #[test]
    fn fresh_network_is_gaussian_like() {
        let s = NetworkState::init(ArchSpec::convnet_s(3, 8, 8, 4), WeightBinarizer::HalfHalf, 0).unwrap();
        let stats = layer_stats(&s);
        assert_eq!(stats.len(), 3);
        let m = stats.iter().map(|l| l.mean_p_plus).sum::<f64>() / 3.0;
        assert!((0.52..=0.56).contains(&m), "mean p+ = {m}");
        for l in &stats {
            assert!(l.mean_cos_siman >= l.mean_cos_sign);
            assert!(l.mean_qe_siman <= l.mean_qe_sign);
        }
    }

    #[test]
    fn equal_magnitude_filters() {
        let w = [1.0, -1.0, 1.0, 1.0, -2.0, 2.0, 2.0, -2.0];
        let s = filter_stats("x", &w, 4);
        assert_eq!(s.p_plus, vec![1.0, 1.0]);
        assert!((s.mean_cos_siman - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_filters_are_skipped() {
        let s = filter_stats("x", &[0.0, 0.0, 1.0, 2.0], 2);
        assert_eq!(s.filters, 1);
    }
}
