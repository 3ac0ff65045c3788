//! Travel-time-to-weight scaling. Weights are affine in inverse travel time
//! (shorter trips get larger weights), anchored at the 1st and 99th
//! percentiles of the training inverse times and clamped to [0, 1].

use super::{ODGraphResult, ODRecord, OdGraphError};

/// Maps travel time tau to weight clamp((1/tau - inv_min)/(inv_max - inv_min), 0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightScaler {
    inv_min: f64,
    inv_max: f64,
}

/// Linear-interpolation percentile of an ascending-sorted slice; p in [0, 100].
/// rank = p/100 * (n-1), value interpolated between the bracketing samples.
pub(crate) fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=100.0).contains(&p));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl WeightScaler {
    /// Fits the percentile anchors on training records only.
    pub fn fit(records: &[ODRecord]) -> ODGraphResult<Self> {
        if records.len() < 2 {
            return Err(OdGraphError::DegenerateScaler(format!(
                "need at least 2 records, got {}",
                records.len()
            )));
        }
        let mut inv: Vec<f64> = Vec::with_capacity(records.len());
        for r in records {
            if !r.travel_time.is_finite() || r.travel_time <= 0.0 {
                return Err(OdGraphError::ScaleDomain(r.travel_time));
            }
            inv.push(1.0 / r.travel_time);
        }
        inv.sort_by(f64::total_cmp);
        let inv_min = percentile_linear(&inv, 1.0);
        let inv_max = percentile_linear(&inv, 99.0);
        Self::from_bounds(inv_min, inv_max)
    }

    pub fn from_bounds(inv_min: f64, inv_max: f64) -> ODGraphResult<Self> {
        if !(inv_min.is_finite() && inv_max.is_finite()) || inv_min <= 0.0 || inv_min >= inv_max {
            return Err(OdGraphError::DegenerateScaler(format!(
                "percentile anchors must satisfy 0 < inv_min < inv_max, got {inv_min} and {inv_max}"
            )));
        }
        Ok(WeightScaler { inv_min, inv_max })
    }

    pub fn inv_min(&self) -> f64 {
        self.inv_min
    }

    pub fn inv_max(&self) -> f64 {
        self.inv_max
    }

    /// Weight of a travel time in seconds; clamped to [0, 1].
    pub fn scale(&self, travel_time: f64) -> ODGraphResult<f64> {
        if !travel_time.is_finite() || travel_time <= 0.0 {
            return Err(OdGraphError::ScaleDomain(travel_time));
        }
        let w = (1.0 / travel_time - self.inv_min) / (self.inv_max - self.inv_min);
        Ok(w.clamp(0.0, 1.0))
    }

    /// Inverse of `scale` on the unclamped band: travel time whose weight is
    /// `weight`. Exact only for weights strictly inside (0, 1); clamped
    /// weights cannot recover the original time.
    pub fn unscale(&self, weight: f64) -> f64 {
        let w = weight.clamp(0.0, 1.0);
        1.0 / (self.inv_min + w * (self.inv_max - self.inv_min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn rec(travel_time: f64) -> ODRecord {
        ODRecord {
            origin: "a".into(),
            dest: "b".into(),
            timestamp: NaiveDate::from_ymd_opt(2020, 1, 6)
                .unwrap()
                .and_hms_opt(8, 0, 0)
                .unwrap(),
            travel_time,
        }
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_linear(&xs, 0.0), 1.0);
        assert_eq!(percentile_linear(&xs, 100.0), 4.0);
        assert_eq!(percentile_linear(&xs, 50.0), 2.5);
        assert!((percentile_linear(&xs, 25.0) - 1.75).abs() < 1e-15);
        assert_eq!(percentile_linear(&[7.0], 40.0), 7.0);
    }

    #[test]
    fn fit_on_two_values_pins_anchors_near_extremes() {
        // 100 copies each of 100 s and 200 s: the 1st percentile of inverse
        // times sits in the 1/200 block, the 99th in the 1/100 block.
        let mut records = Vec::new();
        for _ in 0..100 {
            records.push(rec(100.0));
            records.push(rec(200.0));
        }
        let s = WeightScaler::fit(&records).unwrap();
        assert!((s.inv_min() - 0.005).abs() < 1e-12);
        assert!((s.inv_max() - 0.01).abs() < 1e-12);
        // Midpoint travel time: 1/tau = 0.0075 -> weight 0.5.
        assert!((s.scale(1.0 / 0.0075).unwrap() - 0.5).abs() < 1e-12);
        // Anchors map to the ends.
        assert!((s.scale(200.0).unwrap() - 0.0).abs() < 1e-12);
        assert!((s.scale(100.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        assert!(WeightScaler::fit(&[rec(100.0)]).is_err());
        assert!(WeightScaler::fit(&[rec(100.0), rec(100.0), rec(100.0)]).is_err());
        assert!(WeightScaler::fit(&[]).is_err());
    }

    #[test]
    fn extreme_outlier_is_clipped_by_the_percentile_anchor() {
        // Thousands of trips spread around 300 s plus one 1 s outlier: the
        // 99th-percentile anchor stays near 1/300 instead of 1/1.
        let mut records = Vec::new();
        for i in 0..3000 {
            records.push(rec(250.0 + (i % 101) as f64));
        }
        records.push(rec(1.0));
        let s = WeightScaler::fit(&records).unwrap();
        assert!(
            s.inv_max() < 1.0 / 249.0,
            "inv_max {} not clipped",
            s.inv_max()
        );
        assert!(s.inv_max() > 1.0 / 351.0);
        // The outlier itself saturates at weight 1.
        assert_eq!(s.scale(1.0).unwrap(), 1.0);
    }

    #[test]
    fn scale_clamps_and_rejects_bad_domain() {
        let s = WeightScaler::from_bounds(0.005, 0.01).unwrap();
        assert_eq!(s.scale(1000.0).unwrap(), 0.0);
        assert_eq!(s.scale(10.0).unwrap(), 1.0);
        assert!(s.scale(0.0).is_err());
        assert!(s.scale(-5.0).is_err());
        assert!(s.scale(f64::NAN).is_err());
        assert!(s.scale(f64::INFINITY).is_err());
    }

    #[test]
    fn scale_is_monotone_decreasing_in_travel_time() {
        let s = WeightScaler::from_bounds(0.002, 0.02).unwrap();
        let mut last = f64::INFINITY;
        for i in 1..500 {
            let tau = 10.0 + i as f64 * 3.7;
            let w = s.scale(tau).unwrap();
            assert!(w <= last, "weight increased at tau {tau}");
            assert!((0.0..=1.0).contains(&w));
            last = w;
        }
    }

    #[test]
    fn unscale_inverts_scale_inside_the_band() {
        let s = WeightScaler::from_bounds(0.005, 0.01).unwrap();
        for tau in [101.0, 120.0, 150.0, 180.0, 199.0] {
            let w = s.scale(tau).unwrap();
            assert!(w > 0.0 && w < 1.0);
            let back = s.unscale(w);
            assert!(
                (back - tau).abs() / tau <= 1e-12,
                "tau {tau} came back as {back}"
            );
        }
    }
}
